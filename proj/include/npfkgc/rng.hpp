#pragma once

#include <cstdint>
#include <random>

namespace npfkgc {

using Rng = std::mt19937_64;

// One master seed drives every random stream. Each purpose gets its own
// engine seeded by seed_seq{low32(seed), high32(seed), stream, index}, so
// streams never share state and adding draws to one stream cannot shift
// another.
enum class Stream : std::uint32_t {
  init = 1,        // parameter initialization
  episodes = 2,    // training relation sampling and task construction
  latent = 3,      // reparameterization noise during training
  validation = 4,  // negatives for validation tasks
  evaluation = 5,  // negatives for test tasks
  entropy = 6,     // entropy Monte-Carlo draws
  neighbors = 7,   // neighbor subsampling
  synth = 8,       // synthetic data generation
  transe = 9,      // TransE pretraining
};

inline Rng make_stream(std::uint64_t seed, Stream stream, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream), index};
  return Rng(seq);
}

}  // namespace npfkgc
