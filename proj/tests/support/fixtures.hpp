#pragma once

// Small synthetic datasets and configs shared by the trainer, checkpoint and
// evaluation tests.

#include "npfkgc/synth.hpp"
#include "npfkgc/trainer.hpp"

namespace npfkgc::testing {

inline SynthOptions tiny_synth_options(std::uint64_t seed = 3) {
  SynthOptions o;
  o.entities = 49;
  o.train = 3;
  o.valid = 1;
  o.test = 2;
  o.heads_per_relation = 8;
  o.seed = seed;
  o.transe = {.dim = 8, .epochs = 60, .margin = 1, .lr = 0.03};
  return o;
}

inline const SynthData& tiny_data() {
  static const SynthData data = generate_synthetic(tiny_synth_options());
  return data;
}

inline TrainConfig tiny_config(std::size_t flow_steps = 2) {
  TrainConfig c;
  c.model.dim = 8;
  c.model.latent_dim = 8;
  c.model.gnn_layers = 2;
  c.model.flow_steps = flow_steps;
  c.model.lstm_hidden = 6;
  c.model.lstm_layers = 1;
  c.k = 3;
  c.batch = 2;
  c.steps_per_epoch = 2;
  c.max_epochs = 3;
  c.patience = 100;
  c.seed = 5;
  return c;
}

}  // namespace npfkgc::testing
