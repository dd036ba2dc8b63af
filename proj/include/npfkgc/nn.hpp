#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "npfkgc/ops.hpp"
#include "npfkgc/optim.hpp"

namespace npfkgc {

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor xavier(std::size_t out_dim, std::size_t in_dim, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  return uniform_tensor({out_dim, in_dim}, bound, rng);
}

// Affine layer; weight stored [out, in].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in_dim, std::size_t out_dim,
         std::mt19937_64& rng)
      : weight(store.add(name + ".weight", xavier(out_dim, in_dim, rng))),
        bias(store.add(name + ".bias", Tensor::zeros({out_dim}))) {}

  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

// Linear layers with ReLU between them; the last layer is linear.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims,
      std::mt19937_64& rng) {
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }

  std::size_t out_dim() const { return layers.back().out_dim(); }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }
};

}  // namespace npfkgc
