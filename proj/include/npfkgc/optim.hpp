#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "npfkgc/tensor.hpp"

namespace npfkgc {

// Named, ordered collection of trainable tensors. Order of registration is
// the serialization order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  Tensor& get(const std::string& name) { return entries_.at(index_.at(name)).second; }
  const Tensor& get(const std::string& name) const { return entries_.at(index_.at(name)).second; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) { state_.config = config; }

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

  // One bias-corrected update of every tensor in `params` from its grad
  // buffer. Tensors listed in `frozen` are skipped (their moments stay zero).
  void step(ParameterStore& params, const std::vector<bool>& frozen = {}) {
    auto& e = params.entries();
    if (state_.first_moment.empty()) {
      for (const auto& [name, t] : e) {
        state_.first_moment.emplace_back(t.size(), 0.0);
        state_.second_moment.emplace_back(t.size(), 0.0);
      }
    }
    if (state_.first_moment.size() != e.size()) {
      throw DimensionError("adam state tracks " + std::to_string(state_.first_moment.size()) +
                           " tensors, parameter store has " + std::to_string(e.size()));
    }
    ++state_.step;
    const auto& c = state_.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state_.step));
    for (std::size_t k = 0; k < e.size(); ++k) {
      if (k < frozen.size() && frozen[k]) continue;
      Tensor t = e[k].second;
      auto& m = state_.first_moment[k];
      auto& v = state_.second_moment[k];
      if (m.size() != t.size()) throw DimensionError("adam moment shape mismatch for " + e[k].first);
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto w = t.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      }
    }
  }

 private:
  AdamState state_;
};

}  // namespace npfkgc
