#pragma once

#include <string>
#include <vector>

#include "npfkgc/nn.hpp"
#include "npfkgc/ops.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

// Gate layout along the 4H axis: input, forget, cell candidate, output.
struct LstmCell {
  Tensor input_weight;      // [4H, in]
  Tensor recurrent_weight;  // [4H, H]
  Tensor bias;              // [4H]

  LstmCell() = default;
  LstmCell(ParameterStore& store, const std::string& name, std::size_t in_dim, std::size_t hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    input_weight = store.add(name + ".w_ih", uniform_tensor({4 * hidden, in_dim}, bound, rng));
    recurrent_weight = store.add(name + ".w_hh", uniform_tensor({4 * hidden, hidden}, bound, rng));
    bias = store.add(name + ".bias", Tensor::zeros({4 * hidden}));
  }

  std::size_t hidden() const { return recurrent_weight.shape()[1]; }

  // Hidden states for every position of `inputs` ([T, in]), scanning
  // backwards when `reverse` is set. Result row t belongs to input row t.
  Tensor run(const Tensor& inputs, bool reverse) const {
    const std::size_t steps = inputs.shape()[0];
    const std::size_t h = hidden();
    Tensor projected = linear(inputs, input_weight, bias);
    Tensor state = Tensor::zeros({h});
    Tensor cell = Tensor::zeros({h});
    std::vector<Tensor> outputs(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      Tensor gates = row(projected, t) + matmul(recurrent_weight, state);
      Tensor i = sigmoid(slice(gates, 0, h));
      Tensor f = sigmoid(slice(gates, h, 2 * h));
      Tensor g = tanh(slice(gates, 2 * h, 3 * h));
      Tensor o = sigmoid(slice(gates, 3 * h, 4 * h));
      cell = f * cell + i * g;
      state = o * tanh(cell);
      outputs[t] = state;
    }
    return stack(outputs);
  }
};

struct BiLstm {
  std::vector<LstmCell> forward_cells;
  std::vector<LstmCell> backward_cells;

  BiLstm() = default;
  BiLstm(ParameterStore& store, const std::string& name, std::size_t in_dim, std::size_t hidden,
         std::size_t num_layers, Rng& rng) {
    if (hidden == 0 || num_layers == 0) throw std::invalid_argument("Bi-LSTM needs hidden > 0 and layers > 0");
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t d = l == 0 ? in_dim : 2 * hidden;
      forward_cells.emplace_back(store, name + ".l" + std::to_string(l) + ".fwd", d, hidden, rng);
      backward_cells.emplace_back(store, name + ".l" + std::to_string(l) + ".bwd", d, hidden, rng);
    }
  }

  std::size_t hidden() const { return forward_cells.front().hidden(); }
  std::size_t output_dim() const { return 2 * hidden(); }

  // Per-position outputs [T, 2H]: forward state || backward state.
  Tensor operator()(const Tensor& sequence) const {
    if (sequence.rank() != 2 || sequence.shape()[0] == 0) throw DimensionError("Bi-LSTM needs a non-empty [T, in] sequence");
    Tensor x = sequence;
    for (std::size_t l = 0; l < forward_cells.size(); ++l)
      x = concat({forward_cells[l].run(x, false), backward_cells[l].run(x, true)}, 1);
    return x;
  }
};

struct RelationSummary {
  Tensor relation;  // r', projected to the entity dimension
  Tensor pooled;    // sum_i beta_i s'_i before projection
  Tensor weights;   // beta
};

// Attentive Bi-LSTM summary of the support triples.
struct RelationEncoder {
  BiLstm lstm;
  Tensor attention_weight;  // [2H], scalar logit per hidden state
  Tensor attention_bias;    // [1]
  Linear projection;        // 2H -> d

  RelationEncoder() = default;
  RelationEncoder(ParameterStore& store, std::size_t entity_dim, std::size_t hidden, std::size_t num_layers, Rng& rng)
      : lstm(store, "relenc.lstm", 2 * entity_dim, hidden, num_layers, rng) {
    attention_weight = store.add("relenc.attn.weight", uniform_tensor({2 * hidden}, 1.0 / std::sqrt(2.0 * hidden), rng));
    attention_bias = store.add("relenc.attn.bias", Tensor::zeros({1}));
    projection = Linear(store, "relenc.proj", 2 * hidden, entity_dim, rng);
  }

  // Support triple representations in support order, s_1..s_K. They are
  // fed to the Bi-LSTM as s_K..s_1.
  Tensor hidden_states(const std::vector<Tensor>& support) const {
    if (support.empty()) throw DimensionError("relation encoder needs at least one support triple");
    std::vector<Tensor> reversed(support.rbegin(), support.rend());
    return lstm(stack(reversed));
  }

  // o_i = tanh(w . s'_i + b), beta = softmax(o), r' = proj(sum_i beta_i s'_i)
  RelationSummary summarize(const Tensor& states) const {
    if (states.rank() != 2 || states.shape()[0] == 0) throw DimensionError("relation summary needs hidden states");
    Tensor logits = tanh(matmul(states, attention_weight) + attention_bias);
    Tensor beta = softmax(logits);
    Tensor pooled = matmul(beta, states);
    return {projection(pooled), pooled, beta};
  }

  RelationSummary operator()(const std::vector<Tensor>& support) const { return summarize(hidden_states(support)); }
};

}  // namespace npfkgc
