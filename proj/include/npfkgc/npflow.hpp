#pragma once

// Neural-process latent model: context encoder, Gaussian base distribution
// and a chain of invertible flow stages (planar, radial, RealNVP coupling).

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "npfkgc/nn.hpp"
#include "npfkgc/ops.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)
inline constexpr double kSigmaFloor = 0.1;
inline constexpr double kSigmaSpan = 0.9;

struct GaussianParams {
  Tensor mu;
  Tensor sigma;
};

// sum_j [-0.5 log(2 pi) - log sigma_j - 0.5 ((z_j - mu_j) / sigma_j)^2]
inline Tensor gaussian_log_density(const Tensor& z, const GaussianParams& p) {
  Tensor standardized = (z - p.mu) / p.sigma;
  return affine(sum(log(p.sigma) + 0.5 * square(standardized)), -1.0,
                -kHalfLog2Pi * static_cast<double>(z.size()));
}

// Closed-form KL(q || p) between diagonal Gaussians.
inline double gaussian_kl(const std::vector<double>& mu_q, const std::vector<double>& sigma_q,
                          const std::vector<double>& mu_p, const std::vector<double>& sigma_p) {
  double kl = 0;
  for (std::size_t j = 0; j < mu_q.size(); ++j) {
    const double ratio = sigma_q[j] / sigma_p[j];
    const double diff = (mu_q[j] - mu_p[j]) / sigma_p[j];
    kl += -std::log(ratio) + 0.5 * (ratio * ratio + diff * diff - 1.0);
  }
  return kl;
}

// Context encoder (h' || t' || y -> c), mean aggregation, and the Gaussian
// heads mu = MLP(x), sigma = 0.1 + 0.9 sigmoid(MLP(x)) with x = ReLU(MLP(r)).
struct NpEncoder {
  Mlp context;
  Linear trunk;
  Linear mu_head;
  Linear sigma_head;

  NpEncoder() = default;
  NpEncoder(ParameterStore& store, std::size_t entity_dim, std::size_t latent_dim, Rng& rng)
      : context(store, "np.context", {2 * entity_dim + 1, latent_dim, latent_dim}, rng),
        trunk(store, "np.trunk", latent_dim, latent_dim, rng),
        mu_head(store, "np.mu", latent_dim, latent_dim, rng),
        sigma_head(store, "np.sigma", latent_dim, latent_dim, rng) {}

  std::size_t latent_dim() const { return mu_head.out_dim(); }

  // rows: [n, 2d + 1] context pairs. Returns the mean of the encoded rows.
  Tensor encode_context(const Tensor& rows) const {
    if (rows.rank() != 2 || rows.shape()[0] == 0) throw DimensionError("context encoding needs at least one pair");
    return mean(context(rows), 0);
  }

  GaussianParams base_distribution(const Tensor& aggregate) const {
    Tensor x = relu(trunk(aggregate));
    return {mu_head(x), affine(sigmoid(sigma_head(x)), kSigmaSpan, kSigmaFloor)};
  }
};

// ---------------------------------------------------------------------------
// Flow stages

struct PlanarStage {
  Tensor u;  // [dz]
  Tensor w;  // [dz]
  Tensor b;  // [1]

  // u_hat = u + (softplus(w.u) - 1 - w.u) w / |w|^2, which keeps w.u_hat >= -1.
  Tensor constrained_u() const {
    Tensor wu = dot(w, u);
    Tensor coef = (softplus(wu) - 1.0 - wu) / sum(square(w));
    return u + w * coef;
  }

  std::pair<Tensor, Tensor> forward(const Tensor& z) const {
    Tensor u_hat = constrained_u();
    Tensor activation = tanh(dot(w, z) + b);
    Tensor out = z + u_hat * activation;
    Tensor log_det = log(abs(1.0 + (1.0 - square(activation)) * dot(w, u_hat)));
    return {out, log_det};
  }
};

struct RadialStage {
  Tensor center;      // z_ref [dz]
  Tensor alpha_raw;   // [1], alpha = softplus(alpha_raw) > 0
  Tensor beta_raw;    // [1], beta_hat = -alpha + softplus(beta_raw) >= -alpha

  Tensor alpha() const { return softplus(alpha_raw); }
  Tensor beta_hat() const { return softplus(beta_raw) - alpha(); }

  std::pair<Tensor, Tensor> forward(const Tensor& z) const {
    const double dz = static_cast<double>(z.size());
    Tensor a = alpha();
    Tensor beta = beta_hat();
    Tensor diff = z - center;
    Tensor radius = sqrt(sum(square(diff)));
    Tensor h = Tensor::scalar(1.0) / (a + radius);
    Tensor bh = beta * h;
    Tensor out = z + diff * bh;
    Tensor log_det = (dz - 1.0) * log(1.0 + bh) + log(1.0 + bh - beta * square(h) * radius);
    return {out, log_det};
  }

  // Closed-form inverse: solves |y - z_ref| = r (1 + beta / (alpha + r)) for r.
  std::vector<double> inverse(const std::vector<double>& y) const {
    const double a = alpha().item();
    const double beta = beta_hat().item();
    const auto& c = center.values();
    double ry = 0;
    for (std::size_t j = 0; j < y.size(); ++j) ry += (y[j] - c[j]) * (y[j] - c[j]);
    ry = std::sqrt(ry);
    const double p = a + beta - ry;
    const double r = 0.5 * (-p + std::sqrt(p * p + 4.0 * ry * a));
    const double scale = 1.0 + beta / (a + r);
    std::vector<double> z(y.size());
    for (std::size_t j = 0; j < y.size(); ++j) z[j] = c[j] + (y[j] - c[j]) / scale;
    return z;
  }
};

// Affine coupling: coordinates with mask 1 pass through and condition the
// scale/shift of the others. y = z * exp(s) + t with s, t zero on masked
// coordinates; log|det| = sum(s).
struct CouplingStage {
  Tensor mask;  // constant 0/1 vector
  Mlp scale_net;
  Mlp shift_net;

  std::pair<Tensor, Tensor> scale_shift(const Tensor& conditioner) const {
    Tensor free = 1.0 - mask;
    return {scale_net(conditioner) * free, shift_net(conditioner) * free};
  }

  std::pair<Tensor, Tensor> forward(const Tensor& z) const {
    auto [s, t] = scale_shift(z * mask);
    return {z * exp(s) + t, sum(s)};
  }

  std::vector<double> inverse(const std::vector<double>& y) const {
    TapeScope no_grad(nullptr);
    Tensor yt = Tensor::vector(y);
    auto [s, t] = scale_shift(yt * mask);
    return ((yt - t) * exp(-s)).values();
  }
};

enum class FlowKind { planar, radial, realnvp };

inline const char* to_string(FlowKind k) {
  switch (k) {
    case FlowKind::planar: return "planar";
    case FlowKind::radial: return "radial";
    case FlowKind::realnvp: return "realnvp";
  }
  return "?";
}

inline FlowKind flow_kind_from_string(const std::string& s) {
  if (s == "planar") return FlowKind::planar;
  if (s == "radial") return FlowKind::radial;
  if (s == "realnvp") return FlowKind::realnvp;
  throw std::invalid_argument("unknown flow kind: " + s);
}

using FlowStage = std::variant<PlanarStage, RadialStage, CouplingStage>;

struct FlowResult {
  Tensor z;                       // z_T
  std::vector<Tensor> log_dets;   // one scalar per stage
  Tensor sum_log_det;             // scalar
};

struct FlowChain {
  FlowKind kind = FlowKind::planar;
  std::vector<FlowStage> stages;

  FlowChain() = default;
  FlowChain(ParameterStore& store, FlowKind flow_kind, std::size_t steps, std::size_t dim, Rng& rng) : kind(flow_kind) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < steps; ++i) {
      const std::string name = "flow." + std::to_string(i);
      switch (kind) {
        case FlowKind::planar:
          stages.emplace_back(PlanarStage{store.add(name + ".u", uniform_tensor({dim}, bound, rng)),
                                          store.add(name + ".w", uniform_tensor({dim}, bound, rng)),
                                          store.add(name + ".b", Tensor::zeros({1}))});
          break;
        case FlowKind::radial:
          stages.emplace_back(RadialStage{store.add(name + ".center", uniform_tensor({dim}, bound, rng)),
                                          store.add(name + ".alpha", Tensor::scalar(0.0)),
                                          store.add(name + ".beta", uniform_tensor({1}, 0.5, rng))});
          break;
        case FlowKind::realnvp: {
          std::vector<double> m(dim);
          for (std::size_t j = 0; j < dim; ++j) m[j] = (j + i) % 2 == 0 ? 1.0 : 0.0;
          CouplingStage c{Tensor::vector(m), Mlp(store, name + ".scale", {dim, dim, dim}, rng),
                          Mlp(store, name + ".shift", {dim, dim, dim}, rng)};
          // Start close to the identity.
          for (auto* net : {&c.scale_net, &c.shift_net})
            for (double& v : net->layers.back().weight.mutable_data()) v *= 0.1;
          stages.emplace_back(std::move(c));
          break;
        }
      }
    }
  }

  std::size_t size() const { return stages.size(); }

  FlowResult forward(const Tensor& z0) const {
    FlowResult res{z0, {}, Tensor::scalar(0.0)};
    for (std::size_t i = 0; i < stages.size(); ++i) {
      auto [next, log_det] = std::visit([&](const auto& s) { return s.forward(res.z); }, stages[i]);
      if (!next.all_finite() || !log_det.all_finite()) {
        throw NumericError(std::string("non-finite value in ") + to_string(kind) + " flow stage " + std::to_string(i));
      }
      res.z = next;
      res.log_dets.push_back(log_det);
      res.sum_log_det = i == 0 ? log_det : res.sum_log_det + log_det;
    }
    return res;
  }

  // Inverse for radial and coupling chains; planar stages have no closed form.
  std::vector<double> inverse(std::vector<double> y) const {
    for (std::size_t i = stages.size(); i-- > 0;) {
      if (std::holds_alternative<PlanarStage>(stages[i])) throw std::logic_error("planar stages have no closed-form inverse");
      if (const auto* r = std::get_if<RadialStage>(&stages[i])) y = r->inverse(y);
      if (const auto* c = std::get_if<CouplingStage>(&stages[i])) y = c->inverse(y);
    }
    return y;
  }
};

struct LatentState {
  GaussianParams base;
  Tensor z0;
  Tensor z_t;
  std::vector<Tensor> log_dets;
  Tensor sum_log_det;
  Tensor base_log_density;
};

// z0 = mu + sigma * eps with caller-provided noise; gradients flow through
// mu and sigma.
inline Tensor reparameterize(const GaussianParams& p, const std::vector<double>& eps) {
  return p.mu + p.sigma * Tensor::vector(eps);
}

inline std::vector<double> standard_normal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(n);
  for (double& e : eps) e = normal(rng);
  return eps;
}

inline LatentState sample_latent(const FlowChain& chain, const GaussianParams& p, const std::vector<double>& eps) {
  LatentState s;
  s.base = p;
  s.z0 = reparameterize(p, eps);
  s.base_log_density = gaussian_log_density(s.z0, p);
  FlowResult f = chain.forward(s.z0);
  s.z_t = f.z;
  s.log_dets = f.log_dets;
  s.sum_log_det = f.sum_log_det;
  return s;
}

inline LatentState sample_latent(const FlowChain& chain, const GaussianParams& p, Rng& rng) {
  return sample_latent(chain, p, standard_normal(p.mu.size(), rng));
}

// log Q_T(z_T) = log Q_0(z0) - sum_i log|det dg_i/dz_{i-1}|, evaluated at
// the known pre-image z0.
inline Tensor flow_log_density(const FlowChain& chain, const GaussianParams& p, const Tensor& z0) {
  return gaussian_log_density(z0, p) - chain.forward(z0).sum_log_det;
}

inline constexpr std::size_t kDefaultEntropySamples = 256;

// Monte-Carlo estimate of the entropy of z_T: mean of -log Q_T over draws.
inline double latent_entropy(const FlowChain& chain, const GaussianParams& p, std::size_t samples, Rng& rng) {
  if (samples == 0) throw std::invalid_argument("entropy needs at least one sample");
  TapeScope no_grad(nullptr);
  double total = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    LatentState st = sample_latent(chain, p, rng);
    total -= st.base_log_density.item() - st.sum_log_det.item();
  }
  return total / static_cast<double>(samples);
}

}  // namespace npfkgc
