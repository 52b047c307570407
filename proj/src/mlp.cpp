#include "ccic/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ccic/common.hpp"

namespace ccic::detector {

Mlp Mlp::zeros(int n_in, int n_hidden, int n_out) {
  if (n_in <= 0 || n_hidden <= 0 || n_out <= 0) throw PreconditionError("Mlp: layer sizes must be positive");
  Mlp m;
  m.n_in = n_in;
  m.n_hidden = n_hidden;
  m.n_out = n_out;
  m.w1.assign(static_cast<std::size_t>(n_hidden * n_in), 0.0);
  m.b1.assign(static_cast<std::size_t>(n_hidden), 0.0);
  m.w2.assign(static_cast<std::size_t>(n_out * n_hidden), 0.0);
  m.b2.assign(static_cast<std::size_t>(n_out), 0.0);
  return m;
}

Mlp Mlp::random(int n_in, int n_hidden, int n_out, std::uint64_t seed) {
  Mlp m = zeros(n_in, n_hidden, n_out);
  std::mt19937_64 rng(seed);
  const double a1 = std::sqrt(6.0 / (n_in + n_hidden));
  const double a2 = std::sqrt(6.0 / (n_hidden + n_out));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  for (auto& w : m.w1) w = u1(rng);
  for (auto& w : m.w2) w = u2(rng);
  return m;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto* v : {&w1, &b1, &w2, &b2}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

void Mlp::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw PreconditionError("Mlp::assign: wrong parameter count");
  auto it = flat.begin();
  for (auto* v : {&w1, &b1, &w2, &b2}) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
    it += static_cast<std::ptrdiff_t>(v->size());
  }
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (const auto* v : {&w1, &b1, &w2, &b2}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

namespace {

struct Activations {
  std::vector<double> hidden;
  std::vector<double> probs;
};

Activations run(const Mlp& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.n_in)
    throw PreconditionError("forward: expected " + std::to_string(m.n_in) + " inputs, got " +
                            std::to_string(x.size()));
  for (double v : x)
    if (!std::isfinite(v)) throw PreconditionError("forward: non-finite input");
  Activations a;
  a.hidden.resize(static_cast<std::size_t>(m.n_hidden));
  for (int h = 0; h < m.n_hidden; ++h) {
    double z = m.b1[h];
    for (int i = 0; i < m.n_in; ++i) z += m.w1[h * m.n_in + i] * x[i];
    a.hidden[h] = std::tanh(z);
  }
  a.probs.resize(static_cast<std::size_t>(m.n_out));
  double zmax = -INFINITY;
  for (int o = 0; o < m.n_out; ++o) {
    double z = m.b2[o];
    for (int h = 0; h < m.n_hidden; ++h) z += m.w2[o * m.n_hidden + h] * a.hidden[h];
    a.probs[o] = z;
    zmax = std::max(zmax, z);
  }
  double sum = 0.0;
  for (auto& p : a.probs) {
    p = std::exp(p - zmax);
    sum += p;
  }
  for (auto& p : a.probs) p /= sum;
  return a;
}

}  // namespace

std::vector<double> forward(const Mlp& mlp, std::span<const double> x) { return run(mlp, x).probs; }

Gradients gradients(const Mlp& m, std::span<const Sample> batch) {
  if (batch.empty()) throw PreconditionError("gradients: empty batch");
  Gradients g;
  g.w1.assign(m.w1.size(), 0.0);
  g.b1.assign(m.b1.size(), 0.0);
  g.w2.assign(m.w2.size(), 0.0);
  g.b2.assign(m.b2.size(), 0.0);
  std::vector<double> dz2(static_cast<std::size_t>(m.n_out));
  std::vector<double> dz1(static_cast<std::size_t>(m.n_hidden));
  for (const auto& s : batch) {
    if (s.label < 0 || s.label >= m.n_out) throw PreconditionError("gradients: label out of range");
    const auto a = run(m, s.x);
    for (int o = 0; o < m.n_out; ++o) dz2[o] = a.probs[o] - (o == s.label ? 1.0 : 0.0);
    for (int h = 0; h < m.n_hidden; ++h) {
      double back = 0.0;
      for (int o = 0; o < m.n_out; ++o) back += m.w2[o * m.n_hidden + h] * dz2[o];
      dz1[h] = back * (1.0 - a.hidden[h] * a.hidden[h]);
    }
    for (int o = 0; o < m.n_out; ++o) {
      g.b2[o] += dz2[o];
      for (int h = 0; h < m.n_hidden; ++h) g.w2[o * m.n_hidden + h] += dz2[o] * a.hidden[h];
    }
    for (int h = 0; h < m.n_hidden; ++h) {
      g.b1[h] += dz1[h];
      for (int i = 0; i < m.n_in; ++i) g.w1[h * m.n_in + i] += dz1[h] * s.x[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto* v : {&g.w1, &g.b1, &g.w2, &g.b2})
    for (auto& x : *v) x *= inv;
  return g;
}

double mean_cross_entropy(const Mlp& mlp, std::span<const Sample> batch) {
  if (batch.empty()) throw PreconditionError("mean_cross_entropy: empty batch");
  double loss = 0.0;
  for (const auto& s : batch) loss -= std::log(forward(mlp, s.x).at(static_cast<std::size_t>(s.label)));
  return loss / static_cast<double>(batch.size());
}

nlohmann::json to_json(const Mlp& m) {
  return {{"layer_sizes", {m.n_in, m.n_hidden, m.n_out}}, {"w1", m.w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  if (sizes.size() != 3) throw ConfigError("model: layer_sizes must have three entries");
  Mlp m = Mlp::zeros(sizes[0], sizes[1], sizes[2]);
  auto take = [&](const char* key, std::vector<double>& dst) {
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != dst.size()) throw ConfigError(std::string("model: '") + key + "' has wrong length");
    dst = std::move(v);
  };
  take("w1", m.w1);
  take("b1", m.b1);
  take("w2", m.w2);
  take("b2", m.b2);
  return m;
}

}  // namespace ccic::detector
