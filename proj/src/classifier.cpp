#include "music/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "music/error.hpp"

namespace music {

ClassifierParams ClassifierParams::random(std::size_t classes, std::size_t dim, std::uint64_t seed, double stddev,
                                          bool with_bias) {
  ClassifierParams p = zeros(classes, dim, with_bias);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& w : p.weights.data()) w = dist(gen);
  return p;
}

ClassifierParams ClassifierParams::zeros(std::size_t classes, std::size_t dim, bool with_bias) {
  if (classes == 0 || dim == 0) throw ContractError("classifier shape must be positive");
  ClassifierParams p;
  p.weights = Matrix(classes, dim);
  if (with_bias) p.bias = std::vector<double>(classes, 0.0);
  return p;
}

ClassMask full_mask(std::size_t classes) { return ClassMask(classes, true); }

std::size_t ProbVector::admissible() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("l2_normalize: non-finite input");
    sq += x * x;
  }
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  if (norm < kNormGuard) return out;
  for (double& x : out) x /= norm;
  return out;
}

std::vector<double> logits_normalized(const ClassifierParams& params, std::span<const double> unit_x) {
  if (unit_x.size() != params.dim())
    throw ContractError("logits: input dim " + std::to_string(unit_x.size()) + " != classifier dim " +
                        std::to_string(params.dim()));
  std::vector<double> z(params.classes(), 0.0);
  for (std::size_t k = 0; k < params.classes(); ++k) {
    auto w = params.weights.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * unit_x[j];
    z[k] = acc + (params.bias ? (*params.bias)[k] : 0.0);
  }
  return z;
}

std::vector<double> logits(const ClassifierParams& params, std::span<const double> x) {
  if (x.size() != params.dim())
    throw ContractError("logits: input dim " + std::to_string(x.size()) + " != classifier dim " +
                        std::to_string(params.dim()));
  return logits_normalized(params, l2_normalize(x));
}

ProbVector masked_softmax(std::span<const double> z, const ClassMask& mask) {
  if (mask.size() != z.size()) throw ContractError("masked_softmax: mask size differs from logits size");
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < z.size(); ++k)
    if (mask[k]) zmax = std::max(zmax, z[k]);
  if (zmax == -std::numeric_limits<double>::infinity()) throw ContractError("masked_softmax: no admissible class");

  ProbVector p{std::vector<double>(z.size(), 0.0), mask};
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k)
    if (mask[k]) sum += p.probs[k] = std::exp(z[k] - zmax);
  for (std::size_t k = 0; k < z.size(); ++k)
    if (mask[k]) p.probs[k] /= sum;
  return p;
}

namespace {

void require_admissible(const ProbVector& p, std::size_t k, const char* op) {
  if (k >= p.probs.size() || p.mask.size() != p.probs.size() || !p.mask[k])
    throw ContractError(std::string(op) + ": target class " + std::to_string(k) + " is not admissible");
}

}  // namespace

LossGrad ce_loss_grad(const ProbVector& p, std::size_t y) {
  require_admissible(p, y, "ce_loss_grad");
  LossGrad out;
  out.clamped = p.probs[y] < kProbFloor;
  out.loss = -std::log(std::max(p.probs[y], kProbFloor));
  out.grad.assign(p.probs.size(), 0.0);
  for (std::size_t k = 0; k < p.probs.size(); ++k)
    if (p.mask[k]) out.grad[k] = p.probs[k] - (k == y ? 1.0 : 0.0);
  return out;
}

LossGrad negce_loss_grad(const ProbVector& p, std::size_t ybar) {
  require_admissible(p, ybar, "negce_loss_grad");
  LossGrad out;
  const double pb = p.probs[ybar];
  const double rest = std::max(1.0 - pb, kProbFloor);
  out.clamped = 1.0 - pb < kProbFloor;
  out.loss = -std::log(rest);
  const double coef = pb / rest;
  out.grad.assign(p.probs.size(), 0.0);
  for (std::size_t k = 0; k < p.probs.size(); ++k)
    if (p.mask[k]) out.grad[k] = coef * ((k == ybar ? 1.0 : 0.0) - p.probs[k]);
  return out;
}

LossGrad entropy_loss_grad(const ProbVector& p) {
  LossGrad out;
  double h = 0.0;
  for (std::size_t k = 0; k < p.probs.size(); ++k)
    if (p.mask[k] && p.probs[k] > 0.0) h -= p.probs[k] * std::log(p.probs[k]);
  out.loss = h;
  // dH/dz_j = -p_j (log p_j + H)
  out.grad.assign(p.probs.size(), 0.0);
  for (std::size_t k = 0; k < p.probs.size(); ++k)
    if (p.mask[k] && p.probs[k] > 0.0) out.grad[k] = -p.probs[k] * (std::log(p.probs[k]) + h);
  return out;
}

bool Objective::empty() const {
  return std::all_of(terms.begin(), terms.end(), [](const LossTerm& t) { return t.samples.empty(); });
}

ObjectiveValue evaluate_objective(const ClassifierParams& params, const Objective& objective) {
  const std::size_t c = params.classes(), d = params.dim();
  if (objective.inputs.rows() > 0 && objective.inputs.cols() != d)
    throw ContractError("objective inputs have dim " + std::to_string(objective.inputs.cols()) +
                        ", classifier has " + std::to_string(d));
  ObjectiveValue out;
  out.grad_weights = Matrix(c, d);
  out.grad_bias.assign(c, 0.0);

  std::vector<double> g(c);
  for (const auto& term : objective.terms) {
    if (term.samples.empty() || term.weight == 0.0) continue;
    const double scale = term.weight / static_cast<double>(term.samples.size());
    for (const auto& s : term.samples) {
      if (s.row >= objective.inputs.rows()) throw ContractError("objective sample row out of range");
      if (s.mask.size() != c) throw ContractError("objective sample mask has wrong size");
      auto x = objective.inputs.row(s.row);
      const auto p = masked_softmax(logits_normalized(params, x), s.mask);
      LossGrad lg;
      switch (term.kind) {
        case LossKind::cross_entropy: lg = ce_loss_grad(p, s.target); break;
        case LossKind::negative_cross_entropy: lg = negce_loss_grad(p, s.target); break;
        case LossKind::min_entropy: lg = entropy_loss_grad(p); break;
      }
      out.clamped += lg.clamped ? 1 : 0;
      out.loss += scale * lg.loss;
      for (std::size_t k = 0; k < c; ++k) {
        const double gk = scale * lg.grad[k];
        if (gk == 0.0) continue;
        auto gw = out.grad_weights.row(k);
        for (std::size_t j = 0; j < d; ++j) gw[j] += gk * x[j];
        out.grad_bias[k] += gk;
      }
    }
  }
  return out;
}

void TrainSpec::validate() const {
  if (steps == 0) throw ConfigError("train steps must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

TrainOutcome sgd_train(ClassifierParams params, const Objective& objective, const TrainSpec& spec) {
  spec.validate();
  TrainOutcome out;
  if (objective.empty()) {
    out.params = std::move(params);
    return out;
  }
  const std::size_t c = params.classes(), d = params.dim();
  std::vector<double> vel_w(c * d, 0.0), vel_b(c, 0.0);
  out.loss_history.reserve(spec.steps);
  for (std::size_t step = 0; step < spec.steps; ++step) {
    auto value = evaluate_objective(params, objective);
    if (!std::isfinite(value.loss)) throw TrainingError("objective became non-finite", step);
    out.loss_history.push_back(value.loss);
    out.clamped += value.clamped;

    auto& w = params.weights.data();
    const auto& gw = value.grad_weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel_w[i] = spec.momentum * vel_w[i] + gw[i];
      w[i] -= spec.learning_rate * vel_w[i];
    }
    if (params.bias) {
      auto& b = *params.bias;
      for (std::size_t k = 0; k < c; ++k) {
        vel_b[k] = spec.momentum * vel_b[k] + value.grad_bias[k];
        b[k] -= spec.learning_rate * vel_b[k];
      }
    }
  }
  out.params = std::move(params);
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace music
