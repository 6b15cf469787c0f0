#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace music {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Linear head over l2-normalized features: logits = W * normalize(x) (+ b).
struct ClassifierParams {
  Matrix weights;  // classes x dim
  std::optional<std::vector<double>> bias;

  std::size_t classes() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }

  bool operator==(const ClassifierParams&) const = default;

  /// Gaussian(0, stddev) weights; bias (when requested) starts at zero.
  static ClassifierParams random(std::size_t classes, std::size_t dim, std::uint64_t seed, double stddev = 0.01,
                                 bool with_bias = false);
  static ClassifierParams zeros(std::size_t classes, std::size_t dim, bool with_bias = false);
};

using ClassMask = std::vector<bool>;

ClassMask full_mask(std::size_t classes);

struct ProbVector {
  std::vector<double> probs;
  ClassMask mask;

  std::size_t admissible() const;
};

/// Floor applied inside the CE and NegCE logarithms.
inline constexpr double kProbFloor = 1e-12;

/// Norms below this are returned unchanged.
inline constexpr double kNormGuard = 1e-12;

std::vector<double> l2_normalize(std::span<const double> v);

std::vector<double> logits(const ClassifierParams& params, std::span<const double> x);

/// Logits for an input already on the unit sphere (skips normalization).
std::vector<double> logits_normalized(const ClassifierParams& params, std::span<const double> unit_x);

ProbVector masked_softmax(std::span<const double> z, const ClassMask& mask);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits; zero on excluded classes
  bool clamped = false;      // the probability floor was hit
};

/// -log p[y]
LossGrad ce_loss_grad(const ProbVector& p, std::size_t y);

/// -log(1 - p[ybar])
LossGrad negce_loss_grad(const ProbVector& p, std::size_t ybar);

/// -sum p log p over admissible classes.
LossGrad entropy_loss_grad(const ProbVector& p);

enum class LossKind { cross_entropy, negative_cross_entropy, min_entropy };

/// One input row of an Objective's input matrix, with its admissible classes and target.
struct TermSample {
  std::size_t row = 0;
  ClassMask mask;
  std::size_t target = 0;  // unused for min_entropy
};

/// A loss averaged over its samples, scaled by `weight`.
struct LossTerm {
  LossKind kind = LossKind::cross_entropy;
  double weight = 1.0;
  std::vector<TermSample> samples;
};

/// Weighted sum of loss terms over a fixed set of unit-norm inputs.
struct Objective {
  Matrix inputs;  // rows are l2-normalized features
  std::vector<LossTerm> terms;

  bool empty() const;
};

struct ObjectiveValue {
  double loss = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
  std::size_t clamped = 0;
};

ObjectiveValue evaluate_objective(const ClassifierParams& params, const Objective& objective);

struct TrainSpec {
  std::size_t steps = 100;
  double learning_rate = 0.1;
  double momentum = 0.9;

  void validate() const;
};

struct TrainOutcome {
  ClassifierParams params;
  std::vector<double> loss_history;  // objective before each step
  std::size_t clamped = 0;           // floor hits summed over steps
};

/// Full-batch SGD with heavy-ball momentum (v = m*v + g; w -= lr*v), fresh velocity per call.
TrainOutcome sgd_train(ClassifierParams params, const Objective& objective, const TrainSpec& spec);

/// Argmax of logits, lowest index on ties.
std::size_t argmax(std::span<const double> v);

}  // namespace music
