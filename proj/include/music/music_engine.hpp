#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "music/classifier.hpp"
#include "music/episode.hpp"

namespace music {

enum class Mode {
  full,
  only_neg,
  only_pos,
  no_delta,
  no_minent,
  alternating_neg_first,
  alternating_pos_first,
  support_only,  // baseline: stage 0 alone, unlabeled pool ignored
};

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

/// How the reject threshold evolves as classes get excluded.
enum class DeltaSchedule {
  fixed,       // delta stays at its configured value (default 1/c) every iteration
  admissible,  // delta = 1 / (number of admissible classes) for each sample
};

std::string to_string(DeltaSchedule s);
DeltaSchedule parse_delta_schedule(const std::string& s);

struct MusicConfig {
  std::optional<double> delta;  // unset: 1/c
  double minent_weight = 1.0;
  Mode mode = Mode::full;
  double pos_threshold = 0.7;
  TrainSpec train;
  DeltaSchedule delta_schedule = DeltaSchedule::fixed;
  bool anchor_support = true;  // add support CE to every training stage
  bool use_bias = false;
  double init_stddev = 0.01;

  double resolved_delta(std::size_t classes) const { return delta.value_or(1.0 / static_cast<double>(classes)); }
  double effective_minent_weight() const { return mode == Mode::no_minent ? 0.0 : minent_weight; }
  bool reject_active() const { return mode != Mode::no_delta; }
  void validate() const;
};

struct NegativeAssignment {
  std::size_t iteration = 0;  // 1-based
  std::size_t sample = 0;     // index into Episode::unlabeled
  std::size_t negative = 0;
  double prob = 0.0;  // masked probability of `negative` when assigned
};

/// Exclusion sets of every unlabeled sample plus the log of assignments.
class PseudoState {
 public:
  PseudoState() = default;
  PseudoState(std::size_t samples, std::size_t classes);

  std::size_t samples() const { return excluded_.size(); }
  std::size_t classes() const { return classes_; }

  bool is_excluded(std::size_t sample, std::size_t k) const { return excluded_[sample][k]; }
  std::size_t exclusion_count(std::size_t sample) const { return counts_[sample]; }
  std::vector<std::size_t> exclusions(std::size_t sample) const;

  /// Complement of the exclusion set.
  ClassMask admissible(std::size_t sample) const;

  /// Throws ContractError if k is already excluded or u has only one class left.
  void exclude(std::size_t iteration, std::size_t sample, std::size_t k, double prob);

  /// The single remaining class once c-1 classes are excluded.
  std::optional<std::size_t> positive(std::size_t sample) const;

  bool complete() const;
  const std::vector<NegativeAssignment>& log() const { return log_; }

 private:
  std::size_t classes_ = 0;
  std::vector<ClassMask> excluded_;
  std::vector<std::size_t> counts_;
  std::vector<NegativeAssignment> log_;
};

/// Lowest admissible probability if it is <= delta (ties to lowest index); nullopt means reject.
std::optional<std::size_t> select_negative(const ProbVector& p, const PseudoState& state, std::size_t sample,
                                           double delta, bool reject_active);

/// Same rule, taking the exclusion set directly.
std::optional<std::size_t> select_negative(const ProbVector& p, std::span<const std::size_t> exclusions,
                                           double delta, bool reject_active);

struct PseudoLabel {
  std::size_t sample = 0;
  std::size_t label = 0;

  bool operator==(const PseudoLabel&) const = default;
};

std::vector<PseudoLabel> extract_positives(const PseudoState& state);

std::vector<std::size_t> predict(const ClassifierParams& params, std::span<const std::vector<double>> queries);

struct StageSnapshot {
  std::string stage;  // "support", "neg<t>", "pos", "thr<t>", "retrain"
  double query_accuracy = 0.0;
};

struct MusicResult {
  ClassifierParams params;
  PseudoState pseudo;
  std::vector<StageSnapshot> stages;
  std::vector<std::size_t> predictions;
  std::size_t negative_iterations = 0;  // iterations that assigned at least one label
  std::vector<PseudoLabel> positives;   // positives used in the final stage
  /// argmax labels with probability >= pos_threshold under the stage-0 classifier
  std::vector<PseudoLabel> stage0_confident;
  std::size_t clamped = 0;
};

/// Binds the successive-exclusion steps to one episode.
class MusicEngine {
 public:
  MusicEngine(const Episode& episode, MusicConfig cfg);

  const MusicConfig& config() const { return cfg_; }
  std::size_t classes() const { return classes_; }

  ClassifierParams initial_params() const;

  /// Stage 0: CE on the support set.
  ClassifierParams train_support(ClassifierParams params);

  struct IterationOutcome {
    ClassifierParams params;
    std::size_t assigned = 0;
  };

  /// One exclusion round: every sample with >= 2 admissible classes is scored against the
  /// same classifier, then one training stage runs on the newly assigned pairs.
  IterationOutcome negative_iteration(ClassifierParams params, PseudoState& state, std::size_t iteration);

  /// CE (+ MinEnt) on positive pseudo-labels; no-op when `positives` is empty.
  ClassifierParams positive_stage(ClassifierParams params, std::span<const PseudoLabel> positives);

  /// argmax labels whose probability reaches pos_threshold.
  std::vector<PseudoLabel> confident_labels(const ClassifierParams& params) const;

  /// Threshold baseline pass: label confident samples, then train CE on them.
  ClassifierParams threshold_stage(ClassifierParams params, std::span<const PseudoLabel> labels);

  std::vector<std::size_t> predict_queries(const ClassifierParams& params) const;
  double query_accuracy(const ClassifierParams& params) const;

  std::size_t clamped() const { return clamped_; }

 private:
  LossTerm support_term() const;
  ClassifierParams train(ClassifierParams params, Objective objective);

  const Episode& episode_;
  MusicConfig cfg_;
  std::size_t classes_;
  Matrix inputs_;  // support rows, then unlabeled rows, all unit norm
  std::vector<std::vector<double>> query_units_;
  std::size_t clamped_ = 0;
};

MusicResult run_music(const Episode& episode, const MusicConfig& cfg);

}  // namespace music
