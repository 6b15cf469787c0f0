#include "music/music_engine.hpp"

#include <algorithm>
#include <cmath>

#include "music/error.hpp"
#include "music/rng.hpp"

namespace music {

namespace {

constexpr std::uint64_t kInitStream = 0x5eed'c1a5'5100'0001ULL;

struct ModeName {
  Mode mode;
  const char* name;
};

constexpr ModeName kModeNames[] = {
    {Mode::full, "full"},
    {Mode::only_neg, "only_neg"},
    {Mode::only_pos, "only_pos"},
    {Mode::no_delta, "no_delta"},
    {Mode::no_minent, "no_minent"},
    {Mode::alternating_neg_first, "alternating_neg_first"},
    {Mode::alternating_pos_first, "alternating_pos_first"},
    {Mode::support_only, "support_only"},
};

}  // namespace

std::string to_string(Mode m) {
  for (const auto& e : kModeNames)
    if (e.mode == m) return e.name;
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (const auto& e : kModeNames)
    if (s == e.name) return e.mode;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string to_string(DeltaSchedule s) { return s == DeltaSchedule::fixed ? "fixed" : "admissible"; }

DeltaSchedule parse_delta_schedule(const std::string& s) {
  if (s == "fixed") return DeltaSchedule::fixed;
  if (s == "admissible") return DeltaSchedule::admissible;
  throw ConfigError("unknown delta schedule '" + s + "'");
}

void MusicConfig::validate() const {
  if (delta && !(*delta > 0.0 && *delta <= 1.0)) throw ConfigError("delta must be in (0, 1]");
  if (!(minent_weight >= 0.0) || !std::isfinite(minent_weight)) throw ConfigError("minent_weight must be >= 0");
  if (!(pos_threshold > 0.0 && pos_threshold <= 1.0)) throw ConfigError("pos_threshold must be in (0, 1]");
  if (!(init_stddev >= 0.0) || !std::isfinite(init_stddev)) throw ConfigError("init_stddev must be >= 0");
  train.validate();
}

PseudoState::PseudoState(std::size_t samples, std::size_t classes)
    : classes_(classes), excluded_(samples, ClassMask(classes, false)), counts_(samples, 0) {
  if (classes < 2) throw ContractError("pseudo-labeling needs at least 2 classes");
}

std::vector<std::size_t> PseudoState::exclusions(std::size_t sample) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < classes_; ++k)
    if (excluded_[sample][k]) out.push_back(k);
  return out;
}

ClassMask PseudoState::admissible(std::size_t sample) const {
  ClassMask m(classes_);
  for (std::size_t k = 0; k < classes_; ++k) m[k] = !excluded_[sample][k];
  return m;
}

void PseudoState::exclude(std::size_t iteration, std::size_t sample, std::size_t k, double prob) {
  if (sample >= excluded_.size() || k >= classes_) throw ContractError("exclude: index out of range");
  if (excluded_[sample][k])
    throw ContractError("exclude: class " + std::to_string(k) + " already excluded for sample " +
                        std::to_string(sample));
  if (counts_[sample] + 1 >= classes_) throw ContractError("exclude: sample already has a single remaining class");
  excluded_[sample][k] = true;
  ++counts_[sample];
  log_.push_back({iteration, sample, k, prob});
}

std::optional<std::size_t> PseudoState::positive(std::size_t sample) const {
  if (counts_[sample] + 1 != classes_) return std::nullopt;
  for (std::size_t k = 0; k < classes_; ++k)
    if (!excluded_[sample][k]) return k;
  return std::nullopt;
}

bool PseudoState::complete() const {
  return std::all_of(counts_.begin(), counts_.end(), [&](std::size_t n) { return n + 1 == classes_; });
}

std::optional<std::size_t> select_negative(const ProbVector& p, std::span<const std::size_t> exclusions,
                                           double delta, bool reject_active) {
  const std::size_t c = p.probs.size();
  if (p.mask.size() != c) throw ContractError("select_negative: mask size mismatch");
  ClassMask expected(c, true);
  for (std::size_t k : exclusions) {
    if (k >= c) throw ContractError("select_negative: excluded class out of range");
    expected[k] = false;
  }
  if (expected != p.mask) throw ContractError("select_negative: mask is not the complement of the exclusions");
  if (p.admissible() < 2) throw ContractError("select_negative: fewer than 2 admissible classes");

  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < c; ++k)
    if (p.mask[k] && (!best || p.probs[k] < p.probs[*best])) best = k;
  if (reject_active && !(p.probs[*best] <= delta)) return std::nullopt;
  return best;
}

std::optional<std::size_t> select_negative(const ProbVector& p, const PseudoState& state, std::size_t sample,
                                           double delta, bool reject_active) {
  const auto ex = state.exclusions(sample);
  return select_negative(p, ex, delta, reject_active);
}

std::vector<PseudoLabel> extract_positives(const PseudoState& state) {
  std::vector<PseudoLabel> out;
  for (std::size_t u = 0; u < state.samples(); ++u)
    if (auto k = state.positive(u)) out.push_back({u, *k});
  return out;
}

std::vector<std::size_t> predict(const ClassifierParams& params, std::span<const std::vector<double>> queries) {
  std::vector<std::size_t> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(argmax(logits(params, q)));
  return out;
}

MusicEngine::MusicEngine(const Episode& episode, MusicConfig cfg)
    : episode_(episode), cfg_(std::move(cfg)), classes_(episode.ways) {
  cfg_.validate();
  if (classes_ < 2) throw ContractError("episode must have at least 2 classes");
  if (episode_.support.empty()) throw ContractError("episode has no support samples");
  const std::size_t d = episode_.support.front().features.size();
  if (d == 0) throw ContractError("episode features are empty");

  inputs_ = Matrix(episode_.support.size() + episode_.unlabeled.size(), d);
  std::size_t r = 0;
  auto put = [&](const std::vector<double>& f) {
    if (f.size() != d) throw ContractError("episode features have inconsistent dimension");
    auto unit = l2_normalize(f);
    std::copy(unit.begin(), unit.end(), inputs_.row(r++).begin());
  };
  for (const auto& s : episode_.support) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= classes_) throw ContractError("support label out of range");
    put(s.features);
  }
  for (const auto& u : episode_.unlabeled) put(u.features);
  for (const auto& q : episode_.queries) {
    if (q.features.size() != d) throw ContractError("query features have inconsistent dimension");
    query_units_.push_back(l2_normalize(q.features));
  }
}

ClassifierParams MusicEngine::initial_params() const {
  return ClassifierParams::random(classes_, inputs_.cols(), derive_seed(episode_.seed, kInitStream), cfg_.init_stddev,
                                  cfg_.use_bias);
}

LossTerm MusicEngine::support_term() const {
  LossTerm term{LossKind::cross_entropy, 1.0, {}};
  for (std::size_t i = 0; i < episode_.support.size(); ++i)
    term.samples.push_back({i, full_mask(classes_), static_cast<std::size_t>(episode_.support[i].label)});
  return term;
}

ClassifierParams MusicEngine::train(ClassifierParams params, Objective objective) {
  auto outcome = sgd_train(std::move(params), objective, cfg_.train);
  clamped_ += outcome.clamped;
  return std::move(outcome.params);
}

ClassifierParams MusicEngine::train_support(ClassifierParams params) {
  Objective obj{inputs_, {support_term()}};
  return train(std::move(params), std::move(obj));
}

MusicEngine::IterationOutcome MusicEngine::negative_iteration(ClassifierParams params, PseudoState& state,
                                                              std::size_t iteration) {
  if (state.samples() != episode_.unlabeled.size() || state.classes() != classes_)
    throw ContractError("pseudo state does not match the episode");
  const std::size_t offset = episode_.support.size();
  const double fixed_delta = cfg_.resolved_delta(classes_);

  struct Pending {
    std::size_t sample, negative;
    double prob;
    ClassMask mask;
  };
  std::vector<Pending> pending;
  for (std::size_t u = 0; u < state.samples(); ++u) {
    if (state.exclusion_count(u) + 2 > classes_) continue;
    auto mask = state.admissible(u);
    auto p = masked_softmax(logits_normalized(params, inputs_.row(offset + u)), mask);
    const double delta =
        cfg_.delta_schedule == DeltaSchedule::fixed ? fixed_delta : 1.0 / static_cast<double>(p.admissible());
    if (auto k = select_negative(p, state, u, delta, cfg_.reject_active()))
      pending.push_back({u, *k, p.probs[*k], std::move(mask)});
  }

  IterationOutcome out;
  out.assigned = pending.size();
  if (pending.empty()) {
    out.params = std::move(params);
    return out;
  }

  Objective obj{inputs_, {}};
  if (cfg_.anchor_support) obj.terms.push_back(support_term());
  LossTerm neg{LossKind::negative_cross_entropy, 1.0, {}};
  LossTerm ent{LossKind::min_entropy, cfg_.effective_minent_weight(), {}};
  for (const auto& a : pending) {
    neg.samples.push_back({offset + a.sample, a.mask, a.negative});
    ent.samples.push_back({offset + a.sample, a.mask, 0});
    state.exclude(iteration, a.sample, a.negative, a.prob);
  }
  obj.terms.push_back(std::move(neg));
  obj.terms.push_back(std::move(ent));
  out.params = train(std::move(params), std::move(obj));
  return out;
}

ClassifierParams MusicEngine::positive_stage(ClassifierParams params, std::span<const PseudoLabel> positives) {
  if (positives.empty()) return params;
  const std::size_t offset = episode_.support.size();
  Objective obj{inputs_, {}};
  if (cfg_.anchor_support) obj.terms.push_back(support_term());
  LossTerm ce{LossKind::cross_entropy, 1.0, {}};
  LossTerm ent{LossKind::min_entropy, cfg_.effective_minent_weight(), {}};
  for (const auto& pl : positives) {
    ce.samples.push_back({offset + pl.sample, full_mask(classes_), pl.label});
    ent.samples.push_back({offset + pl.sample, full_mask(classes_), 0});
  }
  obj.terms.push_back(std::move(ce));
  obj.terms.push_back(std::move(ent));
  return train(std::move(params), std::move(obj));
}

std::vector<PseudoLabel> MusicEngine::confident_labels(const ClassifierParams& params) const {
  const std::size_t offset = episode_.support.size();
  std::vector<PseudoLabel> out;
  for (std::size_t u = 0; u < episode_.unlabeled.size(); ++u) {
    auto p = masked_softmax(logits_normalized(params, inputs_.row(offset + u)), full_mask(classes_));
    std::size_t k = argmax(p.probs);
    if (p.probs[k] >= cfg_.pos_threshold) out.push_back({u, k});
  }
  return out;
}

ClassifierParams MusicEngine::threshold_stage(ClassifierParams params, std::span<const PseudoLabel> labels) {
  if (labels.empty()) return params;
  const std::size_t offset = episode_.support.size();
  Objective obj{inputs_, {}};
  if (cfg_.anchor_support) obj.terms.push_back(support_term());
  LossTerm ce{LossKind::cross_entropy, 1.0, {}};
  for (const auto& pl : labels) ce.samples.push_back({offset + pl.sample, full_mask(classes_), pl.label});
  obj.terms.push_back(std::move(ce));
  return train(std::move(params), std::move(obj));
}

std::vector<std::size_t> MusicEngine::predict_queries(const ClassifierParams& params) const {
  std::vector<std::size_t> out;
  out.reserve(query_units_.size());
  for (const auto& q : query_units_) out.push_back(argmax(logits_normalized(params, q)));
  return out;
}

double MusicEngine::query_accuracy(const ClassifierParams& params) const {
  if (episode_.queries.empty()) return 0.0;
  auto pred = predict_queries(params);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == static_cast<std::size_t>(episode_.queries[i].label)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

MusicResult run_music(const Episode& episode, const MusicConfig& cfg) {
  MusicEngine engine(episode, cfg);
  const std::size_t c = engine.classes();
  MusicResult result;
  result.pseudo = PseudoState(episode.unlabeled.size(), c);

  auto params = engine.train_support(engine.initial_params());
  result.stages.push_back({"support", engine.query_accuracy(params)});
  result.stage0_confident = engine.confident_labels(params);
  const ClassifierParams checkpoint = params;

  auto snapshot = [&](std::string stage) { result.stages.push_back({std::move(stage), engine.query_accuracy(params)}); };

  // Returns false when the exclusion loop has terminated.
  std::size_t iteration = 0;
  auto negative_step = [&]() {
    if (iteration + 1 >= c || result.pseudo.complete()) return false;
    auto outcome = engine.negative_iteration(std::move(params), result.pseudo, iteration + 1);
    params = std::move(outcome.params);
    if (outcome.assigned == 0) return false;
    ++iteration;
    result.negative_iterations = iteration;
    snapshot("neg" + std::to_string(iteration));
    return true;
  };
  auto threshold_step = [&](std::size_t t) {
    auto labels = engine.confident_labels(params);
    params = engine.threshold_stage(std::move(params), labels);
    snapshot("thr" + std::to_string(t));
  };

  switch (cfg.mode) {
    case Mode::support_only:
      break;
    case Mode::full:
    case Mode::no_delta:
    case Mode::no_minent:
      while (negative_step()) {
      }
      result.positives = extract_positives(result.pseudo);
      if (!result.positives.empty()) {
        params = engine.positive_stage(std::move(params), result.positives);
        snapshot("pos");
      }
      break;
    case Mode::only_neg:
      while (negative_step()) {
      }
      break;
    case Mode::only_pos:
      while (negative_step()) {
      }
      result.positives = extract_positives(result.pseudo);
      params = checkpoint;
      if (!result.positives.empty()) {
        params = engine.positive_stage(std::move(params), result.positives);
        snapshot("retrain");
      }
      break;
    case Mode::alternating_neg_first:
      for (std::size_t t = 1; negative_step(); ++t) threshold_step(t);
      break;
    case Mode::alternating_pos_first:
      for (std::size_t t = 1;; ++t) {
        threshold_step(t);
        if (!negative_step()) break;
      }
      break;
  }

  result.predictions = engine.predict_queries(params);
  result.params = std::move(params);
  result.clamped = engine.clamped();
  return result;
}

}  // namespace music
