#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "music/feature_store.hpp"

namespace music {

enum class Setting { inductive, transductive, distractive };

std::string to_string(Setting s);
Setting parse_setting(const std::string& s);

struct EpisodeConfig {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t unlabeled_per_class = 30;
  std::size_t queries_per_class = 15;
  Setting setting = Setting::inductive;
  std::size_t distractor_classes = 3;
  /// Unset means "same as unlabeled_per_class".
  std::optional<std::size_t> distractor_unlabeled_per_class;
  std::size_t episodes = 600;
  std::uint64_t base_seed = 0;

  std::size_t distractor_count() const { return distractor_unlabeled_per_class.value_or(unlabeled_per_class); }
  void validate() const;
};

/// Ground truth marker for unlabeled samples drawn from outside the episode classes.
inline constexpr int kDistractor = -1;

struct LabeledSample {
  std::size_t record = 0;  // index into FeatureStore::records
  int label = 0;           // episode label in [0, ways)
  std::vector<double> features;
};

struct UnlabeledSample {
  std::size_t record = 0;
  int truth = 0;  // episode label, or kDistractor
  bool is_query = false;  // transductive: this entry is also a query
  std::vector<double> features;
};

struct Episode {
  std::size_t index = 0;
  std::uint64_t seed = 0;  // per-episode stream, derived from (base_seed, index)
  std::size_t ways = 0;
  std::vector<LabeledSample> support;
  std::vector<UnlabeledSample> unlabeled;
  std::vector<LabeledSample> queries;
  std::vector<std::uint32_t> class_map;       // episode label -> store class id
  std::vector<std::uint32_t> distractor_map;  // distractor store class ids

  std::size_t distractor_total() const;
};

/// Samples episodes from a store. Each episode is a pure function of (base_seed, index),
/// so episodes can be drawn in any order and on any thread.
class EpisodeSampler {
 public:
  EpisodeSampler(const FeatureStore& store, EpisodeConfig cfg);

  Episode sample(std::size_t episode_index) const;
  const EpisodeConfig& config() const { return cfg_; }

 private:
  const FeatureStore& store_;
  EpisodeConfig cfg_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::uint32_t> episode_eligible_;
};

Episode sample_episode(const FeatureStore& store, const EpisodeConfig& cfg, std::size_t episode_index);

/// Checks the setting-specific invariants; returns an empty string when they hold.
std::string check_episode(const Episode& ep, const EpisodeConfig& cfg);

}  // namespace music
