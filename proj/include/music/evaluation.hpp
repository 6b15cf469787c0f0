#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "music/episode.hpp"
#include "music/feature_store.hpp"
#include "music/music_engine.hpp"

namespace music {

/// Pseudo-label error counts. Rates use `assigned` as the denominator; 0 when nothing was assigned.
struct Tally {
  std::size_t wrong = 0;
  std::size_t assigned = 0;
  std::size_t eligible = 0;

  double rate() const { return assigned == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(assigned); }
  bool operator==(const Tally&) const = default;
};

struct EpisodeReport {
  std::size_t episode_index = 0;
  double query_accuracy = 0.0;
  std::vector<double> stage_accuracy;  // query accuracy after each training stage
  std::vector<Tally> neg_error;        // iterations 1..c-1
  Tally pos_error;                     // positives used in the final stage
  Tally confident_error;               // stage-0 argmax >= pos_threshold baseline
  std::size_t pool_size = 0;
  double pos_proportion = 0.0;
  std::vector<std::size_t> neg_per_class;
  std::vector<std::size_t> pos_per_class;

  bool operator==(const EpisodeReport&) const = default;
};

/// Counts averaged over episodes; `rate` is total wrong / total assigned.
struct MeanTally {
  double wrong = 0.0;
  double assigned = 0.0;
  double eligible = 0.0;
  double rate = 0.0;

  bool operator==(const MeanTally&) const = default;
};

struct MeanCi {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(n); 0 when n < 2
  std::size_t n = 0;

  double low() const { return mean - ci95; }
  double high() const { return mean + ci95; }
};

MeanCi mean_ci(std::span<const double> values);

/// Strictly above, with the two intervals disjoint.
bool ci_separated_above(const MeanCi& a, const MeanCi& b);

struct RunReport {
  nlohmann::json config;  // resolved run configuration
  std::size_t episodes = 0;
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  std::vector<double> mean_stage_accuracy;  // shorter runs carry their last value forward
  std::vector<MeanTally> neg_error;
  MeanTally pos_error;
  MeanTally confident_error;
  double mean_pos_proportion = 0.0;
  std::vector<double> mean_neg_per_class;
  std::vector<double> mean_pos_per_class;
  std::vector<EpisodeReport> episode_reports;  // sorted by episode_index

  bool operator==(const RunReport&) const = default;
};

EpisodeReport score_episode(const MusicResult& result, const Episode& episode);

RunReport aggregate(std::vector<EpisodeReport> reports, nlohmann::json config = nlohmann::json::object());

enum class ReportFormat { json, csv };

ReportFormat parse_report_format(const std::string& tag);

/// JSON uses sorted keys and round-trip number formatting, so equal reports give equal bytes.
/// CSV holds one row per episode; see csv_header() for the columns.
std::string serialize_report(const RunReport& report, ReportFormat format);

RunReport parse_report_json(const std::string& text);
std::vector<EpisodeReport> parse_report_csv(const std::string& text);

std::vector<std::string> csv_header(const RunReport& report);

/// "xx.xx ± y.yy" in percent.
std::string format_accuracy(double mean, double ci95);

nlohmann::json config_to_json(const EpisodeConfig& episode_cfg, const MusicConfig& music_cfg);

EpisodeReport run_episode(const EpisodeSampler& sampler, std::size_t episode_index, const MusicConfig& cfg);

/// Runs episodes 0..E-1 on `threads` workers and reduces in episode order.
RunReport run_experiment(const FeatureStore& store, const EpisodeConfig& episode_cfg, const MusicConfig& music_cfg,
                         std::size_t threads = 1, nlohmann::json extra_config = nlohmann::json::object());

}  // namespace music
