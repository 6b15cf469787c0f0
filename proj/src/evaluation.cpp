#include "music/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "music/error.hpp"

namespace music {

using nlohmann::json;

MeanCi mean_ci(std::span<const double> values) {
  MeanCi out;
  out.n = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(sq / static_cast<double>(values.size() - 1));
  out.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return out;
}

bool ci_separated_above(const MeanCi& a, const MeanCi& b) { return a.low() > b.high(); }

EpisodeReport score_episode(const MusicResult& result, const Episode& episode) {
  const std::size_t c = episode.ways;
  if (result.predictions.size() != episode.queries.size())
    throw ContractError("score_episode: " + std::to_string(result.predictions.size()) + " predictions for " +
                        std::to_string(episode.queries.size()) + " queries");
  if (result.pseudo.samples() != episode.unlabeled.size() || result.pseudo.classes() != c)
    throw ContractError("score_episode: pseudo state does not match the episode");

  EpisodeReport rep;
  rep.episode_index = episode.index;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < episode.queries.size(); ++i)
    if (result.predictions[i] == static_cast<std::size_t>(episode.queries[i].label)) ++correct;
  rep.query_accuracy =
      episode.queries.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(episode.queries.size());
  for (const auto& s : result.stages) rep.stage_accuracy.push_back(s.query_accuracy);

  const std::size_t pool = episode.unlabeled.size();
  rep.pool_size = pool;
  rep.neg_per_class.assign(c, 0);
  rep.pos_per_class.assign(c, 0);
  rep.neg_error.assign(c - 1, Tally{});

  // Samples that reached c-1 exclusions before iteration t are no longer eligible at t.
  std::vector<std::size_t> completed_at(pool, 0), count(pool, 0);
  for (const auto& a : result.pseudo.log()) {
    if (a.iteration == 0 || a.iteration > c - 1) throw ContractError("score_episode: iteration out of range");
    if (++count[a.sample] == c - 1) completed_at[a.sample] = a.iteration;
    auto& t = rep.neg_error[a.iteration - 1];
    ++t.assigned;
    if (episode.unlabeled[a.sample].truth == static_cast<int>(a.negative)) ++t.wrong;
    ++rep.neg_per_class[a.negative];
  }
  for (std::size_t it = 1; it <= c - 1; ++it) {
    std::size_t done = 0;
    for (std::size_t u = 0; u < pool; ++u)
      if (completed_at[u] != 0 && completed_at[u] < it) ++done;
    rep.neg_error[it - 1].eligible = pool - done;
  }

  auto tally_positive = [&](const std::vector<PseudoLabel>& labels, Tally& t) {
    t.eligible = pool;
    for (const auto& pl : labels) {
      if (pl.sample >= pool || pl.label >= c) throw ContractError("score_episode: pseudo-label out of range");
      ++t.assigned;
      if (episode.unlabeled[pl.sample].truth != static_cast<int>(pl.label)) ++t.wrong;
    }
  };
  tally_positive(result.positives, rep.pos_error);
  tally_positive(result.stage0_confident, rep.confident_error);
  for (const auto& pl : result.positives) ++rep.pos_per_class[pl.label];
  rep.pos_proportion = pool == 0 ? 0.0 : static_cast<double>(rep.pos_error.assigned) / static_cast<double>(pool);
  return rep;
}

namespace {

struct TallySum {
  double wrong = 0, assigned = 0, eligible = 0;

  void add(const Tally& t) {
    wrong += static_cast<double>(t.wrong);
    assigned += static_cast<double>(t.assigned);
    eligible += static_cast<double>(t.eligible);
  }

  MeanTally mean(double n) const { return {wrong / n, assigned / n, eligible / n, assigned == 0 ? 0.0 : wrong / assigned}; }
};

}  // namespace

RunReport aggregate(std::vector<EpisodeReport> reports, json config) {
  if (reports.empty()) throw ContractError("aggregate: no episode reports");
  std::stable_sort(reports.begin(), reports.end(),
                   [](const EpisodeReport& a, const EpisodeReport& b) { return a.episode_index < b.episode_index; });

  RunReport run;
  run.config = std::move(config);
  run.episodes = reports.size();
  const double n = static_cast<double>(reports.size());

  std::vector<double> acc;
  std::size_t stages = 0, iterations = 0, classes = 0;
  for (const auto& r : reports) {
    acc.push_back(r.query_accuracy);
    stages = std::max(stages, r.stage_accuracy.size());
    iterations = std::max(iterations, r.neg_error.size());
    classes = std::max(classes, r.neg_per_class.size());
  }
  const auto ci = mean_ci(acc);
  run.mean_accuracy = ci.mean;
  run.ci95_halfwidth = ci.ci95;

  run.mean_stage_accuracy.assign(stages, 0.0);
  std::vector<TallySum> neg(iterations);
  TallySum pos, confident;
  double proportion = 0.0;
  run.mean_neg_per_class.assign(classes, 0.0);
  run.mean_pos_per_class.assign(classes, 0.0);
  for (const auto& r : reports) {
    for (std::size_t s = 0; s < stages; ++s) {
      if (r.stage_accuracy.empty()) break;
      run.mean_stage_accuracy[s] += r.stage_accuracy[std::min(s, r.stage_accuracy.size() - 1)];
    }
    for (std::size_t t = 0; t < r.neg_error.size(); ++t) neg[t].add(r.neg_error[t]);
    pos.add(r.pos_error);
    confident.add(r.confident_error);
    proportion += r.pos_proportion;
    for (std::size_t k = 0; k < r.neg_per_class.size(); ++k)
      run.mean_neg_per_class[k] += static_cast<double>(r.neg_per_class[k]);
    for (std::size_t k = 0; k < r.pos_per_class.size(); ++k)
      run.mean_pos_per_class[k] += static_cast<double>(r.pos_per_class[k]);
  }
  for (double& v : run.mean_stage_accuracy) v /= n;
  for (const auto& t : neg) run.neg_error.push_back(t.mean(n));
  run.pos_error = pos.mean(n);
  run.confident_error = confident.mean(n);
  run.mean_pos_proportion = proportion / n;
  for (double& v : run.mean_neg_per_class) v /= n;
  for (double& v : run.mean_pos_per_class) v /= n;
  run.episode_reports = std::move(reports);
  return run;
}

ReportFormat parse_report_format(const std::string& tag) {
  if (tag == "json") return ReportFormat::json;
  if (tag == "csv") return ReportFormat::csv;
  throw ContractError("unknown report format '" + tag + "' (expected json or csv)");
}

namespace {

json tally_json(const Tally& t) { return {{"wrong", t.wrong}, {"assigned", t.assigned}, {"eligible", t.eligible}}; }
Tally tally_from(const json& j) { return {j.at("wrong").get<std::size_t>(), j.at("assigned").get<std::size_t>(), j.at("eligible").get<std::size_t>()}; }

json mean_tally_json(const MeanTally& t) {
  return {{"wrong", t.wrong}, {"assigned", t.assigned}, {"eligible", t.eligible}, {"rate", t.rate}};
}
MeanTally mean_tally_from(const json& j) {
  return {j.at("wrong").get<double>(), j.at("assigned").get<double>(), j.at("eligible").get<double>(),
          j.at("rate").get<double>()};
}

json episode_json(const EpisodeReport& r) {
  json neg = json::array();
  for (const auto& t : r.neg_error) neg.push_back(tally_json(t));
  return {{"episode_index", r.episode_index},
          {"query_accuracy", r.query_accuracy},
          {"stage_accuracy", r.stage_accuracy},
          {"neg_error", neg},
          {"pos_error", tally_json(r.pos_error)},
          {"confident_error", tally_json(r.confident_error)},
          {"pool_size", r.pool_size},
          {"pos_proportion", r.pos_proportion},
          {"neg_per_class", r.neg_per_class},
          {"pos_per_class", r.pos_per_class}};
}

EpisodeReport episode_from(const json& j) {
  EpisodeReport r;
  r.episode_index = j.at("episode_index").get<std::size_t>();
  r.query_accuracy = j.at("query_accuracy").get<double>();
  r.stage_accuracy = j.at("stage_accuracy").get<std::vector<double>>();
  for (const auto& t : j.at("neg_error")) r.neg_error.push_back(tally_from(t));
  r.pos_error = tally_from(j.at("pos_error"));
  r.confident_error = tally_from(j.at("confident_error"));
  r.pool_size = j.at("pool_size").get<std::size_t>();
  r.pos_proportion = j.at("pos_proportion").get<double>();
  r.neg_per_class = j.at("neg_per_class").get<std::vector<std::size_t>>();
  r.pos_per_class = j.at("pos_per_class").get<std::vector<std::size_t>>();
  return r;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("csv: bad number '" + s + "'");
  return v;
}

std::size_t parse_count(const std::string& s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("csv: bad count '" + s + "'");
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvShape {
  std::size_t stages = 0, iterations = 0, classes = 0;
};

CsvShape csv_shape(const RunReport& report) {
  CsvShape s;
  for (const auto& r : report.episode_reports) {
    s.stages = std::max(s.stages, r.stage_accuracy.size());
    s.iterations = std::max(s.iterations, r.neg_error.size());
    s.classes = std::max(s.classes, r.neg_per_class.size());
  }
  return s;
}

}  // namespace

std::vector<std::string> csv_header(const RunReport& report) {
  const auto shape = csv_shape(report);
  std::vector<std::string> h = {"episode_index", "accuracy"};
  for (std::size_t s = 0; s < shape.stages; ++s) h.push_back("stage_acc_" + std::to_string(s));
  for (std::size_t t = 1; t <= shape.iterations; ++t) {
    h.push_back("neg_wrong_" + std::to_string(t));
    h.push_back("neg_assigned_" + std::to_string(t));
    h.push_back("neg_eligible_" + std::to_string(t));
  }
  for (const char* c : {"pos_wrong", "pos_assigned", "pos_eligible", "conf_wrong", "conf_assigned", "conf_eligible",
                        "pool_size", "pos_proportion"})
    h.emplace_back(c);
  for (std::size_t k = 0; k < shape.classes; ++k) h.push_back("neg_class_" + std::to_string(k));
  for (std::size_t k = 0; k < shape.classes; ++k) h.push_back("pos_class_" + std::to_string(k));
  return h;
}

std::string serialize_report(const RunReport& report, ReportFormat format) {
  if (format == ReportFormat::json) {
    json neg = json::array();
    for (const auto& t : report.neg_error) neg.push_back(mean_tally_json(t));
    json eps = json::array();
    for (const auto& r : report.episode_reports) eps.push_back(episode_json(r));
    json doc = {{"format", "music-report/1"},
                {"config", report.config},
                {"episodes", report.episodes},
                {"mean_accuracy", report.mean_accuracy},
                {"ci95_halfwidth", report.ci95_halfwidth},
                {"mean_stage_accuracy", report.mean_stage_accuracy},
                {"neg_error", neg},
                {"pos_error", mean_tally_json(report.pos_error)},
                {"confident_error", mean_tally_json(report.confident_error)},
                {"mean_pos_proportion", report.mean_pos_proportion},
                {"mean_neg_per_class", report.mean_neg_per_class},
                {"mean_pos_per_class", report.mean_pos_per_class},
                {"error_rate_denominator", "assigned"},
                {"episode_reports", eps}};
    return doc.dump(2) + "\n";
  }

  const auto shape = csv_shape(report);
  std::ostringstream out;
  const auto header = csv_header(report);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& r : report.episode_reports) {
    std::vector<std::string> cells = {std::to_string(r.episode_index), fmt_double(r.query_accuracy)};
    for (std::size_t s = 0; s < shape.stages; ++s)
      cells.push_back(s < r.stage_accuracy.size() ? fmt_double(r.stage_accuracy[s]) : "");
    for (std::size_t t = 0; t < shape.iterations; ++t) {
      const bool has = t < r.neg_error.size();
      cells.push_back(has ? std::to_string(r.neg_error[t].wrong) : "");
      cells.push_back(has ? std::to_string(r.neg_error[t].assigned) : "");
      cells.push_back(has ? std::to_string(r.neg_error[t].eligible) : "");
    }
    for (const Tally* t : {&r.pos_error, &r.confident_error}) {
      cells.push_back(std::to_string(t->wrong));
      cells.push_back(std::to_string(t->assigned));
      cells.push_back(std::to_string(t->eligible));
    }
    cells.push_back(std::to_string(r.pool_size));
    cells.push_back(fmt_double(r.pos_proportion));
    for (std::size_t k = 0; k < shape.classes; ++k)
      cells.push_back(k < r.neg_per_class.size() ? std::to_string(r.neg_per_class[k]) : "");
    for (std::size_t k = 0; k < shape.classes; ++k)
      cells.push_back(k < r.pos_per_class.size() ? std::to_string(r.pos_per_class[k]) : "");
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << "\n";
  }
  return out.str();
}

RunReport parse_report_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "music-report/1") throw FormatError("report: unknown format tag");
    RunReport run;
    run.config = doc.at("config");
    run.episodes = doc.at("episodes").get<std::size_t>();
    run.mean_accuracy = doc.at("mean_accuracy").get<double>();
    run.ci95_halfwidth = doc.at("ci95_halfwidth").get<double>();
    run.mean_stage_accuracy = doc.at("mean_stage_accuracy").get<std::vector<double>>();
    for (const auto& t : doc.at("neg_error")) run.neg_error.push_back(mean_tally_from(t));
    run.pos_error = mean_tally_from(doc.at("pos_error"));
    run.confident_error = mean_tally_from(doc.at("confident_error"));
    run.mean_pos_proportion = doc.at("mean_pos_proportion").get<double>();
    run.mean_neg_per_class = doc.at("mean_neg_per_class").get<std::vector<double>>();
    run.mean_pos_per_class = doc.at("mean_pos_per_class").get<std::vector<double>>();
    for (const auto& e : doc.at("episode_reports")) run.episode_reports.push_back(episode_from(e));
    return run;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::vector<EpisodeReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header");
  const auto header = split_line(line);
  auto count_prefix = [&](const std::string& prefix) {
    return static_cast<std::size_t>(std::count_if(header.begin(), header.end(), [&](const std::string& h) {
      return h.rfind(prefix, 0) == 0;
    }));
  };
  const std::size_t stages = count_prefix("stage_acc_");
  const std::size_t iterations = count_prefix("neg_wrong_");
  const std::size_t classes = count_prefix("neg_class_");
  const std::size_t width = 2 + stages + 3 * iterations + 8 + 2 * classes;
  if (header.size() != width || header[0] != "episode_index") throw FormatError("csv: unexpected header");

  std::vector<EpisodeReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != width) throw FormatError("csv: row has " + std::to_string(cells.size()) + " cells");
    std::size_t i = 0;
    EpisodeReport r;
    r.episode_index = parse_count(cells[i++]);
    r.query_accuracy = parse_double(cells[i++]);
    for (std::size_t s = 0; s < stages; ++s, ++i)
      if (!cells[i].empty()) r.stage_accuracy.push_back(parse_double(cells[i]));
    for (std::size_t t = 0; t < iterations; ++t, i += 3)
      if (!cells[i].empty())
        r.neg_error.push_back({parse_count(cells[i]), parse_count(cells[i + 1]), parse_count(cells[i + 2])});
    for (Tally* t : {&r.pos_error, &r.confident_error}) {
      *t = {parse_count(cells[i]), parse_count(cells[i + 1]), parse_count(cells[i + 2])};
      i += 3;
    }
    r.pool_size = parse_count(cells[i++]);
    r.pos_proportion = parse_double(cells[i++]);
    for (std::size_t k = 0; k < classes; ++k, ++i)
      if (!cells[i].empty()) r.neg_per_class.push_back(parse_count(cells[i]));
    for (std::size_t k = 0; k < classes; ++k, ++i)
      if (!cells[i].empty()) r.pos_per_class.push_back(parse_count(cells[i]));
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_accuracy(double mean, double ci95) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1 %.2f", 100.0 * mean, 100.0 * ci95);
  return buf;
}

json config_to_json(const EpisodeConfig& e, const MusicConfig& m) {
  json episode = {{"ways", e.ways},
                  {"shots", e.shots},
                  {"unlabeled_per_class", e.unlabeled_per_class},
                  {"queries_per_class", e.queries_per_class},
                  {"setting", to_string(e.setting)},
                  {"distractor_classes", e.distractor_classes},
                  {"distractor_unlabeled_per_class", e.distractor_count()},
                  {"episodes", e.episodes},
                  {"base_seed", e.base_seed}};
  json music = {{"mode", to_string(m.mode)},
                {"delta", m.resolved_delta(e.ways)},
                {"delta_schedule", to_string(m.delta_schedule)},
                {"reject_active", m.reject_active()},
                {"minent_weight", m.minent_weight},
                {"effective_minent_weight", m.effective_minent_weight()},
                {"pos_threshold", m.pos_threshold},
                {"anchor_support", m.anchor_support},
                {"use_bias", m.use_bias},
                {"init_stddev", m.init_stddev},
                {"train", {{"steps", m.train.steps}, {"learning_rate", m.train.learning_rate}, {"momentum", m.train.momentum}}}};
  return {{"version", "music-run-config/1"}, {"episode", episode}, {"music", music}};
}

EpisodeReport run_episode(const EpisodeSampler& sampler, std::size_t episode_index, const MusicConfig& cfg) {
  const Episode ep = sampler.sample(episode_index);
  return score_episode(run_music(ep, cfg), ep);
}

RunReport run_experiment(const FeatureStore& store, const EpisodeConfig& episode_cfg, const MusicConfig& music_cfg,
                         std::size_t threads, json extra_config) {
  music_cfg.validate();
  const EpisodeSampler sampler(store, episode_cfg);
  const std::size_t total = episode_cfg.episodes;
  std::vector<EpisodeReport> reports(total);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      try {
        reports[i] = run_episode(sampler, i, music_cfg);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, total));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  json config = config_to_json(episode_cfg, music_cfg);
  for (auto& [key, value] : extra_config.items()) config[key] = value;
  return aggregate(std::move(reports), std::move(config));
}

}  // namespace music
