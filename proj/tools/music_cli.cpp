// Command-line front end: gen-synth, run, inspect.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include <CLI11.hpp>

#include "music/error.hpp"
#include "music/evaluation.hpp"
#include "music/feature_store.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kNumeric = 4,
};

struct GenSynthArgs {
  music::SyntheticConfig cfg;
  std::string out;
  bool manifest = false;
  std::uint32_t base_classes = 0;
};

struct RunArgs {
  std::string store;
  music::EpisodeConfig episode;
  music::MusicConfig music;
  std::string setting = "inductive";
  std::string mode = "full";
  std::string delta_schedule = "fixed";
  double delta = 0.0;  // 0: 1/c
  std::size_t distractor_unlabeled = 0;
  bool no_anchor = false;
  std::size_t parallel = 1;
  std::string out = "run.report";
  std::string csv;
};

struct InspectArgs {
  std::string store;
  std::string manifest;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw music::IoError("cannot open '" + path + "' for writing", 0);
  out << text;
  out.flush();
  if (!out) throw music::IoError("write failed for '" + path + "'", 0);
}

int cmd_gen_synth(const GenSynthArgs& a) {
  auto store = music::generate_synthetic(a.cfg);
  if (a.manifest) {
    music::Manifest m;
    for (std::uint32_t k = 0; k < a.cfg.num_classes; ++k) {
      char name[32];
      std::snprintf(name, sizeof(name), "synthetic_%03u", k);
      m[k] = {name, k < a.base_classes ? music::Split::base : music::Split::novel};
    }
    store.manifest = m;
    music::write_manifest_file(m, music::manifest_path_for(a.out));
  }
  music::write_store_file(store, a.out);
  std::cout << "wrote " << a.out << ": " << store.num_classes << " classes, dim " << store.dim << ", "
            << store.records.size() << " records\n";
  return kOk;
}

std::size_t thread_count(std::size_t requested) {
  if (const char* env = std::getenv("MUSIC_THREADS")) {
    try {
      std::size_t pos = 0;
      unsigned long v = std::stoul(env, &pos);
      if (pos == std::string(env).size() && v > 0) return v;
    } catch (const std::exception&) {
    }
    throw music::ConfigError(std::string("MUSIC_THREADS must be a positive integer, got '") + env + "'");
  }
  return requested;
}

int cmd_run(RunArgs a) {
  a.episode.setting = music::parse_setting(a.setting);
  if (a.distractor_unlabeled > 0) a.episode.distractor_unlabeled_per_class = a.distractor_unlabeled;
  a.music.mode = music::parse_mode(a.mode);
  a.music.delta_schedule = music::parse_delta_schedule(a.delta_schedule);
  if (a.delta > 0.0) a.music.delta = a.delta;
  a.music.anchor_support = !a.no_anchor;

  const auto store = music::load_store_with_manifest(a.store);
  nlohmann::json extra = {{"store", a.store}};
  const auto report = music::run_experiment(store, a.episode, a.music, thread_count(a.parallel), extra);

  write_text(a.out, music::serialize_report(report, music::ReportFormat::json));
  if (!a.csv.empty()) write_text(a.csv, music::serialize_report(report, music::ReportFormat::csv));

  std::cout << "mode " << a.mode << ", " << a.episode.ways << "-way " << a.episode.shots << "-shot, " << a.setting
            << ", " << report.episodes << " episodes\n";
  std::cout << "accuracy: " << music::format_accuracy(report.mean_accuracy, report.ci95_halfwidth) << "\n";
  for (std::size_t t = 0; t < report.neg_error.size(); ++t) {
    const auto& n = report.neg_error[t];
    std::printf("neg iter %zu: error %.2f%% (%.1f/%.1f)\n", t + 1, 100.0 * n.rate, n.wrong, n.assigned);
  }
  std::printf("positives: error %.2f%% (%.1f/%.1f), proportion %.2f%%\n", 100.0 * report.pos_error.rate,
              report.pos_error.wrong, report.pos_error.assigned, 100.0 * report.mean_pos_proportion);
  std::cout << "report: " << a.out << "\n";
  return kOk;
}

int cmd_inspect(const InspectArgs& a) {
  auto store = music::read_store_file(a.store);
  const std::string mpath = a.manifest.empty() ? music::manifest_path_for(a.store).string() : a.manifest;
  if (!a.manifest.empty() || std::filesystem::exists(mpath)) {
    store.manifest = music::read_manifest_file(mpath);
    store.validate();
  }

  std::cout << "store: " << a.store << "\n";
  std::cout << "dim: " << store.dim << "\nclasses: " << store.num_classes << "\nrecords: " << store.records.size()
            << "\n";
  if (store.manifest) std::cout << "manifest: " << mpath << "\n";

  std::cout << "class histogram:\n";
  const auto counts = store.class_counts();
  for (std::uint32_t k = 0; k < store.num_classes; ++k) {
    std::cout << "  " << k;
    if (store.manifest) {
      auto it = store.manifest->find(k);
      if (it != store.manifest->end())
        std::cout << " " << it->second.name << " [" << (it->second.split == music::Split::base ? "base" : "novel")
                  << "]";
    }
    std::cout << ": " << counts[k] << "\n";
  }

  double sum = 0.0, sq = 0.0, norm_sum = 0.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 0;
  for (const auto& r : store.records) {
    double rec_sq = 0.0;
    for (float v : r.vector) {
      sum += v;
      sq += static_cast<double>(v) * v;
      rec_sq += static_cast<double>(v) * v;
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
      ++n;
    }
    norm_sum += std::sqrt(rec_sq);
  }
  if (n > 0) {
    const double mean = sum / static_cast<double>(n);
    std::printf("values: mean %.6g, std %.6g, min %.6g, max %.6g\n", mean,
                std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean)), lo, hi);
    std::printf("mean l2 norm: %.6g\n", norm_sum / static_cast<double>(store.records.size()));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Successive-exclusion semi-supervised few-shot classification over frozen embeddings"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* g = app.add_subcommand("gen-synth", "Generate a synthetic Gaussian feature store");
  g->add_option("--classes", gen.cfg.num_classes, "Number of classes")->default_val(20);
  g->add_option("--dim", gen.cfg.dim, "Embedding dimension")->default_val(64);
  g->add_option("--per-class", gen.cfg.samples_per_class, "Samples per class")->default_val(600);
  g->add_option("--separation", gen.cfg.separation, "Norm of each (orthogonal) class mean")->default_val(4.0);
  g->add_option("--sigma", gen.cfg.noise_sigma, "Isotropic noise standard deviation")->default_val(1.0);
  g->add_option("--seed", gen.cfg.seed, "Generator seed")->default_val(7);
  g->add_option("--out", gen.out, "Output store path")->required();
  g->add_flag("--manifest", gen.manifest, "Also write <out>.manifest.json");
  g->add_option("--base-classes", gen.base_classes, "Tag the first n classes as base in the manifest");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Evaluate episodes on a feature store");
  r->add_option("--store", run.store, "Feature store path")->required()->check(CLI::ExistingFile);
  r->add_option("--ways", run.episode.ways, "N classes per episode")->default_val(5);
  r->add_option("--shots", run.episode.shots, "K labeled samples per class")->default_val(1);
  r->add_option("--unlabeled", run.episode.unlabeled_per_class, "Unlabeled samples per class")->default_val(30);
  r->add_option("--queries", run.episode.queries_per_class, "Query samples per class")->default_val(15);
  r->add_option("--episodes", run.episode.episodes, "Number of episodes")->default_val(600);
  r->add_option("--setting", run.setting, "inductive | transductive | distractive")->default_val("inductive");
  r->add_option("--distractor-classes", run.episode.distractor_classes, "Distractor classes (distractive)")
      ->default_val(3);
  r->add_option("--distractor-unlabeled", run.distractor_unlabeled,
                "Unlabeled samples per distractor class (default: --unlabeled)");
  r->add_option("--seed", run.episode.base_seed, "Base seed for episode sampling")->default_val(0);
  r->add_option("--delta", run.delta, "Reject threshold (default 1/ways)")->check(CLI::Range(0.0, 1.0));
  r->add_option("--delta-schedule", run.delta_schedule, "fixed | admissible")->default_val("fixed");
  r->add_option("--minent-weight", run.music.minent_weight, "Weight of the minimum-entropy loss")->default_val(1.0);
  r->add_option("--mode", run.mode,
                "full | only_neg | only_pos | no_delta | no_minent | alternating_neg_first | "
                "alternating_pos_first | support_only")
      ->default_val("full");
  r->add_option("--pos-threshold", run.music.pos_threshold, "Confidence for threshold positives")->default_val(0.7);
  r->add_option("--steps", run.music.train.steps, "SGD steps per training stage")->default_val(100);
  r->add_option("--lr", run.music.train.learning_rate, "SGD learning rate")->default_val(0.1);
  r->add_option("--momentum", run.music.train.momentum, "SGD momentum")->default_val(0.9);
  r->add_option("--init-std", run.music.init_stddev, "Stddev of the Gaussian weight init")->default_val(0.01);
  r->add_flag("--no-anchor", run.no_anchor, "Drop the support CE term from pseudo-label stages");
  r->add_flag("--bias", run.music.use_bias, "Enable the classifier bias");
  r->add_option("--parallel", run.parallel, "Worker threads (MUSIC_THREADS overrides)")->default_val(1);
  r->add_option("--out", run.out, "Report path (JSON)")->default_val("run.report");
  r->add_option("--csv", run.csv, "Optional per-episode CSV table");

  InspectArgs ins;
  auto* i = app.add_subcommand("inspect", "Print a feature store summary");
  i->add_option("store", ins.store, "Feature store path")->required();
  i->add_option("--manifest", ins.manifest, "Manifest path (default <store>.manifest.json if present)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen_synth(gen);
    if (*r) return cmd_run(run);
    if (*i) return cmd_inspect(ins);
  } catch (const music::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const music::SamplingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const music::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const music::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const music::TruncationError& e) {
    std::cerr << "truncation error: " << e.what() << "\n";
    return kIo;
  } catch (const music::Error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
