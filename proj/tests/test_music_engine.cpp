#include <doctest.h>

#include <cmath>

#include "music/error.hpp"
#include "music/music_engine.hpp"

using namespace music;

namespace {

ProbVector full(std::vector<double> p) { return {p, ClassMask(p.size(), true)}; }

const FeatureStore& store_sep4() {
  static const FeatureStore s = generate_synthetic({20, 64, 120, 4.0, 1.0, 7});
  return s;
}

const FeatureStore& store_sep8() {
  static const FeatureStore s = generate_synthetic({20, 64, 120, 8.0, 1.0, 7});
  return s;
}

Episode episode(const FeatureStore& store, std::size_t index, std::size_t unlabeled = 30,
                Setting setting = Setting::inductive) {
  EpisodeConfig cfg;
  cfg.unlabeled_per_class = unlabeled;
  cfg.setting = setting;
  cfg.distractor_classes = 3;
  cfg.distractor_unlabeled_per_class = 10;
  return sample_episode(store, cfg, index);
}

}  // namespace

TEST_CASE("select_negative picks the least likely admissible class") {
  PseudoState fresh(1, 5);
  CHECK(select_negative(full({0.4, 0.3, 0.15, 0.1, 0.05}), fresh, 0, 0.2, true) == 4u);
  CHECK(select_negative(full({0.2, 0.2, 0.2, 0.2, 0.2}), fresh, 0, 0.2, true) == 0u);

  PseudoState two(1, 2);
  CHECK_FALSE(select_negative(full({0.55, 0.45}), two, 0, 0.2, true).has_value());
  CHECK(select_negative(full({0.55, 0.45}), two, 0, 0.2, false) == 1u);

  SUBCASE("delta boundary is inclusive") {
    std::vector<double> p(5, 0.0);
    p[0] = 0.2;
    const double rest = (1.0 - 0.2) / 4.0;
    for (std::size_t k = 1; k < 5; ++k) p[k] = rest;
    CHECK(select_negative(full(p), fresh, 0, 0.2, true) == 0u);
    CHECK_FALSE(select_negative(full(p), fresh, 0, 0.2 - 1e-9, true).has_value());
  }

  SUBCASE("excluded classes are never selected") {
    PseudoState s(1, 4);
    s.exclude(1, 0, 3, 0.01);
    ProbVector p{{0.5, 0.3, 0.2, 0.0}, {true, true, true, false}};
    CHECK(select_negative(p, s, 0, 0.25, true) == 2u);
  }

  SUBCASE("contract violations") {
    PseudoState s(1, 3);
    s.exclude(1, 0, 2, 0.01);
    CHECK_THROWS_AS(select_negative(full({0.5, 0.3, 0.2}), s, 0, 0.5, true), ContractError);
    s.exclude(2, 0, 1, 0.01);
    ProbVector single{{1.0, 0.0, 0.0}, {true, false, false}};
    CHECK_THROWS_AS(select_negative(single, s, 0, 0.5, true), ContractError);
  }
}

TEST_CASE("PseudoState invariants") {
  PseudoState s(3, 4);
  CHECK_FALSE(s.complete());
  s.exclude(1, 0, 2, 0.05);
  CHECK(s.exclusion_count(0) == 1);
  CHECK(s.admissible(0) == ClassMask{true, true, false, true});
  CHECK_THROWS_AS(s.exclude(2, 0, 2, 0.05), ContractError);
  s.exclude(2, 0, 0, 0.05);
  s.exclude(3, 0, 3, 0.05);
  CHECK(s.positive(0) == 1u);
  CHECK_THROWS_AS(s.exclude(4, 0, 1, 0.05), ContractError);
  CHECK(s.log().size() == 3);
  CHECK(s.log().back().iteration == 3);
  CHECK_THROWS_AS(PseudoState(1, 1), ContractError);
}

TEST_CASE("extract_positives") {
  PseudoState s(2, 3);
  s.exclude(1, 0, 0, 0.1);
  s.exclude(2, 0, 1, 0.1);
  s.exclude(1, 1, 2, 0.1);
  CHECK(extract_positives(s) == std::vector<PseudoLabel>{{0, 2}});

  PseudoState none(2, 5);
  none.exclude(1, 0, 0, 0.1);
  CHECK(extract_positives(none).empty());
}

TEST_CASE("predict returns the argmax class") {
  auto params = ClassifierParams::zeros(3, 3);
  for (std::size_t k = 0; k < 3; ++k) params.weights(k, k) = 1.0;
  const std::vector<std::vector<double>> queries = {{0, 5, 0.1}, {2, 0, 0}, {0, 0, 1}};
  CHECK(predict(params, queries) == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("an iteration where every sample rejects leaves the classifier untouched") {
  const auto ep = episode(store_sep4(), 0);
  MusicConfig cfg;
  cfg.delta = 1e-300;
  MusicEngine engine(ep, cfg);
  auto params = engine.train_support(engine.initial_params());
  PseudoState state(ep.unlabeled.size(), 5);
  auto out = engine.negative_iteration(params, state, 1);
  CHECK(out.assigned == 0);
  CHECK(out.params == params);
  CHECK(state.log().empty());
}

TEST_CASE("an empty pool assigns nothing and matches the support-only classifier bitwise") {
  const auto ep = episode(store_sep4(), 1, 0);
  REQUIRE(ep.unlabeled.empty());
  MusicConfig cfg;
  const auto full_run = run_music(ep, cfg);
  cfg.mode = Mode::support_only;
  const auto base = run_music(ep, cfg);
  CHECK(full_run.pseudo.log().empty());
  CHECK(full_run.negative_iterations == 0);
  CHECK(full_run.params == base.params);
  CHECK(full_run.predictions == base.predictions);
}

TEST_CASE("well-separated classes give near-perfect first-iteration negatives") {
  std::size_t wrong = 0, assigned = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto ep = episode(store_sep8(), i);
    const auto r = run_music(ep, MusicConfig{});
    for (const auto& a : r.pseudo.log()) {
      if (a.iteration != 1) continue;
      ++assigned;
      wrong += static_cast<int>(a.negative) == ep.unlabeled[a.sample].truth;
    }
  }
  REQUIRE(assigned > 0);
  CHECK(static_cast<double>(wrong) / static_cast<double>(assigned) <= 0.01);
}

TEST_CASE("delta = 1 excludes one class per sample per iteration until c - 1 iterations") {
  const auto ep = episode(store_sep4(), 2);
  MusicConfig cfg;
  cfg.delta = 1.0;
  const auto r = run_music(ep, cfg);
  CHECK(r.negative_iterations == 4);
  CHECK(r.pseudo.complete());
  CHECK(r.positives.size() == ep.unlabeled.size());
  REQUIRE(r.stages.size() == 6);
  CHECK(r.stages.front().stage == "support");
  CHECK(r.stages[4].stage == "neg4");
  CHECK(r.stages.back().stage == "pos");
  for (std::size_t t = 1; t <= 4; ++t) {
    std::size_t n = 0;
    for (const auto& a : r.pseudo.log()) n += a.iteration == t;
    CHECK(n == ep.unlabeled.size());
  }
}

TEST_CASE("no_delta mode never rejects") {
  const auto ep = episode(store_sep4(), 3);
  MusicConfig cfg;
  cfg.mode = Mode::no_delta;
  const auto r = run_music(ep, cfg);
  CHECK(r.pseudo.complete());
}

TEST_CASE("every logged negative had probability at most delta when assigned") {
  for (std::size_t i = 0; i < 5; ++i) {
    const auto r = run_music(episode(store_sep4(), i), MusicConfig{});
    for (const auto& a : r.pseudo.log()) CHECK(a.prob <= 0.2);
    for (std::size_t u = 0; u < r.pseudo.samples(); ++u) CHECK(r.pseudo.exclusion_count(u) <= 4);
  }
}

TEST_CASE("admissible delta schedule loosens the threshold as classes are excluded") {
  const auto ep = episode(store_sep4(), 4);
  MusicConfig fixed, adaptive;
  adaptive.delta_schedule = DeltaSchedule::admissible;
  const auto a = run_music(ep, fixed), b = run_music(ep, adaptive);
  CHECK(b.pseudo.log().size() >= a.pseudo.log().size());
  for (const auto& x : b.pseudo.log()) CHECK(x.prob <= 1.0 / static_cast<double>(5 - (x.iteration - 1)) + 1e-15);
}

TEST_CASE("runs are deterministic") {
  const auto ep = episode(store_sep4(), 5);
  const auto a = run_music(ep, MusicConfig{}), b = run_music(ep, MusicConfig{});
  CHECK(a.params == b.params);
  CHECK(a.predictions == b.predictions);
  CHECK(a.pseudo.log().size() == b.pseudo.log().size());
}

TEST_CASE("no_minent equals full with a zero entropy weight") {
  const auto ep = episode(store_sep4(), 6);
  MusicConfig no_minent;
  no_minent.mode = Mode::no_minent;
  MusicConfig zero;
  zero.minent_weight = 0.0;
  CHECK(run_music(ep, no_minent).params == run_music(ep, zero).params);
}

TEST_CASE("ablation modes") {
  const auto ep = episode(store_sep4(), 7);
  MusicConfig cfg;

  cfg.mode = Mode::only_neg;
  const auto neg = run_music(ep, cfg);
  CHECK(neg.positives.empty());
  CHECK(neg.stages.back().stage != "pos");

  cfg.mode = Mode::only_pos;
  const auto pos = run_music(ep, cfg);
  CHECK_FALSE(pos.positives.empty());
  CHECK(pos.stages.back().stage == "retrain");

  cfg.mode = Mode::support_only;
  const auto base = run_music(ep, cfg);
  CHECK(base.stages.size() == 1);
  CHECK(base.pseudo.log().empty());

  for (Mode m : {Mode::alternating_neg_first, Mode::alternating_pos_first}) {
    cfg.mode = m;
    const auto r = run_music(ep, cfg);
    CHECK(r.predictions.size() == ep.queries.size());
    bool saw_thr = false;
    for (const auto& s : r.stages) saw_thr |= s.stage.rfind("thr", 0) == 0;
    CHECK(saw_thr);
    if (m == Mode::alternating_pos_first) CHECK(r.stages[1].stage == "thr1");
  }
}

TEST_CASE("transductive and distractive episodes run end to end") {
  for (Setting s : {Setting::transductive, Setting::distractive}) {
    const auto ep = episode(store_sep4(), 8, 30, s);
    const auto r = run_music(ep, MusicConfig{});
    CHECK(r.predictions.size() == ep.queries.size());
    CHECK(r.pseudo.samples() == ep.unlabeled.size());
    CHECK(r.stages.back().query_accuracy > r.stages.front().query_accuracy - 0.2);
  }
}

TEST_CASE("engine rejects malformed episodes and configs") {
  auto ep = episode(store_sep4(), 9);
  MusicConfig bad;
  bad.delta = 0.0;
  CHECK_THROWS_AS(MusicEngine(ep, bad), ConfigError);
  ep.support[0].label = 7;
  CHECK_THROWS_AS(MusicEngine(ep, MusicConfig{}), ContractError);
  CHECK_THROWS_AS(parse_mode("neg_only"), ConfigError);
  CHECK(parse_mode("alternating_pos_first") == Mode::alternating_pos_first);
}
