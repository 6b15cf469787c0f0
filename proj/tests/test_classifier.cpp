#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "music/classifier.hpp"
#include "music/error.hpp"
#include "oracles.hpp"

using namespace music;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = dist(gen);
  return v;
}

ProbVector probs_of(std::vector<double> p) {
  return {p, ClassMask(p.size(), true)};
}

}  // namespace

TEST_CASE("l2_normalize") {
  auto v = l2_normalize(std::vector<double>{3.0, 4.0});
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-15));

  const std::vector<double> unit = {0.0, 1.0, 0.0};
  CHECK(l2_normalize(unit) == unit);
  CHECK(l2_normalize(std::vector<double>{0.0, 0.0}) == std::vector<double>{0.0, 0.0});
  const std::vector<double> tiny = {1e-14, 0.0};
  CHECK(l2_normalize(tiny) == tiny);
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{1.0, NAN}), NumericError);

  std::mt19937_64 gen(1);
  for (int i = 0; i < 100; ++i) {
    auto x = random_vector(7, gen);
    const double alpha = std::exp(std::uniform_real_distribution<double>(-5, 5)(gen));
    std::vector<double> scaled = x;
    for (double& s : scaled) s *= alpha;
    auto a = l2_normalize(x), b = l2_normalize(scaled);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));
  }
}

TEST_CASE("logits") {
  auto params = ClassifierParams::zeros(3, 3);
  for (std::size_t k = 0; k < 3; ++k) params.weights(k, k) = 1.0;
  auto z = logits(params, std::vector<double>{0.0, 5.0, 0.1});
  CHECK(argmax(z) == 1);

  auto zero = ClassifierParams::zeros(4, 2);
  CHECK(logits(zero, std::vector<double>{1.0, 2.0}) == std::vector<double>(4, 0.0));

  CHECK_THROWS_AS(logits(zero, std::vector<double>{1.0, 2.0, 3.0}), ContractError);

  SUBCASE("matches an independent matrix-vector oracle") {
    std::mt19937_64 gen(2);
    for (int i = 0; i < 200; ++i) {
      const std::size_t c = 2 + gen() % 9, d = 1 + gen() % 64;
      auto p = ClassifierParams::random(c, d, gen(), 1.0, i % 2 == 0);
      if (p.bias)
        for (double& b : *p.bias) b = std::normal_distribution<double>(0, 1)(gen);
      auto x = random_vector(d, gen, 3.0);
      auto got = logits(p, x), want = oracle::logits(p, x);
      for (std::size_t k = 0; k < c; ++k) CHECK(std::abs(got[k] - want[k]) < 1e-12);
    }
  }
}

TEST_CASE("masked_softmax") {
  auto u = masked_softmax(std::vector<double>{0, 0, 0}, full_mask(3));
  for (double p : u.probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto h = masked_softmax(std::vector<double>{std::log(2.0), 0, 0}, full_mask(3));
  CHECK(h.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(h.probs[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(h.probs[2] == doctest::Approx(0.25).epsilon(1e-15));

  auto m = masked_softmax(std::vector<double>{1, 2, 3}, ClassMask{true, true, false});
  const double e = std::exp(1.0);
  CHECK(m.probs[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-15));
  CHECK(m.probs[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-15));
  CHECK(m.probs[2] == 0.0);
  CHECK(m.probs[0] == doctest::Approx(0.2689).epsilon(1e-4));

  CHECK_THROWS_AS(masked_softmax(std::vector<double>{1, 2}, ClassMask{false, false}), ContractError);
  CHECK_THROWS_AS(masked_softmax(std::vector<double>{1, 2}, ClassMask{true}), ContractError);

  SUBCASE("stable for huge logits") {
    auto p = masked_softmax(std::vector<double>{1000.0, 999.0, -1000.0}, full_mask(3));
    CHECK(std::isfinite(p.probs[0]));
    CHECK(p.probs[0] + p.probs[1] + p.probs[2] == doctest::Approx(1.0));
  }
}

TEST_CASE("cross-entropy loss and gradient") {
  auto r = ce_loss_grad(probs_of({0.5, 0.25, 0.25}), 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r.grad == std::vector<double>{-0.5, 0.25, 0.25});
  CHECK_FALSE(r.clamped);

  CHECK(ce_loss_grad(probs_of({0.0, 1.0, 0.0}), 1).loss == 0.0);

  auto floored = ce_loss_grad(probs_of({0.0, 1.0}), 0);
  CHECK(floored.clamped);
  CHECK(floored.loss == doctest::Approx(-std::log(kProbFloor)));

  ProbVector masked{{0.6, 0.0, 0.4}, {true, false, true}};
  CHECK_THROWS_AS(ce_loss_grad(masked, 1), ContractError);
  CHECK(ce_loss_grad(masked, 0).grad[1] == 0.0);
}

TEST_CASE("negative cross-entropy loss and gradient") {
  CHECK(negce_loss_grad(probs_of({0.5, 0.5}), 0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(negce_loss_grad(probs_of({1e-15, 1.0 - 1e-15}), 0).loss < 1e-14);

  auto r = negce_loss_grad(probs_of({0.5, 0.3, 0.2}), 0);
  CHECK(r.grad[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.grad[1] == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(r.grad[2] == doctest::Approx(-0.2).epsilon(1e-15));

  // The same gradient by central differences of the independent loss.
  const std::vector<double> z = {std::log(0.5), std::log(0.3), std::log(0.2)};
  auto fd = oracle::central_diff([](const std::vector<double>& v) { return oracle::negce(v, {true, true, true}, 0); }, z);
  CHECK(oracle::relative_error(r.grad, fd) < 1e-6);

  auto sure = negce_loss_grad(probs_of({1.0, 0.0}), 0);
  CHECK(sure.clamped);
  CHECK(std::isfinite(sure.loss));
  CHECK(sure.loss == doctest::Approx(-std::log(kProbFloor)));
}

TEST_CASE("minimum-entropy loss and gradient") {
  auto u = entropy_loss_grad(masked_softmax(std::vector<double>{0, 0, 0}, full_mask(3)));
  CHECK(u.loss == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  for (double g : u.grad) CHECK(std::abs(g) < 1e-15);

  CHECK(entropy_loss_grad(probs_of({0.0, 1.0, 0.0})).loss == 0.0);

  auto m = entropy_loss_grad(masked_softmax(std::vector<double>{0, 0, 5}, ClassMask{true, true, false}));
  CHECK(m.loss == doctest::Approx(std::log(2.0)));
  CHECK(m.grad[2] == 0.0);
}

TEST_CASE("loss gradients match central finite differences over random instances") {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 2 + gen() % 9;
    const auto z = random_vector(c, gen, 2.0);
    const auto mask = oracle::random_mask(c, 2, gen);
    const auto p = masked_softmax(z, mask);
    const std::size_t y = oracle::random_admissible(mask, gen);

    auto fd_ce = oracle::central_diff([&](const std::vector<double>& v) { return oracle::ce(v, mask, y); }, z);
    auto fd_neg = oracle::central_diff([&](const std::vector<double>& v) { return oracle::negce(v, mask, y); }, z);
    auto fd_ent = oracle::central_diff([&](const std::vector<double>& v) { return oracle::entropy(v, mask); }, z);

    CHECK(oracle::relative_error(ce_loss_grad(p, y).grad, fd_ce) < 1e-6);
    CHECK(oracle::relative_error(negce_loss_grad(p, y).grad, fd_neg) < 1e-6);
    CHECK(oracle::relative_error(entropy_loss_grad(p).grad, fd_ent) < 1e-6);

    CHECK(ce_loss_grad(p, y).loss == doctest::Approx(oracle::ce(z, mask, y)).epsilon(1e-12));
    CHECK(negce_loss_grad(p, y).loss == doctest::Approx(oracle::negce(z, mask, y)).epsilon(1e-10));
    CHECK(entropy_loss_grad(p).loss == doctest::Approx(oracle::entropy(z, mask)).epsilon(1e-12));
  }
}

TEST_CASE("simplex, sign and shift-invariance properties") {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t c = 1 + gen() % 10;
    const auto z = random_vector(c, gen, 5.0);
    const auto mask = oracle::random_mask(c, 1, gen);
    const auto p = masked_softmax(z, mask);
    const double sum = std::accumulate(p.probs.begin(), p.probs.end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (std::size_t k = 0; k < c; ++k) {
      CHECK(p.probs[k] >= 0.0);
      if (!mask[k]) CHECK(p.probs[k] == 0.0);
    }

    auto shifted = z;
    const double shift = std::uniform_real_distribution<double>(-50, 50)(gen);
    for (std::size_t k = 0; k < c; ++k)
      if (mask[k]) shifted[k] += shift;
    const auto q = masked_softmax(shifted, mask);
    for (std::size_t k = 0; k < c; ++k) CHECK(std::abs(p.probs[k] - q.probs[k]) < 1e-12);

    const std::size_t y = oracle::random_admissible(mask, gen);
    CHECK(ce_loss_grad(p, y).loss >= 0.0);
    CHECK(negce_loss_grad(p, y).loss >= 0.0);
    const double h = entropy_loss_grad(p).loss;
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(p.admissible())) + 1e-12);
  }
}

namespace {

// Objective with one term of each kind over random unit inputs.
Objective random_objective(std::size_t c, std::size_t d, std::mt19937_64& gen) {
  Objective obj;
  obj.inputs = Matrix(6, d);
  for (std::size_t r = 0; r < 6; ++r) {
    auto x = l2_normalize(random_vector(d, gen));
    std::copy(x.begin(), x.end(), obj.inputs.row(r).begin());
  }
  LossTerm ce{LossKind::cross_entropy, 1.0, {}}, neg{LossKind::negative_cross_entropy, 1.0, {}},
      ent{LossKind::min_entropy, 0.7, {}};
  for (std::size_t r = 0; r < 2; ++r) ce.samples.push_back({r, full_mask(c), gen() % c});
  for (std::size_t r = 2; r < 6; ++r) {
    auto mask = oracle::random_mask(c, 2, gen);
    neg.samples.push_back({r, mask, oracle::random_admissible(mask, gen)});
    ent.samples.push_back({r, mask, 0});
  }
  obj.terms = {ce, neg, ent};
  return obj;
}

double oracle_objective(const ClassifierParams& p, const Objective& obj) {
  double total = 0.0;
  for (const auto& t : obj.terms) {
    double sum = 0.0;
    for (const auto& s : t.samples) {
      std::vector<double> x(obj.inputs.row(s.row).begin(), obj.inputs.row(s.row).end());
      auto z = oracle::logits(p, x);
      switch (t.kind) {
        case LossKind::cross_entropy: sum += oracle::ce(z, s.mask, s.target); break;
        case LossKind::negative_cross_entropy: sum += oracle::negce(z, s.mask, s.target); break;
        case LossKind::min_entropy: sum += oracle::entropy(z, s.mask); break;
      }
    }
    total += t.weight * sum / static_cast<double>(t.samples.size());
  }
  return total;
}

}  // namespace

TEST_CASE("objective weight gradient matches finite differences of the oracle objective") {
  std::mt19937_64 gen(6);
  for (int i = 0; i < 20; ++i) {
    const std::size_t c = 2 + gen() % 6, d = 1 + gen() % 12;
    auto params = ClassifierParams::random(c, d, gen(), 1.0, true);
    const auto obj = random_objective(c, d, gen);
    const auto value = evaluate_objective(params, obj);
    CHECK(value.loss == doctest::Approx(oracle_objective(params, obj)).epsilon(1e-10));

    auto flat = params.weights.data();
    auto fd = oracle::central_diff(
        [&](const std::vector<double>& w) {
          auto p = params;
          p.weights.data() = w;
          return oracle_objective(p, obj);
        },
        flat);
    CHECK(oracle::relative_error(value.grad_weights.data(), fd) < 1e-6);

    auto fd_bias = oracle::central_diff(
        [&](const std::vector<double>& b) {
          auto p = params;
          p.bias = b;
          return oracle_objective(p, obj);
        },
        *params.bias);
    CHECK(oracle::relative_error(value.grad_bias, fd_bias) < 1e-6);
  }
}

TEST_CASE("sgd_train") {
  std::mt19937_64 gen(8);

  SUBCASE("zero learning rate leaves params unchanged") {
    auto params = ClassifierParams::random(4, 8, 1);
    auto obj = random_objective(4, 8, gen);
    auto out = sgd_train(params, obj, {25, 0.0, 0.9});
    CHECK(out.params == params);
    CHECK(out.loss_history.size() == 25);
  }

  SUBCASE("empty objective is a no-op") {
    auto params = ClassifierParams::random(3, 5, 2);
    Objective obj;
    obj.inputs = Matrix(0, 5);
    CHECK(sgd_train(params, obj, {}).params == params);
  }

  SUBCASE("memorizes one support point per class") {
    const std::size_t c = 5, d = 16;
    Objective obj;
    obj.inputs = Matrix(c, d);
    LossTerm ce{LossKind::cross_entropy, 1.0, {}};
    for (std::size_t k = 0; k < c; ++k) {
      auto x = l2_normalize(random_vector(d, gen));
      std::copy(x.begin(), x.end(), obj.inputs.row(k).begin());
      ce.samples.push_back({k, full_mask(c), k});
    }
    obj.terms = {ce};
    auto out = sgd_train(ClassifierParams::random(c, d, 3), obj, TrainSpec{});
    for (std::size_t k = 0; k < c; ++k) CHECK(argmax(logits_normalized(out.params, obj.inputs.row(k))) == k);
  }

  SUBCASE("CE-only objective decreases monotonically at learning rate 0.01") {
    const std::size_t c = 5, d = 32, n = 50;
    Objective obj;
    obj.inputs = Matrix(n, d);
    LossTerm ce{LossKind::cross_entropy, 1.0, {}};
    for (std::size_t i = 0; i < n; ++i) {
      auto x = random_vector(d, gen);
      x[i % c] += 4.0;
      auto u = l2_normalize(x);
      std::copy(u.begin(), u.end(), obj.inputs.row(i).begin());
      ce.samples.push_back({i, full_mask(c), i % c});
    }
    obj.terms = {ce};
    auto out = sgd_train(ClassifierParams::random(c, d, 4), obj, {200, 0.01, 0.9});
    for (std::size_t s = 1; s < out.loss_history.size(); ++s)
      CHECK(out.loss_history[s] <= out.loss_history[s - 1]);
    CHECK(out.loss_history.back() < out.loss_history.front());
  }

  SUBCASE("deterministic") {
    auto obj = random_objective(4, 8, gen);
    auto p = ClassifierParams::random(4, 8, 9);
    CHECK(sgd_train(p, obj, {}).params == sgd_train(p, obj, {}).params);
  }

  SUBCASE("divergence raises a training error with the step index") {
    auto obj = random_objective(3, 4, gen);
    try {
      sgd_train(ClassifierParams::random(3, 4, 5), obj, {50, 1e308, 0.9});
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.step() >= 1);
      CHECK(e.step() < 50);
    }
  }

  SUBCASE("invalid specs") {
    auto obj = random_objective(3, 4, gen);
    auto p = ClassifierParams::random(3, 4, 5);
    CHECK_THROWS_AS(sgd_train(p, obj, {0, 0.1, 0.9}), ConfigError);
    CHECK_THROWS_AS(sgd_train(p, obj, {10, 0.1, 1.0}), ConfigError);
    CHECK_THROWS_AS(sgd_train(p, obj, {10, -0.1, 0.5}), ConfigError);
  }
}

TEST_CASE("argmax breaks ties to the lowest index") {
  CHECK(argmax(std::vector<double>{0, 0, 0}) == 0);
  CHECK(argmax(std::vector<double>{1, 3, 3}) == 1);
}
