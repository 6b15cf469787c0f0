#include "music/episode.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "music/error.hpp"
#include "music/rng.hpp"

namespace music {

std::string to_string(Setting s) {
  switch (s) {
    case Setting::inductive: return "inductive";
    case Setting::transductive: return "transductive";
    case Setting::distractive: return "distractive";
  }
  return "?";
}

Setting parse_setting(const std::string& s) {
  if (s == "inductive") return Setting::inductive;
  if (s == "transductive") return Setting::transductive;
  if (s == "distractive") return Setting::distractive;
  throw ConfigError("unknown setting '" + s + "' (expected inductive, transductive or distractive)");
}

void EpisodeConfig::validate() const {
  if (ways < 2) throw ConfigError("ways must be at least 2");
  if (shots == 0) throw ConfigError("shots must be positive");
  if (queries_per_class == 0) throw ConfigError("queries_per_class must be positive");
  if (episodes == 0) throw ConfigError("episodes must be positive");
  if (setting == Setting::distractive && distractor_classes == 0)
    throw ConfigError("distractive setting needs at least one distractor class");
}

std::size_t Episode::distractor_total() const {
  return static_cast<std::size_t>(
      std::count_if(unlabeled.begin(), unlabeled.end(), [](const auto& u) { return u.truth == kDistractor; }));
}

EpisodeSampler::EpisodeSampler(const FeatureStore& store, EpisodeConfig cfg) : store_(store), cfg_(std::move(cfg)) {
  cfg_.validate();
  by_class_.assign(store_.num_classes, {});
  for (std::size_t i = 0; i < store_.records.size(); ++i) by_class_[store_.records[i].class_id].push_back(i);

  const std::size_t need = cfg_.shots + cfg_.unlabeled_per_class + cfg_.queries_per_class;
  for (std::uint32_t k = 0; k < store_.num_classes; ++k)
    if (by_class_[k].size() >= need) episode_eligible_.push_back(k);
  if (episode_eligible_.size() < cfg_.ways) {
    std::ostringstream msg;
    msg << "need " << cfg_.ways << " classes with >= " << need << " records (K+U+Q), store has "
        << episode_eligible_.size() << " (short by " << cfg_.ways - episode_eligible_.size() << ")";
    throw SamplingError(msg.str());
  }
  if (cfg_.setting == Setting::distractive) {
    // Worst case: the episode classes consume every class that could also serve as a distractor.
    std::size_t distractor_capable = 0;
    for (std::uint32_t k = 0; k < store_.num_classes; ++k)
      if (by_class_[k].size() >= cfg_.distractor_count()) ++distractor_capable;
    std::size_t overlap = std::min(distractor_capable, cfg_.ways);
    if (distractor_capable - overlap < cfg_.distractor_classes) {
      std::ostringstream msg;
      msg << "need " << cfg_.distractor_classes << " distractor classes with >= " << cfg_.distractor_count()
          << " records outside the " << cfg_.ways << " episode classes, store has "
          << distractor_capable - overlap;
      throw SamplingError(msg.str());
    }
  }
}

namespace {

// First n entries of a uniformly random permutation of `pool`.
template <typename T>
std::vector<T> draw(std::vector<T> pool, std::size_t n, std::mt19937_64& gen) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(gen)]);
  }
  pool.resize(n);
  return pool;
}

std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

Episode EpisodeSampler::sample(std::size_t episode_index) const {
  Episode ep;
  ep.index = episode_index;
  ep.seed = derive_seed(cfg_.base_seed, episode_index);
  ep.ways = cfg_.ways;
  std::mt19937_64 gen(ep.seed);

  ep.class_map = draw(episode_eligible_, cfg_.ways, gen);

  const std::size_t K = cfg_.shots, U = cfg_.unlabeled_per_class, Q = cfg_.queries_per_class;
  for (std::size_t label = 0; label < cfg_.ways; ++label) {
    const auto picked = draw(by_class_[ep.class_map[label]], K + U + Q, gen);
    const int y = static_cast<int>(label);
    for (std::size_t i = 0; i < K; ++i)
      ep.support.push_back({picked[i], y, to_double(store_.records[picked[i]].vector)});
    for (std::size_t i = K; i < K + U; ++i)
      ep.unlabeled.push_back({picked[i], y, false, to_double(store_.records[picked[i]].vector)});
    for (std::size_t i = K + U; i < K + U + Q; ++i)
      ep.queries.push_back({picked[i], y, to_double(store_.records[picked[i]].vector)});
  }

  if (cfg_.setting == Setting::distractive) {
    std::vector<std::uint32_t> candidates;
    for (std::uint32_t k = 0; k < store_.num_classes; ++k) {
      bool in_episode = std::find(ep.class_map.begin(), ep.class_map.end(), k) != ep.class_map.end();
      if (!in_episode && by_class_[k].size() >= cfg_.distractor_count()) candidates.push_back(k);
    }
    ep.distractor_map = draw(std::move(candidates), cfg_.distractor_classes, gen);
    for (std::uint32_t k : ep.distractor_map)
      for (std::size_t r : draw(by_class_[k], cfg_.distractor_count(), gen))
        ep.unlabeled.push_back({r, kDistractor, false, to_double(store_.records[r].vector)});
  }

  if (cfg_.setting == Setting::transductive)
    for (const auto& q : ep.queries) ep.unlabeled.push_back({q.record, q.label, true, q.features});

  std::shuffle(ep.unlabeled.begin(), ep.unlabeled.end(), gen);
  return ep;
}

Episode sample_episode(const FeatureStore& store, const EpisodeConfig& cfg, std::size_t episode_index) {
  return EpisodeSampler(store, cfg).sample(episode_index);
}

std::string check_episode(const Episode& ep, const EpisodeConfig& cfg) {
  std::ostringstream err;
  const std::size_t N = cfg.ways, K = cfg.shots, U = cfg.unlabeled_per_class, Q = cfg.queries_per_class;
  if (ep.support.size() != N * K) err << "support size " << ep.support.size() << " != " << N * K << "; ";
  if (ep.queries.size() != N * Q) err << "query size " << ep.queries.size() << " != " << N * Q << "; ";

  std::size_t expected_pool = N * U;
  if (cfg.setting == Setting::transductive) expected_pool += N * Q;
  if (cfg.setting == Setting::distractive) expected_pool += cfg.distractor_classes * cfg.distractor_count();
  if (ep.unlabeled.size() != expected_pool)
    err << "unlabeled size " << ep.unlabeled.size() << " != " << expected_pool << "; ";

  std::set<std::size_t> support_ids, pool_ids, query_ids, pool_query_ids;
  std::vector<std::size_t> per_class_support(N), per_class_pool(N), per_class_query(N);
  for (const auto& s : ep.support) {
    support_ids.insert(s.record);
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= N) err << "support label out of range; ";
    else ++per_class_support[s.label];
  }
  for (const auto& q : ep.queries) {
    query_ids.insert(q.record);
    if (q.label < 0 || static_cast<std::size_t>(q.label) >= N) err << "query label out of range; ";
    else ++per_class_query[q.label];
  }
  std::size_t distractors = 0;
  for (const auto& u : ep.unlabeled) {
    if (u.is_query) {
      pool_query_ids.insert(u.record);
      continue;
    }
    pool_ids.insert(u.record);
    if (u.truth == kDistractor) ++distractors;
    else if (u.truth < 0 || static_cast<std::size_t>(u.truth) >= N) err << "unlabeled truth out of range; ";
    else ++per_class_pool[u.truth];
  }
  auto overlaps = [](const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
    return std::any_of(a.begin(), a.end(), [&](std::size_t x) { return b.contains(x); });
  };
  if (support_ids.size() != ep.support.size() || query_ids.size() != ep.queries.size())
    err << "duplicate records within a set; ";
  if (overlaps(support_ids, pool_ids) || overlaps(support_ids, query_ids) || overlaps(pool_ids, query_ids))
    err << "support/unlabeled/query records overlap; ";

  if (cfg.setting == Setting::transductive) {
    if (pool_query_ids != query_ids) err << "transductive pool does not contain exactly the queries; ";
  } else if (!pool_query_ids.empty()) {
    err << "queries present in a non-transductive pool; ";
  }
  const std::size_t expected_distractors =
      cfg.setting == Setting::distractive ? cfg.distractor_classes * cfg.distractor_count() : 0;
  if (distractors != expected_distractors)
    err << "distractor count " << distractors << " != " << expected_distractors << "; ";
  for (std::size_t k = 0; k < N; ++k)
    if (per_class_support[k] != K || per_class_pool[k] != U || per_class_query[k] != Q)
      err << "class " << k << " unbalanced; ";
  return err.str();
}

}  // namespace music
