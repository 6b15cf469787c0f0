#include "music/feature_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "music/error.hpp"

namespace music {

namespace {

constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8;

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  void bytes(const char* data, std::size_t n) {
    out_.write(data, static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed", offset_);
    offset_ += n;
  }

  void u32(std::uint32_t v) {
    std::array<char, 4> b;
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b.data(), b.size());
  }

  void u64(std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b.data(), b.size());
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::ostream& out_;
  std::uint64_t offset_ = 0;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  // False when the stream ends before n bytes.
  bool bytes(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    auto got = static_cast<std::size_t>(in_.gcount());
    offset_ += got;
    return got == n;
  }

  bool u32(std::uint32_t& v) {
    std::array<unsigned char, 4> b;
    if (!bytes(reinterpret_cast<char*>(b.data()), b.size())) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return true;
  }

  bool u64(std::uint64_t& v) {
    std::array<unsigned char, 8> b;
    if (!bytes(reinterpret_cast<char*>(b.data()), b.size())) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

const char* split_name(Split s) { return s == Split::base ? "base" : "novel"; }

Split parse_split(const std::string& s) {
  if (s == "base") return Split::base;
  if (s == "novel") return Split::novel;
  throw FormatError("manifest: unknown split '" + s + "'");
}

}  // namespace

void FeatureStore::validate() const {
  if (dim == 0) throw FormatError("store dim must be positive");
  if (num_classes == 0) throw FormatError("store num_classes must be positive");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.vector.size() != dim) throw DataError("vector has wrong dimension", i);
    if (r.class_id >= num_classes) throw DataError("class_id out of range", i);
    for (float v : r.vector)
      if (!std::isfinite(v)) throw DataError("non-finite value", i);
    if (manifest && !manifest->contains(r.class_id))
      throw DataError("class_id " + std::to_string(r.class_id) + " missing from manifest", i);
  }
}

std::vector<std::size_t> FeatureStore::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& r : records)
    if (r.class_id < num_classes) ++counts[r.class_id];
  return counts;
}

bool bitwise_equal(const FeatureStore& a, const FeatureStore& b) {
  if (a.dim != b.dim || a.num_classes != b.num_classes || a.records.size() != b.records.size())
    return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.class_id != y.class_id || x.vector.size() != y.vector.size()) return false;
    if (!x.vector.empty() &&
        std::memcmp(x.vector.data(), y.vector.data(), x.vector.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

std::size_t encoded_size(std::uint32_t dim, std::uint64_t record_count) {
  return kHeaderSize + record_count * (4 + 4 * static_cast<std::size_t>(dim));
}

void write_store(const FeatureStore& store, std::ostream& out) {
  store.validate();
  LeWriter w(out);
  w.bytes(kStoreMagic, sizeof(kStoreMagic));
  w.u32(store.dim);
  w.u32(store.num_classes);
  w.u64(store.records.size());
  for (const auto& r : store.records) {
    w.u32(r.class_id);
    for (float v : r.vector) w.f32(v);
  }
}

FeatureStore read_store(std::istream& in) {
  LeReader r(in);
  char magic[8];
  if (!r.bytes(magic, sizeof(magic)) || std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0)
    throw FormatError("bad magic: not an FSFEAT01 feature store");

  FeatureStore store;
  std::uint64_t count = 0;
  if (!r.u32(store.dim) || !r.u32(store.num_classes) || !r.u64(count))
    throw TruncationError("header truncated at byte offset " + std::to_string(r.offset()));
  if (store.dim == 0) throw FormatError("header declares dim 0");
  if (store.num_classes == 0) throw FormatError("header declares 0 classes");

  // Grow as records arrive; a corrupt count must not trigger a huge allocation.
  store.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord rec;
    rec.vector.reserve(std::min<std::uint32_t>(store.dim, 4096));
    bool ok = r.u32(rec.class_id);
    for (std::uint32_t j = 0; ok && j < store.dim; ++j) {
      std::uint32_t bits = 0;
      ok = r.u32(bits);
      rec.vector.push_back(std::bit_cast<float>(bits));
    }
    if (!ok)
      throw TruncationError("header declares " + std::to_string(count) + " records but data ends in record " +
                            std::to_string(i));
    if (rec.class_id >= store.num_classes) throw DataError("class_id out of range", i);
    for (float v : rec.vector)
      if (!std::isfinite(v)) throw DataError("non-finite value", i);
    store.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after record " + std::to_string(count));
  return store;
}

void write_store_file(const FeatureStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing", 0);
  write_store(store, out);
  out.flush();
  if (!out) throw IoError("flush failed for '" + path.string() + "'", encoded_size(store.dim, store.records.size()));
}

FeatureStore read_store_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'", 0);
  return read_store(in);
}

std::filesystem::path manifest_path_for(const std::filesystem::path& store_path) {
  return std::filesystem::path(store_path.string() + ".manifest.json");
}

std::string manifest_to_json(const Manifest& manifest) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [id, info] : manifest)
    classes[std::to_string(id)] = {{"name", info.name}, {"split", split_name(info.split)}};
  nlohmann::json doc = {{"format", "fsfeat-manifest/1"}, {"classes", classes}};
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "fsfeat-manifest/1" || !doc.contains("classes") ||
      !doc["classes"].is_object())
    throw FormatError("manifest: expected {\"format\": \"fsfeat-manifest/1\", \"classes\": {...}}");
  Manifest m;
  for (const auto& [key, value] : doc["classes"].items()) {
    std::size_t pos = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(key, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != key.size() || id > UINT32_MAX) throw FormatError("manifest: bad class id '" + key + "'");
    if (!value.is_object() || !value.contains("name") || !value["name"].is_string())
      throw FormatError("manifest: class " + key + " needs a string 'name'");
    ClassInfo info;
    info.name = value["name"].get<std::string>();
    info.split = parse_split(value.value("split", "novel"));
    m.emplace(static_cast<std::uint32_t>(id), std::move(info));
  }
  return m;
}

void write_manifest_file(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing", 0);
  out << manifest_to_json(manifest);
  if (!out) throw IoError("write failed for '" + path.string() + "'", 0);
}

Manifest read_manifest_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'", 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

FeatureStore load_store_with_manifest(const std::filesystem::path& store_path) {
  FeatureStore store = read_store_file(store_path);
  auto mpath = manifest_path_for(store_path);
  if (std::filesystem::exists(mpath)) {
    store.manifest = read_manifest_file(mpath);
    store.validate();
  }
  return store;
}

void SyntheticConfig::validate() const {
  if (num_classes == 0) throw ConfigError("synthetic: num_classes must be positive");
  if (dim == 0) throw ConfigError("synthetic: dim must be positive");
  if (samples_per_class == 0) throw ConfigError("synthetic: samples_per_class must be positive");
  if (!(separation > 0.0) || !std::isfinite(separation)) throw ConfigError("synthetic: separation must be > 0");
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("synthetic: noise_sigma must be > 0");
  if (dim < num_classes)
    throw ConfigError("synthetic: dim (" + std::to_string(dim) + ") < num_classes (" +
                      std::to_string(num_classes) + "); orthogonal means need dim >= num_classes");
}

std::vector<double> synthetic_class_mean(const SyntheticConfig& cfg, std::uint32_t class_id) {
  std::vector<double> mean(cfg.dim, 0.0);
  if (class_id < cfg.dim) mean[class_id] = cfg.separation;
  return mean;
}

FeatureStore generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  FeatureStore store;
  store.dim = cfg.dim;
  store.num_classes = cfg.num_classes;
  store.records.reserve(static_cast<std::size_t>(cfg.num_classes) * cfg.samples_per_class);

  std::mt19937_64 gen(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (std::uint32_t k = 0; k < cfg.num_classes; ++k) {
    auto mean = synthetic_class_mean(cfg, k);
    for (std::uint32_t s = 0; s < cfg.samples_per_class; ++s) {
      FeatureRecord rec;
      rec.class_id = k;
      rec.vector.resize(cfg.dim);
      for (std::uint32_t j = 0; j < cfg.dim; ++j) rec.vector[j] = static_cast<float>(mean[j] + noise(gen));
      store.records.push_back(std::move(rec));
    }
  }
  return store;
}

}  // namespace music
