#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace music {

inline constexpr char kStoreMagic[8] = {'F', 'S', 'F', 'E', 'A', 'T', '0', '1'};

struct FeatureRecord {
  std::uint32_t class_id = 0;
  std::vector<float> vector;

  bool operator==(const FeatureRecord&) const = default;
};

enum class Split { base, novel };

struct ClassInfo {
  std::string name;
  Split split = Split::novel;

  bool operator==(const ClassInfo&) const = default;
};

using Manifest = std::map<std::uint32_t, ClassInfo>;

/// Frozen-embedding dataset: raw (unnormalized) vectors tagged with class ids.
struct FeatureStore {
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::vector<FeatureRecord> records;
  std::optional<Manifest> manifest;

  /// Throws DataError / FormatError when an invariant is broken.
  void validate() const;

  std::vector<std::size_t> class_counts() const;
};

/// Equality that compares vectors bit-for-bit (distinguishes -0.0f / 0.0f, NaN payloads).
bool bitwise_equal(const FeatureStore& a, const FeatureStore& b);

// Binary layout, little-endian:
//   "FSFEAT01" | u32 dim | u32 num_classes | u64 count | count x (u32 class_id, dim x f32)
void write_store(const FeatureStore& store, std::ostream& out);
FeatureStore read_store(std::istream& in);

void write_store_file(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore read_store_file(const std::filesystem::path& path);

std::size_t encoded_size(std::uint32_t dim, std::uint64_t record_count);

// Sidecar manifest (JSON):
//   {"format": "fsfeat-manifest/1",
//    "classes": {"<id>": {"name": "...", "split": "base"|"novel"}, ...}}
std::filesystem::path manifest_path_for(const std::filesystem::path& store_path);
std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);
void write_manifest_file(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest_file(const std::filesystem::path& path);

/// Loads the store and, when `<store>.manifest.json` exists, attaches it.
FeatureStore load_store_with_manifest(const std::filesystem::path& store_path);

struct SyntheticConfig {
  std::uint32_t num_classes = 20;
  std::uint32_t dim = 64;
  std::uint32_t samples_per_class = 600;
  double separation = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Class k's mean is separation * e_k (orthogonal, pairwise distance sqrt(2) * separation);
/// samples add isotropic Gaussian noise. Records are emitted class by class.
FeatureStore generate_synthetic(const SyntheticConfig& cfg);

/// Mean vector of class k as produced by generate_synthetic.
std::vector<double> synthetic_class_mean(const SyntheticConfig& cfg, std::uint32_t class_id);

}  // namespace music
