#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dgl {

// Lower-case hex digests.
std::string sha256_hex(std::string_view data);
// Git object id of a blob with this content: sha1("blob <size>\0" + data).
std::string git_blob_sha1(std::string_view data);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Shortest round-trip formatting ("%.17g").
std::string format_double(double v);

/// Comma-separated table with a header row, LF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Parses a numeric CSV with a header row into a points matrix (one row per line).
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path, std::vector<std::string>* header);

/// Run manifest: config snapshot and hash, seed, timestamps, emitted files
/// with SHA-256 checksums and a metric summary.
class RunManifest {
 public:
  RunManifest(std::filesystem::path out_dir, nlohmann::json config, std::uint64_t seed, std::string command);

  const std::filesystem::path& out_dir() const noexcept { return out_dir_; }
  const std::string& config_hash() const noexcept { return config_hash_; }

  // Writes `content` atomically under the output directory and records it.
  void emit(const std::string& name, std::string_view content);
  void set_metric(const std::string& key, nlohmann::json value);
  nlohmann::json to_json() const;
  // Writes manifest.json (not listed in itself).
  void finish();

 private:
  std::filesystem::path out_dir_;
  nlohmann::json config_;
  std::string config_hash_;
  std::uint64_t seed_;
  std::string command_;
  std::string started_;
  std::vector<std::pair<std::string, std::string>> files_;
  nlohmann::json metrics_ = nlohmann::json::object();
};

// Canonical serialization used for hashing configs (sorted keys, no whitespace).
std::string canonical_json(const nlohmann::json& j);

std::string utc_timestamp();

}  // namespace dgl
