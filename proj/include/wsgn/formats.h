#pragma once

// On-disk formats.
//
// Feature container: "WSGNF1", u32 rows (LE), u32 cols (LE), rows*cols IEEE-754
// binary32 values (LE, row-major). The double-precision variant used by
// checkpoints has magic "WSGND1" and binary64 payload.
//
// Records (manifests, config files, checkpoint indexes): one record per line,
// a leading type word followed by whitespace-separated key=value tokens;
// blank lines and lines starting with '#' are ignored.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wsgn/datagen.h"
#include "wsgn/matrix.h"

namespace wsgn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

std::string encode_matrix(const Matrix& m, Precision precision);
// Decodes one container starting at `offset`; advances `offset` past it.
Matrix decode_matrix(const std::string& bytes, std::size_t& offset);

void write_features(const std::filesystem::path& path, const Matrix& m,
                    Precision precision = Precision::f32);
Matrix read_features(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

struct Record {
  std::string type;
  std::vector<std::pair<std::string, std::string>> fields;

  const std::string* find(const std::string& key) const;
  const std::string& at(const std::string& key) const;  // throws ValidationError
  void set(const std::string& key, std::string value);
};

std::optional<Record> parse_record(const std::string& line);
std::string format_record(const Record& r);
std::vector<Record> parse_records(const std::string& text);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);
std::uint64_t parse_uint(const std::string& s, const std::string& what);

struct ManifestReadResult {
  Dataset dataset;  // features are not loaded
  std::vector<std::string> warnings;
};

void write_manifest(const std::filesystem::path& path, const Dataset& dataset);
ManifestReadResult read_manifest(const std::filesystem::path& path);

// Writes every video's features under `dir`/features/<split>/ and the
// manifest at `dir`/<split>.manifest; returns the manifest path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, Dataset dataset);
// Reads the manifest and every feature file it references.
Dataset load_dataset(const std::filesystem::path& manifest, std::vector<std::string>* warnings = nullptr);

}  // namespace wsgn
