#include "wsgn/formats.h"

#include <bit>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace wsgn {

namespace {

constexpr char kMagicF32[] = "WSGNF1";
constexpr char kMagicF64[] = "WSGND1";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kHeaderLen = kMagicLen + 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::string& bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_matrix(const Matrix& m, Precision precision) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("matrix " + m.shape_string() + " exceeds the 32-bit shape fields");
  }
  std::string out;
  const std::size_t width = precision == Precision::f32 ? 4 : 8;
  out.reserve(kHeaderLen + m.size() * width);
  out.append(precision == Precision::f32 ? kMagicF32 : kMagicF64, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) {
    if (precision == Precision::f32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Matrix decode_matrix(const std::string& bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() < start + kHeaderLen) {
    throw FormatError("truncated header at offset " + std::to_string(start) + ": need " +
                      std::to_string(kHeaderLen) + " bytes, have " +
                      std::to_string(bytes.size() - std::min(bytes.size(), start)));
  }
  std::size_t width = 0;
  if (bytes.compare(start, kMagicLen, kMagicF32) == 0) {
    width = 4;
  } else if (bytes.compare(start, kMagicLen, kMagicF64) == 0) {
    width = 8;
  } else {
    throw FormatError("bad magic at offset " + std::to_string(start));
  }
  const std::uint64_t rows = get_le(bytes, start + kMagicLen, 4);
  const std::uint64_t cols = get_le(bytes, start + kMagicLen + 4, 4);
  // rows, cols < 2^32 so the product fits in 64 bits; guard the byte count.
  const std::uint64_t count = rows * cols;
  if (count > (std::numeric_limits<std::uint64_t>::max() - kHeaderLen) / width) {
    throw FormatError("shape overflow at offset " + std::to_string(start + kMagicLen));
  }
  const std::uint64_t payload = count * width;
  const std::size_t data_at = start + kHeaderLen;
  if (payload > bytes.size() - data_at) {
    throw FormatError("truncated payload at offset " + std::to_string(data_at) + ": header declares " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " (" +
                      std::to_string(payload) + " bytes), " +
                      std::to_string(bytes.size() - data_at) + " available");
  }
  Matrix m(rows, cols);
  auto values = m.values();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = data_at + i * width;
    if (width == 4) {
      values[i] = static_cast<double>(
          std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4))));
    } else {
      values[i] = std::bit_cast<double>(get_le(bytes, at, 8));
    }
  }
  offset = data_at + payload;
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string() + ": " + std::strerror(errno));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string() + ": " + std::strerror(errno));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_features(const std::filesystem::path& path, const Matrix& m, Precision precision) {
  write_file(path, encode_matrix(m, precision));
}

Matrix read_features(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  Matrix m = decode_matrix(bytes, offset);
  if (offset != bytes.size()) {
    throw FormatError(path.string() + ": " + std::to_string(bytes.size() - offset) +
                      " trailing bytes at offset " + std::to_string(offset));
  }
  return m;
}

const std::string* Record::find(const std::string& key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& Record::at(const std::string& key) const {
  if (const std::string* v = find(key)) return *v;
  throw ValidationError("record '" + type + "' is missing field '" + key + "'");
}

void Record::set(const std::string& key, std::string value) {
  for (auto& [k, v] : fields) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  fields.emplace_back(key, std::move(value));
}

std::optional<Record> parse_record(const std::string& line) {
  std::istringstream in(line);
  std::string tok;
  if (!(in >> tok) || tok[0] == '#') return std::nullopt;
  Record r;
  if (tok.find('=') != std::string::npos) {
    throw ValidationError("record must start with a type word: '" + line + "'");
  }
  r.type = tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("malformed field '" + tok + "' (expected key=value)");
    }
    r.fields.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  return r;
}

std::string format_record(const Record& r) {
  std::string out = r.type;
  for (const auto& [k, v] : r.fields) {
    out += ' ';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

std::vector<Record> parse_records(const std::string& text) {
  std::vector<Record> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      if (auto r = parse_record(line)) out.push_back(std::move(*r));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(what + ": not a number: '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(what + ": not a nonnegative integer: '" + s + "'");
  }
  return v;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (s.back() == sep) out.emplace_back();
  return out;
}

std::string join_labels(const std::vector<double>& labels) {
  std::string out;
  for (std::size_t q = 0; q < labels.size(); ++q) {
    if (labels[q] == 0.0) continue;
    if (!out.empty()) out += ',';
    out += std::to_string(q);
  }
  return out;
}

std::string join_segments(const std::vector<FrameSegment>& segs) {
  std::string out;
  for (const FrameSegment& s : segs) {
    if (!out.empty()) out += ',';
    out += std::to_string(s.class_id) + ':' + std::to_string(s.start_frame) + ':' +
           std::to_string(s.end_frame);
  }
  return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  std::string text = "# wsgn manifest v1\n";
  Record head{"dataset", {}};
  head.set("split", dataset.split.empty() ? "unspecified" : dataset.split);
  head.set("num_classes", std::to_string(dataset.num_classes));
  head.set("fps", format_double(dataset.fps));
  text += format_record(head) + '\n';
  for (const FeatureSequence& v : dataset.videos) {
    Record r{"video", {}};
    r.set("id", v.id);
    r.set("feature_path", v.feature_path);
    r.set("labels", join_labels(v.labels));
    r.set("segments", join_segments(v.segments));
    r.set("fps", format_double(v.fps));
    text += format_record(r) + '\n';
  }
  write_file(path, text);
}

ManifestReadResult read_manifest(const std::filesystem::path& path) {
  const std::vector<Record> records = parse_records(read_file(path));
  ManifestReadResult out;
  Dataset& d = out.dataset;
  bool have_header = false;
  for (const Record& r : records) {
    if (r.type == "dataset") {
      d.split = r.at("split");
      d.num_classes = parse_uint(r.at("num_classes"), "num_classes");
      d.fps = parse_double(r.at("fps"), "fps");
      have_header = true;
      continue;
    }
    if (r.type != "video") throw ValidationError("unknown record type '" + r.type + "'");
    if (!have_header) throw ValidationError("video record before the dataset header");
    FeatureSequence v;
    v.id = r.at("id");
    v.feature_path = r.at("feature_path");
    v.fps = parse_double(r.at("fps"), v.id + " fps");
    if (!(v.fps > 0.0)) throw ValidationError(v.id + ": fps must be positive");
    v.labels.assign(d.num_classes, 0.0);
    for (const std::string& tok : split(r.at("labels"), ',')) {
      const std::uint64_t q = parse_uint(tok, v.id + " label");
      if (q >= d.num_classes) {
        throw ValidationError(v.id + ": label index " + tok + " >= num_classes " +
                              std::to_string(d.num_classes));
      }
      v.labels[q] = 1.0;
    }
    for (const std::string& tok : split(r.at("segments"), ',')) {
      const std::vector<std::string> parts = split(tok, ':');
      if (parts.size() != 3) throw ValidationError(v.id + ": malformed segment '" + tok + "'");
      FrameSegment s{parse_uint(parts[0], v.id + " segment class"),
                     parse_uint(parts[1], v.id + " segment start"),
                     parse_uint(parts[2], v.id + " segment end")};
      if (s.class_id >= d.num_classes) {
        throw ValidationError(v.id + ": segment class " + parts[0] + " >= num_classes");
      }
      if (s.end_frame <= s.start_frame) {
        throw ValidationError(v.id + ": segment end " + parts[2] + " <= start " + parts[1]);
      }
      if (v.labels[s.class_id] == 0.0) {
        throw ValidationError(v.id + ": segment of class " + parts[0] +
                              " but the class is not in the label set");
      }
      v.segments.push_back(s);
    }
    if (!v.segments.empty()) {
      const std::vector<double> implied = labels_from_segments(v.segments, d.num_classes);
      for (std::size_t q = 0; q < d.num_classes; ++q) {
        if (v.labels[q] != 0.0 && implied[q] == 0.0) {
          out.warnings.push_back(v.id + ": class " + std::to_string(q) +
                                 " is labelled but has no segment");
        }
      }
    }
    d.videos.push_back(std::move(v));
  }
  if (!have_header) throw ValidationError(path.string() + ": missing dataset header record");
  return out;
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, Dataset dataset) {
  const std::string split_name = dataset.split.empty() ? "data" : dataset.split;
  for (FeatureSequence& v : dataset.videos) {
    v.feature_path = "features/" + split_name + "/" + v.id + ".wsgnf";
    write_features(dir / v.feature_path, v.features);
  }
  const std::filesystem::path manifest = dir / (split_name + ".manifest");
  write_manifest(manifest, dataset);
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest, std::vector<std::string>* warnings) {
  ManifestReadResult r = read_manifest(manifest);
  if (warnings) *warnings = r.warnings;
  const std::filesystem::path base = manifest.parent_path();
  for (FeatureSequence& v : r.dataset.videos) {
    v.features = read_features(base / v.feature_path);
    if (v.features.rows() == 0) throw ValidationError(v.id + ": feature file has no frames");
    for (const FrameSegment& s : v.segments) {
      if (s.end_frame > v.features.rows()) {
        throw ValidationError(v.id + ": segment ends at frame " + std::to_string(s.end_frame) +
                              " beyond " + std::to_string(v.features.rows()) + " frames");
      }
    }
  }
  return std::move(r.dataset);
}

}  // namespace wsgn
