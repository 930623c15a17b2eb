#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>
#include <limits>

#include "test_util.h"
#include "wsgn/formats.h"

using namespace wsgn;

namespace {

Matrix float_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m = testutil::random_matrix(rows, cols, rng, 3.0);
  for (double& v : m.values()) v = static_cast<float>(v);
  return m;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.values()[i]) != std::bit_cast<std::uint64_t>(b.values()[i]))
      return false;
  }
  return true;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

FeatureSequence video(const std::string& id, std::vector<double> labels,
                      std::vector<FrameSegment> segs, double fps = 5.0) {
  FeatureSequence v;
  v.id = id;
  v.feature_path = "features/" + id + ".wsgnf";
  v.labels = std::move(labels);
  v.segments = std::move(segs);
  v.fps = fps;
  return v;
}

}  // namespace

TEST_CASE("feature file round trip of a random 37x16 matrix is bitwise exact") {
  testutil::TempDir dir("formats");
  Rng rng = testutil::rng_for(1);
  const Matrix m = float_matrix(37, 16, rng);
  write_features(dir.path() / "m.wsgnf", m);
  CHECK(bitwise_equal(read_features(dir.path() / "m.wsgnf"), m));
  CHECK(std::filesystem::file_size(dir.path() / "m.wsgnf") == 6 + 8 + 37 * 16 * 4);
}

TEST_CASE("feature file layout") {
  const Matrix m{{1.0, -2.0}, {0.5, 3.0}, {0.0, 1.0}};
  const std::string bytes = encode_matrix(m, Precision::f32);
  REQUIRE(bytes.size() == 6 + 8 + 6 * 4);
  CHECK(bytes.substr(0, 6) == "WSGNF1");
  const unsigned char* u = reinterpret_cast<const unsigned char*>(bytes.data());
  CHECK(u[6] == 3);
  CHECK(u[7] == 0);
  CHECK(u[10] == 2);
  // -2.0f is 0xC0000000, little endian.
  CHECK(u[18] == 0x00);
  CHECK(u[21] == 0xC0);
  const std::string d = encode_matrix(m, Precision::f64);
  CHECK(d.substr(0, 6) == "WSGND1");
  CHECK(d.size() == 6 + 8 + 6 * 8);
}

TEST_CASE("negative zero, subnormals and extremes survive both precisions") {
  const float sub = std::numeric_limits<float>::denorm_min();
  const Matrix f{{-0.0, 0.0, sub, -sub},
                 {std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(),
                  std::numeric_limits<float>::min(), 1.0 / 3.0f}};
  std::size_t off = 0;
  Matrix m = f;
  m(1, 3) = static_cast<float>(1.0 / 3.0);
  CHECK(bitwise_equal(decode_matrix(encode_matrix(m, Precision::f32), off), m));
  CHECK(std::signbit(decode_matrix(encode_matrix(m, Precision::f32), off = 0)(0, 0)));

  const Matrix d{{-0.0, std::numeric_limits<double>::denorm_min(), -4.9e-324, 1.0 / 3.0},
                 {std::numeric_limits<double>::max(), std::numeric_limits<double>::min(), 1e-310, -1e300}};
  off = 0;
  CHECK(bitwise_equal(decode_matrix(encode_matrix(d, Precision::f64), off), d));
}

TEST_CASE("property: random round trips at random shapes") {
  Rng rng = testutil::rng_for(2);
  for (int i = 0; i < 200; ++i) {
    const Matrix m = float_matrix(testutil::uniform_size(rng, 0, 20),
                                  testutil::uniform_size(rng, 0, 20), rng);
    std::size_t off = 0;
    const std::string bytes = encode_matrix(m, Precision::f32);
    CHECK(bitwise_equal(decode_matrix(bytes, off), m));
    CHECK(off == bytes.size());
    const Matrix d = testutil::random_matrix(m.rows(), m.cols(), rng);
    off = 0;
    CHECK(bitwise_equal(decode_matrix(encode_matrix(d, Precision::f64), off), d));
  }
}

TEST_CASE("concatenated containers decode in sequence") {
  Rng rng = testutil::rng_for(3);
  const Matrix a = float_matrix(2, 3, rng), b = testutil::random_matrix(4, 1, rng);
  const std::string bytes = encode_matrix(a, Precision::f32) + encode_matrix(b, Precision::f64);
  std::size_t off = 0;
  CHECK(bitwise_equal(decode_matrix(bytes, off), a));
  CHECK(bitwise_equal(decode_matrix(bytes, off), b));
  CHECK(off == bytes.size());
}

TEST_CASE("wrong magic is a format error naming the offset") {
  std::string bytes = encode_matrix(Matrix(2, 2, 1.0), Precision::f32);
  bytes[3] = 'X';
  std::size_t off = 0;
  CHECK_THROWS_AS(decode_matrix(bytes, off), FormatError);
  const std::string msg = error_of([&] {
    std::size_t o = 0;
    decode_matrix(bytes, o);
  });
  CHECK(msg.find("magic") != std::string::npos);
  CHECK(msg.find("offset 0") != std::string::npos);
}

TEST_CASE("header declaring more data than present is a truncation error") {
  const std::string bytes = encode_matrix(Matrix(5, 4, 1.0), Precision::f32);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    CAPTURE(cut);
    const std::string msg = error_of([&] {
      std::size_t o = 0;
      decode_matrix(bytes.substr(0, cut), o);
    });
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }
  testutil::TempDir dir("formats");
  write_file(dir.path() / "short.wsgnf", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(read_features(dir.path() / "short.wsgnf"), FormatError);
  write_file(dir.path() / "long.wsgnf", bytes + "zz");
  CHECK_THROWS_AS(read_features(dir.path() / "long.wsgnf"), FormatError);
  CHECK_THROWS_AS(read_features(dir.path() / "missing.wsgnf"), FormatError);
}

TEST_CASE("shape fields that overflow the address space are rejected") {
  std::string bytes = "WSGND1";
  const std::uint32_t big = 0xffffffffu;
  bytes.append(reinterpret_cast<const char*>(&big), 4);
  bytes.append(reinterpret_cast<const char*>(&big), 4);
  std::size_t off = 0;
  CHECK_THROWS_AS(decode_matrix(bytes, off), FormatError);
}

TEST_CASE("records") {
  const auto r = parse_record("  video id=a  labels=1,2 empty= ");
  REQUIRE(r);
  CHECK(r->type == "video");
  CHECK(*r->find("id") == "a");
  CHECK(r->at("labels") == "1,2");
  CHECK(r->at("empty").empty());
  CHECK(r->find("nope") == nullptr);
  CHECK_THROWS_AS(r->at("nope"), ValidationError);
  CHECK_FALSE(parse_record("   "));
  CHECK_FALSE(parse_record("# comment"));
  CHECK_THROWS_AS(parse_record("video idxa"), ValidationError);
  CHECK_THROWS_AS(parse_record("k=v"), ValidationError);
  CHECK(parse_record(format_record(*r))->fields == r->fields);

  const std::string msg = error_of([] { parse_records("a x=1\n\nb y\n"); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(parse_records("# head\na x=1\n\nb y=2\n").size() == 2);
}

TEST_CASE("format_double is the shortest round-tripping text") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(5.0) == "5");
  CHECK(format_double(0.1) == "0.1");
  Rng rng = testutil::rng_for(4);
  for (int i = 0; i < 2000; ++i) {
    const double v = testutil::random_matrix(1, 1, rng, std::pow(10.0, (i % 40) - 20))(0, 0);
    CHECK(std::bit_cast<std::uint64_t>(parse_double(format_double(v), "v")) ==
          std::bit_cast<std::uint64_t>(v));
  }
  CHECK(std::signbit(parse_double(format_double(-0.0), "v")));
  CHECK_THROWS_AS(parse_double("1.5x", "lr"), ValidationError);
  CHECK(error_of([] { parse_double("abc", "learning_rate"); }).find("learning_rate") !=
        std::string::npos);
  CHECK(parse_uint("42", "n") == 42);
  CHECK_THROWS_AS(parse_uint("-1", "n"), ValidationError);
  CHECK_THROWS_AS(parse_uint("4.5", "n"), ValidationError);
}

TEST_CASE("manifest round trip preserves ids, labels, segments and fps") {
  testutil::TempDir dir("formats");
  Dataset d;
  d.split = "test";
  d.num_classes = 4;
  d.fps = 5.0;
  d.videos.push_back(video("v0", {1, 0, 1, 0}, {{0, 3, 9}, {2, 12, 20}, {0, 25, 26}}));
  d.videos.push_back(video("v1", {0, 1, 0, 0}, {{1, 0, 4}}, 2.5));
  d.videos.push_back(video("weak", {0, 0, 1, 1}, {}, 1.0 / 3.0));
  write_manifest(dir.path() / "m", d);
  const ManifestReadResult r = read_manifest(dir.path() / "m");
  CHECK(r.warnings.empty());
  CHECK(r.dataset.split == "test");
  CHECK(r.dataset.num_classes == 4);
  REQUIRE(r.dataset.videos.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.dataset.videos[i].id == d.videos[i].id);
    CHECK(r.dataset.videos[i].feature_path == d.videos[i].feature_path);
    CHECK(r.dataset.videos[i].labels == d.videos[i].labels);
    CHECK(r.dataset.videos[i].segments == d.videos[i].segments);
    CHECK(r.dataset.videos[i].fps == d.videos[i].fps);
  }
}

TEST_CASE("empty dataset writes an empty manifest and reads back empty") {
  testutil::TempDir dir("formats");
  Dataset d;
  d.split = "train";
  d.num_classes = 3;
  write_manifest(dir.path() / "m", d);
  const ManifestReadResult r = read_manifest(dir.path() / "m");
  CHECK(r.dataset.videos.empty());
  CHECK(r.dataset.num_classes == 3);
}

TEST_CASE("labelled class without a segment is a warning when segments are present") {
  testutil::TempDir dir("formats");
  Dataset d;
  d.num_classes = 3;
  d.videos.push_back(video("v", {1, 1, 0}, {{0, 0, 5}}));
  write_manifest(dir.path() / "m", d);
  const ManifestReadResult r = read_manifest(dir.path() / "m");
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("class 1") != std::string::npos);
  CHECK(r.dataset.videos.size() == 1);
}

TEST_CASE("manifest validation errors") {
  testutil::TempDir dir("formats");
  const auto read_text = [&](const std::string& text) {
    write_file(dir.path() / "m", text);
    return error_of([&] { read_manifest(dir.path() / "m"); });
  };
  const std::string head = "dataset split=x num_classes=3 fps=5\n";
  CHECK(read_text(head + "video id=a feature_path=f labels=3 segments= fps=5\n").find("label index") !=
        std::string::npos);
  CHECK(read_text(head + "video id=a feature_path=f labels=0 segments=0:5:5 fps=5\n").find("<= start") !=
        std::string::npos);
  CHECK(read_text(head + "video id=a feature_path=f labels=0 segments=0:6:5 fps=5\n").find("<= start") !=
        std::string::npos);
  CHECK(read_text(head + "video id=a feature_path=f labels=0 segments=1:0:5 fps=5\n").find("label set") !=
        std::string::npos);
  CHECK(read_text(head + "video id=a feature_path=f labels=0 segments=0:0 fps=5\n").find("malformed") !=
        std::string::npos);
  CHECK(read_text(head + "video id=a feature_path=f labels=0 segments= fps=0\n").find("fps") !=
        std::string::npos);
  CHECK(read_text("video id=a feature_path=f labels=0 segments= fps=5\n").find("header") !=
        std::string::npos);
  CHECK(read_text(head + "clip id=a\n").find("unknown record") != std::string::npos);
  CHECK(read_text(head + "video id=a labels=0 segments= fps=5\n").find("feature_path") !=
        std::string::npos);
}

TEST_CASE("save_dataset and load_dataset round trip features and segments") {
  testutil::TempDir dir("formats");
  SynthConfig c;
  c.train_videos = 4;
  c.test_videos = 2;
  const SplitPair d = generate(c);
  const auto path = save_dataset(dir.path(), d.train);
  CHECK(path == dir.path() / "train.manifest");
  const Dataset back = load_dataset(path);
  REQUIRE(back.videos.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(bitwise_equal(back.videos[i].features, d.train.videos[i].features));
    CHECK(back.videos[i].segments == d.train.videos[i].segments);
    CHECK(back.videos[i].labels == d.train.videos[i].labels);
  }
}

TEST_CASE("segments beyond the feature length are rejected on load") {
  testutil::TempDir dir("formats");
  write_features(dir.path() / "f.wsgnf", Matrix(10, 2, 0.0));
  write_file(dir.path() / "m", "dataset split=x num_classes=2 fps=5\n"
                               "video id=a feature_path=f.wsgnf labels=0 segments=0:5:11 fps=5\n");
  CHECK(error_of([&] { load_dataset(dir.path() / "m"); }).find("beyond 10 frames") !=
        std::string::npos);
}
