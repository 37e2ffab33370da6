#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "s2m/core/rng.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/io/tiff.hpp"

using namespace s2m;
namespace fs = std::filesystem;

namespace {
fs::path tmpdir() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / "s2m-tiff-tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}
}  // namespace

TEST_CASE("float TIFF round trip is bit exact") {
  Rng rng(1);
  Field<float> f({13, 17});
  for (Index i = 0; i < f.size(); ++i) f.v[i] = static_cast<float>(rng.normal());
  const auto path = tmpdir() / "f32.tif";
  io::write_tiff(path, f);
  const auto back = io::read_tiff_float(path);
  REQUIRE(back.shape == f.shape);
  CHECK((back.v == f.v).all());
}

TEST_CASE("label TIFF round trip and range validation") {
  LabelMask m({9, 11});
  Rng rng(2);
  for (Index i = 0; i < m.size(); ++i) m.labels[i] = static_cast<std::int32_t>(rng.uniform_int(0, 65535));
  const auto path = tmpdir() / "u16.tif";
  io::write_tiff(path, m);
  const auto back = io::read_tiff_labels(path);
  REQUIRE(back.shape == m.shape);
  CHECK((back.labels == m.labels).all());

  m.labels[0] = 70000;
  CHECK_THROWS_AS(io::write_tiff(tmpdir() / "bad.tif", m), ValidationError);
}

TEST_CASE("rank-3 fields round trip as multi-page TIFF") {
  Rng rng(3);
  Field<float> f({4, 6, 5});
  for (Index i = 0; i < f.size(); ++i) f.v[i] = static_cast<float>(rng.uniform());
  const auto path = tmpdir() / "vol.tif";
  io::write_tiff(path, f);
  const auto info = io::probe_tiff(path);
  CHECK(info.shape == Shape{4, 6, 5});
  CHECK(info.bits == 32);
  CHECK(info.sample_format == 3);
  const auto back = io::read_tiff_float(path);
  CHECK((back.v == f.v).all());

  LabelMask m({3, 4, 4});
  for (Index i = 0; i < m.size(); ++i) m.labels[i] = static_cast<std::int32_t>(i % 7);
  io::write_tiff(tmpdir() / "vol16.tif", m);
  const auto mback = io::read_tiff_labels(tmpdir() / "vol16.tif");
  CHECK(mback.shape == m.shape);
  CHECK((mback.labels == m.labels).all());
}

TEST_CASE("unsigned images rescale to [0,1] when read as float") {
  LabelMask m({2, 2});
  m.labels[0] = 0;
  m.labels[1] = 65535;
  m.labels[2] = 32768;
  m.labels[3] = 1;
  const auto path = tmpdir() / "scale.tif";
  io::write_tiff(path, m);
  const auto f = io::read_tiff_float(path);
  CHECK(f.v[0] == doctest::Approx(0.0));
  CHECK(f.v[1] == doctest::Approx(1.0));
  CHECK(f.v[2] == doctest::Approx(32768.0 / 65535.0));
}

namespace {
// Hand-built big-endian single-strip 8-bit TIFF, 2x2.
std::string build_be_u8() {
  std::string s;
  auto u16 = [&](std::uint16_t v) {
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v & 0xff));
  };
  auto u32 = [&](std::uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
  };
  s += "MM";
  u16(42);
  u32(12);  // IFD offset: after header + 4 pixel bytes
  s.push_back(0);
  s.push_back(64);
  s.push_back(static_cast<char>(128));
  s.push_back(static_cast<char>(255));
  u16(8);  // entries
  auto entry = [&](std::uint16_t tag, std::uint16_t type, std::uint32_t count, std::uint32_t value) {
    u16(tag);
    u16(type);
    u32(count);
    if (type == 3) {
      u16(static_cast<std::uint16_t>(value));
      u16(0);
    } else {
      u32(value);
    }
  };
  entry(256, 4, 1, 2);   // width
  entry(257, 4, 1, 2);   // height
  entry(258, 3, 1, 8);   // bits
  entry(259, 3, 1, 1);   // no compression
  entry(273, 4, 1, 8);   // strip offset
  entry(277, 3, 1, 1);   // samples per pixel
  entry(278, 4, 1, 2);   // rows per strip
  entry(279, 4, 1, 4);   // strip byte count
  u32(0);                // next IFD
  return s;
}
}  // namespace

TEST_CASE("big-endian files read correctly") {
  const auto path = tmpdir() / "be.tif";
  io::atomic_write_file(path, build_be_u8());
  const auto m = io::read_tiff_labels(path);
  REQUIRE(m.shape == Shape{2, 2});
  CHECK(m.labels[0] == 0);
  CHECK(m.labels[1] == 64);
  CHECK(m.labels[2] == 128);
  CHECK(m.labels[3] == 255);
  const auto f = io::read_tiff_float(path);
  CHECK(f.v[3] == doctest::Approx(1.0));
}

TEST_CASE("corrupt and unsupported files are reported") {
  const auto garbage = tmpdir() / "garbage.tif";
  io::atomic_write_file(garbage, "this is not a tiff file");
  CHECK_THROWS_AS(io::read_tiff_float(garbage), RuntimeError);

  const auto truncated = tmpdir() / "trunc.tif";
  std::string be = build_be_u8();
  io::atomic_write_file(truncated, be.substr(0, 20));
  CHECK_THROWS_AS(io::read_tiff_float(truncated), RuntimeError);

  CHECK_THROWS_AS(io::read_tiff_float(tmpdir() / "missing.tif"), RuntimeError);

  // float files cannot be read as labels
  Field<float> f({4, 4});
  f.v.setConstant(0.5f);
  io::write_tiff(tmpdir() / "float.tif", f);
  CHECK_THROWS_AS(io::read_tiff_labels(tmpdir() / "float.tif"), RuntimeError);
}

TEST_CASE("written TIFFs are byte-stable") {
  Field<float> f({8, 8});
  for (Index i = 0; i < f.size(); ++i) f.v[i] = static_cast<float>(i) * 0.25f;
  io::write_tiff(tmpdir() / "s1.tif", f);
  io::write_tiff(tmpdir() / "s2.tif", f);
  CHECK(io::read_file(tmpdir() / "s1.tif") == io::read_file(tmpdir() / "s2.tif"));
}
