#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "volseg/nifti.hpp"
#include "volseg/volume.hpp"

using namespace volseg;
namespace fs = std::filesystem;

namespace {

PhantomSpec small_spec(std::uint64_t seed = 1) {
  PhantomSpec s;
  s.extents = {16, 16, 16};
  s.radius = {2.0, 3.0};
  s.seed = seed;
  return s;
}

// A header laid out by hand: sizeof_hdr, dim, datatype, bitpix, pixdim,
// vox_offset, scl_slope and magic at their NIfTI-1 byte offsets.
std::vector<char> handmade_header(std::int16_t datatype, std::int16_t bitpix, const char* magic,
                                  std::initializer_list<std::int16_t> dims) {
  std::vector<char> h(352, 0);
  auto put = [&](std::size_t off, auto v) { std::memcpy(h.data() + off, &v, sizeof(v)); };
  put(0, std::int32_t{348});
  put(40, static_cast<std::int16_t>(dims.size()));
  std::size_t i = 0;
  for (auto d : dims) put(42 + 2 * i++, d);
  put(70, datatype);
  put(72, bitpix);
  for (int k = 0; k < 4; ++k) put(76 + 4 * k, 1.0f);
  put(108, 352.0f);
  std::memcpy(h.data() + 344, magic, 4);
  return h;
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("phantom: shapes, labels and determinism") {
  auto s = generate_phantom(small_spec());
  CHECK(s.image.shape() == Shape{4, 16, 16, 16});
  CHECK(s.label.size() == 4096u);
  check_sample(s, 2);
  auto again = generate_phantom(small_spec());
  CHECK(std::memcmp(s.image.data().data(), again.image.data().data(), s.image.data().size_bytes()) == 0);
  CHECK(s.label == again.label);
  auto other = generate_phantom(small_spec(2));
  CHECK(s.label != other.label);
}

TEST_CASE("phantom: no tumors gives an all-zero label") {
  auto spec = small_spec();
  spec.tumor_count = {0, 0};
  auto s = generate_phantom(spec);
  for (auto v : s.label) CHECK(v == 0);
}

TEST_CASE("phantom: centered sphere matches voxel enumeration") {
  PhantomSpec spec;
  spec.noise_sigma = 0.0;
  spec.lesions = std::vector<Lesion>{{{16.0, 16.0, 16.0}, {4.0, 4.0, 4.0}, 1}};
  auto s = generate_phantom(spec);
  std::int64_t expected = 0;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double d2 = (z - 16.0) * (z - 16.0) + (y - 16.0) * (y - 16.0) + (x - 16.0) * (x - 16.0);
        expected += d2 <= 16.0;
      }
  std::int64_t positive = 0;
  for (auto v : s.label) positive += v == 1;
  CHECK(positive == expected);
  // Without noise every lesion voxel of one modality carries the same value.
  std::set<float> lesion_values;
  for (std::int64_t i = 0; i < 32768; ++i) {
    if (s.label[i]) lesion_values.insert(s.image.data()[i]);
  }
  CHECK(lesion_values.size() == 1u);
}

TEST_CASE("phantom: multi-class labels and errors") {
  auto spec = small_spec(5);
  spec.num_classes = 5;
  spec.tumor_count = {4, 6};
  auto s = generate_phantom(spec);
  check_sample(s, 5);
  CHECK_THROWS_AS(check_sample(s, 2), ValueError);

  auto bad = small_spec();
  bad.radius = {2.0, 9.0};
  CHECK_THROWS_WITH_AS(generate_phantom(bad), doctest::Contains("infeasible"), ConfigError);
  bad = small_spec();
  bad.tumor_count = {3, 1};
  CHECK_THROWS_AS(generate_phantom(bad), ConfigError);
}

TEST_CASE("phantom set: per-sample seeds") {
  auto set = generate_phantom_set(small_spec(), 3, "p");
  REQUIRE(set.size() == 3u);
  CHECK(set[0].id == "p0");
  CHECK(set[0].label != set[1].label);
  auto one = small_spec();
  one.seed = sample_seed(1, 2);
  CHECK(generate_phantom(one).label == set[2].label);
}

TEST_CASE("normalize") {
  Tensor<float> constant(Shape{1, 2, 2, 2}, 3.0f);
  const auto zc = normalize(constant, NormMethod::zscore);
  for (auto v : zc.data()) CHECK(v == 0.0f);
  Tensor<float> two(Shape{1, 2}, std::vector<float>{2.0f, 4.0f});
  auto mm = normalize(two, NormMethod::minmax);
  CHECK(mm.data()[0] == 0.0f);
  CHECK(mm.data()[1] == 1.0f);

  auto s = generate_phantom(small_spec());
  auto z = normalize(s.image, NormMethod::zscore);
  for (int c = 0; c < 4; ++c) {
    double sum = 0.0, sq = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < 4096; ++i) {
      const float raw = s.image.data()[c * 4096 + i];
      const float v = z.data()[c * 4096 + i];
      if (raw == 0.0f) {
        CHECK(v == 0.0f);
        continue;
      }
      sum += v;
      sq += v * v;
      ++n;
    }
    CHECK(std::abs(sum / n) < 1e-4);
    CHECK(std::abs(sq / n - 1.0) < 1e-3);
  }
}

TEST_CASE("crop_or_pad") {
  auto s = generate_phantom(small_spec());
  auto same = crop_or_pad(s, {16, 16, 16});
  CHECK(helpers::values(same.image) == helpers::values(s.image));

  VolumeSample five;
  five.id = "five";
  std::vector<float> v(125);
  for (int i = 0; i < 125; ++i) v[i] = static_cast<float>(i + 1);
  five.image = Tensor<float>(Shape{1, 5, 5, 5}, v);
  five.label.assign(125, 1);
  auto padded = crop_or_pad(five, {8, 5, 5});
  CHECK(padded.image.shape() == Shape{1, 8, 5, 5});
  // Low side gets one plane, high side two.
  CHECK(padded.image.data()[0] == 0.0f);
  CHECK(padded.image.data()[25] == 1.0f);
  CHECK(padded.image.data()[6 * 25 - 1] == 125.0f);
  CHECK(padded.image.data()[6 * 25] == 0.0f);
  CHECK(padded.label[0] == 0);
  CHECK(padded.label[25] == 1);

  // Crop then pad back keeps the retained region and zeroes the rest.
  auto cropped = crop_or_pad(s, {10, 12, 16});
  auto back = crop_or_pad(cropped, {16, 16, 16});
  for (int c = 0; c < 4; ++c)
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const auto i = ((c * 16 + z) * 16 + y) * 16 + x;
          const bool kept = z >= 3 && z < 13 && y >= 2 && y < 14;
          CHECK(back.image.data()[i] == (kept ? s.image.data()[i] : 0.0f));
          if (c == 0) CHECK(back.label[i] == (kept ? s.label[i] : 0));
        }
}

TEST_CASE("split_dataset") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));
  auto a = split_dataset(ids, 0.2, 7);
  CHECK(a.train.size() == 8u);
  CHECK(a.val.size() == 2u);
  std::set<std::string> all(a.train.begin(), a.train.end());
  for (const auto& v : a.val) CHECK(all.insert(v).second);
  CHECK(all.size() == 10u);
  auto b = split_dataset(ids, 0.2, 7);
  CHECK(a.val == b.val);
  CHECK_THROWS_AS(split_dataset(ids, 1.0, 7), ValueError);
}

TEST_CASE("nifti: round trip is bit-exact for every datatype") {
  const auto dir = helpers::scratch_dir("nifti_rt");
  for (auto dt : {NiftiDatatype::uint8, NiftiDatatype::int16, NiftiDatatype::float32}) {
    CAPTURE(static_cast<int>(dt));
    NiftiImage img;
    img.shape = {3, 4, 5};
    img.datatype = dt;
    img.spacing = {1.5, 0.75, 2.0};
    for (int i = 0; i < 60; ++i) {
      if (dt == NiftiDatatype::uint8) img.data.push_back(static_cast<float>((i * 37) % 256));
      if (dt == NiftiDatatype::int16) img.data.push_back(static_cast<float>((i * 997) % 60000 - 30000));
      if (dt == NiftiDatatype::float32) img.data.push_back(std::sin(static_cast<float>(i)) * 1e3f);
    }
    const auto path = dir / "rt.nii";
    write_nifti(img, path);
    auto back = read_nifti(path);
    CHECK(back.shape == img.shape);
    CHECK(back.datatype == dt);
    CHECK(back.spacing == img.spacing);
    REQUIRE(back.data.size() == img.data.size());
    CHECK(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);
    // Writing what was read reproduces the file byte for byte.
    write_nifti(back, dir / "rt2.nii");
    std::ifstream a(path, std::ios::binary), b(dir / "rt2.nii", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
  NiftiImage four;
  four.shape = {2, 2, 2, 2};
  four.data.assign(16, 1.0f);
  write_nifti(four, dir / "four.nii");
  CHECK(read_nifti(dir / "four.nii").shape == Shape{2, 2, 2, 2});
}

TEST_CASE("nifti: hand-built fixture") {
  const auto dir = helpers::scratch_dir("nifti_fixture");
  auto bytes = handmade_header(16, 32, "n+1\0", {16, 16, 16});
  std::vector<float> payload(4096);
  for (int i = 0; i < 4096; ++i) payload[i] = static_cast<float>(i) * 0.5f;
  const auto* raw = reinterpret_cast<const char*>(payload.data());
  bytes.insert(bytes.end(), raw, raw + 16384);
  REQUIRE(bytes.size() == 348u + 4u + 16384u);
  write_bytes(dir / "f.nii", bytes);
  auto img = read_nifti(dir / "f.nii");
  CHECK(img.shape == Shape{16, 16, 16});
  CHECK(img.data[4095] == 2047.5f);

  // Scaling applies on read.
  auto scaled = bytes;
  const float slope = 2.0f, inter = 1.0f;
  std::memcpy(scaled.data() + 112, &slope, 4);
  std::memcpy(scaled.data() + 116, &inter, 4);
  write_bytes(dir / "s.nii", scaled);
  CHECK(read_nifti(dir / "s.nii").data[3] == 4.0f);
}

TEST_CASE("nifti: rejected files") {
  const auto dir = helpers::scratch_dir("nifti_bad");
  auto issue_of = [](const fs::path& p) {
    try {
      read_nifti(p);
    } catch (const FormatError& e) {
      return e.issue();
    }
    FAIL("no FormatError");
    return FormatIssue::bad_header;
  };
  auto ni1 = handmade_header(16, 32, "ni1\0", {2, 2, 2});
  ni1.resize(352 + 32);
  write_bytes(dir / "ni1.nii", ni1);
  CHECK(issue_of(dir / "ni1.nii") == FormatIssue::unsupported_format);

  auto junk = handmade_header(16, 32, "abc\0", {2, 2, 2});
  write_bytes(dir / "junk.nii", junk);
  CHECK(issue_of(dir / "junk.nii") == FormatIssue::bad_magic);

  auto dbl = handmade_header(64, 64, "n+1\0", {2, 2, 2});
  dbl.resize(352 + 64);
  write_bytes(dir / "f64.nii", dbl);
  CHECK(issue_of(dir / "f64.nii") == FormatIssue::unsupported_datatype);

  auto shortfile = handmade_header(16, 32, "n+1\0", {2, 2, 2});
  shortfile.resize(352 + 20);
  write_bytes(dir / "short.nii", shortfile);
  CHECK(issue_of(dir / "short.nii") == FormatIssue::truncated);

  write_bytes(dir / "tiny.nii", std::vector<char>(100, 0));
  CHECK(issue_of(dir / "tiny.nii") == FormatIssue::truncated);

  CHECK_THROWS_AS(read_nifti(dir / "missing.nii"), IoError);
}
