#include "cmda/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmda/error.hpp"
#include "cmda/rng.hpp"
#include "support/approx.hpp"
#include "doctest.h"

using namespace cmda;

namespace {

double keys_ref(double t) {
  t = std::fabs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// Dense 16-tap reference, no separability assumption.
Image2D oracle_resize(const Image2D& in, int oh, int ow) {
  Image2D out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) * static_cast<double>(in.h) / oh - 0.5;
    const int by = static_cast<int>(std::floor(sy)) - 1;
    for (int x = 0; x < ow; ++x) {
      const double sx = (x + 0.5) * static_cast<double>(in.w) / ow - 0.5;
      const int bx = static_cast<int>(std::floor(sx)) - 1;
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        const int iy = std::clamp(by + j, 0, in.h - 1);
        for (int i = 0; i < 4; ++i) {
          const int ix = std::clamp(bx + i, 0, in.w - 1);
          acc += keys_ref(sy - (by + j)) * keys_ref(sx - (bx + i)) * in.at(iy, ix);
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

Volume3D random_volume(Rng& rng, int nx, int ny, int nz) {
  Volume3D v(nx, ny, nz);
  for (float& x : v.voxels()) x = static_cast<float>(rng.uniform() * 10.0 - 5.0);
  return v;
}

}  // namespace

TEST_CASE("slice_z splits planes in index order") {
  Volume3D v(4, 4, 3);
  for (std::size_t i = 0; i < v.voxels().size(); ++i) v.voxels()[i] = static_cast<float>(i);
  SliceStack stack = slice_z(v);
  REQUIRE(stack.slices.size() == 3);
  CHECK(stack.nx == 4);
  CHECK(stack.ny == 4);
  CHECK(stack.nz == 3);
  for (int k = 0; k < 3; ++k) {
    const Image2D& s = stack.slices[k];
    REQUIRE(s.h == 4);
    REQUIRE(s.w == 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(s.at(y, x) == v.at(x, y, k));
  }
}

TEST_CASE("slice_z handles single-slice volumes") {
  Volume3D v(4, 4, 1);
  for (std::size_t i = 0; i < v.voxels().size(); ++i) v.voxels()[i] = static_cast<float>(i) * 0.5f;
  SliceStack stack = slice_z(v);
  REQUIRE(stack.slices.size() == 1);
  CHECK(std::equal(stack.slices[0].v.begin(), stack.slices[0].v.end(), v.voxels().begin()));
}

TEST_CASE("slice_z then reassemble is the identity at equal dims") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int nx = rng.uniform_int(1, 12);
    const int ny = rng.uniform_int(1, 12);
    const int nz = rng.uniform_int(1, 6);
    Volume3D v = random_volume(rng, nx, ny, nz);
    v.set_spacing({1.0f, 1.25f, 2.0f});
    Volume3D back = reassemble(slice_z(v), nx, ny, nz, v.spacing(), v.origin());
    CHECK(back == v);
  }
}

TEST_CASE("reassemble rejects stack/nz mismatch") {
  SliceStack stack;
  stack.slices.assign(2, Image2D(8, 8));
  CHECK_THROWS_AS(reassemble(stack, 8, 8, 3, Spacing{}), ValidationError);
}

TEST_CASE("reassemble upsamples slices with the same bicubic kernel") {
  Rng rng(12);
  SliceStack stack;
  for (int k = 0; k < 3; ++k) {
    Image2D s(32, 32);
    for (float& x : s.v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    stack.slices.push_back(s);
  }
  Volume3D vol = reassemble(stack, 64, 64, 3, Spacing{});
  for (int k = 0; k < 3; ++k) {
    Image2D expect = resize_bicubic(stack.slices[k], 64, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        CHECK_NEAR(vol.at(x, y, k), expect.at(y, x), 1e-6);
  }
}

TEST_CASE("resize_bicubic preserves constant images") {
  Image2D img(5, 7);
  std::fill(img.v.begin(), img.v.end(), 3.25f);
  for (auto [oh, ow] : {std::pair{3, 3}, {11, 13}, {5, 7}, {1, 1}}) {
    Image2D out = resize_bicubic(img, oh, ow);
    for (float v : out.v) CHECK_NEAR(v, 3.25f, 1e-6);
  }
}

TEST_CASE("resize_bicubic at identical size is the identity") {
  Rng rng(13);
  Image2D img(9, 6);
  for (float& v : img.v) v = static_cast<float>(rng.uniform());
  Image2D out = resize_bicubic(img, 9, 6);
  CHECK(out.v == img.v);
}

TEST_CASE("resize_bicubic reproduces a linear ramp away from edges") {
  Image2D img(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(y, x) = static_cast<float>(x);
  Image2D out = resize_bicubic(img, 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 3; x <= 12; ++x) {
      const double expect = (x + 0.5) * 0.5 - 0.5;
      CHECK_NEAR(out.at(y, x), expect, 1e-6);
    }
  }
}

TEST_CASE("resize_bicubic matches the dense convolution oracle") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const int ih = rng.uniform_int(1, 24);
    const int iw = rng.uniform_int(1, 24);
    int oh = rng.uniform_int(1, 24);
    int ow = rng.uniform_int(1, 24);
    if (trial % 10 == 0) {
      oh = ih;
      ow = iw;
    }
    Image2D img(ih, iw);
    for (float& v : img.v) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    Image2D got = resize_bicubic(img, oh, ow);
    Image2D want = oracle_resize(img, oh, ow);
    for (std::size_t i = 0; i < got.v.size(); ++i)
      CHECK_NEAR(got.v[i], want.v[i], 1e-6);
  }
}

TEST_CASE("resize_bicubic validates output size") {
  CHECK_THROWS_AS(resize_bicubic(Image2D(4, 4), 0, 4), ValidationError);
  CHECK_THROWS_AS(resize_bicubic(Image2D(4, 4), 4, -1), ValidationError);
}

TEST_CASE("minmax normalization maps endpoints to -1 and 1") {
  Volume3D v(2, 2, 1);
  v.voxels() = {2.0f, 3.0f, 5.0f, 6.0f};
  NormParams p = normalize(v, NormMode::kMinMax);
  CHECK(p.a == 2.0f);
  CHECK(p.b == 6.0f);
  CHECK_FALSE(p.degenerate);
  CHECK(v.voxels().front() == doctest::Approx(-1.0f));
  CHECK(v.voxels().back() == doctest::Approx(1.0f));
  for (float x : v.voxels()) {
    CHECK(x >= -1.0f);
    CHECK(x <= 1.0f);
  }
}

TEST_CASE("constant volumes normalize to zero and carry the degenerate flag") {
  for (NormMode mode : {NormMode::kMinMax, NormMode::kZScore}) {
    CAPTURE(norm_mode_name(mode));
    Volume3D v(3, 3, 2);
    std::fill(v.voxels().begin(), v.voxels().end(), 4.5f);
    NormParams p = normalize(v, mode);
    CHECK(p.degenerate);
    for (float x : v.voxels()) CHECK(x == 0.0f);
    denormalize(v, p);
    for (float x : v.voxels()) CHECK(x == 4.5f);
  }
}

TEST_CASE("normalization round-trips within 1e-6") {
  Rng rng(15);
  for (NormMode mode : {NormMode::kMinMax, NormMode::kZScore}) {
    CAPTURE(norm_mode_name(mode));
    Volume3D v = random_volume(rng, 6, 5, 4);
    Volume3D orig = v;
    NormParams p = normalize(v, mode);
    denormalize(v, p);
    for (std::size_t i = 0; i < v.voxels().size(); ++i)
      CHECK_NEAR(v.voxels()[i], orig.voxels()[i], 1e-6);
  }
}

TEST_CASE("zscore normalization centers and scales") {
  Rng rng(16);
  Volume3D v = random_volume(rng, 8, 8, 4);
  normalize(v, NormMode::kZScore);
  double sum = 0.0, sq = 0.0;
  for (float x : v.voxels()) {
    sum += x;
    sq += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(v.voxels().size());
  CHECK_NEAR(sum / n, 0.0, 1e-5);
  CHECK_NEAR(sq / n, 1.0, 1e-4);
}
