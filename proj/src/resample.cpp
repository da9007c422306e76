#include "cmda/resample.hpp"

#include <algorithm>
#include <cmath>

#include "cmda/error.hpp"

namespace cmda {
namespace {

// Keys cubic kernel with a = -0.5 (Catmull-Rom).
double keys(double t) {
  t = std::fabs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

struct AxisTaps {
  int idx[4];
  double w[4];
};

// Sample positions and weights for one output index along an axis of length
// in_n resized to out_n. Half-pixel convention: src = (dst + 0.5) * scale - 0.5.
AxisTaps axis_taps(int dst, int in_n, int out_n) {
  const double scale = static_cast<double>(in_n) / out_n;
  const double src = (dst + 0.5) * scale - 0.5;
  const int base = static_cast<int>(std::floor(src)) - 1;
  AxisTaps taps;
  for (int k = 0; k < 4; ++k) {
    taps.idx[k] = std::clamp(base + k, 0, in_n - 1);
    taps.w[k] = keys(src - (base + k));
  }
  return taps;
}

}  // namespace

SliceStack slice_z(const Volume3D& vol) {
  vol.validate();
  SliceStack stack;
  stack.nx = vol.nx();
  stack.ny = vol.ny();
  stack.nz = vol.nz();
  stack.spacing = vol.spacing();
  stack.slices.reserve(static_cast<std::size_t>(vol.nz()));
  for (int k = 0; k < vol.nz(); ++k) {
    Image2D img(vol.ny(), vol.nx());
    const std::size_t plane = static_cast<std::size_t>(k) * vol.ny() * vol.nx();
    std::copy_n(vol.voxels().begin() + plane,
                static_cast<std::size_t>(vol.ny()) * vol.nx(), img.v.begin());
    stack.slices.push_back(std::move(img));
  }
  return stack;
}

Image2D resize_bicubic(const Image2D& img, int out_h, int out_w) {
  if (img.h < 1 || img.w < 1) throw ValidationError("resize_bicubic: empty input image");
  if (out_h < 1 || out_w < 1) throw ValidationError("resize_bicubic: output size must be >= 1");

  std::vector<AxisTaps> col_taps(static_cast<std::size_t>(out_w));
  for (int x = 0; x < out_w; ++x) col_taps[x] = axis_taps(x, img.w, out_w);

  // Horizontal pass, then vertical; accumulation in double so the kernel's
  // partition of unity holds well below the 1e-6 contract.
  std::vector<double> tmp(static_cast<std::size_t>(img.h) * out_w);
  for (int y = 0; y < img.h; ++y) {
    const float* row = img.v.data() + static_cast<std::size_t>(y) * img.w;
    double* trow = tmp.data() + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) {
      const AxisTaps& t = col_taps[x];
      trow[x] = row[t.idx[0]] * t.w[0] + row[t.idx[1]] * t.w[1] +
                row[t.idx[2]] * t.w[2] + row[t.idx[3]] * t.w[3];
    }
  }
  Image2D out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const AxisTaps t = axis_taps(y, img.h, out_h);
    const double* r0 = tmp.data() + static_cast<std::size_t>(t.idx[0]) * out_w;
    const double* r1 = tmp.data() + static_cast<std::size_t>(t.idx[1]) * out_w;
    const double* r2 = tmp.data() + static_cast<std::size_t>(t.idx[2]) * out_w;
    const double* r3 = tmp.data() + static_cast<std::size_t>(t.idx[3]) * out_w;
    for (int x = 0; x < out_w; ++x) {
      out.at(y, x) = static_cast<float>(r0[x] * t.w[0] + r1[x] * t.w[1] +
                                        r2[x] * t.w[2] + r3[x] * t.w[3]);
    }
  }
  return out;
}

Volume3D reassemble(const SliceStack& stack, int nx, int ny, int nz, Spacing spacing,
                    Origin origin) {
  if (static_cast<int>(stack.slices.size()) != nz) {
    throw ValidationError("reassemble: stack has " + std::to_string(stack.slices.size()) +
                          " slices, target nz is " + std::to_string(nz));
  }
  Volume3D vol(nx, ny, nz, spacing, origin);
  for (int k = 0; k < nz; ++k) {
    const Image2D& src = stack.slices[static_cast<std::size_t>(k)];
    const std::size_t plane = static_cast<std::size_t>(k) * ny * nx;
    if (src.h == ny && src.w == nx) {
      std::copy(src.v.begin(), src.v.end(), vol.voxels().begin() + plane);
    } else {
      Image2D resized = resize_bicubic(src, ny, nx);
      std::copy(resized.v.begin(), resized.v.end(), vol.voxels().begin() + plane);
    }
  }
  return vol;
}

NormParams normalize(Volume3D& vol, NormMode mode) {
  vol.validate();
  NormParams params;
  params.mode = mode;
  const std::size_t n = vol.voxels().size();
  if (mode == NormMode::kMinMax) {
    auto [lo, hi] = std::minmax_element(vol.voxels().begin(), vol.voxels().end());
    params.a = *lo;
    params.b = *hi;
    if (*hi <= *lo) {
      params.degenerate = true;
      std::fill(vol.voxels().begin(), vol.voxels().end(), 0.0f);
      return params;
    }
    const float scale = 2.0f / (params.b - params.a);
    for (float& v : vol.voxels()) v = (v - params.a) * scale - 1.0f;
  } else {
    double sum = 0.0;
    for (float v : vol.voxels()) sum += v;
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (float v : vol.voxels()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    params.a = static_cast<float>(mean);
    params.b = static_cast<float>(sd);
    if (sd <= 0.0) {
      params.degenerate = true;
      std::fill(vol.voxels().begin(), vol.voxels().end(), 0.0f);
      return params;
    }
    const float inv = 1.0f / params.b;
    for (float& v : vol.voxels()) v = (v - params.a) * inv;
  }
  return params;
}

void denormalize(Volume3D& vol, const NormParams& params) {
  if (params.degenerate) {
    std::fill(vol.voxels().begin(), vol.voxels().end(), params.a);
    return;
  }
  if (params.mode == NormMode::kMinMax) {
    const float scale = 0.5f * (params.b - params.a);
    for (float& v : vol.voxels()) v = (v + 1.0f) * scale + params.a;
  } else {
    for (float& v : vol.voxels()) v = v * params.b + params.a;
  }
}

std::string norm_mode_name(NormMode mode) {
  return mode == NormMode::kMinMax ? "minmax" : "zscore";
}

}  // namespace cmda
