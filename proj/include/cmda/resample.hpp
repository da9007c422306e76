#pragma once

#include <string>
#include <vector>

#include "cmda/volume.hpp"

namespace cmda {

// Row-major 2D image, v[y * w + x].
struct Image2D {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Image2D() = default;
  Image2D(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0.0f) {}

  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Ordered z-slices of a volume plus the grid they came from.
struct SliceStack {
  std::vector<Image2D> slices;
  int nx = 0;
  int ny = 0;
  int nz = 0;
  Spacing spacing;
};

SliceStack slice_z(const Volume3D& vol);

// Cubic convolution (Keys kernel, a = -0.5) with half-pixel center alignment
// and clamped edges. Output size may be larger, smaller, or equal.
Image2D resize_bicubic(const Image2D& img, int out_h, int out_w);

// Stacks slices back into a volume with the given grid, resizing each slice
// to nx x ny when sizes differ. Stack length must equal nz.
Volume3D reassemble(const SliceStack& stack, int nx, int ny, int nz,
                    Spacing spacing, Origin origin = {});

enum class NormMode { kMinMax, kZScore };

struct NormParams {
  NormMode mode = NormMode::kMinMax;
  float a = 0.0f;  // min or mean
  float b = 0.0f;  // max or std
  bool degenerate = false;
};

// minmax: [min,max] -> [-1,1]; zscore: mean 0, std 1. Constant input maps to
// all-zeros with the degenerate flag set. Modifies the volume in place.
NormParams normalize(Volume3D& vol, NormMode mode);
void denormalize(Volume3D& vol, const NormParams& params);

std::string norm_mode_name(NormMode mode);

}  // namespace cmda
