#include "cmda/autodiff.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "cmda/error.hpp"

extern "C" void openblas_set_num_threads(int);

namespace cmda {

void pin_blas_threads() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

void set_blas_threads(int n) {
  if (n < 1) throw ValidationError("thread count must be >= 1");
  pin_blas_threads();
  openblas_set_num_threads(n);
}

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ValidationError(msg);
}

void gemm(bool ta, bool tb, int m, int n, int k, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a, lda, b, ldb,
              beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb,
              beta, c, ldc);
}

int out_dim_conv(int in, int k, int s, int p) {
  const int span = in + 2 * p - k;
  require(span >= 0, "conv: kernel larger than padded input");
  return span / s + 1;
}

int out_dim_tconv(int in, int k, int s, int p) {
  const int out = (in - 1) * s - 2 * p + k;
  require(out >= 1, "tconv: output dimension collapsed");
  return out;
}

// Inclusive range of output columns whose source index x*s + o lands in
// [0, w); empty when x0 > x1.
inline void col_range(int o, int s, int w, int ow, int& x0, int& x1) {
  x0 = o >= 0 ? 0 : (-o + s - 1) / s;
  x1 = w - 1 - o >= 0 ? std::min(ow - 1, (w - 1 - o) / s) : -1;
}

// Copies one kernel-offset row of an im2col matrix: out_row[oh*ow] takes
// plane[oh*s - p + kh, ow*s - p + kw], zero outside. A null plane means the
// whole source slab is out of range (depth padding in the 3D case).
template <typename T>
void gather_row(const T* plane, int h, int w, int kh, int kw, int s, int p,
                int oh, int ow, T* out_row) {
  if (plane == nullptr) {
    std::fill(out_row, out_row + static_cast<std::size_t>(oh) * ow, T(0));
    return;
  }
  const int o = kw - p;
  int x0, x1;
  col_range(o, s, w, ow, x0, x1);
  for (int y = 0; y < oh; ++y) {
    const int iy = y * s - p + kh;
    T* dst = out_row + static_cast<std::size_t>(y) * ow;
    if (iy < 0 || iy >= h || x0 > x1) {
      std::fill(dst, dst + ow, T(0));
      continue;
    }
    const T* src = plane + static_cast<std::size_t>(iy) * w;
    std::fill(dst, dst + x0, T(0));
    if (s == 1) {
      std::memcpy(dst + x0, src + o + x0,
                  static_cast<std::size_t>(x1 - x0 + 1) * sizeof(T));
    } else {
      for (int x = x0; x <= x1; ++x) dst[x] = src[x * s + o];
    }
    std::fill(dst + x1 + 1, dst + ow, T(0));
  }
}

// Adjoint of gather_row: accumulates the row back into the plane.
template <typename T>
void scatter_row(const T* row, T* plane, int h, int w, int kh, int kw, int s,
                 int p, int oh, int ow) {
  if (plane == nullptr) return;
  const int o = kw - p;
  int x0, x1;
  col_range(o, s, w, ow, x0, x1);
  if (x0 > x1) return;
  for (int y = 0; y < oh; ++y) {
    const int iy = y * s - p + kh;
    if (iy < 0 || iy >= h) continue;
    const T* src = row + static_cast<std::size_t>(y) * ow;
    T* dst = plane + static_cast<std::size_t>(iy) * w;
    if (s == 1) {
      T* d = dst + o;
      for (int x = x0; x <= x1; ++x) d[x] += src[x];
    } else {
      for (int x = x0; x <= x1; ++x) dst[x * s + o] += src[x];
    }
  }
}

template <typename T>
void im2col_2d(const T* src, int c, int h, int w, int kh, int kw, int s, int p,
               int oh, int ow, T* col) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < kh; ++y)
      for (int x = 0; x < kw; ++x, ++row)
        gather_row(src + static_cast<std::size_t>(ch) * h * w, h, w, y, x, s,
                   p, oh, ow, col + row * cols);
}

template <typename T>
void col2im_2d(const T* col, int c, int h, int w, int kh, int kw, int s, int p,
               int oh, int ow, T* dst) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < kh; ++y)
      for (int x = 0; x < kw; ++x, ++row)
        scatter_row(col + row * cols, dst + static_cast<std::size_t>(ch) * h * w,
                    h, w, y, x, s, p, oh, ow);
}

template <typename T>
T sign_of(T x) {
  if (x > T(0)) return T(1);
  if (x < T(0)) return T(-1);
  return T(0);
}

constexpr double kNormEps = 1e-5;
constexpr double kDiceEps = 1e-5;

}  // namespace

template <typename T>
Tape<T>::Tape() {
  pin_blas_threads();
  nodes_.reserve(256);
}

template <typename T>
int Tape<T>::push(Tensor<T> val, std::function<void()> back) {
  Node n;
  n.grad = Tensor<T>(val.shape());
  n.grad.fill(T(0));
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Tape<T>::input(Tensor<T> v) {
  return push(std::move(v), nullptr);
}

template <typename T>
void Tape<T>::backward(int loss) {
  require(loss >= 0 && loss < size(), "backward: bad node id");
  require(nodes_[static_cast<std::size_t>(loss)].val.numel() == 1,
          "backward: loss node is not scalar");
  mutable_grad(loss).data()[0] = T(1);
  for (int id = loss; id >= 0; --id) {
    auto& back = nodes_[static_cast<std::size_t>(id)].back;
    if (back) back();
  }
}

template <typename T>
int Tape<T>::conv2d(int x, int w, int b, int stride, int pad) {
  const Tensor<T>& xv = val(x);
  const Tensor<T>& wv = val(w);
  const Tensor<T>& bv = val(b);
  require(xv.ndim() == 4 && wv.ndim() == 4 && bv.ndim() == 1,
          "conv2d: rank mismatch");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int f = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == c, "conv2d: weight in-channels mismatch");
  require(bv.dim(0) == f, "conv2d: bias length mismatch");
  const int oh = out_dim_conv(h, kh, stride, pad);
  const int ow = out_dim_conv(ww, kw, stride, pad);
  const int ckk = c * kh * kw;
  const std::size_t sp_in = static_cast<std::size_t>(h) * ww;
  const std::size_t sp_out = static_cast<std::size_t>(oh) * ow;

  Tensor<T> out({n, f, oh, ow});
  scratch_.resize(static_cast<std::size_t>(ckk) * sp_out);
  for (int s = 0; s < n; ++s) {
    im2col_2d(xv.data() + static_cast<std::size_t>(s) * c * sp_in, c, h, ww,
              kh, kw, stride, pad, oh, ow, scratch_.data());
    T* o = out.data() + static_cast<std::size_t>(s) * f * sp_out;
    gemm(false, false, f, static_cast<int>(sp_out), ckk, wv.data(), ckk,
         scratch_.data(), static_cast<int>(sp_out), T(0), o,
         static_cast<int>(sp_out));
    for (int fc = 0; fc < f; ++fc) {
      const T beta = bv.data()[fc];
      T* row = o + static_cast<std::size_t>(fc) * sp_out;
      for (std::size_t i = 0; i < sp_out; ++i) row[i] += beta;
    }
  }

  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, w, b, id, n, c, h, ww,
                                              f, kh, kw, stride, pad, oh, ow,
                                              ckk, sp_in, sp_out] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    const Tensor<T>& wv2 = val(w);
    Tensor<T>& gx = mutable_grad(x);
    Tensor<T>& gw = mutable_grad(w);
    Tensor<T>& gb = mutable_grad(b);
    scratch_.resize(static_cast<std::size_t>(ckk) * sp_out);
    bscratch_.resize(static_cast<std::size_t>(ckk) * sp_out);
    for (int s = 0; s < n; ++s) {
      const T* go = g.data() + static_cast<std::size_t>(s) * f * sp_out;
      for (int fc = 0; fc < f; ++fc) {
        const T* row = go + static_cast<std::size_t>(fc) * sp_out;
        T acc = T(0);
        for (std::size_t i = 0; i < sp_out; ++i) acc += row[i];
        gb.data()[fc] += acc;
      }
      im2col_2d(xv2.data() + static_cast<std::size_t>(s) * c * sp_in, c, h, ww,
                kh, kw, stride, pad, oh, ow, scratch_.data());
      gemm(false, true, f, ckk, static_cast<int>(sp_out), go,
           static_cast<int>(sp_out), scratch_.data(),
           static_cast<int>(sp_out), T(1), gw.data(), ckk);
      gemm(true, false, ckk, static_cast<int>(sp_out), f, wv2.data(), ckk, go,
           static_cast<int>(sp_out), T(0), bscratch_.data(),
           static_cast<int>(sp_out));
      col2im_2d(bscratch_.data(), c, h, ww, kh, kw, stride, pad, oh, ow,
                gx.data() + static_cast<std::size_t>(s) * c * sp_in);
    }
  };
  return id;
}

template <typename T>
int Tape<T>::tconv2d(int x, int w, int b, int stride, int pad) {
  const Tensor<T>& xv = val(x);
  const Tensor<T>& wv = val(w);
  const Tensor<T>& bv = val(b);
  require(xv.ndim() == 4 && wv.ndim() == 4 && bv.ndim() == 1,
          "tconv2d: rank mismatch");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int f = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(0) == c, "tconv2d: weight in-channels mismatch");
  require(bv.dim(0) == f, "tconv2d: bias length mismatch");
  const int oh = out_dim_tconv(h, kh, stride, pad);
  const int ow = out_dim_tconv(ww, kw, stride, pad);
  const int fkk = f * kh * kw;
  const std::size_t sp_in = static_cast<std::size_t>(h) * ww;
  const std::size_t sp_out = static_cast<std::size_t>(oh) * ow;

  Tensor<T> out({n, f, oh, ow});
  out.fill(T(0));
  scratch_.resize(static_cast<std::size_t>(fkk) * sp_in);
  for (int s = 0; s < n; ++s) {
    const T* xs = xv.data() + static_cast<std::size_t>(s) * c * sp_in;
    gemm(true, false, fkk, static_cast<int>(sp_in), c, wv.data(), fkk, xs,
         static_cast<int>(sp_in), T(0), scratch_.data(),
         static_cast<int>(sp_in));
    T* o = out.data() + static_cast<std::size_t>(s) * f * sp_out;
    col2im_2d(scratch_.data(), f, oh, ow, kh, kw, stride, pad, h, ww, o);
    for (int fc = 0; fc < f; ++fc) {
      const T beta = bv.data()[fc];
      T* row = o + static_cast<std::size_t>(fc) * sp_out;
      for (std::size_t i = 0; i < sp_out; ++i) row[i] += beta;
    }
  }

  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, w, b, id, n, c, h, ww,
                                              f, kh, kw, stride, pad, oh, ow,
                                              fkk, sp_in, sp_out] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    const Tensor<T>& wv2 = val(w);
    Tensor<T>& gx = mutable_grad(x);
    Tensor<T>& gw = mutable_grad(w);
    Tensor<T>& gb = mutable_grad(b);
    bscratch_.resize(static_cast<std::size_t>(fkk) * sp_in);
    for (int s = 0; s < n; ++s) {
      const T* go = g.data() + static_cast<std::size_t>(s) * f * sp_out;
      for (int fc = 0; fc < f; ++fc) {
        const T* row = go + static_cast<std::size_t>(fc) * sp_out;
        T acc = T(0);
        for (std::size_t i = 0; i < sp_out; ++i) acc += row[i];
        gb.data()[fc] += acc;
      }
      im2col_2d(go, f, oh, ow, kh, kw, stride, pad, h, ww, bscratch_.data());
      gemm(false, false, c, static_cast<int>(sp_in), fkk, wv2.data(), fkk,
           bscratch_.data(), static_cast<int>(sp_in), T(1),
           gx.data() + static_cast<std::size_t>(s) * c * sp_in,
           static_cast<int>(sp_in));
      gemm(false, true, c, fkk, static_cast<int>(sp_in),
           xv2.data() + static_cast<std::size_t>(s) * c * sp_in,
           static_cast<int>(sp_in), bscratch_.data(),
           static_cast<int>(sp_in), T(1), gw.data(), fkk);
    }
  };
  return id;
}

template <typename T>
int Tape<T>::conv3d(int x, int w, int b, int stride, int pad) {
  const Tensor<T>& xv = val(x);
  const Tensor<T>& wv = val(w);
  const Tensor<T>& bv = val(b);
  require(xv.ndim() == 4 && wv.ndim() == 5 && bv.ndim() == 1,
          "conv3d: rank mismatch");
  const int c = xv.dim(0), d = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int f = wv.dim(0), kd = wv.dim(2), kh = wv.dim(3), kw = wv.dim(4);
  require(wv.dim(1) == c, "conv3d: weight in-channels mismatch");
  require(bv.dim(0) == f, "conv3d: bias length mismatch");
  const int od = out_dim_conv(d, kd, stride, pad);
  const int oh = out_dim_conv(h, kh, stride, pad);
  const int ow = out_dim_conv(ww, kw, stride, pad);
  const int ckkk = c * kd * kh * kw;
  const std::size_t sp_in = static_cast<std::size_t>(h) * ww;
  const std::size_t sp_out = static_cast<std::size_t>(oh) * ow;
  const std::size_t vol_out = static_cast<std::size_t>(od) * sp_out;

  // One output-depth slab at a time keeps the im2col buffer small.
  auto build_cols = [=](const T* src, int z, T* col) {
    std::size_t row = 0;
    const std::size_t cols = sp_out;
    for (int ch = 0; ch < c; ++ch)
      for (int zk = 0; zk < kd; ++zk) {
        const int iz = z * stride - pad + zk;
        const T* plane =
            (iz >= 0 && iz < d)
                ? src + (static_cast<std::size_t>(ch) * d + iz) * sp_in
                : nullptr;
        for (int y = 0; y < kh; ++y)
          for (int xk = 0; xk < kw; ++xk, ++row)
            gather_row(plane, h, ww, y, xk, stride, pad, oh, ow,
                       col + row * cols);
      }
  };

  Tensor<T> out({f, od, oh, ow});
  scratch_.resize(static_cast<std::size_t>(ckkk) * sp_out);
  for (int z = 0; z < od; ++z) {
    build_cols(xv.data(), z, scratch_.data());
    gemm(false, false, f, static_cast<int>(sp_out), ckkk, wv.data(), ckkk,
         scratch_.data(), static_cast<int>(sp_out), T(0),
         out.data() + static_cast<std::size_t>(z) * sp_out,
         static_cast<int>(vol_out));
  }
  for (int fc = 0; fc < f; ++fc) {
    const T beta = bv.data()[fc];
    T* chan = out.data() + static_cast<std::size_t>(fc) * vol_out;
    for (std::size_t i = 0; i < vol_out; ++i) chan[i] += beta;
  }

  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, w, b, id, c, d, h, ww,
                                              f, kd, kh, kw, stride, pad, od,
                                              oh, ow, ckkk, sp_in, sp_out,
                                              vol_out, build_cols] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    const Tensor<T>& wv2 = val(w);
    Tensor<T>& gx = mutable_grad(x);
    Tensor<T>& gw = mutable_grad(w);
    Tensor<T>& gb = mutable_grad(b);
    for (int fc = 0; fc < f; ++fc) {
      const T* chan = g.data() + static_cast<std::size_t>(fc) * vol_out;
      T acc = T(0);
      for (std::size_t i = 0; i < vol_out; ++i) acc += chan[i];
      gb.data()[fc] += acc;
    }
    scratch_.resize(static_cast<std::size_t>(ckkk) * sp_out);
    bscratch_.resize(static_cast<std::size_t>(ckkk) * sp_out);
    for (int z = 0; z < od; ++z) {
      const T* gz = g.data() + static_cast<std::size_t>(z) * sp_out;
      build_cols(xv2.data(), z, scratch_.data());
      gemm(false, true, f, ckkk, static_cast<int>(sp_out), gz,
           static_cast<int>(vol_out), scratch_.data(),
           static_cast<int>(sp_out), T(1), gw.data(), ckkk);
      gemm(true, false, ckkk, static_cast<int>(sp_out), f, wv2.data(), ckkk,
           gz, static_cast<int>(vol_out), T(0), bscratch_.data(),
           static_cast<int>(sp_out));
      std::size_t row = 0;
      for (int ch = 0; ch < c; ++ch)
        for (int zk = 0; zk < kd; ++zk) {
          const int iz = z * stride - pad + zk;
          T* plane =
              (iz >= 0 && iz < d)
                  ? gx.data() + (static_cast<std::size_t>(ch) * d + iz) * sp_in
                  : nullptr;
          for (int y = 0; y < kh; ++y)
            for (int xk = 0; xk < kw; ++xk, ++row)
              scatter_row(bscratch_.data() + row * sp_out, plane, h, ww, y, xk,
                          stride, pad, oh, ow);
        }
    }
  };
  return id;
}

template <typename T>
int Tape<T>::tconv3d(int x, int w, int b, int stride, int pad) {
  const Tensor<T>& xv = val(x);
  const Tensor<T>& wv = val(w);
  const Tensor<T>& bv = val(b);
  require(xv.ndim() == 4 && wv.ndim() == 5 && bv.ndim() == 1,
          "tconv3d: rank mismatch");
  const int c = xv.dim(0), d = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int f = wv.dim(1), kd = wv.dim(2), kh = wv.dim(3), kw = wv.dim(4);
  require(wv.dim(0) == c, "tconv3d: weight in-channels mismatch");
  require(bv.dim(0) == f, "tconv3d: bias length mismatch");
  const int od = out_dim_tconv(d, kd, stride, pad);
  const int oh = out_dim_tconv(h, kh, stride, pad);
  const int ow = out_dim_tconv(ww, kw, stride, pad);
  const int fkkk = f * kd * kh * kw;
  const std::size_t sp_in = static_cast<std::size_t>(h) * ww;
  const std::size_t sp_out = static_cast<std::size_t>(oh) * ow;
  const std::size_t vol_in = static_cast<std::size_t>(d) * sp_in;
  const std::size_t vol_out = static_cast<std::size_t>(od) * sp_out;

  Tensor<T> out({f, od, oh, ow});
  out.fill(T(0));
  scratch_.resize(static_cast<std::size_t>(fkkk) * sp_in);
  for (int z = 0; z < d; ++z) {
    gemm(true, false, fkkk, static_cast<int>(sp_in), c, wv.data(), fkkk,
         xv.data() + static_cast<std::size_t>(z) * sp_in,
         static_cast<int>(vol_in), T(0), scratch_.data(),
         static_cast<int>(sp_in));
    std::size_t row = 0;
    for (int fc = 0; fc < f; ++fc)
      for (int zk = 0; zk < kd; ++zk) {
        const int oz = z * stride - pad + zk;
        T* plane =
            (oz >= 0 && oz < od)
                ? out.data() + (static_cast<std::size_t>(fc) * od + oz) * sp_out
                : nullptr;
        for (int y = 0; y < kh; ++y)
          for (int xk = 0; xk < kw; ++xk, ++row)
            scatter_row(scratch_.data() + row * sp_in, plane, oh, ow, y, xk,
                        stride, pad, h, ww);
      }
  }
  for (int fc = 0; fc < f; ++fc) {
    const T beta = bv.data()[fc];
    T* chan = out.data() + static_cast<std::size_t>(fc) * vol_out;
    for (std::size_t i = 0; i < vol_out; ++i) chan[i] += beta;
  }

  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, w, b, id, c, d, h, ww,
                                              f, kd, kh, kw, stride, pad, od,
                                              oh, ow, fkkk, sp_in, sp_out,
                                              vol_in, vol_out] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    const Tensor<T>& wv2 = val(w);
    Tensor<T>& gx = mutable_grad(x);
    Tensor<T>& gw = mutable_grad(w);
    Tensor<T>& gb = mutable_grad(b);
    for (int fc = 0; fc < f; ++fc) {
      const T* chan = g.data() + static_cast<std::size_t>(fc) * vol_out;
      T acc = T(0);
      for (std::size_t i = 0; i < vol_out; ++i) acc += chan[i];
      gb.data()[fc] += acc;
    }
    bscratch_.resize(static_cast<std::size_t>(fkkk) * sp_in);
    for (int z = 0; z < d; ++z) {
      std::size_t row = 0;
      for (int fc = 0; fc < f; ++fc)
        for (int zk = 0; zk < kd; ++zk) {
          const int oz = z * stride - pad + zk;
          const T* plane =
              (oz >= 0 && oz < od)
                  ? g.data() + (static_cast<std::size_t>(fc) * od + oz) * sp_out
                  : nullptr;
          for (int y = 0; y < kh; ++y)
            for (int xk = 0; xk < kw; ++xk, ++row)
              gather_row(plane, oh, ow, y, xk, stride, pad, h, ww,
                         bscratch_.data() + row * sp_in);
        }
      gemm(false, false, c, static_cast<int>(sp_in), fkkk, wv2.data(), fkkk,
           bscratch_.data(), static_cast<int>(sp_in), T(1),
           gx.data() + static_cast<std::size_t>(z) * sp_in,
           static_cast<int>(vol_in));
      gemm(false, true, c, fkkk, static_cast<int>(sp_in),
           xv2.data() + static_cast<std::size_t>(z) * sp_in,
           static_cast<int>(vol_in), bscratch_.data(),
           static_cast<int>(sp_in), T(1), gw.data(), fkkk);
    }
  };
  return id;
}

template <typename T>
int Tape<T>::instance_norm2d(int x) {
  const Tensor<T>& xv = val(x);
  require(xv.ndim() == 4, "instance_norm2d: rank mismatch");
  const int groups = xv.dim(0) * xv.dim(1);
  const std::size_t sp = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  return norm_impl(x, groups, sp);
}

template <typename T>
int Tape<T>::instance_norm3d(int x) {
  const Tensor<T>& xv = val(x);
  require(xv.ndim() == 4, "instance_norm3d: rank mismatch");
  const int groups = xv.dim(0);
  const std::size_t sp =
      static_cast<std::size_t>(xv.dim(1)) * xv.dim(2) * xv.dim(3);
  return norm_impl(x, groups, sp);
}

template <typename T>
int Tape<T>::norm_impl(int x, int groups, std::size_t sp) {
  const Tensor<T>& xv = val(x);
  require(sp >= 1, "instance_norm: empty spatial extent");
  Tensor<T> out(xv.shape());
  auto invstd = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(groups));
  for (int gidx = 0; gidx < groups; ++gidx) {
    const T* src = xv.data() + static_cast<std::size_t>(gidx) * sp;
    T* dst = out.data() + static_cast<std::size_t>(gidx) * sp;
    double mean = 0.0;
    for (std::size_t i = 0; i < sp; ++i) mean += static_cast<double>(src[i]);
    mean /= static_cast<double>(sp);
    double var = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
      const double dlt = static_cast<double>(src[i]) - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(sp);
    const double is = 1.0 / std::sqrt(var + kNormEps);
    (*invstd)[static_cast<std::size_t>(gidx)] = is;
    for (std::size_t i = 0; i < sp; ++i)
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * is);
  }

  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, id, groups, sp,
                                              invstd] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& y = val(id);
    Tensor<T>& gx = mutable_grad(x);
    for (int gidx = 0; gidx < groups; ++gidx) {
      const T* gy = g.data() + static_cast<std::size_t>(gidx) * sp;
      const T* yy = y.data() + static_cast<std::size_t>(gidx) * sp;
      T* dst = gx.data() + static_cast<std::size_t>(gidx) * sp;
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < sp; ++i) {
        m1 += static_cast<double>(gy[i]);
        m2 += static_cast<double>(gy[i]) * static_cast<double>(yy[i]);
      }
      m1 /= static_cast<double>(sp);
      m2 /= static_cast<double>(sp);
      const double is = (*invstd)[static_cast<std::size_t>(gidx)];
      for (std::size_t i = 0; i < sp; ++i)
        dst[i] += static_cast<T>(
            is * (static_cast<double>(gy[i]) - m1 -
                  static_cast<double>(yy[i]) * m2));
    }
  };
  return id;
}

template <typename T>
int Tape<T>::relu(int x) {
  const Tensor<T>& xv = val(x);
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = xv.data()[i] > T(0) ? xv.data()[i] : T(0);
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, id, n] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    Tensor<T>& gx = mutable_grad(x);
    for (std::size_t i = 0; i < n; ++i)
      if (xv2.data()[i] > T(0)) gx.data()[i] += g.data()[i];
  };
  return id;
}

template <typename T>
int Tape<T>::lrelu(int x, T slope) {
  const Tensor<T>& xv = val(x);
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = xv.data()[i] > T(0) ? xv.data()[i] : slope * xv.data()[i];
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, id, n, slope] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& xv2 = val(x);
    Tensor<T>& gx = mutable_grad(x);
    for (std::size_t i = 0; i < n; ++i)
      gx.data()[i] += g.data()[i] * (xv2.data()[i] > T(0) ? T(1) : slope);
  };
  return id;
}

template <typename T>
int Tape<T>::tanh_act(int x) {
  const Tensor<T>& xv = val(x);
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = std::tanh(xv.data()[i]);
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, x, id, n] {
    const Tensor<T>& g = grad(id);
    const Tensor<T>& y = val(id);
    Tensor<T>& gx = mutable_grad(x);
    for (std::size_t i = 0; i < n; ++i)
      gx.data()[i] += g.data()[i] * (T(1) - y.data()[i] * y.data()[i]);
  };
  return id;
}

template <typename T>
int Tape<T>::add(int a, int b) {
  const Tensor<T>& av = val(a);
  const Tensor<T>& bv = val(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor<T> out(av.shape());
  const std::size_t n = av.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = av.data()[i] + bv.data()[i];
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, a, b, id, n] {
    const Tensor<T>& g = grad(id);
    Tensor<T>& ga = mutable_grad(a);
    Tensor<T>& gb = mutable_grad(b);
    for (std::size_t i = 0; i < n; ++i) {
      ga.data()[i] += g.data()[i];
      gb.data()[i] += g.data()[i];
    }
  };
  return id;
}

template <typename T>
int Tape<T>::concat_impl(int a, int b, int axis) {
  const Tensor<T>& av = val(a);
  const Tensor<T>& bv = val(b);
  require(av.ndim() == 4 && bv.ndim() == 4, "concat: rank mismatch");
  for (int i = 0; i < 4; ++i)
    require(i == axis || av.dim(i) == bv.dim(i),
            "concat: non-channel dims differ");
  std::vector<int> shape = {av.dim(0), av.dim(1), av.dim(2), av.dim(3)};
  shape[static_cast<std::size_t>(axis)] += bv.dim(axis);

  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(av.dim(i));
  for (int i = axis + 1; i < 4; ++i)
    inner *= static_cast<std::size_t>(av.dim(i));
  const std::size_t ablk = static_cast<std::size_t>(av.dim(axis)) * inner;
  const std::size_t bblk = static_cast<std::size_t>(bv.dim(axis)) * inner;

  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (ablk + bblk), av.data() + o * ablk,
                ablk * sizeof(T));
    std::memcpy(out.data() + o * (ablk + bblk) + ablk, bv.data() + o * bblk,
                bblk * sizeof(T));
  }
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, a, b, id, outer, ablk,
                                              bblk] {
    const Tensor<T>& g = grad(id);
    Tensor<T>& ga = mutable_grad(a);
    Tensor<T>& gb = mutable_grad(b);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = g.data() + o * (ablk + bblk);
      T* da = ga.data() + o * ablk;
      T* db = gb.data() + o * bblk;
      for (std::size_t i = 0; i < ablk; ++i) da[i] += src[i];
      for (std::size_t i = 0; i < bblk; ++i) db[i] += src[ablk + i];
    }
  };
  return id;
}

template <typename T>
int Tape<T>::concat2d(int a, int b) {
  return concat_impl(a, b, 1);
}

template <typename T>
int Tape<T>::concat3d(int a, int b) {
  return concat_impl(a, b, 0);
}

template <typename T>
int Tape<T>::lsgan_loss(int scores, T target) {
  const Tensor<T>& sv = val(scores);
  const std::size_t n = sv.numel();
  require(n >= 1, "lsgan_loss: empty score map");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dlt = static_cast<double>(sv.data()[i]) -
                       static_cast<double>(target);
    acc += dlt * dlt;
  }
  Tensor<T> out({1});
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, scores, id, n, target] {
    const T gy = grad(id).data()[0];
    const Tensor<T>& sv2 = val(scores);
    Tensor<T>& gs = mutable_grad(scores);
    const T scale = gy * T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      gs.data()[i] += scale * (sv2.data()[i] - target);
  };
  return id;
}

template <typename T>
int Tape<T>::l1_loss(int a, int b) {
  const Tensor<T>& av = val(a);
  const Tensor<T>& bv = val(b);
  require(av.same_shape(bv), "l1_loss: shape mismatch");
  const std::size_t n = av.numel();
  require(n >= 1, "l1_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::abs(static_cast<double>(av.data()[i]) -
                    static_cast<double>(bv.data()[i]));
  Tensor<T> out({1});
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  const int id = push(std::move(out), nullptr);
  nodes_[static_cast<std::size_t>(id)].back = [this, a, b, id, n] {
    const T gy = grad(id).data()[0];
    const Tensor<T>& av2 = val(a);
    const Tensor<T>& bv2 = val(b);
    Tensor<T>& ga = mutable_grad(a);
    Tensor<T>& gb = mutable_grad(b);
    const T scale = gy / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T s = sign_of(av2.data()[i] - bv2.data()[i]);
      ga.data()[i] += scale * s;
      gb.data()[i] -= scale * s;
    }
  };
  return id;
}

template <typename T>
int Tape<T>::dice_ce_loss(int logits, const LabelVolume& labels) {
  const Tensor<T>& lv = val(logits);
  require(lv.ndim() == 4, "dice_ce_loss: rank mismatch");
  const int nc = lv.dim(0);
  require(nc >= 2, "dice_ce_loss: needs at least two classes");
  require(lv.dim(1) == labels.nz() && lv.dim(2) == labels.ny() &&
              lv.dim(3) == labels.nx(),
          "dice_ce_loss: logits/label grid mismatch");
  const std::size_t v = static_cast<std::size_t>(lv.dim(1)) * lv.dim(2) *
                        lv.dim(3);
  for (std::size_t i = 0; i < v; ++i)
    require(labels.labels()[i] < nc, "dice_ce_loss: label out of range");

  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(nc) * v);
  std::vector<double> sp(static_cast<std::size_t>(nc), 0.0);
  std::vector<double> si(static_cast<std::size_t>(nc), 0.0);
  std::vector<double> sg(static_cast<std::size_t>(nc), 0.0);
  std::vector<double> cec(static_cast<std::size_t>(nc), 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    double mx = static_cast<double>(lv.data()[i]);
    for (int c = 1; c < nc; ++c)
      mx = std::max(mx, static_cast<double>(
                            lv.data()[static_cast<std::size_t>(c) * v + i]));
    double denom = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double e = std::exp(
          static_cast<double>(lv.data()[static_cast<std::size_t>(c) * v + i]) -
          mx);
      (*probs)[static_cast<std::size_t>(c) * v + i] = e;
      denom += e;
    }
    const int y = labels.labels()[i];
    for (int c = 0; c < nc; ++c) {
      const std::size_t at = static_cast<std::size_t>(c) * v + i;
      (*probs)[at] /= denom;
      sp[static_cast<std::size_t>(c)] += (*probs)[at];
      if (y == c) {
        si[static_cast<std::size_t>(c)] += (*probs)[at];
        sg[static_cast<std::size_t>(c)] += 1.0;
      }
    }
    cec[static_cast<std::size_t>(y)] -= std::log(
        std::max((*probs)[static_cast<std::size_t>(y) * v + i], 1e-300));
  }
  auto wts = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(nc), 0.0);
  int present = 0;
  for (int c = 0; c < nc; ++c)
    if (sg[static_cast<std::size_t>(c)] > 0.0) ++present;
  double ce = 0.0;
  for (int c = 0; c < nc; ++c) {
    if (sg[static_cast<std::size_t>(c)] <= 0.0) continue;
    (*wts)[static_cast<std::size_t>(c)] =
        static_cast<double>(v) /
        (static_cast<double>(present) * sg[static_cast<std::size_t>(c)]);
    ce += (*wts)[static_cast<std::size_t>(c)] * cec[static_cast<std::size_t>(c)];
  }
  ce /= static_cast<double>(v);
  auto num = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(nc), 0.0);
  auto den = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(nc), 0.0);
  double dice_mean = 0.0;
  for (int c = 1; c < nc; ++c) {
    (*num)[static_cast<std::size_t>(c)] =
        2.0 * si[static_cast<std::size_t>(c)] + kDiceEps;
    (*den)[static_cast<std::size_t>(c)] = sp[static_cast<std::size_t>(c)] +
                                          sg[static_cast<std::size_t>(c)] +
                                          kDiceEps;
    dice_mean += (*num)[static_cast<std::size_t>(c)] /
                 (*den)[static_cast<std::size_t>(c)];
  }
  dice_mean /= static_cast<double>(nc - 1);

  Tensor<T> out({1});
  out.data()[0] = static_cast<T>((1.0 - dice_mean) + ce);
  const int id = push(std::move(out), nullptr);
  LabelVolume lab = labels;
  nodes_[static_cast<std::size_t>(id)].back = [this, logits, id, nc, v, probs,
                                              num, den, wts, lab] {
    const double gy = static_cast<double>(grad(id).data()[0]);
    Tensor<T>& gl = mutable_grad(logits);
    const double fg = static_cast<double>(nc - 1);
    std::vector<double> ca(static_cast<std::size_t>(nc), 0.0);
    std::vector<double> cb(static_cast<std::size_t>(nc), 0.0);
    for (int c = 1; c < nc; ++c) {
      const double dn = (*den)[static_cast<std::size_t>(c)];
      ca[static_cast<std::size_t>(c)] = -2.0 / (fg * dn);
      cb[static_cast<std::size_t>(c)] =
          (*num)[static_cast<std::size_t>(c)] / (fg * dn * dn);
    }
    std::vector<double> gp(static_cast<std::size_t>(nc));
    for (std::size_t i = 0; i < v; ++i) {
      const int y = lab.labels()[i];
      double s = 0.0;
      for (int c = 0; c < nc; ++c) {
        const double g = (y == c) ? 1.0 : 0.0;
        const double p = (*probs)[static_cast<std::size_t>(c) * v + i];
        gp[c] = (c == 0) ? 0.0
                         : ca[static_cast<std::size_t>(c)] * g +
                               cb[static_cast<std::size_t>(c)];
        s += gp[c] * p;
      }
      const double wy = (*wts)[static_cast<std::size_t>(y)];
      for (int c = 0; c < nc; ++c) {
        const double p = (*probs)[static_cast<std::size_t>(c) * v + i];
        const double hot = (y == c) ? 1.0 : 0.0;
        gl.data()[static_cast<std::size_t>(c) * v + i] += static_cast<T>(
            gy * (p * (gp[c] - s) + wy * (p - hot) / static_cast<double>(v)));
      }
    }
  };
  return id;
}

template <typename T>
int Tape<T>::weighted_sum(const std::vector<std::pair<T, int>>& terms) {
  require(!terms.empty(), "weighted_sum: no terms");
  double acc = 0.0;
  for (const auto& [wt, nid] : terms) {
    require(val(nid).numel() == 1, "weighted_sum: non-scalar term");
    acc += static_cast<double>(wt) * static_cast<double>(val(nid).data()[0]);
  }
  Tensor<T> out({1});
  out.data()[0] = static_cast<T>(acc);
  const int id = push(std::move(out), nullptr);
  std::vector<std::pair<T, int>> ts = terms;
  nodes_[static_cast<std::size_t>(id)].back = [this, id, ts] {
    const T gy = grad(id).data()[0];
    for (const auto& [wt, nid] : ts) mutable_grad(nid).data()[0] += gy * wt;
  };
  return id;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cmda
