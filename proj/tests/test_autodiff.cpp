#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "cmda/autodiff.hpp"
#include "cmda/error.hpp"
#include "cmda/rng.hpp"
#include "doctest.h"
#include "support/approx.hpp"

using cmda::LabelVolume;
using cmda::Rng;
using cmda::Tape;
using cmda::Tensor;

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// Keeps every element at least `margin` away from zero so finite differences
// never straddle an activation kink.
Tensor<double> rand_tensor_off_zero(std::vector<int> shape, Rng& rng,
                                    double margin = 0.08) {
  Tensor<double> t = rand_tensor(std::move(shape), rng);
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] += (t[i] >= 0.0 ? margin : -margin);
  return t;
}

using Builder = std::function<int(Tape<double>&, const std::vector<int>&)>;

double eval_loss(const std::vector<Tensor<double>>& inputs, const Builder& b) {
  Tape<double> tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(tape.input(in));
  const int loss = b(tape, ids);
  return tape.val(loss).data()[0];
}

// Central finite differences against the analytic gradient for a sample of
// elements of every input tensor.
void check_gradients(std::vector<Tensor<double>> inputs, const Builder& b,
                     std::uint64_t probe_seed, int per_input = 8,
                     double h = 1e-3, double rtol = 1e-3) {
  Tape<double> tape;
  std::vector<int> ids;
  for (const auto& in : inputs) ids.push_back(tape.input(in));
  const int loss = b(tape, ids);
  tape.backward(loss);

  Rng rng(probe_seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].numel();
    const int checks = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(per_input), n));
    for (int t = 0; t < checks; ++t) {
      const std::size_t idx =
          (n <= static_cast<std::size_t>(per_input))
              ? static_cast<std::size_t>(t)
              : static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(n) - 1));
      const double keep = inputs[k][idx];
      inputs[k][idx] = keep + h;
      const double fp = eval_loss(inputs, b);
      inputs[k][idx] = keep - h;
      const double fm = eval_loss(inputs, b);
      inputs[k][idx] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = tape.grad(ids[k]).data()[idx];
      const double err = std::abs(fd - an);
      const double tol =
          rtol * std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK_MESSAGE(err <= tol, "input ", k, " elem ", idx, " fd ", fd,
                    " analytic ", an);
    }
  }
}

// Direct-summation convolution references, written independently of the
// im2col implementation.
Tensor<double> ref_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                          const Tensor<double>& b, int s, int p) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * p - kh) / s + 1;
  const int ow = (ww + 2 * p - kw) / s + 1;
  Tensor<double> out({n, f, oh, ow});
  for (int ni = 0; ni < n; ++ni)
    for (int fi = 0; fi < f; ++fi)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = b[static_cast<std::size_t>(fi)];
          for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = y * s - p + ky;
                const int ix = xo * s - p + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                acc += x[((static_cast<std::size_t>(ni) * c + ci) * h + iy) *
                             ww +
                         ix] *
                       w[((static_cast<std::size_t>(fi) * c + ci) * kh + ky) *
                             kw +
                         kx];
              }
          out[((static_cast<std::size_t>(ni) * f + fi) * oh + y) * ow + xo] =
              acc;
        }
  return out;
}

Tensor<double> ref_tconv2d(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, int s, int p) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int f = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h - 1) * s - 2 * p + kh;
  const int ow = (ww - 1) * s - 2 * p + kw;
  Tensor<double> out({n, f, oh, ow});
  for (int ni = 0; ni < n; ++ni) {
    for (int fi = 0; fi < f; ++fi)
      for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
        out[(static_cast<std::size_t>(ni) * f + fi) *
                static_cast<std::size_t>(oh) * ow +
            i] = b[static_cast<std::size_t>(fi)];
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xo = 0; xo < ww; ++xo) {
          const double xv =
              x[((static_cast<std::size_t>(ni) * c + ci) * h + y) * ww + xo];
          for (int fi = 0; fi < f; ++fi)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int oy = y * s - p + ky;
                const int ox = xo * s - p + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                out[((static_cast<std::size_t>(ni) * f + fi) * oh + oy) * ow +
                    ox] +=
                    xv *
                    w[((static_cast<std::size_t>(ci) * f + fi) * kh + ky) *
                          kw +
                      kx];
              }
        }
  }
  return out;
}

Tensor<double> ref_conv3d(const Tensor<double>& x, const Tensor<double>& w,
                          const Tensor<double>& b, int s, int p) {
  const int c = x.dim(0), d = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int f = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int od = (d + 2 * p - kd) / s + 1;
  const int oh = (h + 2 * p - kh) / s + 1;
  const int ow = (ww + 2 * p - kw) / s + 1;
  Tensor<double> out({f, od, oh, ow});
  for (int fi = 0; fi < f; ++fi)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = b[static_cast<std::size_t>(fi)];
          for (int ci = 0; ci < c; ++ci)
            for (int kz = 0; kz < kd; ++kz)
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  const int iz = z * s - p + kz;
                  const int iy = y * s - p + ky;
                  const int ix = xo * s - p + kx;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 ||
                      ix >= ww)
                    continue;
                  acc +=
                      x[((static_cast<std::size_t>(ci) * d + iz) * h + iy) *
                            ww +
                        ix] *
                      w[(((static_cast<std::size_t>(fi) * c + ci) * kd + kz) *
                             kh +
                         ky) *
                            kw +
                        kx];
                }
          out[((static_cast<std::size_t>(fi) * od + z) * oh + y) * ow + xo] =
              acc;
        }
  return out;
}

Tensor<double> ref_tconv3d(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, int s, int p) {
  const int c = x.dim(0), d = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int f = w.dim(1), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int od = (d - 1) * s - 2 * p + kd;
  const int oh = (h - 1) * s - 2 * p + kh;
  const int ow = (ww - 1) * s - 2 * p + kw;
  Tensor<double> out({f, od, oh, ow});
  for (int fi = 0; fi < f; ++fi)
    for (std::size_t i = 0;
         i < static_cast<std::size_t>(od) * oh * ow; ++i)
      out[static_cast<std::size_t>(fi) * od * oh * ow + i] =
          b[static_cast<std::size_t>(fi)];
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        for (int xo = 0; xo < ww; ++xo) {
          const double xv =
              x[((static_cast<std::size_t>(ci) * d + z) * h + y) * ww + xo];
          for (int fi = 0; fi < f; ++fi)
            for (int kz = 0; kz < kd; ++kz)
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  const int oz = z * s - p + kz;
                  const int oy = y * s - p + ky;
                  const int ox = xo * s - p + kx;
                  if (oz < 0 || oz >= od || oy < 0 || oy >= oh || ox < 0 ||
                      ox >= ow)
                    continue;
                  out[((static_cast<std::size_t>(fi) * od + oz) * oh + oy) *
                          ow +
                      ox] +=
                      xv *
                      w[(((static_cast<std::size_t>(ci) * f + fi) * kd + kz) *
                             kh +
                         ky) *
                            kw +
                        kx];
                }
        }
  return out;
}

void expect_tensor_near(const Tensor<double>& a, const Tensor<double>& b,
                        double tol) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK_NEAR(a[i], b[i], tol);
    if (std::abs(a[i] - b[i]) > tol) return;
  }
}

}  // namespace

TEST_CASE("conv2d forward matches direct summation") {
  Rng rng(101);
  struct Cfg {
    std::vector<int> xs, ws;
    int s, p;
  };
  const std::vector<Cfg> cfgs = {
      {{2, 3, 6, 5}, {4, 3, 3, 3}, 1, 1},
      {{1, 2, 8, 8}, {3, 2, 4, 4}, 2, 1},
      {{2, 1, 9, 7}, {2, 1, 7, 7}, 1, 3},
      {{1, 3, 5, 5}, {2, 3, 1, 1}, 1, 0},
  };
  for (const auto& cfg : cfgs) {
    Tensor<double> x = rand_tensor(cfg.xs, rng);
    Tensor<double> w = rand_tensor(cfg.ws, rng);
    Tensor<double> b = rand_tensor({cfg.ws[0]}, rng);
    Tape<double> tape;
    const int out =
        tape.conv2d(tape.input(x), tape.input(w), tape.input(b), cfg.s, cfg.p);
    expect_tensor_near(tape.val(out), ref_conv2d(x, w, b, cfg.s, cfg.p), 1e-9);
  }
}

TEST_CASE("tconv2d forward matches direct scatter") {
  Rng rng(102);
  Tensor<double> x = rand_tensor({2, 3, 4, 5}, rng);
  Tensor<double> w = rand_tensor({3, 2, 4, 4}, rng);
  Tensor<double> b = rand_tensor({2}, rng);
  Tape<double> tape;
  const int out = tape.tconv2d(tape.input(x), tape.input(w), tape.input(b), 2, 1);
  REQUIRE(tape.val(out).shape() == std::vector<int>{2, 2, 8, 10});
  expect_tensor_near(tape.val(out), ref_tconv2d(x, w, b, 2, 1), 1e-9);
}

TEST_CASE("conv3d forward matches direct summation") {
  Rng rng(103);
  Tensor<double> x = rand_tensor({2, 4, 6, 5}, rng);
  Tensor<double> w = rand_tensor({3, 2, 3, 3, 3}, rng);
  Tensor<double> b = rand_tensor({3}, rng);
  Tape<double> tape;
  const int out = tape.conv3d(tape.input(x), tape.input(w), tape.input(b), 1, 1);
  REQUIRE(tape.val(out).shape() == std::vector<int>{3, 4, 6, 5});
  expect_tensor_near(tape.val(out), ref_conv3d(x, w, b, 1, 1), 1e-9);

  Tensor<double> w2 = rand_tensor({2, 2, 2, 2, 2}, rng);
  Tensor<double> b2 = rand_tensor({2}, rng);
  Tape<double> tape2;
  const int out2 =
      tape2.conv3d(tape2.input(x), tape2.input(w2), tape2.input(b2), 2, 0);
  REQUIRE(tape2.val(out2).shape() == std::vector<int>{2, 2, 3, 2});
  expect_tensor_near(tape2.val(out2), ref_conv3d(x, w2, b2, 2, 0), 1e-9);
}

TEST_CASE("tconv3d forward matches direct scatter") {
  Rng rng(104);
  Tensor<double> x = rand_tensor({2, 2, 3, 4}, rng);
  Tensor<double> w = rand_tensor({2, 3, 2, 2, 2}, rng);
  Tensor<double> b = rand_tensor({3}, rng);
  Tape<double> tape;
  const int out = tape.tconv3d(tape.input(x), tape.input(w), tape.input(b), 2, 0);
  REQUIRE(tape.val(out).shape() == std::vector<int>{3, 4, 6, 8});
  expect_tensor_near(tape.val(out), ref_tconv3d(x, w, b, 2, 0), 1e-9);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(201);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({2, 2, 5, 5}, rng));
  inputs.push_back(rand_tensor({3, 2, 3, 3}, rng));
  inputs.push_back(rand_tensor({3}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.conv2d(ids[0], ids[1], ids[2], 1, 1);
                    return t.lsgan_loss(y, 0.0);
                  },
                  301);
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.conv2d(ids[0], ids[1], ids[2], 2, 1);
                    return t.lsgan_loss(y, 1.0);
                  },
                  302);
}

TEST_CASE("tconv2d gradients match finite differences") {
  Rng rng(202);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({1, 3, 3, 4}, rng));
  inputs.push_back(rand_tensor({3, 2, 4, 4}, rng));
  inputs.push_back(rand_tensor({2}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.tconv2d(ids[0], ids[1], ids[2], 2, 1);
                    return t.lsgan_loss(y, 0.0);
                  },
                  303);
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(203);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({2, 3, 4, 4}, rng));
  inputs.push_back(rand_tensor({2, 2, 3, 3, 3}, rng));
  inputs.push_back(rand_tensor({2}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.conv3d(ids[0], ids[1], ids[2], 1, 1);
                    return t.lsgan_loss(y, 0.0);
                  },
                  304);
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.conv3d(ids[0], ids[1], ids[2], 2, 1);
                    return t.lsgan_loss(y, 1.0);
                  },
                  305);
}

TEST_CASE("tconv3d gradients match finite differences") {
  Rng rng(204);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({2, 2, 3, 3}, rng));
  inputs.push_back(rand_tensor({2, 2, 2, 2, 2}, rng));
  inputs.push_back(rand_tensor({2}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.tconv3d(ids[0], ids[1], ids[2], 2, 0);
                    return t.lsgan_loss(y, 0.0);
                  },
                  306);
}

TEST_CASE("instance norm output is standardized per group") {
  Rng rng(205);
  Tensor<double> x = rand_tensor({2, 3, 5, 4}, rng, -2.0, 3.0);
  Tape<double> tape;
  const int y = tape.instance_norm2d(tape.input(x));
  const Tensor<double>& out = tape.val(y);
  for (int g = 0; g < 6; ++g) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 20; ++i) mean += out[static_cast<std::size_t>(g) * 20 + i];
    mean /= 20.0;
    for (int i = 0; i < 20; ++i) {
      const double d = out[static_cast<std::size_t>(g) * 20 + i] - mean;
      var += d * d;
    }
    var /= 20.0;
    CHECK_NEAR(mean, 0.0, 1e-12);
    CHECK_NEAR(var, 1.0, 1e-3);
  }
}

TEST_CASE("instance norm gradients match finite differences") {
  Rng rng(206);
  std::vector<Tensor<double>> in2d;
  in2d.push_back(rand_tensor({2, 2, 3, 4}, rng, -2.0, 2.0));
  check_gradients(in2d,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.instance_norm2d(ids[0]);
                    return t.lsgan_loss(y, 1.0);
                  },
                  307, 12);
  std::vector<Tensor<double>> in3d;
  in3d.push_back(rand_tensor({3, 2, 3, 4}, rng, -2.0, 2.0));
  check_gradients(in3d,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int y = t.instance_norm3d(ids[0]);
                    return t.lsgan_loss(y, 1.0);
                  },
                  308, 12);
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(207);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor_off_zero({2, 2, 3, 3}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    return t.lsgan_loss(t.relu(ids[0]), 1.0);
                  },
                  309, 12);
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    return t.lsgan_loss(t.lrelu(ids[0], 0.2), 1.0);
                  },
                  310, 12);
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    return t.lsgan_loss(t.tanh_act(ids[0]), 1.0);
                  },
                  311, 12);
}

TEST_CASE("add and concat gradients match finite differences") {
  Rng rng(208);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({2, 2, 3, 3}, rng));
  inputs.push_back(rand_tensor({2, 2, 3, 3}, rng));
  inputs.push_back(rand_tensor({2, 1, 3, 3}, rng));
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int s = t.add(ids[0], ids[1]);
                    const int c = t.concat2d(s, ids[2]);
                    return t.lsgan_loss(c, 0.0);
                  },
                  312);
  std::vector<Tensor<double>> in3d;
  in3d.push_back(rand_tensor({2, 2, 3, 3}, rng));
  in3d.push_back(rand_tensor({3, 2, 3, 3}, rng));
  check_gradients(in3d,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    const int c = t.concat3d(ids[0], ids[1]);
                    return t.lsgan_loss(c, 1.0);
                  },
                  313);
}

TEST_CASE("lsgan loss hand value") {
  Tensor<double> s({1, 1, 2, 2});
  s.fill(0.5);
  Tape<double> tape;
  const int loss = tape.lsgan_loss(tape.input(s), 1.0);
  CHECK_NEAR(tape.val(loss).data()[0], 0.25, 1e-15);
}

TEST_CASE("l1 loss of identical tensors is zero") {
  Rng rng(209);
  Tensor<double> a = rand_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  const int loss = tape.l1_loss(tape.input(a), tape.input(a));
  CHECK(tape.val(loss).data()[0] == 0.0);
}

TEST_CASE("l1 loss gradients match finite differences") {
  Rng rng(210);
  Tensor<double> a = rand_tensor({2, 2, 3, 3}, rng);
  Tensor<double> b = a;
  for (std::size_t i = 0; i < b.numel(); ++i) {
    const double off = 0.05 + 0.2 * rng.uniform();
    b[i] += (rng.uniform() < 0.5 ? off : -off);
  }
  std::vector<Tensor<double>> inputs = {a, b};
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    return t.l1_loss(ids[0], ids[1]);
                  },
                  314, 12);
}

TEST_CASE("dice_ce is near zero for confident correct logits") {
  Rng rng(211);
  LabelVolume lab(4, 3, 2);
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    lab.labels()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  lab.labels()[0] = 1;
  lab.labels()[1] = 2;
  Tensor<double> logits({3, 2, 3, 4});
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    logits[static_cast<std::size_t>(lab.labels()[i]) * 24 + i] = 35.0;
  Tape<double> tape;
  const int loss = tape.dice_ce_loss(tape.input(logits), lab);
  CHECK(tape.val(loss).data()[0] >= 0.0);
  CHECK(tape.val(loss).data()[0] <= 2e-5);
}

TEST_CASE("dice_ce near zero when a foreground class is absent") {
  LabelVolume lab(4, 3, 2);
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    lab.labels()[i] = (i % 2 == 0) ? 0 : 1;
  Tensor<double> logits({3, 2, 3, 4});
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    logits[static_cast<std::size_t>(lab.labels()[i]) * 24 + i] = 35.0;
  Tape<double> tape;
  const int loss = tape.dice_ce_loss(tape.input(logits), lab);
  CHECK(tape.val(loss).data()[0] >= 0.0);
  CHECK(tape.val(loss).data()[0] <= 2e-5);
}

TEST_CASE("dice_ce gradients match finite differences") {
  Rng rng(212);
  LabelVolume lab(4, 3, 2);
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    lab.labels()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({3, 2, 3, 4}, rng, -1.5, 1.5));
  check_gradients(inputs,
                  [lab](Tape<double>& t, const std::vector<int>& ids) {
                    return t.dice_ce_loss(ids[0], lab);
                  },
                  315, 16);
}

TEST_CASE("weighted_sum combines scalar losses") {
  Rng rng(213);
  Tensor<double> a = rand_tensor({1, 1, 3, 3}, rng);
  Tensor<double> b = rand_tensor({1, 1, 3, 3}, rng);
  Tape<double> tape;
  const int ia = tape.input(a);
  const int ib = tape.input(b);
  const int l1 = tape.lsgan_loss(ia, 1.0);
  const int l2 = tape.lsgan_loss(ib, 0.0);
  const int total = tape.weighted_sum({{1.0, l1}, {10.0, l2}});
  CHECK_NEAR(tape.val(total).data()[0],
             tape.val(l1).data()[0] + 10.0 * tape.val(l2).data()[0], 1e-12);
  tape.backward(total);
  CHECK(tape.grad(ia).data()[0] != 0.0);
  CHECK(tape.grad(ib).data()[0] != 0.0);
}

TEST_CASE("tiny 2d model gradients: conv-in-act-tconv against l1") {
  Rng rng(214);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({1, 1, 4, 4}, rng));       // image
  inputs.push_back(rand_tensor({2, 1, 3, 3}, rng));       // conv w
  inputs.push_back(rand_tensor({2}, rng));                // conv b
  inputs.push_back(rand_tensor({2, 1, 4, 4}, rng));       // tconv w
  inputs.push_back(rand_tensor({1}, rng));                // tconv b
  inputs.push_back(rand_tensor({1, 1, 4, 4}, rng));       // target
  std::size_t n_params = 0;
  for (std::size_t k = 1; k <= 4; ++k) n_params += inputs[k].numel();
  CHECK(n_params <= 200);
  check_gradients(inputs,
                  [](Tape<double>& t, const std::vector<int>& ids) {
                    int h = t.conv2d(ids[0], ids[1], ids[2], 2, 1);
                    h = t.instance_norm2d(h);
                    h = t.lrelu(h, 0.2);
                    h = t.tconv2d(h, ids[3], ids[4], 2, 1);
                    h = t.tanh_act(h);
                    return t.l1_loss(h, ids[5]);
                  },
                  316, 10);
}

TEST_CASE("tiny 3d model gradients against dice_ce") {
  Rng rng(215);
  LabelVolume lab(4, 4, 2);
  for (std::size_t i = 0; i < lab.labels().size(); ++i)
    lab.labels()[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({1, 2, 4, 4}, rng));        // volume
  inputs.push_back(rand_tensor({2, 1, 3, 3, 3}, rng));     // conv w
  inputs.push_back(rand_tensor({2}, rng));                 // conv b
  inputs.push_back(rand_tensor({3, 2, 1, 1, 1}, rng));     // head w
  inputs.push_back(rand_tensor({3}, rng));                 // head b
  std::size_t n_params = 0;
  for (std::size_t k = 1; k <= 4; ++k) n_params += inputs[k].numel();
  CHECK(n_params <= 200);
  check_gradients(inputs,
                  [lab](Tape<double>& t, const std::vector<int>& ids) {
                    int h = t.conv3d(ids[0], ids[1], ids[2], 1, 1);
                    h = t.instance_norm3d(h);
                    h = t.relu(h);
                    h = t.conv3d(h, ids[3], ids[4], 1, 0);
                    return t.dice_ce_loss(h, lab);
                  },
                  317, 10);
}

TEST_CASE("float tape forward is deterministic") {
  Rng rng(216);
  Tensor<float> x = rand_tensor({2, 3, 8, 8}, rng).cast<float>();
  Tensor<float> w = rand_tensor({4, 3, 3, 3}, rng).cast<float>();
  Tensor<float> b = rand_tensor({4}, rng).cast<float>();
  std::vector<float> first;
  for (int run = 0; run < 2; ++run) {
    Tape<float> tape;
    const int y = tape.instance_norm2d(
        tape.conv2d(tape.input(x), tape.input(w), tape.input(b), 2, 1));
    const auto& out = tape.val(y).vec();
    if (run == 0)
      first = out;
    else
      CHECK(std::memcmp(first.data(), out.data(),
                        first.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(217);
  Tensor<double> x = rand_tensor({1, 2, 4, 4}, rng);
  Tensor<double> w_bad = rand_tensor({3, 3, 3, 3}, rng);
  Tensor<double> b3 = rand_tensor({3}, rng);
  Tape<double> tape;
  const int xi = tape.input(x);
  CHECK_THROWS_AS(tape.conv2d(xi, tape.input(w_bad), tape.input(b3), 1, 1),
                  cmda::ValidationError);
  Tensor<double> other = rand_tensor({1, 2, 4, 5}, rng);
  CHECK_THROWS_AS(tape.add(xi, tape.input(other)), cmda::ValidationError);
  CHECK_THROWS_AS(tape.l1_loss(xi, tape.input(other)), cmda::ValidationError);
  LabelVolume lab(3, 3, 3);
  CHECK_THROWS_AS(tape.dice_ce_loss(xi, lab), cmda::ValidationError);
  Tensor<double> tiny = rand_tensor({1, 1, 2, 2}, rng);
  Tensor<double> w7 = rand_tensor({1, 1, 7, 7}, rng);
  Tensor<double> b1 = rand_tensor({1}, rng);
  CHECK_THROWS_AS(tape.conv2d(tape.input(tiny), tape.input(w7), tape.input(b1),
                              1, 0),
                  cmda::ValidationError);
}
