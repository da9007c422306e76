#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cmda/checkpoint.hpp"
#include "cmda/error.hpp"
#include "cmda/models.hpp"
#include "cmda/nifti.hpp"
#include "cmda/optim.hpp"
#include "cmda/rng.hpp"
#include "doctest.h"
#include "support/approx.hpp"

namespace fs = std::filesystem;
using namespace cmda;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor<float> rand_image(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return t;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.arch != b.arch || a.cfg != b.cfg || a.init_seed != b.init_seed)
    return false;
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].first != b.tensors[i].first) return false;
    const auto& ta = a.tensors[i].second;
    const auto& tb = b.tensors[i].second;
    if (!ta.same_shape(tb)) return false;
    if (std::memcmp(ta.data(), tb.data(), ta.numel() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

// One supervised step on a fixed toy batch; exercises forward, backward and
// Adam together for the resume tests.
void train_step(ModelParams& gen, OptimState& st, const Tensor<float>& x) {
  Tape<float> tape;
  const int xi = tape.input(x);
  BoundModel bound = forward_model(tape, gen, xi);
  const int loss = tape.lsgan_loss(bound.out, 1.0f);
  tape.backward(loss);
  std::vector<Tensor<float>> grads = collect_grads(tape, bound);
  adam_step(gen, grads, st, 1e-3);
}

}  // namespace

TEST_CASE("resnet generator maps 64x64 to 64x64 inside [-1,1]") {
  ModelParams gen = build_resnet_generator(4, 4, 7);
  Tensor<float> x = rand_image({2, 1, 64, 64}, 11);
  Tape<float> tape;
  BoundModel bound = forward_model(tape, gen, tape.input(x));
  const Tensor<float>& out = tape.val(bound.out);
  REQUIRE(out.shape() == std::vector<int>{2, 1, 64, 64});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    REQUIRE(out[i] <= 1.0f);
    REQUIRE(out[i] >= -1.0f);
  }
}

TEST_CASE("resnet generator parameter count matches a hand formula") {
  const int b = 4, n = 4;
  ModelParams gen = build_resnet_generator(b, n, 3);
  std::size_t expect = 0;
  expect += static_cast<std::size_t>(b) * 49 + b;                    // stem
  expect += static_cast<std::size_t>(2 * b) * b * 9 + 2 * b;         // down1
  expect += static_cast<std::size_t>(4 * b) * 2 * b * 9 + 4 * b;     // down2
  expect += static_cast<std::size_t>(n) *
            (2 * (static_cast<std::size_t>(4 * b) * 4 * b * 9 + 4 * b));
  expect += static_cast<std::size_t>(4 * b) * 2 * b * 16 + 2 * b;    // up1
  expect += static_cast<std::size_t>(2 * b) * b * 16 + b;            // up2
  expect += static_cast<std::size_t>(b) * 49 + 1;                    // head
  CHECK(gen.param_count() == expect);
  std::size_t manifest_sum = 0;
  for (const auto& [name, t] : gen.tensors) manifest_sum += t.numel();
  CHECK(manifest_sum == expect);
}

TEST_CASE("builders are deterministic in the seed") {
  CHECK(params_equal(build_resnet_generator(4, 4, 5),
                     build_resnet_generator(4, 4, 5)));
  CHECK_FALSE(params_equal(build_resnet_generator(4, 4, 5),
                           build_resnet_generator(4, 4, 6)));
  CHECK(params_equal(build_unet_generator(4, 2, 5),
                     build_unet_generator(4, 2, 5)));
  CHECK(params_equal(build_patchgan_discriminator(8, 2, 5),
                     build_patchgan_discriminator(8, 2, 5)));
  CHECK(params_equal(build_segmenter_3d(4, 2, 3, 5),
                     build_segmenter_3d(4, 2, 3, 5)));
}

TEST_CASE("unet generator contract and skip wiring") {
  ModelParams gen = build_unet_generator(4, 2, 9);
  Tensor<float> x = rand_image({1, 1, 64, 64}, 13);
  Tape<float> tape;
  BoundModel bound = forward_model(tape, gen, tape.input(x));
  const Tensor<float>& out = tape.val(bound.out);
  REQUIRE(out.shape() == std::vector<int>{1, 1, 64, 64});
  for (std::size_t i = 0; i < out.numel(); ++i)
    REQUIRE(std::abs(out[i]) <= 1.0f);
  for (int i = 1; i <= 2; ++i) {
    const std::string base = "dec" + std::to_string(i);
    const auto& fuse = gen.find(base + ".fuse.w");
    const auto& up = gen.find(base + ".up.w");
    CHECK(fuse.dim(1) == 2 * up.dim(1));
  }
}

TEST_CASE("patchgan produces a patch score map, not a scalar") {
  ModelParams d = build_patchgan_discriminator(8, 2, 21);
  Tensor<float> x = rand_image({1, 1, 64, 64}, 17);
  Tape<float> tape;
  BoundModel bound = forward_model(tape, d, tape.input(x));
  const auto& shape = tape.val(bound.out).shape();
  REQUIRE(shape.size() == 4);
  CHECK(shape[1] == 1);
  CHECK(shape[2] > 1);
  CHECK(shape[3] > 1);

  Tensor<float> x2 = rand_image({1, 1, 128, 128}, 18);
  Tape<float> tape2;
  BoundModel bound2 = forward_model(tape2, d, tape2.input(x2));
  const auto& shape2 = tape2.val(bound2.out).shape();
  CHECK(std::abs(shape2[2] - 2 * shape[2]) <= 1);
  CHECK(std::abs(shape2[3] - 2 * shape[3]) <= 1);
}

TEST_CASE("patchgan rejects inputs smaller than its receptive field") {
  ModelParams d = build_patchgan_discriminator(8, 2, 22);
  Tensor<float> tiny = rand_image({1, 1, 4, 4}, 19);
  Tape<float> tape;
  CHECK_THROWS_AS(forward_model(tape, d, tape.input(tiny)), ValidationError);
}

TEST_CASE("segmenter maps a volume patch to per-class logits") {
  ModelParams seg = build_segmenter_3d(4, 2, 3, 31);
  Tensor<float> x = rand_image({1, 16, 64, 64}, 23);
  Tape<float> tape;
  BoundModel bound = forward_model(tape, seg, tape.input(x));
  REQUIRE(tape.val(bound.out).shape() == std::vector<int>{3, 16, 64, 64});
}

TEST_CASE("segmenter rejects patch sizes incompatible with its depth") {
  ModelParams seg = build_segmenter_3d(4, 3, 3, 31);
  Tensor<float> x = rand_image({1, 4, 64, 64}, 23);
  Tape<float> tape;
  CHECK_THROWS_AS(forward_model(tape, seg, tape.input(x)), ValidationError);
  ModelParams seg2 = build_segmenter_3d(4, 2, 3, 31);
  Tensor<float> odd = rand_image({1, 16, 62, 64}, 23);
  Tape<float> tape2;
  CHECK_THROWS_AS(forward_model(tape2, seg2, tape2.input(odd)),
                  ValidationError);
}

TEST_CASE("generator input dims must divide by the downsample factor") {
  ModelParams gen = build_resnet_generator(4, 4, 7);
  Tensor<float> odd = rand_image({1, 1, 30, 64}, 29);
  Tape<float> tape;
  CHECK_THROWS_AS(forward_model(tape, gen, tape.input(odd)), ValidationError);
}

TEST_CASE("identity generator passes input through untouched") {
  ModelParams id = build_identity_generator();
  Tensor<float> x = rand_image({1, 1, 8, 8}, 37);
  Tape<float> tape;
  const int xi = tape.input(x);
  BoundModel bound = forward_model(tape, id, xi);
  CHECK(bound.out == xi);
  CHECK(bound.ids.empty());
  CHECK(std::memcmp(tape.val(bound.out).data(), x.data(),
                    x.numel() * sizeof(float)) == 0);
}

TEST_CASE("builders reject invalid dimensions") {
  CHECK_THROWS_AS(build_resnet_generator(0, 4, 1), ValidationError);
  CHECK_THROWS_AS(build_resnet_generator(4, 0, 1), ValidationError);
  CHECK_THROWS_AS(build_unet_generator(4, 0, 1), ValidationError);
  CHECK_THROWS_AS(build_patchgan_discriminator(0, 2, 1), ValidationError);
  CHECK_THROWS_AS(build_segmenter_3d(4, 2, 1, 1), ValidationError);
}

TEST_CASE("adam fixed points: zero gradients and zero learning rate") {
  ModelParams gen = build_patchgan_discriminator(2, 1, 41);
  ModelParams before = gen;
  OptimState st = init_optim(gen, 0.5, 0.999);
  std::vector<Tensor<float>> zeros;
  for (const auto& [name, t] : gen.tensors) {
    zeros.emplace_back(t.shape());
  }
  adam_step(gen, zeros, st, 0.1);
  CHECK(params_equal(gen, before));
  CHECK(st.t == 1);

  Tensor<float> x = rand_image({1, 1, 16, 16}, 43);
  Tape<float> tape;
  BoundModel bound = forward_model(tape, gen, tape.input(x));
  tape.backward(tape.lsgan_loss(bound.out, 1.0f));
  std::vector<Tensor<float>> grads = collect_grads(tape, bound);
  adam_step(gen, grads, st, 0.0);
  CHECK(params_equal(gen, before));
}

TEST_CASE("adam single step hand example") {
  ModelParamsT<double> p;
  p.arch = "scalar";
  Tensor<double> w({1});
  w[0] = 1.0;
  p.tensors.emplace_back("w", w);
  OptimStateT<double> st = init_optim(p, 0.9, 0.999, 1e-8);
  Tensor<double> g({1});
  g[0] = 1.0;
  adam_step(p, {g}, st, 0.1);
  CHECK(st.t == 1);
  // after one step both moment estimates bias-correct to exactly 1
  const double expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK_NEAR(p.tensors[0].second[0], expected, 1e-15);
  CHECK_NEAR(p.tensors[0].second[0], 0.9, 1e-6);
}

TEST_CASE("adam rejects mismatched shapes") {
  ModelParams gen = build_patchgan_discriminator(2, 1, 47);
  OptimState st = init_optim(gen, 0.5, 0.999);
  std::vector<Tensor<float>> bad;
  for (const auto& [name, t] : gen.tensors) bad.emplace_back(std::vector<int>{1});
  CHECK_THROWS_AS(adam_step(gen, bad, st, 0.1), ValidationError);
  std::vector<Tensor<float>> too_few;
  CHECK_THROWS_AS(adam_step(gen, too_few, st, 0.1), ValidationError);
}

TEST_CASE("parameter checkpoints round-trip bit-exactly") {
  const fs::path dir = fresh_dir("cmda_ckpt_test");
  ModelParams gen = build_resnet_generator(4, 4, 53);
  const std::string path = (dir / "gen.ckpt").string();
  save_params(path, gen);
  ModelParams back = load_params(path);
  CHECK(params_equal(gen, back));

  save_params(path, back);
  ModelParams twice = load_params(path);
  CHECK(params_equal(gen, twice));
  fs::remove_all(dir);
}

TEST_CASE("optimizer checkpoints round-trip bit-exactly") {
  const fs::path dir = fresh_dir("cmda_optim_ckpt_test");
  ModelParams gen = build_patchgan_discriminator(4, 2, 59);
  OptimState st = init_optim(gen, 0.5, 0.999);
  Tensor<float> x = rand_image({1, 1, 32, 32}, 61);
  for (int i = 0; i < 3; ++i) train_step(gen, st, x);
  const std::string path = (dir / "d.optim").string();
  save_optim(path, st);
  OptimState back = load_optim(path);
  CHECK(back.beta1 == st.beta1);
  CHECK(back.beta2 == st.beta2);
  CHECK(back.eps == st.eps);
  CHECK(back.t == st.t);
  REQUIRE(back.m.size() == st.m.size());
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    REQUIRE(back.m[i].same_shape(st.m[i]));
    CHECK(std::memcmp(back.m[i].data(), st.m[i].data(),
                      st.m[i].numel() * sizeof(float)) == 0);
    CHECK(std::memcmp(back.v[i].data(), st.v[i].data(),
                      st.v[i].numel() * sizeof(float)) == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("resumed training matches uninterrupted training step-for-step") {
  const fs::path dir = fresh_dir("cmda_resume_test");
  Tensor<float> x = rand_image({1, 1, 16, 16}, 67);

  ModelParams straight = build_resnet_generator(2, 1, 71);
  OptimState st_straight = init_optim(straight, 0.5, 0.999);
  for (int i = 0; i < 6; ++i) train_step(straight, st_straight, x);

  ModelParams part = build_resnet_generator(2, 1, 71);
  OptimState st_part = init_optim(part, 0.5, 0.999);
  for (int i = 0; i < 3; ++i) train_step(part, st_part, x);
  save_params((dir / "gen.ckpt").string(), part);
  save_optim((dir / "gen.optim").string(), st_part);

  ModelParams resumed = load_params((dir / "gen.ckpt").string());
  OptimState st_resumed = load_optim((dir / "gen.optim").string());
  for (int i = 0; i < 3; ++i) train_step(resumed, st_resumed, x);

  CHECK(params_equal(straight, resumed));
  CHECK(st_resumed.t == st_straight.t);
  for (std::size_t i = 0; i < st_straight.m.size(); ++i) {
    CHECK(std::memcmp(st_resumed.m[i].data(), st_straight.m[i].data(),
                      st_straight.m[i].numel() * sizeof(float)) == 0);
    CHECK(std::memcmp(st_resumed.v[i].data(), st_straight.v[i].data(),
                      st_straight.v[i].numel() * sizeof(float)) == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const fs::path dir = fresh_dir("cmda_ckpt_err_test");
  ModelParams gen = build_patchgan_discriminator(2, 1, 73);
  const std::string path = (dir / "good.ckpt").string();
  save_params(path, gen);
  std::vector<std::uint8_t> bytes = nifti::read_file_bytes(path);

  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] = 'x';
  nifti::write_file_bytes((dir / "bad_magic.ckpt").string(), bad_magic);
  CHECK_THROWS_AS(load_params((dir / "bad_magic.ckpt").string()), FormatError);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 5);
  nifti::write_file_bytes((dir / "trunc.ckpt").string(), truncated);
  CHECK_THROWS_AS(load_params((dir / "trunc.ckpt").string()),
                  TruncationError);

  std::vector<std::uint8_t> padded = bytes;
  padded.push_back(0);
  nifti::write_file_bytes((dir / "padded.ckpt").string(), padded);
  CHECK_THROWS_AS(load_params((dir / "padded.ckpt").string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("forward passes are deterministic") {
  ModelParams seg = build_segmenter_3d(2, 2, 3, 79);
  Tensor<float> x = rand_image({1, 8, 16, 16}, 83);
  std::vector<float> first;
  for (int run = 0; run < 2; ++run) {
    Tape<float> tape;
    BoundModel bound = forward_model(tape, seg, tape.input(x));
    const auto& out = tape.val(bound.out).vec();
    if (run == 0)
      first = out;
    else
      CHECK(std::memcmp(first.data(), out.data(),
                        first.size() * sizeof(float)) == 0);
  }
}
