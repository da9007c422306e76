#include "cmda/models.hpp"

#include <cmath>

#include "cmda/error.hpp"
#include "cmda/rng.hpp"

namespace cmda {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

Tensor<float> init_weights(Rng& rng, std::vector<int> shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal() * 0.02);
  return t;
}

void add_conv2d(ModelParams& p, Rng& rng, const std::string& name, int f,
                int c, int k) {
  p.tensors.emplace_back(name + ".w", init_weights(rng, {f, c, k, k}));
  p.tensors.emplace_back(name + ".b", Tensor<float>({f}));
}

void add_tconv2d(ModelParams& p, Rng& rng, const std::string& name, int c,
                 int f, int k) {
  p.tensors.emplace_back(name + ".w", init_weights(rng, {c, f, k, k}));
  p.tensors.emplace_back(name + ".b", Tensor<float>({f}));
}

void add_conv3d(ModelParams& p, Rng& rng, const std::string& name, int f,
                int c, int k) {
  p.tensors.emplace_back(name + ".w", init_weights(rng, {f, c, k, k, k}));
  p.tensors.emplace_back(name + ".b", Tensor<float>({f}));
}

void add_tconv3d(ModelParams& p, Rng& rng, const std::string& name, int c,
                 int f, int k) {
  p.tensors.emplace_back(name + ".w", init_weights(rng, {c, f, k, k, k}));
  p.tensors.emplace_back(name + ".b", Tensor<float>({f}));
}

// Walks the manifest in order while the forward graph is built, so a builder
// and its forward pass cannot silently disagree about parameter layout.
template <typename T>
struct Binder {
  Tape<T>& tape;
  const ModelParamsT<T>& params;
  BoundModel& bound;
  std::size_t next = 0;

  int take(const std::string& name) {
    require(next < params.tensors.size(),
            "model: parameter manifest exhausted at " + name);
    require(params.tensors[next].first == name,
            "model: manifest order mismatch, expected " +
                params.tensors[next].first + " got " + name);
    const int id = tape.input(params.tensors[next].second);
    bound.ids.push_back(id);
    ++next;
    return id;
  }

  void finish() const {
    require(next == params.tensors.size(), "model: unused trailing parameters");
  }

  int conv(const std::string& name, int x, int stride, int pad) {
    const int w = take(name + ".w");
    const int b = take(name + ".b");
    return tape.conv2d(x, w, b, stride, pad);
  }
  int tconv(const std::string& name, int x, int stride, int pad) {
    const int w = take(name + ".w");
    const int b = take(name + ".b");
    return tape.tconv2d(x, w, b, stride, pad);
  }
  int conv_v(const std::string& name, int x, int stride, int pad) {
    const int w = take(name + ".w");
    const int b = take(name + ".b");
    return tape.conv3d(x, w, b, stride, pad);
  }
  int tconv_v(const std::string& name, int x, int stride, int pad) {
    const int w = take(name + ".w");
    const int b = take(name + ".b");
    return tape.tconv3d(x, w, b, stride, pad);
  }
};

int cfg_of(const std::map<std::string, int>& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end())
    throw ValidationError("model: missing config key " + key);
  return it->second;
}

template <typename T>
BoundModel forward_resnet_gen(Tape<T>& tape, const ModelParamsT<T>& p,
                              int x) {
  const Tensor<T>& xv = tape.val(x);
  require(xv.ndim() == 4 && xv.dim(1) == 1,
          "resnet_gen: input must be [N,1,H,W]");
  require(xv.dim(2) % 4 == 0 && xv.dim(3) % 4 == 0,
          "resnet_gen: spatial dims must be divisible by 4");
  const int blocks = cfg_of(p.cfg, "blocks");
  BoundModel bound;
  Binder<T> b{tape, p, bound};
  int h = tape.relu(tape.instance_norm2d(b.conv("stem", x, 1, 3)));
  h = tape.relu(tape.instance_norm2d(b.conv("down1", h, 2, 1)));
  h = tape.relu(tape.instance_norm2d(b.conv("down2", h, 2, 1)));
  for (int i = 0; i < blocks; ++i) {
    const std::string base = "res" + std::to_string(i);
    int r = tape.relu(tape.instance_norm2d(b.conv(base + ".c1", h, 1, 1)));
    r = tape.instance_norm2d(b.conv(base + ".c2", r, 1, 1));
    h = tape.add(h, r);
  }
  h = tape.relu(tape.instance_norm2d(b.tconv("up1", h, 2, 1)));
  h = tape.relu(tape.instance_norm2d(b.tconv("up2", h, 2, 1)));
  h = tape.tanh_act(b.conv("head", h, 1, 3));
  b.finish();
  bound.out = h;
  return bound;
}

template <typename T>
BoundModel forward_unet_gen(Tape<T>& tape, const ModelParamsT<T>& p, int x) {
  const Tensor<T>& xv = tape.val(x);
  const int depth = cfg_of(p.cfg, "depth");
  require(xv.ndim() == 4 && xv.dim(1) == 1,
          "unet_gen: input must be [N,1,H,W]");
  const int div = 1 << depth;
  require(xv.dim(2) % div == 0 && xv.dim(3) % div == 0,
          "unet_gen: spatial dims must be divisible by 2^depth");
  BoundModel bound;
  Binder<T> b{tape, p, bound};
  std::vector<int> skips;
  int h = tape.relu(tape.instance_norm2d(b.conv("stem", x, 1, 1)));
  skips.push_back(h);
  for (int i = 1; i <= depth; ++i) {
    h = tape.relu(tape.instance_norm2d(
        b.conv("enc" + std::to_string(i), h, 2, 1)));
    if (i < depth) skips.push_back(h);
  }
  for (int i = depth; i >= 1; --i) {
    const std::string base = "dec" + std::to_string(i);
    h = tape.relu(tape.instance_norm2d(b.tconv(base + ".up", h, 2, 1)));
    h = tape.concat2d(h, skips[static_cast<std::size_t>(i - 1)]);
    h = tape.relu(tape.instance_norm2d(b.conv(base + ".fuse", h, 1, 1)));
  }
  h = tape.tanh_act(b.conv("head", h, 1, 1));
  b.finish();
  bound.out = h;
  return bound;
}

template <typename T>
BoundModel forward_patchgan(Tape<T>& tape, const ModelParamsT<T>& p, int x) {
  const Tensor<T>& xv = tape.val(x);
  require(xv.ndim() == 4 && xv.dim(1) == 1,
          "patchgan: input must be [N,1,H,W]");
  const int n_down = cfg_of(p.cfg, "down");
  BoundModel bound;
  Binder<T> b{tape, p, bound};
  int h = tape.lrelu(b.conv("l0", x, 2, 1), T(0.2));
  for (int i = 1; i < n_down; ++i) {
    h = b.conv("l" + std::to_string(i), h, 2, 1);
    h = tape.lrelu(tape.instance_norm2d(h), T(0.2));
  }
  h = b.conv("score", h, 1, 1);
  b.finish();
  bound.out = h;
  return bound;
}

template <typename T>
BoundModel forward_unet3d(Tape<T>& tape, const ModelParamsT<T>& p, int x) {
  const Tensor<T>& xv = tape.val(x);
  const int depth = cfg_of(p.cfg, "depth");
  require(xv.ndim() == 4 && xv.dim(0) == 1,
          "unet3d: input must be [1,D,H,W]");
  const int div = 1 << depth;
  require(xv.dim(1) % div == 0 && xv.dim(2) % div == 0 &&
              xv.dim(3) % div == 0,
          "unet3d: patch size incompatible with depth");
  BoundModel bound;
  Binder<T> b{tape, p, bound};
  // Leaky slope 0.01: at tiny widths a dead ReLU channel costs too much.
  const T sl = static_cast<T>(0.01);
  std::vector<int> skips;
  int h = tape.lrelu(tape.instance_norm3d(b.conv_v("stem", x, 1, 1)), sl);
  skips.push_back(h);
  for (int i = 1; i <= depth; ++i) {
    h = tape.lrelu(
        tape.instance_norm3d(b.conv_v("down" + std::to_string(i), h, 2, 1)),
        sl);
    if (i < depth) skips.push_back(h);
  }
  for (int i = depth; i >= 1; --i) {
    const std::string base = "up" + std::to_string(i);
    h = tape.lrelu(tape.instance_norm3d(b.tconv_v(base + ".up", h, 2, 1)), sl);
    h = tape.concat3d(h, skips[static_cast<std::size_t>(i - 1)]);
    h = tape.lrelu(tape.instance_norm3d(b.conv_v(base + ".fuse", h, 1, 1)),
                   sl);
  }
  h = b.conv_v("head", h, 1, 0);
  b.finish();
  bound.out = h;
  return bound;
}

}  // namespace

template <typename T>
Tensor<T>& ModelParamsT<T>::find(const std::string& name) {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValidationError("model: unknown parameter " + name);
}

template <typename T>
const Tensor<T>& ModelParamsT<T>::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValidationError("model: unknown parameter " + name);
}

template <typename T>
std::size_t ModelParamsT<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

ModelParams build_resnet_generator(int base, int n_blocks,
                                   std::uint64_t seed) {
  require(base >= 1, "resnet_gen: base width must be >= 1");
  require(n_blocks >= 1, "resnet_gen: needs at least one residual block");
  ModelParams p;
  p.arch = "resnet_gen";
  p.cfg = {{"base", base}, {"blocks", n_blocks}};
  p.init_seed = seed;
  Rng rng(derive_seed(seed, "model-init", 0));
  add_conv2d(p, rng, "stem", base, 1, 7);
  add_conv2d(p, rng, "down1", 2 * base, base, 3);
  add_conv2d(p, rng, "down2", 4 * base, 2 * base, 3);
  for (int i = 0; i < n_blocks; ++i) {
    const std::string name = "res" + std::to_string(i);
    add_conv2d(p, rng, name + ".c1", 4 * base, 4 * base, 3);
    add_conv2d(p, rng, name + ".c2", 4 * base, 4 * base, 3);
  }
  add_tconv2d(p, rng, "up1", 4 * base, 2 * base, 4);
  add_tconv2d(p, rng, "up2", 2 * base, base, 4);
  add_conv2d(p, rng, "head", 1, base, 7);
  return p;
}

ModelParams build_unet_generator(int base, int depth, std::uint64_t seed) {
  require(base >= 1, "unet_gen: base width must be >= 1");
  require(depth >= 1, "unet_gen: depth must be >= 1");
  ModelParams p;
  p.arch = "unet_gen";
  p.cfg = {{"base", base}, {"depth", depth}};
  p.init_seed = seed;
  Rng rng(derive_seed(seed, "model-init", 0));
  add_conv2d(p, rng, "stem", base, 1, 3);
  for (int i = 1; i <= depth; ++i)
    add_conv2d(p, rng, "enc" + std::to_string(i), base << i, base << (i - 1),
               3);
  for (int i = depth; i >= 1; --i) {
    const std::string name = "dec" + std::to_string(i);
    add_tconv2d(p, rng, name + ".up", base << i, base << (i - 1), 4);
    add_conv2d(p, rng, name + ".fuse", base << (i - 1), base << i, 3);
  }
  add_conv2d(p, rng, "head", 1, base, 3);
  return p;
}

ModelParams build_patchgan_discriminator(int width, int n_down,
                                         std::uint64_t seed) {
  require(width >= 1, "patchgan: width must be >= 1");
  require(n_down >= 1, "patchgan: needs at least one stride-2 layer");
  ModelParams p;
  p.arch = "patchgan";
  p.cfg = {{"width", width}, {"down", n_down}};
  p.init_seed = seed;
  Rng rng(derive_seed(seed, "model-init", 0));
  add_conv2d(p, rng, "l0", width, 1, 4);
  for (int i = 1; i < n_down; ++i)
    add_conv2d(p, rng, "l" + std::to_string(i), width << i, width << (i - 1),
               4);
  add_conv2d(p, rng, "score", 1, width << (n_down - 1), 4);
  return p;
}

ModelParams build_segmenter_3d(int base, int depth, int n_classes,
                               std::uint64_t seed) {
  require(base >= 1, "unet3d: base width must be >= 1");
  require(depth >= 1, "unet3d: depth must be >= 1");
  require(n_classes >= 2, "unet3d: needs at least two classes");
  ModelParams p;
  p.arch = "unet3d";
  p.cfg = {{"base", base}, {"depth", depth}, {"classes", n_classes}};
  p.init_seed = seed;
  Rng rng(derive_seed(seed, "model-init", 0));
  add_conv3d(p, rng, "stem", base, 1, 3);
  for (int i = 1; i <= depth; ++i)
    add_conv3d(p, rng, "down" + std::to_string(i), base << i, base << (i - 1),
               3);
  for (int i = depth; i >= 1; --i) {
    const std::string name = "up" + std::to_string(i);
    add_tconv3d(p, rng, name + ".up", base << i, base << (i - 1), 4);
    add_conv3d(p, rng, name + ".fuse", base << (i - 1), base << i, 3);
  }
  p.tensors.emplace_back("head.w",
                         init_weights(rng, {n_classes, base, 1, 1, 1}));
  p.tensors.emplace_back("head.b", Tensor<float>({n_classes}));
  return p;
}

ModelParams build_identity_generator() {
  ModelParams p;
  p.arch = "identity_gen";
  return p;
}

template <typename T>
BoundModel forward_model(Tape<T>& tape, const ModelParamsT<T>& params,
                         int x) {
  if (params.arch == "resnet_gen") return forward_resnet_gen(tape, params, x);
  if (params.arch == "unet_gen") return forward_unet_gen(tape, params, x);
  if (params.arch == "patchgan") return forward_patchgan(tape, params, x);
  if (params.arch == "unet3d") return forward_unet3d(tape, params, x);
  if (params.arch == "identity_gen") {
    BoundModel bound;
    bound.out = x;
    return bound;
  }
  throw ValidationError("model: unknown architecture " + params.arch);
}

template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape,
                                     const BoundModel& bound) {
  std::vector<Tensor<T>> grads;
  grads.reserve(bound.ids.size());
  for (const int id : bound.ids) grads.push_back(tape.grad(id));
  return grads;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;
template BoundModel forward_model<float>(Tape<float>&,
                                         const ModelParamsT<float>&, int);
template BoundModel forward_model<double>(Tape<double>&,
                                          const ModelParamsT<double>&, int);
template std::vector<Tensor<float>> collect_grads<float>(const Tape<float>&,
                                                         const BoundModel&);
template std::vector<Tensor<double>> collect_grads<double>(
    const Tape<double>&, const BoundModel&);

}  // namespace cmda
