#include "cmda/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "cmda/autodiff.hpp"
#include "cmda/error.hpp"
#include "cmda/optim.hpp"
#include "cmda/resample.hpp"
#include "cmda/rng.hpp"

namespace cmda {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

int cfg_int(const ModelParams& p, const std::string& key) {
  const auto it = p.cfg.find(key);
  require(it != p.cfg.end(), "segmenter: model lacks cfg key " + key);
  return it->second;
}

// [1,D,H,W] tensor over the volume's native (k,j,i) layout.
Tensor<float> volume_tensor(const Volume3D& vol) {
  Tensor<float> t({1, vol.nz(), vol.ny(), vol.nx()});
  std::memcpy(t.data(), vol.voxels().data(),
              vol.voxels().size() * sizeof(float));
  return t;
}

Tensor<float> flip_tensor(const Tensor<float>& t, bool fx, bool fy, bool fz) {
  const int d = t.dim(1), h = t.dim(2), w = t.dim(3);
  Tensor<float> out(t.shape());
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        const int sk = fz ? d - 1 - k : k;
        const int sj = fy ? h - 1 - j : j;
        const int si = fx ? w - 1 - i : i;
        out[(static_cast<std::size_t>(k) * h + j) * w + i] =
            t[(static_cast<std::size_t>(sk) * h + sj) * w + si];
      }
  return out;
}

LabelVolume flip_labels(const LabelVolume& l, bool fx, bool fy, bool fz) {
  LabelVolume out(l.nx(), l.ny(), l.nz(), l.spacing(), l.origin());
  for (int k = 0; k < l.nz(); ++k)
    for (int j = 0; j < l.ny(); ++j)
      for (int i = 0; i < l.nx(); ++i)
        out.at(i, j, k) = l.at(fx ? l.nx() - 1 - i : i, fy ? l.ny() - 1 - j : j,
                               fz ? l.nz() - 1 - k : k);
  return out;
}

void add_into(std::vector<Tensor<float>>& acc,
              const std::vector<Tensor<float>>& more) {
  if (acc.empty()) {
    acc = more;
    return;
  }
  require(acc.size() == more.size(), "segmenter: gradient list mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i].numel(); ++j) acc[i][j] += more[i][j];
}

int round_up(int n, int m) { return (n + m - 1) / m * m; }

// Forward a [1,D,H,W] patch and write argmax labels (ties toward the lower
// class) into out at the given offsets, skipping padded voxels.
void predict_patch(const ModelParams& model, const Tensor<float>& x,
                   LabelVolume& out, int i0, int j0, int k0) {
  Tape<float> tape;
  const BoundModel bound = forward_model(tape, model, tape.input(x));
  const Tensor<float>& logits = tape.val(bound.out);
  const int nc = logits.dim(0);
  const int d = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const std::size_t vol = static_cast<std::size_t>(d) * h * w;
  for (int k = 0; k < d && k0 + k < out.nz(); ++k)
    for (int j = 0; j < h && j0 + j < out.ny(); ++j)
      for (int i = 0; i < w && i0 + i < out.nx(); ++i) {
        const std::size_t at = (static_cast<std::size_t>(k) * h + j) * w + i;
        int best = 0;
        float top = logits[at];
        for (int c = 1; c < nc; ++c) {
          const float v = logits[c * vol + at];
          if (v > top) {
            top = v;
            best = c;
          }
        }
        out.at(i0 + i, j0 + j, k0 + k) = static_cast<std::uint8_t>(best);
      }
}

Tensor<float> padded_block(const Volume3D& vol, int i0, int j0, int k0, int w,
                           int h, int d) {
  Tensor<float> t({1, d, h, w});
  for (int k = 0; k < d; ++k) {
    if (k0 + k >= vol.nz()) break;
    for (int j = 0; j < h; ++j) {
      if (j0 + j >= vol.ny()) break;
      const int run = std::min(w, vol.nx() - i0);
      std::memcpy(
          t.data() + (static_cast<std::size_t>(k) * h + j) * w,
          vol.voxels().data() + vol.index(i0, j0 + j, k0 + k),
          static_cast<std::size_t>(run) * sizeof(float));
    }
  }
  return t;
}

}  // namespace

void SegTrainConfig::validate() const {
  require(epochs >= 1, "segmenter: epochs must be >= 1");
  require(lr > 0.0, "segmenter: lr must be positive");
  require(batch >= 1, "segmenter: batch must be >= 1");
  require(base >= 1 && depth >= 1, "segmenter: model size must be >= 1");
  require(classes >= 2, "segmenter: needs at least two classes");
  const int div = 1 << depth;
  require(patch >= div && patch % div == 0,
          "segmenter: patch size must be a positive multiple of 2^depth");
}

SegResult train_segmenter(const std::vector<SegCase>& cases,
                          const SegTrainConfig& cfg,
                          const ModelParams* warm_start) {
  cfg.validate();
  require(!cases.empty(), "segmenter: no training cases");
  if (warm_start != nullptr) {
    require(warm_start->arch == "unet3d",
            "segmenter: warm start is not a segmenter");
    require(cfg_int(*warm_start, "base") == cfg.base &&
                cfg_int(*warm_start, "depth") == cfg.depth &&
                cfg_int(*warm_start, "classes") == cfg.classes,
            "segmenter: warm start shape differs from config");
  }
  const int div = 1 << cfg.depth;
  std::vector<Tensor<float>> images;
  images.reserve(cases.size());
  for (const auto& [vol, lab] : cases) {
    vol.validate();
    require(lab.same_grid(vol), "segmenter: image and label grids differ");
    require(vol.nx() % div == 0 && vol.ny() % div == 0 && vol.nz() % div == 0,
            "segmenter: volume dims must divide 2^depth");
    for (std::uint8_t v : lab.labels())
      require(v < cfg.classes, "segmenter: label value exceeds class count");
    Volume3D norm = vol;
    normalize(norm, NormMode::kZScore);
    images.push_back(volume_tensor(norm));
  }

  SegResult result;
  result.model = warm_start != nullptr
                     ? *warm_start
                     : build_segmenter_3d(cfg.base, cfg.depth, cfg.classes,
                                          derive_seed(cfg.seed, "seg-init", 0));
  OptimState opt = init_optim(result.model, 0.9, 0.999);
  Rng shuffle_rng(derive_seed(cfg.seed, "seg-shuffle", 0));
  Rng aug_rng(derive_seed(cfg.seed, "seg-aug", 0));

  const int n = static_cast<int>(cases.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  result.history.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int done = 0; done < n; done += cfg.batch) {
      const int bs = std::min(cfg.batch, n - done);
      std::vector<Tensor<float>> grads;
      for (int b = 0; b < bs; ++b) {
        const int idx = order[static_cast<std::size_t>(done + b)];
        Tensor<float> x = images[static_cast<std::size_t>(idx)];
        LabelVolume lab = cases[static_cast<std::size_t>(idx)].second;
        if (cfg.flips) {
          const bool fx = aug_rng.bernoulli(0.5);
          const bool fy = aug_rng.bernoulli(0.5);
          const bool fz = aug_rng.bernoulli(0.5);
          if (fx || fy || fz) {
            x = flip_tensor(x, fx, fy, fz);
            lab = flip_labels(lab, fx, fy, fz);
          }
        }
        Tape<float> tape;
        const BoundModel bound =
            forward_model(tape, result.model, tape.input(std::move(x)));
        const int loss = tape.dice_ce_loss(bound.out, lab);
        tape.backward(loss);
        add_into(grads, collect_grads(tape, bound));
        epoch_loss += static_cast<double>(tape.val(loss).data()[0]);
      }
      if (bs > 1)
        for (auto& g : grads)
          for (std::size_t j = 0; j < g.numel(); ++j)
            g[j] /= static_cast<float>(bs);
      adam_step(result.model, grads, opt, cfg.lr);
    }
    result.history.push_back({epoch, epoch_loss / n});
  }
  return result;
}

LabelVolume predict(const Volume3D& vol, const ModelParams& model,
                    const PredictOptions& opts) {
  require(model.arch == "unet3d", "predict: model is not a segmenter");
  vol.validate();
  const int depth = cfg_int(model, "depth");
  const int div = 1 << depth;
  require(opts.tile == 0 || (opts.tile >= div && opts.tile % div == 0),
          "predict: tile must be a multiple of 2^depth");

  Volume3D norm = vol;
  normalize(norm, NormMode::kZScore);
  LabelVolume out(vol.nx(), vol.ny(), vol.nz(), vol.spacing(), vol.origin());

  const bool compatible =
      vol.nx() % div == 0 && vol.ny() % div == 0 && vol.nz() % div == 0;
  const bool oversize =
      opts.tile > 0 && (vol.nx() > opts.tile || vol.ny() > opts.tile ||
                        vol.nz() > opts.tile);

  if (oversize) {
    for (int k0 = 0; k0 < vol.nz(); k0 += opts.tile)
      for (int j0 = 0; j0 < vol.ny(); j0 += opts.tile)
        for (int i0 = 0; i0 < vol.nx(); i0 += opts.tile) {
          const int w = round_up(std::min(opts.tile, vol.nx() - i0), div);
          const int h = round_up(std::min(opts.tile, vol.ny() - j0), div);
          const int d = round_up(std::min(opts.tile, vol.nz() - k0), div);
          predict_patch(model, padded_block(norm, i0, j0, k0, w, h, d), out,
                        i0, j0, k0);
        }
    return out;
  }

  if (compatible && !opts.force_pad_path) {
    predict_patch(model, volume_tensor(norm), out, 0, 0, 0);
    return out;
  }
  predict_patch(model,
                padded_block(norm, 0, 0, 0, round_up(vol.nx(), div),
                             round_up(vol.ny(), div), round_up(vol.nz(), div)),
                out, 0, 0, 0);
  return out;
}

std::string seg_history_to_csv(const std::vector<SegEpochStats>& history) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g\n", e.epoch, e.loss);
    out += buf;
  }
  return out;
}

}  // namespace cmda
