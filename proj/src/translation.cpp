#include "cmda/translation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "cmda/error.hpp"

namespace cmda {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// Pulls indices from a shuffled order, reshuffling whenever a pass ends.
struct IndexStream {
  std::vector<int> order;
  std::size_t pos = 0;
  Rng rng;

  IndexStream(int n, std::uint64_t seed) : rng(seed) {
    order.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
  }

  int next() {
    if (pos == order.size()) {
      rng.shuffle(order);
      pos = 0;
    }
    return order[pos++];
  }
};

Tensor<float> gather_batch(const std::vector<Image2D>& slices,
                           IndexStream& stream, int count, int size) {
  Tensor<float> batch({count, 1, size, size});
  const std::size_t sp = static_cast<std::size_t>(size) * size;
  for (int i = 0; i < count; ++i) {
    const Image2D& img = slices[static_cast<std::size_t>(stream.next())];
    std::memcpy(batch.data() + static_cast<std::size_t>(i) * sp, img.v.data(),
                sp * sizeof(float));
  }
  return batch;
}

void add_into(std::vector<Tensor<float>>& acc,
              const std::vector<Tensor<float>>& more) {
  if (acc.empty()) {
    acc = more;
    return;
  }
  require(acc.size() == more.size(), "cyclegan: gradient list mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i].numel(); ++j) acc[i][j] += more[i][j];
}

double scalar(const Tape<float>& tape, int node) {
  return static_cast<double>(tape.val(node).data()[0]);
}

}  // namespace

void TranslationConfig::validate() const {
  require(lambda_adv >= 0.0 && lambda_cyc >= 0.0 && lambda_id >= 0.0,
          "translation: loss weights must be non-negative");
  require(lr0 > 0.0, "translation: lr0 must be positive");
  require(e_const >= 0 && e_decay >= 0, "translation: epochs must be >= 0");
  require(e_const + e_decay >= 1, "translation: needs at least one epoch");
  require(batch >= 1, "translation: batch must be >= 1");
  require(pool_capacity >= 0, "translation: pool capacity must be >= 0");
  require(slice >= 8, "translation: slice size too small");
  if (gen_arch == "resnet_gen") {
    require(slice % 4 == 0, "translation: slice size must divide by 4");
  } else if (gen_arch == "unet_gen") {
    require(slice % (1 << gen_depth) == 0,
            "translation: slice size must divide by 2^depth");
  } else {
    require(gen_arch == "identity_gen",
            "translation: unknown generator architecture " + gen_arch);
  }
  require(gen_base >= 1 && disc_width >= 1 && disc_down >= 1,
          "translation: model widths must be >= 1");
}

double lr_schedule(int epoch, const TranslationConfig& cfg) {
  require(epoch >= 1 && epoch <= cfg.e_const + cfg.e_decay,
          "lr_schedule: epoch out of range");
  if (epoch <= cfg.e_const) return cfg.lr0;
  const int left = cfg.e_const + cfg.e_decay - epoch;
  const int k = std::max(left, 1);
  return cfg.lr0 * static_cast<double>(k) / static_cast<double>(cfg.e_decay);
}

ImagePool::ImagePool(int capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
  if (capacity < 0) throw ValidationError("image pool: negative capacity");
}

Tensor<float> ImagePool::query(const Tensor<float>& fresh) {
  if (fresh.ndim() != 4)
    throw ValidationError("image pool: expected [N,1,H,W] batch");
  const std::size_t sp = static_cast<std::size_t>(fresh.dim(1)) *
                         fresh.dim(2) * fresh.dim(3);
  Tensor<float> out = fresh;
  for (int i = 0; i < fresh.dim(0); ++i) {
    const float* src = fresh.data() + static_cast<std::size_t>(i) * sp;
    if (static_cast<int>(store_.size()) < capacity_) {
      store_.emplace_back(src, src + sp);
      continue;
    }
    if (capacity_ == 0) continue;
    if (rng_.uniform() < 0.5) {
      const auto j = static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<std::int64_t>(capacity_) - 1));
      require(store_[j].size() == sp, "image pool: slice size changed");
      float* dst = out.data() + static_cast<std::size_t>(i) * sp;
      std::memcpy(dst, store_[j].data(), sp * sizeof(float));
      store_[j].assign(src, src + sp);
    }
  }
  return out;
}

double StepLosses::generator_total(const TranslationConfig& cfg) const {
  return cfg.lambda_adv * adv_a + cfg.lambda_adv * adv_b +
         cfg.lambda_cyc * cyc_a + cfg.lambda_cyc * cyc_b +
         cfg.lambda_id * id_b + cfg.lambda_id * id_a;
}

void StepLosses::accumulate(const StepLosses& s) {
  adv_a += s.adv_a;
  adv_b += s.adv_b;
  cyc_a += s.cyc_a;
  cyc_b += s.cyc_b;
  id_a += s.id_a;
  id_b += s.id_b;
  d_a += s.d_a;
  d_b += s.d_b;
  total += s.total;
}

void StepLosses::scale(double f) {
  adv_a *= f;
  adv_b *= f;
  cyc_a *= f;
  cyc_b *= f;
  id_a *= f;
  id_b *= f;
  d_a *= f;
  d_b *= f;
  total *= f;
}

CycleGanModels init_cyclegan(const TranslationConfig& cfg) {
  cfg.validate();
  CycleGanModels m;
  if (cfg.gen_arch == "resnet_gen") {
    m.g_ab = build_resnet_generator(cfg.gen_base, cfg.gen_blocks,
                                    derive_seed(cfg.seed, "gan-init", 0));
    m.g_ba = build_resnet_generator(cfg.gen_base, cfg.gen_blocks,
                                    derive_seed(cfg.seed, "gan-init", 1));
  } else if (cfg.gen_arch == "unet_gen") {
    m.g_ab = build_unet_generator(cfg.gen_base, cfg.gen_depth,
                                  derive_seed(cfg.seed, "gan-init", 0));
    m.g_ba = build_unet_generator(cfg.gen_base, cfg.gen_depth,
                                  derive_seed(cfg.seed, "gan-init", 1));
  } else {
    m.g_ab = build_identity_generator();
    m.g_ba = build_identity_generator();
  }
  m.d_a = build_patchgan_discriminator(cfg.disc_width, cfg.disc_down,
                                       derive_seed(cfg.seed, "gan-init", 2));
  m.d_b = build_patchgan_discriminator(cfg.disc_width, cfg.disc_down,
                                       derive_seed(cfg.seed, "gan-init", 3));
  m.opt_g_ab = init_optim(m.g_ab, 0.5, 0.999);
  m.opt_g_ba = init_optim(m.g_ba, 0.5, 0.999);
  m.opt_d_a = init_optim(m.d_a, 0.5, 0.999);
  m.opt_d_b = init_optim(m.d_b, 0.5, 0.999);
  return m;
}

StepLosses cyclegan_step(CycleGanModels& models, ImagePool& pool_a,
                         ImagePool& pool_b, const Tensor<float>& batch_a,
                         const Tensor<float>& batch_b,
                         const TranslationConfig& cfg, double lr) {
  require(batch_a.ndim() == 4 && batch_b.ndim() == 4 &&
              batch_a.dim(1) == 1 && batch_b.dim(1) == 1,
          "cyclegan: batches must be [N,1,H,W]");
  require(batch_a.dim(2) == batch_b.dim(2) &&
              batch_a.dim(3) == batch_b.dim(3),
          "cyclegan: slice sizes differ between domains");

  StepLosses out;
  Tensor<float> fake_a_val, fake_b_val;
  {
    Tape<float> tape;
    const int ia = tape.input(batch_a);
    const int ib = tape.input(batch_b);
    BoundModel fake_b = forward_model(tape, models.g_ab, ia);
    BoundModel fake_a = forward_model(tape, models.g_ba, ib);
    BoundModel rec_a = forward_model(tape, models.g_ba, fake_b.out);
    BoundModel rec_b = forward_model(tape, models.g_ab, fake_a.out);
    BoundModel idt_b = forward_model(tape, models.g_ab, ib);
    BoundModel idt_a = forward_model(tape, models.g_ba, ia);
    BoundModel score_b = forward_model(tape, models.d_b, fake_b.out);
    BoundModel score_a = forward_model(tape, models.d_a, fake_a.out);

    const int adv_a = tape.lsgan_loss(score_b.out, 1.0f);
    const int adv_b = tape.lsgan_loss(score_a.out, 1.0f);
    const int cyc_a = tape.l1_loss(rec_a.out, ia);
    const int cyc_b = tape.l1_loss(rec_b.out, ib);
    const int id_b = tape.l1_loss(idt_b.out, ib);
    const int id_a = tape.l1_loss(idt_a.out, ia);
    const float wa = static_cast<float>(cfg.lambda_adv);
    const float wc = static_cast<float>(cfg.lambda_cyc);
    const float wi = static_cast<float>(cfg.lambda_id);
    const int total = tape.weighted_sum(
        {{wa, adv_a}, {wa, adv_b}, {wc, cyc_a}, {wc, cyc_b}, {wi, id_b},
         {wi, id_a}});
    tape.backward(total);

    std::vector<Tensor<float>> g_ab_grads = collect_grads(tape, fake_b);
    add_into(g_ab_grads, collect_grads(tape, rec_b));
    add_into(g_ab_grads, collect_grads(tape, idt_b));
    std::vector<Tensor<float>> g_ba_grads = collect_grads(tape, fake_a);
    add_into(g_ba_grads, collect_grads(tape, rec_a));
    add_into(g_ba_grads, collect_grads(tape, idt_a));
    adam_step(models.g_ab, g_ab_grads, models.opt_g_ab, lr);
    adam_step(models.g_ba, g_ba_grads, models.opt_g_ba, lr);

    out.adv_a = scalar(tape, adv_a);
    out.adv_b = scalar(tape, adv_b);
    out.cyc_a = scalar(tape, cyc_a);
    out.cyc_b = scalar(tape, cyc_b);
    out.id_a = scalar(tape, id_a);
    out.id_b = scalar(tape, id_b);
    out.total = scalar(tape, total);
    fake_b_val = tape.val(fake_b.out);
    fake_a_val = tape.val(fake_a.out);
  }

  const Tensor<float> pooled_b = pool_b.query(fake_b_val);
  const Tensor<float> pooled_a = pool_a.query(fake_a_val);

  {
    Tape<float> tape;
    BoundModel real = forward_model(tape, models.d_b, tape.input(batch_b));
    BoundModel fake = forward_model(tape, models.d_b, tape.input(pooled_b));
    const int l_real = tape.lsgan_loss(real.out, 1.0f);
    const int l_fake = tape.lsgan_loss(fake.out, 0.0f);
    const int loss = tape.weighted_sum({{0.5f, l_real}, {0.5f, l_fake}});
    tape.backward(loss);
    std::vector<Tensor<float>> grads = collect_grads(tape, real);
    add_into(grads, collect_grads(tape, fake));
    adam_step(models.d_b, grads, models.opt_d_b, lr);
    out.d_b = scalar(tape, loss);
  }
  {
    Tape<float> tape;
    BoundModel real = forward_model(tape, models.d_a, tape.input(batch_a));
    BoundModel fake = forward_model(tape, models.d_a, tape.input(pooled_a));
    const int l_real = tape.lsgan_loss(real.out, 1.0f);
    const int l_fake = tape.lsgan_loss(fake.out, 0.0f);
    const int loss = tape.weighted_sum({{0.5f, l_real}, {0.5f, l_fake}});
    tape.backward(loss);
    std::vector<Tensor<float>> grads = collect_grads(tape, real);
    add_into(grads, collect_grads(tape, fake));
    adam_step(models.d_a, grads, models.opt_d_a, lr);
    out.d_a = scalar(tape, loss);
  }
  return out;
}

TranslationResult train_translation(const std::vector<Image2D>& a_slices,
                                    const std::vector<Image2D>& b_slices,
                                    const TranslationConfig& cfg) {
  cfg.validate();
  require(!a_slices.empty() && !b_slices.empty(),
          "translation: both domains need slices");
  for (const auto& s : a_slices)
    require(s.h == cfg.slice && s.w == cfg.slice,
            "translation: slice size mismatch in domain A");
  for (const auto& s : b_slices)
    require(s.h == cfg.slice && s.w == cfg.slice,
            "translation: slice size mismatch in domain B");

  CycleGanModels models = init_cyclegan(cfg);
  ImagePool pool_a(cfg.pool_capacity, derive_seed(cfg.seed, "gan-pool-a", 0));
  ImagePool pool_b(cfg.pool_capacity, derive_seed(cfg.seed, "gan-pool-b", 0));
  IndexStream stream_a(static_cast<int>(a_slices.size()),
                       derive_seed(cfg.seed, "gan-shuffle-a", 0));
  IndexStream stream_b(static_cast<int>(b_slices.size()),
                       derive_seed(cfg.seed, "gan-shuffle-b", 0));

  const int n_large = static_cast<int>(
      std::max(a_slices.size(), b_slices.size()));
  const int n_epochs = cfg.e_const + cfg.e_decay;
  TranslationResult result;
  result.history.reserve(static_cast<std::size_t>(n_epochs));
  for (int epoch = 1; epoch <= n_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    StepLosses sum;
    int n_steps = 0;
    for (int done = 0; done < n_large; done += cfg.batch) {
      const int bs = std::min(cfg.batch, n_large - done);
      const Tensor<float> ba =
          gather_batch(a_slices, stream_a, bs, cfg.slice);
      const Tensor<float> bb =
          gather_batch(b_slices, stream_b, bs, cfg.slice);
      sum.accumulate(
          cyclegan_step(models, pool_a, pool_b, ba, bb, cfg, lr));
      ++n_steps;
    }
    sum.scale(1.0 / n_steps);
    result.history.push_back({epoch, sum, lr});
  }
  result.g_ab = std::move(models.g_ab);
  result.g_ba = std::move(models.g_ba);
  result.d_a = std::move(models.d_a);
  result.d_b = std::move(models.d_b);
  return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,adv_a,adv_b,cyc_a,cyc_b,id_a,id_b,lr\n";
  char buf[256];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch,
                  e.mean.adv_a, e.mean.adv_b, e.mean.cyc_a, e.mean.cyc_b,
                  e.mean.id_a, e.mean.id_b, e.lr);
    out += buf;
  }
  return out;
}

std::vector<Image2D> volume_to_slices(const Volume3D& vol, int size) {
  require(size >= 1, "translation: slice size must be >= 1");
  Volume3D norm = vol;
  normalize(norm, NormMode::kMinMax);
  SliceStack stack = slice_z(norm);
  std::vector<Image2D> out;
  out.reserve(stack.slices.size());
  for (const auto& s : stack.slices) {
    if (s.h == size && s.w == size)
      out.push_back(s);
    else
      out.push_back(resize_bicubic(s, size, size));
  }
  return out;
}

Volume3D translate_volume(const Volume3D& vol, const ModelParams& gen,
                          const TranslationConfig& cfg) {
  require(gen.arch == "resnet_gen" || gen.arch == "unet_gen" ||
              gen.arch == "identity_gen",
          "translate: model is not a slice generator");
  vol.validate();
  std::vector<Image2D> slices = volume_to_slices(vol, cfg.slice);
  const int nz = static_cast<int>(slices.size());
  const std::size_t sp = static_cast<std::size_t>(cfg.slice) * cfg.slice;
  Tensor<float> batch({nz, 1, cfg.slice, cfg.slice});
  for (int k = 0; k < nz; ++k)
    std::memcpy(batch.data() + static_cast<std::size_t>(k) * sp,
                slices[static_cast<std::size_t>(k)].v.data(),
                sp * sizeof(float));

  Tape<float> tape;
  BoundModel bound = forward_model(tape, gen, tape.input(batch));
  const Tensor<float>& out = tape.val(bound.out);

  SliceStack stack;
  stack.nx = vol.nx();
  stack.ny = vol.ny();
  stack.nz = nz;
  stack.spacing = vol.spacing();
  stack.slices.reserve(static_cast<std::size_t>(nz));
  for (int k = 0; k < nz; ++k) {
    Image2D img(cfg.slice, cfg.slice);
    std::memcpy(img.v.data(), out.data() + static_cast<std::size_t>(k) * sp,
                sp * sizeof(float));
    stack.slices.push_back(std::move(img));
  }
  return reassemble(stack, vol.nx(), vol.ny(), vol.nz(), vol.spacing(),
                    vol.origin());
}

}  // namespace cmda
