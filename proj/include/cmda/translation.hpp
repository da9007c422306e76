#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmda/models.hpp"
#include "cmda/optim.hpp"
#include "cmda/resample.hpp"
#include "cmda/rng.hpp"
#include "cmda/tensor.hpp"
#include "cmda/volume.hpp"

namespace cmda {

struct TranslationConfig {
  double lambda_adv = 1.0;
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  double lr0 = 1.5e-4;
  int e_const = 100;
  int e_decay = 100;
  int batch = 10;
  int pool_capacity = 50;
  int slice = 64;
  // generator/discriminator sizes are configuration, not hard-coded: the
  // desk preset is small, the paper preset is base 64 with 9 blocks at 256.
  std::string gen_arch = "resnet_gen";  // resnet_gen | unet_gen | identity_gen
  int gen_base = 2;
  int gen_blocks = 2;
  int gen_depth = 2;
  int disc_width = 6;
  int disc_down = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// Constant for the first e_const epochs, then linear decay with a floor of
// one decay quantum so the final epoch still trains (lr0/e_decay, reaching
// zero one epoch past the end). Epochs are 1-based.
double lr_schedule(int epoch, const TranslationConfig& cfg);

// Replay buffer of generated slices. At capacity each fresh image is swapped
// with a stored one with probability 0.5, which feeds the discriminator a
// mix of current and historical fakes.
class ImagePool {
 public:
  ImagePool(int capacity, std::uint64_t seed);
  // fresh [N,1,H,W]; returns the batch to score, updating the pool
  Tensor<float> query(const Tensor<float>& fresh);
  std::size_t size() const { return store_.size(); }

 private:
  int capacity_;
  Rng rng_;
  std::vector<std::vector<float>> store_;
};

struct StepLosses {
  double adv_a = 0.0;  // lsgan(D_B(G_AB(a)), 1)
  double adv_b = 0.0;  // lsgan(D_A(G_BA(b)), 1)
  double cyc_a = 0.0;  // l1(G_BA(G_AB(a)), a)
  double cyc_b = 0.0;  // l1(G_AB(G_BA(b)), b)
  double id_a = 0.0;   // l1(G_BA(a), a)
  double id_b = 0.0;   // l1(G_AB(b), b)
  double d_a = 0.0;
  double d_b = 0.0;
  double total = 0.0;  // generator objective as optimized

  double generator_total(const TranslationConfig& cfg) const;
  void accumulate(const StepLosses& s);
  void scale(double f);
};

struct CycleGanModels {
  ModelParams g_ab, g_ba, d_a, d_b;
  OptimState opt_g_ab, opt_g_ba, opt_d_a, opt_d_b;
};

CycleGanModels init_cyclegan(const TranslationConfig& cfg);

// One optimization step: a joint generator update from the six-component
// objective, then one update per discriminator against real/pooled-fake.
StepLosses cyclegan_step(CycleGanModels& models, ImagePool& pool_a,
                         ImagePool& pool_b, const Tensor<float>& batch_a,
                         const Tensor<float>& batch_b,
                         const TranslationConfig& cfg, double lr);

struct EpochStats {
  int epoch = 0;
  StepLosses mean;
  double lr = 0.0;
};

struct TranslationResult {
  ModelParams g_ab, g_ba, d_a, d_b;
  std::vector<EpochStats> history;
};

// Trains on preprocessed slices in [-1,1] at a common size. An epoch is one
// pass over the larger slice set; the smaller one cycles with reshuffling.
TranslationResult train_translation(const std::vector<Image2D>& a_slices,
                                    const std::vector<Image2D>& b_slices,
                                    const TranslationConfig& cfg);

std::string history_to_csv(const std::vector<EpochStats>& history);

// Min-max normalizes the volume to [-1,1], slices along z and resizes every
// slice to size x size; the training-side preprocessing for the translator.
std::vector<Image2D> volume_to_slices(const Volume3D& vol, int size);

// slice_z -> minmax normalize -> resize to cfg.slice -> generator -> resize
// back -> reassemble. Output keeps the input grid and stays in the
// generator's [-1,1] range.
Volume3D translate_volume(const Volume3D& vol, const ModelParams& gen,
                          const TranslationConfig& cfg);

}  // namespace cmda
