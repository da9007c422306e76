#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmda/metrics.hpp"
#include "cmda/segmentation.hpp"

namespace cmda {

struct SelfTrainConfig {
  int n_iters = 3;
  SegTrainConfig seg;  // per-iteration settings; seg.seed is overridden with
                       // derive_seed(seed, "selftrain-iter", k)
  bool retrain_from_scratch = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalCase {
  std::string case_id;
  Volume3D image;
  LabelVolume reference;
};

struct IterationResult {
  int iteration = 0;
  ModelParams model;
  std::vector<LabelVolume> pseudo_labels;  // one per real target; empty at 0
  std::vector<SegEpochStats> history;
  MetricsReport report;
  int n_train_cases = 0;
};

struct SelfTrainResult {
  std::vector<IterationResult> iters;  // 1 + n_iters entries

  const ModelParams& final_model() const { return iters.back().model; }
};

// predict() over every volume, in order.
std::vector<LabelVolume> generate_pseudo_labels(
    const ModelParams& model, const std::vector<Volume3D>& vols);

// Iteration 0 trains on the translated source cases alone; each later
// iteration labels the real target volumes with the previous model and trains
// on the union. Reference labels enter only through the eval metrics.
SelfTrainResult run_self_training(const std::vector<SegCase>& pseudo_target_cases,
                                  const std::vector<Volume3D>& real_target_vols,
                                  const std::vector<EvalCase>& eval_cases,
                                  const SelfTrainConfig& cfg);

// One row per iteration with the report aggregates (mean and sd columns).
std::string selftrain_summary_csv(const SelfTrainResult& result);

}  // namespace cmda
