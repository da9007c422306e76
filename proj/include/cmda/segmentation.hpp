#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmda/models.hpp"
#include "cmda/volume.hpp"

namespace cmda {

// One supervised training example: an intensity volume with its label map.
using SegCase = std::pair<Volume3D, LabelVolume>;

struct SegTrainConfig {
  int epochs = 40;
  double lr = 1e-3;
  int batch = 1;      // volumes accumulated per optimizer step
  int patch = 64;     // tile edge for oversized inputs; multiple of 2^depth
  bool flips = true;  // axis-flip augmentation
  int base = 2;
  int depth = 2;
  int classes = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegEpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean dice+ce over the epoch's volumes
};

struct SegResult {
  ModelParams model;
  std::vector<SegEpochStats> history;
};

// Trains a 3D segmenter on the cases. Volumes are z-scored per case; every
// dimension must divide 2^depth (whole-volume steps, no patching). A fresh
// model is initialized from cfg unless warm_start supplies parameters of the
// same architecture; the optimizer state is always fresh.
SegResult train_segmenter(const std::vector<SegCase>& cases,
                          const SegTrainConfig& cfg,
                          const ModelParams* warm_start = nullptr);

struct PredictOptions {
  // Routes through the pad-and-crop path even when dims already divide
  // 2^depth; the result must not change.
  bool force_pad_path = false;
  // When > 0, oversized volumes are split into non-overlapping tiles of this
  // edge length (multiple of 2^depth) and stitched after per-tile argmax.
  int tile = 0;
};

// Per-voxel argmax labels, ties toward the lower class index. Output grid
// matches the input; incompatible dims are zero-padded then cropped.
LabelVolume predict(const Volume3D& vol, const ModelParams& model,
                    const PredictOptions& opts = {});

std::string seg_history_to_csv(const std::vector<SegEpochStats>& history);

}  // namespace cmda
