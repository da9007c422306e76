#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cmda/manifest.hpp"
#include "cmda/volume.hpp"

namespace cmda {

struct Range {
  float lo = 0.0f;
  float hi = 0.0f;
};

// Per-class mean intensities plus texture amplitude for one modality.
struct ModalityMap {
  float air = 0.0f;
  float head = 0.0f;
  float tumor = 0.0f;
  float cochlea = 0.0f;
  float texture_amp = 0.0f;
};

// Procedural anatomy: one head ellipsoid, one tumor blob (class 1) with an
// adjacent small cochlea ball (class 2), rendered into two modalities over
// identical geometry. Defaults target the 64x64x16 desk grid.
struct PhantomSpec {
  int nx = 64, ny = 64, nz = 16;
  Spacing spacing{1.0f, 1.0f, 1.5f};

  Range head_rx{23.0f, 27.0f};
  Range head_ry{21.0f, 25.0f};
  Range head_rz{5.2f, 6.2f};
  Range tumor_r{6.0f, 8.5f};
  float tumor_rz_factor = 0.5f;
  Range cochlea_r{3.0f, 4.0f};

  ModalityMap source_map{0.05f, 0.35f, 0.85f, 0.62f, 0.04f};
  ModalityMap target_map{0.05f, 0.68f, 0.26f, 0.92f, 0.06f};
  float contrast_gap = 0.25f;
  float noise_sigma = 0.03f;
  float bias_amp = 0.12f;

  std::uint64_t seed = 1234;

  void validate() const;
};

struct CaseRecord {
  std::string case_id;
  Domain domain = Domain::kSource;
  Volume3D image;
  LabelVolume labels;
};

// Cohort case-seed bases keep source and target seed ranges disjoint, so the
// two training sets are unpaired.
inline constexpr std::uint64_t kSourceSeedBase = 0;
inline constexpr std::uint64_t kTargetTrainSeedBase = 1'000'000;
inline constexpr std::uint64_t kTargetEvalSeedBase = 2'000'000;

// Deterministic in (spec, case_seed, domain). Geometry and labels depend only
// on (spec geometry fields, case_seed); the domain selects the modality map.
CaseRecord gen_case(const PhantomSpec& spec, std::uint64_t case_seed, Domain domain);

// Writes images/, labels/ (source only), heldout/labels/ (all target cases)
// and heldout/eval_manifest.txt under data_root, plus the returned manifest
// at data_root/manifest.txt. Manifest paths are relative to the manifest file.
Manifest gen_dataset(const PhantomSpec& spec, int n_source, int n_target_train,
                     int n_target_eval, std::uint64_t master_seed,
                     const std::filesystem::path& data_root);

}  // namespace cmda
