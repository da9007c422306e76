#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cmda/phantom.hpp"
#include "cmda/segmentation.hpp"
#include "cmda/translation.hpp"

namespace cmda {

// Library defaults carry the full-scale schedule; the experiment default is
// the desk-scale run that fits a CPU budget.
inline TranslationConfig desk_translation_defaults() {
  TranslationConfig t;
  t.e_const = 30;
  t.e_decay = 30;
  return t;
}

struct ExperimentConfig {
  std::filesystem::path data_root = "data";
  std::filesystem::path run_dir = "run";
  std::uint64_t master_seed = 0;
  std::string generator = "resnet";  // resnet | unet

  int n_source = 30;
  int n_target_train = 30;
  int n_target_eval = 10;
  PhantomSpec phantom;

  TranslationConfig translation = desk_translation_defaults();
  SegTrainConfig seg;
  int n_iters = 3;
  bool retrain_from_scratch = true;

  // Translation settings with the generator choice and master seed applied.
  TranslationConfig resolved_translation() const;
  void validate() const;
};

// Strict parser: unknown keys anywhere are errors, missing keys take the
// documented defaults. "{}" yields the default experiment.
ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::filesystem::path& path);

}  // namespace cmda
