#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmda/config.hpp"

namespace cmda {

struct StageOutcome {
  std::string stage;
  bool ran = false;  // false: outputs were already present and force was off
  std::string message;
};

// Prepends root to data_root and run_dir when they are relative.
void apply_run_root(ExperimentConfig& cfg, const std::filesystem::path& root);

// Creates run_dir and writes a config.json snapshot once; an existing
// snapshot is left untouched.
void ensure_run_dir(const ExperimentConfig& cfg);

// Stages communicate only through the run directory:
//   gan/        g_ab|g_ba|d_a|d_b.ckpt, history.csv
//   translated/ <case>.nii per source case, manifest.txt
//   seg_raw/    model.ckpt, history.csv           (raw-source baseline)
//   selftrain/  iter_<k>/{model.ckpt, history.csv, report.csv,
//               pseudo_labels/}, summary.csv
//   eval/       cases_<variant>.csv per trained variant
//   report/     report.csv, table.txt
// A stage whose outputs already exist is a no-op unless force is set.
StageOutcome stage_gen_data(const ExperimentConfig& cfg, bool force);
StageOutcome stage_train_gan(const ExperimentConfig& cfg, bool force);
StageOutcome stage_translate(const ExperimentConfig& cfg, bool force);
StageOutcome stage_train_seg(const ExperimentConfig& cfg, bool force);
StageOutcome stage_self_train(const ExperimentConfig& cfg, bool force);
StageOutcome stage_eval(const ExperimentConfig& cfg, bool force);
StageOutcome stage_report(const ExperimentConfig& cfg, bool force);

// gen-data, train-gan, translate, self-train, eval, report in order. The
// raw-source baseline stage is opt-in and not part of the sequence.
std::vector<StageOutcome> run_all(const ExperimentConfig& cfg, bool force);

// Merges the evaluated variants of several finished runs into one table,
// labeling rows by each run's generator choice.
void write_comparative_report(
    const std::vector<std::filesystem::path>& run_dirs,
    const std::filesystem::path& out_dir);

}  // namespace cmda
