#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmda/autodiff.hpp"
#include "cmda/error.hpp"
#include "cmda/nifti.hpp"
#include "cmda/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cmda;

namespace {

void print_outcome(const StageOutcome& o) {
  std::printf("%s: %s\n", o.stage.c_str(), o.message.c_str());
}

void print_table(const fs::path& table) {
  const std::vector<std::uint8_t> bytes = nifti::read_file_bytes(table);
  std::fwrite(bytes.data(), 1, bytes.size(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cmda: unpaired translation + self-training segmentation pipeline on "
      "synthetic bi-modality phantoms"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  bool force = false;
  int threads = 0;
  app.add_option("--config", config_path,
                 "experiment config file; defaults apply when omitted");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed, "override the master seed");
  app.add_flag("--force", force, "re-run stages whose outputs already exist");
  CLI::Option* threads_opt = app.add_option(
      "--threads", threads,
      "BLAS thread count; values above 1 trade bit-reproducibility for speed");

  app.add_subcommand("gen-data", "generate the phantom dataset");
  app.add_subcommand("train-gan", "train the unpaired translators");
  app.add_subcommand("translate", "translate every source volume");
  app.add_subcommand("train-seg",
                     "train the raw-source baseline segmenter (not part of "
                     "run-all)");
  app.add_subcommand("self-train",
                     "train on translated volumes, then iterate with pseudo "
                     "labels");
  app.add_subcommand("eval", "score every trained variant on the held-out set");
  CLI::App* rep = app.add_subcommand(
      "report", "aggregate stored case metrics into a table");
  std::vector<std::string> run_dirs;
  std::string out_dir = "comparison";
  rep->add_option("runs", run_dirs,
                  "finished run directories for a comparative report");
  rep->add_option("--out", out_dir,
                  "output directory for the comparative report");
  app.add_subcommand("run-all",
                     "gen-data, train-gan, translate, self-train, eval and "
                     "report in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    if (*seed_opt) cfg.master_seed = seed;
    if (const char* root = std::getenv("CMDA_RUN_ROOT"))
      apply_run_root(cfg, root);
    cfg.validate();
    if (*threads_opt) set_blas_threads(threads);

    if (app.got_subcommand("gen-data")) {
      print_outcome(stage_gen_data(cfg, force));
    } else if (app.got_subcommand("train-gan")) {
      print_outcome(stage_train_gan(cfg, force));
    } else if (app.got_subcommand("translate")) {
      print_outcome(stage_translate(cfg, force));
    } else if (app.got_subcommand("train-seg")) {
      print_outcome(stage_train_seg(cfg, force));
    } else if (app.got_subcommand("self-train")) {
      print_outcome(stage_self_train(cfg, force));
    } else if (app.got_subcommand("eval")) {
      print_outcome(stage_eval(cfg, force));
    } else if (app.got_subcommand("report")) {
      if (!run_dirs.empty()) {
        std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
        write_comparative_report(dirs, out_dir);
        std::printf("report: wrote %s\n",
                    (fs::path(out_dir) / "report.csv").string().c_str());
        print_table(fs::path(out_dir) / "table.txt");
      } else {
        print_outcome(stage_report(cfg, force));
        print_table(cfg.run_dir / "report" / "table.txt");
      }
    } else if (app.got_subcommand("run-all")) {
      for (const StageOutcome& o : run_all(cfg, force)) print_outcome(o);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const GenerationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 6;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
