#include "cmda/pipeline.hpp"

#include <cstdio>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmda/checkpoint.hpp"
#include "cmda/error.hpp"
#include "cmda/manifest.hpp"
#include "cmda/metrics.hpp"
#include "cmda/nifti.hpp"
#include "cmda/phantom.hpp"
#include "cmda/rng.hpp"
#include "cmda/selftrain.hpp"
#include "cmda/translation.hpp"

namespace cmda {
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  const std::vector<std::uint8_t> b = nifti::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

void write_text(const fs::path& p, const std::string& s) {
  nifti::write_file_bytes(
      p, std::span<const std::uint8_t>(
             reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p))
    throw IoError("missing " + p.string() + "; " + hint);
}

bool all_exist(const std::vector<fs::path>& paths) {
  for (const fs::path& p : paths)
    if (!fs::exists(p)) return false;
  return true;
}

// Lexical relative path, so manifests stay readable without touching the
// filesystem or resolving symlinks.
std::string rel_to(const fs::path& target, const fs::path& base) {
  return fs::absolute(target)
      .lexically_normal()
      .lexically_proximate(fs::absolute(base).lexically_normal())
      .generic_string();
}

struct LabeledCase {
  std::string id;
  Volume3D image;
  LabelVolume labels;
};

struct UnlabeledCase {
  std::string id;
  Volume3D image;
};

Manifest data_manifest(const ExperimentConfig& cfg) {
  const fs::path p = cfg.data_root / "manifest.txt";
  require_file(p, "run gen-data first");
  return read_manifest(p);
}

Manifest heldout_manifest(const ExperimentConfig& cfg) {
  const fs::path p = cfg.data_root / "heldout" / "eval_manifest.txt";
  require_file(p, "run gen-data first");
  return read_manifest(p);
}

std::set<std::string> eval_ids(const ExperimentConfig& cfg) {
  std::set<std::string> ids;
  for (const ManifestEntry& e : heldout_manifest(cfg).entries)
    ids.insert(e.case_id);
  return ids;
}

std::vector<LabeledCase> load_source_cases(const ExperimentConfig& cfg) {
  const Manifest m = data_manifest(cfg);
  std::vector<LabeledCase> out;
  for (const ManifestEntry& e : m.entries) {
    if (e.domain != Domain::kSource) continue;
    if (!e.label_path)
      throw ValidationError("source case " + e.case_id +
                            " has no label in the manifest");
    out.push_back({e.case_id, nifti::read_volume_file(cfg.data_root / e.image_path),
                   nifti::read_labels_file(cfg.data_root / *e.label_path)});
  }
  return out;
}

// Target-domain training images: every target entry that is not part of the
// held-out evaluation set.
std::vector<UnlabeledCase> load_target_train(const ExperimentConfig& cfg) {
  const Manifest m = data_manifest(cfg);
  const std::set<std::string> held = eval_ids(cfg);
  std::vector<UnlabeledCase> out;
  for (const ManifestEntry& e : m.entries) {
    if (e.domain != Domain::kTarget || held.count(e.case_id)) continue;
    out.push_back({e.case_id, nifti::read_volume_file(cfg.data_root / e.image_path)});
  }
  return out;
}

std::vector<EvalCase> load_eval_cases(const ExperimentConfig& cfg) {
  const fs::path base = cfg.data_root / "heldout";
  std::vector<EvalCase> out;
  for (const ManifestEntry& e : heldout_manifest(cfg).entries) {
    if (!e.label_path)
      throw ValidationError("eval case " + e.case_id +
                            " has no label in the manifest");
    out.push_back({e.case_id, nifti::read_volume_file(base / e.image_path),
                   nifti::read_labels_file(base / *e.label_path)});
  }
  return out;
}

fs::path translated_dir(const ExperimentConfig& cfg) {
  return cfg.run_dir / "translated";
}

fs::path selftrain_dir(const ExperimentConfig& cfg) {
  return cfg.run_dir / "selftrain";
}

std::string iter_name(int k) { return "iter_" + std::to_string(k); }

// Variant ids in report order: the raw-source baseline when trained, then
// the self-training iterations.
std::vector<std::string> available_variants(const fs::path& run_dir) {
  std::vector<std::string> out;
  if (fs::exists(run_dir / "seg_raw" / "model.ckpt"))
    out.push_back("raw_source");
  for (int k = 0;; ++k) {
    if (!fs::exists(run_dir / "selftrain" / iter_name(k) / "report.csv"))
      break;
    out.push_back("st_iter" + std::to_string(k));
  }
  return out;
}

std::string variant_label(const std::string& generator,
                          const std::string& variant) {
  const std::string gen = generator == "unet" ? "U-net" : "ResNet";
  if (variant == "raw_source") return gen + " raw source";
  if (variant == "st_iter0") return gen + " w/o ST";
  return gen + " w/ ST iter" + variant.substr(7);
}

std::string aggregate_csv(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out =
      "variant,dsc_mean,dsc_mean_sd,dsc_vs,dsc_vs_sd,dsc_cochlea,"
      "dsc_cochlea_sd,assd_vs,assd_vs_sd,assd_cochlea,assd_cochlea_sd\n";
  char buf[512];
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof(buf),
                  ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.dsc_mean.mean, r.dsc_mean.sd, r.dsc_vs.mean, r.dsc_vs.sd,
                  r.dsc_cochlea.mean, r.dsc_cochlea.sd, r.assd_vs.mean,
                  r.assd_vs.sd, r.assd_cochlea.mean, r.assd_cochlea.sd);
    out += label;
    out += buf;
  }
  return out;
}

std::vector<std::pair<std::string, MetricsReport>> collect_rows(
    const fs::path& run_dir, const std::string& generator) {
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const std::string& v : available_variants(run_dir)) {
    const fs::path csv = run_dir / "eval" / ("cases_" + v + ".csv");
    require_file(csv, "run eval first");
    rows.emplace_back(variant_label(generator, v),
                      aggregate_report(cases_from_csv(read_text(csv))));
  }
  if (rows.empty())
    throw IoError("no evaluated variants under " + run_dir.string() +
                  "; run eval first");
  return rows;
}

void write_report_files(
    const fs::path& out_dir,
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  fs::create_directories(out_dir);
  write_text(out_dir / "report.csv", aggregate_csv(rows));
  write_text(out_dir / "table.txt", render_table(rows));
}

}  // namespace

void apply_run_root(ExperimentConfig& cfg, const fs::path& root) {
  if (root.empty()) return;
  if (cfg.data_root.is_relative()) cfg.data_root = root / cfg.data_root;
  if (cfg.run_dir.is_relative()) cfg.run_dir = root / cfg.run_dir;
}

void ensure_run_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.run_dir);
  const fs::path snapshot = cfg.run_dir / "config.json";
  if (!fs::exists(snapshot)) write_text(snapshot, serialize_config(cfg));
}

StageOutcome stage_gen_data(const ExperimentConfig& cfg, bool force) {
  const fs::path man = cfg.data_root / "manifest.txt";
  const fs::path eman = cfg.data_root / "heldout" / "eval_manifest.txt";
  if (!force && fs::exists(man) && fs::exists(eman))
    return {"gen-data", false, "up to date"};
  gen_dataset(cfg.phantom, cfg.n_source, cfg.n_target_train, cfg.n_target_eval,
              derive_seed(cfg.master_seed, "stage-data", 0), cfg.data_root);
  return {"gen-data", true,
          "generated " + std::to_string(cfg.n_source) + "+" +
              std::to_string(cfg.n_target_train) + "+" +
              std::to_string(cfg.n_target_eval) + " cases under " +
              cfg.data_root.string()};
}

StageOutcome stage_train_gan(const ExperimentConfig& cfg, bool force) {
  const fs::path gd = cfg.run_dir / "gan";
  const std::vector<fs::path> outputs = {
      gd / "g_ab.ckpt", gd / "g_ba.ckpt", gd / "d_a.ckpt", gd / "d_b.ckpt",
      gd / "history.csv"};
  if (!force && all_exist(outputs)) return {"train-gan", false, "up to date"};

  const TranslationConfig tc = cfg.resolved_translation();
  std::vector<Image2D> a, b;
  for (const LabeledCase& c : load_source_cases(cfg))
    for (Image2D& s : volume_to_slices(c.image, tc.slice))
      a.push_back(std::move(s));
  for (const UnlabeledCase& c : load_target_train(cfg))
    for (Image2D& s : volume_to_slices(c.image, tc.slice))
      b.push_back(std::move(s));

  ensure_run_dir(cfg);
  const TranslationResult r = train_translation(a, b, tc);
  fs::create_directories(gd);
  save_params((gd / "g_ab.ckpt").string(), r.g_ab);
  save_params((gd / "g_ba.ckpt").string(), r.g_ba);
  save_params((gd / "d_a.ckpt").string(), r.d_a);
  save_params((gd / "d_b.ckpt").string(), r.d_b);
  write_text(gd / "history.csv", history_to_csv(r.history));
  return {"train-gan", true,
          "trained on " + std::to_string(a.size()) + "+" +
              std::to_string(b.size()) + " slices for " +
              std::to_string(r.history.size()) + " epochs"};
}

StageOutcome stage_translate(const ExperimentConfig& cfg, bool force) {
  const fs::path td = translated_dir(cfg);
  if (!force && fs::exists(td / "manifest.txt"))
    return {"translate", false, "up to date"};

  const fs::path gab = cfg.run_dir / "gan" / "g_ab.ckpt";
  require_file(gab, "run train-gan first");
  const ModelParams gen = load_params(gab.string());
  const TranslationConfig tc = cfg.resolved_translation();
  const Manifest data = data_manifest(cfg);

  ensure_run_dir(cfg);
  fs::create_directories(td);
  Manifest out;
  for (const ManifestEntry& e : data.entries) {
    if (e.domain != Domain::kSource) continue;
    if (!e.label_path)
      throw ValidationError("source case " + e.case_id +
                            " has no label in the manifest");
    const Volume3D vol = nifti::read_volume_file(cfg.data_root / e.image_path);
    const Volume3D fake = translate_volume(vol, gen, tc);
    const std::string name = e.case_id + ".nii";
    nifti::write_volume_file(td / name, fake);
    out.entries.push_back({e.case_id, Domain::kSource, name,
                           rel_to(cfg.data_root / *e.label_path, td)});
  }
  if (out.entries.empty())
    throw ValidationError("manifest lists no source cases to translate");
  write_manifest(td / "manifest.txt", out);
  return {"translate", true,
          "translated " + std::to_string(out.entries.size()) + " volumes"};
}

StageOutcome stage_train_seg(const ExperimentConfig& cfg, bool force) {
  const fs::path sd = cfg.run_dir / "seg_raw";
  if (!force && all_exist({sd / "model.ckpt", sd / "history.csv"}))
    return {"train-seg", false, "up to date"};

  std::vector<SegCase> cases;
  for (LabeledCase& c : load_source_cases(cfg))
    cases.emplace_back(std::move(c.image), std::move(c.labels));
  SegTrainConfig sc = cfg.seg;
  sc.seed = derive_seed(cfg.master_seed, "stage-seg-raw", 0);

  ensure_run_dir(cfg);
  const SegResult r = train_segmenter(cases, sc);
  fs::create_directories(sd);
  save_params((sd / "model.ckpt").string(), r.model);
  write_text(sd / "history.csv", seg_history_to_csv(r.history));
  return {"train-seg", true,
          "trained the raw-source baseline on " +
              std::to_string(cases.size()) + " cases"};
}

StageOutcome stage_self_train(const ExperimentConfig& cfg, bool force) {
  const fs::path sd = selftrain_dir(cfg);
  if (!force && fs::exists(sd / "summary.csv"))
    return {"self-train", false, "up to date"};

  const fs::path td = translated_dir(cfg);
  require_file(td / "manifest.txt", "run translate first");
  const Manifest tman = read_manifest(td / "manifest.txt");
  std::vector<SegCase> pseudo;
  for (const ManifestEntry& e : tman.entries) {
    if (!e.label_path)
      throw ValidationError("translated case " + e.case_id +
                            " has no label in the manifest");
    pseudo.emplace_back(nifti::read_volume_file(td / e.image_path),
                        nifti::read_labels_file(td / *e.label_path));
  }

  std::vector<UnlabeledCase> targets = load_target_train(cfg);
  std::vector<Volume3D> target_vols;
  for (UnlabeledCase& c : targets) target_vols.push_back(std::move(c.image));
  const std::vector<EvalCase> evals = load_eval_cases(cfg);

  SelfTrainConfig st;
  st.seg = cfg.seg;
  st.n_iters = cfg.n_iters;
  st.retrain_from_scratch = cfg.retrain_from_scratch;
  st.seed = derive_seed(cfg.master_seed, "stage-selftrain", 0);

  ensure_run_dir(cfg);
  const SelfTrainResult res =
      run_self_training(pseudo, target_vols, evals, st);
  for (const IterationResult& it : res.iters) {
    const fs::path id = sd / iter_name(it.iteration);
    fs::create_directories(id);
    save_params((id / "model.ckpt").string(), it.model);
    write_text(id / "history.csv", seg_history_to_csv(it.history));
    write_text(id / "report.csv", cases_to_csv(it.report.cases));
    if (!it.pseudo_labels.empty()) {
      fs::create_directories(id / "pseudo_labels");
      for (std::size_t i = 0; i < it.pseudo_labels.size(); ++i)
        nifti::write_labels_file(id / "pseudo_labels" / (targets[i].id + ".nii"),
                          it.pseudo_labels[i]);
    }
  }
  write_text(sd / "summary.csv", selftrain_summary_csv(res));
  return {"self-train", true,
          "ran iterations 0.." + std::to_string(cfg.n_iters) + " over " +
              std::to_string(target_vols.size()) + " target volumes"};
}

StageOutcome stage_eval(const ExperimentConfig& cfg, bool force) {
  const std::vector<std::string> variants = available_variants(cfg.run_dir);
  if (variants.empty())
    throw IoError("no trained models under " + cfg.run_dir.string() +
                  "; run train-seg or self-train first");
  const fs::path ed = cfg.run_dir / "eval";
  std::vector<std::string> todo;
  for (const std::string& v : variants)
    if (force || !fs::exists(ed / ("cases_" + v + ".csv")))
      todo.push_back(v);
  if (todo.empty()) return {"eval", false, "up to date"};

  ensure_run_dir(cfg);
  fs::create_directories(ed);
  for (const std::string& v : todo) {
    const fs::path out = ed / ("cases_" + v + ".csv");
    if (v == "raw_source") {
      const ModelParams model =
          load_params((cfg.run_dir / "seg_raw" / "model.ckpt").string());
      std::vector<CaseMetrics> cases;
      for (const EvalCase& e : load_eval_cases(cfg))
        cases.push_back(evaluate_case(e.case_id, predict(e.image, model),
                                      e.reference));
      write_text(out, cases_to_csv(cases));
    } else {
      const fs::path src =
          selftrain_dir(cfg) / iter_name(std::stoi(v.substr(7))) /
          "report.csv";
      write_text(out, read_text(src));
    }
  }
  std::string msg = "evaluated";
  for (const std::string& v : todo) msg += " " + v;
  return {"eval", true, msg};
}

StageOutcome stage_report(const ExperimentConfig& cfg, bool force) {
  const fs::path rd = cfg.run_dir / "report";
  if (!force && all_exist({rd / "report.csv", rd / "table.txt"}))
    return {"report", false, "up to date"};
  const auto rows = collect_rows(cfg.run_dir, cfg.generator);
  ensure_run_dir(cfg);
  write_report_files(rd, rows);
  return {"report", true,
          "wrote " + std::to_string(rows.size()) + " variant rows"};
}

std::vector<StageOutcome> run_all(const ExperimentConfig& cfg, bool force) {
  std::vector<StageOutcome> out;
  out.push_back(stage_gen_data(cfg, force));
  out.push_back(stage_train_gan(cfg, force));
  out.push_back(stage_translate(cfg, force));
  out.push_back(stage_self_train(cfg, force));
  out.push_back(stage_eval(cfg, force));
  out.push_back(stage_report(cfg, force));
  return out;
}

void write_comparative_report(const std::vector<fs::path>& run_dirs,
                              const fs::path& out_dir) {
  if (run_dirs.empty())
    throw ValidationError("comparative report needs at least one run dir");
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::set<std::string> used;
  for (const fs::path& rd : run_dirs) {
    const fs::path snapshot = rd / "config.json";
    require_file(snapshot, "not a finished run directory");
    const ExperimentConfig cfg = load_config_file(snapshot);
    for (auto& [label, report] : collect_rows(rd, cfg.generator)) {
      std::string name = label;
      if (!used.insert(name).second) {
        name += " [" + rd.filename().string() + "]";
        used.insert(name);
      }
      rows.emplace_back(name, std::move(report));
    }
  }
  write_report_files(out_dir, rows);
}

}  // namespace cmda
