#include "cmda/selftrain.hpp"

#include <cstdio>
#include <utility>

#include "cmda/error.hpp"
#include "cmda/rng.hpp"

namespace cmda {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

MetricsReport evaluate_model(const ModelParams& model,
                             const std::vector<EvalCase>& eval_cases) {
  std::vector<CaseMetrics> rows;
  rows.reserve(eval_cases.size());
  for (const auto& c : eval_cases)
    rows.push_back(
        evaluate_case(c.case_id, predict(c.image, model), c.reference));
  return aggregate_report(std::move(rows));
}

}  // namespace

void SelfTrainConfig::validate() const {
  require(n_iters >= 0, "self-train: n_iters must be >= 0");
  seg.validate();
}

std::vector<LabelVolume> generate_pseudo_labels(
    const ModelParams& model, const std::vector<Volume3D>& vols) {
  std::vector<LabelVolume> out;
  out.reserve(vols.size());
  for (const auto& v : vols) out.push_back(predict(v, model));
  return out;
}

SelfTrainResult run_self_training(
    const std::vector<SegCase>& pseudo_target_cases,
    const std::vector<Volume3D>& real_target_vols,
    const std::vector<EvalCase>& eval_cases, const SelfTrainConfig& cfg) {
  cfg.validate();
  require(!pseudo_target_cases.empty(), "self-train: no translated cases");
  require(!eval_cases.empty(), "self-train: no evaluation cases");
  require(cfg.n_iters == 0 || !real_target_vols.empty(),
          "self-train: iterations need real target volumes");

  SelfTrainResult result;
  result.iters.reserve(static_cast<std::size_t>(cfg.n_iters) + 1);

  for (int k = 0; k <= cfg.n_iters; ++k) {
    IterationResult iter;
    iter.iteration = k;

    std::vector<SegCase> train_set = pseudo_target_cases;
    if (k > 0) {
      const ModelParams& prev = result.iters.back().model;
      iter.pseudo_labels = generate_pseudo_labels(prev, real_target_vols);
      for (std::size_t i = 0; i < real_target_vols.size(); ++i)
        train_set.push_back({real_target_vols[i], iter.pseudo_labels[i]});
    }
    iter.n_train_cases = static_cast<int>(train_set.size());

    SegTrainConfig seg_cfg = cfg.seg;
    seg_cfg.seed = derive_seed(cfg.seed, "selftrain-iter",
                               static_cast<std::uint64_t>(k));
    const ModelParams* warm =
        (!cfg.retrain_from_scratch && k > 0) ? &result.iters.back().model
                                             : nullptr;
    SegResult trained = train_segmenter(train_set, seg_cfg, warm);
    iter.model = std::move(trained.model);
    iter.history = std::move(trained.history);
    iter.report = evaluate_model(iter.model, eval_cases);
    result.iters.push_back(std::move(iter));
  }
  return result;
}

std::string selftrain_summary_csv(const SelfTrainResult& result) {
  std::string out =
      "iteration,dsc_mean,dsc_mean_sd,dsc_vs,dsc_vs_sd,dsc_cochlea,"
      "dsc_cochlea_sd,assd_vs,assd_vs_sd,assd_cochlea,assd_cochlea_sd\n";
  char buf[320];
  for (const auto& it : result.iters) {
    const MetricsReport& r = it.report;
    std::snprintf(buf, sizeof(buf),
                  "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  it.iteration, r.dsc_mean.mean, r.dsc_mean.sd, r.dsc_vs.mean,
                  r.dsc_vs.sd, r.dsc_cochlea.mean, r.dsc_cochlea.sd,
                  r.assd_vs.mean, r.assd_vs.sd, r.assd_cochlea.mean,
                  r.assd_cochlea.sd);
    out += buf;
  }
  return out;
}

}  // namespace cmda
