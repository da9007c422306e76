#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "cmda/checkpoint.hpp"
#include "cmda/config.hpp"
#include "cmda/error.hpp"
#include "cmda/metrics.hpp"
#include "cmda/nifti.hpp"
#include "cmda/phantom.hpp"
#include "cmda/pipeline.hpp"
#include "cmda/resample.hpp"
#include "cmda/segmentation.hpp"
#include "cmda/translation.hpp"

namespace py = pybind11;
using namespace cmda;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray =
    py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// Arrays are [nz, ny, nx] in C order, matching the volume's linear layout.
Spacing to_spacing(const std::array<float, 3>& s) {
  return Spacing{s[0], s[1], s[2]};
}

std::array<float, 3> from_spacing(Spacing s) { return {s.x, s.y, s.z}; }

template <typename Arr>
void check_3d(const Arr& a) {
  if (a.ndim() != 3)
    throw ValidationError("expected a 3-d array shaped [nz, ny, nx]");
}

Volume3D vol_from_array(const FloatArray& a, const std::array<float, 3>& sp) {
  check_3d(a);
  Volume3D v(static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)),
             static_cast<int>(a.shape(0)), to_spacing(sp));
  std::memcpy(v.voxels().data(), a.data(), v.numel() * sizeof(float));
  return v;
}

FloatArray array_from_vol(const Volume3D& v) {
  FloatArray a({v.nz(), v.ny(), v.nx()});
  std::memcpy(a.mutable_data(), v.voxels().data(), v.numel() * sizeof(float));
  return a;
}

LabelVolume labels_from_array(const ByteArray& a,
                              const std::array<float, 3>& sp) {
  check_3d(a);
  LabelVolume l(static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(0)), to_spacing(sp));
  std::memcpy(l.labels().data(), a.data(), l.numel());
  return l;
}

ByteArray array_from_labels(const LabelVolume& l) {
  ByteArray a({l.nz(), l.ny(), l.nx()});
  std::memcpy(a.mutable_data(), l.labels().data(), l.numel());
  return a;
}

StageOutcome dispatch_stage(const std::string& stage,
                            const ExperimentConfig& cfg, bool force) {
  if (stage == "gen-data") return stage_gen_data(cfg, force);
  if (stage == "train-gan") return stage_train_gan(cfg, force);
  if (stage == "translate") return stage_translate(cfg, force);
  if (stage == "train-seg") return stage_train_seg(cfg, force);
  if (stage == "self-train") return stage_self_train(cfg, force);
  if (stage == "eval") return stage_eval(cfg, force);
  if (stage == "report") return stage_report(cfg, force);
  throw ValidationError("unknown stage '" + stage + "'");
}

py::tuple outcome_tuple(const StageOutcome& o) {
  return py::make_tuple(o.stage, o.ran, o.message);
}

}  // namespace

PYBIND11_MODULE(_cmda, m) {
  m.doc() =
      "unpaired translation + self-training segmentation pipeline on "
      "synthetic bi-modality phantoms";

  py::exception<Error> base(m, "Error");
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", base);
  py::register_exception<TruncationError>(m, "TruncationError", base);
  py::register_exception<ValidationError>(m, "ValidationError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<GenerationError>(m, "GenerationError", base);

  m.def(
      "read_volume",
      [](const std::filesystem::path& path) {
        const Volume3D v = nifti::read_volume_file(path);
        return py::make_tuple(array_from_vol(v), from_spacing(v.spacing()));
      },
      py::arg("path"), "Read a volume; returns (array[nz,ny,nx], spacing).");
  m.def(
      "write_volume",
      [](const std::filesystem::path& path, const FloatArray& a,
         const std::array<float, 3>& spacing) {
        nifti::write_volume_file(path, vol_from_array(a, spacing));
      },
      py::arg("path"), py::arg("image"), py::arg("spacing"));
  m.def(
      "read_labels",
      [](const std::filesystem::path& path) {
        const LabelVolume l = nifti::read_labels_file(path);
        return py::make_tuple(array_from_labels(l), from_spacing(l.spacing()));
      },
      py::arg("path"));
  m.def(
      "write_labels",
      [](const std::filesystem::path& path, const ByteArray& a,
         const std::array<float, 3>& spacing) {
        nifti::write_labels_file(path, labels_from_array(a, spacing));
      },
      py::arg("path"), py::arg("labels"), py::arg("spacing"));

  m.def(
      "dsc",
      [](const ByteArray& pred, const ByteArray& ref, int cls) {
        return dsc(labels_from_array(pred, {1, 1, 1}),
                   labels_from_array(ref, {1, 1, 1}), cls);
      },
      py::arg("pred"), py::arg("ref"), py::arg("cls"));
  m.def(
      "assd",
      [](const ByteArray& pred, const ByteArray& ref, int cls,
         const std::array<float, 3>& spacing, double penalty_mm) {
        return assd(labels_from_array(pred, spacing),
                    labels_from_array(ref, spacing), cls, penalty_mm);
      },
      py::arg("pred"), py::arg("ref"), py::arg("cls"),
      py::arg("spacing") = std::array<float, 3>{1, 1, 1},
      py::arg("penalty_mm") = -1.0);
  m.def(
      "evaluate_case",
      [](const std::string& case_id, const ByteArray& pred,
         const ByteArray& ref, const std::array<float, 3>& spacing,
         double penalty_mm) {
        const CaseMetrics c =
            evaluate_case(case_id, labels_from_array(pred, spacing),
                          labels_from_array(ref, spacing), penalty_mm);
        py::dict d;
        d["case_id"] = c.case_id;
        d["dsc_vs"] = c.vs.dsc;
        d["dsc_cochlea"] = c.cochlea.dsc;
        d["dsc_mean"] = c.dsc_mean();
        d["assd_vs"] = c.vs.assd;
        d["assd_cochlea"] = c.cochlea.assd;
        return d;
      },
      py::arg("case_id"), py::arg("pred"), py::arg("ref"),
      py::arg("spacing") = std::array<float, 3>{1, 1, 1},
      py::arg("penalty_mm") = -1.0);

  m.def(
      "lr_schedule",
      [](int epoch, double lr0, int e_const, int e_decay) {
        TranslationConfig cfg;
        cfg.lr0 = lr0;
        cfg.e_const = e_const;
        cfg.e_decay = e_decay;
        return lr_schedule(epoch, cfg);
      },
      py::arg("epoch"), py::arg("lr0") = 1.5e-4, py::arg("e_const") = 100,
      py::arg("e_decay") = 100);

  m.def(
      "resize_bicubic",
      [](const FloatArray& img, int out_h, int out_w) {
        if (img.ndim() != 2)
          throw ValidationError("expected a 2-d array shaped [h, w]");
        Image2D src(static_cast<int>(img.shape(0)),
                    static_cast<int>(img.shape(1)));
        std::memcpy(src.v.data(), img.data(), src.v.size() * sizeof(float));
        const Image2D dst = resize_bicubic(src, out_h, out_w);
        FloatArray out({dst.h, dst.w});
        std::memcpy(out.mutable_data(), dst.v.data(),
                    dst.v.size() * sizeof(float));
        return out;
      },
      py::arg("image"), py::arg("out_h"), py::arg("out_w"));

  m.def(
      "gen_case",
      [](const std::string& config_json, std::uint64_t case_seed,
         const std::string& domain) {
        const ExperimentConfig cfg = parse_config(config_json);
        const CaseRecord rec =
            gen_case(cfg.phantom, case_seed, parse_domain(domain));
        return py::make_tuple(array_from_vol(rec.image),
                              array_from_labels(rec.labels),
                              from_spacing(rec.image.spacing()));
      },
      py::arg("config_json") = "{}", py::arg("case_seed") = 0,
      py::arg("domain") = "source",
      "Generate one phantom; returns (image, labels, spacing).");

  m.def("default_config", [] { return serialize_config(ExperimentConfig{}); });
  m.def(
      "canonical_config",
      [](const std::string& text) {
        return serialize_config(parse_config(text));
      },
      py::arg("text"), "Validate a config and return its canonical form.");

  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config_json,
         bool force) {
        const ExperimentConfig cfg = parse_config(config_json);
        StageOutcome out;
        {
          py::gil_scoped_release release;
          out = dispatch_stage(stage, cfg, force);
        }
        return outcome_tuple(out);
      },
      py::arg("stage"), py::arg("config_json") = "{}",
      py::arg("force") = false,
      "Run one pipeline stage; returns (stage, ran, message).");
  m.def(
      "run_all",
      [](const std::string& config_json, bool force) {
        const ExperimentConfig cfg = parse_config(config_json);
        std::vector<StageOutcome> outs;
        {
          py::gil_scoped_release release;
          outs = run_all(cfg, force);
        }
        py::list result;
        for (const StageOutcome& o : outs) result.append(outcome_tuple(o));
        return result;
      },
      py::arg("config_json") = "{}", py::arg("force") = false);

  m.def(
      "predict_labels",
      [](const FloatArray& image, const std::array<float, 3>& spacing,
         const std::filesystem::path& checkpoint) {
        const Volume3D vol = vol_from_array(image, spacing);
        const ModelParams model = load_params(checkpoint.string());
        return array_from_labels(predict(vol, model));
      },
      py::arg("image"), py::arg("spacing"), py::arg("checkpoint"),
      "Segment a volume with a trained checkpoint.");
  m.def(
      "translate_volume",
      [](const FloatArray& image, const std::array<float, 3>& spacing,
         const std::filesystem::path& checkpoint, int slice) {
        const Volume3D vol = vol_from_array(image, spacing);
        const ModelParams gen = load_params(checkpoint.string());
        TranslationConfig cfg;
        cfg.slice = slice;
        return array_from_vol(translate_volume(vol, gen, cfg));
      },
      py::arg("image"), py::arg("spacing"), py::arg("checkpoint"),
      py::arg("slice") = 64,
      "Map a volume through a trained generator checkpoint.");
}
