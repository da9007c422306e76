#include "cmda/config.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "cmda/error.hpp"
#include "cmda/rng.hpp"
#include "json.hpp"

namespace cmda {
namespace {

using ordered_json = nlohmann::ordered_json;

// Reads keys from one JSON object, tracking which are recognized so that
// anything left over can be reported with its full path.
class Section {
 public:
  Section(const ordered_json& j, std::string path)
      : j_(&j), path_(std::move(path)) {
    if (!j.is_object())
      throw ValidationError("config: " + path_ + " must be an object");
  }

  template <typename T>
  T get(const char* key, T def) {
    known_.push_back(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return def;
    try {
      return it->get<T>();
    } catch (const ordered_json::exception&) {
      throw ValidationError("config: bad value type for " + join(key));
    }
  }

  Range get_range(const char* key, Range def) {
    known_.push_back(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return def;
    if (!it->is_array() || it->size() != 2)
      throw ValidationError("config: " + join(key) + " must be [lo, hi]");
    try {
      return Range{(*it)[0].get<float>(), (*it)[1].get<float>()};
    } catch (const ordered_json::exception&) {
      throw ValidationError("config: bad value type for " + join(key));
    }
  }

  Spacing get_spacing(const char* key, Spacing def) {
    known_.push_back(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return def;
    if (!it->is_array() || it->size() != 3)
      throw ValidationError("config: " + join(key) + " must be [x, y, z]");
    try {
      return Spacing{(*it)[0].get<float>(), (*it)[1].get<float>(),
                     (*it)[2].get<float>()};
    } catch (const ordered_json::exception&) {
      throw ValidationError("config: bad value type for " + join(key));
    }
  }

  // Child object for a nested section; absent key reads as {}.
  const ordered_json& child(const char* key) {
    known_.push_back(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return empty_;
    return *it;
  }

  void finish() const {
    for (const auto& [key, value] : j_->items()) {
      bool ok = false;
      for (const auto& k : known_)
        if (k == key) {
          ok = true;
          break;
        }
      if (!ok) throw ValidationError("config: unknown key " + join(key));
    }
  }

 private:
  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const ordered_json* j_;
  std::string path_;
  std::vector<std::string> known_;
  inline static const ordered_json empty_ = ordered_json::object();
};

ModalityMap parse_map(const ordered_json& j, const std::string& path,
                      ModalityMap def) {
  Section s(j, path);
  def.air = s.get("air", def.air);
  def.head = s.get("head", def.head);
  def.tumor = s.get("tumor", def.tumor);
  def.cochlea = s.get("cochlea", def.cochlea);
  def.texture_amp = s.get("texture_amp", def.texture_amp);
  s.finish();
  return def;
}

ordered_json dump_map(const ModalityMap& m) {
  return {{"air", m.air},
          {"head", m.head},
          {"tumor", m.tumor},
          {"cochlea", m.cochlea},
          {"texture_amp", m.texture_amp}};
}

ordered_json dump_range(const Range& r) {
  return ordered_json::array({r.lo, r.hi});
}

}  // namespace

TranslationConfig ExperimentConfig::resolved_translation() const {
  TranslationConfig t = translation;
  t.gen_arch = generator == "unet" ? "unet_gen" : "resnet_gen";
  t.seed = derive_seed(master_seed, "stage-gan", 0);
  return t;
}

void ExperimentConfig::validate() const {
  if (data_root.empty() || run_dir.empty())
    throw ValidationError("config: data_root and run_dir must be set");
  if (generator != "resnet" && generator != "unet")
    throw ValidationError("config: generator must be resnet or unet");
  if (n_source < 1 || n_target_train < 1 || n_target_eval < 1)
    throw ValidationError("config: cohort counts must be >= 1");
  if (n_iters < 0)
    throw ValidationError("config: self_training.n_iters must be >= 0");
  phantom.validate();
  resolved_translation().validate();
  seg.validate();
  const int div = 1 << seg.depth;
  if (phantom.nx % div || phantom.ny % div || phantom.nz % div)
    throw ValidationError("config: phantom dims must divide 2^seg depth");
}

ExperimentConfig parse_config(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }

  ExperimentConfig cfg;
  Section top(root, "");
  cfg.data_root = top.get<std::string>("data_root", cfg.data_root.string());
  cfg.run_dir = top.get<std::string>("run_dir", cfg.run_dir.string());
  cfg.master_seed = top.get<std::uint64_t>("master_seed", cfg.master_seed);
  cfg.generator = top.get<std::string>("generator", cfg.generator);

  {
    Section p(top.child("phantom"), "phantom");
    PhantomSpec& ph = cfg.phantom;
    ph.nx = p.get("nx", ph.nx);
    ph.ny = p.get("ny", ph.ny);
    ph.nz = p.get("nz", ph.nz);
    ph.spacing = p.get_spacing("spacing", ph.spacing);
    cfg.n_source = p.get("n_source", cfg.n_source);
    cfg.n_target_train = p.get("n_target_train", cfg.n_target_train);
    cfg.n_target_eval = p.get("n_target_eval", cfg.n_target_eval);
    ph.head_rx = p.get_range("head_rx", ph.head_rx);
    ph.head_ry = p.get_range("head_ry", ph.head_ry);
    ph.head_rz = p.get_range("head_rz", ph.head_rz);
    ph.tumor_r = p.get_range("tumor_r", ph.tumor_r);
    ph.tumor_rz_factor = p.get("tumor_rz_factor", ph.tumor_rz_factor);
    ph.cochlea_r = p.get_range("cochlea_r", ph.cochlea_r);
    ph.source_map =
        parse_map(p.child("source_map"), "phantom.source_map", ph.source_map);
    ph.target_map =
        parse_map(p.child("target_map"), "phantom.target_map", ph.target_map);
    ph.contrast_gap = p.get("contrast_gap", ph.contrast_gap);
    ph.noise_sigma = p.get("noise_sigma", ph.noise_sigma);
    ph.bias_amp = p.get("bias_amp", ph.bias_amp);
    p.finish();
  }
  {
    Section t(top.child("translation"), "translation");
    TranslationConfig& tc = cfg.translation;
    tc.lambda_adv = t.get("lambda_adv", tc.lambda_adv);
    tc.lambda_cyc = t.get("lambda_cyc", tc.lambda_cyc);
    tc.lambda_id = t.get("lambda_id", tc.lambda_id);
    tc.lr0 = t.get("lr0", tc.lr0);
    tc.e_const = t.get("e_const", tc.e_const);
    tc.e_decay = t.get("e_decay", tc.e_decay);
    tc.batch = t.get("batch", tc.batch);
    tc.pool_capacity = t.get("pool_capacity", tc.pool_capacity);
    tc.slice = t.get("slice", tc.slice);
    tc.gen_base = t.get("gen_base", tc.gen_base);
    tc.gen_blocks = t.get("gen_blocks", tc.gen_blocks);
    tc.gen_depth = t.get("gen_depth", tc.gen_depth);
    tc.disc_width = t.get("disc_width", tc.disc_width);
    tc.disc_down = t.get("disc_down", tc.disc_down);
    t.finish();
  }
  {
    Section s(top.child("segmentation"), "segmentation");
    SegTrainConfig& sc = cfg.seg;
    sc.epochs = s.get("epochs", sc.epochs);
    sc.lr = s.get("lr", sc.lr);
    sc.batch = s.get("batch", sc.batch);
    sc.patch = s.get("patch", sc.patch);
    sc.flips = s.get("flips", sc.flips);
    sc.base = s.get("base", sc.base);
    sc.depth = s.get("depth", sc.depth);
    sc.classes = s.get("classes", sc.classes);
    s.finish();
  }
  {
    Section s(top.child("self_training"), "self_training");
    cfg.n_iters = s.get("n_iters", cfg.n_iters);
    cfg.retrain_from_scratch =
        s.get("retrain_from_scratch", cfg.retrain_from_scratch);
    s.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  const PhantomSpec& ph = cfg.phantom;
  const TranslationConfig& tc = cfg.translation;
  const SegTrainConfig& sc = cfg.seg;
  ordered_json j = {
      {"data_root", cfg.data_root.generic_string()},
      {"run_dir", cfg.run_dir.generic_string()},
      {"master_seed", cfg.master_seed},
      {"generator", cfg.generator},
      {"phantom",
       {{"nx", ph.nx},
        {"ny", ph.ny},
        {"nz", ph.nz},
        {"spacing",
         ordered_json::array({ph.spacing.x, ph.spacing.y, ph.spacing.z})},
        {"n_source", cfg.n_source},
        {"n_target_train", cfg.n_target_train},
        {"n_target_eval", cfg.n_target_eval},
        {"head_rx", dump_range(ph.head_rx)},
        {"head_ry", dump_range(ph.head_ry)},
        {"head_rz", dump_range(ph.head_rz)},
        {"tumor_r", dump_range(ph.tumor_r)},
        {"tumor_rz_factor", ph.tumor_rz_factor},
        {"cochlea_r", dump_range(ph.cochlea_r)},
        {"source_map", dump_map(ph.source_map)},
        {"target_map", dump_map(ph.target_map)},
        {"contrast_gap", ph.contrast_gap},
        {"noise_sigma", ph.noise_sigma},
        {"bias_amp", ph.bias_amp}}},
      {"translation",
       {{"lambda_adv", tc.lambda_adv},
        {"lambda_cyc", tc.lambda_cyc},
        {"lambda_id", tc.lambda_id},
        {"lr0", tc.lr0},
        {"e_const", tc.e_const},
        {"e_decay", tc.e_decay},
        {"batch", tc.batch},
        {"pool_capacity", tc.pool_capacity},
        {"slice", tc.slice},
        {"gen_base", tc.gen_base},
        {"gen_blocks", tc.gen_blocks},
        {"gen_depth", tc.gen_depth},
        {"disc_width", tc.disc_width},
        {"disc_down", tc.disc_down}}},
      {"segmentation",
       {{"epochs", sc.epochs},
        {"lr", sc.lr},
        {"batch", sc.batch},
        {"patch", sc.patch},
        {"flips", sc.flips},
        {"base", sc.base},
        {"depth", sc.depth},
        {"classes", sc.classes}}},
      {"self_training",
       {{"n_iters", cfg.n_iters},
        {"retrain_from_scratch", cfg.retrain_from_scratch}}},
  };
  return j.dump(2) + "\n";
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace cmda
