#include "cmda/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "cmda/error.hpp"
#include "cmda/nifti.hpp"
#include "cmda/rng.hpp"

namespace cmda {
namespace {

constexpr int kPlacementRetries = 60;
constexpr double kTau = 6.283185307179586;

struct Ellipsoid {
  double cx, cy, cz;  // center, voxel index space
  double rx, ry, rz;  // semi-axes, voxels

  bool contains(double x, double y, double z, double margin_x = 0.0, double margin_y = 0.0,
                double margin_z = 0.0) const {
    const double ex = rx - margin_x;
    const double ey = ry - margin_y;
    const double ez = rz - margin_z;
    if (ex <= 0 || ey <= 0 || ez <= 0) return false;
    const double dx = (x - cx) / ex;
    const double dy = (y - cy) / ey;
    const double dz = (z - cz) / ez;
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct Geometry {
  Ellipsoid head, tumor, cochlea;
};

double draw(Rng& rng, Range r) { return r.lo + rng.uniform() * (r.hi - r.lo); }

void check_range(const char* name, Range r, float lo_min) {
  if (!(r.lo >= lo_min) || !(r.hi >= r.lo) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
    throw ValidationError(std::string("phantom spec: bad range for ") + name);
}

// Coarse random grid upsampled trilinearly to the full volume; drives texture
// and bias fields.
std::vector<float> smooth_field(Rng& rng, int gnx, int gny, int gnz, int nx, int ny, int nz,
                                bool gaussian) {
  std::vector<double> grid(static_cast<std::size_t>(gnx) * gny * gnz);
  for (double& g : grid) g = gaussian ? rng.normal() : rng.uniform() * 2.0 - 1.0;
  auto gat = [&](int i, int j, int k) {
    return grid[(static_cast<std::size_t>(k) * gny + j) * gnx + i];
  };
  std::vector<float> out(static_cast<std::size_t>(nx) * ny * nz);
  std::size_t idx = 0;
  for (int k = 0; k < nz; ++k) {
    const double gz = nz > 1 ? static_cast<double>(k) / (nz - 1) * (gnz - 1) : 0.0;
    const int z0 = std::min(static_cast<int>(gz), gnz - 2);
    const double fz = gz - z0;
    for (int j = 0; j < ny; ++j) {
      const double gy = ny > 1 ? static_cast<double>(j) / (ny - 1) * (gny - 1) : 0.0;
      const int y0 = std::min(static_cast<int>(gy), gny - 2);
      const double fy = gy - y0;
      for (int i = 0; i < nx; ++i) {
        const double gx = nx > 1 ? static_cast<double>(i) / (nx - 1) * (gnx - 1) : 0.0;
        const int x0 = std::min(static_cast<int>(gx), gnx - 2);
        const double fx = gx - x0;
        const double c00 = gat(x0, y0, z0) * (1 - fx) + gat(x0 + 1, y0, z0) * fx;
        const double c10 = gat(x0, y0 + 1, z0) * (1 - fx) + gat(x0 + 1, y0 + 1, z0) * fx;
        const double c01 = gat(x0, y0, z0 + 1) * (1 - fx) + gat(x0 + 1, y0, z0 + 1) * fx;
        const double c11 =
            gat(x0, y0 + 1, z0 + 1) * (1 - fx) + gat(x0 + 1, y0 + 1, z0 + 1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        out[idx++] = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  return out;
}

Geometry sample_geometry(const PhantomSpec& s, Rng& rng) {
  Geometry g;
  g.head.cx = s.nx / 2.0 + (rng.uniform() * 4.0 - 2.0);
  g.head.cy = s.ny / 2.0 + (rng.uniform() * 4.0 - 2.0);
  g.head.cz = s.nz / 2.0 + (rng.uniform() * 1.5 - 0.75);
  g.head.rx = draw(rng, s.head_rx);
  g.head.ry = draw(rng, s.head_ry);
  g.head.rz = draw(rng, s.head_rz);

  const double zscale = s.spacing.z > 0 ? s.spacing.x / s.spacing.z : 1.0;
  for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
    const double rt = draw(rng, s.tumor_r);
    const double rtz = std::max(1.2, rt * s.tumor_rz_factor);
    const double phi = rng.uniform() * kTau;
    const double frac = 0.15 + rng.uniform() * 0.30;
    Ellipsoid tumor;
    tumor.cx = g.head.cx + frac * g.head.rx * std::cos(phi);
    tumor.cy = g.head.cy + frac * g.head.ry * std::sin(phi);
    tumor.cz = g.head.cz + (rng.uniform() * 2.0 - 1.0);
    tumor.rx = tumor.ry = rt;
    tumor.rz = rtz;

    const double rc = draw(rng, s.cochlea_r);
    const double rcz = std::max(1.1, rc * zscale);
    const double psi = rng.uniform() * kTau;
    const double dist = rt + rc + 1.0 + rng.uniform() * 1.5;
    Ellipsoid cochlea;
    cochlea.cx = tumor.cx + dist * std::cos(psi);
    cochlea.cy = tumor.cy + dist * std::sin(psi);
    cochlea.cz = tumor.cz + (rng.uniform() * 1.5 - 0.75);
    cochlea.rx = cochlea.ry = rc;
    cochlea.rz = rcz;

    const bool tumor_in_head = g.head.contains(tumor.cx, tumor.cy, tumor.cz, rt, rt, rtz);
    const bool cochlea_in_head =
        g.head.contains(cochlea.cx, cochlea.cy, cochlea.cz, rc, rc, rcz);
    const bool cochlea_in_z =
        cochlea.cz - rcz >= 0.0 && cochlea.cz + rcz <= s.nz - 1.0;
    const bool tumor_in_z = tumor.cz - rtz >= 0.0 && tumor.cz + rtz <= s.nz - 1.0;
    if (tumor_in_head && cochlea_in_head && tumor_in_z && cochlea_in_z) {
      g.tumor = tumor;
      g.cochlea = cochlea;
      return g;
    }
  }
  throw GenerationError("phantom: structure placement failed after bounded retries");
}

LabelVolume rasterize_labels(const PhantomSpec& s, const Geometry& g) {
  LabelVolume labels(s.nx, s.ny, s.nz, s.spacing);
  for (int k = 0; k < s.nz; ++k)
    for (int j = 0; j < s.ny; ++j)
      for (int i = 0; i < s.nx; ++i) {
        if (g.cochlea.contains(i, j, k))
          labels.at(i, j, k) = 2;
        else if (g.tumor.contains(i, j, k))
          labels.at(i, j, k) = 1;
      }
  return labels;
}

}  // namespace

void PhantomSpec::validate() const {
  if (nx < 16 || ny < 16 || nz < 4) throw ValidationError("phantom spec: grid too small");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
    throw ValidationError("phantom spec: spacing must be positive");
  check_range("head_rx", head_rx, 1.0f);
  check_range("head_ry", head_ry, 1.0f);
  check_range("head_rz", head_rz, 1.0f);
  check_range("tumor_r", tumor_r, 1.0f);
  check_range("cochlea_r", cochlea_r, 1.0f);
  if (!(tumor_rz_factor > 0.0f)) throw ValidationError("phantom spec: tumor_rz_factor");
  if (nx / 2.0 + 2.0 + head_rx.hi > nx - 1.0 || ny / 2.0 + 2.0 + head_ry.hi > ny - 1.0 ||
      nz / 2.0 + 0.75 + head_rz.hi > nz - 1.0)
    throw ValidationError("phantom spec: head ellipsoid does not fit inside the grid");
  if (tumor_r.hi + 1.0f >= std::min(head_rx.lo, head_ry.lo))
    throw ValidationError("phantom spec: tumor cannot fit inside the head");
  if (!(noise_sigma >= 0.0f) || !(bias_amp >= 0.0f) || !(contrast_gap >= 0.0f))
    throw ValidationError("phantom spec: amplitudes must be non-negative");
  if (std::fabs(source_map.tumor - target_map.tumor) < contrast_gap)
    throw ValidationError("phantom spec: tumor contrast gap below configured minimum");
}

CaseRecord gen_case(const PhantomSpec& spec, std::uint64_t case_seed, Domain domain) {
  spec.validate();

  Rng geom_rng(derive_seed(spec.seed, "phantom-geom", case_seed));
  const Geometry geom = sample_geometry(spec, geom_rng);

  CaseRecord rec;
  rec.domain = domain;
  {
    char buf[64];
    std::snprintf(buf, sizeof buf, "case_%llu_%s",
                  static_cast<unsigned long long>(case_seed), domain_name(domain).c_str());
    rec.case_id = buf;
  }
  rec.labels = rasterize_labels(spec, geom);
  const auto counts = rec.labels.class_counts();
  if (counts[1] < 8 || counts[2] < 8)
    throw GenerationError("phantom: structure rasterized below 8 voxels");

  const ModalityMap& map = domain == Domain::kSource ? spec.source_map : spec.target_map;
  const char* stream = domain == Domain::kSource ? "phantom-render-a" : "phantom-render-b";
  Rng render_rng(derive_seed(spec.seed, stream, case_seed));

  const std::vector<float> texture =
      smooth_field(render_rng, 9, 9, 5, spec.nx, spec.ny, spec.nz, true);
  const std::vector<float> bias =
      smooth_field(render_rng, 3, 3, 2, spec.nx, spec.ny, spec.nz, false);

  Volume3D img(spec.nx, spec.ny, spec.nz, spec.spacing);
  std::size_t idx = 0;
  for (int k = 0; k < spec.nz; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i, ++idx) {
        float base;
        switch (rec.labels.at(i, j, k)) {
          case 1: base = map.tumor; break;
          case 2: base = map.cochlea; break;
          default: base = geom.head.contains(i, j, k) ? map.head : map.air;
        }
        double v = base * (1.0 + map.texture_amp * texture[idx]);
        v *= 1.0 + spec.bias_amp * bias[idx];
        v += spec.noise_sigma * render_rng.normal();
        img.voxels()[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  rec.image = std::move(img);
  return rec;
}

Manifest gen_dataset(const PhantomSpec& spec, int n_source, int n_target_train,
                     int n_target_eval, std::uint64_t master_seed,
                     const std::filesystem::path& data_root) {
  if (n_source < 1 || n_target_train < 1 || n_target_eval < 1)
    throw ValidationError("gen_dataset: all cohort counts must be >= 1");
  PhantomSpec s = spec;
  s.seed = master_seed;
  s.validate();

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(data_root / "images", ec);
  fs::create_directories(data_root / "labels", ec);
  fs::create_directories(data_root / "heldout" / "labels", ec);
  if (ec) throw IoError("gen_dataset: cannot create dataset directories");

  Manifest manifest;
  Manifest eval_manifest;
  char name[64];

  for (int i = 0; i < n_source; ++i) {
    CaseRecord rec = gen_case(s, kSourceSeedBase + static_cast<std::uint64_t>(i),
                              Domain::kSource);
    std::snprintf(name, sizeof name, "src_%04d", i);
    rec.case_id = name;
    const std::string img_rel = "images/" + rec.case_id + ".nii";
    const std::string lab_rel = "labels/" + rec.case_id + ".nii";
    nifti::write_volume_file(data_root / img_rel, rec.image);
    nifti::write_labels_file(data_root / lab_rel, rec.labels);
    manifest.entries.push_back({rec.case_id, Domain::kSource, img_rel, lab_rel});
  }

  auto emit_target = [&](const char* prefix, std::uint64_t seed_base, int count,
                         bool eval_cohort) {
    for (int i = 0; i < count; ++i) {
      CaseRecord rec =
          gen_case(s, seed_base + static_cast<std::uint64_t>(i), Domain::kTarget);
      std::snprintf(name, sizeof name, "%s_%04d", prefix, i);
      rec.case_id = name;
      const std::string img_rel = "images/" + rec.case_id + ".nii";
      const std::string lab_rel = "heldout/labels/" + rec.case_id + ".nii";
      nifti::write_volume_file(data_root / img_rel, rec.image);
      nifti::write_labels_file(data_root / lab_rel, rec.labels);
      manifest.entries.push_back({rec.case_id, Domain::kTarget, img_rel, std::nullopt});
      if (eval_cohort)
        eval_manifest.entries.push_back({rec.case_id, Domain::kTarget,
                                         "../" + img_rel,
                                         "labels/" + rec.case_id + ".nii"});
    }
  };
  emit_target("tgt", kTargetTrainSeedBase, n_target_train, false);
  emit_target("tgteval", kTargetEvalSeedBase, n_target_eval, true);

  write_manifest(data_root / "manifest.txt", manifest);
  write_manifest(data_root / "heldout" / "eval_manifest.txt", eval_manifest);
  return manifest;
}

}  // namespace cmda
