#pragma once

#include <string>
#include <vector>

#include "cmda/volume.hpp"

namespace cmda {

struct SurfacePoint {
  int i = 0, j = 0, k = 0;
  bool operator==(const SurfacePoint&) const = default;
};

// Foreground voxels of class cls with at least one 6-neighbor that is
// background or outside the grid.
std::vector<SurfacePoint> extract_surface(const LabelVolume& mask, int cls);

struct PairFlags {
  bool pred_empty = false;
  bool ref_empty = false;
  bool substituted = false;  // a convention value was used instead of the formula

  bool both_empty() const { return pred_empty && ref_empty; }
};

// 2|A n B| / (|A| + |B|) over class-c masks. Both empty -> 1.0, flagged.
double dsc(const LabelVolume& pred, const LabelVolume& ref, int cls,
           PairFlags* flags = nullptr);

// Average symmetric surface distance in mm over voxel centers in physical
// coordinates. Exactly one surface empty -> penalty_mm (negative means the
// volume diagonal), flagged; both empty -> 0.0, flagged.
double assd(const LabelVolume& pred, const LabelVolume& ref, int cls,
            double penalty_mm = -1.0, PairFlags* flags = nullptr);

double volume_diagonal_mm(const LabelVolume& v);

struct ClassMetrics {
  double dsc = 0.0;
  double assd = 0.0;
  PairFlags flags;
};

// Class 1 is the tumor analog (VS column), class 2 the cochlea analog.
struct CaseMetrics {
  std::string case_id;
  ClassMetrics vs;
  ClassMetrics cochlea;

  double dsc_mean() const { return 0.5 * (vs.dsc + cochlea.dsc); }
};

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred,
                          const LabelVolume& ref, double penalty_mm = -1.0);

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  Aggregate dsc_mean, dsc_vs, dsc_cochlea;
  Aggregate assd_vs, assd_cochlea;
};

MetricsReport aggregate_report(std::vector<CaseMetrics> cases);

std::string format_mean_sd(const Aggregate& a);  // "0.8351 ± 0.1152"

// Per-case CSV; aggregates are recomputable from the rows.
std::string cases_to_csv(const std::vector<CaseMetrics>& cases);
std::vector<CaseMetrics> cases_from_csv(const std::string& text);

// Aligned text table, one row per variant: DSC Mean/VS/Cochlea then
// ASSD VS/Cochlea.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace cmda
