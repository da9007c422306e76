#include "cmda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "cmda/error.hpp"

namespace cmda {
namespace {

constexpr double kUnreached = 1e30;

void require_same_grid(const LabelVolume& a, const LabelVolume& b, bool check_spacing) {
  if (a.nx() != b.nx() || a.ny() != b.ny() || a.nz() != b.nz())
    throw ValidationError("metrics: label grids have different dimensions");
  if (check_spacing && !(a.spacing() == b.spacing()))
    throw ValidationError("metrics: label grids have different spacing");
}

// Felzenszwalb-Huttenlocher lower-envelope distance transform along one axis
// with physical sample positions i*s. Exact for squared Euclidean distances.
// Unreached cells (>= kUnreached) are excluded from the envelope: adding their
// offset to 1e30 would round away and corrupt parabola intersections.
void dt1d(const double* f, double* d, int n, double s, int* v, double* z) {
  const double inf = std::numeric_limits<double>::infinity();
  const double s2 = s * s;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] >= kUnreached) continue;
    double inter = -inf;
    while (k >= 0) {
      const int p = v[k];
      inter = ((f[q] + q * (double)q * s2) - (f[p] + p * (double)p * s2)) /
              (2.0 * s * (q - p));
      if (inter <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) inter = -inf;
    ++k;
    v[k] = q;
    z[k] = inter;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::copy(f, f + n, d);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    const double x = q * s;
    while (z[k + 1] < x) ++k;
    const double dx = x - v[k] * s;
    d[q] = dx * dx + f[v[k]];
  }
}

// Squared-distance field (mm^2) to the given seed voxels over the full grid.
std::vector<double> edt_sq(const std::vector<SurfacePoint>& seeds, int nx, int ny, int nz,
                           Spacing sp) {
  std::vector<double> field(static_cast<std::size_t>(nx) * ny * nz, kUnreached);
  auto at = [&](int i, int j, int k) -> double& {
    return field[(static_cast<std::size_t>(k) * ny + j) * nx + i];
  };
  for (const SurfacePoint& p : seeds) at(p.i, p.j, p.k) = 0.0;

  const int nmax = std::max({nx, ny, nz});
  std::vector<double> f(nmax), d(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) f[i] = at(i, j, k);
      dt1d(f.data(), d.data(), nx, sp.x, v.data(), z.data());
      for (int i = 0; i < nx; ++i) at(i, j, k) = d[i];
    }
  for (int k = 0; k < nz; ++k)
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) f[j] = at(i, j, k);
      dt1d(f.data(), d.data(), ny, sp.y, v.data(), z.data());
      for (int j = 0; j < ny; ++j) at(i, j, k) = d[j];
    }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      for (int k = 0; k < nz; ++k) f[k] = at(i, j, k);
      dt1d(f.data(), d.data(), nz, sp.z, v.data(), z.data());
      for (int k = 0; k < nz; ++k) at(i, j, k) = d[k];
    }
  return field;
}

double mean_surface_distance(const std::vector<SurfacePoint>& from,
                             const std::vector<double>& sq_to, int nx, int ny) {
  double sum = 0.0;
  for (const SurfacePoint& p : from)
    sum += std::sqrt(sq_to[(static_cast<std::size_t>(p.k) * ny + p.j) * nx + p.i]);
  return sum / static_cast<double>(from.size());
}

Aggregate aggregate_values(const std::vector<double>& xs) {
  Aggregate a;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) a.mean += x;
  a.mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - a.mean) * (x - a.mean);
  a.sd = std::sqrt(var / n);
  return a;
}

std::string flag_name(const PairFlags& f) {
  if (f.both_empty()) return "both_empty";
  if (f.pred_empty) return "pred_empty";
  if (f.ref_empty) return "ref_empty";
  return "-";
}

PairFlags parse_flag(const std::string& s) {
  PairFlags f;
  if (s == "both_empty") {
    f.pred_empty = f.ref_empty = f.substituted = true;
  } else if (s == "pred_empty") {
    f.pred_empty = true;
  } else if (s == "ref_empty") {
    f.ref_empty = true;
  } else if (s != "-") {
    throw FormatError("metrics csv: unknown flag '" + s + "'");
  }
  return f;
}

}  // namespace

std::vector<SurfacePoint> extract_surface(const LabelVolume& mask, int cls) {
  std::vector<SurfacePoint> out;
  const int nx = mask.nx(), ny = mask.ny(), nz = mask.nz();
  auto fg = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return false;
    return mask.at(i, j, k) == cls;
  };
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (!fg(i, j, k)) continue;
        if (!fg(i - 1, j, k) || !fg(i + 1, j, k) || !fg(i, j - 1, k) || !fg(i, j + 1, k) ||
            !fg(i, j, k - 1) || !fg(i, j, k + 1))
          out.push_back({i, j, k});
      }
  return out;
}

double dsc(const LabelVolume& pred, const LabelVolume& ref, int cls, PairFlags* flags) {
  require_same_grid(pred, ref, false);
  std::size_t np = 0, nr = 0, ni = 0;
  for (std::size_t i = 0; i < pred.labels().size(); ++i) {
    const bool p = pred.labels()[i] == cls;
    const bool r = ref.labels()[i] == cls;
    np += p;
    nr += r;
    ni += p && r;
  }
  PairFlags f;
  f.pred_empty = np == 0;
  f.ref_empty = nr == 0;
  double value;
  if (np == 0 && nr == 0) {
    f.substituted = true;
    value = 1.0;
  } else {
    value = 2.0 * static_cast<double>(ni) / static_cast<double>(np + nr);
  }
  if (flags) *flags = f;
  return value;
}

double volume_diagonal_mm(const LabelVolume& v) {
  const double dx = v.nx() * static_cast<double>(v.spacing().x);
  const double dy = v.ny() * static_cast<double>(v.spacing().y);
  const double dz = v.nz() * static_cast<double>(v.spacing().z);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double assd(const LabelVolume& pred, const LabelVolume& ref, int cls, double penalty_mm,
            PairFlags* flags) {
  require_same_grid(pred, ref, true);
  const std::vector<SurfacePoint> sp = extract_surface(pred, cls);
  const std::vector<SurfacePoint> sr = extract_surface(ref, cls);
  PairFlags f;
  f.pred_empty = sp.empty();
  f.ref_empty = sr.empty();
  double value;
  if (sp.empty() && sr.empty()) {
    f.substituted = true;
    value = 0.0;
  } else if (sp.empty() || sr.empty()) {
    f.substituted = true;
    value = penalty_mm < 0.0 ? volume_diagonal_mm(pred) : penalty_mm;
  } else {
    const int nx = pred.nx(), ny = pred.ny(), nz = pred.nz();
    const std::vector<double> to_ref = edt_sq(sr, nx, ny, nz, pred.spacing());
    const std::vector<double> to_pred = edt_sq(sp, nx, ny, nz, pred.spacing());
    value = 0.5 * (mean_surface_distance(sp, to_ref, nx, ny) +
                   mean_surface_distance(sr, to_pred, nx, ny));
  }
  if (flags) *flags = f;
  return value;
}

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred,
                          const LabelVolume& ref, double penalty_mm) {
  CaseMetrics m;
  m.case_id = case_id;
  m.vs.dsc = dsc(pred, ref, 1, &m.vs.flags);
  m.cochlea.dsc = dsc(pred, ref, 2, &m.cochlea.flags);
  PairFlags af;
  m.vs.assd = assd(pred, ref, 1, penalty_mm, &af);
  m.vs.flags.substituted = m.vs.flags.substituted || af.substituted;
  m.cochlea.assd = assd(pred, ref, 2, penalty_mm, &af);
  m.cochlea.flags.substituted = m.cochlea.flags.substituted || af.substituted;
  return m;
}

MetricsReport aggregate_report(std::vector<CaseMetrics> cases) {
  if (cases.empty()) throw ValidationError("aggregate_report: no cases");
  MetricsReport r;
  std::vector<double> dm, dv, dc, av, ac;
  for (const CaseMetrics& c : cases) {
    dm.push_back(c.dsc_mean());
    dv.push_back(c.vs.dsc);
    dc.push_back(c.cochlea.dsc);
    av.push_back(c.vs.assd);
    ac.push_back(c.cochlea.assd);
  }
  r.dsc_mean = aggregate_values(dm);
  r.dsc_vs = aggregate_values(dv);
  r.dsc_cochlea = aggregate_values(dc);
  r.assd_vs = aggregate_values(av);
  r.assd_cochlea = aggregate_values(ac);
  r.cases = std::move(cases);
  return r;
}

std::string format_mean_sd(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", a.mean, a.sd);
  return buf;
}

std::string cases_to_csv(const std::vector<CaseMetrics>& cases) {
  std::string out =
      "case_id,dsc_mean,dsc_vs,dsc_cochlea,assd_vs,assd_cochlea,flag_vs,flag_cochlea\n";
  char buf[256];
  for (const CaseMetrics& c : cases) {
    std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f,%.9f,%.9f,%.9f,%s,%s\n",
                  c.case_id.c_str(), c.dsc_mean(), c.vs.dsc, c.cochlea.dsc, c.vs.assd,
                  c.cochlea.assd, flag_name(c.vs.flags).c_str(),
                  flag_name(c.cochlea.flags).c_str());
    out += buf;
  }
  return out;
}

std::vector<CaseMetrics> cases_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CaseMetrics> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (!line.starts_with("case_id,")) throw FormatError("metrics csv: missing header");
      continue;
    }
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 8) throw FormatError("metrics csv: expected 8 fields");
    CaseMetrics c;
    c.case_id = fields[0];
    try {
      c.vs.dsc = std::stod(fields[2]);
      c.cochlea.dsc = std::stod(fields[3]);
      c.vs.assd = std::stod(fields[4]);
      c.cochlea.assd = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw FormatError("metrics csv: bad numeric field");
    }
    c.vs.flags = parse_flag(fields[6]);
    c.cochlea.flags = parse_flag(fields[7]);
    out.push_back(std::move(c));
  }
  return out;
}

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t name_w = 8;
  for (const auto& [name, rep] : rows) name_w = std::max(name_w, name.size());
  const int col = 18;
  std::ostringstream out;
  // Column widths count display characters; the plus-minus sign is two bytes.
  auto display_width = [](const std::string& s) {
    return s.size() - static_cast<std::size_t>(
                          std::count(s.begin(), s.end(), '\xc2'));
  };
  auto pad = [&](const std::string& s, std::size_t w) {
    out << s;
    for (std::size_t i = display_width(s); i < w; ++i) out << ' ';
  };
  pad("", name_w + 2);
  pad("DSC", 3 * col);
  out << "ASSD (mm)\n";
  pad("Method", name_w + 2);
  pad("Mean", col);
  pad("VS", col);
  pad("Cochlea", col);
  pad("VS", col);
  out << "Cochlea\n";
  for (const auto& [name, rep] : rows) {
    pad(name, name_w + 2);
    pad(format_mean_sd(rep.dsc_mean), col);
    pad(format_mean_sd(rep.dsc_vs), col);
    pad(format_mean_sd(rep.dsc_cochlea), col);
    pad(format_mean_sd(rep.assd_vs), col);
    out << format_mean_sd(rep.assd_cochlea) << "\n";
  }
  return out.str();
}

}  // namespace cmda
