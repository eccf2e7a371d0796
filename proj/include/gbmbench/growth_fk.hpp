#pragma once

// Fisher-Kolmogorov reaction-diffusion growth model
//
//   dc/dt = div(D grad c) + rho c (1 - c)
//
// on a voxel grid with tissue-dependent diffusivity, plus a volume-matching
// calibration of (d_w, rho) against a preoperative segmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#if defined(__SSE2__) || defined(__x86_64__)
#include <xmmintrin.h>
#define GBM_HAVE_MXCSR 1
#endif

#include "gbmbench/errors.hpp"
#include "gbmbench/morphology.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

struct GrowthParams {
  double d_w = 0.1;       // mm^2/day, white matter
  double rho = 0.025;     // 1/day
  double t_end = 100.0;   // days
  WorldPoint seed;        // mm
  double gm_ratio = 0.1;  // gray / white diffusivity

  void validate() const {
    if (!(d_w >= 0.0) || !std::isfinite(d_w)) throw ContractError("d_w must be finite and >= 0");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw ContractError("rho must be finite and >= 0");
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw ContractError("t_end must be finite and > 0");
    if (!(gm_ratio >= 0.0 && gm_ratio <= 1.0)) throw ContractError("gm_ratio must lie in [0,1]");
  }
};

struct TissueMaps {
  ScalarVolume wm;
  ScalarVolume gm;
  ScalarVolume csf;

  const GridMeta& meta() const noexcept { return wm.meta(); }

  void validate() const {
    require_compatible(wm.meta(), gm.meta(), "tissue wm/gm");
    require_compatible(wm.meta(), csf.meta(), "tissue wm/csf");
    for (std::size_t i = 0; i < wm.size(); ++i) {
      const double a = wm[i], b = gm[i], c = csf[i];
      if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0 && c >= 0.0 && c <= 1.0))
        throw ContractError("tissue probabilities must lie in [0,1] (voxel " + std::to_string(i) + ")");
      if (a + b + c > 1.0 + 1e-6)
        throw ContractError("tissue probabilities sum above 1 (voxel " + std::to_string(i) + ")");
    }
  }
};

/// Tumor cell concentration, 0 <= c <= 1 everywhere.
class CellMap {
 public:
  CellMap() = default;

  explicit CellMap(ScalarVolume density) : c_(std::move(density)) {
    for (std::size_t i = 0; i < c_.size(); ++i) {
      const double v = c_[i];
      if (!(v >= 0.0 && v <= 1.0))
        throw ContractError("cell density outside [0,1] at voxel " + std::to_string(i) + ": " + std::to_string(v));
    }
  }

  const ScalarVolume& density() const noexcept { return c_; }
  const GridMeta& meta() const noexcept { return c_.meta(); }

  double mass_mm3() const noexcept {
    double s = 0.0;
    for (double v : c_.data()) s += v;
    return s * c_.meta().voxel_volume_mm3();
  }

  bool operator==(const CellMap&) const = default;

 private:
  ScalarVolume c_;
};

/// D = d_w (p_wm + gm_ratio p_gm); zero in CSF-dominated voxels and outside
/// the brain (all probabilities zero).
inline ScalarVolume build_diffusion_field(const TissueMaps& tissue, const GrowthParams& params) {
  tissue.validate();
  params.validate();
  ScalarVolume d(tissue.meta());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double wm = tissue.wm[i], gm = tissue.gm[i], csf = tissue.csf[i];
    if (csf > 0.5 || (wm == 0.0 && gm == 0.0 && csf == 0.0)) continue;
    d[i] = params.d_w * (wm + params.gm_ratio * gm);
  }
  return d;
}

/// Isotropic Gaussian bump of unit peak centered on `seed`; values below 1e-6
/// are cut to zero.
inline CellMap seed_initial_condition(const WorldPoint& seed, const GridMeta& meta, double width_mm) {
  meta.validate();
  if (!(width_mm > 0.0)) throw ContractError("seed width must be > 0");
  const std::array<double, 3> s{seed.x, seed.y, seed.z};
  for (int a = 0; a < 3; ++a) {
    const double lo = meta.origin[a] - 0.5 * meta.spacing[a];
    const double hi = meta.origin[a] + (static_cast<double>(meta.shape[a]) - 0.5) * meta.spacing[a];
    if (!(s[a] >= lo && s[a] <= hi)) throw ContractError("seed lies outside the grid");
  }
  ScalarVolume c(meta);
  const double inv = 1.0 / (2.0 * width_mm * width_mm);
  for (std::size_t z = 0; z < meta.shape[2]; ++z)
    for (std::size_t y = 0; y < meta.shape[1]; ++y)
      for (std::size_t x = 0; x < meta.shape[0]; ++x) {
        const WorldPoint p = voxel_center(meta, x, y, z);
        const double dx = p.x - seed.x, dy = p.y - seed.y, dz = p.z - seed.z;
        const double v = std::exp(-(dx * dx + dy * dy + dz * dz) * inv);
        c.at(x, y, z) = v < 1e-6 ? 0.0 : v;
      }
  return CellMap(std::move(c));
}

inline constexpr double kStepSafety = 0.9;

/// Largest step (days) for which the explicit update stays in [0,1].
inline double stable_dt(const ScalarVolume& diffusion, double rho) {
  double dmax = 0.0;
  for (double v : diffusion.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("diffusivity must be finite and >= 0");
    dmax = std::max(dmax, v);
  }
  if (!(rho >= 0.0)) throw ContractError("rho must be >= 0");
  if (dmax == 0.0 && rho == 0.0) throw DegenerateError("no dynamics: zero diffusivity and zero proliferation");
  const auto& sp = diffusion.meta().spacing;
  const double inv_h2 = 1.0 / (sp[0] * sp[0]) + 1.0 / (sp[1] * sp[1]) + 1.0 / (sp[2] * sp[2]);
  double limit = std::numeric_limits<double>::infinity();
  if (dmax > 0.0) limit = 1.0 / (2.0 * dmax * inv_h2);
  if (rho > 0.0) limit = std::min(limit, 1.0 / (4.0 * rho));
  return kStepSafety * limit;
}

struct SimulationOptions {
  /// Verify 0 <= c <= 1 (up to rounding) after every step before clamping.
  bool check_range_each_step = false;
};

namespace fk_detail {

inline double face_diffusivity(double a, double b) noexcept {
  if (a == 0.0 || b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

#ifdef GBM_HAVE_MXCSR
// Subnormal fronts make the stencil an order of magnitude slower; results
// stay deterministic under flush-to-zero.
class FlushDenormals {
 public:
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_;
};
#else
struct FlushDenormals {};
#endif

}  // namespace fk_detail

/// Integrates the Fisher-Kolmogorov equation from `init` for `t_end` days.
///
/// Each step is a forward-Euler diffusion update with a conservative flux
/// stencil (harmonic-mean face diffusivity, zero flux across D = 0 faces and
/// the grid boundary) followed by the exact logistic solution of the
/// reaction term over the same step. The step is stable_dt(); the final step
/// is shortened to land on t_end.
inline CellMap simulate_fk(const CellMap& init, const ScalarVolume& diffusion, double rho, double t_end,
                           const SimulationOptions& opts = {}) {
  require_compatible(init.meta(), diffusion.meta(), "simulate_fk");
  if (!(t_end > 0.0) || !std::isfinite(t_end)) throw ContractError("t_end must be finite and > 0");
  const double dt = stable_dt(diffusion, rho);

  const GridMeta& m = diffusion.meta();
  const auto& d = diffusion.data();
  const auto& c0 = init.density().data();

  // Outside the bounding box of {D > 0} and {c > 0} nothing ever changes.
  std::array<std::size_t, 3> lo3{m.shape}, hi3{0, 0, 0};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (d[i] == 0.0 && c0[i] == 0.0) continue;
    const auto k = m.coords(i);
    for (int a = 0; a < 3; ++a) {
      lo3[a] = std::min(lo3[a], k[a]);
      hi3[a] = std::max(hi3[a], k[a] + 1);
    }
  }
  if (hi3[0] == 0) return init;
  const std::size_t nx = hi3[0] - lo3[0], ny = hi3[1] - lo3[1], nz = hi3[2] - lo3[2];

  // Work on the box padded by one zero-flux voxel per side so the stencil
  // has no boundary branches. k* hold D_face / h^2 towards the +x, +y, +z side.
  const std::size_t px = nx + 2, py = ny + 2, pz = nz + 2;
  const std::size_t psxy = px * py, pn = psxy * pz;
  auto pidx = [=](std::size_t x, std::size_t y, std::size_t z) { return ((z + 1) * py + (y + 1)) * px + (x + 1); };
  auto gidx = [&](std::size_t x, std::size_t y, std::size_t z) { return m.index(x + lo3[0], y + lo3[1], z + lo3[2]); };
  std::vector<double> kx(pn, 0.0), ky(pn, 0.0), kz(pn, 0.0), c(pn, 0.0);
  bool any_flux = false;
  const double ix2 = 1.0 / (m.spacing[0] * m.spacing[0]);
  const double iy2 = 1.0 / (m.spacing[1] * m.spacing[1]);
  const double iz2 = 1.0 / (m.spacing[2] * m.spacing[2]);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = gidx(x, y, z), j = pidx(x, y, z);
        c[j] = c0[i];
        if (x + 1 < nx) kx[j] = fk_detail::face_diffusivity(d[i], d[gidx(x + 1, y, z)]) * ix2;
        if (y + 1 < ny) ky[j] = fk_detail::face_diffusivity(d[i], d[gidx(x, y + 1, z)]) * iy2;
        if (z + 1 < nz) kz[j] = fk_detail::face_diffusivity(d[i], d[gidx(x, y, z + 1)]) * iz2;
        any_flux = any_flux || kx[j] != 0.0 || ky[j] != 0.0 || kz[j] != 0.0;
      }

  fk_detail::FlushDenormals ftz;
  std::vector<double> next(pn, 0.0);

  const double quotient = t_end / dt;
  std::size_t steps = static_cast<std::size_t>(std::ceil(quotient * (1.0 - 1e-12)));
  steps = std::max<std::size_t>(steps, 1);
  constexpr double kRangeSlack = 1e-12;
  const double hflux = any_flux ? 1.0 : 0.0;

  for (std::size_t step = 0; step < steps; ++step) {
    const double h = ((step + 1 == steps) ? t_end - static_cast<double>(steps - 1) * dt : dt) * hflux;
    const double growth = std::exp(rho * ((step + 1 == steps) ? t_end - static_cast<double>(steps - 1) * dt : dt));
    const double gm1 = growth - 1.0;
    double lo = 0.0, hi = 1.0, sum = 0.0;

    // Each face flux is evaluated with identical operands from both sides,
    // so the divergence telescopes exactly.
    for (std::size_t z = 1; z <= nz; ++z)
      for (std::size_t y = 1; y <= ny; ++y) {
        const std::size_t b = z * psxy + y * px + 1;
        const double* __restrict cr = c.data() + b;
        const double* __restrict kxr = kx.data() + b;
        const double* __restrict kyr = ky.data() + b;
        const double* __restrict kzr = kz.data() + b;
        const double* __restrict kyd = kyr - px;
        const double* __restrict kzd = kzr - psxy;
        double* __restrict out = next.data() + b;
#pragma omp simd reduction(min : lo) reduction(max : hi) reduction(+ : sum)
        for (std::size_t x = 0; x < nx; ++x) {
          const double v = cr[x];
          const double div = kxr[x] * (cr[x + 1] - v) - kxr[x - 1] * (v - cr[x - 1]) + kyr[x] * (cr[x + px] - v) -
                             kyd[x] * (v - cr[x - px]) + kzr[x] * (cr[x + psxy] - v) - kzd[x] * (v - cr[x - psxy]);
          double v1 = v + h * div;
          v1 = v1 * growth / (1.0 + v1 * gm1);
          lo = std::min(lo, v1);
          hi = std::max(hi, v1);
          sum += v1;  // only inspected for NaN/inf
          out[x] = std::min(std::max(v1, 0.0), 1.0);
        }
      }
    if (!std::isfinite(sum)) throw NumericalInstabilityError(step, "non-finite cell density");
    if (opts.check_range_each_step && (lo < -kRangeSlack || hi > 1.0 + kRangeSlack))
      throw NumericalInstabilityError(step, "cell density left [0,1] beyond rounding");
    c.swap(next);
  }

  std::vector<double> result = c0;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) result[gidx(x, y, z)] = c[pidx(x, y, z)];
  return CellMap(ScalarVolume(m, std::move(result)));
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationConfig {
  double t_end = 100.0;
  double theta_core = 0.8;
  double theta_edema = 0.16;
  std::size_t grid_points = 8;
  double d_w_min = 0.02, d_w_max = 2.0;
  double rho_min = 0.002, rho_max = 0.2;
  double seed_width_mm = 1.5;
  double gm_ratio = 0.1;
  /// Evaluate every coarse grid point before descending; plain coordinate
  /// descent from the lower corner stalls in the d_w/rho valley.
  bool full_grid_scan = true;
  /// Number of best coarse points refined after a full scan.
  std::size_t search_starts = 2;
  /// Pattern-search levels after the coarse search, each at half the
  /// previous pitch and repeated at a level until no neighbor improves.
  std::size_t refinement_levels = 4;

  void validate() const {
    if (!(t_end > 0.0)) throw ContractError("calibration t_end must be > 0");
    if (!(theta_edema > 0.0 && theta_edema < theta_core && theta_core < 1.0))
      throw ContractError("calibration thresholds must satisfy 0 < theta_edema < theta_core < 1");
    if (grid_points < 2) throw ContractError("calibration grid needs at least 2 points per axis");
    if (refinement_levels > 20) throw ContractError("calibration refinement_levels must be <= 20");
    if (!(d_w_min > 0.0 && d_w_min < d_w_max)) throw ContractError("calibration d_w range invalid");
    if (!(rho_min > 0.0 && rho_min < rho_max)) throw ContractError("calibration rho range invalid");
    if (!(seed_width_mm > 0.0)) throw ContractError("seed width must be > 0");
  }
};

struct CalibrationCandidate {
  double d_w = 0.0;
  double rho = 0.0;
  double objective = std::numeric_limits<double>::infinity();
};

/// Lower objective wins; ties go to the lexicographically smaller (d_w, rho).
inline bool better_candidate(const CalibrationCandidate& a, const CalibrationCandidate& b) noexcept {
  if (a.objective != b.objective) return a.objective < b.objective;
  if (a.d_w != b.d_w) return a.d_w < b.d_w;
  return a.rho < b.rho;
}

struct CalibrationResult {
  GrowthParams params;
  double objective = 0.0;
  CellMap cellmap;  // simulation at the returned params
  std::size_t simulations = 0;
};

/// Volume-matching objective for a simulated cell map.
inline double volume_objective(const CellMap& sim, double core_voxels, double outline_voxels, double theta_core,
                               double theta_edema) {
  double n_core = 0.0, n_outline = 0.0;
  for (double v : sim.density().data()) {
    if (v >= theta_core) n_core += 1.0;
    if (v >= theta_edema) n_outline += 1.0;
  }
  const double a = n_core / core_voxels - 1.0;
  const double b = n_outline / outline_voxels - 1.0;
  return a * a + b * b;
}

/// Fits (d_w, rho) so that the simulated superlevel sets at theta_core and
/// theta_edema match the volumes of the preoperative core (labels 1,3) and
/// outline (labels 1,2,3). Seed is the core center of mass.
///
/// Search: a log-spaced grid_points x grid_points grid, either scanned in
/// full (refining the search_starts best points) or walked by coordinate
/// descent from the lower corner. Refinement is pattern search over the 8
/// neighbors at successively halved pitch, clamped to the ranges. The result
/// is the best of every simulation run.
inline CalibrationResult calibrate_fk(const LabelVolume& preop, const TissueMaps& tissue,
                                      const CalibrationConfig& cfg = {}) {
  cfg.validate();
  tissue.validate();
  require_compatible(preop.meta(), tissue.meta(), "calibrate_fk preop/tissue");

  const Mask core = labels_mask(preop, {Label::Necrosis, Label::Enhancing});
  const Mask outline = labels_mask(preop, {Label::Necrosis, Label::Edema, Label::Enhancing});
  const auto core_n = static_cast<double>(voxel_count(core));
  if (core_n == 0.0) throw EmptyRegionError("preoperative tumor core is empty");
  const auto outline_n = static_cast<double>(voxel_count(outline));

  GrowthParams base;
  base.t_end = cfg.t_end;
  base.gm_ratio = cfg.gm_ratio;
  base.seed = center_of_mass(core);
  const CellMap init = seed_initial_condition(base.seed, preop.meta(), cfg.seed_width_mm);

  const double last = static_cast<double>(cfg.grid_points - 1);
  auto at = [last](double lo, double hi, double u) { return lo * std::pow(hi / lo, u / last); };

  // Grid positions in units of the finest refinement pitch.
  const long scale = 1L << cfg.refinement_levels;
  std::map<std::pair<long, long>, CalibrationCandidate> cache;
  CalibrationCandidate best_seen;
  CellMap best_sim;
  std::size_t sims = 0;
  auto evaluate = [&](long ui, long uj) -> CalibrationCandidate {
    auto key = std::make_pair(ui, uj);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    GrowthParams p = base;
    p.d_w = at(cfg.d_w_min, cfg.d_w_max, static_cast<double>(ui) / static_cast<double>(scale));
    p.rho = at(cfg.rho_min, cfg.rho_max, static_cast<double>(uj) / static_cast<double>(scale));
    const ScalarVolume dfield = build_diffusion_field(tissue, p);
    CellMap sim = simulate_fk(init, dfield, p.rho, p.t_end);
    ++sims;
    CalibrationCandidate cand{p.d_w, p.rho, volume_objective(sim, core_n, outline_n, cfg.theta_core, cfg.theta_edema)};
    if (sims == 1 || better_candidate(cand, best_seen)) {
      best_seen = cand;
      best_sim = std::move(sim);
    }
    cache.emplace(key, cand);
    return cand;
  };

  const long top = static_cast<long>(cfg.grid_points - 1) * scale;
  auto pattern_search = [&](long ci, long cj) {
    CalibrationCandidate best = evaluate(ci, cj);
    long step = scale / 2;
    for (std::size_t level = 0; level < cfg.refinement_levels; ++level, step /= 2) {
      for (bool moved = true; moved;) {
        moved = false;
        const long bi = ci, bj = cj;
        for (long di = -1; di <= 1; ++di)
          for (long dj = -1; dj <= 1; ++dj) {
            const long i = std::clamp(bi + di * step, 0L, top);
            const long j = std::clamp(bj + dj * step, 0L, top);
            const auto c = evaluate(i, j);
            if (better_candidate(c, best)) {
              best = c;
              ci = i;
              cj = j;
              moved = true;
            }
          }
      }
    }
  };

  if (core_n == 1.0) {
    // A single-voxel core carries no shape information; keep the lower corner.
    evaluate(0, 0);
  } else if (cfg.full_grid_scan) {
    std::vector<std::pair<CalibrationCandidate, std::pair<long, long>>> coarse;
    for (long j = 0; j <= top; j += scale)
      for (long i = 0; i <= top; i += scale) coarse.push_back({evaluate(i, j), {i, j}});
    std::sort(coarse.begin(), coarse.end(),
              [](const auto& a, const auto& b) { return better_candidate(a.first, b.first); });
    const std::size_t starts = std::min<std::size_t>(cfg.search_starts, coarse.size());
    for (std::size_t k = 0; k < starts; ++k) pattern_search(coarse[k].second.first, coarse[k].second.second);
  } else {
    long ci = 0, cj = 0;
    CalibrationCandidate best = evaluate(ci, cj);
    for (std::size_t sweep = 0; sweep < 4 * cfg.grid_points; ++sweep) {
      const long pi = ci, pj = cj;
      for (long i = 0; i <= top; i += scale) {
        const auto c = evaluate(i, cj);
        if (better_candidate(c, best)) {
          best = c;
          ci = i;
        }
      }
      for (long j = 0; j <= top; j += scale) {
        const auto c = evaluate(ci, j);
        if (better_candidate(c, best)) {
          best = c;
          cj = j;
        }
      }
      if (ci == pi && cj == pj) break;
    }
    pattern_search(ci, cj);
  }

  // Every evaluation is compared under the same total order, so the best
  // simulation seen is the one at the returned parameters.
  CalibrationResult out;
  out.params = base;
  out.params.d_w = best_seen.d_w;
  out.params.rho = best_seen.rho;
  out.objective = best_seen.objective;
  out.cellmap = std::move(best_sim);
  out.simulations = sims;
  return out;
}

}  // namespace gbm
