#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "gbmbench/errors.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const WorldPoint&) const = default;
};

inline double distance_mm(const WorldPoint& a, const WorldPoint& b) noexcept {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline WorldPoint voxel_center(const GridMeta& m, std::size_t x, std::size_t y, std::size_t z) noexcept {
  return {m.origin[0] + static_cast<double>(x) * m.spacing[0], m.origin[1] + static_cast<double>(y) * m.spacing[1],
          m.origin[2] + static_cast<double>(z) * m.spacing[2]};
}

namespace morph_detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas f[q] + w (p - q)^2 over one line (Felzenszwalb &
// Huttenlocher). Infinite samples contribute no parabola.
inline void envelope_1d(const double* f, double* d, std::size_t n, double w, std::vector<std::size_t>& v,
                        std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    const double fq = f[q] + w * static_cast<double>(q) * static_cast<double>(q);
    double s;
    for (;;) {
      const std::size_t r = v[static_cast<std::size_t>(k)];
      const double fr = f[r] + w * static_cast<double>(r) * static_cast<double>(r);
      s = (fq - fr) / (2.0 * w * (static_cast<double>(q) - static_cast<double>(r)));
      if (s > z[static_cast<std::size_t>(k)] || k == 0) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    for (std::size_t p = 0; p < n; ++p) d[p] = kInf;
    return;
  }
  std::size_t j = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (z[j + 1] < static_cast<double>(p)) ++j;
    const double dp = static_cast<double>(p) - static_cast<double>(v[j]);
    d[p] = f[v[j]] + w * dp * dp;
  }
}

}  // namespace morph_detail

/// Squared Euclidean distance (mm^2) from each voxel center to the nearest
/// true voxel center; +inf everywhere for an empty mask.
inline ScalarVolume squared_distance_transform(const Mask& mask) {
  using morph_detail::kInf;
  const auto& m = mask.meta();
  const std::size_t nx = m.shape[0], ny = m.shape[1];
  ScalarVolume out(m);
  auto& g = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? 0.0 : kInf;

  std::vector<double> line, res;
  std::vector<std::size_t> v;
  std::vector<double> z;
  const std::array<std::size_t, 3> strides{1, nx, nx * ny};

  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = m.shape[axis];
    if (n == 1) continue;
    const double w = m.spacing[axis] * m.spacing[axis];
    const std::size_t stride = strides[axis];
    line.resize(n);
    res.resize(n);
    // Iterate over every line parallel to `axis`.
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::size_t j = 0; j < m.shape[a2]; ++j) {
      for (std::size_t i = 0; i < m.shape[a1]; ++i) {
        const std::size_t base = i * strides[a1] + j * strides[a2];
        for (std::size_t p = 0; p < n; ++p) line[p] = g[base + p * stride];
        morph_detail::envelope_1d(line.data(), res.data(), n, w, v, z);
        for (std::size_t p = 0; p < n; ++p) g[base + p * stride] = res[p];
      }
    }
  }
  return out;
}

/// Exact Euclidean distance transform in mm, honoring anisotropic spacing.
/// An empty mask yields +inf everywhere (larger than any in-grid distance).
inline ScalarVolume distance_transform(const Mask& mask) {
  ScalarVolume out = squared_distance_transform(mask);
  for (auto& x : out.data()) x = std::sqrt(x);
  return out;
}

/// Closed-ball dilation by `margin_mm`, restricted to `restrict_to`.
inline Mask dilate_mm(const Mask& mask, double margin_mm, const Mask& restrict_to) {
  require_compatible(mask.meta(), restrict_to.meta(), "dilate_mm");
  if (!(margin_mm >= 0.0) || !std::isfinite(margin_mm)) throw ContractError("dilation margin must be finite and >= 0");
  Mask out(mask.meta());
  if (margin_mm == 0.0) {
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = (mask[i] && restrict_to[i]) ? 1 : 0;
    return out;
  }
  const ScalarVolume dist = distance_transform(mask);
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = (restrict_to[i] && dist[i] <= margin_mm) ? 1 : 0;
  return out;
}

namespace morph_detail {

template <typename Weight>
WorldPoint weighted_center(const GridMeta& m, Weight&& weight) {
  double sw = 0.0, sx = 0.0, sy = 0.0, sz = 0.0;
  for (std::size_t z = 0; z < m.shape[2]; ++z)
    for (std::size_t y = 0; y < m.shape[1]; ++y)
      for (std::size_t x = 0; x < m.shape[0]; ++x) {
        const double w = weight(m.index(x, y, z));
        if (w == 0.0) continue;
        sw += w;
        sx += w * static_cast<double>(x);
        sy += w * static_cast<double>(y);
        sz += w * static_cast<double>(z);
      }
  if (!(sw > 0.0)) throw EmptyRegionError("center of mass of a region with zero total weight");
  return {m.origin[0] + m.spacing[0] * (sx / sw), m.origin[1] + m.spacing[1] * (sy / sw),
          m.origin[2] + m.spacing[2] * (sz / sw)};
}

}  // namespace morph_detail

inline WorldPoint center_of_mass(const Mask& mask) {
  return morph_detail::weighted_center(mask.meta(), [&](std::size_t i) { return mask[i] ? 1.0 : 0.0; });
}

/// Weights must be nonnegative.
inline WorldPoint center_of_mass(const ScalarVolume& weights) {
  for (double w : weights.data())
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError("center_of_mass weights must be finite and >= 0");
  return morph_detail::weighted_center(weights.meta(), [&](std::size_t i) { return weights[i]; });
}

inline double volume_cm3(const Mask& mask) {
  return static_cast<double>(voxel_count(mask)) * mask.meta().voxel_volume_mm3() / 1000.0;
}

/// Number of 26-connected components of the true voxels.
inline std::size_t count_components(const Mask& mask) {
  const auto& m = mask.meta();
  const auto [nx, ny, nz] = m.shape;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t components = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const auto c = m.coords(cur);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto x = static_cast<std::ptrdiff_t>(c[0]) + dx;
            const auto y = static_cast<std::ptrdiff_t>(c[1]) + dy;
            const auto z = static_cast<std::ptrdiff_t>(c[2]) + dz;
            if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::ptrdiff_t>(nx) ||
                y >= static_cast<std::ptrdiff_t>(ny) || z >= static_cast<std::ptrdiff_t>(nz))
              continue;
            const std::size_t nb = m.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                           static_cast<std::size_t>(z));
            if (mask[nb] && !seen[nb]) {
              seen[nb] = 1;
              stack.push_back(nb);
            }
          }
    }
  }
  return components;
}

}  // namespace gbm
