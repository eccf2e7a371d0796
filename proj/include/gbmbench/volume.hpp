#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gbmbench/errors.hpp"

namespace gbm {

/// Orientation fields of a NIfTI header. Carried through round trips
/// untouched; nothing in the library interprets them.
struct Orientation {
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float qfac = 1.0f;  // pixdim[0]
  std::array<float, 3> quatern{0.0f, 0.0f, 0.0f};
  std::array<float, 3> qoffset{0.0f, 0.0f, 0.0f};
  std::array<std::array<float, 4>, 3> srow{};

  bool operator==(const Orientation&) const = default;
};

struct GridMeta {
  std::array<std::size_t, 3> shape{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm, center of voxel (0,0,0)
  std::optional<Orientation> orientation;

  std::size_t size() const noexcept { return shape[0] * shape[1] * shape[2]; }

  /// Linear index; x varies fastest.
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return (z * shape[1] + y) * shape[0] + x;
  }

  std::array<std::size_t, 3> coords(std::size_t i) const noexcept {
    return {i % shape[0], (i / shape[0]) % shape[1], i / (shape[0] * shape[1])};
  }

  double voxel_volume_mm3() const noexcept { return spacing[0] * spacing[1] * spacing[2]; }

  /// Length of the grid diagonal between the outermost voxel centers.
  double diagonal_mm() const noexcept {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double e = static_cast<double>(shape[a] - 1) * spacing[a];
      s += e * e;
    }
    return std::sqrt(s);
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (shape[a] < 1) throw ContractError("grid shape entries must be >= 1");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw ContractError("grid spacing entries must be positive and finite");
      if (!std::isfinite(origin[a])) throw ContractError("grid origin must be finite");
    }
  }

  bool operator==(const GridMeta&) const = default;
};

inline constexpr double kOriginTolerance = 1e-6;  // mm

inline bool grids_compatible(const GridMeta& a, const GridMeta& b) noexcept {
  for (int i = 0; i < 3; ++i) {
    if (a.shape[i] != b.shape[i]) return false;
    if (a.spacing[i] != b.spacing[i]) return false;
    if (!(std::abs(a.origin[i] - b.origin[i]) < kOriginTolerance)) return false;
  }
  return true;
}

inline void require_compatible(const GridMeta& a, const GridMeta& b, const char* what) {
  if (!grids_compatible(a, b)) throw ContractError(std::string("incompatible grids: ") + what);
}

/// Tumor compartment labels. The numeric values are the on-disk convention.
enum class Label : std::uint8_t { Background = 0, Necrosis = 1, Edema = 2, Enhancing = 3 };

inline constexpr bool is_valid_label(int v) noexcept { return v >= 0 && v <= 3; }

/// Dense 3D grid of values in x-fastest order.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  explicit Grid(GridMeta meta, T fill = T{}) : meta_(std::move(meta)) {
    meta_.validate();
    data_.assign(meta_.size(), fill);
  }

  Grid(GridMeta meta, std::vector<T> data) : meta_(std::move(meta)), data_(std::move(data)) {
    meta_.validate();
    if (data_.size() != meta_.size())
      throw ContractError("grid payload length " + std::to_string(data_.size()) +
                          " does not match shape product " + std::to_string(meta_.size()));
  }

  const GridMeta& meta() const noexcept { return meta_; }
  std::size_t size() const noexcept { return data_.size(); }
  const std::array<std::size_t, 3>& shape() const noexcept { return meta_.shape; }

  const std::vector<T>& data() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data_[meta_.index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return data_[meta_.index(x, y, z)];
  }

  bool operator==(const Grid& other) const = default;

 private:
  GridMeta meta_;
  std::vector<T> data_;
};

using ScalarVolume = Grid<double>;
using LabelVolume = Grid<Label>;
/// Binary region; entries are 0 or 1.
using Mask = Grid<std::uint8_t>;

inline std::size_t voxel_count(const Mask& m) noexcept {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

inline bool is_empty(const Mask& m) noexcept {
  return std::none_of(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; });
}

inline Mask intersect(const Mask& a, const Mask& b) {
  require_compatible(a.meta(), b.meta(), "mask intersection");
  Mask out(a.meta());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

/// True where the label is one of `labels`.
inline Mask labels_mask(const LabelVolume& v, std::initializer_list<Label> labels) {
  Mask out(v.meta());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = std::find(labels.begin(), labels.end(), v[i]) != labels.end() ? 1 : 0;
  return out;
}

/// True where value > 0.
inline Mask positive_mask(const ScalarVolume& v) {
  Mask out(v.meta());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? 1 : 0;
  return out;
}

inline Mask threshold_mask(const ScalarVolume& v, double at_least) {
  Mask out(v.meta());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] >= at_least ? 1 : 0;
  return out;
}

}  // namespace gbm
