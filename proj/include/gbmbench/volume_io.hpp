#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "gbmbench/errors.hpp"
#include "gbmbench/nifti.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

/// External label value -> normative label value.
using LabelRemap = std::map<int, int>;

enum class VolumeKind { Auto, Mask };

using AnyVolume = std::variant<ScalarVolume, LabelVolume, Mask>;

inline ScalarVolume to_scalar(const NiftiImage& img) { return ScalarVolume(img.meta, img.values()); }

/// Integer-valued image to labels. Values absent from `remap` pass through;
/// every resulting value must lie in {0,1,2,3}.
inline LabelVolume to_labels(const NiftiImage& img, const LabelRemap& remap = {}, const std::string& name = "") {
  const auto vals = img.values();
  LabelVolume out(img.meta);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double v = vals[i];
    if (v != std::floor(v) || !std::isfinite(v))
      throw FormatError("datatype", name + ": non-integer label value " + std::to_string(v));
    int label = static_cast<int>(v);
    if (auto it = remap.find(label); it != remap.end()) label = it->second;
    if (!is_valid_label(label))
      throw FormatError("label", name + ": label value " + std::to_string(label) + " outside {0,1,2,3}");
    out[i] = static_cast<Label>(label);
  }
  return out;
}

inline Mask to_mask(const NiftiImage& img, const std::string& name = "") {
  const auto vals = img.values();
  Mask out(img.meta);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (vals[i] != 0.0 && vals[i] != 1.0)
      throw FormatError("mask", name + ": mask value " + std::to_string(vals[i]) + " outside {0,1}");
    out[i] = vals[i] != 0.0 ? 1 : 0;
  }
  return out;
}

/// Integer files load as labels (or as a mask when requested and binary),
/// float files as scalar volumes.
inline AnyVolume read_volume(const std::filesystem::path& path, VolumeKind kind = VolumeKind::Auto) {
  const NiftiImage img = read_nifti(path);
  if (img.datatype() == NiftiDatatype::Float32) return to_scalar(img);
  if (kind == VolumeKind::Mask) {
    const auto vals = img.values();
    if (std::all_of(vals.begin(), vals.end(), [](double v) { return v == 0.0 || v == 1.0; }))
      return to_mask(img, path.string());
  }
  return to_labels(img, {}, path.string());
}

inline ScalarVolume read_scalar(const std::filesystem::path& path) { return to_scalar(read_nifti(path)); }

inline LabelVolume read_labels(const std::filesystem::path& path, const LabelRemap& remap = {}) {
  return to_labels(read_nifti(path), remap, path.string());
}

inline Mask read_mask(const std::filesystem::path& path) { return to_mask(read_nifti(path), path.string()); }

/// Scalar volumes are stored as float32.
inline void write_volume(const ScalarVolume& v, const std::filesystem::path& path) {
  NiftiImage img;
  img.meta = v.meta();
  std::vector<float> p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = static_cast<float>(v[i]);
  img.payload = std::move(p);
  write_nifti(img, path);
}

inline void write_volume(const LabelVolume& v, const std::filesystem::path& path) {
  NiftiImage img;
  img.meta = v.meta();
  std::vector<std::uint8_t> p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = static_cast<std::uint8_t>(v[i]);
  img.payload = std::move(p);
  write_nifti(img, path);
}

inline void write_volume(const Mask& v, const std::filesystem::path& path) {
  NiftiImage img;
  img.meta = v.meta();
  img.payload = v.data();
  write_nifti(img, path);
}

inline void write_volume(const AnyVolume& v, const std::filesystem::path& path) {
  std::visit([&](const auto& x) { write_volume(x, path); }, v);
}

}  // namespace gbm
