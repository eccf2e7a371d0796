#pragma once

// Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
//
// Supported subset: little-endian, 3 dimensions, datatypes uint8 / int16 /
// float32, no header extensions. The orientation block is carried verbatim.

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "gbmbench/errors.hpp"
#include "gbmbench/volume.hpp"

namespace gbm {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

enum class NiftiDatatype : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16 };

using NiftiPayload = std::variant<std::vector<std::uint8_t>, std::vector<std::int16_t>, std::vector<float>>;

/// Decoded NIfTI file: grid, raw typed payload, and the scaling pair.
struct NiftiImage {
  GridMeta meta;
  NiftiPayload payload;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::array<char, 80> descrip{};

  NiftiDatatype datatype() const noexcept {
    switch (payload.index()) {
      case 0: return NiftiDatatype::UInt8;
      case 1: return NiftiDatatype::Int16;
      default: return NiftiDatatype::Float32;
    }
  }

  bool has_scaling() const noexcept {
    return scl_slope != 0.0f && std::isfinite(scl_slope) && !(scl_slope == 1.0f && scl_inter == 0.0f);
  }

  /// Payload with slope/intercept applied.
  std::vector<double> values() const {
    std::vector<double> out;
    std::visit(
        [&](const auto& v) {
          out.reserve(v.size());
          for (auto x : v) out.push_back(static_cast<double>(x));
        },
        payload);
    if (has_scaling())
      for (auto& x : out) x = x * static_cast<double>(scl_slope) + static_cast<double>(scl_inter);
    return out;
  }

  bool operator==(const NiftiImage&) const = default;
};

namespace nifti_detail {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <typename T>
void put(std::vector<unsigned char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

inline bool ends_with_gz(const std::filesystem::path& p) {
  const std::string s = p.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

/// Reads a whole file, transparently gunzipping.
inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError(path.string() + ": no such file");
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError(path.string() + ": cannot open");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> chunk{};
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int errnum = 0;
      const std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw CorruptionError(path.string() + ": decompression failed: " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  // gzclose reports a truncated gzip stream as Z_BUF_ERROR
  if (gzclose(f) != Z_OK) throw CorruptionError(path.string() + ": truncated gzip stream");
  return out;
}

inline void spill(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent))
    throw IoError(path.string() + ": parent directory does not exist");
  if (ends_with_gz(path)) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (!f) throw IoError(path.string() + ": cannot open for writing");
    std::size_t done = 0;
    while (done < bytes.size()) {
      const auto n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, n) != static_cast<int>(n)) {
        gzclose(f);
        throw IoError(path.string() + ": write failed");
      }
      done += n;
    }
    if (gzclose(f) != Z_OK) throw IoError(path.string() + ": write failed on close");
  } else {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError(path.string() + ": write failed");
  }
}

template <typename T>
std::vector<T> decode(const std::vector<unsigned char>& buf, std::size_t off, std::size_t n) {
  std::vector<T> v(n);
  std::memcpy(v.data(), buf.data() + off, n * sizeof(T));
  return v;
}

}  // namespace nifti_detail

/// Orientation block written for grids that carry none: axis-aligned,
/// scaled by spacing, translated to the origin. Read back as "none".
inline Orientation canonical_orientation(const GridMeta& meta) {
  Orientation o;
  o.qform_code = 1;
  o.sform_code = 1;
  for (int a = 0; a < 3; ++a) {
    o.qoffset[a] = static_cast<float>(meta.origin[a]);
    o.srow[a][a] = static_cast<float>(meta.spacing[a]);
    o.srow[a][3] = static_cast<float>(meta.origin[a]);
  }
  return o;
}

inline NiftiImage parse_nifti(const std::vector<unsigned char>& buf, const std::string& name = "<buffer>") {
  using namespace nifti_detail;
  if (buf.size() < kHeaderSize) throw CorruptionError(name + ": file shorter than a NIfTI-1 header");
  if (get<std::int32_t>(buf, 0) != 348) throw FormatError("sizeof_hdr", name + ": expected 348 (little-endian NIfTI-1)");
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0)
    throw FormatError("magic", name + ": expected single-file \"n+1\"");

  const auto ndim = get<std::int16_t>(buf, 40);
  if (ndim != 3) throw FormatError("dim[0]", name + ": only 3-dimensional volumes are supported, got " + std::to_string(ndim));

  NiftiImage img;
  for (int a = 0; a < 3; ++a) {
    const auto d = get<std::int16_t>(buf, 42 + 2 * a);
    if (d < 1) throw FormatError("dim[" + std::to_string(a + 1) + "]", name + ": must be >= 1");
    img.meta.shape[a] = static_cast<std::size_t>(d);
    const auto px = get<float>(buf, 80 + 4 * a);
    if (!(px > 0.0f) || !std::isfinite(px))
      throw FormatError("pixdim[" + std::to_string(a + 1) + "]", name + ": voxel size must be positive");
    img.meta.spacing[a] = static_cast<double>(px);
  }

  const auto dt = get<std::int16_t>(buf, 70);
  std::size_t elem = 0;
  switch (dt) {
    case 2: elem = 1; break;
    case 4: elem = 2; break;
    case 16: elem = 4; break;
    default:
      throw FormatError("datatype", name + ": unsupported datatype code " + std::to_string(dt) +
                                        " (supported: 2 uint8, 4 int16, 16 float32)");
  }

  const float vox_offset = get<float>(buf, 108);
  if (!(vox_offset >= static_cast<float>(kVoxOffset)) || vox_offset != std::floor(vox_offset))
    throw FormatError("vox_offset", name + ": must be an integer >= 352");
  const auto off = static_cast<std::size_t>(vox_offset);

  img.scl_slope = get<float>(buf, 112);
  img.scl_inter = get<float>(buf, 116);
  std::memcpy(img.descrip.data(), buf.data() + 148, 80);

  Orientation o;
  o.qfac = get<float>(buf, 76);
  o.qform_code = get<std::int16_t>(buf, 252);
  o.sform_code = get<std::int16_t>(buf, 254);
  for (int i = 0; i < 3; ++i) {
    o.quatern[i] = get<float>(buf, 256 + 4 * i);
    o.qoffset[i] = get<float>(buf, 268 + 4 * i);
    for (int j = 0; j < 4; ++j) o.srow[i][j] = get<float>(buf, 280 + 16 * i + 4 * j);
  }
  for (int a = 0; a < 3; ++a) {
    if (o.qform_code > 0)
      img.meta.origin[a] = static_cast<double>(o.qoffset[a]);
    else if (o.sform_code > 0)
      img.meta.origin[a] = static_cast<double>(o.srow[a][3]);
  }
  if (o != canonical_orientation(img.meta)) img.meta.orientation = o;

  const std::size_t n = img.meta.size();
  if (buf.size() < off + n * elem)
    throw CorruptionError(name + ": truncated payload, expected " + std::to_string(n * elem) + " bytes after offset " +
                          std::to_string(off) + ", found " + std::to_string(buf.size() > off ? buf.size() - off : 0));
  switch (dt) {
    case 2: img.payload = decode<std::uint8_t>(buf, off, n); break;
    case 4: img.payload = decode<std::int16_t>(buf, off, n); break;
    default: img.payload = decode<float>(buf, off, n); break;
  }
  return img;
}

inline NiftiImage read_nifti(const std::filesystem::path& path) {
  return parse_nifti(nifti_detail::slurp(path), path.string());
}

inline std::vector<unsigned char> serialize_nifti(const NiftiImage& img) {
  using namespace nifti_detail;
  img.meta.validate();
  for (int a = 0; a < 3; ++a)
    if (img.meta.shape[a] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw ContractError("NIfTI-1 dimensions are limited to 32767 voxels per axis");

  std::size_t elem = 0;
  std::int16_t code = 0;
  std::visit(
      [&](const auto& v) {
        using E = typename std::decay_t<decltype(v)>::value_type;
        elem = sizeof(E);
        if (v.size() != img.meta.size()) throw ContractError("NIfTI payload length does not match grid shape");
      },
      img.payload);
  code = static_cast<std::int16_t>(img.datatype());

  std::vector<unsigned char> buf(kVoxOffset + img.meta.size() * elem, 0);
  put<std::int32_t>(buf, 0, 348);
  put<char>(buf, 38, 'r');  // regular
  put<std::int16_t>(buf, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(img.meta.shape[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(buf, 42 + 2 * a, 1);
  put<std::int16_t>(buf, 70, code);
  put<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * elem));

  Orientation o = img.meta.orientation ? *img.meta.orientation : canonical_orientation(img.meta);
  // The grid origin is authoritative for the translation part; untouched
  // orientation blocks are written back verbatim.
  bool origin_moved = false;
  for (int a = 0; a < 3; ++a) {
    double implied = 0.0;
    if (o.qform_code > 0)
      implied = static_cast<double>(o.qoffset[a]);
    else if (o.sform_code > 0)
      implied = static_cast<double>(o.srow[a][3]);
    if (implied != img.meta.origin[a]) origin_moved = true;
  }
  if (origin_moved) {
    if (o.qform_code <= 0 && o.sform_code <= 0) o.qform_code = 1;
    for (int a = 0; a < 3; ++a) {
      o.qoffset[a] = static_cast<float>(img.meta.origin[a]);
      o.srow[a][3] = static_cast<float>(img.meta.origin[a]);
    }
  }

  put<float>(buf, 76, o.qfac);
  for (int a = 0; a < 3; ++a) put<float>(buf, 80 + 4 * a, static_cast<float>(img.meta.spacing[a]));
  put<float>(buf, 108, static_cast<float>(kVoxOffset));
  put<float>(buf, 112, img.scl_slope);
  put<float>(buf, 116, img.scl_inter);
  put<char>(buf, 123, 2);  // xyzt_units: mm
  std::memcpy(buf.data() + 148, img.descrip.data(), 80);
  put<std::int16_t>(buf, 252, o.qform_code);
  put<std::int16_t>(buf, 254, o.sform_code);
  for (int i = 0; i < 3; ++i) {
    put<float>(buf, 256 + 4 * i, o.quatern[i]);
    put<float>(buf, 268 + 4 * i, o.qoffset[i]);
    for (int j = 0; j < 4; ++j) put<float>(buf, 280 + 16 * i + 4 * j, o.srow[i][j]);
  }
  std::memcpy(buf.data() + 344, "n+1", 4);

  std::visit([&](const auto& v) { std::memcpy(buf.data() + kVoxOffset, v.data(), v.size() * elem); }, img.payload);
  return buf;
}

/// Writes `.nii`, or gzip-compressed when the path ends in `.gz`.
inline void write_nifti(const NiftiImage& img, const std::filesystem::path& path) {
  nifti_detail::spill(path, serialize_nifti(img));
}

}  // namespace gbm
