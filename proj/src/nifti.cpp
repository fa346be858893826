#include "cfseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace cfseg {
namespace {

enum Datatype : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
};

bool ends_with_gz(const std::filesystem::path& path) {
  const std::string s = path.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

// gzread passes plain files through unchanged, so one reader serves both.
std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) fail(ErrorCode::kIo, "read error in " + path.string());
  return bytes;
}

void dump(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (ends_with_gz(path)) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (!f) fail(ErrorCode::kIo, "cannot create " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size()))
      fail(ErrorCode::kIo, "write error in " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write error in " + path.string());
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    if (swap_) v = byteswap(v);
    return v;
  }

  template <typename T>
  static T byteswap(T v) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    std::reverse(raw, raw + sizeof(T));
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  bool swap_;
};

struct Decoded {
  Dims dims;
  Spacing spacing;
  std::vector<double> values;
};

template <typename T>
void decode_as(const std::vector<unsigned char>& bytes, std::size_t offset, bool swap,
               std::vector<double>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, bytes.data() + offset + i * sizeof(T), sizeof(T));
    if (swap) v = HeaderReader::byteswap(v);
    out[i] = static_cast<double>(v);
  }
}

Decoded decode(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = slurp(path);
  if (bytes.size() < kNiftiHeaderSize)
    fail(ErrorCode::kMalformedHeader, "truncated NIfTI header in " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (HeaderReader::byteswap(sizeof_hdr) != 348)
      fail(ErrorCode::kMalformedHeader, "sizeof_hdr != 348 in " + path.string());
    swap = true;
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0)
    fail(ErrorCode::kMalformedHeader, "not a single-file NIfTI-1 volume: " + path.string());

  HeaderReader h(bytes, swap);
  const auto ndim = h.get<std::int16_t>(40);
  if (ndim < 1 || ndim > 7) fail(ErrorCode::kMalformedHeader, "bad dim[0]");
  Decoded d;
  for (int a = 0; a < 3; ++a) {
    const Index n = a < ndim ? h.get<std::int16_t>(42 + 2 * static_cast<std::size_t>(a)) : 1;
    if (n < 1) fail(ErrorCode::kMalformedHeader, "non-positive dimension");
    d.dims[a] = n;
    const float px = h.get<float>(80 + 4 * static_cast<std::size_t>(a));
    d.spacing[a] = (std::isfinite(px) && px > 0.0f) ? static_cast<double>(px) : 1.0;
  }
  for (int a = 3; a < ndim; ++a)
    if (h.get<std::int16_t>(42 + 2 * static_cast<std::size_t>(a)) > 1)
      fail(ErrorCode::kMalformedHeader, "volumes with more than 3 dimensions are not supported");

  const auto datatype = h.get<std::int16_t>(70);
  const float vox_offset_f = h.get<float>(108);
  if (!(vox_offset_f >= static_cast<float>(kNiftiHeaderSize)))
    fail(ErrorCode::kMalformedHeader, "bad vox_offset");
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);

  std::size_t elem = 0;
  switch (datatype) {
    case kUint8: case kInt8: elem = 1; break;
    case kInt16: case kUint16: elem = 2; break;
    case kInt32: case kUint32: case kFloat32: elem = 4; break;
    case kFloat64: elem = 8; break;
    default:
      fail(ErrorCode::kUnsupportedDatatype, "unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const auto count = static_cast<std::size_t>(d.dims.count());
  if (bytes.size() < vox_offset + count * elem)
    fail(ErrorCode::kMalformedHeader, "voxel data truncated in " + path.string());

  d.values.resize(count);
  switch (datatype) {
    case kUint8: decode_as<std::uint8_t>(bytes, vox_offset, swap, d.values); break;
    case kInt8: decode_as<std::int8_t>(bytes, vox_offset, swap, d.values); break;
    case kInt16: decode_as<std::int16_t>(bytes, vox_offset, swap, d.values); break;
    case kUint16: decode_as<std::uint16_t>(bytes, vox_offset, swap, d.values); break;
    case kInt32: decode_as<std::int32_t>(bytes, vox_offset, swap, d.values); break;
    case kUint32: decode_as<std::uint32_t>(bytes, vox_offset, swap, d.values); break;
    case kFloat32: decode_as<float>(bytes, vox_offset, swap, d.values); break;
    case kFloat64: decode_as<double>(bytes, vox_offset, swap, d.values); break;
    default: break;
  }

  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);
  if (std::isfinite(slope) && slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
    const double s = slope;
    const double b = std::isfinite(inter) ? inter : 0.0f;
    for (double& v : d.values) v = v * s + b;
  }
  return d;
}

template <typename T>
void put(std::vector<unsigned char>& bytes, std::size_t offset, T v) {
  if constexpr (std::endian::native == std::endian::big) v = HeaderReader::byteswap(v);
  std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

std::vector<unsigned char> encode_header(Dims dims, Spacing spacing, std::int16_t datatype,
                                         std::int16_t bitpix, std::size_t payload) {
  std::vector<unsigned char> bytes(kNiftiDataOffset + payload, 0);
  put<std::int32_t>(bytes, 0, 348);
  bytes[38] = 'r';  // regular
  put<std::int16_t>(bytes, 40, 3);
  put<std::int16_t>(bytes, 42, static_cast<std::int16_t>(dims.x));
  put<std::int16_t>(bytes, 44, static_cast<std::int16_t>(dims.y));
  put<std::int16_t>(bytes, 46, static_cast<std::int16_t>(dims.z));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(bytes, 42 + 2 * static_cast<std::size_t>(a), 1);
  put<std::int16_t>(bytes, 70, datatype);
  put<std::int16_t>(bytes, 72, bitpix);
  put<float>(bytes, 76, 1.0f);  // qfac
  put<float>(bytes, 80, static_cast<float>(spacing.x));
  put<float>(bytes, 84, static_cast<float>(spacing.y));
  put<float>(bytes, 88, static_cast<float>(spacing.z));
  put<float>(bytes, 108, static_cast<float>(kNiftiDataOffset));
  put<float>(bytes, 112, 1.0f);
  put<float>(bytes, 116, 0.0f);
  bytes[123] = 2;  // NIFTI_UNITS_MM
  put<std::int16_t>(bytes, 254, 1);  // sform_code: scanner
  put<float>(bytes, 280, static_cast<float>(spacing.x));
  put<float>(bytes, 300, static_cast<float>(spacing.y));
  put<float>(bytes, 320, static_cast<float>(spacing.z));
  std::memcpy(bytes.data() + 344, "n+1\0", 4);
  return bytes;
}

void check_writable(const Dims& dims) {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 1 || dims[a] > 32767)
      fail(ErrorCode::kInvalidArgument, "dimension not representable in NIfTI-1");
}

}  // namespace

ImageVolume read_image(const std::filesystem::path& path) {
  Decoded d = decode(path);
  ImageVolume vol(d.dims, d.spacing);
  for (std::size_t i = 0; i < d.values.size(); ++i)
    vol.voxels[static_cast<Index>(i)] = static_cast<float>(d.values[i]);
  return vol;
}

LabelVolume read_labels(const std::filesystem::path& path) {
  Decoded d = decode(path);
  LabelVolume vol(d.dims, d.spacing);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const double v = d.values[i];
    if (!(v >= 0.0 && v <= kNumOrgans) || v != std::floor(v))
      fail(ErrorCode::kLabelOutOfRange,
           "label value " + std::to_string(v) + " outside 0..13 in " + path.string());
    vol.voxels[static_cast<Index>(i)] = static_cast<std::uint8_t>(v);
  }
  return vol;
}

void write_volume(const ImageVolume& vol, const std::filesystem::path& path) {
  check_writable(vol.dims);
  const auto n = static_cast<std::size_t>(vol.voxels.size());
  auto bytes = encode_header(vol.dims, vol.spacing, kFloat32, 32, n * 4);
  for (std::size_t i = 0; i < n; ++i)
    put<float>(bytes, kNiftiDataOffset + 4 * i, vol.voxels[static_cast<Index>(i)]);
  dump(path, bytes);
}

void write_volume(const LabelVolume& vol, const std::filesystem::path& path) {
  check_writable(vol.dims);
  validate_labels(vol);
  const auto n = static_cast<std::size_t>(vol.voxels.size());
  auto bytes = encode_header(vol.dims, vol.spacing, kUint8, 8, n);
  std::memcpy(bytes.data() + kNiftiDataOffset, vol.voxels.data(), n);
  dump(path, bytes);
}

}  // namespace cfseg
