#include "cfseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace cfseg {
namespace {

constexpr char kMagic[8] = {'C', 'F', 'S', 'E', 'G', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) fail(ErrorCode::kIo, "cannot create " + path.string());
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) fail(ErrorCode::kIo, "cannot open " + path.string());
  }
  template <typename T>
  T get() {
    T v{};
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) fail(ErrorCode::kCheckpointMismatch, "truncated checkpoint " + path_.string());
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put<std::int32_t>(ckpt.config.in_channels);
  w.put<std::int32_t>(ckpt.config.out_channels);
  w.put<std::int32_t>(ckpt.config.levels);
  w.put<std::int32_t>(ckpt.config.base_width);
  w.put<double>(ckpt.config.bn_momentum);
  w.put<double>(ckpt.config.bn_eps);
  w.put<std::int64_t>(ckpt.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.entries().size()));
  for (const auto& e : ckpt.params.entries()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(e.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) w.put<std::int64_t>(d);
    w.bytes(e.value.data(), static_cast<std::size_t>(e.value.size()) * sizeof(float));
  }
  if (!w.ok()) fail(ErrorCode::kIo, "write error in " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::kCheckpointMismatch, "not a network checkpoint: " + path.string());
  if (r.get<std::uint32_t>() != kVersion)
    fail(ErrorCode::kCheckpointMismatch, "unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config.in_channels = r.get<std::int32_t>();
  ckpt.config.out_channels = r.get<std::int32_t>();
  ckpt.config.levels = r.get<std::int32_t>();
  ckpt.config.base_width = r.get<std::int32_t>();
  ckpt.config.bn_momentum = r.get<double>();
  ckpt.config.bn_eps = r.get<double>();
  ckpt.step = r.get<std::int64_t>();
  ckpt.config.validate();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    const bool trainable = r.get<std::uint8_t>() != 0;
    std::vector<Index> shape(r.get<std::uint32_t>());
    for (Index& d : shape) d = static_cast<Index>(r.get<std::int64_t>());
    auto& v = ckpt.params.add(name, shape, trainable);
    r.bytes(v.data(), static_cast<std::size_t>(v.size()) * sizeof(float));
  }
  // The archive must describe exactly the network its header declares.
  SeededRng probe(0);
  const NetworkParams<float> expected = init_params<float>(ckpt.config, probe);
  if (expected.entries().size() != ckpt.params.entries().size())
    fail(ErrorCode::kCheckpointMismatch, "checkpoint parameters do not match its configuration");
  for (const auto& e : expected.entries()) {
    if (!ckpt.params.contains(e.name) || ckpt.params.entry(e.name).shape != e.shape)
      fail(ErrorCode::kCheckpointMismatch, "checkpoint parameter mismatch at " + e.name);
  }
  return ckpt;
}

}  // namespace cfseg
