#include "v2xcalib/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace v2xcalib::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', '2', 'X', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint truncated reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedParams<float>& params, const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put(os, kCheckpointVersion);
  put(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, v] : params) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint32_t>(v.ndim()));
    for (int d : v.shape()) put(os, static_cast<std::int32_t>(d));
    os.write(reinterpret_cast<const char*>(v.value().data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto meta_len = get<std::uint32_t>(is, "metadata length");
  ck.metadata.resize(meta_len);
  if (!is.read(ck.metadata.data(), meta_len)) throw CheckpointError("checkpoint truncated in metadata");
  const auto count = get<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated in tensor name");
    const auto ndim = get<std::uint32_t>(is, "rank");
    if (ndim > 8) throw CheckpointError("implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(get<std::int32_t>(is, "extent"));
    Tensor<float> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw CheckpointError("checkpoint truncated in values of " + name);
    }
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

void load_params(const Checkpoint& ckpt, NamedParams<float>& params, bool allow_missing) {
  for (auto& [name, v] : params) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      if (allow_missing) continue;
      throw CheckpointError("checkpoint lacks parameter " + name);
    }
    if (it->second.shape() != v.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + shape_str(it->second.shape()) +
                            ", model " + shape_str(v.shape()));
    }
    v.mutable_value() = it->second;
  }
}

}  // namespace v2xcalib::nn
