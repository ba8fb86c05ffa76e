#pragma once

// Checkpoint container, little-endian:
//   "V2XCKPT\0" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//   | u32 count | count x { u32 name_len | name | u32 ndim | i32 dims[ndim] | f32 values }

#include "v2xcalib/nn/layers.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace v2xcalib::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string metadata;  // JSON text
  std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const NamedParams<float>& params, const std::string& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into matching params. Every param must be present with the
/// same shape unless allow_missing is set.
void load_params(const Checkpoint& ckpt, NamedParams<float>& params, bool allow_missing = false);

}  // namespace v2xcalib::nn
