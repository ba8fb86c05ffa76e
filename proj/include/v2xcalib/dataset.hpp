#pragma once

// On-disk dataset layout:
//   <root>/index.json                 {"schema_version", "sequences": [{"dir", "split"}]}
//   <root>/<seq>/manifest.json        camera, delta, per-frame extrinsics and file names
//   <root>/<seq>/frame_NNN.bin        little-endian float32, N x 3, LiDAR frame
//   <root>/<seq>/frame_NNN.pgm        8-bit binary PGM

#include "v2xcalib/scenesim.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2xcalib {

inline constexpr int kDatasetSchemaVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CorruptManifestError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class SizeMismatchError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class VersionMismatchError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct IndexEntry {
  std::string dir;
  Split split = Split::Train;
};

struct DatasetIndex {
  std::vector<IndexEntry> sequences;

  std::vector<std::string> dirs(Split s) const;
};

/// 80/10/10 by position: the first 80% train, the next 10% val, the rest test.
Split split_for(std::size_t index, std::size_t count);

void write_sequence(const std::filesystem::path& dir, const FrameSequence& seq);
FrameSequence read_sequence(const std::filesystem::path& dir);

void write_index(const std::filesystem::path& root, const DatasetIndex& index);
DatasetIndex read_index(const std::filesystem::path& root);

/// Writes every sequence under <root>/<name> and the index.
void write_dataset(const std::filesystem::path& root, const std::vector<FrameSequence>& seqs,
                   const std::vector<Split>& splits);
std::vector<FrameSequence> read_split(const std::filesystem::path& root, Split split);

void write_pgm(const std::filesystem::path& path, const ImageF& image);
ImageF read_pgm(const std::filesystem::path& path);

}  // namespace v2xcalib
