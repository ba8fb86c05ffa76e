#include "v2xcalib/dataset.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace v2xcalib {

static_assert(std::endian::native == std::endian::little, "point files are little-endian float32");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json transform_json(const RigidTransformd& T) {
  const auto& q = T.rotation();
  const auto& t = T.translation();
  return {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

RigidTransformd transform_from_json(const json& j) {
  const auto q = j.at("q").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3) throw CorruptManifestError("transform needs q[4] and t[3]");
  try {
    return RigidTransformd(UnitQuaterniond::from_stored(q[0], q[1], q[2], q[3]), Eigen::Vector3d(t[0], t[1], t[2]));
  } catch (const GeometryError& e) {
    throw CorruptManifestError(e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw CorruptManifestError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << text << '\n';
  if (!os) throw DatasetError("write failed for " + path.string());
}

void check_version(const json& j, const fs::path& path) {
  const int v = j.at("schema_version").get<int>();
  if (v != kDatasetSchemaVersion) {
    throw VersionMismatchError(path.string() + ": schema version " + std::to_string(v) + ", expected " +
                               std::to_string(kDatasetSchemaVersion));
  }
}

std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03zu", i);
  return buf;
}

void write_points(const fs::path& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(cloud.data()), static_cast<std::streamsize>(cloud.size() * sizeof(float)));
  if (!os) throw DatasetError("write failed for " + path.string());
}

PointCloud read_points(const fs::path& path, std::size_t expected) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw DatasetError("cannot stat " + path.string());
  if (bytes != expected * 3 * sizeof(float)) {
    throw SizeMismatchError(path.string() + ": " + std::to_string(bytes) + " bytes, manifest says " +
                            std::to_string(expected) + " points");
  }
  PointCloud cloud(static_cast<Eigen::Index>(expected), 3);
  std::ifstream is(path, std::ios::binary);
  if (!is.read(reinterpret_cast<char*>(cloud.data()), static_cast<std::streamsize>(bytes))) {
    throw DatasetError("read failed for " + path.string());
  }
  return cloud;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DatasetError("unknown split '" + s + "'");
}

std::vector<std::string> DatasetIndex::dirs(Split s) const {
  std::vector<std::string> out;
  for (const auto& e : sequences)
    if (e.split == s) out.push_back(e.dir);
  return out;
}

Split split_for(std::size_t index, std::size_t count) {
  if (index * 10 < count * 8) return Split::Train;
  if (index * 10 < count * 9) return Split::Val;
  return Split::Test;
}

void write_pgm(const fs::path& path, const ImageF& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::vector<unsigned char> px(static_cast<std::size_t>(image.size()));
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    px[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(std::lround(std::clamp(image.data()[i], 0.0f, 1.0f) * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw DatasetError("write failed for " + path.string());
}

ImageF read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P5") throw DatasetError(path.string() + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DatasetError(path.string() + ": unsupported PGM geometry");
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()))) {
    throw SizeMismatchError(path.string() + ": PGM pixel data truncated");
  }
  ImageF img(h, w);
  for (std::size_t i = 0; i < px.size(); ++i) img.data()[i] = static_cast<float>(px[i]) / 255.0f;
  return img;
}

void write_sequence(const fs::path& dir, const FrameSequence& seq) {
  fs::create_directories(dir);
  const auto& cam = seq.camera;
  json m;
  m["schema_version"] = kDatasetSchemaVersion;
  m["name"] = seq.name;
  m["T"] = seq.frames.size();
  m["camera"] = {{"fx", cam.fx()}, {"fy", cam.fy()},        {"cx", cam.cx()},
                 {"cy", cam.cy()}, {"width", cam.width()}, {"height", cam.height()}};
  m["delta"] = transform_json(seq.delta);
  m["frames"] = json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    const std::string stem = frame_stem(i);
    write_points(dir / (stem + ".bin"), f.points);
    write_pgm(dir / (stem + ".pgm"), f.image);
    m["frames"].push_back({{"points", stem + ".bin"},
                           {"image", stem + ".pgm"},
                           {"num_points", f.points.rows()},
                           {"T_LC", transform_json(f.T_LC)},
                           {"T_init", transform_json(f.T_init)},
                           {"distance", f.distance}});
  }
  write_text(dir / "manifest.json", m.dump(1));
}

FrameSequence read_sequence(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  const json m = read_json(mpath);
  FrameSequence seq;
  try {
    check_version(m, mpath);
    seq.name = m.at("name").get<std::string>();
    const json& c = m.at("camera");
    seq.camera = CameraModeld(c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                              c.at("cy").get<double>(), c.at("width").get<int>(), c.at("height").get<int>());
    seq.delta = transform_from_json(m.at("delta"));
    const json& frames = m.at("frames");
    if (frames.size() != m.at("T").get<std::size_t>()) {
      throw CorruptManifestError(mpath.string() + ": T disagrees with the frame list");
    }
    for (const json& fj : frames) {
      Frame f;
      f.T_LC = transform_from_json(fj.at("T_LC"));
      f.T_init = transform_from_json(fj.at("T_init"));
      f.distance = fj.at("distance").get<double>();
      f.points = read_points(dir / fj.at("points").get<std::string>(), fj.at("num_points").get<std::size_t>());
      f.image = read_pgm(dir / fj.at("image").get<std::string>());
      if (f.image.rows() != seq.camera.height() || f.image.cols() != seq.camera.width()) {
        throw SizeMismatchError(dir.string() + ": image size disagrees with camera intrinsics");
      }
      seq.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw CorruptManifestError(mpath.string() + ": " + e.what());
  } catch (const GeometryError& e) {
    throw CorruptManifestError(mpath.string() + ": " + e.what());
  }
  return seq;
}

void write_index(const fs::path& root, const DatasetIndex& index) {
  fs::create_directories(root);
  json j;
  j["schema_version"] = kDatasetSchemaVersion;
  j["sequences"] = json::array();
  for (const auto& e : index.sequences) j["sequences"].push_back({{"dir", e.dir}, {"split", to_string(e.split)}});
  write_text(root / "index.json", j.dump(1));
}

DatasetIndex read_index(const fs::path& root) {
  const fs::path path = root / "index.json";
  const json j = read_json(path);
  DatasetIndex index;
  try {
    check_version(j, path);
    for (const json& e : j.at("sequences")) {
      index.sequences.push_back({e.at("dir").get<std::string>(), parse_split(e.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw CorruptManifestError(path.string() + ": " + e.what());
  }
  return index;
}

void write_dataset(const fs::path& root, const std::vector<FrameSequence>& seqs, const std::vector<Split>& splits) {
  if (splits.size() != seqs.size()) throw DatasetError("write_dataset: one split per sequence required");
  DatasetIndex index;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    write_sequence(root / seqs[i].name, seqs[i]);
    index.sequences.push_back({seqs[i].name, splits[i]});
  }
  write_index(root, index);
}

std::vector<FrameSequence> read_split(const fs::path& root, Split split) {
  std::vector<FrameSequence> out;
  for (const auto& d : read_index(root).dirs(split)) out.push_back(read_sequence(root / d));
  return out;
}

}  // namespace v2xcalib
