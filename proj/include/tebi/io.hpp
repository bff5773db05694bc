#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/data.hpp"
#include "tebi/graph.hpp"

namespace tebi {

// Plain-text manifest + little-endian binary blob storage, shared by the
// dataset format (float32 frames) and parameter checkpoints (float64).

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline uint64_t fnv1a(const char* bytes, size_t n) {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void check_blob_slice(const std::filesystem::path& blob_path,
                             const std::vector<char>& blob, uint64_t offset, uint64_t bytes,
                             const std::string& checksum_hex) {
  if (offset + bytes > blob.size()) {
    std::ostringstream os;
    os << blob_path.string() << ": truncated blob, need bytes [" << offset << ","
       << offset + bytes << ") but file has " << blob.size();
    throw IoError(os.str());
  }
  uint64_t h = fnv1a(blob.data() + offset, bytes);
  if (hex64(h) != checksum_hex) {
    std::ostringstream os;
    os << blob_path.string() << ": checksum mismatch at offset " << offset << " (" << bytes
       << " bytes): manifest says " << checksum_hex << ", blob has " << hex64(h);
    throw IoError(os.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset: manifest.txt + frames.bin (+ vocab.txt, materials.txt)
// ---------------------------------------------------------------------------

inline void write_dataset(const std::vector<TrajectoryRecord>& records,
                          const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  int grid_h = records.empty() ? 0 : records[0].frames[0].tactile.rows;
  int grid_w = records.empty() ? 0 : records[0].frames[0].tactile.cols;

  std::vector<char> blob;
  std::ostringstream manifest;
  manifest << "tebi.dataset.v1 " << grid_h << " " << grid_w << "\n";
  std::vector<const MaterialClass*> materials;
  for (const auto& rec : records) {
    size_t offset = blob.size();
    for (const auto& fp : rec.frames) {
      auto append = [&](const Tensor& t) {
        for (double v : t.data) {
          float f = static_cast<float>(v);
          const char* b = reinterpret_cast<const char*>(&f);
          blob.insert(blob.end(), b, b + sizeof(float));
        }
      };
      append(fp.visual);
      append(fp.tactile);
    }
    size_t bytes = blob.size() - offset;
    uint64_t checksum = detail::fnv1a(blob.data() + offset, bytes);
    manifest << rec.trajectory_id << " " << rec.material.class_id << " " << rec.length << " "
             << offset << " " << bytes << " " << detail::hex64(checksum) << "\n";
    bool known = false;
    for (auto* m : materials) known = known || m->class_id == rec.material.class_id;
    if (!known) materials.push_back(&rec.material);
  }

  std::ofstream mf(dir / "manifest.txt");
  mf << manifest.str();
  std::ofstream bf(dir / "frames.bin", std::ios::binary);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  std::ofstream matf(dir / "materials.txt");
  matf.precision(17);
  for (auto* m : materials) {
    matf << m->class_id << " " << m->hardness << " " << m->texture_frequency << " "
         << m->relaxation_time << " ";
    for (size_t i = 0; i < m->keywords.size(); ++i)
      matf << (i ? "," : "") << m->keywords[i];
    matf << "\n";
  }

  std::ofstream vf(dir / "vocab.txt");
  for (const auto& w : default_vocabulary()) vf << w << "\n";
}

inline std::vector<TrajectoryRecord> read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto manifest_path = dir / "manifest.txt";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());

  std::string magic;
  int grid_h = 0, grid_w = 0;
  if (!(mf >> magic >> grid_h >> grid_w) || magic != "tebi.dataset.v1")
    throw IoError(manifest_path.string() + ": corrupt header (expected tebi.dataset.v1)");

  std::vector<MaterialClass> materials;
  {
    std::ifstream matf(dir / "materials.txt");
    if (!matf) throw IoError("cannot open " + (dir / "materials.txt").string());
    std::string line;
    while (std::getline(matf, line)) {
      if (line.empty()) continue;
      std::istringstream is(line);
      MaterialClass m;
      std::string kws;
      if (!(is >> m.class_id >> m.hardness >> m.texture_frequency >> m.relaxation_time >> kws))
        throw IoError((dir / "materials.txt").string() + ": corrupt line: " + line);
      std::istringstream ks(kws);
      std::string w;
      while (std::getline(ks, w, ',')) m.keywords.push_back(w);
      materials.push_back(std::move(m));
    }
  }
  auto find_material = [&](int class_id) -> const MaterialClass& {
    for (const auto& m : materials)
      if (m.class_id == class_id) return m;
    throw IoError(manifest_path.string() + ": class_id " + std::to_string(class_id) +
                  " missing from materials.txt");
  };

  auto blob_path = dir / "frames.bin";
  std::vector<char> blob = detail::read_file(blob_path);

  std::vector<TrajectoryRecord> out;
  std::string line;
  std::getline(mf, line);  // rest of header line
  size_t lineno = 1;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    int traj_id, class_id, length;
    uint64_t offset, bytes;
    std::string checksum;
    if (!(is >> traj_id >> class_id >> length >> offset >> bytes >> checksum))
      throw IoError(manifest_path.string() + ": corrupt record at line " +
                    std::to_string(lineno) + ": " + line);
    size_t frame_floats = static_cast<size_t>(grid_h) * grid_w * 4;  // 3 visual + 1 tactile
    size_t expect = frame_floats * length * sizeof(float);
    if (bytes != expect) {
      std::ostringstream os;
      os << manifest_path.string() << ": line " << lineno << ": blob length " << bytes
         << " does not match " << length << " frames of " << grid_h << "x" << grid_w << " ("
         << expect << " bytes expected)";
      throw IoError(os.str());
    }
    detail::check_blob_slice(blob_path, blob, offset, bytes, checksum);

    TrajectoryRecord rec;
    rec.trajectory_id = traj_id;
    rec.material = find_material(class_id);
    rec.length = length;
    rec.stages = stage_marks(length);
    const char* p = blob.data() + offset;
    for (int t = 1; t <= length; ++t) {
      FramePair fp;
      fp.time_index = t;
      fp.visual = Tensor(grid_h, grid_w * 3);
      fp.tactile = Tensor(grid_h, grid_w);
      for (auto* tensor : {&fp.visual, &fp.tactile}) {
        for (auto& v : tensor->data) {
          float f;
          std::memcpy(&f, p, sizeof(float));
          p += sizeof(float);
          v = static_cast<double>(f);
        }
      }
      rec.frames.push_back(std::move(fp));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: named parameters, float64 blob
// ---------------------------------------------------------------------------

inline void write_checkpoint(const std::vector<Parameter*>& params,
                             const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<char> blob;
  std::ostringstream manifest;
  manifest << "tebi.checkpoint.v1 f64\n";
  for (const auto* p : params) {
    size_t offset = blob.size();
    const char* b = reinterpret_cast<const char*>(p->value.data.data());
    blob.insert(blob.end(), b, b + p->value.size() * sizeof(double));
    size_t bytes = blob.size() - offset;
    manifest << p->name << " " << p->value.rows << " " << p->value.cols << " " << offset << " "
             << bytes << " " << detail::hex64(detail::fnv1a(blob.data() + offset, bytes))
             << "\n";
  }
  std::ofstream mf(dir / "manifest.txt");
  mf << manifest.str();
  std::ofstream bf(dir / "params.bin", std::ios::binary);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline void read_checkpoint(const std::vector<Parameter*>& params,
                            const std::filesystem::path& dir) {
  auto manifest_path = dir / "manifest.txt";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  std::string magic, dtype;
  if (!(mf >> magic >> dtype) || magic != "tebi.checkpoint.v1" || dtype != "f64")
    throw IoError(manifest_path.string() + ": corrupt header (expected tebi.checkpoint.v1 f64)");
  auto blob_path = dir / "params.bin";
  std::vector<char> blob = detail::read_file(blob_path);

  struct Entry {
    int rows, cols;
    uint64_t offset, bytes;
    std::string checksum;
  };
  std::map<std::string, Entry> entries;
  std::string name;
  Entry e;
  while (mf >> name >> e.rows >> e.cols >> e.offset >> e.bytes >> e.checksum)
    entries[name] = e;

  for (auto* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end())
      throw IoError(manifest_path.string() + ": parameter not found: " + p->name);
    const Entry& en = it->second;
    if (en.rows != p->value.rows || en.cols != p->value.cols) {
      std::ostringstream os;
      os << manifest_path.string() << ": " << p->name << " has shape " << en.rows << "x"
         << en.cols << ", expected " << p->value.shape_str();
      throw IoError(os.str());
    }
    if (en.bytes != p->value.size() * sizeof(double)) {
      std::ostringstream os;
      os << manifest_path.string() << ": " << p->name << " blob length " << en.bytes
         << " does not match shape " << p->value.shape_str();
      throw IoError(os.str());
    }
    detail::check_blob_slice(blob_path, blob, en.offset, en.bytes, en.checksum);
    std::memcpy(p->value.data.data(), blob.data() + en.offset, en.bytes);
  }
}

}  // namespace tebi
