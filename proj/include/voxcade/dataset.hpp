#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "voxcade/mesh.hpp"
#include "voxcade/mnist.hpp"
#include "voxcade/net.hpp"
#include "voxcade/parallel.hpp"
#include "voxcade/sdf.hpp"
#include "voxcade/sha256.hpp"
#include "voxcade/voxelize.hpp"

namespace voxcade {

struct VoxelSample {
  std::variant<OccupancyGrid, SdfGrid, ColoredSdf> grid;
  int label = 0;
  std::string source_id;
};

// ---- 3D MNIST ---------------------------------------------------------------
// A 28x28 digit replicated `thickness` times along z (4 = thin, 28 = thick),
// the block centered inside a zero-padded 32^3 grid.

enum class Mnist3dVariant { binary, stacked_gray, stacked_sdf, volumetric_sdf };

inline const char* to_string(Mnist3dVariant v) {
  switch (v) {
    case Mnist3dVariant::binary: return "binary";
    case Mnist3dVariant::stacked_gray: return "stacked-gray";
    case Mnist3dVariant::stacked_sdf: return "stacked-sdf";
    case Mnist3dVariant::volumetric_sdf: return "volumetric-sdf";
  }
  return "?";
}

inline Mnist3dVariant mnist3d_variant_from_string(const std::string& s) {
  if (s == "binary") return Mnist3dVariant::binary;
  if (s == "stacked-gray") return Mnist3dVariant::stacked_gray;
  if (s == "stacked-sdf") return Mnist3dVariant::stacked_sdf;
  if (s == "volumetric-sdf") return Mnist3dVariant::volumetric_sdf;
  fail(errc::variant_mismatch, "unknown 3D MNIST variant '" + s + "'");
}

namespace detail {

constexpr int kMnist3dRes = 32;

// stacks a 28x28 slice into the centered block of a 32^3 grid
inline void stack_slice(std::vector<float>& grid, const float* slice, int h, int w, int thickness) {
  int R = kMnist3dRes;
  int zoff = (R - thickness) / 2;
  int yoff = (R - h) / 2, xoff = (R - w) / 2;
  for (int z = 0; z < thickness; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        grid[static_cast<size_t>((xoff + x) + R * ((yoff + y) + R * (zoff + z)))] =
            slice[y * w + x];
      }
}

}  // namespace detail

inline VoxelSample make_3d_mnist(const ImageSample& image, int thickness, Mnist3dVariant variant) {
  require(thickness == 4 || thickness == 28, errc::bad_thickness,
          "thickness must be 4 (thin) or 28 (thick), got " + std::to_string(thickness));
  require(image.height == 28 && image.width == 28 && image.channels == 1, errc::shape_mismatch,
          "3D MNIST expects 28x28 single-channel images");
  const int R = detail::kMnist3dRes;

  VoxelSample out;
  out.label = image.label;

  ImageSample mask = binarize(image);
  switch (variant) {
    case Mnist3dVariant::binary: {
      OccupancyGrid g;
      g.resolution = R;
      g.voxel_pitch = 2.0 / R;
      g.occupied.assign(static_cast<size_t>(R) * R * R, 0);
      std::vector<float> tmp(g.occupied.size(), 0.f);
      detail::stack_slice(tmp, mask.values.data(), 28, 28, thickness);
      for (size_t i = 0; i < tmp.size(); ++i) g.occupied[i] = tmp[i] != 0.f;
      out.grid = std::move(g);
      break;
    }
    case Mnist3dVariant::stacked_gray: {
      SdfGrid g;
      g.resolution = R;
      g.sign_convention = 0;
      g.values.assign(static_cast<size_t>(R) * R * R, 0.f);
      detail::stack_slice(g.values, image.values.data(), 28, 28, thickness);
      out.grid = std::move(g);
      break;
    }
    case Mnist3dVariant::stacked_sdf: {
      // the paper-literal construction: stack the 2-D SDF image itself
      ImageSample sdf2d = sdf_image(mask);
      SdfGrid g;
      g.resolution = R;
      g.sign_convention = 1;
      g.values.assign(static_cast<size_t>(R) * R * R, 0.f);
      detail::stack_slice(g.values, sdf2d.values.data(), 28, 28, thickness);
      out.grid = std::move(g);
      break;
    }
    case Mnist3dVariant::volumetric_sdf: {
      OccupancyGrid occ;
      occ.resolution = R;
      occ.voxel_pitch = 2.0 / R;
      occ.occupied.assign(static_cast<size_t>(R) * R * R, 0);
      std::vector<float> tmp(occ.occupied.size(), 0.f);
      detail::stack_slice(tmp, mask.values.data(), 28, 28, thickness);
      for (size_t i = 0; i < tmp.size(); ++i) occ.occupied[i] = tmp[i] != 0.f;
      out.grid = signed_normalized_sdf(occ);
      break;
    }
  }
  return out;
}

// ---- record serialization -------------------------------------------------------
// A dataset split is a .rec file of consecutive blocks, each followed by a
// u16 little-endian label. Voxel records use the SDFV block from sdf.hpp;
// image records use the analogous SDFI block (magic "SDFI", version u16,
// height u16, width u16, channels u8, sign-convention u8, f32 data).

inline void write_sdfi_block(ByteWriter& w, int height, int width, uint8_t channels,
                             uint8_t sign_convention, const float* data) {
  w.put_string("SDFI");
  w.put<uint16_t>(1);
  w.put<uint16_t>(static_cast<uint16_t>(height));
  w.put<uint16_t>(static_cast<uint16_t>(width));
  w.put<uint8_t>(channels);
  w.put<uint8_t>(sign_convention);
  w.put_bytes(data, static_cast<size_t>(channels) * height * width * sizeof(float));
}

struct RecordBlock {
  std::vector<int64_t> shape;  // {C,R,R,R} or {C,H,W}
  uint8_t sign_convention = 0;
  std::vector<float> values;
  uint16_t label = 0;
};

inline RecordBlock read_record(ByteReader& r) {
  RecordBlock out;
  std::string magic = r.get_string(4);
  uint16_t version = r.get<uint16_t>();
  if (version != 1) fail(errc::bad_magic, "unsupported record version");
  if (magic == "SDFV") {
    int res = r.get<uint16_t>();
    uint8_t channels = r.get<uint8_t>();
    out.sign_convention = r.get<uint8_t>();
    out.shape = {channels, res, res, res};
  } else if (magic == "SDFI") {
    int h = r.get<uint16_t>();
    int w = r.get<uint16_t>();
    uint8_t channels = r.get<uint8_t>();
    out.sign_convention = r.get<uint8_t>();
    out.shape = {channels, h, w};
  } else {
    fail(errc::bad_magic, "unknown record magic '" + magic + "'");
  }
  int64_t n = 1;
  for (int64_t d : out.shape) n *= d;
  out.values.resize(static_cast<size_t>(n));
  r.get_bytes(out.values.data(), static_cast<size_t>(n) * sizeof(float));
  out.label = r.get<uint16_t>();
  return out;
}

inline void append_voxel_record(ByteWriter& w, const VoxelSample& sample) {
  if (const auto* occ = std::get_if<OccupancyGrid>(&sample.grid)) {
    std::vector<float> values(occ->occupied.size());
    for (size_t i = 0; i < values.size(); ++i) values[i] = occ->occupied[i] ? 1.f : 0.f;
    write_sdfv_block(w, occ->resolution, 1, 0, values.data());
  } else if (const auto* sdf = std::get_if<SdfGrid>(&sample.grid)) {
    write_sdfv_block(w, sdf->resolution, 1, sdf->sign_convention, sdf->values.data());
  } else {
    const auto& col = std::get<ColoredSdf>(sample.grid);
    std::vector<float> values;
    values.reserve(col.red.size() * 3);
    values.insert(values.end(), col.red.begin(), col.red.end());
    values.insert(values.end(), col.green.begin(), col.green.end());
    values.insert(values.end(), col.blue.begin(), col.blue.end());
    write_sdfv_block(w, col.resolution, 3, 0, values.data());
  }
  w.put<uint16_t>(static_cast<uint16_t>(sample.label));
}

// ---- manifest ---------------------------------------------------------------------

struct SplitInfo {
  std::string file;
  int64_t count = 0;
  std::string sha256;
};

struct DatasetManifest {
  std::string name;
  std::string variant;
  int resolution = 0;
  std::vector<std::string> class_names;
  std::map<std::string, SplitInfo> splits;

  std::string to_text() const {
    std::string out;
    out += "name = " + name + "\n";
    out += "variant = " + variant + "\n";
    out += "resolution = " + std::to_string(resolution) + "\n";
    std::string cls;
    for (size_t i = 0; i < class_names.size(); ++i) {
      if (i) cls += ",";
      cls += class_names[i];
    }
    out += "classes = " + cls + "\n";
    for (const auto& [split, info] : splits) {
      out += "split." + split + ".file = " + info.file + "\n";
      out += "split." + split + ".count = " + std::to_string(info.count) + "\n";
      out += "split." + split + ".sha256 = " + info.sha256 + "\n";
    }
    return out;
  }
};

inline DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "name") m.name = value;
    else if (key == "variant") m.variant = value;
    else if (key == "resolution") m.resolution = std::atoi(value.c_str());
    else if (key == "classes") {
      std::string cur;
      for (char c : value + ",") {
        if (c == ',') {
          if (!cur.empty()) m.class_names.push_back(cur);
          cur.clear();
        } else cur.push_back(c);
      }
    } else if (key.rfind("split.", 0) == 0) {
      auto rest = key.substr(6);
      auto dot = rest.find('.');
      if (dot == std::string::npos) continue;
      std::string split = rest.substr(0, dot), field = rest.substr(dot + 1);
      auto& info = m.splits[split];
      if (field == "file") info.file = value;
      else if (field == "count") info.count = std::atoll(value.c_str());
      else if (field == "sha256") info.sha256 = value;
    }
  }
  return m;
}

// Writes split record files plus the manifest; checksums are SHA-256 of the
// record file bytes, so identical builds produce identical manifests.
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path dir, std::string name, std::vector<std::string> class_names,
                int resolution, std::string variant)
      : dir_(std::move(dir)) {
    manifest_.name = std::move(name);
    manifest_.class_names = std::move(class_names);
    manifest_.resolution = resolution;
    manifest_.variant = std::move(variant);
    std::filesystem::create_directories(dir_);
  }

  void append(const std::string& split, const VoxelSample& sample) {
    append_voxel_record(buffers_[split], sample);
    ++counts_[split];
  }

  void append_image(const std::string& split, const ImageSample& image, uint8_t sign_convention) {
    auto& w = buffers_[split];
    write_sdfi_block(w, image.height, image.width, static_cast<uint8_t>(image.channels),
                     sign_convention, image.values.data());
    w.put<uint16_t>(static_cast<uint16_t>(image.label));
    ++counts_[split];
  }

  DatasetManifest finalize() {
    for (auto& [split, writer] : buffers_) {
      const auto& bytes = writer.bytes();
      SplitInfo info;
      info.file = split + ".rec";
      info.count = counts_[split];
      info.sha256 = sha256_hex(bytes);
      write_file(dir_ / info.file, bytes.data(), bytes.size());
      manifest_.splits[split] = info;
    }
    write_file(dir_ / "manifest.txt", manifest_.to_text());
    return manifest_;
  }

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  std::map<std::string, ByteWriter> buffers_;
  std::map<std::string, int64_t> counts_;
};

// Reads one split into a flat TensorDataset, verifying count and checksum.
inline nn::TensorDataset load_dataset_split(const std::filesystem::path& dir, const std::string& split) {
  auto manifest_bytes = read_file(dir / "manifest.txt");
  auto manifest = parse_manifest(std::string(manifest_bytes.begin(), manifest_bytes.end()));
  auto it = manifest.splits.find(split);
  require(it != manifest.splits.end(), errc::missing_split, "split '" + split + "' not in manifest");
  auto bytes = read_file(dir / it->second.file);
  require(sha256_hex(bytes) == it->second.sha256, errc::checksum_mismatch,
          "record file does not match manifest checksum");

  nn::TensorDataset out;
  out.class_count = static_cast<int>(manifest.class_names.size());
  ByteReader r(bytes);
  for (int64_t i = 0; i < it->second.count; ++i) {
    RecordBlock rec = read_record(r);
    if (i == 0) {
      out.sample_shape = rec.shape;
      out.data.reserve(static_cast<size_t>(it->second.count) * rec.values.size());
    }
    require(rec.shape == out.sample_shape, errc::shape_mismatch, "inconsistent record shapes");
    out.data.insert(out.data.end(), rec.values.begin(), rec.values.end());
    out.labels.push_back(rec.label);
  }
  require(out.size() == it->second.count, errc::count_mismatch, "record count mismatch");
  return out;
}

// ---- in-memory dataset builders ----------------------------------------------------

// 2-D MNIST variants as flat training tensors ({784} flattened or {1,28,28}).
enum class Mnist2dVariant { gray, binary, silhouette, sdf };

inline const char* to_string(Mnist2dVariant v) {
  switch (v) {
    case Mnist2dVariant::gray: return "gray";
    case Mnist2dVariant::binary: return "binary";
    case Mnist2dVariant::silhouette: return "silhouette";
    case Mnist2dVariant::sdf: return "sdf";
  }
  return "?";
}

inline Mnist2dVariant mnist2d_variant_from_string(const std::string& s) {
  if (s == "gray") return Mnist2dVariant::gray;
  if (s == "binary") return Mnist2dVariant::binary;
  if (s == "silhouette") return Mnist2dVariant::silhouette;
  if (s == "sdf") return Mnist2dVariant::sdf;
  fail(errc::variant_mismatch, "unknown 2D MNIST variant '" + s + "'");
}

inline ImageSample mnist2d_variant_image(const MnistSet& set, int i, Mnist2dVariant variant) {
  ImageSample img = set.sample(i);
  switch (variant) {
    case Mnist2dVariant::gray: return img;
    case Mnist2dVariant::binary: return binarize(img);
    case Mnist2dVariant::silhouette: return silhouette(binarize(img));
    case Mnist2dVariant::sdf: {
      ImageSample mask = binarize(img);
      bool on = false, off = false;
      for (float v : mask.values) (v == 1.f ? on : off) = true;
      if (!on || !off) {  // keep dataset builds total; an empty digit maps to zeros
        ImageSample zero = img;
        std::fill(zero.values.begin(), zero.values.end(), 0.f);
        return zero;
      }
      return sdf_image(mask);
    }
  }
  return img;
}

inline nn::TensorDataset build_mnist2d(const MnistSet& set, Mnist2dVariant variant,
                                       const std::vector<int>& indices, bool flatten = true) {
  nn::TensorDataset out;
  out.class_count = 10;
  int64_t m = static_cast<int64_t>(set.rows) * set.cols;
  out.sample_shape = flatten ? std::vector<int64_t>{m} : std::vector<int64_t>{1, set.rows, set.cols};
  out.data.resize(static_cast<size_t>(indices.size()) * m);
  out.labels.resize(indices.size());
  parallel_for(static_cast<int64_t>(indices.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      ImageSample img = mnist2d_variant_image(set, indices[static_cast<size_t>(i)], variant);
      std::copy(img.values.begin(), img.values.end(), out.data.begin() + i * m);
      out.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(img.label);
    }
  }, 64);
  return out;
}

// 3-D MNIST variants. out_resolution 32 keeps the full grid
// ({1,32,32,32}); out_resolution 8 downsamples at equal intervals and
// flattens to {512} for the stage-1 FC net.
inline nn::TensorDataset build_mnist3d(const MnistSet& set, int thickness, Mnist3dVariant variant,
                                       const std::vector<int>& indices, int out_resolution = 32) {
  require(out_resolution == 32 || out_resolution == 8, errc::unsupported_resolution,
          "3D MNIST tensors are built at 32^3 or downsampled to 8^3");
  nn::TensorDataset out;
  out.class_count = 10;
  int64_t m = out_resolution == 32 ? 32 * 32 * 32 : 512;
  out.sample_shape = out_resolution == 32 ? std::vector<int64_t>{1, 32, 32, 32} : std::vector<int64_t>{512};
  out.data.resize(static_cast<size_t>(indices.size()) * m);
  out.labels.resize(indices.size());

  parallel_for(static_cast<int64_t>(indices.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      VoxelSample vs = make_3d_mnist(set.sample(indices[static_cast<size_t>(i)]), thickness, variant);
      std::vector<float> values;
      if (const auto* occ = std::get_if<OccupancyGrid>(&vs.grid)) {
        if (out_resolution == 8) {
          auto small = downsample_equal_intervals(*occ, 8);
          values.assign(small.occupied.begin(), small.occupied.end());
        } else {
          values.assign(occ->occupied.begin(), occ->occupied.end());
        }
      } else {
        const auto& sdf = std::get<SdfGrid>(vs.grid);
        if (out_resolution == 8) {
          values = downsample_equal_intervals(sdf, 8).values;
        } else {
          values = sdf.values;
        }
      }
      std::copy(values.begin(), values.end(), out.data.begin() + i * m);
      out.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(vs.label);
    }
  }, 16);
  return out;
}

// ---- ModelNet ------------------------------------------------------------------

struct ModelNetBuildReport {
  DatasetManifest manifest;
  std::vector<std::string> failures;  // "path: reason" per failed mesh
  int64_t written = 0;
};

// Expects the standard layout root/<class>/{train,test}/*.off. Faulty meshes
// are logged and skipped, never fatal.
inline ModelNetBuildReport build_modelnet(const std::filesystem::path& mesh_root, int resolution,
                                          const std::string& variant,
                                          const std::filesystem::path& out_dir,
                                          int64_t max_per_class = 0) {
  namespace fs = std::filesystem;
  require(variant == "binary" || variant == "sdf" || variant == "colored-sdf",
          errc::variant_mismatch, "unknown ModelNet variant '" + variant + "'");
  require(fs::is_directory(mesh_root), errc::no_meshes, mesh_root.string() + " is not a directory");

  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(mesh_root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  require(!classes.empty(), errc::no_meshes, "no class directories under " + mesh_root.string());

  ModelNetBuildReport report;
  DatasetWriter writer(out_dir, mesh_root.filename().string(), classes, resolution, variant);

  for (size_t ci = 0; ci < classes.size(); ++ci) {
    for (const char* split : {"train", "test"}) {
      fs::path split_dir = mesh_root / classes[ci] / split;
      require(fs::is_directory(split_dir), errc::missing_split, split_dir.string() + " missing");
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(split_dir)) {
        if (entry.path().extension() == ".off") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      if (max_per_class > 0 && static_cast<int64_t>(files.size()) > max_per_class)
        files.resize(static_cast<size_t>(max_per_class));

      // voxelize in parallel, append in deterministic (sorted) order
      std::vector<VoxelSample> samples(files.size());
      std::vector<std::string> errors(files.size());
      parallel_for(static_cast<int64_t>(files.size()), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          try {
            auto mesh = normalize_to_unit_ball(load_off(read_file(files[static_cast<size_t>(i)])));
            auto occ = solid_voxelize(mesh, resolution);
            VoxelSample vs;
            vs.label = static_cast<int>(ci);
            vs.source_id = files[static_cast<size_t>(i)].filename().string();
            if (variant == "binary") {
              vs.grid = std::move(occ);
            } else if (variant == "sdf") {
              vs.grid = signed_normalized_sdf(occ);
            } else {
              vs.grid = colored_sdf(signed_normalized_sdf(occ));
            }
            samples[static_cast<size_t>(i)] = std::move(vs);
          } catch (const std::exception& e) {
            errors[static_cast<size_t>(i)] = files[static_cast<size_t>(i)].string() + ": " + e.what();
          }
        }
      });
      for (size_t i = 0; i < files.size(); ++i) {
        if (!errors[i].empty()) {
          report.failures.push_back(errors[i]);
        } else {
          writer.append(split, samples[i]);
          ++report.written;
        }
      }
    }
  }
  require(report.written > 0, errc::no_meshes, "no meshes voxelized under " + mesh_root.string());
  report.manifest = writer.finalize();
  if (!report.failures.empty()) {
    std::string log;
    for (const auto& f : report.failures) log += f + "\n";
    write_file(out_dir / "failures.log", log);
  }
  return report;
}

}  // namespace voxcade
