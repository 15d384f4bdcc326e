#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxcade/edt.hpp"
#include "voxcade/error.hpp"
#include "voxcade/io.hpp"

namespace voxcade {

struct ImageSample {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> values;  // row-major, [0,1]
  int label = 0;
};

// Flat MNIST split (pixels already scaled to [0,1] by /255).
struct MnistSet {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;  // count * rows * cols
  std::vector<uint8_t> labels;

  const float* image(int i) const { return pixels.data() + static_cast<size_t>(i) * rows * cols; }

  ImageSample sample(int i) const {
    ImageSample s;
    s.height = rows;
    s.width = cols;
    s.values.assign(image(i), image(i) + rows * cols);
    s.label = labels[static_cast<size_t>(i)];
    return s;
  }
};

// IDX container: u32 big-endian magic (0x803 images rank 3, 0x801 labels
// rank 1), dimension sizes, raw bytes. Gzipped files are handled by
// read_file.
inline MnistSet load_mnist_idx(const std::vector<uint8_t>& images, const std::vector<uint8_t>& labels) {
  ByteReader ir(images);
  uint32_t magic = ir.get_u32_be();
  if (magic != 0x00000803u)
    fail(errc::bad_magic, "image file magic 0x" + std::to_string(magic) + " != 0x803");
  uint32_t n = ir.get_u32_be();
  uint32_t rows = ir.get_u32_be();
  uint32_t cols = ir.get_u32_be();
  size_t need = static_cast<size_t>(n) * rows * cols;
  if (ir.remaining() < need) fail(errc::truncated, "image payload shorter than header claims");

  ByteReader lr(labels);
  uint32_t lmagic = lr.get_u32_be();
  if (lmagic != 0x00000801u)
    fail(errc::bad_magic, "label file magic 0x" + std::to_string(lmagic) + " != 0x801");
  uint32_t ln = lr.get_u32_be();
  if (ln != n) fail(errc::count_mismatch, std::to_string(n) + " images vs " + std::to_string(ln) + " labels");
  if (lr.remaining() < ln) fail(errc::truncated, "label payload shorter than header claims");

  MnistSet set;
  set.count = static_cast<int>(n);
  set.rows = static_cast<int>(rows);
  set.cols = static_cast<int>(cols);
  set.pixels.resize(need);
  std::vector<uint8_t> raw(need);
  ir.get_bytes(raw.data(), need);
  for (size_t i = 0; i < need; ++i) set.pixels[i] = static_cast<float>(raw[i]) * (1.0f / 255.0f);
  set.labels.resize(ln);
  lr.get_bytes(set.labels.data(), ln);
  return set;
}

inline MnistSet load_mnist_files(const std::filesystem::path& image_path,
                                 const std::filesystem::path& label_path) {
  return load_mnist_idx(read_file(image_path), read_file(label_path));
}

// Resolves the four standard file names inside a directory, .gz or raw.
inline std::filesystem::path find_mnist_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* suffix : {".gz", ""}) {
    auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  fail(errc::io_failure, "missing MNIST file " + (dir / stem).string() + "[.gz]");
}

struct MnistPair {
  MnistSet train;
  MnistSet test;
};

inline MnistPair load_mnist_dir(const std::filesystem::path& dir) {
  MnistPair out;
  out.train = load_mnist_files(find_mnist_file(dir, "train-images-idx3-ubyte"),
                               find_mnist_file(dir, "train-labels-idx1-ubyte"));
  out.test = load_mnist_files(find_mnist_file(dir, "t10k-images-idx3-ubyte"),
                              find_mnist_file(dir, "t10k-labels-idx1-ubyte"));
  return out;
}

// ---- 2-D input variants -----------------------------------------------------

inline ImageSample binarize(const ImageSample& image, float threshold = 0.5f) {
  require(image.channels == 1, errc::not_binary, "binarize expects a single-channel image");
  ImageSample out = image;
  for (auto& v : out.values) v = (v >= threshold) ? 1.f : 0.f;
  return out;
}

// Foreground pixels with at least one background 4-neighbor; pixels beyond
// the border count as background.
inline ImageSample silhouette(const ImageSample& binary) {
  for (float v : binary.values)
    require(v == 0.f || v == 1.f, errc::not_binary, "silhouette expects a binary image");
  ImageSample out = binary;
  int h = binary.height, w = binary.width;
  auto at = [&](int y, int x) -> float {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.f;
    return binary.values[static_cast<size_t>(y * w + x)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = at(y, x);
      bool boundary = v == 1.f && (at(y - 1, x) == 0.f || at(y + 1, x) == 0.f ||
                                   at(y, x - 1) == 0.f || at(y, x + 1) == 0.f);
      out.values[static_cast<size_t>(y * w + x)] = boundary ? 1.f : 0.f;
    }
  return out;
}

// 2-D specialization of the signed normalized distance construction.
inline ImageSample sdf_image(const ImageSample& binary) {
  int h = binary.height, w = binary.width;
  std::vector<uint8_t> mask(static_cast<size_t>(h) * w);
  bool any_on = false, any_off = false;
  for (size_t i = 0; i < mask.size(); ++i) {
    require(binary.values[i] == 0.f || binary.values[i] == 1.f, errc::not_binary,
            "sdf_image expects a binary image");
    mask[i] = binary.values[i] == 1.f;
    (mask[i] ? any_on : any_off) = true;
  }
  if (!any_on || !any_off) fail(errc::degenerate_image, "image is entirely one value");

  std::vector<uint8_t> inv(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) inv[i] = !mask[i];
  auto d_out = squared_edt_grid(mask, {w, h});
  auto d_in = squared_edt_grid(inv, {w, h});
  double max_out = 0, max_in = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) max_in = std::max(max_in, static_cast<double>(d_in[i]));
    else max_out = std::max(max_out, static_cast<double>(d_out[i]));
  }
  ImageSample out = binary;
  double inv_out = 1.0 / std::sqrt(max_out), inv_in = 1.0 / std::sqrt(max_in);
  for (size_t i = 0; i < mask.size(); ++i) {
    out.values[i] = mask[i] ? static_cast<float>(-std::sqrt(static_cast<double>(d_in[i])) * inv_in)
                            : static_cast<float>(std::sqrt(static_cast<double>(d_out[i])) * inv_out);
  }
  return out;
}

}  // namespace voxcade
