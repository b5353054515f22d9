// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pdarts/error.hpp"
#include "pdarts/image_io.hpp"
#include "pdarts/random.hpp"
#include "pdarts/tensor.hpp"
#include "pdarts/types.hpp"

namespace pdarts {

/// In-memory image set. Pixels are 8-bit, stored per sample in CHW order.
struct Dataset {
  std::string name;
  LabelMode label_mode = LabelMode::single_label;
  int num_classes = 0;
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  /// Class id per sample (single-label).
  std::vector<int> labels;
  /// N x num_classes 0/1 matrix (multi-label).
  std::vector<float> targets;
  /// Globally unique sample ids; never shared between splits.
  std::vector<std::int64_t> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
  const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * image_size(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.name = name;
    d.label_mode = label_mode;
    d.num_classes = num_classes;
    d.channels = channels;
    d.height = height;
    d.width = width;
    d.pixels.reserve(idx.size() * image_size());
    for (auto i : idx) {
      if (i >= size()) throw ContractError("subset index out of range");
      d.pixels.insert(d.pixels.end(), image(i), image(i) + image_size());
      d.ids.push_back(ids[i]);
      if (label_mode == LabelMode::single_label) {
        d.labels.push_back(labels[i]);
      } else {
        d.targets.insert(d.targets.end(), targets.begin() + i * num_classes,
                         targets.begin() + (i + 1) * num_classes);
      }
    }
    return d;
  }
};

struct DatasetSplits {
  Dataset train, val, test;
};

/// Per-channel mean/std in [0, 1] pixel units.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;

  static Normalization identity(int channels) {
    return {std::vector<float>(channels, 0.f), std::vector<float>(channels, 1.f)};
  }

  /// Statistics of a (training) split; zero-variance channels get std 1.
  static Normalization from(const Dataset& d) {
    Normalization n = identity(d.channels);
    if (d.empty()) return n;
    const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
    for (int c = 0; c < d.channels; ++c) {
      double s = 0, ss = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const std::uint8_t* p = d.image(i) + c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double v = p[k] / 255.0;
          s += v;
          ss += v * v;
        }
      }
      const double cnt = static_cast<double>(plane * d.size());
      const double m = s / cnt;
      const double var = std::max(ss / cnt - m * m, 0.0);
      n.mean[c] = static_cast<float>(m);
      n.std[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.f;
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// Resizing

/// Bilinear resize of a CHW float image (align-corners off, edge clamped).
inline std::vector<float> resize_bilinear(const float* src, int C, int H, int W, int H2, int W2) {
  std::vector<float> out(static_cast<std::size_t>(C) * H2 * W2);
  const double sy = static_cast<double>(H) / H2, sx = static_cast<double>(W) / W2;
  for (int y = 0; y < H2; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, H - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int x = 0; x < W2; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, W - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      for (int c = 0; c < C; ++c) {
        const float* p = src + static_cast<std::size_t>(c) * H * W;
        const double v = (1 - wy) * ((1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                         wy * ((1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
        out[(static_cast<std::size_t>(c) * H2 + y) * W2 + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Copy of `d` with every image resized to (height, width).
inline Dataset resized(const Dataset& d, int height, int width) {
  if (height < 1 || width < 1) throw ConfigError("resize: target resolution must be positive");
  if (height == d.height && width == d.width) return d;
  Dataset out = d;
  out.height = height;
  out.width = width;
  out.pixels.assign(d.size() * out.image_size(), 0);
  std::vector<float> buf(d.image_size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < buf.size(); ++k) buf[k] = d.image(i)[k] / 255.f;
    auto r = resize_bilinear(buf.data(), d.channels, d.height, d.width, height, width);
    std::uint8_t* dst = out.pixels.data() + i * out.image_size();
    for (std::size_t k = 0; k < r.size(); ++k) dst[k] = to_byte(r[k]);
  }
  return out;
}

/// Search-time split of a training set: first half trains weights, second
/// half drives the architecture parameters.
inline std::pair<Dataset, Dataset> search_split(const Dataset& train) {
  std::vector<std::size_t> a(train.size() / 2), b(train.size() - train.size() / 2);
  std::iota(a.begin(), a.end(), std::size_t{0});
  std::iota(b.begin(), b.end(), a.size());
  return {train.subset(a), train.subset(b)};
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthSpec {
  int num_classes = 4;
  LabelMode label_mode = LabelMode::single_label;
  int height = 64;
  int width = 64;
  int n_train = 100;
  int n_val = 0;
  int n_test = 0;
  /// 1 gives a constant background, 0 the noisiest one.
  double background_uniformity = 0.5;
  std::uint64_t seed = 0;
};

namespace detail {

struct ClassTexture {
  double theta;
  double period;
  std::array<double, 3> color;
};

inline std::vector<ClassTexture> class_textures(int k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 100));
  std::vector<ClassTexture> out;
  for (int c = 0; c < k; ++c) {
    ClassTexture t;
    t.theta = M_PI * c / k + rng.uniform(-0.1, 0.1);
    t.period = 3.0 + 2.0 * (c % 3) + rng.uniform(0.0, 0.5);
    for (auto& v : t.color) v = rng.uniform(0.15, 0.95);
    out.push_back(t);
  }
  return out;
}

inline constexpr double kBackgroundLevel = 0.45;
inline constexpr double kBackgroundMaxStd = 0.2;

inline void paint_blob(std::vector<double>& img, int H, int W, const ClassTexture& t, Rng& rng) {
  const double r = rng.uniform(std::min(H, W) / 8.0, std::min(H, W) / 5.0);
  const double cy = rng.uniform(r, H - r), cx = rng.uniform(r, W - r);
  const double phase = rng.uniform(0.0, 2 * M_PI);
  std::array<double, 3> color;
  for (int c = 0; c < 3; ++c) color[c] = std::clamp(t.color[c] + rng.uniform(-0.2, 0.2), 0.05, 1.0);
  const double ct = std::cos(t.theta), st = std::sin(t.theta);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx > r * r) continue;
      const double wave = std::sin(2 * M_PI * (dx * ct + dy * st) / t.period + phase);
      for (int c = 0; c < 3; ++c)
        img[(static_cast<std::size_t>(c) * H + y) * W + x] = color[c] * (0.6 + 0.4 * wave);
    }
}

}  // namespace detail

/// Class-textured blobs over a noisy background; labels are exact by
/// construction and every draw comes from `spec.seed`.
inline DatasetSplits synth_generate(const SynthSpec& spec) {
  if (spec.num_classes < 1) throw ConfigError("synth: num_classes must be positive");
  if (spec.height < 4 || spec.width < 4) throw ConfigError("synth: resolution must be at least 4");
  if (spec.n_train < 1 || spec.n_val < 0 || spec.n_test < 0)
    throw ConfigError("synth: split sizes must be nonnegative with at least one training sample");
  if (!(spec.background_uniformity >= 0.0 && spec.background_uniformity <= 1.0))
    throw ConfigError("synth: background_uniformity must lie in [0, 1]");
  const auto textures = detail::class_textures(spec.num_classes, spec.seed);
  const int H = spec.height, W = spec.width;
  const double bg_std = detail::kBackgroundMaxStd * (1.0 - spec.background_uniformity);
  std::int64_t next_id = 0;
  auto make = [&](int n, std::uint64_t tag) {
    Dataset d;
    d.name = "synthetic";
    d.label_mode = spec.label_mode;
    d.num_classes = spec.num_classes;
    d.channels = 3;
    d.height = H;
    d.width = W;
    d.pixels.reserve(static_cast<std::size_t>(n) * d.image_size());
    Rng rng(derive_seed(spec.seed, tag));
    std::vector<double> img(d.image_size());
    for (int i = 0; i < n; ++i) {
      for (auto& v : img) v = detail::kBackgroundLevel + (bg_std > 0 ? bg_std * rng.normal() : 0.0);
      if (spec.label_mode == LabelMode::single_label) {
        const int c = static_cast<int>(rng.below(spec.num_classes));
        d.labels.push_back(c);
        const int blobs = 1 + static_cast<int>(rng.below(2));
        for (int b = 0; b < blobs; ++b) detail::paint_blob(img, H, W, textures[c], rng);
      } else {
        std::vector<float> t(spec.num_classes, 0.f);
        for (auto& v : t) v = rng.bernoulli(0.3) ? 1.f : 0.f;
        if (std::all_of(t.begin(), t.end(), [](float v) { return v == 0.f; }))
          t[rng.below(spec.num_classes)] = 1.f;
        for (int c = 0; c < spec.num_classes; ++c)
          if (t[c] > 0) detail::paint_blob(img, H, W, textures[c], rng);
        d.targets.insert(d.targets.end(), t.begin(), t.end());
      }
      for (double v : img) d.pixels.push_back(to_byte(v));
      d.ids.push_back(next_id++);
    }
    return d;
  };
  DatasetSplits s;
  s.train = make(spec.n_train, 10);
  s.val = make(spec.n_val, 11);
  s.test = make(spec.n_test, 12);
  return s;
}

// ---------------------------------------------------------------------------
// Binary tiny-image corpus (10- and 100-class layouts)

namespace detail {

inline Dataset read_cifar_records(const std::vector<std::filesystem::path>& files, bool hundred,
                                  std::int64_t first_id) {
  const std::size_t label_bytes = hundred ? 2 : 1;
  const std::size_t record = label_bytes + 3072;
  Dataset d;
  d.name = hundred ? "cifar100" : "cifar10";
  d.num_classes = hundred ? 100 : 10;
  d.height = d.width = 32;
  for (const auto& f : files) {
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(f, ec);
    if (ec) throw IoError("missing file: " + f.string());
    if (bytes == 0 || bytes % record != 0)
      throw IoError("corrupt file (size " + std::to_string(bytes) + " is not a multiple of " +
                    std::to_string(record) + "): " + f.string());
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot open " + f.string());
    std::vector<std::uint8_t> buf(bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("read failed: " + f.string());
    const std::size_t n = bytes / record;
    d.pixels.reserve(d.pixels.size() + n * 3072);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* r = buf.data() + i * record;
      const int label = r[label_bytes - 1];
      if (label >= d.num_classes) throw IoError("corrupt label " + std::to_string(label) + " in " + f.string());
      d.labels.push_back(label);
      d.pixels.insert(d.pixels.end(), r + label_bytes, r + record);
      d.ids.push_back(first_id++);
    }
  }
  return d;
}

}  // namespace detail

/// Loads the public binary layout: data_batch_{1..5}.bin + test_batch.bin
/// (10 classes) or train.bin + test.bin (100 classes, fine labels).
inline DatasetSplits load_cifar_format(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("missing directory: " + dir.string());
  const bool hundred = fs::exists(dir / "train.bin");
  std::vector<fs::path> train_files, test_files;
  if (hundred) {
    train_files = {dir / "train.bin"};
    test_files = {dir / "test.bin"};
  } else {
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    test_files = {dir / "test_batch.bin"};
  }
  DatasetSplits s;
  s.train = detail::read_cifar_records(train_files, hundred, 0);
  s.test = detail::read_cifar_records(test_files, hundred, static_cast<std::int64_t>(s.train.size()));
  s.val = s.train.subset({});
  return s;
}

// ---------------------------------------------------------------------------
// Folder of patches with a CSV label manifest

struct PatchSpec {
  std::string name = "patches";
  std::string manifest = "labels.csv";
  /// 0 infers the count from the manifest.
  int num_classes = 0;
  /// Target resolution; 0 keeps the native size (which must then be uniform).
  int height = 0;
  int width = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string join_offenders(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size() && i < 20; ++i) s += (i ? "; " : "") + v[i];
  if (v.size() > 20) s += "; ... (" + std::to_string(v.size()) + " total)";
  return s;
}

}  // namespace detail

/// Loads `dir/<manifest>` and the images it names. Header is
/// `filename,<class_0>,...` (multi-label 0/1 columns) or `filename,label`.
/// An optional trailing `split` column assigns rows to train/val/test;
/// without it every row goes to train.
inline DatasetSplits load_patch_dataset(const std::filesystem::path& dir, const PatchSpec& spec) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError("patch dataset: not a directory: " + dir.string());
  if (fs::is_empty(dir)) throw ValidationError("patch dataset: empty directory: " + dir.string());
  const fs::path manifest = dir / spec.manifest;
  std::ifstream in(manifest);
  if (!in) throw ValidationError("patch dataset: missing manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("patch dataset: empty manifest " + manifest.string());
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "filename")
    throw ValidationError("patch dataset: manifest header must start with 'filename' and name labels");
  const bool has_split = header.back() == "split";
  const std::size_t label_cols = header.size() - 1 - (has_split ? 1 : 0);
  if (label_cols == 0) throw ValidationError("patch dataset: manifest has no label columns");
  const bool single = label_cols == 1 && header[1] == "label";
  std::vector<std::string> offenders;
  struct Row {
    std::string file;
    std::vector<float> t;
    int label = -1;
    int split = 0;
  };
  std::vector<Row> rows;
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    const std::string where = "line " + std::to_string(lineno);
    if (cells.size() != header.size()) {
      offenders.push_back(where + ": expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    Row r;
    r.file = cells[0];
    if (!seen.insert(r.file).second) offenders.push_back(where + ": duplicate " + r.file);
    if (!fs::is_regular_file(dir / r.file)) offenders.push_back(where + ": missing image " + r.file);
    if (has_split) {
      const auto& s = cells.back();
      if (s == "train") r.split = 0;
      else if (s == "val") r.split = 1;
      else if (s == "test") r.split = 2;
      else offenders.push_back(where + ": bad split '" + s + "'");
    }
    if (single) {
      try {
        std::size_t used = 0;
        r.label = std::stoi(cells[1], &used);
        if (used != cells[1].size() || r.label < 0) throw std::invalid_argument("label");
      } catch (const std::exception&) {
        offenders.push_back(where + ": bad label '" + cells[1] + "'");
      }
    } else {
      for (std::size_t k = 1; k <= label_cols; ++k) {
        if (cells[k] == "0") r.t.push_back(0.f);
        else if (cells[k] == "1") r.t.push_back(1.f);
        else {
          offenders.push_back(where + ": column " + header[k] + " is '" + cells[k] + "', expected 0/1");
          r.t.push_back(0.f);
        }
      }
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError("patch dataset: manifest lists no images");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path()) && !seen.count(e.path().filename().string()))
      offenders.push_back("unlisted image " + e.path().filename().string());
  int num_classes = single ? spec.num_classes : static_cast<int>(label_cols);
  if (single) {
    int max_label = 0;
    for (const auto& r : rows) max_label = std::max(max_label, r.label);
    if (num_classes == 0) num_classes = max_label + 1;
    for (const auto& r : rows)
      if (r.label >= num_classes) offenders.push_back(r.file + ": label " + std::to_string(r.label) + " out of range");
  } else if (spec.num_classes != 0 && spec.num_classes != num_classes) {
    offenders.push_back("manifest has " + std::to_string(num_classes) + " classes, spec expects " +
                        std::to_string(spec.num_classes));
  }
  if (!offenders.empty())
    throw ValidationError("patch dataset: manifest/image mismatch: " + detail::join_offenders(offenders));

  std::array<Dataset, 3> parts;
  for (auto& p : parts) {
    p.name = spec.name;
    p.label_mode = single ? LabelMode::single_label : LabelMode::multi_label;
    p.num_classes = num_classes;
    p.channels = 3;
  }
  int H = spec.height, W = spec.width;
  std::int64_t id = 0;
  for (const auto& r : rows) {
    const RgbImage img = read_image(dir / r.file);
    if (H == 0) {
      H = img.height;
      W = img.width;
    }
    std::vector<float> chw(static_cast<std::size_t>(3) * img.height * img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c)
          chw[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
              img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.f;
    if (img.height != H || img.width != W) {
      if (spec.height == 0) offenders.push_back(r.file + ": size differs from the first image");
      chw = resize_bilinear(chw.data(), 3, img.height, img.width, H, W);
    }
    Dataset& d = parts[r.split];
    for (float v : chw) d.pixels.push_back(to_byte(v));
    if (single) d.labels.push_back(r.label);
    else d.targets.insert(d.targets.end(), r.t.begin(), r.t.end());
    d.ids.push_back(id++);
  }
  if (!offenders.empty())
    throw ValidationError("patch dataset: inconsistent image sizes: " + detail::join_offenders(offenders));
  for (auto& p : parts) {
    p.height = H;
    p.width = W;
  }
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentKind {
  identity,
  /// Random crop from a zero-padded image, then horizontal flip (p = 0.5).
  crop_flip,
  /// Horizontal and vertical flips (p = 0.5 each) and a random affine warp.
  flip_affine,
};

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::identity;
  int crop_padding = 4;
  double max_rotation_deg = 10.0;
  /// Translation bound as a fraction of the side length.
  double max_translation = 0.1;
  /// Side of the cutout square in pixels; 0 disables cutout.
  int cutout_length = 0;
};

inline std::string_view augment_kind_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::identity: return "identity";
    case AugmentKind::crop_flip: return "crop_flip";
    case AugmentKind::flip_affine: return "flip_affine";
  }
  return "identity";
}

inline AugmentKind parse_augment_kind(std::string_view s) {
  if (s == "identity" || s == "none") return AugmentKind::identity;
  if (s == "crop_flip") return AugmentKind::crop_flip;
  if (s == "flip_affine") return AugmentKind::flip_affine;
  throw ConfigError("unknown augmentation policy '" + std::string(s) + "'");
}

inline void hflip(float* img, int C, int H, int W) {
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) std::reverse(img + (static_cast<std::size_t>(c) * H + y) * W,
                                             img + (static_cast<std::size_t>(c) * H + y + 1) * W);
}

inline void vflip(float* img, int C, int H, int W) {
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      std::swap_ranges(img + (static_cast<std::size_t>(c) * H + y) * W,
                       img + (static_cast<std::size_t>(c) * H + y + 1) * W,
                       img + (static_cast<std::size_t>(c) * H + H - 1 - y) * W);
}

/// Shifts the image by (dy, dx) with zero fill: the crop of a padded copy
/// whose top-left corner is (pad + dy, pad + dx).
inline void shift(float* img, int C, int H, int W, int dy, int dx) {
  std::vector<float> out(static_cast<std::size_t>(C) * H * W, 0.f);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < W; ++x) {
        const int sx = x + dx;
        if (sx < 0 || sx >= W) continue;
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = img[(static_cast<std::size_t>(c) * H + sy) * W + sx];
      }
    }
  std::copy(out.begin(), out.end(), img);
}

/// Rotation by `deg` about the center plus translation (ty, tx) pixels,
/// bilinear sampling, zero outside the source.
inline void affine(float* img, int C, int H, int W, double deg, double ty, double tx) {
  const double a = deg * M_PI / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  std::vector<float> out(static_cast<std::size_t>(C) * H * W, 0.f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // Inverse map from output to source coordinates.
      const double oy = y - cy - ty, ox = x - cx - tx;
      const double sy = ca * oy - sa * ox + cy, sx = sa * oy + ca * ox + cx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double wy = sy - y0, wx = sx - x0;
      for (int c = 0; c < C; ++c) {
        const float* p = img + static_cast<std::size_t>(c) * H * W;
        auto at = [&](int yy, int xx) -> double {
          return (yy < 0 || yy >= H || xx < 0 || xx >= W) ? 0.0 : p[yy * W + xx];
        };
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = static_cast<float>(
            (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
            wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1)));
      }
    }
  std::copy(out.begin(), out.end(), img);
}

/// Zeroes the length x length square centered at (cy, cx), clipped at the borders.
inline void cutout(float* img, int C, int H, int W, int length, int cy, int cx) {
  const int y0 = std::max(cy - length / 2, 0), y1 = std::min(cy - length / 2 + length, H);
  const int x0 = std::max(cx - length / 2, 0), x1 = std::min(cx - length / 2 + length, W);
  for (int c = 0; c < C; ++c)
    for (int y = y0; y < y1; ++y)
      std::fill(img + (static_cast<std::size_t>(c) * H + y) * W + x0,
                img + (static_cast<std::size_t>(c) * H + y) * W + std::max(x0, x1), 0.f);
}

/// Applies the geometric part of `policy` in place to one CHW image.
inline void augment_image(float* img, int C, int H, int W, const AugmentPolicy& policy, Rng& rng) {
  switch (policy.kind) {
    case AugmentKind::identity:
      break;
    case AugmentKind::crop_flip: {
      const int p = policy.crop_padding;
      const int dy = static_cast<int>(rng.below(2 * p + 1)) - p;
      const int dx = static_cast<int>(rng.below(2 * p + 1)) - p;
      if (dy || dx) shift(img, C, H, W, dy, dx);
      if (rng.bernoulli(0.5)) hflip(img, C, H, W);
      break;
    }
    case AugmentKind::flip_affine: {
      if (rng.bernoulli(0.5)) hflip(img, C, H, W);
      if (rng.bernoulli(0.5)) vflip(img, C, H, W);
      const double deg = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
      const double ty = rng.uniform(-policy.max_translation, policy.max_translation) * H;
      const double tx = rng.uniform(-policy.max_translation, policy.max_translation) * W;
      affine(img, C, H, W, deg, ty, tx);
      break;
    }
  }
}

/// Augments an NCHW float batch in place. Shapes and labels never change.
inline void augment(std::vector<float>& images, int N, int C, int H, int W,
                    const AugmentPolicy& policy, Rng& rng) {
  const std::size_t sz = static_cast<std::size_t>(C) * H * W;
  if (images.size() != sz * N) throw ShapeError("augment: buffer does not match (N, C, H, W)");
  for (int n = 0; n < N; ++n) augment_image(images.data() + n * sz, C, H, W, policy, rng);
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
struct Batch {
  Variable<T> images;
  std::vector<int> labels;
  std::vector<T> targets;
  std::vector<std::int64_t> ids;
  int size() const { return static_cast<int>(ids.size()); }
};

/// Builds a normalized batch; augmentation (geometric first, cutout last,
/// on normalized values) draws from `rng`.
template <typename T>
Batch<T> make_batch(const Dataset& d, const std::vector<std::size_t>& idx, const Normalization& norm,
                    const AugmentPolicy& policy, Rng& rng) {
  const int N = static_cast<int>(idx.size()), C = d.channels, H = d.height, W = d.width;
  if (N == 0) throw ContractError("make_batch: empty batch");
  if (static_cast<int>(norm.mean.size()) != C) throw ShapeError("make_batch: normalization channel mismatch");
  const std::size_t sz = d.image_size(), plane = static_cast<std::size_t>(H) * W;
  std::vector<float> img(sz);
  std::vector<T> values(sz * N);
  Batch<T> b;
  for (int n = 0; n < N; ++n) {
    const std::size_t i = idx[n];
    if (i >= d.size()) throw ContractError("make_batch: index out of range");
    const std::uint8_t* src = d.image(i);
    for (std::size_t k = 0; k < sz; ++k) img[k] = src[k] / 255.f;
    augment_image(img.data(), C, H, W, policy, rng);
    for (int c = 0; c < C; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        img[c * plane + k] = (img[c * plane + k] - norm.mean[c]) / norm.std[c];
    if (policy.cutout_length > 0) {
      const int cy = static_cast<int>(rng.below(H)), cx = static_cast<int>(rng.below(W));
      cutout(img.data(), C, H, W, policy.cutout_length, cy, cx);
    }
    std::copy(img.begin(), img.end(), values.begin() + n * sz);
    b.ids.push_back(d.ids[i]);
    if (d.label_mode == LabelMode::single_label) {
      b.labels.push_back(d.labels[i]);
    } else {
      for (int k = 0; k < d.num_classes; ++k) b.targets.push_back(static_cast<T>(d.targets[i * d.num_classes + k]));
    }
  }
  b.images = Variable<T>::from({N, C, H, W}, std::move(values));
  return b;
}

/// Seeded, reproducible batch order over a dataset of `n` samples. A final
/// batch with a single sample is dropped (batch statistics need two).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch_size, std::uint64_t seed, bool shuffle = true)
      : n_(n), batch_(batch_size), seed_(seed), shuffle_(shuffle) {
    if (batch_size < 1) throw ConfigError("batch size must be positive");
  }

  std::vector<std::vector<std::size_t>> epoch(int e) const {
    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_) {
      Rng rng(derive_seed(seed_, 1000 + static_cast<std::uint64_t>(e)));
      for (std::size_t i = n_; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n_; s += batch_) {
      const std::size_t end = std::min(n_, s + batch_);
      if (end - s < 2 && !out.empty()) break;
      out.emplace_back(order.begin() + s, order.begin() + end);
    }
    return out;
  }

  std::size_t size() const { return n_; }
  int batch_size() const { return batch_; }

 private:
  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace pdarts
