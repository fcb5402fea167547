#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rhrn/metrics.hpp"
#include "rhrn/netpbm.hpp"
#include "rhrn/tensor.hpp"

namespace rhrn {

struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
};

/// Dataset root layout: root/manifest.json and
/// root/<split>/{images/<id>.ppm, labels/<id>.pgm}.
struct DatasetManifest {
  std::filesystem::path root;
  Index num_classes = 0;
  int ignore_index = kIgnoreIndex;
  Normalization normalization;
  std::map<std::string, std::vector<std::string>> splits;

  static DatasetManifest load(const std::filesystem::path& root);
  void save() const;

  /// Empty when the split is absent.
  const std::vector<std::string>& ids(const std::string& split) const;
  std::filesystem::path image_path(const std::string& split, const std::string& id) const;
  std::filesystem::path label_path(const std::string& split, const std::string& id) const;

  /// Every listed id has both files.
  void check_files() const;
};

struct Sample {
  TensorF image;    // (3,H,W), normalized, padded
  LabelMap labels;  // (1,H,W), padded with ignore_index
  std::string id;
  Index original_height = 0;
  Index original_width = 0;
};

Index pad_to_multiple(Index extent, Index multiple = 32);

/// Scales to [0,1], normalizes per channel, zero-pads right/bottom to the next
/// multiple of 32.
TensorF image_to_tensor(const RgbImage& image, const Normalization& norm);

/// Class ids with ignore padding on the right/bottom. Rejects ids >= K other
/// than ignore_index, naming the byte offset of the pixel in `source`.
LabelMap labels_to_map(const GrayImage& labels, Index num_classes, int ignore_index,
                       const std::string& source = "labels");

Sample load_sample(const DatasetManifest& manifest, const std::string& split, const std::string& id);

struct Batch {
  TensorF images;  // (N,3,H,W)
  LabelMap labels;  // (N,H,W)
  std::vector<std::string> ids;
};

/// Stacks samples of identical geometry.
Batch stack_samples(const std::vector<const Sample*>& samples);

/// Deterministic per-epoch order of `count` items split into batches of at
/// most batch_size; the final batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed, std::uint64_t epoch);

/// Loads and batches one split per epoch_batches.
std::vector<Batch> iterate_batches(const DatasetManifest& manifest, const std::string& split,
                                   std::size_t batch_size, std::uint64_t shuffle_seed,
                                   std::uint64_t epoch = 0);

struct SyntheticOptions {
  std::uint64_t seed = 7;
  std::size_t count = 8;
  Index size = 64;
  Index num_classes = 3;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
};

/// Colored axis-aligned rectangles and discs on a background. Class 0 is the
/// background; shapes never cover the whole image. Labels are the exact
/// shape masks. All samples of a split share one geometry.
DatasetManifest generate_synthetic(const SyntheticOptions& options, const std::filesystem::path& root);

/// Fixed palette used by the generator and by colored predictions.
std::array<std::uint8_t, 3> class_color(int class_id);

}  // namespace rhrn
