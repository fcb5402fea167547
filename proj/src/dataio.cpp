#include "rhrn/dataio.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace rhrn {

using nlohmann::json;

namespace {

const std::vector<std::string> kNoIds;

std::string sample_id(std::size_t i) {
  std::ostringstream out;
  out << std::setw(6) << std::setfill('0') << i;
  return out.str();
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = root;
  try {
    for (const auto& item : j.items()) {
      const std::string& k = item.key();
      if (k != "num_classes" && k != "ignore_index" && k != "mean" && k != "std" && k != "splits") {
        throw ValidationError(path.string() + ": unknown key '" + k + "'");
      }
    }
    m.num_classes = j.at("num_classes").get<Index>();
    m.ignore_index = j.value("ignore_index", kIgnoreIndex);
    if (j.contains("mean")) m.normalization.mean = j.at("mean").get<std::array<double, 3>>();
    if (j.contains("std")) m.normalization.std = j.at("std").get<std::array<double, 3>>();
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (m.num_classes < 1) throw ValidationError(path.string() + ": num_classes must be positive");
  for (double s : m.normalization.std) {
    if (!(s > 0)) throw ValidationError(path.string() + ": std entries must be positive");
  }
  return m;
}

void DatasetManifest::save() const {
  json j{{"num_classes", num_classes},
         {"ignore_index", ignore_index},
         {"mean", normalization.mean},
         {"std", normalization.std},
         {"splits", splits}};
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot write manifest under " + root.string());
  out << j.dump(2) << '\n';
}

const std::vector<std::string>& DatasetManifest::ids(const std::string& split) const {
  auto it = splits.find(split);
  return it == splits.end() ? kNoIds : it->second;
}

std::filesystem::path DatasetManifest::image_path(const std::string& split, const std::string& id) const {
  return root / split / "images" / (id + ".ppm");
}

std::filesystem::path DatasetManifest::label_path(const std::string& split, const std::string& id) const {
  return root / split / "labels" / (id + ".pgm");
}

void DatasetManifest::check_files() const {
  for (const auto& [split, list] : splits) {
    for (const auto& id : list) {
      if (!std::filesystem::exists(image_path(split, id))) {
        throw ValidationError("missing image " + image_path(split, id).string());
      }
      if (!std::filesystem::exists(label_path(split, id))) {
        throw ValidationError("image " + id + " in split " + split + " has no label file " +
                              label_path(split, id).string());
      }
    }
  }
}

Index pad_to_multiple(Index extent, Index multiple) { return (extent + multiple - 1) / multiple * multiple; }

TensorF image_to_tensor(const RgbImage& image, const Normalization& norm) {
  const Index H = pad_to_multiple(image.height), W = pad_to_multiple(image.width);
  TensorF t(Shape{3, H, W});
  for (int c = 0; c < 3; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    for (Index y = 0; y < image.height; ++y) {
      for (Index x = 0; x < image.width; ++x) {
        const double v = image.at(y, x, c) / 255.0;
        t[(c * H + y) * W + x] = static_cast<float>((v - norm.mean[ci]) / norm.std[ci]);
      }
    }
  }
  return t;
}

LabelMap labels_to_map(const GrayImage& labels, Index num_classes, int ignore_index, const std::string& source) {
  const Index H = pad_to_multiple(labels.height), W = pad_to_multiple(labels.width);
  LabelMap map(1, H, W, ignore_index);
  for (Index y = 0; y < labels.height; ++y) {
    for (Index x = 0; x < labels.width; ++x) {
      const int v = labels.at(y, x);
      if (v != ignore_index && v >= num_classes) {
        throw ValidationError(source + ": label " + std::to_string(v) + " >= num_classes " +
                              std::to_string(num_classes) + " at raster byte offset " +
                              std::to_string(y * labels.width + x));
      }
      map.at(0, y, x) = v;
    }
  }
  return map;
}

Sample load_sample(const DatasetManifest& manifest, const std::string& split, const std::string& id) {
  const auto ipath = manifest.image_path(split, id);
  const auto lpath = manifest.label_path(split, id);
  const RgbImage image = read_ppm(ipath);
  const GrayImage labels = read_pgm(lpath);
  if (image.width != labels.width || image.height != labels.height) {
    throw ValidationError(lpath.string() + ": label size " + std::to_string(labels.width) + "x" +
                          std::to_string(labels.height) + " does not match image " + std::to_string(image.width) +
                          "x" + std::to_string(image.height));
  }
  Sample s;
  s.image = image_to_tensor(image, manifest.normalization);
  s.labels = labels_to_map(labels, manifest.num_classes, manifest.ignore_index, lpath.string());
  s.id = id;
  s.original_height = image.height;
  s.original_width = image.width;
  return s;
}

Batch stack_samples(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ValidationError("cannot stack an empty batch");
  const Shape& s0 = samples.front()->image.shape();
  const auto N = static_cast<Index>(samples.size());
  const Index H = s0[1], W = s0[2];
  Batch batch;
  batch.images = TensorF(Shape{N, 3, H, W});
  batch.labels = LabelMap(N, H, W);
  for (Index n = 0; n < N; ++n) {
    const Sample& s = *samples[static_cast<std::size_t>(n)];
    if (s.image.shape() != s0) {
      throw ValidationError("batch mixes geometries " + s0.str() + " and " + s.image.shape().str() + " (sample " +
                            s.id + ")");
    }
    batch.images.array().segment(n * 3 * H * W, 3 * H * W) = s.image.array();
    std::copy(s.labels.values.begin(), s.labels.values.end(),
              batch.labels.values.begin() + static_cast<std::ptrdiff_t>(n * H * W));
    batch.ids.push_back(s.id);
  }
  return batch;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (count == 0) throw ValidationError("cannot iterate an empty split");
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(shuffle_seed), static_cast<std::uint32_t>(shuffle_seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<Batch> iterate_batches(const DatasetManifest& manifest, const std::string& split,
                                   std::size_t batch_size, std::uint64_t shuffle_seed, std::uint64_t epoch) {
  const auto& ids = manifest.ids(split);
  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) samples.push_back(load_sample(manifest, split, id));
  std::vector<Batch> out;
  for (const auto& indices : epoch_batches(samples.size(), batch_size, shuffle_seed, epoch)) {
    std::vector<const Sample*> members;
    for (std::size_t i : indices) members.push_back(&samples[i]);
    out.push_back(stack_samples(members));
  }
  return out;
}

std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 12> kPalette{{
      {32, 32, 48},    // 0 background
      {220, 40, 40},   // 1 red
      {40, 200, 60},   // 2 green
      {50, 90, 230},   // 3 blue
      {235, 210, 40},  // 4 yellow
      {200, 60, 210},  // 5 magenta
      {40, 210, 210},  // 6 cyan
      {245, 140, 30},  // 7 orange
      {150, 100, 60},  // 8 brown
      {240, 240, 240}, // 9 white
      {120, 120, 120}, // 10 gray
      {130, 200, 130}, // 11 pale green
  }};
  if (class_id >= 0 && class_id < static_cast<int>(kPalette.size())) {
    return kPalette[static_cast<std::size_t>(class_id)];
  }
  // Beyond the table: a fixed integer hash spread over the RGB cube.
  const auto h = static_cast<std::uint32_t>(class_id) * 2654435761u;
  return {static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16), static_cast<std::uint8_t>(h >> 8)};
}

DatasetManifest generate_synthetic(const SyntheticOptions& options, const std::filesystem::path& root) {
  if (options.size <= 0 || options.size % 32 != 0) {
    throw ValidationError("synthetic image size " + std::to_string(options.size) + " must be a positive multiple of 32");
  }
  if (options.num_classes < 2 || options.num_classes > 255) {
    throw ValidationError("synthetic corpus needs 2..255 classes, got " + std::to_string(options.num_classes));
  }
  if (options.count == 0) throw ValidationError("synthetic corpus needs count >= 1");

  DatasetManifest manifest;
  manifest.root = root;
  manifest.num_classes = options.num_classes;
  std::mt19937_64 rng(options.seed);
  const Index S = options.size;

  auto draw = [&rng](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };

  std::size_t next_id = 0;
  const std::vector<std::pair<std::string, std::size_t>> plan{
      {"train", options.count}, {"val", options.val_count}, {"test", options.test_count}};
  for (const auto& [split, count] : plan) {
    std::filesystem::create_directories(root / split / "images");
    std::filesystem::create_directories(root / split / "labels");
    auto& ids = manifest.splits[split];
    for (std::size_t i = 0; i < count; ++i) {
      GrayImage labels{S, S, std::vector<std::uint8_t>(static_cast<std::size_t>(S * S), 0)};
      const Index shapes = draw(2, 4);
      for (Index k = 0; k < shapes; ++k) {
        const auto cls = static_cast<std::uint8_t>(draw(1, options.num_classes - 1));
        const bool disc = draw(0, 1) == 1;
        const Index w = draw(S / 8, S / 3), h = disc ? w : draw(S / 8, S / 3);
        const Index x0 = draw(0, S - w), y0 = draw(0, S - h);
        const double cx = static_cast<double>(x0) + (static_cast<double>(w) - 1) / 2;
        const double cy = static_cast<double>(y0) + (static_cast<double>(h) - 1) / 2;
        const double r = static_cast<double>(w) / 2;
        for (Index y = y0; y < y0 + h; ++y) {
          for (Index x = x0; x < x0 + w; ++x) {
            if (disc) {
              const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
              if (dx * dx + dy * dy > r * r) continue;
            }
            labels.at(y, x) = cls;
          }
        }
      }
      RgbImage image{S, S, std::vector<std::uint8_t>(static_cast<std::size_t>(S * S * 3))};
      for (Index y = 0; y < S; ++y) {
        for (Index x = 0; x < S; ++x) {
          const auto color = class_color(labels.at(y, x));
          for (int c = 0; c < 3; ++c) {
            const Index v = static_cast<Index>(color[static_cast<std::size_t>(c)]) + draw(-12, 12);
            image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp<Index>(v, 0, 255));
          }
        }
      }
      const std::string id = sample_id(next_id++);
      write_ppm(manifest.image_path(split, id), image);
      write_pgm(manifest.label_path(split, id), labels);
      ids.push_back(id);
    }
  }
  manifest.save();
  return manifest;
}

}  // namespace rhrn
