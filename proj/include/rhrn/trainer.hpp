#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rhrn/dataio.hpp"
#include "rhrn/metrics.hpp"
#include "rhrn/model.hpp"

namespace rhrn {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  std::size_t eval_every = 50;
  std::filesystem::path checkpoint_path;  // empty: no checkpoint written
  std::string train_split = "train";
  std::string eval_split = "val";  // falls back to train_split when empty

  void validate() const;
};

struct SgdSettings {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Momentum buffers keyed by parameter.
using VelocityState = std::unordered_map<const ParamF*, TensorF>;

/// v <- momentum*v + g + weight_decay*w;  w <- w - lr*v.
/// Only trainable parameters move; a gradient handed in for a frozen entry
/// is ignored. Every trainable parameter must have a gradient.
void sgd_step(ParamTableF& params, const Gradients<float>& grads, const SgdSettings& settings,
              VelocityState& velocity);

struct LogRecord {
  std::size_t step = 0;
  double loss = 0;
  std::optional<double> pixel_accuracy;
  std::optional<double> mean_iou;
};

nlohmann::json to_json(const LogRecord& record);

struct TrainResult {
  nlohmann::json header;
  std::vector<LogRecord> log;
};

/// Runs `steps` iterations of forward, cross-entropy, backward and SGD.
/// Each record is also written as one JSON line to `log_out` when given,
/// preceded by a header line describing the run.
TrainResult train(SegmentationModel& model, const DatasetManifest& manifest, const TrainConfig& config,
                  std::ostream* log_out = nullptr);

/// Eval-mode confusion matrix over one split. Per-image work is spread over
/// `threads` workers and merged by summation.
ConfusionMatrix evaluate(const SegmentationModel& model, const DatasetManifest& manifest, const std::string& split,
                         unsigned threads = 1);

}  // namespace rhrn
