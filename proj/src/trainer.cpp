#include "rhrn/trainer.hpp"

#include <cmath>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "rhrn/checkpoint.hpp"

namespace rhrn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("train.learning_rate must be > 0");
  if (momentum < 0) throw ValidationError("train.momentum must be >= 0");
  if (weight_decay < 0) throw ValidationError("train.weight_decay must be >= 0");
  if (steps < 1) throw ValidationError("train.steps must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (eval_every < 1) throw ValidationError("train.eval_every must be >= 1");
}

void sgd_step(ParamTableF& params, const Gradients<float>& grads, const SgdSettings& settings,
              VelocityState& velocity) {
  // Check everything before touching any weight.
  for (const auto& p : params) {
    if (!p->trainable()) continue;
    const TensorF* g = grads.find(*p);
    if (g == nullptr) throw ValidationError("no gradient for trainable parameter " + p->name);
    if (g->shape() != p->shape()) throw ValidationError("gradient shape mismatch for " + p->name);
    if (!g->all_finite()) throw NumericFailure("non-finite gradient for parameter " + p->name);
  }
  const auto lr = static_cast<float>(settings.learning_rate);
  const auto mom = static_cast<float>(settings.momentum);
  const auto wd = static_cast<float>(settings.weight_decay);
  for (auto& p : params) {
    if (!p->trainable()) continue;
    const TensorF& g = *grads.find(*p);
    auto [it, fresh] = velocity.try_emplace(p.get(), p->shape());
    TensorF& v = it->second;
    v.array() = mom * v.array() + g.array() + wd * p->value->array();
    p->value->array() -= lr * v.array();
  }
}

nlohmann::json to_json(const LogRecord& record) {
  nlohmann::json j{{"step", record.step}, {"loss", record.loss}};
  if (record.pixel_accuracy) j["pixel_accuracy"] = *record.pixel_accuracy;
  if (record.mean_iou) j["mean_iou"] = *record.mean_iou;
  return j;
}

ConfusionMatrix evaluate(const SegmentationModel& model, const DatasetManifest& manifest, const std::string& split,
                         unsigned threads) {
  const auto& ids = manifest.ids(split);
  if (ids.empty()) throw ValidationError("split '" + split + "' is empty");
  const Index K = model.spec().num_classes;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(ids.size())));

  std::vector<ConfusionMatrix> partial(threads, ConfusionMatrix(K));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](unsigned worker) {
    try {
      for (std::size_t i = worker; i < ids.size(); i += threads) {
        const Sample s = load_sample(manifest, split, ids[i]);
        const Shape& is = s.image.shape();
        const TensorF logits = model.predict_logits(s.image.reshaped(Shape{1, is[0], is[1], is[2]}));
        partial[worker].update(argmax_channels(logits), s.labels, manifest.ignore_index);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  ConfusionMatrix total(K);
  for (const auto& cm : partial) total += cm;
  return total;
}

TrainResult train(SegmentationModel& model, const DatasetManifest& manifest, const TrainConfig& config,
                  std::ostream* log_out) {
  config.validate();
  if (manifest.num_classes != model.spec().num_classes) {
    throw IncompatibleArtifact("dataset has " + std::to_string(manifest.num_classes) + " classes, model predicts " +
                               std::to_string(model.spec().num_classes));
  }
  const auto& train_ids = manifest.ids(config.train_split);
  if (train_ids.empty()) throw ValidationError("training split '" + config.train_split + "' is empty");
  const std::string eval_split = manifest.ids(config.eval_split).empty() ? config.train_split : config.eval_split;

  std::vector<Sample> samples;
  samples.reserve(train_ids.size());
  for (const auto& id : train_ids) samples.push_back(load_sample(manifest, config.train_split, id));

  TrainResult result;
  const ParamTableF& table = model.parameters();
  result.header = {
      {"model", model.spec().variant_extra_stream ? "variant" : "standard"},
      {"streams", model.spec().pyramid_levels()},
      {"num_classes", model.spec().num_classes},
      {"total_params", table.element_count()},
      {"trainable_params", table.trainable_count()},
      {"steps", config.steps},
      {"batch_size", config.batch_size},
      {"seed", config.seed},
      {"eval_split", eval_split},
  };
  if (log_out != nullptr) *log_out << result.header.dump() << '\n' << std::flush;

  const SgdSettings sgd{config.learning_rate, config.momentum, config.weight_decay};
  VelocityState velocity;
  std::vector<std::vector<std::size_t>> epoch;
  std::size_t cursor = 0, epoch_index = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (cursor == epoch.size()) {
      epoch = epoch_batches(samples.size(), config.batch_size, config.seed, epoch_index++);
      cursor = 0;
    }
    std::vector<const Sample*> members;
    for (std::size_t i : epoch[cursor++]) members.push_back(&samples[i]);
    const Batch batch = stack_samples(members);

    LogRecord record;
    record.step = step;
    try {
      TapeF tape;
      const VarF logits = model.forward(VarF(batch.images), Pass{&tape, NormMode::Train});
      const VarF loss = softmax_cross_entropy_mean(logits, batch.labels, manifest.ignore_index);
      record.loss = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(record.loss)) throw NumericFailure("loss is not finite");
      const Gradients<float> grads = tape.backward(loss);
      sgd_step(model.parameters(), grads, sgd, velocity);
    } catch (const NumericFailure& e) {
      throw NumericFailure("training aborted at step " + std::to_string(step) + ": " + e.what());
    }

    if (step % config.eval_every == 0 || step == config.steps) {
      const ConfusionMatrix cm = evaluate(model, manifest, eval_split);
      record.pixel_accuracy = pixel_accuracy(cm);
      record.mean_iou = mean_iou(cm).mean_iou;
      if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    }
    if (log_out != nullptr) *log_out << to_json(record).dump() << '\n' << std::flush;
    result.log.push_back(record);
  }
  return result;
}

}  // namespace rhrn
