#include "rhrn/commands.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "rhrn/analyzer.hpp"
#include "rhrn/checkpoint.hpp"
#include "rhrn/config.hpp"
#include "rhrn/dataio.hpp"
#include "rhrn/model.hpp"
#include "rhrn/trainer.hpp"

namespace rhrn {
namespace {

namespace fs = std::filesystem;

struct GenerateArgs {
  SyntheticOptions options;
  std::string out;
};

struct TrainArgs {
  std::string config, out, data;
  std::optional<std::size_t> steps, batch_size, eval_every;
  std::optional<std::uint64_t> seed, init_seed;
  std::optional<double> lr;
};

struct EvalArgs {
  std::string config, checkpoint, split = "val", data, out;
  unsigned threads = 1;
};

struct PredictArgs {
  std::string checkpoint, image, out, color, config;
};

struct DumpArgs {
  std::string checkpoint, image, out, config;
};

struct AnalyzeArgs {
  std::string config, compare, json_out, format = "table";
  Index input_size = 64;
};

std::unique_ptr<SegmentationModel> model_from_checkpoint(const Checkpoint& ckpt) {
  ArchitectureSpec spec;
  try {
    spec = infer_architecture(ckpt);
  } catch (const ValidationError& e) {
    throw IncompatibleArtifact(std::string("checkpoint does not describe a valid model: ") + e.what());
  }
  auto model = std::make_unique<SegmentationModel>(spec, 0);
  apply_checkpoint(*model, ckpt);
  return model;
}

Normalization normalization_for(const std::string& config_path) {
  if (config_path.empty()) return {};
  const RunConfig cfg = RunConfig::load(config_path);
  if (cfg.data.root.empty() || !fs::exists(cfg.data.root / "manifest.json")) return {};
  return DatasetManifest::load(cfg.data.root).normalization;
}

TensorF load_image_batch(const std::string& path, const Normalization& norm, RgbImage* raw = nullptr) {
  RgbImage image = read_ppm(path);
  TensorF t = image_to_tensor(image, norm);
  const Shape& s = t.shape();
  if (raw != nullptr) *raw = std::move(image);
  return t.reshaped(Shape{1, s[0], s[1], s[2]});
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const DatasetManifest m = generate_synthetic(a.options, a.out);
  std::size_t files = 0;
  for (const auto& [split, ids] : m.splits) files += 2 * ids.size();
  out << "wrote " << files << " image files and " << (fs::path(a.out) / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = RunConfig::load(a.config);
  if (!a.data.empty()) cfg.data.root = a.data;
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.eval_every) cfg.train.eval_every = *a.eval_every;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.init_seed) cfg.init_seed = *a.init_seed;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  cfg.validate();
  if (cfg.data.root.empty()) throw ValidationError("no dataset root: set data.root in the config or pass --data");

  const DatasetManifest manifest = DatasetManifest::load(cfg.data.root);
  manifest.check_files();
  fs::create_directories(a.out);
  cfg.train.checkpoint_path = fs::path(a.out) / "model.ckpt";

  SegmentationModel model(cfg.model, cfg.init_seed);
  std::ofstream log(fs::path(a.out) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw ValidationError("cannot write training log under " + a.out);
  const TrainResult result = train(model, manifest, cfg.train, &log);
  const LogRecord& last = result.log.back();
  out << "trained " << result.log.size() << " steps, final loss " << last.loss;
  if (last.pixel_accuracy) out << ", pixel accuracy " << *last.pixel_accuracy << ", mIoU " << *last.mean_iou;
  out << "\ncheckpoint " << cfg.train.checkpoint_path.string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunConfig cfg = RunConfig::load(a.config);
  if (!a.data.empty()) cfg.data.root = a.data;
  if (cfg.data.root.empty()) throw ValidationError("no dataset root: set data.root in the config or pass --data");
  const DatasetManifest manifest = DatasetManifest::load(cfg.data.root);

  SegmentationModel model(cfg.model, cfg.init_seed);
  load_checkpoint(model, a.checkpoint);
  const ConfusionMatrix cm = evaluate(model, manifest, a.split, a.threads);
  nlohmann::json report = metrics_report(cm);
  report["split"] = a.split;
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw ValidationError("cannot write " + a.out);
    f << report.dump(2) << '\n';
  }
  out << report.dump(2) << '\n';
  return kExitOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto model = model_from_checkpoint(read_checkpoint(a.checkpoint));
  RgbImage raw;
  const TensorF image = load_image_batch(a.image, normalization_for(a.config), &raw);
  const LabelMap labels = argmax_channels(model->predict_logits(image));

  GrayImage gray{raw.width, raw.height, std::vector<std::uint8_t>(static_cast<std::size_t>(raw.width * raw.height))};
  RgbImage color{raw.width, raw.height, std::vector<std::uint8_t>(static_cast<std::size_t>(raw.width * raw.height * 3))};
  for (Index y = 0; y < raw.height; ++y) {
    for (Index x = 0; x < raw.width; ++x) {
      const std::int32_t k = labels.at(0, y, x);
      gray.at(y, x) = static_cast<std::uint8_t>(k);
      const auto c = class_color(k);
      for (int ch = 0; ch < 3; ++ch) color.at(y, x, ch) = c[static_cast<std::size_t>(ch)];
    }
  }
  write_pgm(a.out, gray);
  if (!a.color.empty()) write_ppm(a.color, color);
  out << "wrote " << a.out << (a.color.empty() ? "" : " and " + a.color) << '\n';
  return kExitOk;
}

int cmd_dump_features(const DumpArgs& a, std::ostream& out) {
  const auto model = model_from_checkpoint(read_checkpoint(a.checkpoint));
  const TensorF image = load_image_batch(a.image, normalization_for(a.config));
  for (const auto& path : dump_feature_maps(*model, image, a.out)) out << path.string() << '\n';
  return kExitOk;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  if (a.format != "table" && a.format != "json") throw ValidationError("--format must be table or json");
  const RunConfig cfg = RunConfig::load(a.config);
  const std::string name_a = fs::path(a.config).stem().string();
  nlohmann::json doc;
  std::string table;
  const CostReport ra = analyze(cfg.model, a.input_size, a.input_size, name_a);
  doc["reports"].push_back(to_json(ra));
  table += format_table(ra);
  if (!a.compare.empty()) {
    const RunConfig other = RunConfig::load(a.compare);
    const std::string name_b = fs::path(a.compare).stem().string();
    const CostReport rb = analyze(other.model, a.input_size, a.input_size, name_b);
    const CostRatios ratios = compare(cfg.model, other.model, a.input_size, a.input_size, name_a, name_b);
    doc["reports"].push_back(to_json(rb));
    doc["comparison"] = to_json(ratios);
    table += '\n' + format_table(rb) + '\n' + format_table(ratios);
  }
  if (!a.json_out.empty()) {
    std::ofstream f(a.json_out, std::ios::trunc);
    if (!f) throw ValidationError("cannot write " + a.json_out);
    f << doc.dump(2) << '\n';
  }
  out << (a.format == "json" ? doc.dump(2) + "\n" : table);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frozen-encoder / reverse-HRNet segmentation toolkit", "rhrn"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic shapes corpus");
  generate->add_option("--seed", gen.options.seed, "Generator seed")->required();
  generate->add_option("--count", gen.options.count, "Training images")->required();
  generate->add_option("--size", gen.options.size, "Image side, multiple of 32")->required();
  generate->add_option("--classes", gen.options.num_classes, "Class count including background")->required();
  generate->add_option("--val-count", gen.options.val_count, "Validation images");
  generate->add_option("--test-count", gen.options.test_count, "Test images");
  generate->add_option("--out", gen.out, "Output root")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the decoder with the encoder frozen");
  train_cmd->add_option("--config", tr.config, "Run config JSON")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for model.ckpt and train_log.jsonl")->required();
  train_cmd->add_option("--data", tr.data, "Dataset root (overrides data.root)");
  train_cmd->add_option("--steps", tr.steps);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--eval-every", tr.eval_every);
  train_cmd->add_option("--seed", tr.seed, "Shuffle seed");
  train_cmd->add_option("--init-seed", tr.init_seed, "Parameter initialization seed");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Pixel accuracy and mIoU on a split");
  eval_cmd->add_option("--config", ev.config, "Run config JSON")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--split", ev.split, "train, val or test");
  eval_cmd->add_option("--data", ev.data, "Dataset root (overrides data.root)");
  eval_cmd->add_option("--threads", ev.threads, "Per-image evaluation workers");
  eval_cmd->add_option("--out", ev.out, "Also write the report here");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Label map for one PPM image");
  predict->add_option("--checkpoint", pr.checkpoint)->required();
  predict->add_option("--image", pr.image, "Input PPM")->required();
  predict->add_option("--out", pr.out, "Output label PGM")->required();
  predict->add_option("--color", pr.color, "Optional palette-colored PPM");
  predict->add_option("--config", pr.config, "Run config (input normalization from its dataset)");

  DumpArgs du;
  auto* dump = app.add_subcommand("dump-features", "Per-stride adapter feature maps as PGM");
  dump->add_option("--checkpoint", du.checkpoint)->required();
  dump->add_option("--image", du.image, "Input PPM")->required();
  dump->add_option("--out", du.out, "Output directory")->required();
  dump->add_option("--config", du.config, "Run config (input normalization from its dataset)");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Parameter, MAC and memory cost model");
  analyze_cmd->add_option("--config", an.config, "Run config JSON")->required();
  analyze_cmd->add_option("--compare", an.compare, "Second config; ratios are other / config");
  analyze_cmd->add_option("--input-size", an.input_size, "Square input side");
  analyze_cmd->add_option("--format", an.format, "table or json");
  analyze_cmd->add_option("--json", an.json_out, "Also write the JSON report here");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (predict->parsed()) return cmd_predict(pr, out);
    if (dump->parsed()) return cmd_dump_features(du, out);
    if (analyze_cmd->parsed()) return cmd_analyze(an, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IncompatibleArtifact& e) {
    err << "incompatible: " << e.what() << '\n';
    return kExitIncompatible;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace rhrn
