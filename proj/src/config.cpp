#include "rhrn/config.hpp"

#include <fstream>

#include <json.hpp>

namespace rhrn {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw ValidationError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::parse(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"model", "init_seed", "train", "data"}, "config");
  RunConfig c;
  if (j.contains("model")) {
    ArchitectureSpec spec = ArchitectureSpec::standard(3);
    from_json(j.at("model"), spec);
    c.model = spec;
  }
  read_opt(j, "init_seed", c.init_seed, "config");
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"learning_rate", "momentum", "weight_decay", "steps", "batch_size", "seed", "eval_every",
                    "train_split", "eval_split"},
                   "train");
    read_opt(t, "learning_rate", c.train.learning_rate, "train");
    read_opt(t, "momentum", c.train.momentum, "train");
    read_opt(t, "weight_decay", c.train.weight_decay, "train");
    read_opt(t, "steps", c.train.steps, "train");
    read_opt(t, "batch_size", c.train.batch_size, "train");
    read_opt(t, "seed", c.train.seed, "train");
    read_opt(t, "eval_every", c.train.eval_every, "train");
    read_opt(t, "train_split", c.train.train_split, "train");
    read_opt(t, "eval_split", c.train.eval_split, "train");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"root"}, "data");
    std::string root;
    read_opt(d, "root", root, "data");
    if (!root.empty()) {
      c.data.root = root;
      if (c.data.root.is_relative() && !base_dir.empty()) c.data.root = base_dir / c.data.root;
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return parse(j, path.parent_path());
}

json RunConfig::to_json() const {
  json model_json = model;
  return {{"model", model_json},
          {"init_seed", init_seed},
          {"train",
           {{"learning_rate", train.learning_rate},
            {"momentum", train.momentum},
            {"weight_decay", train.weight_decay},
            {"steps", train.steps},
            {"batch_size", train.batch_size},
            {"seed", train.seed},
            {"eval_every", train.eval_every},
            {"train_split", train.train_split},
            {"eval_split", train.eval_split}}},
          {"data", {{"root", data.root.string()}}}};
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

}  // namespace rhrn
