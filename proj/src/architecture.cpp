#include "rhrn/architecture.hpp"

#include <json.hpp>

namespace rhrn {

using nlohmann::json;

ArchitectureSpec ArchitectureSpec::standard(Index num_classes) {
  ArchitectureSpec spec;
  spec.num_classes = num_classes;
  return spec;
}

ArchitectureSpec ArchitectureSpec::variant(Index num_classes) {
  ArchitectureSpec spec;
  spec.num_classes = num_classes;
  spec.variant_extra_stream = true;
  spec.decoder.stream_widths = {24, 48, 96, 192, 384};
  spec.decoder.blocks_per_stage = {1, 1, 1, 1, 1};
  return spec;
}

ArchitectureSpec ArchitectureSpec::resnet50(Index num_classes) {
  ArchitectureSpec spec;
  spec.num_classes = num_classes;
  spec.backbone.stem_channels = 64;
  spec.backbone.stage_channels = {256, 512, 1024, 2048};
  spec.backbone.blocks_per_stage = {3, 4, 6, 3};
  spec.backbone.bottleneck = true;
  return spec;
}

std::vector<int> ArchitectureSpec::pyramid_strides() const {
  std::vector<int> strides;
  if (variant_extra_stream) strides.push_back(2);
  for (int s : {4, 8, 16, 32}) strides.push_back(s);
  return strides;
}

std::vector<Index> ArchitectureSpec::pyramid_channels() const {
  std::vector<Index> channels;
  if (variant_extra_stream) channels.push_back(backbone.stem_channels);
  for (Index c : backbone.stage_channels) channels.push_back(c);
  return channels;
}

Index ArchitectureSpec::total_decoder_blocks() const {
  Index total = 0;
  for (Index b : decoder.blocks_per_stage) total += b;
  return total;
}

void ArchitectureSpec::validate() const {
  auto positive = [](Index v, const std::string& what) {
    if (v <= 0) throw ValidationError(what + " must be positive, got " + std::to_string(v));
  };
  positive(num_classes, "num_classes");
  positive(backbone.stem_channels, "backbone.stem_channels");
  for (int s = 0; s < 4; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    positive(backbone.stage_channels[idx], "backbone.stage_channels[" + std::to_string(s) + "]");
    positive(backbone.blocks_per_stage[idx], "backbone.blocks_per_stage[" + std::to_string(s) + "]");
    if (backbone.bottleneck && backbone.stage_channels[idx] % 4 != 0) {
      throw ValidationError("bottleneck stage widths must be multiples of 4, stage " +
                            std::to_string(s) + " has " + std::to_string(backbone.stage_channels[idx]));
    }
  }
  const auto levels = static_cast<std::size_t>(pyramid_levels());
  if (decoder.stream_widths.size() != levels) {
    throw ValidationError("decoder.stream_widths needs " + std::to_string(levels) +
                          " entries (one per pyramid level), got " +
                          std::to_string(decoder.stream_widths.size()));
  }
  if (decoder.blocks_per_stage.size() != levels) {
    throw ValidationError("decoder.blocks_per_stage needs " + std::to_string(levels) +
                          " entries (streams - 1 merge stages plus the final stage), got " +
                          std::to_string(decoder.blocks_per_stage.size()));
  }
  for (std::size_t i = 0; i < levels; ++i) {
    positive(decoder.stream_widths[i], "decoder.stream_widths[" + std::to_string(i) + "]");
    positive(decoder.blocks_per_stage[i], "decoder.blocks_per_stage[" + std::to_string(i) + "]");
  }
}

void to_json(json& j, const ArchitectureSpec& spec) {
  j = json{
      {"num_classes", spec.num_classes},
      {"variant_extra_stream", spec.variant_extra_stream},
      {"freeze_backbone", spec.freeze_backbone},
      {"backbone",
       {{"stem_channels", spec.backbone.stem_channels},
        {"stage_channels", spec.backbone.stage_channels},
        {"blocks_per_stage", spec.backbone.blocks_per_stage},
        {"bottleneck", spec.backbone.bottleneck}}},
      {"decoder",
       {{"stream_widths", spec.decoder.stream_widths},
        {"blocks_per_stage", spec.decoder.blocks_per_stage}}},
  };
}

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

void from_json(const json& j, ArchitectureSpec& spec) {
  reject_unknown(j, {"num_classes", "variant_extra_stream", "freeze_backbone", "backbone", "decoder"}, "model");
  read_opt(j, "num_classes", spec.num_classes, "model");
  read_opt(j, "freeze_backbone", spec.freeze_backbone, "model");
  if (j.contains("variant_extra_stream")) {
    read_opt(j, "variant_extra_stream", spec.variant_extra_stream, "model");
    // Switching to the variant without explicit decoder settings picks the variant defaults.
    if (spec.variant_extra_stream && !j.contains("decoder")) spec.decoder = ArchitectureSpec::variant(1).decoder;
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    reject_unknown(b, {"stem_channels", "stage_channels", "blocks_per_stage", "bottleneck"}, "model.backbone");
    read_opt(b, "stem_channels", spec.backbone.stem_channels, "model.backbone");
    read_opt(b, "stage_channels", spec.backbone.stage_channels, "model.backbone");
    read_opt(b, "blocks_per_stage", spec.backbone.blocks_per_stage, "model.backbone");
    read_opt(b, "bottleneck", spec.backbone.bottleneck, "model.backbone");
  }
  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    reject_unknown(d, {"stream_widths", "blocks_per_stage"}, "model.decoder");
    read_opt(d, "stream_widths", spec.decoder.stream_widths, "model.decoder");
    read_opt(d, "blocks_per_stage", spec.decoder.blocks_per_stage, "model.decoder");
  }
}

std::string canonical_string(const ArchitectureSpec& spec) {
  json j = spec;
  // Freezing is a training policy carried per entry in the checkpoint, not topology.
  j.erase("freeze_backbone");
  return j.dump();
}

std::uint64_t fingerprint(const ArchitectureSpec& spec) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical_string(spec)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void require_divisible_input(Index height, Index width) {
  if (height % kInputDivisor != 0 || width % kInputDivisor != 0) {
    throw ValidationError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be divisible by " + std::to_string(kInputDivisor));
  }
}

}  // namespace rhrn
