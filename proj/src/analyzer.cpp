#include "rhrn/analyzer.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace rhrn {
namespace {

constexpr std::int64_t kBytesPerElement = 4;

struct Activation {
  Index channels = 0, height = 0, width = 0;
  Index elements() const { return channels * height * width; }
};

// Operator graph built in execution order. Node ids index `nodes_`.
class CostGraph {
 public:
  struct Node {
    std::size_t module;
    Activation out;
    std::vector<int> inputs;
    bool taped;
  };

  explicit CostGraph(bool freeze_backbone) : freeze_backbone_(freeze_backbone) {}

  void enter(const std::string& module, bool backbone) {
    auto it = std::find_if(modules_.begin(), modules_.end(), [&](const ModuleCost& m) { return m.name == module; });
    if (it == modules_.end()) {
      modules_.push_back(ModuleCost{module});
      current_ = modules_.size() - 1;
    } else {
      current_ = static_cast<std::size_t>(it - modules_.begin());
    }
    in_backbone_ = backbone;
  }

  int input(Activation a) {
    image_ = a;
    return -1;
  }

  const Activation& shape(int id) const { return id < 0 ? image_ : nodes_[static_cast<std::size_t>(id)].out; }

  int conv(int x, Index cout, Index k, int stride, bool bias) {
    const Activation& in = shape(x);
    const int pad = static_cast<int>(k / 2);
    Activation out{cout, (in.height + 2 * pad - k) / stride + 1, (in.width + 2 * pad - k) / stride + 1};
    const std::int64_t weights = cout * in.channels * k * k;
    add_params(weights + (bias ? cout : 0), trainable_weights());
    modules_[current_].macs += weights * out.height * out.width;
    return push(out, {x});
  }

  int norm(int x) {
    const Index c = shape(x).channels;
    add_params(2 * c, trainable_weights());
    add_params(2 * c, false);
    return push(shape(x), {x});
  }

  int relu(int x) { return push(shape(x), {x}); }
  int add(int a, int b) { return push(shape(a), {a, b}); }

  int resize(int x, Index h, Index w) {
    const Activation& in = shape(x);
    if (in.height == h && in.width == w) return x;
    Activation out{in.channels, h, w};
    modules_[current_].macs += 4 * out.elements();
    return push(out, {x});
  }

  void finish(CostReport& report) const {
    // Liveness: an output dies right after its last consumer runs.
    std::vector<std::size_t> last_use(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      last_use[i] = std::max(last_use[i], i);
      for (int p : nodes_[i].inputs)
        if (p >= 0) last_use[static_cast<std::size_t>(p)] = std::max(last_use[static_cast<std::size_t>(p)], i);
    }
    for (int out : outputs_) last_use[static_cast<std::size_t>(out)] = nodes_.size();
    std::int64_t live = 0, peak = 0;
    std::vector<std::vector<std::size_t>> dying(nodes_.size() + 1);
    for (std::size_t i = 0; i < nodes_.size(); ++i) dying[last_use[i]].push_back(i);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      live += nodes_[i].out.elements() * kBytesPerElement;
      peak = std::max(peak, live);
      for (std::size_t d : dying[i]) live -= nodes_[d].out.elements() * kBytesPerElement;
    }

    // Retained for backward: taped nodes and the untaped values they read.
    std::vector<char> retained(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].taped) continue;
      retained[i] = 1;
      for (int p : nodes_[i].inputs)
        if (p >= 0) retained[static_cast<std::size_t>(p)] = 1;
    }
    std::vector<ModuleCost> modules = modules_;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (retained[i]) modules[nodes_[i].module].training_activation_bytes += nodes_[i].out.elements() * kBytesPerElement;
    }

    report.modules = modules;
    report.activation_bytes = peak;
    for (const auto& m : modules) {
      report.total_params += m.params;
      report.trainable_params += m.trainable_params;
      report.macs += m.macs;
      report.training_activation_bytes += m.training_activation_bytes;
    }
    report.frozen_params = report.total_params - report.trainable_params;
    report.param_bytes = report.total_params * kBytesPerElement;
    report.training_memory_bytes =
        report.training_activation_bytes + report.param_bytes + 2 * report.trainable_params * kBytesPerElement;
  }

  void mark_output(int id) { outputs_.push_back(id); }

 private:
  bool trainable_weights() const { return !(in_backbone_ && freeze_backbone_); }

  void add_params(std::int64_t n, bool trainable) {
    modules_[current_].params += n;
    if (trainable) modules_[current_].trainable_params += n;
  }

  int push(Activation out, std::vector<int> inputs) {
    nodes_.push_back(Node{current_, out, std::move(inputs), trainable_weights()});
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool freeze_backbone_;
  bool in_backbone_ = false;
  std::size_t current_ = 0;
  Activation image_;
  std::vector<Node> nodes_;
  std::vector<ModuleCost> modules_;
  std::vector<int> outputs_;
};

int basic_block(CostGraph& g, int x, Index out, int stride) {
  const bool project = stride != 1 || g.shape(x).channels != out;
  int h = g.relu(g.norm(g.conv(x, out, 3, stride, false)));
  h = g.norm(g.conv(h, out, 3, 1, false));
  const int skip = project ? g.norm(g.conv(x, out, 1, stride, false)) : x;
  return g.relu(g.add(h, skip));
}

int bottleneck_block(CostGraph& g, int x, Index out, int stride) {
  const bool project = stride != 1 || g.shape(x).channels != out;
  const Index mid = out / 4;
  int h = g.relu(g.norm(g.conv(x, mid, 1, 1, false)));
  h = g.relu(g.norm(g.conv(h, mid, 3, stride, false)));
  h = g.norm(g.conv(h, out, 1, 1, false));
  const int skip = project ? g.norm(g.conv(x, out, 1, stride, false)) : x;
  return g.relu(g.add(h, skip));
}

std::vector<int> fuse(CostGraph& g, const std::vector<int>& streams, const std::vector<Index>& widths) {
  std::vector<int> out;
  for (std::size_t to = 0; to < streams.size(); ++to) {
    const Activation target = g.shape(streams[to]);
    int acc = -2;
    for (std::size_t from = 0; from < streams.size(); ++from) {
      int term = streams[from];
      if (from > to) {
        term = g.resize(g.conv(term, widths[to], 1, 1, true), target.height, target.width);
      } else if (from < to) {
        for (std::size_t k = 0; k < to - from; ++k) {
          const bool last = k + 1 == to - from;
          term = g.conv(term, last ? widths[to] : widths[from], 3, 2, last);
          if (!last) term = g.relu(g.norm(term));
        }
      }
      acc = acc == -2 ? term : g.add(acc, term);
    }
    out.push_back(g.relu(acc));
  }
  return out;
}

}  // namespace

CostReport analyze(const ArchitectureSpec& spec, Index input_height, Index input_width, std::string name) {
  spec.validate();
  require_divisible_input(input_height, input_width);
  CostGraph g(spec.freeze_backbone);
  const BackboneSpec& b = spec.backbone;

  g.enter("backbone.stem", true);
  int x = g.input({3, input_height, input_width});
  x = g.relu(g.norm(g.conv(x, b.stem_channels, 3, spec.variant_extra_stream ? 1 : 2, false)));
  x = g.relu(g.norm(g.conv(x, b.stem_channels, 3, 2, false)));
  std::vector<int> pyramid;
  if (spec.variant_extra_stream) pyramid.push_back(x);
  for (std::size_t s = 0; s < 4; ++s) {
    g.enter("backbone.stage" + std::to_string(s), true);
    for (Index k = 0; k < b.blocks_per_stage[s]; ++k) {
      const int stride = (k == 0 && (s > 0 || spec.variant_extra_stream)) ? 2 : 1;
      x = b.bottleneck ? bottleneck_block(g, x, b.stage_channels[s], stride) : basic_block(g, x, b.stage_channels[s], stride);
    }
    pyramid.push_back(x);
  }

  const auto& widths = spec.decoder.stream_widths;
  g.enter("decoder.adapters", false);
  std::vector<int> streams;
  for (std::size_t i = 0; i < pyramid.size(); ++i) streams.push_back(g.conv(pyramid[i], widths[i], 1, 1, true));

  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::vector<Index> active(widths.begin(), widths.end() - static_cast<std::ptrdiff_t>(s));
    g.enter("decoder.stage" + std::to_string(s), false);
    for (auto& stream : streams) {
      for (Index k = 0; k < spec.decoder.blocks_per_stage[s]; ++k) stream = basic_block(g, stream, g.shape(stream).channels, 1);
    }
    streams = fuse(g, streams, active);
    if (streams.size() > 1) {
      g.enter("decoder.merge" + std::to_string(s), false);
      const int low = streams.back();
      streams.pop_back();
      const Activation target = g.shape(streams.back());
      const int lifted = g.resize(g.conv(low, active[active.size() - 2], 1, 1, true), target.height, target.width);
      streams.back() = g.add(streams.back(), lifted);
    }
  }
  g.enter("decoder.head", false);
  const int logits = g.resize(g.conv(streams.front(), spec.num_classes, 1, 1, true), input_height, input_width);
  g.mark_output(logits);

  CostReport report;
  report.name = name.empty() ? (spec.variant_extra_stream ? "variant" : "standard") : std::move(name);
  report.input_height = input_height;
  report.input_width = input_width;
  g.finish(report);
  return report;
}

CostRatios compare(const ArchitectureSpec& a, const ArchitectureSpec& b, Index input_height, Index input_width,
                   std::string name_a, std::string name_b) {
  const CostReport ra = analyze(a, input_height, input_width, name_a);
  const CostReport rb = analyze(b, input_height, input_width, name_b);
  auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? (num == 0 ? 1.0 : 0.0) : static_cast<double>(num) / static_cast<double>(den);
  };
  CostRatios r;
  r.name_a = ra.name;
  r.name_b = rb.name;
  r.params = ratio(rb.total_params, ra.total_params);
  r.trainable_params = ratio(rb.trainable_params, ra.trainable_params);
  r.macs = ratio(rb.macs, ra.macs);
  r.activation_bytes = ratio(rb.activation_bytes, ra.activation_bytes);
  r.training_activation_bytes = ratio(rb.training_activation_bytes, ra.training_activation_bytes);
  r.training_memory_bytes = ratio(rb.training_memory_bytes, ra.training_memory_bytes);
  r.variant_blocks_reduced = b.variant_extra_stream && !a.variant_extra_stream &&
                             b.total_decoder_blocks() < a.total_decoder_blocks();
  return r;
}

nlohmann::json to_json(const CostReport& report) {
  nlohmann::json modules = nlohmann::json::array();
  for (const auto& m : report.modules) {
    modules.push_back({{"name", m.name},
                       {"params", m.params},
                       {"trainable_params", m.trainable_params},
                       {"macs", m.macs},
                       {"training_activation_bytes", m.training_activation_bytes}});
  }
  return {{"name", report.name},
          {"input_size", {report.input_height, report.input_width}},
          {"total_params", report.total_params},
          {"trainable_params", report.trainable_params},
          {"frozen_params", report.frozen_params},
          {"macs", report.macs},
          {"activation_bytes", report.activation_bytes},
          {"training_activation_bytes", report.training_activation_bytes},
          {"param_bytes", report.param_bytes},
          {"training_memory_bytes", report.training_memory_bytes},
          {"modules", modules}};
}

nlohmann::json to_json(const CostRatios& r) {
  return {{"a", r.name_a},
          {"b", r.name_b},
          {"ratio_b_over_a",
           {{"params", r.params},
            {"trainable_params", r.trainable_params},
            {"macs", r.macs},
            {"activation_bytes", r.activation_bytes},
            {"training_activation_bytes", r.training_activation_bytes},
            {"training_memory_bytes", r.training_memory_bytes}}},
          {"variant_blocks_reduced", r.variant_blocks_reduced}};
}

std::string format_table(const CostReport& report) {
  std::ostringstream out;
  out << report.name << " @ " << report.input_height << "x" << report.input_width << '\n';
  out << std::left << std::setw(20) << "module" << std::right << std::setw(14) << "params" << std::setw(14)
      << "trainable" << std::setw(16) << "MACs" << std::setw(16) << "train act B" << '\n';
  for (const auto& m : report.modules) {
    out << std::left << std::setw(20) << m.name << std::right << std::setw(14) << m.params << std::setw(14)
        << m.trainable_params << std::setw(16) << m.macs << std::setw(16) << m.training_activation_bytes << '\n';
  }
  out << std::left << std::setw(20) << "total" << std::right << std::setw(14) << report.total_params << std::setw(14)
      << report.trainable_params << std::setw(16) << report.macs << std::setw(16) << report.training_activation_bytes
      << '\n';
  out << "peak inference activations: " << report.activation_bytes << " B\n";
  out << "training memory:            " << report.training_memory_bytes << " B\n";
  return out.str();
}

std::string format_table(const CostRatios& r) {
  std::ostringstream out;
  out << "ratio " << r.name_b << " / " << r.name_a << '\n';
  out << std::fixed << std::setprecision(4);
  const std::pair<const char*, double> rows[] = {
      {"params", r.params},
      {"trainable_params", r.trainable_params},
      {"macs", r.macs},
      {"activation_bytes", r.activation_bytes},
      {"training_activation_bytes", r.training_activation_bytes},
      {"training_memory_bytes", r.training_memory_bytes},
  };
  for (const auto& [label, value] : rows) out << std::left << std::setw(28) << label << std::right << value << '\n';
  return out.str();
}

}  // namespace rhrn
