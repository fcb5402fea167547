#include "rhrn/decoder.hpp"

namespace rhrn {
namespace {

// Convs whose output is summed rather than rectified use unit gain.
constexpr double kLinearGain = 1.0;

void check_stream_ladder(const StreamSet& streams, const char* op) {
  for (std::size_t i = 0; i + 1 < streams.size(); ++i) {
    const Shape& hi = streams[i].shape();
    const Shape& lo = streams[i + 1].shape();
    if (hi.rank() != 4 || lo.rank() != 4 || hi[0] != lo[0] || lo[2] != (hi[2] + 1) / 2 ||
        lo[3] != (hi[3] + 1) / 2) {
      throw ValidationError(std::string(op) + ": stream " + std::to_string(i + 1) + " " + lo.str() +
                            " is not half the resolution of stream " + std::to_string(i) + " " + hi.str());
    }
  }
}

}  // namespace

AdapterBank::AdapterBank(const std::vector<Index>& level_channels, const std::vector<Index>& widths,
                         ParamTableF& table, Rng& rng) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    adapters_.push_back(Conv2d::create(table, "decoder.adapter" + std::to_string(i), level_channels[i],
                                       widths[i], 1, 1, true, false, rng, kLinearGain));
  }
}

StreamSet AdapterBank::operator()(const FeaturePyramid& pyramid, const Pass& pass) const {
  if (pyramid.levels.size() != adapters_.size()) {
    throw ValidationError("adapt: pyramid has " + std::to_string(pyramid.levels.size()) +
                          " levels but the adapter bank expects " + std::to_string(adapters_.size()));
  }
  StreamSet streams;
  for (std::size_t i = 0; i < adapters_.size(); ++i) {
    const VarF& level = pyramid.levels[i].features;
    if (level.shape()[1] != adapters_[i].in_channels()) {
      throw ValidationError("adapt: level " + std::to_string(i) + " (stride " +
                            std::to_string(pyramid.levels[i].stride) + ") has " +
                            std::to_string(level.shape()[1]) + " channels, adapter expects " +
                            std::to_string(adapters_[i].in_channels()));
    }
    streams.push_back(adapters_[i](level, pass));
  }
  return streams;
}

FusionUnit::FusionUnit(const std::vector<Index>& widths, const std::string& name, ParamTableF& table, Rng& rng)
    : widths_(widths) {
  const std::size_t n = widths.size();
  paths_.resize(n);
  for (std::size_t to = 0; to < n; ++to) {
    paths_[to].resize(n);
    for (std::size_t from = 0; from < n; ++from) {
      StreamTransform& t = paths_[to][from];
      const std::string base = name + "." + std::to_string(from) + "to" + std::to_string(to);
      if (from == to) {
        t.kind = StreamTransform::Kind::Identity;
      } else if (from > to) {
        t.kind = StreamTransform::Kind::Up;
        t.up = Conv2d::create(table, base + ".up", widths[from], widths[to], 1, 1, true, false, rng, kLinearGain);
      } else {
        t.kind = StreamTransform::Kind::Down;
        const std::size_t steps = to - from;
        for (std::size_t k = 0; k < steps; ++k) {
          DownStep step;
          const std::string sname = base + ".down" + std::to_string(k);
          const bool last = k + 1 == steps;
          step.conv = Conv2d::create(table, sname + ".conv", widths[from], last ? widths[to] : widths[from], 3, 2,
                                     last, false, rng, last ? kLinearGain : 2.0);
          if (!last) {
            step.has_norm = true;
            step.norm = BatchNorm2d::create(table, sname + ".bn", widths[from], false);
          }
          t.down.push_back(step);
        }
      }
    }
  }
}

StreamSet FusionUnit::operator()(const StreamSet& streams, const Pass& pass) const {
  if (streams.size() != widths_.size()) {
    throw ValidationError("fuse: expected " + std::to_string(widths_.size()) + " streams, got " +
                          std::to_string(streams.size()));
  }
  check_stream_ladder(streams, "fuse");
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (streams[i].shape()[1] != widths_[i]) {
      throw ValidationError("fuse: stream " + std::to_string(i) + " has " + std::to_string(streams[i].shape()[1]) +
                            " channels, expected " + std::to_string(widths_[i]));
    }
  }

  StreamSet out;
  for (std::size_t to = 0; to < streams.size(); ++to) {
    const Shape& target = streams[to].shape();
    VarF acc;
    for (std::size_t from = 0; from < streams.size(); ++from) {
      const StreamTransform& t = paths_[to][from];
      VarF term;
      switch (t.kind) {
        case StreamTransform::Kind::Identity:
          term = streams[from];
          break;
        case StreamTransform::Kind::Up:
          term = bilinear_resize(t.up(streams[from], pass), target[2], target[3]);
          break;
        case StreamTransform::Kind::Down:
          term = streams[from];
          for (const DownStep& step : t.down) {
            term = step.conv(term, pass);
            if (step.has_norm) term = relu(step.norm(term, pass.mode, pass.tape));
          }
          break;
      }
      acc = acc.defined() ? add(acc, term) : term;
    }
    out.push_back(relu(acc));
  }
  return out;
}

DecoderStage::DecoderStage(const std::vector<Index>& widths, Index blocks, const std::string& name,
                           ParamTableF& table, Rng& rng) {
  blocks_.resize(widths.size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    for (Index b = 0; b < blocks; ++b) {
      blocks_[i].push_back(BasicBlock::create(
          table, name + ".stream" + std::to_string(i) + ".block" + std::to_string(b), widths[i], widths[i], 1,
          false, rng, true));
    }
  }
  fusion_ = FusionUnit(widths, name + ".fuse", table, rng);
}

StreamSet DecoderStage::operator()(const StreamSet& streams, const Pass& pass) const {
  if (streams.size() != blocks_.size()) {
    throw ValidationError("decoder_stage: expected " + std::to_string(blocks_.size()) + " streams, got " +
                          std::to_string(streams.size()));
  }
  StreamSet processed;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    VarF x = streams[i];
    for (const BasicBlock& block : blocks_[i]) x = block(x, pass.mode, pass.tape);
    processed.push_back(x);
  }
  return fusion_(processed, pass);
}

MergeUnit::MergeUnit(Index from_width, Index to_width, const std::string& name, ParamTableF& table, Rng& rng)
    : conv_(Conv2d::create(table, name, from_width, to_width, 1, 1, true, false, rng, kLinearGain)) {}

StreamSet MergeUnit::operator()(const StreamSet& streams, const Pass& pass) const {
  if (streams.size() < 2) throw ValidationError("merge_drop_lowest: needs at least 2 streams");
  check_stream_ladder(streams, "merge_drop_lowest");
  StreamSet out(streams.begin(), streams.end() - 1);
  VarF& target = out.back();
  const VarF lifted = bilinear_resize(conv_(streams.back(), pass), target.shape()[2], target.shape()[3]);
  target = add(target, lifted);
  return out;
}

SegmentationHead::SegmentationHead(Index width, Index num_classes, ParamTableF& table, Rng& rng)
    : conv_(Conv2d::create(table, "decoder.head", width, num_classes, 1, 1, true, false, rng, 0.0)) {}

VarF SegmentationHead::operator()(const VarF& stream, Index out_height, Index out_width, const Pass& pass) const {
  return bilinear_resize(conv_(stream, pass), out_height, out_width);
}

Decoder::Decoder(const ArchitectureSpec& spec, ParamTableF& table, Rng& rng) {
  spec.validate();
  const auto& widths = spec.decoder.stream_widths;
  adapters_ = AdapterBank(spec.pyramid_channels(), widths, table, rng);
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::vector<Index> active(widths.begin(), widths.end() - static_cast<std::ptrdiff_t>(s));
    stages_.emplace_back(active, spec.decoder.blocks_per_stage[s], "decoder.stage" + std::to_string(s), table, rng);
    if (active.size() > 1) {
      merges_.emplace_back(active.back(), active[active.size() - 2], "decoder.merge" + std::to_string(s), table, rng);
    }
  }
  head_ = SegmentationHead(widths.front(), spec.num_classes, table, rng);
}

VarF Decoder::operator()(const FeaturePyramid& pyramid, const Pass& pass, ForwardTrace* trace) const {
  StreamSet streams = adapters_(pyramid, pass);
  if (trace != nullptr) trace->adapted = streams;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (trace != nullptr) trace->stream_counts.push_back(streams.size());
    streams = stages_[s](streams, pass);
    if (s < merges_.size()) streams = merges_[s](streams, pass);
  }
  return head_(streams.front(), pyramid.input_height, pyramid.input_width, pass);
}

}  // namespace rhrn
