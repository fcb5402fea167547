#include "rhrn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

namespace rhrn {
namespace {

constexpr char kMagic[4] = {'R', 'H', 'R', 'N'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get(const char* what) {
    T value;
    take(&value, sizeof(T), what);
    return value;
  }
  void take(void* out, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ValidationError(source_ + ": truncated while reading " + what + " at byte offset " + std::to_string(pos_));
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string join(const std::vector<std::string>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) out << (i ? "; " : "") << items[i];
  return out.str();
}

// Checks that `entries` covers exactly the table parameters accepted by
// `select`, with matching shapes. Collects every problem before throwing.
template <typename Select>
void check_entries(const ParamTableF& table, const Checkpoint& ckpt, Select select, const std::string& what) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& e : ckpt.entries) {
    if (!select(e.name)) continue;
    if (!seen.insert(e.name).second) {
      problems.push_back("duplicate entry " + e.name);
      continue;
    }
    const ParamF* p = table.find(e.name);
    if (p == nullptr) {
      problems.push_back("unexpected entry " + e.name);
    } else if (p->shape() != e.value.shape()) {
      problems.push_back(e.name + " has shape " + e.value.shape().str() + ", model expects " + p->shape().str());
    }
  }
  for (const auto& p : table) {
    if (select(p->name) && !seen.count(p->name)) problems.push_back("missing entry " + p->name);
  }
  if (!problems.empty()) throw IncompatibleArtifact(what + " does not match the model: " + join(problems));
}

}  // namespace

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

Checkpoint make_checkpoint(const SegmentationModel& model) {
  Checkpoint ckpt;
  ckpt.fingerprint = model.fingerprint();
  for (const auto& p : model.parameters()) ckpt.entries.push_back({p->name, p->frozen, *p->value});
  return ckpt;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(checkpoint.version);
  w.put<std::uint64_t>(checkpoint.fingerprint);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.entries.size()));
  for (const auto& e : checkpoint.entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("parameter name too long for checkpoint: " + e.name);
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(e.frozen ? 1 : 0);
    const Shape& s = e.value.shape();
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.rank()));
    for (Index d : s.dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(e.value.data(), static_cast<std::size_t>(e.value.numel()) * sizeof(float));
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader r(bytes, source);
  char magic[4];
  r.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError(source + ": bad magic, not an RHRN checkpoint");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) {
    throw ValidationError(source + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.fingerprint = r.get<std::uint64_t>("fingerprint");
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>("name length");
    e.name.resize(len);
    r.take(e.name.data(), len, "name");
    const auto frozen = r.get<std::uint8_t>("frozen flag");
    if (frozen > 1) throw ValidationError(source + ": frozen flag of " + e.name + " is not 0/1");
    e.frozen = frozen == 1;
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank < 1 || rank > 4) throw ValidationError(source + ": entry " + e.name + " has rank " + std::to_string(rank));
    std::vector<Index> dims;
    for (int d = 0; d < rank; ++d) dims.push_back(r.get<std::uint32_t>("dimension"));
    Shape shape(dims);
    if (static_cast<std::size_t>(shape.numel()) > r.remaining() / sizeof(float)) {
      throw ValidationError(source + ": truncated payload for " + e.name + " at byte offset " +
                            std::to_string(r.offset()));
    }
    e.value = TensorF(shape);
    r.take(e.value.data(), static_cast<std::size_t>(shape.numel()) * sizeof(float), "payload");
    ckpt.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw ValidationError(source + ": " + std::to_string(r.remaining()) + " trailing bytes after the last entry");
  }
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void apply_checkpoint(SegmentationModel& model, const Checkpoint& checkpoint) {
  if (checkpoint.fingerprint != model.fingerprint()) {
    std::ostringstream msg;
    msg << "checkpoint architecture fingerprint " << std::hex << checkpoint.fingerprint
        << " does not match model fingerprint " << model.fingerprint();
    throw IncompatibleArtifact(msg.str());
  }
  check_entries(model.parameters(), checkpoint, [](const std::string&) { return true; }, "checkpoint");
  for (const auto& e : checkpoint.entries) {
    ParamF* p = model.parameters().find(e.name);
    *p->value = e.value;
    p->frozen = e.frozen;
  }
}

void save_checkpoint(const SegmentationModel& model, const std::filesystem::path& path) {
  write_checkpoint(path, make_checkpoint(model));
}

void load_checkpoint(SegmentationModel& model, const std::filesystem::path& path) {
  apply_checkpoint(model, read_checkpoint(path));
}

ArchitectureSpec infer_architecture(const Checkpoint& checkpoint) {
  auto shape_of = [&](const std::string& name) -> const Shape& {
    const CheckpointEntry* e = checkpoint.find(name);
    if (e == nullptr) throw IncompatibleArtifact("checkpoint lacks " + name + "; cannot infer the architecture");
    return e->value.shape();
  };
  auto count_prefixed = [&](const std::string& prefix, const std::string& suffix) {
    Index n = 0;
    while (checkpoint.find(prefix + std::to_string(n) + suffix) != nullptr) ++n;
    return n;
  };

  ArchitectureSpec spec;
  spec.variant_extra_stream = checkpoint.find("decoder.adapter4.weight") != nullptr;
  const Index levels = spec.pyramid_levels();
  spec.num_classes = shape_of("decoder.head.weight")[0];
  spec.backbone.stem_channels = shape_of("backbone.stem.conv1.weight")[0];
  spec.backbone.bottleneck = checkpoint.find("backbone.stage0.block0.conv3.weight") != nullptr;
  spec.decoder.stream_widths.clear();
  spec.decoder.blocks_per_stage.clear();
  const Index first_stage_level = spec.variant_extra_stream ? 1 : 0;
  for (Index i = 0; i < levels; ++i) {
    const Shape& a = shape_of("decoder.adapter" + std::to_string(i) + ".weight");
    spec.decoder.stream_widths.push_back(a[0]);
    if (i >= first_stage_level) spec.backbone.stage_channels[static_cast<std::size_t>(i - first_stage_level)] = a[1];
    spec.decoder.blocks_per_stage.push_back(
        count_prefixed("decoder.stage" + std::to_string(i) + ".stream0.block", ".conv1.weight"));
  }
  for (std::size_t s = 0; s < 4; ++s) {
    spec.backbone.blocks_per_stage[s] = count_prefixed("backbone.stage" + std::to_string(s) + ".block", ".conv1.weight");
  }
  spec.validate();
  return spec;
}

void load_pretrained(SegmentationModel& model, const Checkpoint& checkpoint) {
  auto is_backbone = [](const std::string& name) { return name.rfind("backbone.", 0) == 0; };
  check_entries(model.parameters(), checkpoint, is_backbone, "pretrained encoder table");
  for (const auto& e : checkpoint.entries) {
    if (!is_backbone(e.name)) continue;
    ParamF* p = model.parameters().find(e.name);
    *p->value = e.value;
    p->frozen = e.frozen;
  }
}

}  // namespace rhrn
