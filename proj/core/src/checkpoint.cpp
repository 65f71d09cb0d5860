#include "mstl/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include "mstl/errors.hpp"

namespace mstl {

namespace {

constexpr std::string_view kStageNamesByKind[] = {"stl_n", "stl_m", "sstl_m", "finetune"};
constexpr char kMagic[4] = {'M', 'S', 'T', 'L'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  void raw(std::string_view s) { out_.append(s); }
  const std::string& bytes() const { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + name + "' has invalid rank");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = u64();
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw CheckpointError("tensor '" + name + "' has invalid extent");
      count *= d;
    }
    need(count * 8);
    std::vector<double> values(count);
    for (double& v : values) v = f64();
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw IoError("checkpoint is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view stage_name(StageKind s) { return kStageNamesByKind[static_cast<int>(s)]; }

StageKind parse_stage(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kStageNamesByKind[i]) return static_cast<StageKind>(i);
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

void append_stage(std::vector<StageKind>& provenance, StageKind next) {
  if (!provenance.empty() && static_cast<int>(next) <= static_cast<int>(provenance.back())) {
    throw ConfigError("stage " + std::string(stage_name(next)) + " cannot follow " +
                      std::string(stage_name(provenance.back())));
  }
  provenance.push_back(next);
}

Checkpoint make_checkpoint(Model& model, std::vector<StageKind> provenance, std::string rng_state) {
  Checkpoint c;
  c.config = model.config();
  for (Parameter* p : model.parameters()) c.parameters.emplace_back(p->name, p->value);
  for (const NamedBuffer& b : model.buffers()) c.buffers.emplace_back(b.name, *b.tensor);
  c.provenance = std::move(provenance);
  c.rng_state = std::move(rng_state);
  return c;
}

Model restore_model(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, 0);
  std::map<std::string, const Tensor*> blobs;
  for (const auto& [name, t] : checkpoint.parameters) blobs[name] = &t;
  for (const auto& [name, t] : checkpoint.buffers) blobs[name] = &t;
  auto assign = [&](const std::string& name, Tensor& dst) {
    const auto it = blobs.find(name);
    if (it == blobs.end()) throw CheckpointError("checkpoint lacks '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw CheckpointError("shape mismatch for '" + name + "': " + to_string(it->second->shape()) + " vs " +
                            to_string(dst.shape()));
    }
    dst = *it->second;
  };
  for (Parameter* p : model.parameters()) {
    assign(p->name, p->value);
    p->grad = Tensor(p->value.shape(), 0.0);
  }
  for (const NamedBuffer& b : model.buffers()) assign(b.name, *b.tensor);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(checkpoint.config.serialize());
  w.u64(checkpoint.parameters.size());
  for (const auto& [name, t] : checkpoint.parameters) w.tensor(name, t);
  w.u64(checkpoint.buffers.size());
  for (const auto& [name, t] : checkpoint.buffers) w.tensor(name, t);
  w.u64(checkpoint.provenance.size());
  for (StageKind s : checkpoint.provenance) w.str(stage_name(s));
  w.str(checkpoint.rng_state);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));

  if (r.raw(4) != std::string_view(kMagic, 4)) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    c.config = BackboneConfig::parse(r.str());
    c.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid config echo: ") + e.what());
  }
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) c.parameters.push_back(r.tensor());
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) c.buffers.push_back(r.tensor());
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
    try {
      append_stage(c.provenance, parse_stage(r.str()));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("invalid provenance: ") + e.what());
    }
  }
  c.rng_state = r.str();
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after checkpoint");
  return c;
}

}  // namespace mstl
