#include "mstl/backbone.hpp"

#include <algorithm>
#include <sstream>

#include "mstl/errors.hpp"
#include "mstl/ops.hpp"

namespace mstl {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kOneAttn: return "one_attn";
    case Variant::kFiveAttns: return "five_attns";
  }
  return "baseline";
}

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "one_attn") return Variant::kOneAttn;
  if (name == "five_attns") return Variant::kFiveAttns;
  throw ConfigError("unknown network variant '" + std::string(name) + "'");
}

BackboneConfig BackboneConfig::preset(Variant v) {
  BackboneConfig c;
  switch (v) {
    case Variant::kBaseline: break;
    case Variant::kOneAttn: c.attn_plan = {{"res3", 1}}; break;
    case Variant::kFiveAttns: c.attn_plan = {{"res3", 2}, {"res4", 2}, {"res5", 1}}; break;
  }
  return c;
}

void BackboneConfig::validate() const {
  for (const auto& [stage, count] : attn_plan) {
    if (std::find(kStageNames.begin(), kStageNames.end(), stage) == kStageNames.end()) {
      throw ConfigError("attn_plan names unknown stage '" + stage + "'");
    }
    if (count < 0) throw ConfigError("attn_plan count for " + stage + " is negative");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] == 0 || blocks_per_stage[i] == 0) {
      throw ConfigError("stage channels and block counts must be positive");
    }
  }
  if (input_size == 0 || num_classes == 0 || in_channels == 0) {
    throw ConfigError("input_size, num_classes and in_channels must be positive");
  }
}

std::string BackboneConfig::serialize() const {
  std::ostringstream os;
  os << "stage_channels=" << stage_channels[0] << ',' << stage_channels[1] << ',' << stage_channels[2]
     << ',' << stage_channels[3] << ";blocks_per_stage=" << blocks_per_stage[0] << ','
     << blocks_per_stage[1] << ',' << blocks_per_stage[2] << ',' << blocks_per_stage[3] << ";attn_plan=";
  bool first = true;
  for (const auto& [stage, count] : attn_plan) {
    if (!first) os << ',';
    os << stage << ':' << count;
    first = false;
  }
  os << ";input_size=" << input_size << ";num_classes=" << num_classes << ";in_channels=" << in_channels;
  return os.str();
}

namespace {

std::size_t parse_size(std::string_view s) {
  try {
    std::size_t pos = 0;
    const std::string str(s);
    const unsigned long long v = std::stoull(str, &pos);
    if (pos != str.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer, got '" + std::string(s) + "'");
  }
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::array<std::size_t, 4> parse_quad(std::string_view s) {
  const auto parts = split(s, ',');
  if (parts.size() != 4) throw ConfigError("expected four comma-separated values, got '" + std::string(s) + "'");
  return {parse_size(parts[0]), parse_size(parts[1]), parse_size(parts[2]), parse_size(parts[3])};
}

}  // namespace

BackboneConfig BackboneConfig::parse(std::string_view text) {
  BackboneConfig c;
  for (std::string_view field : split(text, ';')) {
    if (field.empty()) continue;
    const std::size_t eq = field.find('=');
    if (eq == std::string_view::npos) throw ConfigError("malformed config field '" + std::string(field) + "'");
    const std::string_view key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "stage_channels") {
      c.stage_channels = parse_quad(value);
    } else if (key == "blocks_per_stage") {
      c.blocks_per_stage = parse_quad(value);
    } else if (key == "attn_plan") {
      c.attn_plan.clear();
      if (value.empty()) continue;
      for (std::string_view entry : split(value, ',')) {
        const std::size_t colon = entry.find(':');
        if (colon == std::string_view::npos) throw ConfigError("malformed attn_plan entry");
        c.attn_plan[std::string(entry.substr(0, colon))] = static_cast<int>(parse_size(entry.substr(colon + 1)));
      }
    } else if (key == "input_size") {
      c.input_size = parse_size(value);
    } else if (key == "num_classes") {
      c.num_classes = parse_size(value);
    } else if (key == "in_channels") {
      c.in_channels = parse_size(value);
    } else {
      throw ConfigError("unknown backbone config key '" + std::string(key) + "'");
    }
  }
  c.validate();
  return c;
}

bool BackboneConfig::same_backbone(const BackboneConfig& other) const {
  BackboneConfig a = *this, b = other;
  a.num_classes = b.num_classes = 0;
  std::erase_if(a.attn_plan, [](const auto& kv) { return kv.second == 0; });
  std::erase_if(b.attn_plan, [](const auto& kv) { return kv.second == 0; });
  return a == b;
}

// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(const std::string& prefix, std::size_t in, std::size_t out,
                             std::size_t stride, Rng& rng)
    : conv1(prefix + ".conv1", 3, in, out, stride, 1, rng),
      bn1(prefix + ".bn1", out),
      conv2(prefix + ".conv2", 3, out, out, 1, 1, rng),
      bn2(prefix + ".bn2", out) {
  if (stride != 1 || in != out) {
    proj.emplace(prefix + ".proj", 1, in, out, stride, 0, rng);
    proj_bn.emplace(prefix + ".proj_bn", out);
  }
}

Var ResidualBlock::forward(Tape& tape, Var x, Mode mode) {
  Var y = relu(bn1.forward(tape, conv1.forward(tape, x), mode));
  y = bn2.forward(tape, conv2.forward(tape, y), mode);
  Var shortcut = proj ? proj_bn->forward(tape, proj->forward(tape, x), mode) : x;
  return relu(add(y, shortcut));
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  if (proj) {
    proj->collect(out);
    proj_bn->collect(out);
  }
}

void ResidualBlock::collect_buffers(std::vector<NamedBuffer>& out) {
  bn1.collect_buffers(out);
  bn2.collect_buffers(out);
  if (proj_bn) proj_bn->collect_buffers(out);
}

// ---------------------------------------------------------------------------

Model::Model(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& ch = config_.stage_channels;
  stem_conv_ = Conv2d("stem.conv", 3, config_.in_channels, ch[0], 1, 1, rng);
  stem_bn_ = BatchNorm("stem.bn", ch[0]);
  std::size_t in = ch[0];
  for (std::size_t s = 0; s < 4; ++s) {
    StageLayers stage;
    stage.name = std::string(kStageNames[s]);
    for (std::size_t b = 0; b < config_.blocks_per_stage[s]; ++b) {
      stage.blocks.emplace_back(stage.name + ".block" + std::to_string(b), in, ch[s], b == 0 ? 2 : 1, rng);
      in = ch[s];
    }
    const auto it = config_.attn_plan.find(stage.name);
    const int n_attn = it == config_.attn_plan.end() ? 0 : it->second;
    for (int a = 0; a < n_attn; ++a) {
      stage.attns.emplace_back(stage.name + ".attn" + std::to_string(a), ch[s], rng);
    }
    stages_.push_back(std::move(stage));
  }
  head_ = Linear("head", ch[3], config_.num_classes, rng);
}

Model build_network(const BackboneConfig& config, std::uint64_t seed) { return Model(config, seed); }

Var Model::forward_features(Tape& tape, Var images, Mode mode) {
  const Shape& s = images.shape();
  const bool batched = s.size() == 4;
  if ((s.size() != 3 && !batched) || s[batched ? 1 : 0] != config_.input_size ||
      s[batched ? 2 : 1] != config_.input_size || s.back() != config_.in_channels) {
    throw DimensionError("model expects " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + "x" + std::to_string(config_.in_channels) +
                         " images, got " + to_string(s));
  }
  Var x = batched ? images : reshape(images, {1, s[0], s[1], s[2]});
  x = relu(stem_bn_.forward(tape, stem_conv_.forward(tape, x), mode));
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) x = block.forward(tape, x, mode);
    for (auto& attn : stage.attns) x = attn.forward(tape, x);
  }
  Var pooled = global_avg_pool(x);
  return batched ? pooled : reshape(pooled, {config_.stage_channels[3]});
}

Var Model::classify(Tape& tape, Var images, Mode mode) {
  Var f = forward_features(tape, images, mode);
  if (f.value().rank() == 1) {
    return reshape(head_.forward(tape, reshape(f, {1, f.value().size()})), {config_.num_classes});
  }
  return head_.forward(tape, f);
}

Tensor Model::features(const Tensor& images, Mode mode) {
  Tape tape(GradMode::kDisabled);
  return forward_features(tape, tape.constant(images), mode).value();
}

Tensor Model::logits(const Tensor& images, Mode mode) {
  Tape tape(GradMode::kDisabled);
  return classify(tape, tape.constant(images), mode).value();
}

std::vector<Parameter*> Model::backbone_parameters() {
  std::vector<Parameter*> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& stage : stages_) {
    for (auto& b : stage.blocks) b.collect(out);
    for (auto& a : stage.attns) a.collect(out);
  }
  return out;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = backbone_parameters();
  head_.collect(out);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  stem_bn_.collect_buffers(out);
  for (auto& stage : stages_) {
    for (auto& b : stage.blocks) b.collect_buffers(out);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::size_t Model::attention_block_count() const {
  std::size_t n = 0;
  for (const auto& s : stages_) n += s.attns.size();
  return n;
}

std::map<std::string, int> Model::attention_counts() const {
  std::map<std::string, int> out;
  for (const auto& s : stages_) {
    if (!s.attns.empty()) out[s.name] = static_cast<int>(s.attns.size());
  }
  return out;
}

void Model::reset_head(std::size_t num_classes, Rng& rng) {
  if (num_classes == 0) throw ConfigError("head needs at least one class");
  config_.num_classes = num_classes;
  head_ = Linear("head", config_.stage_channels[3], num_classes, rng);
}

}  // namespace mstl
