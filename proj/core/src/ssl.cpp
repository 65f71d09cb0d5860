#include "mstl/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mstl/errors.hpp"
#include "mstl/ops.hpp"

namespace mstl {

std::vector<double> l2_normalize(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (!(norm > 0.0)) throw DegenerateEmbeddingError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

void ContrastiveBatch::validate() const {
  if (!(tau > 0.0)) throw ContractError("contrastive_loss: tau must be positive");
  if (query.empty() || query.size() != positive.size()) {
    throw DimensionError("contrastive_loss: query and positive key dimensions differ");
  }
  for (const auto& n : negatives) {
    if (n.size() != query.size()) throw DimensionError("contrastive_loss: negative key dimension differs");
  }
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double contrastive_loss(const ContrastiveBatch& batch, bool literal_form) {
  batch.validate();
  const double pos = dot(batch.query, batch.positive) / batch.tau;
  std::vector<double> logits{pos};
  for (const auto& n : batch.negatives) {
    const double s = dot(batch.query, n);
    logits.push_back(literal_form ? s : s / batch.tau);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (mx == pos) {
    // log1p keeps full relative precision when the positive dominates and the
    // loss is tiny.
    double rest = 0.0;
    for (std::size_t i = 1; i < logits.size(); ++i) rest += std::exp(logits[i] - pos);
    return std::log1p(rest);
  }
  double total = 0.0;
  for (double l : logits) total += std::exp(l - mx);
  return std::max(0.0, mx + std::log(total) - pos);
}

Var contrastive_loss_rows(Var q, const Tensor& positives, const Tensor& negatives, double tau, bool literal_form) {
  if (!(tau > 0.0)) throw ContractError("contrastive_loss: tau must be positive");
  if (q.value().rank() != 2 || positives.shape() != q.shape()) {
    throw DimensionError("contrastive_loss_rows: queries and positives must both be N x d");
  }
  Tape& tape = q.tape();
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  Var pos = scale(reshape(sum_rows(mul(q, tape.constant(positives))), {n, 1}), 1.0 / tau);
  Var logits = pos;
  if (!negatives.empty()) {
    if (negatives.rank() != 2 || negatives.dim(1) != d) {
      throw DimensionError("contrastive_loss_rows: negatives must be n x " + std::to_string(d));
    }
    Var neg = matmul(q, transpose(tape.constant(negatives)));
    if (!literal_form) neg = scale(neg, 1.0 / tau);
    logits = concat_cols(pos, neg);
  }
  const std::vector<std::size_t> labels(n, 0);
  return cross_entropy_rows(logits, labels);
}

EncoderPair::EncoderPair(Model q, Model k, double m) : query(std::move(q)), key(std::move(k)), momentum(m) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("momentum must lie in [0, 1]");
  const auto pq = query.parameters();
  const auto pk = key.parameters();
  if (pq.size() != pk.size()) throw ModelPairingError("encoders have different parameter counts");
  for (std::size_t i = 0; i < pq.size(); ++i) {
    if (pq[i]->name != pk[i]->name || pq[i]->value.shape() != pk[i]->value.shape()) {
      throw ModelPairingError("encoder manifests differ at '" + pq[i]->name + "' / '" + pk[i]->name + "'");
    }
  }
}

EncoderPair make_encoder_pair(const Model& query, double momentum) { return EncoderPair(query, query, momentum); }

void momentum_update(EncoderPair& pair) {
  const auto pq = pair.query.parameters();
  const auto pk = pair.key.parameters();
  if (pq.size() != pk.size()) throw ModelPairingError("encoders have different parameter counts");
  const double m = pair.momentum;
  for (std::size_t i = 0; i < pq.size(); ++i) {
    if (pq[i]->name != pk[i]->name || pq[i]->value.shape() != pk[i]->value.shape()) {
      throw ModelPairingError("encoder manifests differ at '" + pq[i]->name + "'");
    }
    auto k = pk[i]->value.data();
    const auto q = pq[i]->value.data();
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
  }
}

NegativeQueue::NegativeQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("queue capacity must be positive");
}

void NegativeQueue::enqueue(std::span<const double> key) {
  if (key.empty()) throw DimensionError("cannot enqueue an empty key");
  if (dim_ == 0) dim_ = key.size();
  if (key.size() != dim_) {
    throw DimensionError("queue holds " + std::to_string(dim_) + "-dim keys, got " + std::to_string(key.size()));
  }
  keys_.emplace_back(key.begin(), key.end());
  while (keys_.size() > capacity_) keys_.pop_front();
}

void NegativeQueue::enqueue(const Tensor& keys) {
  if (keys.rank() != 2) throw DimensionError("enqueue: keys must be N x d");
  const std::size_t n = keys.dim(0), d = keys.dim(1);
  if (dim_ != 0 && d != dim_) {
    throw DimensionError("queue holds " + std::to_string(dim_) + "-dim keys, got " + std::to_string(d));
  }
  for (std::size_t i = 0; i < n; ++i) enqueue(keys.data().subspan(i * d, d));
}

Tensor NegativeQueue::matrix() const {
  if (keys_.empty()) return Tensor();
  Tensor out(Shape{keys_.size(), dim_});
  for (std::size_t i = 0; i < keys_.size(); ++i) std::copy(keys_[i].begin(), keys_[i].end(), out.raw() + i * dim_);
  return out;
}

void LossWeights::validate() const {
  if (alpha1 < 0.0 || alpha2 < 0.0) throw ContractError("loss weights must be nonnegative");
  if (alpha1 == 0.0 && alpha2 == 0.0) throw ContractError("loss weights must not both be zero");
}

double region_aware_loss(std::span<const RegionPrediction> predictions) {
  if (predictions.size() != kNumLobes) {
    throw ContractError("region_aware_loss: expected 5 predictions, got " + std::to_string(predictions.size()));
  }
  std::array<bool, kNumLobes> seen{};
  double total = 0.0;
  for (const auto& p : predictions) {
    if (p.logits.size() != kNumLobes) throw ContractError("region_aware_loss: each prediction needs 5 logits");
    if (p.target >= kNumLobes || seen[p.target]) {
      throw ContractError("region_aware_loss: targets must cover every lobe class exactly once");
    }
    seen[p.target] = true;
    total += cross_entropy(Tensor(Shape{kNumLobes}, p.logits), p.target);
  }
  return total;
}

double final_loss(double l_cons, double l_ra_query, std::span<const double> l_ra_negatives,
                  const LossWeights& weights) {
  double region = l_ra_query;
  for (double l : l_ra_negatives) region += l;
  return weights.alpha1 * l_cons + weights.alpha2 * region;
}

void SslOptions::validate() const {
  if (!(tau > 0.0)) throw ContractError("tau must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("momentum must lie in [0, 1]");
  if (queue_capacity == 0) throw ContractError("queue capacity must be positive");
  weights.validate();
  augment.validate();
}

SslState make_ssl_state(const Model& model, const SslOptions& options, std::uint64_t seed) {
  options.validate();
  Rng rng(mix_seed(seed, 0x5e1f));
  SslState state{make_encoder_pair(model, options.momentum),
                 Linear("region_head", model.config().stage_channels[3], kNumLobes, rng),
                 NegativeQueue(options.queue_capacity), SgdState{}};
  return state;
}

namespace {

Tensor key_embeddings(Model& key, const std::vector<Image>& views) {
  Tape tape(GradMode::kDisabled);
  Var f = key.forward_features(tape, tape.constant(to_batch(views)), Mode::kTrain);
  return l2_normalize_rows(f).value();
}

struct Objective {
  LossBreakdown parts;
  Var total;
  Tensor keys;
};

// Builds the loss on `tape`. parts.images_used == 0 means nothing to optimize.
Objective build_objective(SslState& state, std::span<const Image> batch, const SslOptions& options, Rng& rng,
                          Tape& tape) {
  Objective obj;
  std::vector<Image> q_views, k_views, region_views;
  std::vector<std::size_t> region_labels;
  for (const Image& image : batch) {
    RegionSet regions;
    try {
      regions = generate_regions(image);
    } catch (const DegenerateAnatomyError&) {
      ++obj.parts.images_skipped;
      continue;
    } catch (const BoundsError&) {
      ++obj.parts.images_skipped;
      continue;
    }
    q_views.push_back(augment(image, options.augment, rng));
    k_views.push_back(augment(image, options.augment, rng));
    for (std::size_t r = 0; r < kNumLobes; ++r) {
      region_views.push_back(augment(regions.images[r], options.augment, rng));
      region_labels.push_back(lobe_index(regions.tuples[r].lobe));
    }
  }
  const std::size_t used = q_views.size();
  obj.parts.images_used = used;
  if (used == 0) return obj;

  obj.keys = key_embeddings(state.encoders.key, k_views);

  Model& query = state.encoders.query;
  Var q = l2_normalize_rows(query.forward_features(tape, tape.constant(to_batch(q_views)), Mode::kTrain));
  Var l_cons = contrastive_loss_rows(q, obj.keys, state.queue.matrix(), options.tau, options.untempered_negatives);

  Var region_features = query.forward_features(tape, tape.constant(to_batch(region_views)), Mode::kTrain);
  Var l_ra = cross_entropy_rows(state.region_head.forward(tape, region_features), region_labels);

  // Every image is a region negative for r other images of the batch, so its
  // region loss enters the batch objective 1 + r times.
  const double r = static_cast<double>(std::min(options.region_negatives, used - 1));
  const double inv = 1.0 / static_cast<double>(used);
  const double cons_sum = sum(l_cons).value().item();
  const double ra_sum = sum(l_ra).value().item();
  obj.total = scale(add(scale(sum(l_cons), options.weights.alpha1),
                        scale(sum(l_ra), options.weights.alpha2 * (1.0 + r))),
                    inv);
  obj.parts.total = obj.total.value().item();
  obj.parts.contrastive = cons_sum * inv;
  obj.parts.region_query = ra_sum * inv;
  obj.parts.region_negatives = r * ra_sum * inv;
  return obj;
}

}  // namespace

void warm_start_queue(SslState& state, std::span<const Image> images, const SslOptions& options) {
  constexpr std::size_t kChunk = 32;
  std::size_t next = 0;
  while (state.queue.size() < state.queue.capacity() && next < images.size()) {
    const std::size_t room = state.queue.capacity() - state.queue.size();
    const std::size_t take = std::min({kChunk, room, images.size() - next});
    std::vector<Image> views;
    for (std::size_t i = 0; i < take; ++i) views.push_back(center_view(images[next + i], options.augment));
    state.queue.enqueue(key_embeddings(state.encoders.key, views));
    next += take;
  }
}

LossBreakdown ssl_step(SslState& state, std::span<const Image> batch, const SslOptions& options, Rng& rng) {
  if (batch.empty()) throw ContractError("ssl_step: empty batch");
  options.validate();
  state.encoders.momentum = options.momentum;
  Tape tape;
  Objective obj = build_objective(state, batch, options, rng, tape);
  if (obj.parts.images_used == 0) return obj.parts;

  std::vector<Parameter*> params = state.encoders.query.backbone_parameters();
  state.region_head.collect(params);
  zero_grads(params);
  tape.backward(obj.total);
  sgd_step(params, state.optimizer, options.sgd);
  momentum_update(state.encoders);
  state.queue.enqueue(obj.keys);
  return obj.parts;
}

LossBreakdown ssl_loss(const SslState& state, std::span<const Image> batch, const SslOptions& options, Rng& rng) {
  if (batch.empty()) throw ContractError("ssl_loss: empty batch");
  options.validate();
  SslState copy = state;
  Tape tape(GradMode::kDisabled);
  return build_objective(copy, batch, options, rng, tape).parts;
}

}  // namespace mstl
