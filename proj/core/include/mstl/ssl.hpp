#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "mstl/augment.hpp"
#include "mstl/autograd.hpp"
#include "mstl/backbone.hpp"
#include "mstl/image.hpp"
#include "mstl/layers.hpp"
#include "mstl/optim.hpp"
#include "mstl/regions.hpp"
#include "mstl/rng.hpp"

namespace mstl {

inline constexpr double kDefaultTau = 0.07;
inline constexpr double kDefaultMomentum = 0.999;

// Unit vector of v; DegenerateEmbeddingError when v is zero.
std::vector<double> l2_normalize(std::span<const double> v);

struct ContrastiveBatch {
  std::vector<double> query;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
  double tau = kDefaultTau;

  void validate() const;  // DimensionError / ContractError
};

// InfoNCE log-loss of the (n+1)-way softmax that picks the positive key.
// With literal_form the negative similarities are not divided by tau.
double contrastive_loss(const ContrastiveBatch& batch, bool literal_form = false);

// Row-wise InfoNCE for queries q (N x d, on the tape) against constant
// positives (N x d) and a shared negative set (n x d; n may be zero, pass an
// empty tensor). Returns shape {N}.
Var contrastive_loss_rows(Var q, const Tensor& positives, const Tensor& negatives, double tau,
                          bool literal_form = false);

// Query and key encoders of identical architecture. Construction fails with
// ModelPairingError when the parameter manifests (names and shapes) differ.
struct EncoderPair {
  EncoderPair() = default;
  EncoderPair(Model query, Model key, double momentum);

  Model query;
  Model key;
  double momentum = kDefaultMomentum;
};

// Exact copy of the query encoder as the key encoder.
EncoderPair make_encoder_pair(const Model& query, double momentum = kDefaultMomentum);

// theta_k <- m * theta_k + (1 - m) * theta_q for every parameter.
void momentum_update(EncoderPair& pair);

// Fixed-capacity FIFO of key vectors.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity = 256);

  // Rows of an N x d tensor, oldest first. DimensionError when d differs from
  // the stored keys.
  void enqueue(const Tensor& keys);
  void enqueue(std::span<const double> key);

  std::size_t size() const { return keys_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return keys_.empty(); }
  const std::deque<std::vector<double>>& keys() const { return keys_; }
  // size() x dim() matrix, oldest first; empty tensor when the queue is empty.
  Tensor matrix() const;

 private:
  std::size_t capacity_;
  std::size_t dim_ = 0;
  std::deque<std::vector<double>> keys_;
};

struct LossWeights {
  double alpha1 = 0.8;
  double alpha2 = 0.8;

  void validate() const;  // ContractError on negatives or both zero
};

struct RegionPrediction {
  std::vector<double> logits;  // one score per lobe class
  std::size_t target = 0;
};

// Sum of the five cross-entropies. ContractError unless there are exactly
// five predictions whose targets cover every lobe class once.
double region_aware_loss(std::span<const RegionPrediction> predictions);

double final_loss(double l_cons, double l_ra_query, std::span<const double> l_ra_negatives,
                  const LossWeights& weights);

struct SslOptions {
  double tau = kDefaultTau;
  double momentum = kDefaultMomentum;
  LossWeights weights;
  // Negative similarities are not divided by tau when set.
  bool untempered_negatives = false;
  SgdOptions sgd{0.3, 0.9, 1e-4};
  AugmentPolicy augment;
  std::size_t queue_capacity = 256;
  // How many other images of the batch contribute their region loss to each
  // image's objective as negatives.
  std::size_t region_negatives = 3;

  void validate() const;  // ContractError
};

struct SslState {
  EncoderPair encoders;
  Linear region_head;
  NegativeQueue queue;
  SgdState optimizer;
};

// Key encoder copied from the query, fresh 5-way region head, empty queue.
SslState make_ssl_state(const Model& model, const SslOptions& options, std::uint64_t seed);

// Fills the queue with key embeddings of the given images (center views),
// up to its capacity.
void warm_start_queue(SslState& state, std::span<const Image> images, const SslOptions& options);

struct LossBreakdown {
  double total = 0.0;
  double contrastive = 0.0;       // mean over used images
  double region_query = 0.0;      // mean over used images
  double region_negatives = 0.0;  // mean per image of the negative-image terms
  std::size_t images_used = 0;
  std::size_t images_skipped = 0;
};

// One optimization step over a batch: two augmented views per image, regions
// from the un-augmented image, loss, backprop through the query encoder and
// region head, SGD, momentum update, enqueue of the positive keys. Images on
// which the region generator fails are skipped and counted.
LossBreakdown ssl_step(SslState& state, std::span<const Image> batch, const SslOptions& options, Rng& rng);

// The same objective without any state change; state is copied internally.
LossBreakdown ssl_loss(const SslState& state, std::span<const Image> batch, const SslOptions& options, Rng& rng);

}  // namespace mstl
