#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rvm/config.hpp"
#include "rvm/gdg.hpp"
#include "rvm/optim.hpp"
#include "rvm/pipeline.hpp"
#include "rvm/random.hpp"
#include "rvm/rangeview.hpp"

namespace rvm {

enum class LossKind { triplet, imtrihard };

struct LossConfig {
  double alpha = 0.25;
  double lambda = 1e-4;
  LossKind kind = LossKind::imtrihard;
  bool clamp_at_zero = true;
  /// Multipliers for the hardest terms; 0 means the set size.
  std::size_t k_p = 0;
  std::size_t k_n = 0;

  void validate() const;
};

/// Squared Euclidean distance.
double sq_dist(const GlobalDescriptor& a, const GlobalDescriptor& b);
double sq_dist(std::span<const double> a, std::span<const double> b);

/// Σ over shuffled positionwise (p, n) pairs of max(d(q,p) - d(q,n) + α, 0),
/// using min(|P|, |N|) pairs.
Tensor triplet_loss(const Tensor& q, std::span<const Tensor> positives,
                    std::span<const Tensor> negatives, const LossConfig& cfg, Rng& rng);

/// (argmax_p d(q,p), argmin_n d(q,n)); ties go to the lowest index.
std::pair<std::size_t, std::size_t> mine_hardest(std::span<const double> pos_dist,
                                                 std::span<const double> neg_dist);
std::pair<std::size_t, std::size_t> mine_hardest(const Tensor& q,
                                                 std::span<const Tensor> positives,
                                                 std::span<const Tensor> negatives);

/// λ·mean_p d(q,p) + k_p(α + max_p d(q,p)) - k_n·min_n d(q,n), optionally
/// clamped at zero.
Tensor imtrihard_loss(const Tensor& q, std::span<const Tensor> positives,
                      std::span<const Tensor> negatives, const LossConfig& cfg);

Tensor compute_loss(const Tensor& q, std::span<const Tensor> positives,
                    std::span<const Tensor> negatives, const LossConfig& cfg, Rng& rng);

struct TrainConfig {
  LossConfig loss;
  double lr = 5e-6;
  std::size_t epochs = 20;
  std::size_t k_p = 6;
  std::size_t k_n = 6;
  std::uint64_t seed = 0;
  double overlap_threshold = 0.3;
  std::size_t max_steps = 0;  // 0 means no limit
  double val_fraction = 0.1;

  void validate() const;
  static TrainConfig from_keys(const KeyValues& kv);
  std::string to_text() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_f1max = 0.0;  // NaN without a validation split
};

struct TrainingReport {
  std::vector<EpochReport> epochs;
  std::size_t steps = 0;
  std::size_t train_tuples = 0;
  std::size_t val_tuples = 0;

  std::string to_csv() const;
};

struct TrainHooks {
  /// Called after each epoch's checkpoint; returning false stops training.
  std::function<bool(const EpochReport&)> on_epoch;
};

/// Trains in place. `inputs[i]` is the network input of scan i; tuples index
/// into it. Tuples may list more members than k_p / k_n; each step then uses
/// a fresh seeded draw of at most k_p positives and k_n negatives. When
/// `out_dir` is set, writes epoch checkpoints, the final checkpoint
/// (model.omck), pipeline.cfg and report.csv there.
TrainingReport train(Pipeline& model, const std::vector<Tensor>& inputs,
                     const std::vector<TrainingTuple>& tuples, const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                     const TrainHooks& hooks = {});

/// F1max of eval-mode descriptors over (q, p) pairs labelled true and (q, n)
/// pairs labelled false, with similarity = -distance.
double validation_f1max(const Pipeline& model, const std::vector<Tensor>& inputs,
                        std::span<const TrainingTuple> tuples);

/// Fraction of scans whose nearest other scan (by descriptor) belongs to the
/// same group id.
double nearest_neighbor_recall(const std::vector<GlobalDescriptor>& descriptors,
                               const std::vector<std::size_t>& group);

}  // namespace rvm
