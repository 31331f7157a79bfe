#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdsrec/data.hpp"
#include "gdsrec/graph.hpp"
#include "gdsrec/kernels.hpp"
#include "gdsrec/model.hpp"

namespace gdsrec {

enum class Task { rating, ranking };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

struct TrainConfig {
  int dim = 64;
  std::size_t K = 10;
  int delta = 1;
  double learning_rate = 5e-4;
  std::size_t batch_size = 128;
  Task task = Task::rating;
  int positive_threshold = 4;  ///< F: label is 1 iff rating >= F
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-8;
  /// Fixed work partition for the parallel gradient reduction. Results do not
  /// depend on the thread count, only on this value.
  std::size_t reduction_chunks = 16;
  Exec exec = Exec::parallel;

  /// Throws std::invalid_argument on non-positive or inconsistent values.
  void validate() const;
  /// Human-readable notes for values outside the usual tuning grids.
  std::vector<std::string> off_grid() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Records how many neighbors each aggregation consumed, for node-dropout
/// audits. Thread-safe.
struct AggregationProbe {
  std::size_t cap = 0;
  std::atomic<std::size_t> aggregations{0};
  std::atomic<std::size_t> max_consumed{0};
  std::atomic<std::size_t> over_cap{0};
  std::atomic<std::size_t> protection_violations{0};  ///< degree <= cap but not all kept

  void record(std::size_t degree, std::size_t consumed);
};

struct ModelContext {
  const ModelParams& params;
  const DecentralizedGraph& graph;
  const DatasetBundle& bundle;
  const VariantFlags& flags;
  const EpochSample& sample;

  PredictContext predict_context() const { return {params, graph, bundle, flags, sample}; }
};

/// Per-sample objective and its derivative with respect to the prediction.
struct LossTerm {
  double loss = 0.0;
  double d_prediction = 0.0;
};

/// 0.5 (pred - rating)^2
LossTerm squared_error(double prediction, int rating);
/// softplus(pred) - y pred, i.e. binary cross-entropy on sigmoid(pred).
LossTerm logistic_loss(double prediction, int label);
int ranking_label(int rating, int positive_threshold);

/// Mean batch objective and its exact gradient for the realized neighbor
/// sample. The serial path recomputes every offset per sample; the parallel
/// path computes each node once and reduces over fixed chunks.
class GradientEngine {
 public:
  GradientEngine(const ParamLayout& layout, std::size_t chunks);

  double compute(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task, int positive_threshold,
                 ParamBuffer& grads, Exec exec, AggregationProbe* probe = nullptr);

 private:
  double compute_serial(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task, int threshold,
                        ParamBuffer& grads, AggregationProbe* probe);
  double compute_parallel(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task, int threshold,
                          ParamBuffer& grads, AggregationProbe* probe);

  const ParamLayout* layout_;
  std::vector<kernels::GradSink> sinks_;
};

/// Forward-only mean objective over `batch`.
double batch_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task, int positive_threshold);

/// L1 = (1/2|B|) sum (pred - r)^2 with gradients written to `grads`.
double rating_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, ParamBuffer& grads,
                   Exec exec = Exec::parallel, std::size_t chunks = 16);
/// Mean binary cross-entropy of sigmoid(pred) against rating >= F.
double ranking_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, int positive_threshold,
                    ParamBuffer& grads, Exec exec = Exec::parallel, std::size_t chunks = 16);

class RmsProp {
 public:
  RmsProp(const ParamLayout& layout, double decay = 0.99, double epsilon = 1e-8);

  /// acc <- decay*acc + (1-decay) g^2;  theta <- theta - lr g / (sqrt(acc) + eps).
  /// Throws when any updated value is non-finite.
  void step(ModelParams& params, const ParamBuffer& grads, double learning_rate, Exec exec = Exec::parallel);

  const ParamBuffer& accumulators() const noexcept { return acc_; }
  double decay() const noexcept { return decay_; }
  double epsilon() const noexcept { return epsilon_; }

 private:
  ParamBuffer acc_;
  double decay_;
  double epsilon_;
};

/// True iff the last `patience` consecutive epochs each increased strictly
/// over their predecessor.
bool should_stop(std::span<const double> history, std::size_t patience = 10);
/// Index of the minimum; earliest on ties.
std::size_t best_epoch(std::span<const double> history);

/// Tracks the validation objective and the parameters of its best epoch.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience = 10) : patience_(patience) {}

  /// Records one epoch; returns true when training should stop now.
  bool observe(double objective, const ModelParams& params);
  bool last_improved() const noexcept { return last_improved_; }
  const std::vector<double>& history() const noexcept { return history_; }
  /// Zero-based index of the best epoch so far.
  std::size_t best_index() const { return best_epoch(history_); }
  const ModelParams& best_params() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::vector<double> history_;
  ModelParams best_;
  bool last_improved_ = false;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_logloss = 0.0;
  double val_mean_probability = 0.0;  ///< mean sigmoid(prediction), in (0,1)
  double val_objective = 0.0;  ///< MAE+RMSE for rating, mean logloss for ranking
  double wall_seconds = 0.0;
};

/// Validation-side metrics for the given params (full neighborhoods).
EpochMetrics validate_model(const ModelParams& params, const DecentralizedGraph& graph, const DatasetBundle& bundle,
                            const VariantFlags& flags, const TrainConfig& config,
                            std::span<const RatingRecord> split);

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

class Trainer {
 public:
  Trainer(const DatasetBundle& bundle, const DecentralizedGraph& graph, TrainConfig config, VariantFlags flags);

  /// Runs one epoch: seeded shuffle, per-epoch neighbor sample, mini-batch
  /// RMSprop steps, then validation.
  EpochMetrics train_epoch(AggregationProbe* probe = nullptr);

  using EpochCallback = std::function<void(const EpochMetrics&, const Trainer&, bool improved)>;
  /// Trains until early stop or max_epochs and restores the best parameters.
  TrainResult run(const EpochCallback& on_epoch = {});

  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }
  const RmsProp& optimizer() const noexcept { return optimizer_; }
  const TrainConfig& config() const noexcept { return config_; }
  const VariantFlags& flags() const noexcept { return flags_; }
  std::string rng_state() const;
  std::size_t epochs_done() const noexcept { return epoch_; }

  Checkpoint checkpoint(std::uint64_t dataset_hash) const;

 private:
  const DatasetBundle& bundle_;
  const DecentralizedGraph& graph_;
  TrainConfig config_;
  VariantFlags flags_;
  ModelParams params_;
  RmsProp optimizer_;
  GradientEngine engine_;
  ParamBuffer grads_;
  std::mt19937_64 rng_;
  std::vector<RatingRecord> order_;
  std::size_t epoch_ = 0;
};

}  // namespace gdsrec
