#include "gdsrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "gdsrec/eval.hpp"

namespace gdsrec {

std::string_view to_string(Task task) { return task == Task::rating ? "rating" : "ranking"; }

Task parse_task(std::string_view name) {
  if (name == "rating") return Task::rating;
  if (name == "ranking") return Task::ranking;
  throw std::invalid_argument(fmt::format("unknown task '{}'", name));
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(dim > 0, "D must be positive");
  require(K >= 1, "K must be at least 1");
  require(delta >= 0, "delta must be non-negative");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning rate must be finite and non-negative");
  require(batch_size >= 1, "batch size must be positive");
  require(positive_threshold >= 1 && positive_threshold <= 5, "F must lie in [1,5]");
  require(patience >= 1, "patience must be positive");
  require(max_epochs >= 1, "max_epochs must be positive");
  require(rmsprop_decay > 0.0 && rmsprop_decay < 1.0, "RMSprop decay must lie in (0,1)");
  require(rmsprop_epsilon > 0.0, "RMSprop epsilon must be positive");
  require(reduction_chunks >= 1, "reduction_chunks must be positive");
}

std::vector<std::string> TrainConfig::off_grid() const {
  std::vector<std::string> notes;
  auto in = [](auto v, std::initializer_list<decltype(v)> grid) {
    return std::find(grid.begin(), grid.end(), v) != grid.end();
  };
  if (!in(dim, {16, 32, 64, 128, 256, 512})) notes.push_back(fmt::format("D={} is outside {{16..512}}", dim));
  if (!in(delta, {0, 1, 2, 3})) notes.push_back(fmt::format("delta={} is outside {{0,1,2,3}}", delta));
  if (!in(learning_rate, {1e-6, 1e-5, 1e-4, 5e-4}))
    notes.push_back(fmt::format("learning rate {} is outside {{1e-6,1e-5,1e-4,5e-4}}", learning_rate));
  if (!in(batch_size, {std::size_t{64}, std::size_t{128}, std::size_t{256}}))
    notes.push_back(fmt::format("batch size {} is outside {{64,128,256}}", batch_size));
  if (task == Task::ranking && !in(positive_threshold, {3, 4}))
    notes.push_back(fmt::format("F={} is outside {{3,4}}", positive_threshold));
  return notes;
}

void AggregationProbe::record(std::size_t degree, std::size_t consumed) {
  ++aggregations;
  auto prev = max_consumed.load();
  while (consumed > prev && !max_consumed.compare_exchange_weak(prev, consumed)) {
  }
  if (consumed > cap) ++over_cap;
  if (degree <= cap && consumed != degree) ++protection_violations;
}

LossTerm squared_error(double prediction, int rating) {
  const double e = prediction - rating;
  return {0.5 * e * e, e};
}

LossTerm logistic_loss(double prediction, int label) {
  const double softplus = std::max(prediction, 0.0) + std::log1p(std::exp(-std::abs(prediction)));
  const double p = prediction >= 0.0 ? 1.0 / (1.0 + std::exp(-prediction))
                                     : std::exp(prediction) / (1.0 + std::exp(prediction));
  return {softplus - label * prediction, p - label};
}

int ranking_label(int rating, int positive_threshold) { return rating >= positive_threshold ? 1 : 0; }

namespace {

LossTerm objective(Task task, double prediction, int rating, int threshold) {
  return task == Task::rating ? squared_error(prediction, rating)
                              : logistic_loss(prediction, ranking_label(rating, threshold));
}

void check_finite_loss(double loss) {
  if (!std::isfinite(loss))
    throw std::runtime_error("non-finite training loss; parameters have diverged (try a smaller learning rate)");
}

bool uses_social(const ModelContext& ctx, Index user) {
  return !ctx.flags.sn_off && !ctx.sample.user_social(user).empty();
}

void record_offset(AggregationProbe* probe, const DecentralizedGraph& g, const kernels::OffsetTrace& t) {
  if (!probe) return;
  const auto degree = t.side == kernels::Side::user ? g.user_view[static_cast<std::size_t>(t.node)].size()
                                                    : g.item_view[static_cast<std::size_t>(t.node)].size();
  probe->record(degree, t.neighbors.size());
}

/// [begin, end) of part `c` out of `parts` over n items.
std::pair<std::size_t, std::size_t> chunk_range(std::size_t n, std::size_t parts, std::size_t c) {
  return {n * c / parts, n * (c + 1) / parts};
}

}  // namespace

GradientEngine::GradientEngine(const ParamLayout& layout, std::size_t chunks) : layout_(&layout) {
  sinks_.reserve(std::max<std::size_t>(chunks, 1));
  for (std::size_t c = 0; c < std::max<std::size_t>(chunks, 1); ++c) sinks_.emplace_back(layout);
}

double GradientEngine::compute(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task,
                               int positive_threshold, ParamBuffer& grads, Exec exec, AggregationProbe* probe) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  return exec == Exec::serial ? compute_serial(ctx, batch, task, positive_threshold, grads, probe)
                              : compute_parallel(ctx, batch, task, positive_threshold, grads, probe);
}

double GradientEngine::compute_serial(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task,
                                      int threshold, ParamBuffer& grads, AggregationProbe* probe) {
  using namespace kernels;
  const auto& p = ctx.params;
  const auto pctx = ctx.predict_context();
  auto& sink = sinks_.front();
  sink.clear();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const auto d = p.dim();
  double total = 0.0;

  for (const auto& rec : batch) {
    OffsetTrace tu, tv;
    const Vec hu = offset_forward(p, ctx.graph, ctx.flags, ctx.sample, Side::user, rec.user, &tu);
    const Vec hv = offset_forward(p, ctx.graph, ctx.flags, ctx.sample, Side::item, rec.item, &tv);
    record_offset(probe, ctx.graph, tu);
    record_offset(probe, ctx.graph, tv);
    HeadTrace own_head;
    const double own = head_forward(p, hu, hv, &own_head);

    const bool social = uses_social(ctx, rec.user);
    std::vector<OffsetTrace> friend_traces;
    std::vector<HeadTrace> friend_heads;
    std::vector<double> weights;
    double f = own;
    if (social) {
      const auto kept = ctx.sample.user_social(rec.user);
      const auto& row = ctx.graph.social_view[static_cast<std::size_t>(rec.user)];
      if (probe) probe->record(row.size(), kept.size());
      weights = kept_social_weights(ctx.graph, rec.user, kept, ctx.flags.rc_off);
      friend_traces.resize(kept.size());
      friend_heads.resize(kept.size());
      double s = 0.0;
      for (std::size_t k = 0; k < kept.size(); ++k) {
        const Vec hk = offset_forward(p, ctx.graph, ctx.flags, ctx.sample, Side::user, row[kept[k]].user,
                                      &friend_traces[k]);
        record_offset(probe, ctx.graph, friend_traces[k]);
        s += weights[k] * head_forward(p, hk, hv, &friend_heads[k]);
      }
      f = 0.5 * (own + s);
    }
    const double prediction = baseline_rating(pctx, rec.user, rec.item) + f;
    const auto term = objective(task, prediction, rec.rating, threshold);
    total += term.loss;

    const double d_pred = term.d_prediction * inv_batch;
    Vec dhu = Vec::Zero(d), dhv = Vec::Zero(d);
    head_backward(p, own_head, social ? 0.5 * d_pred : d_pred, sink, dhu, dhv);
    for (std::size_t k = 0; k < friend_traces.size(); ++k) {
      Vec dhk = Vec::Zero(d);
      head_backward(p, friend_heads[k], 0.5 * weights[k] * d_pred, sink, dhk, dhv);
      offset_backward(p, ctx.flags, friend_traces[k], dhk, sink);
    }
    offset_backward(p, ctx.flags, tu, dhu, sink);
    offset_backward(p, ctx.flags, tv, dhv, sink);
  }

  grads.set_zero();
  sink.add_to(grads);
  const double loss = total * inv_batch;
  check_finite_loss(loss);
  return loss;
}

double GradientEngine::compute_parallel(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task,
                                        int threshold, ParamBuffer& grads, AggregationProbe* probe) {
  using namespace kernels;
  const auto& p = ctx.params;
  const auto pctx = ctx.predict_context();
  const auto d = p.dim();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const std::size_t parts = sinks_.size();

  // Unique nodes whose offsets this batch needs.
  std::vector<Index> users, items;
  for (const auto& rec : batch) {
    users.push_back(rec.user);
    items.push_back(rec.item);
    if (uses_social(ctx, rec.user)) {
      const auto& row = ctx.graph.social_view[static_cast<std::size_t>(rec.user)];
      for (auto pos : ctx.sample.user_social(rec.user)) users.push_back(row[pos].user);
    }
  }
  auto unique_sorted = [](std::vector<Index>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  unique_sorted(users);
  unique_sorted(items);
  auto slot = [](const std::vector<Index>& v, Index node) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), node) - v.begin());
  };

  const std::size_t n_nodes = users.size() + items.size();
  std::vector<OffsetTrace> traces(n_nodes);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(n_nodes); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    if (uk < users.size())
      offset_forward(p, ctx.graph, ctx.flags, ctx.sample, Side::user, users[uk], &traces[uk]);
    else
      offset_forward(p, ctx.graph, ctx.flags, ctx.sample, Side::item, items[uk - users.size()], &traces[uk]);
  }
  if (probe)
    for (const auto& t : traces) record_offset(probe, ctx.graph, t);

  // Head forward/backward per sample; offset gradients are kept per sample and
  // scattered to nodes afterwards in sample order.
  struct SampleGrad {
    double loss = 0.0;
    Vec d_user, d_item;
    std::vector<std::size_t> friend_slots;
    std::vector<Vec> d_friends;
  };
  std::vector<SampleGrad> per_sample(batch.size());
  for (auto& s : sinks_) s.clear();

#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < static_cast<std::int64_t>(parts); ++c) {
    auto& sink = sinks_[static_cast<std::size_t>(c)];
    const auto [begin, end] = chunk_range(batch.size(), parts, static_cast<std::size_t>(c));
    for (std::size_t b = begin; b < end; ++b) {
      const auto& rec = batch[b];
      auto& out = per_sample[b];
      const Vec& hu = traces[slot(users, rec.user)].h;
      const Vec& hv = traces[users.size() + slot(items, rec.item)].h;
      HeadTrace own_head;
      const double own = head_forward(p, hu, hv, &own_head);

      const bool social = uses_social(ctx, rec.user);
      std::vector<HeadTrace> friend_heads;
      std::vector<double> weights;
      double f = own;
      if (social) {
        const auto kept = ctx.sample.user_social(rec.user);
        const auto& row = ctx.graph.social_view[static_cast<std::size_t>(rec.user)];
        weights = kept_social_weights(ctx.graph, rec.user, kept, ctx.flags.rc_off);
        friend_heads.resize(kept.size());
        out.friend_slots.resize(kept.size());
        double s = 0.0;
        for (std::size_t k = 0; k < kept.size(); ++k) {
          out.friend_slots[k] = slot(users, row[kept[k]].user);
          s += weights[k] * head_forward(p, traces[out.friend_slots[k]].h, hv, &friend_heads[k]);
        }
        f = 0.5 * (own + s);
      }
      const double prediction = baseline_rating(pctx, rec.user, rec.item) + f;
      const auto term = objective(task, prediction, rec.rating, threshold);
      out.loss = term.loss;

      const double d_pred = term.d_prediction * inv_batch;
      out.d_user = Vec::Zero(d);
      out.d_item = Vec::Zero(d);
      head_backward(p, own_head, social ? 0.5 * d_pred : d_pred, sink, out.d_user, out.d_item);
      out.d_friends.assign(friend_heads.size(), Vec::Zero(d));
      for (std::size_t k = 0; k < friend_heads.size(); ++k)
        head_backward(p, friend_heads[k], 0.5 * weights[k] * d_pred, sink, out.d_friends[k], out.d_item);
    }
  }

  std::vector<Vec> dh(n_nodes, Vec::Zero(d));
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = per_sample[b];
    total += s.loss;
    dh[slot(users, batch[b].user)] += s.d_user;
    dh[users.size() + slot(items, batch[b].item)] += s.d_item;
    for (std::size_t k = 0; k < s.friend_slots.size(); ++k) dh[s.friend_slots[k]] += s.d_friends[k];
    if (probe && uses_social(ctx, batch[b].user))
      probe->record(ctx.graph.social_view[static_cast<std::size_t>(batch[b].user)].size(), s.friend_slots.size());
  }

#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < static_cast<std::int64_t>(parts); ++c) {
    auto& sink = sinks_[static_cast<std::size_t>(c)];
    const auto [begin, end] = chunk_range(n_nodes, parts, static_cast<std::size_t>(c));
    for (std::size_t k = begin; k < end; ++k) offset_backward(p, ctx.flags, traces[k], dh[k], sink);
  }

  grads.set_zero();
  for (const auto& s : sinks_) s.add_to(grads);
  const double loss = total * inv_batch;
  check_finite_loss(loss);
  return loss;
}

double batch_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, Task task, int positive_threshold) {
  const auto pctx = ctx.predict_context();
  double total = 0.0;
  for (const auto& rec : batch)
    total += objective(task, predict(pctx, rec.user, rec.item), rec.rating, positive_threshold).loss;
  return total / static_cast<double>(batch.size());
}

double rating_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, ParamBuffer& grads, Exec exec,
                   std::size_t chunks) {
  GradientEngine engine(ctx.params.layout(), chunks);
  return engine.compute(ctx, batch, Task::rating, 0, grads, exec);
}

double ranking_loss(const ModelContext& ctx, std::span<const RatingRecord> batch, int positive_threshold,
                    ParamBuffer& grads, Exec exec, std::size_t chunks) {
  GradientEngine engine(ctx.params.layout(), chunks);
  return engine.compute(ctx, batch, Task::ranking, positive_threshold, grads, exec);
}

RmsProp::RmsProp(const ParamLayout& layout, double decay, double epsilon)
    : acc_(ParamBuffer::zeros(layout)), decay_(decay), epsilon_(epsilon) {}

namespace {

bool rmsprop_update(std::vector<double>& theta, std::vector<double>& acc, const std::vector<double>& g, double decay,
                    double eps, double lr, Exec exec) {
  const auto n = static_cast<std::int64_t>(theta.size());
  bool bad = false;
  auto one = [&](std::int64_t k) {
    const auto i = static_cast<std::size_t>(k);
    acc[i] = decay * acc[i] + (1.0 - decay) * g[i] * g[i];
    theta[i] -= lr * g[i] / (std::sqrt(acc[i]) + eps);
    return !std::isfinite(theta[i]);
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static) reduction(|| : bad)
    for (std::int64_t k = 0; k < n; ++k) bad = one(k) || bad;
  } else {
    for (std::int64_t k = 0; k < n; ++k) bad = one(k) || bad;
  }
  return bad;
}

}  // namespace

void RmsProp::step(ModelParams& params, const ParamBuffer& grads, double lr, Exec exec) {
  auto& v = params.values();
  if (v.tables.size() != grads.tables.size() || v.dense.size() != grads.dense.size() ||
      acc_.tables.size() != v.tables.size() || acc_.dense.size() != v.dense.size())
    throw std::invalid_argument("RMSprop: parameter/gradient shape mismatch");
  bool bad = rmsprop_update(v.tables, acc_.tables, grads.tables, decay_, epsilon_, lr, exec);
  bad = rmsprop_update(v.dense, acc_.dense, grads.dense, decay_, epsilon_, lr, exec) || bad;
  if (bad) throw std::runtime_error("RMSprop produced a non-finite parameter");
}

bool should_stop(std::span<const double> history, std::size_t patience) {
  if (history.size() < patience + 1) return false;
  for (std::size_t k = history.size() - patience; k < history.size(); ++k)
    if (!(history[k] > history[k - 1])) return false;
  return true;
}

std::size_t best_epoch(std::span<const double> history) {
  if (history.empty()) throw std::invalid_argument("best_epoch: empty history");
  return static_cast<std::size_t>(std::min_element(history.begin(), history.end()) - history.begin());
}

bool EarlyStopping::observe(double objective, const ModelParams& params) {
  last_improved_ = history_.empty() || objective < history_[best_index()];
  history_.push_back(objective);
  if (last_improved_) best_ = params;
  return should_stop(history_, patience_);
}

EpochMetrics validate_model(const ModelParams& params, const DecentralizedGraph& graph, const DatasetBundle& bundle,
                            const VariantFlags& flags, const TrainConfig& config,
                            std::span<const RatingRecord> split) {
  EpochMetrics m;
  if (split.empty()) {
    m.val_objective = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  const auto sample = EpochSample::full(graph);
  const OffsetCache cache({params, graph, bundle, flags, sample}, config.exec);
  std::vector<double> pred(split.size()), truth(split.size());
  double logloss = 0.0;
  double prob = 0.0;
  for (std::size_t k = 0; k < split.size(); ++k) {
    pred[k] = cache.predict(split[k].user, split[k].item);
    truth[k] = split[k].rating;
    logloss += logistic_loss(pred[k], ranking_label(split[k].rating, config.positive_threshold)).loss;
    prob += sigmoid(pred[k]);
  }
  const auto errors = mae_rmse(pred, truth);
  m.val_mae = errors.mae;
  m.val_rmse = errors.rmse;
  m.val_logloss = logloss / static_cast<double>(split.size());
  m.val_mean_probability = prob / static_cast<double>(split.size());
  m.val_objective = config.task == Task::rating ? m.val_mae + m.val_rmse : m.val_logloss;
  return m;
}

Trainer::Trainer(const DatasetBundle& bundle, const DecentralizedGraph& graph, TrainConfig config, VariantFlags flags)
    : bundle_(bundle),
      graph_(graph),
      config_(config),
      flags_(flags),
      params_(ModelParams::initialized({bundle.num_users, bundle.num_items, config.dim}, derive_seed(config.seed, 1))),
      optimizer_(params_.layout(), config.rmsprop_decay, config.rmsprop_epsilon),
      engine_(params_.layout(), config.reduction_chunks),
      grads_(ParamBuffer::zeros(params_.layout())),
      rng_(derive_seed(config.seed, 2)),
      order_(bundle.train) {
  config_.validate();
  if (graph.num_users() != bundle.num_users || graph.num_items() != bundle.num_items)
    throw std::invalid_argument("graph and bundle dimensions differ");
  if (bundle.train.empty()) throw std::invalid_argument("empty training split");
}

EpochMetrics Trainer::train_epoch(AggregationProbe* probe) {
  const auto start = std::chrono::steady_clock::now();
  std::shuffle(order_.begin(), order_.end(), rng_);
  const auto sample = EpochSample::draw(graph_, config_.K, config_.seed, epoch_, config_.exec);
  const ModelContext ctx{params_, graph_, bundle_, flags_, sample};

  double total = 0.0;
  for (std::size_t begin = 0; begin < order_.size(); begin += config_.batch_size) {
    const auto len = std::min(config_.batch_size, order_.size() - begin);
    const std::span<const RatingRecord> batch(order_.data() + begin, len);
    const double loss =
        engine_.compute(ctx, batch, config_.task, config_.positive_threshold, grads_, config_.exec, probe);
    total += loss * static_cast<double>(len);
    optimizer_.step(params_, grads_, config_.learning_rate, config_.exec);
  }
  ++epoch_;

  auto m = validate_model(params_, graph_, bundle_, flags_, config_, bundle_.validation);
  m.epoch = epoch_;
  m.train_loss = total / static_cast<double>(order_.size());
  if (std::isnan(m.val_objective)) m.val_objective = m.train_loss;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

TrainResult Trainer::run(const EpochCallback& on_epoch) {
  TrainResult result;
  EarlyStopping stopper(config_.patience);
  while (epoch_ < config_.max_epochs) {
    const auto m = train_epoch();
    result.history.push_back(m);
    const bool stop = stopper.observe(m.val_objective, params_);
    if (on_epoch) on_epoch(m, *this, stopper.last_improved());
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  params_ = stopper.best_params();
  result.best_epoch = stopper.best_index() + 1;
  return result;
}

std::string Trainer::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

Checkpoint Trainer::checkpoint(std::uint64_t dataset_hash) const {
  Checkpoint c;
  c.params = params_;
  c.flags = flags_;
  c.provenance = {dataset_hash, config_.delta,    config_.K, bundle_.split_seed, config_.seed, static_cast<int>(epoch_),
                  std::string(to_string(config_.task)), config_.positive_threshold};
  c.rng_state = rng_state();
  c.rmsprop_decay = optimizer_.decay();
  c.rmsprop_epsilon = optimizer_.epsilon();
  return c;
}

}  // namespace gdsrec
