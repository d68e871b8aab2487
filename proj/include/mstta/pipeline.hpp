#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mstta/cache.hpp"
#include "mstta/core.hpp"
#include "mstta/data_io.hpp"
#include "mstta/errors.hpp"
#include "mstta/meanshift.hpp"

namespace mstta {

enum class RunMode { clip_only, baseline, ms_tta };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::clip_only: return "clip";
    case RunMode::baseline: return "baseline";
    default: return "ms-tta";
  }
}

inline RunMode run_mode_from_string(const std::string& s) {
  if (s == "clip" || s == "clip_only" || s == "clip-only") return RunMode::clip_only;
  if (s == "baseline") return RunMode::baseline;
  if (s == "ms-tta" || s == "ms_tta" || s == "mstta") return RunMode::ms_tta;
  throw OutOfRangeError("unknown mode: " + s);
}

struct RunConfig {
  RunMode mode = RunMode::ms_tta;
  double lambda = 1.0;
  MeanShiftConfig ms;
  std::size_t cache_q = 3;
  std::optional<double> entropy_threshold;  // disabled unless set
  double softmax_scale = kDefaultSoftmaxScale;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw OutOfRangeError("lambda must be finite and >= 0");
    if (cache_q == 0) throw OutOfRangeError("cache capacity Q must be positive");
    if (!(softmax_scale > 0.0)) throw OutOfRangeError("softmax scale must be positive");
    if (entropy_threshold && !std::isfinite(*entropy_threshold)) {
      throw OutOfRangeError("entropy threshold must be finite");
    }
    ms.validate();
  }
};

struct Prediction {
  std::size_t predicted_class = 0;
  Logits logits_final;
  Logits logits_clip;
  Logits logits_aux;
  double entropy_clip = 0.0;
  Embedding refined;  // the z actually scored against the cache
};

struct Report {
  double top1_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_counts;
  std::size_t n_samples = 0;
  double compactness_before = 0.0;
  double compactness_after = 0.0;
  bool norm_warning = false;
  RunConfig config_echo;
  std::int64_t wall_time_ms = 0;
};

/// Mutable per-stream adaptation state. Tests may assemble this directly
/// (e.g. with a zero-capacity cache); evaluate_stream builds it from config.
struct StreamState {
  FeatureBank bank;
  EntropyCache cache;
  std::uint64_t next_arrival = 0;
};

inline StreamState make_stream_state(std::size_t dim, std::size_t num_classes,
                                     const RunConfig& cfg) {
  return StreamState{FeatureBank(dim, cfg.ms.bank_capacity),
                     EntropyCache(num_classes, cfg.cache_q, cfg.entropy_threshold)};
}

/// One streaming step. Scoring strictly precedes the cache/bank insertion of
/// the current sample, so a sample never retrieves itself.
inline Prediction process_sample(const Embedding& f, StreamState& state, const RunConfig& cfg,
                                 const TextClassMatrix& W) {
  Prediction out;
  out.logits_clip = zero_shot_logits(f, W);
  out.entropy_clip = entropy(softmax(out.logits_clip, cfg.softmax_scale));

  out.refined = (cfg.mode == RunMode::ms_tta) ? shift_streaming(f, state.bank, cfg.ms) : f;

  if (cfg.mode == RunMode::clip_only) {
    out.logits_aux = Logits::zeros(W.num_classes());
    out.logits_final = out.logits_clip;
  } else {
    out.logits_aux = cache_logits(out.refined, state.cache);
    const double lambda = (cfg.mode == RunMode::baseline) ? 1.0 : cfg.lambda;
    std::vector<double> fused(W.num_classes());
    for (std::size_t c = 0; c < fused.size(); ++c) {
      fused[c] = out.logits_clip[c] + lambda * out.logits_aux[c];
    }
    out.logits_final = Logits(std::move(fused));
  }
  out.predicted_class = one_hot_argmax(out.logits_final).class_index();

  if (cfg.mode != RunMode::clip_only) {
    state.cache.offer(CacheEntry{out.refined, one_hot_argmax(out.logits_clip), out.entropy_clip,
                                 state.next_arrival++});
  }
  if (cfg.mode == RunMode::ms_tta) {
    state.bank.push(cfg.ms.neighbor_source == NeighborSource::bank_raw ? f : out.refined);
  }
  return out;
}

struct CompactnessMetrics {
  double intra = 0.0;
  double inter = 0.0;
};

/// intra: mean cosine of each sample to its own normalized class centroid.
/// inter: mean pairwise cosine between distinct normalized class centroids.
inline CompactnessMetrics compactness_metrics(const std::vector<Embedding>& embeddings,
                                              const std::vector<std::int64_t>& labels) {
  if (embeddings.size() != labels.size()) {
    throw DimMismatchError("compactness_metrics: embedding/label count mismatch");
  }
  if (embeddings.empty()) throw DegenerateClassError("compactness_metrics: no samples");
  const std::size_t d = embeddings.front().dim();
  std::int64_t max_label = 0;
  for (std::int64_t y : labels) {
    if (y < 0) throw LabelOutOfRangeError("compactness_metrics: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t C = static_cast<std::size_t>(max_label) + 1;
  std::vector<std::vector<double>> sums(C, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t j = 0; j < d; ++j) sums[c][j] += embeddings[i][j];
  }
  std::vector<std::optional<Embedding>> centroids(C);
  std::size_t present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] == 0) continue;
    ++present;
    if (detail::l2_norm(sums[c]) < kZeroNormEps) {
      throw DegenerateClassError("compactness_metrics: class " + std::to_string(c) +
                                 " centroid has near-zero norm");
    }
    centroids[c] = l2_normalize(std::move(sums[c]));
  }
  if (present < 2) throw DegenerateClassError("compactness_metrics: fewer than 2 classes present");

  CompactnessMetrics m;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    m.intra += dot(embeddings[i], *centroids[static_cast<std::size_t>(labels[i])]);
  }
  m.intra /= static_cast<double>(embeddings.size());

  double pair_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < C; ++a) {
    if (!centroids[a]) continue;
    for (std::size_t b = a + 1; b < C; ++b) {
      if (!centroids[b]) continue;
      pair_sum += dot(*centroids[a], *centroids[b]);
      ++pairs;
    }
  }
  m.inter = pair_sum / static_cast<double>(pairs);
  return m;
}

/// Batch-size-1 pass over the dataset in stored order. Pass `capture` to
/// receive the end-of-stream bank/cache state (used by the CLI cache dump).
inline Report evaluate_stream(const EmbDataset& ds, const RunConfig& cfg,
                              std::optional<StreamState>* capture = nullptr) {
  cfg.validate();
  if (ds.n() == 0) throw EmptyDatasetError("evaluate_stream: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();

  const TextClassMatrix& W = ds.text_matrix();
  const std::size_t C = ds.num_classes();
  StreamState state = make_stream_state(ds.dim(), C, cfg);

  std::vector<Embedding> before;
  std::vector<Embedding> after;
  before.reserve(ds.n());
  after.reserve(ds.n());
  std::vector<std::size_t> correct(C, 0);
  std::vector<std::size_t> counts(C, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const Embedding& f = ds.feature(i);
    Prediction p = process_sample(f, state, cfg, W);
    const auto y = static_cast<std::size_t>(ds.label(i));
    ++counts[y];
    if (p.predicted_class == y) {
      ++correct[y];
      ++total_correct;
    }
    before.push_back(f);
    after.push_back(std::move(p.refined));
  }

  Report r;
  r.n_samples = ds.n();
  r.top1_accuracy = static_cast<double>(total_correct) / static_cast<double>(ds.n());
  r.per_class_accuracy.resize(C, 0.0);
  r.per_class_counts = counts;
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] > 0) {
      r.per_class_accuracy[c] = static_cast<double>(correct[c]) / static_cast<double>(counts[c]);
    }
  }
  r.compactness_before = compactness_metrics(before, ds.labels()).intra;
  r.compactness_after = compactness_metrics(after, ds.labels()).intra;
  r.norm_warning = ds.norm_warning();
  r.config_echo = cfg;
  if (capture) capture->emplace(std::move(state));
  r.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return r;
}

enum class SweepAxis { alpha, k, q, lambda };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::k: return "k";
    case SweepAxis::q: return "q";
    default: return "lambda";
  }
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "k") return SweepAxis::k;
  if (s == "q") return SweepAxis::q;
  if (s == "lambda") return SweepAxis::lambda;
  throw OutOfRangeError("unknown sweep axis: " + s);
}

struct SweepRow {
  double value = 0.0;
  Report report;
};

namespace detail {

inline std::size_t positive_integer_value(double v, const char* axis) {
  if (!(v >= 1.0) || v != std::floor(v)) {
    throw OutOfRangeError(std::string("sweep axis ") + axis + " requires positive integers");
  }
  return static_cast<std::size_t>(v);
}

inline RunConfig apply_axis(RunConfig cfg, SweepAxis axis, double v) {
  switch (axis) {
    case SweepAxis::alpha: cfg.ms.alpha = v; break;
    case SweepAxis::k: cfg.ms.k = positive_integer_value(v, "k"); break;
    case SweepAxis::q: cfg.cache_q = positive_integer_value(v, "q"); break;
    case SweepAxis::lambda: cfg.lambda = v; break;
  }
  return cfg;
}

}  // namespace detail

/// One independent evaluation per value; rows come back sorted by value.
/// max_threads > 1 fans the evaluations out over workers, each with private
/// state; assembly order is by value regardless of completion order.
inline std::vector<SweepRow> sweep(const EmbDataset& ds, const RunConfig& base_cfg,
                                   SweepAxis axis, std::vector<double> values,
                                   std::size_t max_threads = 1) {
  if (values.empty()) throw OutOfRangeError("sweep: values must be non-empty");
  std::sort(values.begin(), values.end());
  for (double v : values) detail::apply_axis(base_cfg, axis, v).validate();

  std::vector<SweepRow> rows(values.size());
  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(max_threads, 1),
                                                    values.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      rows[i] = {values[i], evaluate_stream(ds, detail::apply_axis(base_cfg, axis, values[i]))};
    }
    return rows;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      rows[i] = {values[i], evaluate_stream(ds, detail::apply_axis(base_cfg, axis, values[i]))};
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();
  return rows;
}

}  // namespace mstta
