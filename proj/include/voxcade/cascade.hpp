#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "voxcade/models.hpp"
#include "voxcade/voxelize.hpp"

namespace voxcade::cascade {

using models::CascadeBundle;
using voxcade::Tensor;
using nn::TensorDataset;

// ---- calibration records ------------------------------------------------------

// One per (sample, stage): the stage's predicted class, its top-1 softmax
// score, and whether the prediction was right.
struct CalibrationRecord {
  int predicted_class = 0;
  float score = 0;
  bool correct = false;
};

struct ThresholdEntry {
  float theta = 1.f;     // exit iff eta > theta (strict)
  float theta_p1 = 1.f;  // zero-error threshold, the revised standard's reference point
  double confidence = 1.0;
  char mode = 'q';  // 'p' = baseline standard, 'q' = incremental standard
};

struct ThresholdTable {
  int class_count = 0;
  std::array<std::vector<ThresholdEntry>, 2> stage;  // [0] = stage 1, [1] = stage 2

  static ThresholdTable constant(int class_count, float theta) {
    ThresholdTable t;
    t.class_count = class_count;
    ThresholdEntry e;
    e.theta = theta;
    e.theta_p1 = theta;
    for (auto& s : t.stage) s.assign(static_cast<size_t>(class_count), e);
    return t;
  }
};

namespace detail {

// Candidate thresholds sit just below each observed score (so that score
// passes the strict eta > theta test), plus the sentinel 1.0 which passes
// nothing. Sorted descending, with cumulative correct/incorrect counts of
// the records at or above each score.
struct Candidates {
  std::vector<float> theta;   // nextafter(score, 0)
  std::vector<int64_t> pos;   // N+ at that threshold
  std::vector<int64_t> neg;   // N- at that threshold
};

inline Candidates build_candidates(std::vector<std::pair<float, bool>> recs) {
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Candidates c;
  int64_t pos = 0, neg = 0;
  size_t i = 0;
  while (i < recs.size()) {
    float score = recs[i].first;
    while (i < recs.size() && recs[i].first == score) {
      (recs[i].second ? pos : neg) += 1;
      ++i;
    }
    c.theta.push_back(std::nextafter(score, 0.f));
    c.pos.push_back(pos);
    c.neg.push_back(neg);
  }
  return c;
}

}  // namespace detail

// Baseline standard: maximize N+ subject to N+/(N+ + N-) >= p. The sentinel
// theta = 1 (nothing passes) is always feasible; N+ ties keep the larger
// threshold.
inline ThresholdEntry calibrate_class_baseline(const std::vector<std::pair<float, bool>>& recs,
                                               double p) {
  require(p > 0.0 && p <= 1.0, errc::invalid_confidence, "p must be in (0,1]");
  ThresholdEntry best;
  best.mode = 'p';
  best.confidence = p;
  auto c = detail::build_candidates(recs);
  int64_t best_pos = 0;
  for (size_t i = 0; i < c.theta.size(); ++i) {
    int64_t denom = c.pos[i] + c.neg[i];
    bool feasible = denom == 0 || static_cast<double>(c.pos[i]) / static_cast<double>(denom) >= p;
    if (feasible && c.pos[i] > best_pos) {
      best_pos = c.pos[i];
      best.theta = c.theta[i];
    }
  }
  // theta_p1 is informative here too (the revised standard's reference)
  for (size_t i = 0; i < c.theta.size(); ++i) {
    if (c.neg[i] > 0) break;
    best.theta_p1 = c.theta[i];
  }
  return best;
}

// Revised standard (incremental confidence): with A = N+ at the zero-error
// threshold, maximize N+ subject to (N+ - A) / (N+ - A + N-) >= q, where the
// 0/0 case counts as feasible (the zero-error threshold itself).
inline ThresholdEntry calibrate_class_incremental(const std::vector<std::pair<float, bool>>& recs,
                                                  double q) {
  require(q > 0.0 && q <= 1.0, errc::invalid_confidence, "q must be in (0,1]");
  ThresholdEntry best;
  best.mode = 'q';
  best.confidence = q;
  auto c = detail::build_candidates(recs);

  int64_t a = 0;
  for (size_t i = 0; i < c.theta.size(); ++i) {
    if (c.neg[i] > 0) break;
    best.theta_p1 = c.theta[i];
    a = c.pos[i];
  }
  best.theta = best.theta_p1;
  int64_t best_pos = a;
  for (size_t i = 0; i < c.theta.size(); ++i) {
    int64_t inc = c.pos[i] - a;
    int64_t denom = inc + c.neg[i];
    bool feasible = denom == 0 || static_cast<double>(inc) / static_cast<double>(denom) >= q;
    if (feasible && c.pos[i] > best_pos) {
      best_pos = c.pos[i];
      best.theta = c.theta[i];
    }
  }
  return best;
}

// Per-class calibration for one stage; classes with no records keep theta = 1
// (they never exit early).
inline std::vector<ThresholdEntry> calibrate_stage(const std::vector<CalibrationRecord>& records,
                                                   int class_count, char mode, double confidence) {
  require(mode == 'p' || mode == 'q', errc::invalid_confidence, "mode must be 'p' or 'q'");
  std::vector<std::vector<std::pair<float, bool>>> per_class(static_cast<size_t>(class_count));
  for (const auto& r : records) {
    require(r.predicted_class >= 0 && r.predicted_class < class_count, errc::invalid_confidence,
            "record class out of range");
    per_class[static_cast<size_t>(r.predicted_class)].emplace_back(r.score, r.correct);
  }
  std::vector<ThresholdEntry> out(static_cast<size_t>(class_count));
  for (int c = 0; c < class_count; ++c) {
    auto& recs = per_class[static_cast<size_t>(c)];
    if (recs.empty()) {
      out[static_cast<size_t>(c)].mode = mode;
      out[static_cast<size_t>(c)].confidence = confidence;
      continue;  // theta = theta_p1 = 1: pass nothing
    }
    out[static_cast<size_t>(c)] = (mode == 'p') ? calibrate_class_baseline(recs, confidence)
                                                : calibrate_class_incremental(recs, confidence);
  }
  return out;
}

// ---- per-sample stage outputs and replay ------------------------------------------

enum class Difficulty { easy = 0, moderate = 1, hard = 2 };

// All three stage predictions for one sample; enough to replay any threshold
// table without touching the networks again.
struct StageOutputs {
  std::array<int, 3> cls{};
  std::array<float, 3> eta{};
  std::array<bool, 3> correct{};
};

inline Tensor<float> stage1_input(const Tensor<float>& full, int resolution, int channels) {
  // [N, C, R, R, R] -> centered strided 8^3 per channel -> [N, C*512]
  int64_t n = full.dim(0);
  Tensor<float> out({n, static_cast<int64_t>(channels) * 512});
  int64_t vol = static_cast<int64_t>(resolution) * resolution * resolution;
  for (int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      std::vector<float> channel(full.data.begin() + (i * channels + c) * vol,
                                 full.data.begin() + (i * channels + c + 1) * vol);
      auto small = voxcade::detail::downsample_values(channel, resolution, 8);
      std::copy(small.begin(), small.end(), out.data.begin() + i * channels * 512 + c * 512);
    }
  }
  return out;
}

inline std::vector<StageOutputs> compute_stage_outputs(const CascadeBundle& bundle,
                                                       const TensorDataset& data,
                                                       int64_t batch = 16) {
  require(data.size() > 0, errc::empty_dataset, "empty dataset");
  require(data.sample_shape ==
              std::vector<int64_t>({bundle.channels, bundle.resolution, bundle.resolution, bundle.resolution}),
          errc::variant_mismatch,
          "dataset shape " + shape_str(data.sample_shape) + " does not match bundle input");
  int64_t n = data.size();
  std::vector<StageOutputs> out(static_cast<size_t>(n));
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;

  parallel_for((n + batch - 1) / batch, [&](int64_t blo, int64_t bhi) {
    for (int64_t bidx = blo; bidx < bhi; ++bidx) {
      int64_t lo = bidx * batch, hi = std::min(n, lo + batch);
      Tensor<float> x = data.gather(idx.data() + lo, hi - lo);
      Tensor<float> s1 = bundle.stage1.infer(stage1_input(x, bundle.resolution, bundle.channels));
      Tensor<float> feat = models::trunk_features(bundle, x);
      Tensor<float> s2 = models::stage2_head_logits(bundle, feat);
      Tensor<float> s3 = bundle.stage3_tail.infer(feat);
      const Tensor<float>* logits[3] = {&s1, &s2, &s3};
      for (int64_t i = lo; i < hi; ++i) {
        int label = data.labels[static_cast<size_t>(i)];
        for (int s = 0; s < 3; ++s) {
          int64_t c = logits[s]->dim(1);
          auto pred = models::prediction_from_logits(logits[s]->data.data() + (i - lo) * c, c);
          out[static_cast<size_t>(i)].cls[static_cast<size_t>(s)] = pred.label;
          out[static_cast<size_t>(i)].eta[static_cast<size_t>(s)] = pred.eta;
          out[static_cast<size_t>(i)].correct[static_cast<size_t>(s)] = pred.label == label;
        }
      }
    }
  });
  return out;
}

struct CascadeStats {
  int64_t total = 0;
  // pass = samples exiting at the stage, correct = right answers among them
  std::array<int64_t, 3> pass{};
  std::array<int64_t, 3> correct{};
  double lambda1 = 0;  // easy fraction of the whole set
  double lambda2 = 0;  // moderate fraction
  double accuracy = 0;
  std::vector<Difficulty> tags;
  // per true-class difficulty histogram (rows: easy/moderate/hard)
  std::array<std::vector<int64_t>, 3> per_class;
};

// Replays threshold decisions over precomputed stage outputs. skip_stage
// (1 or 2) evaluates the two-stage ablation with that stage removed.
inline CascadeStats replay_cascade(const std::vector<StageOutputs>& outputs,
                                   const std::vector<uint16_t>& labels, const ThresholdTable& table,
                                   int skip_stage = 0) {
  require(!outputs.empty(), errc::empty_dataset, "no stage outputs to replay");
  CascadeStats stats;
  stats.total = static_cast<int64_t>(outputs.size());
  stats.tags.resize(outputs.size());
  for (auto& v : stats.per_class) v.assign(static_cast<size_t>(table.class_count), 0);

  for (size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    int exit_stage = 2;
    if (skip_stage != 1 &&
        o.eta[0] > table.stage[0][static_cast<size_t>(o.cls[0])].theta) {
      exit_stage = 0;
    } else if (skip_stage != 2 &&
               o.eta[1] > table.stage[1][static_cast<size_t>(o.cls[1])].theta) {
      exit_stage = 1;
    }
    stats.pass[static_cast<size_t>(exit_stage)] += 1;
    stats.correct[static_cast<size_t>(exit_stage)] += o.correct[static_cast<size_t>(exit_stage)] ? 1 : 0;
    stats.tags[i] = static_cast<Difficulty>(exit_stage);
    stats.per_class[static_cast<size_t>(exit_stage)][labels[i]] += 1;
  }
  stats.lambda1 = static_cast<double>(stats.pass[0]) / static_cast<double>(stats.total);
  stats.lambda2 = static_cast<double>(stats.pass[1]) / static_cast<double>(stats.total);
  stats.accuracy =
      static_cast<double>(stats.correct[0] + stats.correct[1] + stats.correct[2]) /
      static_cast<double>(stats.total);
  return stats;
}

// ---- live inference ------------------------------------------------------------

struct CascadeDecision {
  int label = 0;
  int exit_stage = 0;  // 1, 2 or 3
  float eta = 0;
  Difficulty difficulty = Difficulty::easy;
};

// Stage 1 sees the 8^3 downsample; uncertain samples fall through to the
// stage-2 head and finally the stage-3 tail, reusing the trunk features.
inline CascadeDecision cascade_infer(const CascadeBundle& bundle, const ThresholdTable& table,
                                     const Tensor<float>& sample, int skip_stage = 0) {
  CascadeDecision d;
  if (skip_stage != 1) {
    Tensor<float> s1 = bundle.stage1.infer(stage1_input(sample, bundle.resolution, bundle.channels));
    auto pred = models::prediction_from_logits(s1.data.data(), s1.dim(1));
    if (pred.eta > table.stage[0][static_cast<size_t>(pred.label)].theta) {
      return {pred.label, 1, pred.eta, Difficulty::easy};
    }
  }
  Tensor<float> feat = models::trunk_features(bundle, sample);
  if (skip_stage != 2) {
    Tensor<float> s2 = models::stage2_head_logits(bundle, feat);
    auto pred = models::prediction_from_logits(s2.data.data(), s2.dim(1));
    if (pred.eta > table.stage[1][static_cast<size_t>(pred.label)].theta) {
      return {pred.label, 2, pred.eta, Difficulty::moderate};
    }
  }
  Tensor<float> s3 = bundle.stage3_tail.infer(feat);
  auto pred = models::prediction_from_logits(s3.data.data(), s3.dim(1));
  return {pred.label, 3, pred.eta, Difficulty::hard};
}

// ---- mean inference time ----------------------------------------------------------

// T_mean = 1*T1 + (1 - l1)*T2 + (1 - l1 - l2)*T3
inline double mean_time(double t1, double t2, double t3, double lambda1, double lambda2) {
  require(lambda1 >= 0 && lambda2 >= 0 && lambda1 + lambda2 <= 1.0 + 1e-12, errc::invalid_rates,
          "pass rates must be non-negative with lambda1 + lambda2 <= 1");
  require(t1 > 0 && t2 > 0 && t3 > 0, errc::invalid_rates, "stage times must be positive");
  return t1 + (1.0 - lambda1) * t2 + (1.0 - lambda1 - lambda2) * t3;
}

struct TimingReport {
  double t1 = 0, t2 = 0, t3 = 0;  // mean seconds per executed forward
  double t_mean_formula = 0;
  double t_mean_measured = 0;  // end-to-end mean over the timed samples
  int64_t timed_samples = 0;
};

struct CascadeEvalResult {
  CascadeStats stats;
  TimingReport timing;
  std::vector<StageOutputs> outputs;
};

struct EvalOptions {
  bool measure_timing = true;
  int64_t timing_max_samples = 0;  // 0 = the whole set
  int skip_stage = 0;              // ablation: 1 or 2
};

// Accuracy bookkeeping runs batched (and parallel); the timing pass rides a
// second sequential single-threaded sweep that actually early-exits, so the
// measured end-to-end mean is comparable with the Eq.-5 value assembled from
// the measured per-stage means.
inline CascadeEvalResult evaluate_cascade(const CascadeBundle& bundle, const ThresholdTable& table,
                                          const TensorDataset& data, const EvalOptions& opts = {}) {
  CascadeEvalResult result;
  result.outputs = compute_stage_outputs(bundle, data);
  result.stats = replay_cascade(result.outputs, data.labels, table, opts.skip_stage);

  if (opts.measure_timing) {
    scoped_thread_limit serial(1);
    using clock = std::chrono::steady_clock;
    int64_t n = data.size();
    if (opts.timing_max_samples > 0) n = std::min(n, opts.timing_max_samples);
    double t1 = 0, t2 = 0, t3 = 0, total = 0;
    int64_t n1 = 0, n2 = 0, n3 = 0;
    for (int64_t i = 0; i < n; ++i) {
      Tensor<float> x = data.sample(i);
      auto start = clock::now();
      bool exited = false;
      if (opts.skip_stage != 1) {
        auto s0 = clock::now();
        Tensor<float> s1 = bundle.stage1.infer(stage1_input(x, bundle.resolution, bundle.channels));
        auto pred = models::prediction_from_logits(s1.data.data(), s1.dim(1));
        t1 += std::chrono::duration<double>(clock::now() - s0).count();
        ++n1;
        exited = pred.eta > table.stage[0][static_cast<size_t>(pred.label)].theta;
      }
      if (!exited) {
        auto s0 = clock::now();
        Tensor<float> feat = models::trunk_features(bundle, x);
        if (opts.skip_stage != 2) {
          Tensor<float> s2 = models::stage2_head_logits(bundle, feat);
          auto pred = models::prediction_from_logits(s2.data.data(), s2.dim(1));
          t2 += std::chrono::duration<double>(clock::now() - s0).count();
          ++n2;
          exited = pred.eta > table.stage[1][static_cast<size_t>(pred.label)].theta;
          if (!exited) {
            auto s1t = clock::now();
            bundle.stage3_tail.infer(feat);
            t3 += std::chrono::duration<double>(clock::now() - s1t).count();
            ++n3;
          }
        } else {
          bundle.stage3_tail.infer(feat);
          t3 += std::chrono::duration<double>(clock::now() - s0).count();
          ++n3;
        }
      }
      total += std::chrono::duration<double>(clock::now() - start).count();
    }
    result.timing.timed_samples = n;
    result.timing.t_mean_measured = total / static_cast<double>(n);
    result.timing.t1 = n1 ? t1 / static_cast<double>(n1) : 0;
    result.timing.t2 = n2 ? t2 / static_cast<double>(n2) : 0;
    result.timing.t3 = n3 ? t3 / static_cast<double>(n3) : 0;
    // stages nothing reached still need an estimate for the report
    auto force_time = [&](int stage) {
      int64_t m = std::min<int64_t>(8, data.size());
      auto s0 = clock::now();
      for (int64_t i = 0; i < m; ++i) {
        Tensor<float> x = data.sample(i);
        Tensor<float> feat = models::trunk_features(bundle, x);
        if (stage == 2) models::stage2_head_logits(bundle, feat);
        else bundle.stage3_tail.infer(feat);
      }
      return std::chrono::duration<double>(clock::now() - s0).count() / static_cast<double>(m);
    };
    if (!n2 && opts.skip_stage != 2) result.timing.t2 = force_time(2);
    if (!n3) result.timing.t3 = force_time(3);
    const auto& t = result.timing;
    double l1 = result.stats.lambda1, l2 = result.stats.lambda2;
    switch (opts.skip_stage) {
      case 1:  // every sample starts at stage 2
        result.timing.t_mean_formula = t.t2 + (1.0 - l2) * t.t3;
        break;
      case 2:  // stage-1 misses go straight to stage 3
        result.timing.t_mean_formula = t.t1 + (1.0 - l1) * t.t3;
        break;
      default:
        result.timing.t_mean_formula = mean_time(t.t1, t.t2, t.t3, l1, l2);
    }
  }
  return result;
}

// ---- confidence grid search ----------------------------------------------------------

struct GridPoint {
  char mode1 = 'q';
  double v1 = 0.8;
  char mode2 = 'q';
  double v2 = 0.66;
};

struct GridCell {
  GridPoint point;
  ThresholdTable table;
  CascadeStats stats;
};

struct GridSearchResult {
  std::vector<GridCell> cells;
  size_t best_index = 0;  // argmax accuracy
};

inline ThresholdTable calibrate_table(const std::vector<CalibrationRecord>& stage1_records,
                                      const std::vector<CalibrationRecord>& stage2_records,
                                      int class_count, const GridPoint& point) {
  ThresholdTable table;
  table.class_count = class_count;
  table.stage[0] = calibrate_stage(stage1_records, class_count, point.mode1, point.v1);
  table.stage[1] = calibrate_stage(stage2_records, class_count, point.mode2, point.v2);
  return table;
}

// Calibrates every confidence pair on the calibration records and replays it
// on the evaluation outputs (the paper tunes on the test set; pass a held-out
// split here for the honest protocol).
inline GridSearchResult confidence_grid_search(const std::vector<CalibrationRecord>& stage1_records,
                                               const std::vector<CalibrationRecord>& stage2_records,
                                               int class_count, const std::vector<GridPoint>& grid,
                                               const std::vector<StageOutputs>& eval_outputs,
                                               const std::vector<uint16_t>& eval_labels) {
  require(!grid.empty(), errc::empty_grid, "confidence grid is empty");
  GridSearchResult result;
  for (const auto& point : grid) {
    GridCell cell;
    cell.point = point;
    cell.table = calibrate_table(stage1_records, stage2_records, class_count, point);
    cell.stats = replay_cascade(eval_outputs, eval_labels, cell.table);
    result.cells.push_back(std::move(cell));
  }
  for (size_t i = 1; i < result.cells.size(); ++i) {
    if (result.cells[i].stats.accuracy > result.cells[result.best_index].stats.accuracy)
      result.best_index = i;
  }
  return result;
}

// Stage records for calibration, derived from precomputed outputs.
inline std::vector<CalibrationRecord> stage_records(const std::vector<StageOutputs>& outputs, int stage) {
  std::vector<CalibrationRecord> out;
  out.reserve(outputs.size());
  for (const auto& o : outputs) {
    out.push_back({o.cls[static_cast<size_t>(stage)], o.eta[static_cast<size_t>(stage)],
                   o.correct[static_cast<size_t>(stage)]});
  }
  return out;
}

// Table-2-style CSV: one column per confidence combination.
inline std::string grid_csv(const GridSearchResult& result) {
  auto mode_str = [](char m, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c=%g", m, v);
    return std::string(buf);
  };
  std::string out = "row";
  for (const auto& cell : result.cells)
    out += "," + mode_str(cell.point.mode1, cell.point.v1) + " " + mode_str(cell.point.mode2, cell.point.v2);
  out += "\n";
  auto emit = [&](const std::string& name, auto getter) {
    out += name;
    for (const auto& cell : result.cells) out += "," + getter(cell);
    out += "\n";
  };
  emit("stage-1 pass/correct", [](const GridCell& c) {
    return std::to_string(c.stats.pass[0]) + "/" + std::to_string(c.stats.correct[0]);
  });
  emit("stage-2 pass/correct", [](const GridCell& c) {
    return std::to_string(c.stats.pass[1]) + "/" + std::to_string(c.stats.correct[1]);
  });
  emit("accuracy", [](const GridCell& c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.4f", c.stats.accuracy);
    return std::string(buf);
  });
  return out;
}

// ---- threshold table serialization ------------------------------------------------
// structured text: one line per (stage, class): stage class theta theta_p1
// mode confidence. %.9g keeps float32 round trips exact.

inline std::string threshold_table_to_text(const ThresholdTable& table) {
  std::string out = "classes " + std::to_string(table.class_count) + "\n";
  char buf[128];
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < table.class_count; ++c) {
      const auto& e = table.stage[static_cast<size_t>(s)][static_cast<size_t>(c)];
      std::snprintf(buf, sizeof(buf), "%d %d %.9g %.9g %c %.9g\n", s + 1, c, e.theta, e.theta_p1,
                    e.mode, e.confidence);
      out += buf;
    }
  }
  return out;
}

inline ThresholdTable threshold_table_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  in >> word;
  require(word == "classes", errc::bad_magic, "threshold table must start with 'classes'");
  ThresholdTable table;
  in >> table.class_count;
  require(table.class_count > 0, errc::bad_magic, "bad class count");
  for (auto& s : table.stage) s.assign(static_cast<size_t>(table.class_count), ThresholdEntry{});
  int s, c;
  while (in >> s >> c) {
    ThresholdEntry e;
    in >> e.theta >> e.theta_p1 >> e.mode >> e.confidence;
    require(s >= 1 && s <= 2 && c >= 0 && c < table.class_count, errc::bad_magic,
            "threshold entry out of range");
    table.stage[static_cast<size_t>(s - 1)][static_cast<size_t>(c)] = e;
  }
  return table;
}

}  // namespace voxcade::cascade
