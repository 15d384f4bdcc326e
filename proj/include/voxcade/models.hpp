#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "voxcade/net.hpp"
#include "voxcade/parallel.hpp"
#include "voxcade/sha256.hpp"

namespace voxcade::models {

using nn::Mode;
using nn::Net;
using nn::TensorDataset;

// ---- stage architectures ---------------------------------------------------
//
// Stage 1: FC net on the 8^3-downsampled field, two hidden layers (256, 128).
// Stage 2: two conv blocks (conv3 + BN + ReLU + pool2) with channels 16 -> 32,
//          then at 64^3 a size-3 pool taking 14^3x32 to 4^3x32, then a small
//          FC head. At 32^3 the size-3 pool is dropped (head sees 6^3x32).
// Stage 3: consumes the stage-2 trunk output (before the size-3 pool); two
//          more blocks doubling channels to 128. At 64^3 the blocks pool
//          (14->12->6->4->2), at 32^3 the convolutions alone reach 2^3x128.

struct StageSpec {
  int stage_id = 0;           // 1 | 2 | 3
  std::string descriptor;     // layer list, parseable by net_from_descriptor
  size_t trunk_layers = 0;    // stage 2: layers shared with stage 3
};

inline StageSpec build_fcnet(int class_count, int input_dim = 512) {
  StageSpec s;
  s.stage_id = 1;
  s.descriptor = "input:" + std::to_string(input_dim) + "|fc:256|relu|fc:128|relu|fc:" +
                 std::to_string(class_count);
  return s;
}

inline StageSpec build_stage2(int class_count, int input_resolution = 64, int channels = 1) {
  require(input_resolution == 64 || input_resolution == 32, errc::unsupported_resolution,
          "stage 2 is defined for 64^3 (paper) and the experimental 32^3 variant");
  StageSpec s;
  s.stage_id = 2;
  std::string r = std::to_string(input_resolution);
  std::string c = std::to_string(channels);
  s.descriptor = "input:" + c + "x" + r + "x" + r + "x" + r +
                 "|conv3:16,3|bn:16|relu|pool3:2,2"
                 "|conv3:32,3|bn:32|relu|pool3:2,2";
  s.trunk_layers = 8;
  if (input_resolution == 64) s.descriptor += "|pool3:3,3";
  s.descriptor += "|flatten|fc:128|relu|fc:" + std::to_string(class_count);
  return s;
}

inline StageSpec build_stage3(int class_count, int input_resolution = 64) {
  require(input_resolution == 64 || input_resolution == 32, errc::unsupported_resolution,
          "stage 3 is defined for 64^3 (paper) and the experimental 32^3 variant");
  StageSpec s;
  s.stage_id = 3;
  if (input_resolution == 64) {
    s.descriptor =
        "input:32x14x14x14"
        "|conv3:64,3|bn:64|relu|pool3:2,2"
        "|conv3:128,3|bn:128|relu|pool3:2,2";
  } else {
    s.descriptor =
        "input:32x6x6x6"
        "|conv3:64,3|bn:64|relu"
        "|conv3:128,3|bn:128|relu";
  }
  s.descriptor += "|flatten|fc:256|relu|fc:" + std::to_string(class_count);
  return s;
}

// 2-D MNIST reference networks (FC-Net(784,10), FC-Net(784,128,10), small CNN)
inline std::vector<StageSpec> build_mnist_nets(int class_count = 10) {
  std::vector<StageSpec> nets(3);
  nets[0].stage_id = 1;
  nets[0].descriptor = "input:784|fc:" + std::to_string(class_count);
  nets[1].stage_id = 1;
  nets[1].descriptor = "input:784|fc:128|relu|fc:" + std::to_string(class_count);
  nets[2].stage_id = 2;
  nets[2].descriptor =
      "input:1x28x28|conv2:16,3|relu|pool2:2,2|conv2:32,3|relu|pool2:2,2"
      "|flatten|fc:128|relu|fc:" + std::to_string(class_count);
  return nets;
}

// ---- prediction --------------------------------------------------------------

struct Prediction {
  int label = 0;
  float eta = 0;  // top-1 softmax probability
  std::vector<float> probs;
};

inline std::vector<float> softmax_row(const float* logits, int64_t c) {
  std::vector<float> p(static_cast<size_t>(c));
  float mx = logits[0];
  for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits[j]);
  float sum = 0;
  for (int64_t j = 0; j < c; ++j) {
    p[static_cast<size_t>(j)] = std::exp(logits[j] - mx);
    sum += p[static_cast<size_t>(j)];
  }
  float inv = 1.f / sum;
  for (auto& v : p) v *= inv;
  return p;
}

inline Prediction prediction_from_logits(const float* logits, int64_t c) {
  Prediction out;
  out.probs = softmax_row(logits, c);
  // ties resolve to the lowest class index
  for (int64_t j = 1; j < c; ++j)
    if (out.probs[static_cast<size_t>(j)] > out.probs[static_cast<size_t>(out.label)])
      out.label = static_cast<int>(j);
  out.eta = out.probs[static_cast<size_t>(out.label)];
  return out;
}

inline Prediction predict(const Net<float>& net, const Tensor<float>& sample) {
  Tensor<float> logits = net.infer(sample);
  return prediction_from_logits(logits.data.data(), logits.dim(1));
}

// ---- evaluation ----------------------------------------------------------------

inline double evaluate_accuracy(const Net<float>& net, const TensorDataset& data,
                                int64_t batch = 64) {
  require(data.size() > 0, errc::empty_dataset, "empty evaluation set");
  int64_t n = data.size();
  std::vector<uint8_t> correct(static_cast<size_t>(n), 0);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;

  parallel_for((n + batch - 1) / batch, [&](int64_t blo, int64_t bhi) {
    for (int64_t bidx = blo; bidx < bhi; ++bidx) {
      int64_t lo = bidx * batch, hi = std::min(n, lo + batch);
      Tensor<float> x = data.gather(idx.data() + lo, hi - lo);
      Tensor<float> logits = net.infer(x);
      int64_t c = logits.dim(1);
      for (int64_t i = lo; i < hi; ++i) {
        const float* row = logits.data.data() + (i - lo) * c;
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
          if (row[j] > row[best]) best = static_cast<int>(j);
        correct[static_cast<size_t>(i)] = (best == data.labels[static_cast<size_t>(i)]) ? 1 : 0;
      }
    }
  });
  int64_t ok = 0;
  for (auto v : correct) ok += v;
  return static_cast<double>(ok) / static_cast<double>(n);
}

// ---- training -------------------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  int64_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay = 0.2;                       // applied at the milestones below
  std::vector<double> milestones = {0.5, 0.75};  // fractions of total epochs
  uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double train_acc = 0;
  double val_acc = 0;
  double loss = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_acc = 0;

  std::string to_csv() const {
    std::string out = "epoch,train_acc,val_acc,loss\n";
    for (const auto& e : epochs) {
      out += std::to_string(e.epoch) + "," + std::to_string(e.train_acc) + "," +
             std::to_string(e.val_acc) + "," + std::to_string(e.loss) + "\n";
    }
    return out;
  }
};

namespace detail {

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (double m : cfg.milestones) {
    if (epoch > m * cfg.epochs) lr *= cfg.lr_decay;
  }
  return lr;
}

// Marks layers frozen from parameter-name prefixes; partial layer freezes are
// rejected so the freeze boundary always falls between layers.
inline void apply_frozen(Net<float>& net, const std::vector<std::string>& frozen_prefixes) {
  if (frozen_prefixes.empty()) return;
  auto params = net.params();
  for (const auto& prefix : frozen_prefixes) {
    bool hit = false;
    for (auto& p : params) hit = hit || p.name.rfind(prefix, 0) == 0;
    require(hit, errc::frozen_name_unknown, "no parameter matches prefix '" + prefix + "'");
  }
  auto matches = [&](const std::string& name) {
    for (const auto& prefix : frozen_prefixes)
      if (name.rfind(prefix, 0) == 0) return true;
    return false;
  };
  for (size_t i = 0; i < net.layers.size(); ++i) {
    std::vector<nn::ParamRef<float>> ps;
    net.layers[i]->collect_params(ps, "l" + std::to_string(i) + ".");
    if (ps.empty()) continue;
    size_t n_match = 0;
    for (auto& p : ps) n_match += matches(p.name) ? 1 : 0;
    if (n_match == ps.size()) net.layers[i]->frozen = true;
    else if (n_match > 0)
      fail(errc::frozen_name_unknown, "freeze prefix splits layer l" + std::to_string(i));
  }
}

}  // namespace detail

// Minibatch SGD with per-epoch shuffling. Keeps the parameters of the best
// validation epoch (when a validation set is given) and restores them before
// returning. Frozen layers are never updated and keep eval-mode semantics.
inline TrainHistory train_stage(Net<float>& net, const TensorDataset& train,
                                const TensorDataset* val, const TrainConfig& cfg,
                                const std::vector<std::string>& frozen_prefixes = {}) {
  require(train.size() > 0, errc::empty_dataset, "empty training set");
  detail::apply_frozen(net, frozen_prefixes);

  TrainHistory history;
  if (cfg.epochs == 0) return history;

  auto params = net.params();
  nn::Sgd<float> opt(static_cast<float>(cfg.momentum), static_cast<float>(cfg.weight_decay));
  std::mt19937_64 rng(cfg.seed);

  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  for (int64_t i = 0; i < train.size(); ++i) order[static_cast<size_t>(i)] = i;

  std::vector<std::vector<float>> best_params;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    float lr = static_cast<float>(detail::lr_at_epoch(cfg, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    int64_t correct = 0, seen = 0, batches = 0;
    for (int64_t lo = 0; lo < train.size(); lo += cfg.batch_size) {
      int64_t hi = std::min<int64_t>(train.size(), lo + cfg.batch_size);
      if (hi - lo < 2 && train.size() > 1) break;  // batch norm needs >= 2; drop the tail
      Tensor<float> x = train.gather(order.data() + lo, hi - lo);
      auto labels = train.gather_labels(order.data() + lo, hi - lo);

      net.zero_grads();
      Tensor<float> logits = net.forward(x, Mode::train);
      auto sx = nn::softmax_cross_entropy(logits, labels);
      net.backward(sx.glogits);
      opt.step(params, lr);

      loss_sum += sx.loss;
      ++batches;
      int64_t c = logits.dim(1);
      for (int64_t i = 0; i < hi - lo; ++i) {
        const float* row = sx.probs.data.data() + i * c;
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
          if (row[j] > row[best]) best = static_cast<int>(j);
        correct += (best == labels[static_cast<size_t>(i)]) ? 1 : 0;
      }
      seen += hi - lo;
    }

    EpochStats es;
    es.epoch = epoch;
    es.loss = batches ? loss_sum / batches : 0;
    es.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0;
    if (val && val->size() > 0) {
      es.val_acc = evaluate_accuracy(net, *val);
      if (es.val_acc > history.best_val_acc || history.best_epoch == 0) {
        history.best_val_acc = es.val_acc;
        history.best_epoch = epoch;
        best_params.clear();
        for (auto& p : params) best_params.push_back(p.tensor->data);
      }
    }
    history.epochs.push_back(es);
  }

  if (!best_params.empty()) {
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor->data = best_params[i];
  }
  return history;
}

// ---- cascade bundle ---------------------------------------------------------------

// The three trained stage networks. stage2 holds the shared trunk as its
// first trunk_layers layers; stage3_tail consumes the trunk's output volume,
// so a full stage-3 forward is stage3_tail(trunk(x)).
struct CascadeBundle {
  Net<float> stage1;
  Net<float> stage2;
  Net<float> stage3_tail;
  size_t trunk_layers = 0;
  int class_count = 0;
  int resolution = 0;   // stage-2/3 input resolution (32 or 64)
  int channels = 1;
  std::string variant;  // dataset variant tag the bundle was trained on
};

// Locates the stage-2 layer whose output volume matches the tail input.
inline size_t find_trunk_boundary(const Net<float>& stage2, const std::vector<int64_t>& tail_input) {
  auto trace = stage2.shape_trace();
  for (size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].second == tail_input) return i + 1;
  }
  fail(errc::trunk_shape_mismatch,
       "no stage-2 feature volume matches stage-3 input " + shape_str(tail_input));
}

inline CascadeBundle make_cascade_bundle(Net<float> stage1, Net<float> stage2, Net<float> stage3_tail,
                                         int class_count, int resolution, int channels,
                                         std::string variant) {
  CascadeBundle b;
  b.trunk_layers = find_trunk_boundary(stage2, stage3_tail.input_shape);
  b.stage1 = std::move(stage1);
  b.stage2 = std::move(stage2);
  b.stage3_tail = std::move(stage3_tail);
  b.class_count = class_count;
  b.resolution = resolution;
  b.channels = channels;
  b.variant = std::move(variant);
  require(b.stage1.input_shape.size() == 1 && b.stage1.input_shape[0] == 512 * channels,
          errc::trunk_shape_mismatch, "stage 1 expects the flattened 8^3 field");
  return b;
}

// Trunk features for a batch (shared by the stage-2 head and stage 3).
inline Tensor<float> trunk_features(const CascadeBundle& b, const Tensor<float>& x) {
  return b.stage2.infer_range(x, 0, b.trunk_layers);
}

inline Tensor<float> stage2_head_logits(const CascadeBundle& b, const Tensor<float>& feat) {
  return b.stage2.infer_range(feat, b.trunk_layers, b.stage2.layers.size());
}

// Standalone stage-3 network (trunk copy + tail); used for benchmarking and
// for checking that shared-trunk inference matches an unshared recomputation.
inline Net<float> stage3_standalone(CascadeBundle& b) {
  std::string desc = "input:";
  for (size_t i = 0; i < b.stage2.input_shape.size(); ++i) {
    if (i) desc += "x";
    desc += std::to_string(b.stage2.input_shape[i]);
  }
  for (size_t i = 0; i < b.trunk_layers; ++i) desc += "|" + b.stage2.layers[i]->descriptor();
  for (auto& l : b.stage3_tail.layers) desc += "|" + l->descriptor();
  Net<float> net = nn::net_from_descriptor<float>(desc);

  auto dst = net.params();
  std::vector<nn::ParamRef<float>> src;
  for (size_t i = 0; i < b.trunk_layers; ++i) b.stage2.layers[i]->collect_params(src, "t");
  for (size_t i = 0; i < b.stage3_tail.layers.size(); ++i)
    b.stage3_tail.layers[i]->collect_params(src, "s");
  require(src.size() == dst.size(), errc::trunk_shape_mismatch, "standalone stage-3 parameter mismatch");
  for (size_t i = 0; i < src.size(); ++i) dst[i].tensor->data = src[i].tensor->data;
  return net;
}

// SHA-256 over a network's parameter bytes (values only, fixed order).
inline std::string params_sha256(Net<float>& net) {
  Sha256 h;
  for (auto& p : net.params()) {
    h.update(p.tensor->data.data(), p.tensor->data.size() * sizeof(float));
  }
  auto d = h.digest();
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (uint8_t b : d) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

inline std::string trunk_sha256(CascadeBundle& b) {
  Sha256 h;
  std::vector<nn::ParamRef<float>> ps;
  for (size_t i = 0; i < b.trunk_layers; ++i) b.stage2.layers[i]->collect_params(ps, "t");
  for (auto& p : ps) h.update(p.tensor->data.data(), p.tensor->data.size() * sizeof(float));
  auto d = h.digest();
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (uint8_t c : d) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 0xf]);
  }
  return out;
}

// Materializes trunk features for a whole dataset (frozen trunk, eval mode).
// This is exactly what training stage 3 with a frozen trunk computes, just
// memoized: gradients never reach the trunk.
inline TensorDataset trunk_feature_dataset(const CascadeBundle& b, const TensorDataset& data,
                                           int64_t batch = 16) {
  TensorDataset out;
  out.sample_shape = b.stage3_tail.input_shape;
  out.labels = data.labels;
  out.class_count = data.class_count;
  out.data.resize(static_cast<size_t>(data.size() * out.sample_numel()));
  int64_t m = out.sample_numel();
  int64_t n = data.size();
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;

  parallel_for((n + batch - 1) / batch, [&](int64_t blo, int64_t bhi) {
    for (int64_t bidx = blo; bidx < bhi; ++bidx) {
      int64_t lo = bidx * batch, hi = std::min(n, lo + batch);
      Tensor<float> x = data.gather(idx.data() + lo, hi - lo);
      Tensor<float> feat = trunk_features(b, x);
      std::copy_n(feat.data.begin(), (hi - lo) * m, out.data.begin() + lo * m);
    }
  });
  return out;
}

}  // namespace voxcade::models
