#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "voxcade/io.hpp"
#include "voxcade/layers.hpp"
#include "voxcade/tensor.hpp"

namespace voxcade::nn {

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
  bool learnable = true;  // false for BN running statistics
  bool frozen = false;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string descriptor() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode m) = 0;
  virtual Tensor<T> infer(const Tensor<T>& x) const = 0;  // pure, thread-safe
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect_params(std::vector<ParamRef<T>>&, const std::string&) {}
  virtual void init(std::mt19937_64&) {}
  // folds the layer's discrete decisions from the last train-mode forward
  // (pool argmax, ReLU mask) into h; used to spot non-differentiable points
  virtual void routing_hash(uint64_t&) const {}
  // propagates the per-sample shape and accumulates parameter / flop counts
  // (conv: 2 * out_voxels * Cout * Cin * k^d; linear: 2 * Din * Dout;
  //  pooling / BN / ReLU: one op per output element)
  virtual void stats(std::vector<int64_t>& shape, int64_t& params, int64_t& flops) const = 0;

  bool frozen = false;
};

namespace detail {

template <class T>
void he_uniform(Tensor<T>& w, int64_t fan_in, std::mt19937_64& rng) {
  T limit = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  std::uniform_real_distribution<double> dist(-static_cast<double>(limit), static_cast<double>(limit));
  for (auto& v : w.data) v = static_cast<T>(dist(rng));
}

}  // namespace detail

template <class T>
class LinearLayer final : public Layer<T> {
 public:
  LinearLayer(int64_t din, int64_t dout) : din_(din), dout_(dout), w_({dout, din}), b_({dout}) {
    w_.alloc_grad();
    b_.alloc_grad();
  }

  std::string descriptor() const override { return "fc:" + std::to_string(dout_); }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return linear_fwd(x, w_, b_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return linear_fwd(x, w_, b_); }
  Tensor<T> backward(const Tensor<T>& gy) override {
    return linear_bwd(x_, w_, gy, this->frozen ? nullptr : &w_.grad, this->frozen ? nullptr : &b_.grad);
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& p) override {
    out.push_back({p + "w", &w_, true, this->frozen});
    out.push_back({p + "b", &b_, true, this->frozen});
  }
  void init(std::mt19937_64& rng) override {
    detail::he_uniform(w_, din_, rng);
    std::fill(b_.data.begin(), b_.data.end(), T{});
  }
  void stats(std::vector<int64_t>& shape, int64_t& params, int64_t& flops) const override {
    require(shape.size() == 1 && shape[0] == din_, errc::shape_mismatch,
            "fc expects flattened input of " + std::to_string(din_));
    shape = {dout_};
    params += din_ * dout_ + dout_;
    flops += 2 * din_ * dout_;
  }

 private:
  int64_t din_, dout_;
  Tensor<T> w_, b_, x_;
};

template <class T>
class Conv3dLayer final : public Layer<T> {
 public:
  Conv3dLayer(int64_t ci, int64_t co, int k) : ci_(ci), co_(co), k_(k), w_({co, ci, k, k, k}), b_({co}) {
    w_.alloc_grad();
    b_.alloc_grad();
  }

  std::string descriptor() const override { return "conv3:" + std::to_string(co_) + "," + std::to_string(k_); }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return conv3d_fwd(x, w_, b_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return conv3d_fwd(x, w_, b_); }
  Tensor<T> backward(const Tensor<T>& gy) override {
    return conv3d_bwd(x_, w_, gy, this->frozen ? nullptr : &w_.grad, this->frozen ? nullptr : &b_.grad);
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& p) override {
    out.push_back({p + "w", &w_, true, this->frozen});
    out.push_back({p + "b", &b_, true, this->frozen});
  }
  void init(std::mt19937_64& rng) override {
    detail::he_uniform(w_, ci_ * k_ * k_ * k_, rng);
    std::fill(b_.data.begin(), b_.data.end(), T{});
  }
  void stats(std::vector<int64_t>& shape, int64_t& params, int64_t& flops) const override {
    require(shape.size() == 4 && shape[0] == ci_, errc::shape_mismatch,
            "conv3 expects [C,D,H,W] with C=" + std::to_string(ci_) + ", got " + shape_str(shape));
    int64_t d = shape[1] - k_ + 1, h = shape[2] - k_ + 1, w = shape[3] - k_ + 1;
    require(d > 0 && h > 0 && w > 0, errc::shape_mismatch, "conv3 kernel larger than input");
    shape = {co_, d, h, w};
    params += co_ * ci_ * k_ * k_ * k_ + co_;
    flops += d * h * w * co_ * ci_ * k_ * k_ * k_ * 2;
  }

 private:
  int64_t ci_, co_;
  int k_;
  Tensor<T> w_, b_, x_;
};

template <class T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(int64_t ci, int64_t co, int k) : ci_(ci), co_(co), k_(k), w_({co, ci, k, k}), b_({co}) {
    w_.alloc_grad();
    b_.alloc_grad();
  }

  std::string descriptor() const override { return "conv2:" + std::to_string(co_) + "," + std::to_string(k_); }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return conv2d_fwd(x, w_, b_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return conv2d_fwd(x, w_, b_); }
  Tensor<T> backward(const Tensor<T>& gy) override {
    return conv2d_bwd(x_, w_, gy, this->frozen ? nullptr : &w_.grad, this->frozen ? nullptr : &b_.grad);
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& p) override {
    out.push_back({p + "w", &w_, true, this->frozen});
    out.push_back({p + "b", &b_, true, this->frozen});
  }
  void init(std::mt19937_64& rng) override {
    detail::he_uniform(w_, ci_ * k_ * k_, rng);
    std::fill(b_.data.begin(), b_.data.end(), T{});
  }
  void stats(std::vector<int64_t>& shape, int64_t& params, int64_t& flops) const override {
    require(shape.size() == 3 && shape[0] == ci_, errc::shape_mismatch,
            "conv2 expects [C,H,W] with C=" + std::to_string(ci_));
    int64_t h = shape[1] - k_ + 1, w = shape[2] - k_ + 1;
    require(h > 0 && w > 0, errc::shape_mismatch, "conv2 kernel larger than input");
    shape = {co_, h, w};
    params += co_ * ci_ * k_ * k_ + co_;
    flops += h * w * co_ * ci_ * k_ * k_ * 2;
  }

 private:
  int64_t ci_, co_;
  int k_;
  Tensor<T> w_, b_, x_;
};

template <class T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(int64_t c, T momentum = T(0.1), T eps = T(1e-5))
      : c_(c), momentum_(momentum), eps_(eps), gamma_({c}), beta_({c}), rmean_({c}), rvar_({c}) {
    std::fill(gamma_.data.begin(), gamma_.data.end(), T(1));
    std::fill(rvar_.data.begin(), rvar_.data.end(), T(1));
    gamma_.alloc_grad();
    beta_.alloc_grad();
  }

  std::string descriptor() const override { return "bn:" + std::to_string(c_); }

  Tensor<T> forward(const Tensor<T>& x, Mode m) override {
    if (m == Mode::train && !this->frozen) {
      return batchnorm_fwd_train(x, gamma_, beta_, rmean_, rvar_, momentum_, eps_, cache_);
    }
    // frozen layers keep eval semantics during training: running statistics
    // stay untouched, backward treats them as constants
    cache_.eval_path = true;
    cache_.invstd.assign(static_cast<size_t>(c_), T{});
    for (int64_t ch = 0; ch < c_; ++ch)
      cache_.invstd[static_cast<size_t>(ch)] = T(1) / std::sqrt(rvar_.data[static_cast<size_t>(ch)] + eps_);
    return batchnorm_fwd_eval(x, gamma_, beta_, rmean_, rvar_, eps_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    return batchnorm_fwd_eval(x, gamma_, beta_, rmean_, rvar_, eps_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    return batchnorm_bwd(gy, gamma_, cache_,
                         this->frozen ? nullptr : &gamma_.grad,
                         this->frozen ? nullptr : &beta_.grad);
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& p) override {
    out.push_back({p + "gamma", &gamma_, true, this->frozen});
    out.push_back({p + "beta", &beta_, true, this->frozen});
    out.push_back({p + "rmean", &rmean_, false, this->frozen});
    out.push_back({p + "rvar", &rvar_, false, this->frozen});
  }
  void stats(std::vector<int64_t>& shape, int64_t& params, int64_t& flops) const override {
    require(!shape.empty() && shape[0] == c_, errc::shape_mismatch, "bn channel mismatch");
    params += 2 * c_;
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    flops += n;
  }

 private:
  int64_t c_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, rmean_, rvar_;
  BnCache<T> cache_;
};

template <class T>
class ReluLayer final : public Layer<T> {
 public:
  std::string descriptor() const override { return "relu"; }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    y_ = relu_fwd(x);
    return y_;
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return relu_fwd(x); }
  Tensor<T> backward(const Tensor<T>& gy) override { return relu_bwd(y_, gy); }
  void routing_hash(uint64_t& h) const override {
    for (const T& v : y_.data) h = (h ^ (v > T(0) ? 0x9e3779b97f4a7c15ull : 0x517cc1b727220a95ull)) * 0x100000001b3ull;
  }
  void stats(std::vector<int64_t>& shape, int64_t&, int64_t& flops) const override {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    flops += n;
  }

 private:
  Tensor<T> y_;
};

template <class T>
class MaxPool3dLayer final : public Layer<T> {
 public:
  MaxPool3dLayer(int s, int t) : s_(s), t_(t) {}
  std::string descriptor() const override { return "pool3:" + std::to_string(s_) + "," + std::to_string(t_); }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    return maxpool3d_fwd(x, s_, t_, argmax_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    std::vector<int32_t> scratch;
    return maxpool3d_fwd(x, s_, t_, scratch);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return maxpool3d_bwd(in_shape_, gy, argmax_); }
  void routing_hash(uint64_t& h) const override {
    for (int32_t a : argmax_) h = (h ^ static_cast<uint64_t>(a)) * 0x100000001b3ull;
  }
  void stats(std::vector<int64_t>& shape, int64_t&, int64_t& flops) const override {
    require(shape.size() == 4, errc::shape_mismatch, "pool3 expects [C,D,H,W]");
    for (int a = 1; a <= 3; ++a) shape[static_cast<size_t>(a)] = (shape[static_cast<size_t>(a)] - s_) / t_ + 1;
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    flops += n;
  }

 private:
  int s_, t_;
  std::vector<int64_t> in_shape_;
  std::vector<int32_t> argmax_;
};

template <class T>
class MaxPool2dLayer final : public Layer<T> {
 public:
  MaxPool2dLayer(int s, int t) : s_(s), t_(t) {}
  std::string descriptor() const override { return "pool2:" + std::to_string(s_) + "," + std::to_string(t_); }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    return maxpool2d_fwd(x, s_, t_, argmax_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    std::vector<int32_t> scratch;
    return maxpool2d_fwd(x, s_, t_, scratch);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return maxpool3d_bwd(in_shape_, gy, argmax_); }
  void routing_hash(uint64_t& h) const override {
    for (int32_t a : argmax_) h = (h ^ static_cast<uint64_t>(a)) * 0x100000001b3ull;
  }
  void stats(std::vector<int64_t>& shape, int64_t&, int64_t& flops) const override {
    require(shape.size() == 3, errc::shape_mismatch, "pool2 expects [C,H,W]");
    for (int a = 1; a <= 2; ++a) shape[static_cast<size_t>(a)] = (shape[static_cast<size_t>(a)] - s_) / t_ + 1;
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    flops += n;
  }

 private:
  int s_, t_;
  std::vector<int64_t> in_shape_;
  std::vector<int32_t> argmax_;
};

template <class T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string descriptor() const override { return "flatten"; }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return gy.reshaped(in_shape_); }
  void stats(std::vector<int64_t>& shape, int64_t&, int64_t&) const override {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    shape = {n};
  }

 private:
  std::vector<int64_t> in_shape_;
};

// ---------------------------------------------------------------------------

template <class T>
class Net {
 public:
  std::vector<std::unique_ptr<Layer<T>>> layers;
  std::vector<int64_t> input_shape;  // per-sample, e.g. {1,32,32,32} or {512}

  template <class L, class... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode m) {
    Tensor<T> h = x;
    for (auto& l : layers) h = l->forward(h, m);
    return h;
  }

  Tensor<T> infer(const Tensor<T>& x) const { return infer_range(x, 0, layers.size()); }

  Tensor<T> infer_range(const Tensor<T>& x, size_t from, size_t to) const {
    Tensor<T> h = x;
    for (size_t i = from; i < to; ++i) h = layers[i]->infer(h);
    return h;
  }

  // Backpropagates through the stack. Without want_input_grad the walk stops
  // once every remaining layer is frozen (nothing below needs gradients) and
  // an empty tensor is returned.
  Tensor<T> backward(const Tensor<T>& gy, bool want_input_grad = false) {
    size_t stop = 0;
    if (!want_input_grad) {
      stop = layers.size();
      for (size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i]->frozen) {
          stop = i;
          break;
        }
      }
    }
    Tensor<T> g = gy;
    for (size_t i = layers.size(); i-- > stop;) {
      g = layers[i]->backward(g);
    }
    return stop == 0 ? g : Tensor<T>{};
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i]->collect_params(out, "l" + std::to_string(i) + ".");
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : params())
      if (p.tensor->has_grad()) p.tensor->zero_grad();
  }

  void init(uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers) l->init(rng);
  }

  std::string descriptor() const {
    std::string out = "input:";
    for (size_t i = 0; i < input_shape.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(input_shape[i]);
    }
    for (auto& l : layers) out += "|" + l->descriptor();
    return out;
  }

  uint64_t routing_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& l : layers) l->routing_hash(h);
    return h;
  }

  void stats(int64_t& param_count, int64_t& flops) const {
    std::vector<int64_t> shape = input_shape;
    param_count = 0;
    flops = 0;
    for (auto& l : layers) l->stats(shape, param_count, flops);
  }

  std::vector<int64_t> output_shape() const {
    std::vector<int64_t> shape = input_shape;
    int64_t p = 0, f = 0;
    for (auto& l : layers) l->stats(shape, p, f);
    return shape;
  }

  // (layer descriptor, per-sample output shape) after every layer
  std::vector<std::pair<std::string, std::vector<int64_t>>> shape_trace() const {
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    std::vector<int64_t> shape = input_shape;
    int64_t p = 0, f = 0;
    for (auto& l : layers) {
      l->stats(shape, p, f);
      out.emplace_back(l->descriptor(), shape);
    }
    return out;
  }
};

// ---- descriptor parsing -----------------------------------------------------

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline int64_t parse_i64(const std::string& s) {
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') fail(errc::bad_checkpoint, "bad integer '" + s + "' in descriptor");
  return v;
}

}  // namespace detail

template <class T>
Net<T> net_from_descriptor(const std::string& desc) {
  auto tokens = detail::split(desc, '|');
  require(!tokens.empty() && tokens[0].rfind("input:", 0) == 0, errc::bad_checkpoint,
          "descriptor must start with input:");
  Net<T> net;
  for (auto& d : detail::split(tokens[0].substr(6), 'x')) net.input_shape.push_back(detail::parse_i64(d));
  std::vector<int64_t> shape = net.input_shape;
  int64_t p = 0, f = 0;

  for (size_t i = 1; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    auto colon = tok.find(':');
    std::string kind = tok.substr(0, colon);
    std::vector<std::string> args;
    if (colon != std::string::npos) args = detail::split(tok.substr(colon + 1), ',');

    if (kind == "fc") {
      require(args.size() == 1, errc::bad_checkpoint, "fc:OUT");
      require(shape.size() == 1, errc::bad_checkpoint, "fc needs flattened input");
      net.template add<LinearLayer<T>>(shape[0], detail::parse_i64(args[0]));
    } else if (kind == "conv3") {
      require(args.size() == 2 && shape.size() == 4, errc::bad_checkpoint, "conv3:CO,K on [C,D,H,W]");
      net.template add<Conv3dLayer<T>>(shape[0], detail::parse_i64(args[0]),
                                       static_cast<int>(detail::parse_i64(args[1])));
    } else if (kind == "conv2") {
      require(args.size() == 2 && shape.size() == 3, errc::bad_checkpoint, "conv2:CO,K on [C,H,W]");
      net.template add<Conv2dLayer<T>>(shape[0], detail::parse_i64(args[0]),
                                       static_cast<int>(detail::parse_i64(args[1])));
    } else if (kind == "bn") {
      require(args.size() == 1, errc::bad_checkpoint, "bn:C");
      net.template add<BatchNormLayer<T>>(detail::parse_i64(args[0]));
    } else if (kind == "relu") {
      net.template add<ReluLayer<T>>();
    } else if (kind == "pool3") {
      require(args.size() == 2, errc::bad_checkpoint, "pool3:S,T");
      net.template add<MaxPool3dLayer<T>>(static_cast<int>(detail::parse_i64(args[0])),
                                          static_cast<int>(detail::parse_i64(args[1])));
    } else if (kind == "pool2") {
      require(args.size() == 2, errc::bad_checkpoint, "pool2:S,T");
      net.template add<MaxPool2dLayer<T>>(static_cast<int>(detail::parse_i64(args[0])),
                                          static_cast<int>(detail::parse_i64(args[1])));
    } else if (kind == "flatten") {
      net.template add<FlattenLayer<T>>();
    } else {
      fail(errc::bad_checkpoint, "unknown layer kind '" + kind + "'");
    }
    net.layers.back()->stats(shape, p, f);  // validates and advances the shape
  }
  return net;
}

template <class T>
Net<T> clone_net(Net<T>& src) {
  Net<T> dst = net_from_descriptor<T>(src.descriptor());
  auto sp = src.params();
  auto dp = dst.params();
  for (size_t i = 0; i < sp.size(); ++i) dp[i].tensor->data = sp[i].tensor->data;
  return dst;
}

// ---- checkpoint ---------------------------------------------------------------
// magic "VXCK", version u16, descriptor (u32 length + text), epochs u32,
// seed u64, tensor count u32, then per tensor: name (u32 + bytes), rank u8,
// dims u32 each, f32 little-endian data.

struct CheckpointMeta {
  uint32_t epochs = 0;
  uint64_t seed = 0;
};

inline void save_checkpoint(Net<float>& net, const std::filesystem::path& path,
                            const CheckpointMeta& meta = {}) {
  ByteWriter w;
  w.put_string("VXCK");
  w.put<uint16_t>(1);
  std::string desc = net.descriptor();
  w.put<uint32_t>(static_cast<uint32_t>(desc.size()));
  w.put_string(desc);
  w.put<uint32_t>(meta.epochs);
  w.put<uint64_t>(meta.seed);
  auto params = net.params();
  w.put<uint32_t>(static_cast<uint32_t>(params.size()));
  for (auto& p : params) {
    w.put<uint32_t>(static_cast<uint32_t>(p.name.size()));
    w.put_string(p.name);
    w.put<uint8_t>(static_cast<uint8_t>(p.tensor->rank()));
    for (int64_t d : p.tensor->shape) w.put<uint32_t>(static_cast<uint32_t>(d));
    w.put_bytes(p.tensor->data.data(), p.tensor->data.size() * sizeof(float));
  }
  write_file(path, w.bytes().data(), w.bytes().size());
}

struct LoadedCheckpoint {
  Net<float> net;
  CheckpointMeta meta;
  std::string descriptor;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  ByteReader r(bytes);
  if (r.get_string(4) != "VXCK") fail(errc::bad_checkpoint, "not a VXCK checkpoint: " + path.string());
  uint16_t version = r.get<uint16_t>();
  if (version != 1) fail(errc::bad_checkpoint, "unsupported checkpoint version");
  uint32_t dlen = r.get<uint32_t>();
  std::string desc = r.get_string(dlen);

  LoadedCheckpoint out;
  out.descriptor = desc;
  out.meta.epochs = r.get<uint32_t>();
  out.meta.seed = r.get<uint64_t>();
  out.net = net_from_descriptor<float>(desc);

  uint32_t count = r.get<uint32_t>();
  auto params = out.net.params();
  require(count == params.size(), errc::bad_checkpoint, "tensor count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = r.get<uint32_t>();
    std::string name = r.get_string(nlen);
    require(name == params[i].name, errc::bad_checkpoint, "unexpected tensor '" + name + "'");
    uint8_t rank = r.get<uint8_t>();
    require(rank == params[i].tensor->rank(), errc::bad_checkpoint, "tensor rank mismatch");
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      uint32_t dim = r.get<uint32_t>();
      require(dim == params[i].tensor->dim(d), errc::bad_checkpoint, "tensor dim mismatch");
      numel *= dim;
    }
    r.get_bytes(params[i].tensor->data.data(), static_cast<size_t>(numel) * sizeof(float));
  }
  return out;
}

// ---- SGD with momentum --------------------------------------------------------
// v <- mu * v + g + wd * w ; w <- w - lr * v

template <class T>
class Sgd {
 public:
  Sgd(T momentum, T weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamRef<T>>& params, T lr) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i)
        velocity_[i].assign(params[i].tensor->data.size(), T{});
    }
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.learnable || p.frozen) continue;
      auto& w = p.tensor->data;
      auto& g = p.tensor->grad;
      auto& v = velocity_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j] + weight_decay_ * w[j];
        w[j] -= lr * v[j];
      }
    }
  }

 private:
  T momentum_, weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

// ---- in-memory training data ----------------------------------------------------

struct TensorDataset {
  std::vector<int64_t> sample_shape;  // per-sample, e.g. {512} or {1,32,32,32}
  std::vector<float> data;            // size() * prod(sample_shape), contiguous
  std::vector<uint16_t> labels;
  int class_count = 0;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t sample_numel() const {
    int64_t n = 1;
    for (int64_t d : sample_shape) n *= d;
    return n;
  }

  Tensor<float> gather(const int64_t* idx, int64_t count) const {
    int64_t m = sample_numel();
    std::vector<int64_t> shape;
    shape.push_back(count);
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Tensor<float> out(shape);
    for (int64_t i = 0; i < count; ++i) {
      std::copy_n(data.begin() + idx[i] * m, m, out.data.begin() + i * m);
    }
    return out;
  }

  std::vector<int> gather_labels(const int64_t* idx, int64_t count) const {
    std::vector<int> out(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) out[static_cast<size_t>(i)] = labels[static_cast<size_t>(idx[i])];
    return out;
  }

  Tensor<float> sample(int64_t i) const {
    int64_t idx = i;
    return gather(&idx, 1);
  }
};

// ---- finite-difference gradient check ------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0;
  int coords_checked = 0;
  int coords_skipped = 0;  // coordinates whose discrete routing flipped under +-eps
};

// Central differences on a softmax-CE loss over the flattened output, over a
// random subsample of parameter (and input) coordinates. Errors are
// normalized by the largest gradient magnitude seen anywhere in the model,
// which keeps float rounding noise on near-zero coordinates from dominating;
// a broken backward still shows up at the scale of real gradients (the
// negative-control test asserts that).
//
// Coordinates whose perturbation flips a pool argmax or a ReLU mask are
// skipped: the loss is not differentiable across those points, so no
// implementation could match the two-sided quotient there.
template <class T>
GradCheckResult gradient_check(Net<T>& net, const Tensor<T>& x, const std::vector<int>& labels,
                               double eps, int coords_per_tensor, uint64_t seed,
                               bool check_input = true) {
  Tensor<T> input = x;
  auto loss_of = [&](const Tensor<T>& in) {
    Tensor<T> out = net.forward(in, Mode::train);
    Tensor<T> flat = out.reshaped({out.dim(0), out.numel() / out.dim(0)});
    return static_cast<double>(softmax_cross_entropy(flat, labels).loss);
  };

  net.zero_grads();
  Tensor<T> out = net.forward(input, Mode::train);
  uint64_t base_routing = net.routing_hash();
  Tensor<T> flat = out.reshaped({out.dim(0), out.numel() / out.dim(0)});
  auto sx = softmax_cross_entropy(flat, labels);
  Tensor<T> gx = net.backward(sx.glogits.reshaped(out.shape), /*want_input_grad=*/true);

  auto params = net.params();
  struct Slot {
    Tensor<T>* tensor;
    std::vector<T> analytic;
  };
  std::vector<Slot> slots;
  for (auto& p : params) {
    if (!p.learnable || p.frozen) continue;
    slots.push_back({p.tensor, p.tensor->grad});
  }
  if (check_input) slots.push_back({&input, gx.data});

  double scale = 0;
  for (auto& s : slots)
    for (T g : s.analytic) scale = std::max(scale, std::abs(static_cast<double>(g)));
  scale = std::max(scale, 1e-12);

  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (auto& s : slots) {
    int64_t n = static_cast<int64_t>(s.tensor->data.size());
    int count = static_cast<int>(std::min<int64_t>(coords_per_tensor, n));
    for (int c = 0; c < count; ++c) {
      int64_t idx = static_cast<int64_t>(rng() % static_cast<uint64_t>(n));
      T old = s.tensor->data[static_cast<size_t>(idx)];
      s.tensor->data[static_cast<size_t>(idx)] = old + static_cast<T>(eps);
      double lp = loss_of(input);
      uint64_t hp = net.routing_hash();
      s.tensor->data[static_cast<size_t>(idx)] = old - static_cast<T>(eps);
      double lm = loss_of(input);
      uint64_t hm = net.routing_hash();
      s.tensor->data[static_cast<size_t>(idx)] = old;
      if (hp != base_routing || hm != base_routing) {
        ++res.coords_skipped;
        continue;
      }
      double fd = (lp - lm) / (2 * eps);
      double an = static_cast<double>(s.analytic[static_cast<size_t>(idx)]);
      res.max_rel_err = std::max(res.max_rel_err, std::abs(an - fd) / scale);
      ++res.coords_checked;
    }
  }
  return res;
}

}  // namespace voxcade::nn
