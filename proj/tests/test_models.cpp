#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "voxcade/models.hpp"

using namespace voxcade;
using namespace voxcade::models;
using nn::Mode;
using nn::Net;
using voxcade::Tensor;

namespace {

Tensor<float> random_input(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto& v : t.data) v = static_cast<float>(dist(rng));
  return t;
}

nn::TensorDataset toy_dataset(int64_t n, int64_t dim, int classes, uint64_t seed) {
  nn::TensorDataset d;
  d.sample_shape = {dim};
  d.class_count = classes;
  d.data.resize(static_cast<size_t>(n * dim));
  d.labels.resize(static_cast<size_t>(n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto& v : d.data) v = static_cast<float>(dist(rng));
  for (int64_t i = 0; i < n; ++i)
    d.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(rng() % static_cast<uint64_t>(classes));
  return d;
}

std::string hash_layers(Net<float>& n, size_t count) {
  Sha256 h;
  std::vector<nn::ParamRef<float>> ps;
  for (size_t i = 0; i < count; ++i) n.layers[i]->collect_params(ps, "l");
  for (auto& p : ps) h.update(p.tensor->data.data(), p.tensor->data.size() * sizeof(float));
  auto d = h.digest();
  return std::string(reinterpret_cast<const char*>(d.data()), d.size());
}

}  // namespace

TEST_CASE("build_fcnet layout") {
  auto spec = build_fcnet(40);
  auto net = nn::net_from_descriptor<float>(spec.descriptor);
  CHECK(net.output_shape() == std::vector<int64_t>{40});
  int64_t params = 0, flops = 0;
  net.stats(params, flops);
  CHECK(params == 512 * 256 + 256 + 256 * 128 + 128 + 128 * 40 + 40);  // = 169384

  SECTION("forward on zero input yields the final-layer bias") {
    net.init(5);
    auto ps = net.params();
    auto& bias = *ps.back().tensor;
    for (size_t i = 0; i < bias.data.size(); ++i) bias.data[i] = static_cast<float>(i) * 0.5f;
    Tensor<float> zero({1, 512});
    auto logits = net.infer(zero);
    for (size_t i = 0; i < 40; ++i) REQUIRE(logits.data[i] == static_cast<float>(i) * 0.5f);
  }
}

TEST_CASE("stage-2 trace matches the paper at 64^3") {
  auto spec = build_stage2(10, 64);
  auto net = nn::net_from_descriptor<float>(spec.descriptor);
  auto trace = net.shape_trace();

  // spatial sizes 64 -> 62 -> 31 -> 29 -> 14 -> 4
  std::vector<std::vector<int64_t>> expect = {
      {16, 62, 62, 62},  // conv1
      {16, 62, 62, 62},  // bn
      {16, 62, 62, 62},  // relu
      {16, 31, 31, 31},  // pool
      {32, 29, 29, 29},  // conv2
      {32, 29, 29, 29},  // bn
      {32, 29, 29, 29},  // relu
      {32, 14, 14, 14},  // pool -> trunk output, shared with stage 3
      {32, 4, 4, 4},     // size-3 pool
  };
  REQUIRE(trace.size() >= expect.size());
  for (size_t i = 0; i < expect.size(); ++i) REQUIRE(trace[i].second == expect[i]);
  CHECK(spec.trunk_layers == 8);
  CHECK(net.output_shape() == std::vector<int64_t>{10});
}

TEST_CASE("stage-3 trace matches the paper at 64^3") {
  auto spec = build_stage3(10, 64);
  auto net = nn::net_from_descriptor<float>(spec.descriptor);
  auto trace = net.shape_trace();
  // 14 -> 12 -> 6 -> 4 -> 2 with channels 32 -> 64 -> 128
  std::vector<std::vector<int64_t>> expect = {
      {64, 12, 12, 12}, {64, 12, 12, 12}, {64, 12, 12, 12}, {64, 6, 6, 6},
      {128, 4, 4, 4},   {128, 4, 4, 4},   {128, 4, 4, 4},   {128, 2, 2, 2},
  };
  for (size_t i = 0; i < expect.size(); ++i) REQUIRE(trace[i].second == expect[i]);
  REQUIRE(trace[expect.size()].second == std::vector<int64_t>{1024});  // flatten 2^3 * 128
}

TEST_CASE("unsupported stage resolutions are rejected") {
  try {
    build_stage2(10, 48);
    FAIL("expected UnsupportedResolution");
  } catch (const error& e) {
    CHECK(e.code() == errc::unsupported_resolution);
  }
}

TEST_CASE("mnist reference nets") {
  auto nets = build_mnist_nets(10);
  auto fc1 = nn::net_from_descriptor<float>(nets[0].descriptor);
  auto fc2 = nn::net_from_descriptor<float>(nets[1].descriptor);
  auto cnn = nn::net_from_descriptor<float>(nets[2].descriptor);
  CHECK(fc1.output_shape() == std::vector<int64_t>{10});
  int64_t p = 0, f = 0;
  fc2.stats(p, f);
  CHECK(p == 101770);  // 784*128+128 + 128*10+10
  // spatial trace 28 -> 26 -> 13 -> 11 -> 5
  auto trace = cnn.shape_trace();
  CHECK(trace[0].second == std::vector<int64_t>{16, 26, 26});
  CHECK(trace[2].second == std::vector<int64_t>{16, 13, 13});
  CHECK(trace[3].second == std::vector<int64_t>{32, 11, 11});
  CHECK(trace[5].second == std::vector<int64_t>{32, 5, 5});
}

TEST_CASE("predict follows softmax with lowest-index tie break") {
  Net<float> net;  // no layers: logits = input
  net.input_shape = {4};
  SECTION("uniform logits give class 0 with eta 1/C") {
    Tensor<float> x({1, 4});
    auto pred = predict(net, x);
    CHECK(pred.label == 0);
    CHECK(pred.eta == Catch::Approx(0.25).margin(1e-6));
  }
  SECTION("dominant logit wins with eta near 1") {
    Tensor<float> x({1, 4}, {0.f, 30.f, 0.f, 0.f});
    auto pred = predict(net, x);
    CHECK(pred.label == 1);
    CHECK(pred.eta > 0.999f);
  }
}

TEST_CASE("train_stage overfits a 50-sample toy set") {
  auto data = toy_dataset(50, 32, 5, 99);
  Net<float> net = nn::net_from_descriptor<float>("input:32|fc:64|relu|fc:5");
  net.init(7);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 10;
  cfg.lr = 0.05;
  cfg.weight_decay = 0;
  cfg.seed = 3;
  auto history = train_stage(net, data, nullptr, cfg);
  REQUIRE(history.epochs.size() == 200);
  CHECK(evaluate_accuracy(net, data) == 1.0);
}

TEST_CASE("train_stage with zero epochs returns untouched net and empty history") {
  auto data = toy_dataset(10, 8, 3, 5);
  Net<float> net = nn::net_from_descriptor<float>("input:8|fc:3");
  net.init(1);
  auto before = params_sha256(net);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto history = train_stage(net, data, nullptr, cfg);
  CHECK(history.epochs.empty());
  CHECK(params_sha256(net) == before);
}

TEST_CASE("deterministic training under a fixed seed") {
  auto data = toy_dataset(40, 16, 4, 11);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.seed = 42;
  Net<float> a = nn::net_from_descriptor<float>("input:16|fc:12|relu|fc:4");
  a.init(9);
  Net<float> b = nn::net_from_descriptor<float>("input:16|fc:12|relu|fc:4");
  b.init(9);
  auto ha = train_stage(a, data, nullptr, cfg);
  auto hb = train_stage(b, data, nullptr, cfg);
  CHECK(params_sha256(a) == params_sha256(b));
  for (size_t i = 0; i < ha.epochs.size(); ++i) {
    CHECK(ha.epochs[i].loss == hb.epochs[i].loss);
    CHECK(ha.epochs[i].train_acc == hb.epochs[i].train_acc);
  }
}

TEST_CASE("frozen layers stay byte-identical through training") {
  Net<float> net = nn::net_from_descriptor<float>(
      "input:1x8x8x8|conv3:4,3|bn:4|relu|pool3:2,2|flatten|fc:6");
  net.init(21);

  nn::TensorDataset data;
  data.sample_shape = {1, 8, 8, 8};
  data.class_count = 6;
  {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-1, 1);
    data.data.resize(40 * 512);
    for (auto& v : data.data) v = static_cast<float>(dist(rng));
    for (int i = 0; i < 40; ++i) data.labels.push_back(static_cast<uint16_t>(rng() % 6));
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 13;
  train_stage(net, data, nullptr, cfg);  // pretrain everything

  auto trunk_before = hash_layers(net, 4);
  auto full_before = params_sha256(net);
  TrainConfig cfg2 = cfg;
  cfg2.epochs = 4;
  cfg2.seed = 17;
  train_stage(net, data, nullptr, cfg2, {"l0.", "l1."});  // conv + bn frozen
  CHECK(hash_layers(net, 4) == trunk_before);
  CHECK(params_sha256(net) != full_before);  // the head did train

  SECTION("unknown freeze prefix is rejected") {
    try {
      train_stage(net, data, nullptr, cfg2, {"l9."});
      FAIL("expected FrozenNameUnknown");
    } catch (const error& e) {
      CHECK(e.code() == errc::frozen_name_unknown);
    }
  }
}

TEST_CASE("shared-trunk forward equals unshared recomputation bit-exactly") {
  auto s2 = build_stage2(10, 32);
  auto s3 = build_stage3(10, 32);
  Net<float> stage1 = nn::net_from_descriptor<float>(build_fcnet(10).descriptor);
  Net<float> stage2 = nn::net_from_descriptor<float>(s2.descriptor);
  Net<float> tail = nn::net_from_descriptor<float>(s3.descriptor);
  stage1.init(1);
  stage2.init(2);
  tail.init(3);
  auto bundle = make_cascade_bundle(std::move(stage1), std::move(stage2), std::move(tail), 10, 32, 1,
                                    "volumetric-sdf");
  CHECK(bundle.trunk_layers == 8);

  auto x = random_input({2, 1, 32, 32, 32}, 77);
  auto feat = trunk_features(bundle, x);
  CHECK(feat.shape == std::vector<int64_t>{2, 32, 6, 6, 6});
  auto shared_logits = bundle.stage3_tail.infer(feat);

  auto standalone = stage3_standalone(bundle);
  auto unshared_logits = standalone.infer(x);
  REQUIRE(shared_logits.data == unshared_logits.data);

  SECTION("stage-2 head consumes the same trunk output") {
    auto head_logits = stage2_head_logits(bundle, feat);
    auto full = bundle.stage2.infer(x);
    REQUIRE(head_logits.data == full.data);
  }
}

TEST_CASE("mismatched tail input is rejected") {
  auto s2 = build_stage2(10, 32);
  Net<float> stage1 = nn::net_from_descriptor<float>(build_fcnet(10).descriptor);
  Net<float> stage2 = nn::net_from_descriptor<float>(s2.descriptor);
  Net<float> bad_tail = nn::net_from_descriptor<float>("input:32x14x14x14|flatten|fc:10");
  try {
    make_cascade_bundle(std::move(stage1), std::move(stage2), std::move(bad_tail), 10, 32, 1, "sdf");
    FAIL("expected TrunkShapeMismatch");
  } catch (const error& e) {
    CHECK(e.code() == errc::trunk_shape_mismatch);
  }
}
