#include "cra/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "cra/aggregation.hpp"
#include "cra/attention.hpp"
#include "cra/gradcheck.hpp"
#include "cra/layers.hpp"
#include "cra/losses.hpp"
#include "cra/model.hpp"
#include "cra/recurrent.hpp"
#include "cra/rng.hpp"

namespace cra {

namespace {

using Td = Tensor<double>;

Td rand_in(std::mt19937_64& rng, Shape shape, double lo = -1.0,
           double hi = 1.0) {
  Td t(std::move(shape));
  fill_uniform(rng, t.vals().data(), t.numel(), lo, hi);
  return t;
}

// Keeps every element at least 0.2 from zero so kinked ops (relu, max
// selections, hinges) see no sign flips from the probe step.
Td rand_off_zero(std::mt19937_64& rng, Shape shape) {
  Td t = rand_in(rng, std::move(shape), 0.2, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int64_t i = 0; i < t.numel(); ++i)
    if (coin(rng) < 0.5) t.vals()[i] = -t.vals()[i];
  return t;
}

struct Suite {
  std::vector<GradSuiteRow> rows;
  uint64_t seed;

  void run(const std::string& name, const std::function<Td()>& loss,
           std::vector<ParamRef> params, int max_per_param = -1) {
    GradCheckReport r = grad_check(loss, params, 1e-5, max_per_param);
    rows.push_back({name, r.max_rel_err, r.max_rel_err < 1e-4});
  }
};

void op_scope(Suite& s) {
  auto rng = make_rng(s.seed, 0x09);
  {
    Td a = rand_in(rng, {3, 4}), b = rand_in(rng, {3, 4}), c = rand_in(rng, {4});
    s.run("add", [&] { return sum(add(a, b)); }, {{"a", &a}, {"b", &b}});
    s.run("add broadcast", [&] { return sum(add(a, c)); },
          {{"a", &a}, {"c", &c}});
    s.run("sub", [&] { return sum(mul(sub(a, b), sub(a, b))); },
          {{"a", &a}, {"b", &b}});
    s.run("mul", [&] { return sum(mul(a, b)); }, {{"a", &a}, {"b", &b}});
    s.run("scale/add_scalar",
          [&] { return sum(add_scalar(scale(a, 1.7), 0.3)); }, {{"a", &a}});
  }
  {
    Td x = rand_in(rng, {4, 5}, -2.0, 2.0);
    s.run("sigmoid", [&] { return sum(sigmoid(x)); }, {{"x", &x}});
    s.run("tanh", [&] { return sum(mul(tanh(x), tanh(x))); }, {{"x", &x}});
    Td far = rand_off_zero(rng, {4, 5});
    s.run("relu", [&] { return sum(relu(far)); }, {{"far", &far}});
    Td pos = rand_in(rng, {3, 3}, 0.5, 2.0);
    s.run("sqrt", [&] { return sum(sqrt(pos)); }, {{"pos", &pos}});
  }
  {
    Td a = rand_in(rng, {4, 3}), b = rand_in(rng, {3, 5});
    s.run("matmul", [&] { return sum(matmul(a, b)); },
          {{"a", &a}, {"b", &b}});
    Td w = rand_in(rng, {2, 3}), bias = rand_in(rng, {2});
    Td x = rand_in(rng, {4, 3});
    s.run("linear", [&] { return sum(linear_op(x, w, bias)); },
          {{"x", &x}, {"w", &w}, {"bias", &bias}});
    s.run("transpose", [&] { return sum(mul(transpose2d(a), transpose2d(a))); },
          {{"a", &a}});
  }
  {
    Td x = rand_in(rng, {2, 2, 5, 5});
    Td w = rand_in(rng, {3, 2, 3, 3});
    Td b = rand_in(rng, {3});
    s.run("conv2d",
          [&] { return sum(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); },
          {{"x", &x}, {"w", &w}, {"b", &b}});
    Td far = rand_off_zero(rng, {1, 2, 4, 4});
    s.run("maxpool", [&] { return sum(maxpool2d(far, 2, 2)); },
          {{"far", &far}});
    s.run("avgpool", [&] { return sum(mul(avgpool2d(far, 2, 2),
                                          avgpool2d(far, 2, 2))); },
          {{"far", &far}});
    s.run("global_avg_pool",
          [&] { return sum(mul(global_avg_pool(far), global_avg_pool(far))); },
          {{"far", &far}});
  }
  {
    Td x = rand_in(rng, {6, 3});
    Td gamma = rand_in(rng, {3}, 0.5, 1.5), beta = rand_in(rng, {3});
    std::vector<double> rm = {0.1, -0.2, 0.3}, rv = {1.2, 0.8, 1.0};
    s.run("batchnorm train",
          [&] {
            std::vector<double> m = rm, v = rv;
            return sum(mul(batchnorm(x, gamma, beta, m, v, 0.1, 1e-5, true),
                           batchnorm(x, gamma, beta, m, v, 0.1, 1e-5, true)));
          },
          {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}});
    s.run("batchnorm eval",
          [&] {
            return sum(mul(batchnorm(x, gamma, beta, rm, rv, 0.1, 1e-5, false),
                           batchnorm(x, gamma, beta, rm, rv, 0.1, 1e-5, false)));
          },
          {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}});
  }
  {
    Td rows = rand_in(rng, {5, 4});
    s.run("reductions",
          [&] {
            return add(sum(mul(mean_rows(rows), mean_rows(rows))),
                       sum(max_rows(rows)));
          },
          {{"rows", &rows}});
    s.run("shuffle ops",
          [&] {
            Td p = permute_rows(rows, {4, 2, 0, 1, 3});
            Td sliced = slice_cols(slice_rows(p, 1, 5), 1, 4);
            return sum(mul(sliced, sliced));
          },
          {{"rows", &rows}});
    s.run("stack/select",
          [&] {
            Td s0 = select_axis0(rows, 1);
            Td s1 = select_axis0(rows, 3);
            return sum(mul(stack_axis0<double>({s0, s1}),
                           stack_axis0<double>({s1, s0})));
          },
          {{"rows", &rows}});
    s.run("reshape", [&] { return sum(mul(reshape(rows, {2, 10}),
                                          reshape(rows, {2, 10}))); },
          {{"rows", &rows}});
  }
  {
    Td logits = rand_in(rng, {5, 4}, -2.0, 2.0);
    std::vector<int> labels = {0, 3, 1, 2, 0};
    s.run("cross_entropy", [&] { return cross_entropy(logits, labels); },
          {{"logits", &logits}});
    Td emb = rand_in(rng, {8, 3});
    std::vector<int> ids = {0, 0, 1, 1, 2, 2, 3, 3};
    s.run("triplet", [&] { return triplet_batch_hard(emb, ids, 0.3); },
          {{"emb", &emb}});
    s.run("triplet squared",
          [&] { return triplet_batch_hard(emb, ids, 0.3, true); },
          {{"emb", &emb}});
  }
}

void module_scope(Suite& s) {
  auto rng = make_rng(s.seed, 0x4a);
  {
    LstmCell<double> cell(3, 2, rng);
    Td seq = rand_in(rng, {5, 3});
    s.run("lstm",
          [&] {
            Td out = lstm_forward(cell, seq);
            return sum(mul(out, out));
          },
          {{"seq", &seq},
           {"w_ih", &cell.w_ih},
           {"w_hh", &cell.w_hh},
           {"bias", &cell.bias}});
    BiLstm<double> bi(3, 2, rng);
    ParamMap<double> bp;
    bi.collect("bi", bp);
    std::vector<ParamRef> refs;
    for (auto& [name, t] : bp) refs.push_back({name, t});
    refs.push_back({"seq", &seq});
    s.run("bilstm",
          [&] {
            Td out = bi.forward(seq);
            return sum(mul(out, out));
          },
          refs);
  }
  for (auto [variant, name] :
       {std::pair{AttentionVariant::CRA, "attention cra"},
        std::pair{AttentionVariant::SRA, "attention sra"},
        std::pair{AttentionVariant::CA, "attention ca"}}) {
    AttentionConfig cfg;
    cfg.variant = variant;
    cfg.d = 2;
    AttentionModule<double> m(cfg, 8, 3, 2, rng);
    Td x = rand_in(rng, {8, 3, 2});
    ParamMap<double> params;
    m.collect("m", params);
    std::vector<ParamRef> refs;
    for (auto& [pname, t] : params) refs.push_back({pname, t});
    refs.push_back({"x", &x});
    s.run(name,
          [&] {
            Td y = m.forward(x, true);
            return sum(mul(y, y));
          },
          refs);
  }
  for (auto [pool, shared, name] :
       {std::tuple{PoolKind::AvgOnly, false, "agg avg"},
        std::tuple{PoolKind::MaxOnly, false, "agg max"},
        std::tuple{PoolKind::Combined, false, "agg combined"},
        std::tuple{PoolKind::Combined, true, "agg combined shared"}}) {
    AggConfig cfg;
    cfg.pooling = pool;
    cfg.r = 2;
    cfg.share_weights = shared;
    SetAggCell<double> cell(cfg, 6, rng);
    Td f1 = rand_in(rng, {4, 6}), f2 = rand_in(rng, {4, 6});
    ParamMap<double> params;
    cell.collect("agg", params);
    std::vector<ParamRef> refs;
    for (auto& [pname, t] : params) refs.push_back({pname, t});
    refs.push_back({"f1", &f1});
    refs.push_back({"f2", &f2});
    s.run(name,
          [&] {
            Td g = cell.forward_batch({f1, f2}, true);
            return sum(mul(g, g));
          },
          refs);
  }
}

void model_scope(Suite& s) {
  ModelConfig cfg;
  cfg.in_channels = 2;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.stages = {4, 6};
  cfg.attach = {1};
  cfg.attention.d = 2;
  cfg.agg.r = 3;
  cfg.dv = 5;
  cfg.num_ids = 3;
  cfg.t = 2;
  ReidModel<double> model(cfg, mix64(s.seed, 0x31));
  auto rng = make_rng(s.seed, 0x32);
  ParamMap<double> params;
  model.collect(params);
  // Check at a generic point. At the fresh init the zero normalization
  // shifts leave relu inputs sitting exactly on their kinks wherever an
  // upstream relu zeroed a whole patch, and central differences straddle
  // the kink no matter how small the step.
  std::uniform_real_distribution<double> mag(0.02, 0.12);
  std::uniform_int_distribution<int> sign(0, 1);
  for (auto& [name, t] : params)
    for (double& v : t->vals()) v += (sign(rng) ? 1.0 : -1.0) * mag(rng);
  Td clips = rand_in(rng, {2, 2, 2, 8, 8});
  const std::vector<int> labels = {0, 1};
  std::vector<ParamRef> refs;
  for (auto& [name, t] : params) refs.push_back({name, t});
  refs.push_back({"clips", &clips});
  for (auto [training, name] : {std::pair{false, "classify(embed) eval"},
                                std::pair{true, "classify(embed) train"}}) {
    s.run(name,
          [&, training = training] {
            Td logits = model.classify(model.embed_batch(clips, training));
            return cross_entropy(logits, labels);
          },
          refs, 4);
  }
}

}  // namespace

std::vector<GradSuiteRow> gradcheck_suite(const std::string& scope,
                                          uint64_t seed) {
  check<ConfigError>(scope == "op" || scope == "module" || scope == "model",
                     "unknown gradcheck scope '", scope,
                     "' (op|module|model)");
  Suite suite;
  suite.seed = seed;
  if (scope == "op") op_scope(suite);
  if (scope == "module") module_scope(suite);
  if (scope == "model") model_scope(suite);
  return suite.rows;
}

}  // namespace cra
