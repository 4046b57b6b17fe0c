#include "codedlf/gradcheck.hpp"

#include <functional>
#include <random>

#include "codedlf/coding.hpp"
#include "codedlf/hash.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/models.hpp"
#include "codedlf/optim.hpp"
#include "codedlf/rendering.hpp"
#include "codedlf/training.hpp"

namespace codedlf::gradcheck {

using ad::ParamStore;
using ad::Shape;
using ad::Value;

namespace {

struct Rand {
  std::mt19937_64 rng;
  explicit Rand(std::uint64_t seed) : rng(seed) {}
  std::vector<double> normal(std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
  }
  std::vector<double> uniform(std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
  }
  // Values bounded away from zero so kinks at 0 are never crossed.
  std::vector<double> away_from_zero(std::size_t n) {
    auto v = uniform(n, 0.1, 1.5);
    std::bernoulli_distribution sign(0.5);
    for (auto& x : v)
      if (sign(rng)) x = -x;
    return v;
  }
};

CheckResult check(const std::string& name, const std::string& kind, ParamStore& store,
                  const std::function<Value(ParamStore&)>& fn, const SuiteOptions& o) {
  auto res = ad::grad_check(fn, store, o.eps, 1e-8);
  CheckResult c;
  c.name = name;
  c.kind = kind;
  c.max_rel_error = res.max_rel_error;
  c.tolerance = kind == "op" ? o.op_tolerance : o.pipeline_tolerance;
  c.worst_param = res.worst_param;
  c.checked = res.checked;
  c.passed = res.max_rel_error < c.tolerance;
  return c;
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& o) {
  std::vector<CheckResult> out;
  Rand r(o.seed);

  auto binary_case = [&](const std::string& name, Value (*op)(const Value&, const Value&), Shape sa, Shape sb) {
    ParamStore s;
    s.add("a", sa, r.normal(ad::shape_size(sa)));
    s.add("b", sb, r.normal(ad::shape_size(sb)));
    Value w;
    out.push_back(check(name, "op", s, [&, op](ParamStore& p) {
      Value y = op(p.get("a"), p.get("b"));
      if (!w) w = Value::constant(y.shape(), r.normal(y.size()));
      return ad::sum(ad::mul(y, w));
    }, o));
  };
  binary_case("add", ad::add, {3, 4}, {3, 4});
  binary_case("add_broadcast", ad::add, {5, 3}, {3});
  binary_case("sub", ad::sub, {2, 3, 2}, {3, 2});
  binary_case("mul", ad::mul, {4, 3}, {4, 3});
  binary_case("mul_broadcast", ad::mul, {1}, {3, 5});

  auto unary_case = [&](const std::string& name, std::function<Value(const Value&)> op) {
    ParamStore s;
    s.add("x", {4, 5}, r.away_from_zero(20));
    Value w = Value::constant({4, 5}, r.normal(20));
    out.push_back(check(name, "op", s, [&, op, w](ParamStore& p) { return ad::sum(ad::mul(op(p.get("x")), w)); }, o));
  };
  unary_case("leaky_relu", [](const Value& x) { return ad::leaky_relu(x, 0.2); });
  unary_case("relu", [](const Value& x) { return ad::relu(x); });
  unary_case("sigmoid", [](const Value& x) { return ad::sigmoid(x); });
  unary_case("softplus", [](const Value& x) { return ad::softplus(x); });

  {
    ParamStore s;
    s.add("a", {5, 4}, r.normal(20));
    s.add("b", {4, 3}, r.normal(12));
    Value w = Value::constant({5, 3}, r.normal(15));
    out.push_back(check("matmul", "op", s, [&, w](ParamStore& p) {
      return ad::sum(ad::mul(ad::matmul(p.get("a"), p.get("b")), w));
    }, o));
  }
  {
    ParamStore s;
    s.add("x", {5, 6, 2}, r.normal(60));
    s.add("w", {3, 3, 2, 3}, r.normal(54, 0.5));
    Value w = Value::constant({5, 6, 3}, r.normal(90));
    out.push_back(check("conv2d", "op", s, [&, w](ParamStore& p) {
      return ad::sum(ad::mul(ad::conv2d(p.get("x"), p.get("w"), 1), w));
    }, o));
  }
  {
    ParamStore s;
    s.add("a", {3, 2}, r.normal(6));
    s.add("b", {3, 4}, r.normal(12));
    Value w = Value::constant({3, 6}, r.normal(18));
    out.push_back(check("concat", "op", s, [&, w](ParamStore& p) {
      Value parts[2] = {p.get("a"), p.get("b")};
      return ad::sum(ad::mul(ad::concat(parts, 1), w));
    }, o));
  }
  {
    ParamStore s;
    s.add("x", {2, 3, 4}, r.normal(24));
    Value w1 = Value::constant({6, 4}, r.normal(24));
    Value w2 = Value::constant({2, 2, 4}, r.normal(16));
    out.push_back(check("reshape", "op", s, [&, w1](ParamStore& p) {
      return ad::sum(ad::mul(ad::reshape(p.get("x"), {6, 4}), w1));
    }, o));
    out.push_back(check("slice", "op", s, [&, w2](ParamStore& p) {
      return ad::sum(ad::mul(ad::slice(p.get("x"), 1, 1, 3), w2));
    }, o));
    Value w3 = Value::constant({2, 4}, r.normal(8));
    out.push_back(check("sum_axis", "op", s, [&, w3](ParamStore& p) {
      return ad::sum(ad::mul(ad::sum(p.get("x"), 1), w3));
    }, o));
    Value w4 = Value::constant({3, 4}, r.normal(12));
    out.push_back(check("mean_axis", "op", s, [&, w4](ParamStore& p) {
      return ad::sum(ad::mul(ad::mean(p.get("x"), 0), w4));
    }, o));
    out.push_back(check("mean", "op", s, [&](ParamStore& p) { return ad::mean(p.get("x")); }, o));
  }
  {
    ParamStore s;
    s.add("p", {7}, r.normal(7));
    Value target = Value::constant({7}, r.normal(7));
    out.push_back(check("mse", "op", s, [&, target](ParamStore& p) { return ad::mse(p.get("p"), target); }, o));
  }
  {
    ParamStore s;
    s.add("vol", {4, 5, 3, 2}, r.normal(120));
    std::vector<ad::Vec3> coords;
    auto c = r.uniform(3 * 10, -1.2, 1.2);
    for (std::size_t i = 0; i < 10; ++i) coords.push_back({c[3 * i], c[3 * i + 1], c[3 * i + 2]});
    Value w = Value::constant({10, 2}, r.normal(20));
    out.push_back(check("trilinear_gather", "op", s, [&, coords, w](ParamStore& p) {
      return ad::sum(ad::mul(ad::trilinear_gather(p.get("vol"), coords), w));
    }, o));
  }
  {
    ParamStore s;
    s.add("c", {3, 5}, r.uniform(15, 0.0, 1.0));
    s.add("sigma", {3, 5}, r.uniform(15, 0.05, 2.0));
    std::vector<double> t;
    for (int ray = 0; ray < 3; ++ray) {
      auto ts = r.uniform(5, -3.0, 3.0);
      std::sort(ts.begin(), ts.end());
      t.insert(t.end(), ts.begin(), ts.end());
    }
    Value w = Value::constant({3}, r.normal(3));
    out.push_back(check("volume_render", "op", s, [&, t, w](ParamStore& p) {
      return ad::sum(ad::mul(ad::volume_render(p.get("c"), p.get("sigma"), t, 3.0), w));
    }, o));
  }

  // Composed pipeline on a toy scene with every parameter randomized.
  {
    const std::size_t h = 6, wd = 6;
    SceneSpec scene;
    scene.layers = {{1.0, "value_noise", o.seed + 1, "full"}, {-1.0, "checkerboard", o.seed + 2, "disk"}};
    LightField lf = synth_lightfield(scene, 3, 3, h, wd, o.seed);
    CodingPattern pat = make_default_pattern(2, 3, 3, h, wd, 2, o.seed + 3);
    models::ModelConfig mc;
    mc.feat.in_channels = 1 + pat.k;
    mc.feat.n_blocks = 1;
    mc.feat.hidden_channels = 3;
    mc.feat.depth = 4;
    mc.feat.channels = 3;
    mc.nerf.hidden_layers = 2;
    mc.nerf.width = 8;
    mc.nerf.feature_channels = 3;
    ParamStore store = models::init_params(mc, o.seed);
    for (const auto& name : store.names()) {
      auto d = store.get(name).mutable_data();
      auto v = r.normal(d.size(), 0.4);
      std::copy(v.begin(), v.end(), d.begin());
    }
    render::RenderConfig rc;
    rc.n_train_samples = 6;
    rc.seed = o.seed;
    Image input = train::observe(lf, InputMode::Joint, &pat);
    Value x = train::network_input(input, InputMode::Joint, &pat);
    std::vector<render::RayCoord> rays;
    std::vector<std::uint64_t> ids;
    std::vector<double> targets;
    StreamRng rr(hash_combine({o.seed, 77}));
    for (std::size_t i = 0; i < 6; ++i) {
      std::size_t u = rr() % 3, v = rr() % 3, px = rr() % wd, py = rr() % h;
      rays.push_back({double(u) - 1.0, double(v) - 1.0, double(px), double(py)});
      ids.push_back(i);
      targets.push_back(lf.at(u, v, py, px));
    }
    Value target = Value::constant({targets.size()}, targets);
    out.push_back(check("pipeline", "pipeline", store, [&](ParamStore& p) {
      Value fv = models::featnet_forward(p, mc.feat, x);
      auto b = render::render_rays(fv, p, mc.nerf, rays, rc, render::SampleMode::Train, ids);
      return ad::mse(b.luminance, target);
    }, o));
  }
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

nlohmann::json to_json(const std::vector<CheckResult>& results) {
  nlohmann::json checks = nlohmann::json::array();
  double worst_op = 0.0, worst_pipe = 0.0;
  std::string worst_op_name;
  for (const auto& r : results) {
    checks.push_back({{"name", r.name}, {"kind", r.kind}, {"max_rel_error", r.max_rel_error},
                      {"tolerance", r.tolerance}, {"worst_param", r.worst_param},
                      {"checked", r.checked}, {"passed", r.passed}});
    if (r.kind == "op" && r.max_rel_error >= worst_op) {
      worst_op = r.max_rel_error;
      worst_op_name = r.name;
    }
    if (r.kind == "pipeline") worst_pipe = std::max(worst_pipe, r.max_rel_error);
  }
  return {{"passed", all_passed(results)},
          {"worst_op", worst_op_name},
          {"worst_op_error", worst_op},
          {"pipeline_error", worst_pipe},
          {"checks", checks}};
}

}  // namespace codedlf::gradcheck
