#include <random>

#include "doctest.h"

#include "codedlf/autodiff.hpp"
#include "codedlf/error.hpp"
#include "codedlf/models.hpp"
#include "codedlf/optim.hpp"

using namespace codedlf;
using namespace codedlf::models;

namespace {

void randomize(ad::ParamStore& store, std::uint64_t seed, double s) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, s);
  for (const auto& n : store.names())
    for (auto& v : store.get(n).mutable_data()) v = g(rng);
}

bool same(const ad::Value& a, const ad::Value& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::vector<NerfQuery> random_queries(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0), view(-3.0, 3.0);
  std::vector<NerfQuery> q(n);
  for (auto& x : q) x = {uni(rng), uni(rng), uni(rng), view(rng), view(rng)};
  return q;
}

}  // namespace

TEST_CASE("feature volume shape under default configuration") {
  ModelConfig cfg;
  auto params = init_params(cfg, 0);
  ad::Value in = featnet_input(Image(6, 7, 0.3));
  ad::Value fv = featnet_forward(params, cfg.feat, in);
  CHECK(fv.shape() == ad::Shape{6, 7, 13, 8});
}

TEST_CASE("zero-initialized projection gives a zero volume") {
  ModelConfig cfg;
  auto params = init_params(cfg, 1);
  ad::Value fv = featnet_forward(params, cfg.feat, featnet_input(Image(5, 5, 0.0)));
  for (double v : fv.data()) CHECK(v == 0.0);
  fv = featnet_forward(params, cfg.feat, featnet_input(Image(5, 5, 0.7)));
  for (double v : fv.data()) CHECK(v == 0.0);
}

TEST_CASE("extra input planes widen the first convolution") {
  ModelConfig cfg;
  cfg.feat.in_channels = 3;
  auto params = init_params(cfg, 0);
  CHECK(params.get("feat.stem.w").shape() == ad::Shape{3, 3, 3, 32});
  Image planes[2] = {Image(4, 4, 1.0), Image(4, 4, 0.0)};
  ad::Value in = featnet_input(Image(4, 4, 0.5), planes);
  CHECK(in.shape() == ad::Shape{4, 4, 3});
  CHECK_NOTHROW(featnet_forward(params, cfg.feat, in));
  CHECK_THROWS_AS(featnet_forward(params, cfg.feat, featnet_input(Image(4, 4, 0.5))), Error);
}

TEST_CASE("FeatNet gradient matches finite differences on a toy input") {
  ModelConfig cfg;
  cfg.feat = {1, 1, 3, 3, 2, 2, 0.2};
  cfg.nerf.feature_channels = 2;
  auto params = init_params(cfg, 2);
  ad::ParamStore feat;
  for (const auto& n : params.names())
    if (n.rfind("feat.", 0) == 0) {
      auto d = params.get(n).data();
      feat.add(n, params.get(n).shape(), {d.begin(), d.end()});
    }
  randomize(feat, 3, 0.5);
  Image img(4, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = double((i * 7) % 5) / 4.0;
  ad::Value in = featnet_input(img);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> tv(4 * 4 * 2 * 2);
  for (auto& t : tv) t = g(rng);
  ad::Value target = ad::Value::constant({4, 4, 2, 2}, tv);
  auto r = ad::grad_check([&](ad::ParamStore& s) { return ad::mse(featnet_forward(s, cfg.feat, in), target); }, feat);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("NeRFNet output ranges") {
  ModelConfig cfg;
  auto params = init_params(cfg, 5);
  randomize(params, 6, 1.0);
  std::mt19937_64 rng(7);
  const std::size_t n = 100000;
  auto q = random_queries(n, rng);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<double> f(n * 8);
  for (auto& x : f) x = g(rng);
  auto out = nerfnet_forward(params, cfg.nerf, q, ad::Value::constant({n, 8}, f));
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(out.sigma.data()[i] >= 0.0);
    REQUIRE(out.c.data()[i] >= 0.0);
    REQUIRE(out.c.data()[i] <= 1.0);
  }
}

TEST_CASE("NeRFNet is repeatable and has no cross-query coupling") {
  ModelConfig cfg;
  auto params = init_params(cfg, 8);
  std::mt19937_64 rng(9);
  const std::size_t n = 37;
  auto q = random_queries(n, rng);
  std::normal_distribution<double> g;
  std::vector<double> f(n * 8);
  for (auto& x : f) x = g(rng);
  auto a = nerfnet_forward(params, cfg.nerf, q, ad::Value::constant({n, 8}, f));
  auto b = nerfnet_forward(params, cfg.nerf, q, ad::Value::constant({n, 8}, f));
  CHECK(same(a.c, b.c));
  CHECK(same(a.sigma, b.sigma));

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 11) % n;
  std::vector<NerfQuery> pq(n);
  std::vector<double> pf(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    pq[i] = q[perm[i]];
    std::copy_n(f.begin() + long(perm[i] * 8), 8, pf.begin() + long(i * 8));
  }
  auto p = nerfnet_forward(params, cfg.nerf, pq, ad::Value::constant({n, 8}, pf));
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(p.c.data()[i] == a.c.data()[perm[i]]);
    CHECK(p.sigma.data()[i] == a.sigma.data()[perm[i]]);
  }
}

TEST_CASE("NeRFNet is continuous in the query") {
  ModelConfig cfg;
  auto params = init_params(cfg, 10);
  std::mt19937_64 rng(11);
  std::vector<double> f(8);
  std::normal_distribution<double> g;
  for (auto& x : f) x = g(rng);
  ad::Value feat = ad::Value::constant({1, 8}, f);
  for (int trial = 0; trial < 20; ++trial) {
    NerfQuery q = random_queries(1, rng)[0];
    double dir[5];
    for (auto& d : dir) d = g(rng);
    auto base = nerfnet_forward(params, cfg.nerf, std::span<const NerfQuery>(&q, 1), feat);
    double prev = 1e300;
    for (double delta : {1e-1, 1e-2, 1e-3}) {
      NerfQuery s{q.x + delta * dir[0], q.y + delta * dir[1], q.z + delta * dir[2], q.theta + delta * dir[3],
                  q.phi + delta * dir[4]};
      auto o = nerfnet_forward(params, cfg.nerf, std::span<const NerfQuery>(&s, 1), feat);
      double diff = std::abs(o.c.item() - base.c.item()) + std::abs(o.sigma.item() - base.sigma.item());
      CHECK(diff < prev);
      prev = diff;
    }
  }
}

TEST_CASE("positional encoding widens the input") {
  NeRFNetConfig n;
  CHECK(n.input_dim() == 13);
  n.pe_freqs = 2;
  CHECK(n.input_dim() == 5 * 5 + 8);
  std::vector<double> out;
  encode_query({0.25, 0, 0, 0, 0}, 2, out);
  CHECK(out.size() == 25);
  CHECK(out[0] == 0.25);
}

TEST_CASE("initialization is deterministic per seed") {
  ModelConfig cfg;
  auto a = init_params(cfg, 3), b = init_params(cfg, 3), c = init_params(cfg, 4);
  bool differs = false;
  for (const auto& n : a.names()) {
    CHECK(same(a.get(n), b.get(n)));
    if (!same(a.get(n), c.get(n))) differs = true;
  }
  CHECK(differs);
  CHECK(a.get("nerf.head.b").data()[1] == -1.0);
  for (double v : a.get("feat.proj.w").data()) CHECK(v == 0.0);
}

TEST_CASE("hidden pre-activations keep roughly unit variance") {
  ModelConfig cfg;
  auto params = init_params(cfg, 12);
  const std::size_t n = 10000, in = cfg.nerf.input_dim();
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  std::vector<double> x(n * in);
  for (auto& v : x) v = g(rng);
  ad::Value h = ad::Value::constant({n, in}, x);
  for (std::size_t l = 0; l < cfg.nerf.hidden_layers; ++l) {
    std::string base = "nerf.l" + std::to_string(l);
    ad::Value pre = ad::add(ad::matmul(h, params.get(base + ".w")), params.get(base + ".b"));
    double mean = 0, sq = 0;
    for (double v : pre.data()) mean += v;
    mean /= double(pre.size());
    for (double v : pre.data()) sq += (v - mean) * (v - mean);
    double var = sq / double(pre.size());
    INFO("layer " << l << " variance " << var);
    CHECK(var >= 0.5);
    CHECK(var <= 2.0);
    h = ad::leaky_relu(pre, cfg.nerf.slope);
  }
}

TEST_CASE("model config JSON round-trip and validation") {
  ModelConfig cfg;
  cfg.feat.n_blocks = 2;
  cfg.nerf.pe_freqs = 3;
  CHECK(to_json(model_config_from_json(to_json(cfg))) == to_json(cfg));
  ModelConfig bad;
  bad.feat.depth = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ModelConfig{};
  bad.nerf.width = 10;
  CHECK_THROWS_AS(bad.validate(), Error);
}
