#include <random>

#include "doctest.h"

#include "codedlf/autodiff.hpp"
#include "codedlf/error.hpp"
#include "codedlf/gradcheck.hpp"
#include "codedlf/optim.hpp"

using namespace codedlf;
using namespace codedlf::ad;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Independent corner-weight blend for a [H, W, D, C] volume.
std::vector<double> trilinear_oracle(const std::vector<double>& vol, std::size_t h, std::size_t w,
                                     std::size_t d, std::size_t c, Vec3 p) {
  auto to_index = [](double s, std::size_t n) {
    double f = (std::clamp(s, -1.0, 1.0) + 1.0) * 0.5 * double(n - 1);
    return f;
  };
  double fx = to_index(p.x, w), fy = to_index(p.y, h), fz = to_index(p.z, d);
  std::vector<double> out(c, 0.0);
  for (std::size_t yi = 0; yi < h; ++yi)
    for (std::size_t xi = 0; xi < w; ++xi)
      for (std::size_t zi = 0; zi < d; ++zi) {
        double wy = std::max(0.0, 1.0 - std::abs(fy - double(yi)));
        double wx = std::max(0.0, 1.0 - std::abs(fx - double(xi)));
        double wz = std::max(0.0, 1.0 - std::abs(fz - double(zi)));
        double wt = wy * wx * wz;
        if (wt == 0.0) continue;
        for (std::size_t k = 0; k < c; ++k) out[k] += wt * vol[((yi * w + xi) * d + zi) * c + k];
      }
  return out;
}

}  // namespace

TEST_CASE("gradient of sum is all ones") {
  Value w = Value::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of mse against zero") {
  Value w = Value::parameter({1}, {0.7});
  backward(mse(w, Value::constant({1}, {0.0})));
  CHECK(w.grad()[0] == doctest::Approx(1.4).epsilon(1e-15));

  Value v = Value::parameter({4}, {0.5, -1.0, 2.0, 0.25});
  backward(mse(v, Value::zeros({4})));
  for (std::size_t i = 0; i < 4; ++i) CHECK(v.grad()[i] == doctest::Approx(2.0 * v.data()[i] / 4.0).epsilon(1e-15));
}

TEST_CASE("random three-layer MLP matches central differences") {
  std::mt19937_64 rng(0);
  ParamStore store;
  const std::size_t in = 5, hid = 7, out = 3, n = 4;
  store.add("w1", {in, hid}, randn(in * hid, rng, 0.5));
  store.add("b1", {hid}, randn(hid, rng, 0.1));
  store.add("w2", {hid, hid}, randn(hid * hid, rng, 0.5));
  store.add("b2", {hid}, randn(hid, rng, 0.1));
  store.add("w3", {hid, out}, randn(hid * out, rng, 0.5));
  Value x = Value::constant({n, in}, randn(n * in, rng));
  Value target = Value::constant({n, out}, randn(n * out, rng));
  auto loss = [&](ParamStore& s) {
    Value h = sigmoid(add(matmul(x, s.get("w1")), s.get("b1")));
    h = softplus(add(matmul(h, s.get("w2")), s.get("b2")));
    return mse(matmul(h, s.get("w3")), target);
  };
  GradCheckResult r = grad_check(loss, store, 1e-5);
  CHECK(r.checked == store.parameter_count());
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("linear loss gradient check is essentially exact") {
  ParamStore store;
  store.add("w", {3}, {0.3, -0.2, 1.1});
  Value c = Value::constant({3}, {2.0, -1.0, 0.5});
  GradCheckResult r = grad_check([&](ParamStore& s) { return sum(mul(s.get("w"), c)); }, store);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("every operator passes the finite-difference suite") {
  auto results = gradcheck::run_suite();
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.passed);
    CHECK(r.max_rel_error < r.tolerance);
    CHECK(r.checked > 0);
  }
  CHECK(gradcheck::all_passed(results));
}

TEST_CASE("a corrupted backward is caught by the suite") {
  for (std::string op : {"conv2d", "volume_render", "trilinear_gather", "matmul"}) {
    testing::set_backward_fault(op, 1.001);
    auto results = gradcheck::run_suite();
    testing::set_backward_fault("", 1.0);
    CHECK_FALSE(gradcheck::all_passed(results));
  }
}

TEST_CASE("backward twice on the same graph is an error") {
  Value w = Value::parameter({2}, {1, 2});
  Value loss = sum(mul(w, w));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), Error);
}

TEST_CASE("non-scalar loss is rejected") {
  Value w = Value::parameter({2}, {1, 2});
  CHECK_THROWS_AS(backward(mul(w, w)), Error);
}

TEST_CASE("repeated forward is bit-identical") {
  std::mt19937_64 rng(3);
  Value x = Value::constant({6, 6, 2}, randn(72, rng));
  Value k = Value::constant({3, 3, 2, 4}, randn(72, rng));
  Value a = leaky_relu(conv2d(x, k, 1), 0.2);
  Value b = leaky_relu(conv2d(x, k, 1), 0.2);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));
}

TEST_CASE("matmul and conv2d forward agree with direct loops") {
  std::mt19937_64 rng(4);
  const std::size_t m = 13, kk = 9, n = 21;
  auto av = randn(m * kk, rng), bv = randn(kk * n, rng);
  Value c = matmul(Value::constant({m, kk}, av), Value::constant({kk, n}, bv));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < kk; ++p) s += av[i * kk + p] * bv[p * n + j];
      CHECK(c.data()[i * n + j] == doctest::Approx(s).epsilon(1e-13));
    }

  const std::size_t h = 5, w = 6, ci = 3, co = 2, ks = 3, pad = 1;
  auto xv = randn(h * w * ci, rng), kv = randn(ks * ks * ci * co, rng);
  Value y = conv2d(Value::constant({h, w, ci}, xv), Value::constant({ks, ks, ci, co}, kv), pad);
  REQUIRE(y.shape() == Shape{h, w, co});
  for (std::size_t oy = 0; oy < h; ++oy)
    for (std::size_t ox = 0; ox < w; ++ox)
      for (std::size_t o = 0; o < co; ++o) {
        double s = 0;
        for (std::size_t dy = 0; dy < ks; ++dy)
          for (std::size_t dx = 0; dx < ks; ++dx) {
            long iy = long(oy + dy) - long(pad), ix = long(ox + dx) - long(pad);
            if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
            for (std::size_t i = 0; i < ci; ++i)
              s += xv[(std::size_t(iy) * w + std::size_t(ix)) * ci + i] * kv[((dy * ks + dx) * ci + i) * co + o];
          }
        CHECK(y.data()[(oy * w + ox) * co + o] == doctest::Approx(s).epsilon(1e-13));
      }
  Value valid = conv2d(Value::constant({h, w, ci}, xv), Value::constant({ks, ks, ci, co}, kv), 0);
  CHECK(valid.shape() == Shape{h - 2, w - 2, co});
}

TEST_CASE("broadcasting over trailing axes") {
  Value a = Value::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Value b = Value::constant({3}, {10, 20, 30});
  Value s = add(a, b);
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{11, 22, 33, 14, 25, 36});
  Value d = sub(b, a);
  CHECK(d.data()[3] == 6.0);
  Value bad = Value::constant({2}, {1, 2});
  CHECK_THROWS_AS(add(a, bad), Error);
}

TEST_CASE("shape ops") {
  Value a = Value::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Value r = reshape(a, {3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
  Value s = slice(a, 1, 1, 3);
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{2, 3, 5, 6});
  Value parts[] = {a, a};
  Value c = concat(parts, 1);
  CHECK(c.shape() == Shape{2, 6});
  CHECK(c.data()[3] == 1.0);
  CHECK(sum(a, 0).data()[2] == 9.0);
  CHECK(mean(a, 1).data()[1] == 5.0);
  CHECK(mean(a).item() == 3.5);
}

TEST_CASE("activation ranges") {
  std::mt19937_64 rng(9);
  Value x = Value::constant({100000}, randn(100000, rng, 20.0));
  Value sp = softplus(x), sg = sigmoid(x), lr = leaky_relu(x, 0.2), re = relu(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    REQUIRE(sp.data()[i] >= 0.0);
    REQUIRE(sg.data()[i] >= 0.0);
    REQUIRE(sg.data()[i] <= 1.0);
    REQUIRE(re.data()[i] >= 0.0);
    double xi = x.data()[i];
    REQUIRE(lr.data()[i] == (xi > 0 ? xi : 0.2 * xi));
  }
}

TEST_CASE("trilinear gather") {
  std::mt19937_64 rng(1);
  const std::size_t h = 4, w = 5, d = 3, c = 2;
  auto vol = randn(h * w * d * c, rng);
  Value v = Value::constant({h, w, d, c}, vol);
  auto at = [&](std::size_t y, std::size_t x, std::size_t z, std::size_t k) { return vol[((y * w + x) * d + z) * c + k]; };
  auto ndc = [](std::size_t i, std::size_t n) { return -1.0 + 2.0 * double(i) / double(n - 1); };

  SUBCASE("exact at voxel centers") {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t z = 0; z < d; ++z) {
          Vec3 p{ndc(x, w), ndc(y, h), ndc(z, d)};
          Value g = trilinear_gather(v, std::span<const Vec3>(&p, 1));
          for (std::size_t k = 0; k < c; ++k) REQUIRE(g.data()[k] == at(y, x, z, k));
        }
  }
  SUBCASE("midpoint along X is the average") {
    Vec3 p{0.5 * (ndc(1, w) + ndc(2, w)), ndc(2, h), ndc(1, d)};
    Value g = trilinear_gather(v, std::span<const Vec3>(&p, 1));
    for (std::size_t k = 0; k < c; ++k)
      CHECK(g.data()[k] == doctest::Approx(0.5 * (at(2, 1, 1, k) + at(2, 2, 1, k))).epsilon(1e-14));
  }
  SUBCASE("matches the corner-weight oracle, including clamped coordinates") {
    std::uniform_real_distribution<double> uni(-1.2, 1.2);
    std::vector<Vec3> pts(100);
    for (auto& p : pts) p = {uni(rng), uni(rng), uni(rng)};
    Value g = trilinear_gather(v, pts);
    double worst = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto want = trilinear_oracle(vol, h, w, d, c, pts[i]);
      for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(g.data()[i * c + k] - want[k]));
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("affine between neighbours along each axis") {
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<Vec3> pts;
      for (int s = 0; s <= 4; ++s) {
        double f = s / 4.0;
        Vec3 p{ndc(1, w), ndc(1, h), ndc(1, d)};
        if (axis == 0) p.x = ndc(1, w) + f * (ndc(2, w) - ndc(1, w));
        if (axis == 1) p.y = ndc(1, h) + f * (ndc(2, h) - ndc(1, h));
        if (axis == 2) p.z = ndc(1, d) + f * (ndc(2, d) - ndc(1, d));
        pts.push_back(p);
      }
      Value g = trilinear_gather(v, pts);
      for (std::size_t k = 0; k < c; ++k) {
        double step = g.data()[1 * c + k] - g.data()[k];
        for (int s = 1; s <= 4; ++s)
          CHECK(g.data()[std::size_t(s) * c + k] - g.data()[std::size_t(s - 1) * c + k] == doctest::Approx(step).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamStore s;
    Value p = s.add("p", {1}, {0.0});
    p.mutable_grad()[0] = 1.0;
    adam_step(s, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(s.get("p").data()[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(s.step_count() == 1);
    CHECK_FALSE(s.get("p").has_grad());
  }
  SUBCASE("zero gradient leaves the parameter and advances the step") {
    ParamStore s;
    s.add("p", {2}, {0.5, -0.5});
    s.get("p").mutable_grad()[0] = 0.0;
    adam_step(s, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(s.get("p").data()[0] == 0.5);
    CHECK(s.get("p").data()[1] == -0.5);
    CHECK(s.step_count() == 1);
  }
  SUBCASE("missing gradient is an error") {
    ParamStore s;
    s.add("p", {1}, {0.0});
    CHECK_THROWS_AS(adam_step(s, 1e-3, 0.9, 0.999, 1e-8), Error);
  }
  SUBCASE("converges on a quadratic") {
    ParamStore s;
    s.add("p", {1}, {0.0});
    Value three = Value::constant({1}, {3.0});
    for (int i = 0; i < 100; ++i) {
      Value d = sub(s.get("p"), three);
      backward(sum(mul(d, d)));
      adam_step(s, 0.3, 0.9, 0.999, 1e-8);
    }
    CHECK(std::abs(s.get("p").data()[0] - 3.0) < 1e-2);
  }
  SUBCASE("moments are shaped like their parameter") {
    ParamStore s;
    s.add("w", {2, 3}, std::vector<double>(6, 0.1));
    CHECK(s.moments("w").m.size() == 6);
    CHECK(s.moments("w").v.size() == 6);
    CHECK_THROWS_AS(s.add("w", {1}, {0.0}), Error);
  }
}

TEST_CASE("no-grad mode records no graph") {
  Value w = Value::parameter({2}, {1, 2});
  {
    NoGradGuard guard;
    Value y = mul(w, w);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(mul(w, w).requires_grad());
}
