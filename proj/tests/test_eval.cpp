#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"

#include "codedlf/error.hpp"
#include "codedlf/eval.hpp"

using namespace codedlf;
using namespace codedlf::eval;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  Image img(h, w);
  for (auto& p : img.pixels) p = uni(rng);
  return img;
}

// Direct per-window SSIM with population statistics.
double ssim_oracle(const Image& a, const Image& b, std::size_t win, double k1, double k2) {
  const double c1 = k1 * k1, c2 = k2 * k2, n = double(win * win);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + win <= a.height; ++y)
    for (std::size_t x = 0; x + win <= a.width; ++x) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) ma += a.at(y + i, x + j), mb += b.at(y + i, x + j);
      ma /= n, mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          double da = a.at(y + i, x + j) - ma, db = b.at(y + i, x + j) - mb;
          va += da * da, vb += db * db, cov += da * db;
        }
      va /= n, vb /= n, cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / double(count);
}

train::Checkpoint small_checkpoint(InputMode mode, std::uint64_t seed) {
  train::Checkpoint ck;
  ck.mode = mode;
  ck.model.feat = {1, 1, 6, 3, 5, 4, 0.2};
  ck.model.nerf.feature_channels = 4;
  ck.model.nerf.hidden_layers = 2;
  ck.model.nerf.width = 16;
  ck.render.n_test_samples = 8;
  if (mode == InputMode::Joint) {
    ck.pattern = make_default_pattern(2, 5, 5, 16, 16, 4, 1);
    ck.model.feat.in_channels = 3;
  }
  ck.params = models::init_params(ck.model, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& v : ck.params.get("feat.proj.w").mutable_data()) v = g(rng);
  return ck;
}

SceneSpec scene() {
  SceneSpec s;
  s.layers = {{1.0, "value_noise", 4, "full"}, {-1.5, "checkerboard", 5, "disk"}};
  s.background = {"value_noise", 6};
  return s;
}

EvalOptions small_opts(std::size_t m, double step) {
  EvalOptions o;
  o.m = m;
  o.step = step;
  o.height = o.width = 16;
  return o;
}

}  // namespace

TEST_CASE("PSNR") {
  Image a = random_image(9, 11, 1);
  CHECK(psnr(a, a) == kInf);
  Image b(4, 4, 0.3), c(4, 4, 0.4);
  CHECK(psnr(b, c) == doctest::Approx(20.0).epsilon(1e-12));
  Image d = random_image(9, 11, 2);
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a.pixels[i] - d.pixels[i]) * (a.pixels[i] - d.pixels[i]);
  mse /= double(a.size());
  CHECK(std::abs(psnr(a, d) - 10.0 * std::log10(1.0 / mse)) < 1e-9);
  CHECK(psnr(a, d) == psnr(d, a));
  CHECK_THROWS_AS(psnr(a, Image(9, 10)), Error);
}

TEST_CASE("SSIM") {
  Image a = random_image(12, 14, 3);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  Image p(10, 10, 0.3), q(10, 10, 0.7);
  const double c1 = 1e-4;
  CHECK(ssim(p, q) == doctest::Approx((2 * 0.3 * 0.7 + c1) / (0.09 + 0.49 + c1)).epsilon(1e-12));
  Image b = random_image(12, 14, 4);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b, 8, 0.01, 0.03)) < 1e-9);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-15));
  double s = ssim(a, b);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  CHECK_THROWS_AS(ssim(Image(5, 5), Image(5, 5)), Error);
}

TEST_CASE("single-viewpoint grid is one PSNR/SSIM evaluation") {
  auto ck = small_checkpoint(InputMode::Center, 1);
  auto r = eval_grid(ck, scene(), small_opts(1, 0.5), "ck", "sc");
  REQUIRE(r.m == 1);
  LightField lf = synth_lightfield(scene(), 5, 5, 16, 16, 0);
  auto fv = train::feature_volume(ck, train::observe(lf, ck.mode, nullptr));
  Image pred = train::render_view(ck, fv, {0, 0}).image;
  Image truth = synth_view(scene(), {0, 0}, 16, 16, 0);
  CHECK(r.psnr[0][0] == psnr(pred, truth));
  CHECK(r.ssim[0][0] == ssim(pred, truth));
  CHECK(r.mean_psnr == r.psnr[0][0]);
  CHECK(center_psnr(r) == r.psnr[0][0]);
}

TEST_CASE("integer viewpoints of the half-step grid match direct scoring") {
  auto ck = small_checkpoint(InputMode::Joint, 2);
  auto r = eval_grid(ck, scene(), small_opts(13, 0.5));
  CHECK(r.offset(0) == -3.0);
  CHECK(r.offset(12) == 3.0);
  CHECK(r.offset(6) == 0.0);
  LightField lf = synth_lightfield(scene(), 5, 5, 16, 16, 0);
  auto fv = train::feature_volume(ck, train::observe(lf, ck.mode, &*ck.pattern));
  for (int u = -2; u <= 2; ++u)
    for (int v = -2; v <= 2; ++v) {
      Image pred = train::render_view(ck, fv, {double(u), double(v)}).image;
      Image truth = lf.view(std::size_t(u + 2), std::size_t(v + 2));
      CHECK(r.psnr[std::size_t(6 + 2 * u)][std::size_t(6 + 2 * v)] == psnr(pred, truth));
    }
  CHECK_FALSE(r.warnings.empty());
  auto inner = eval_grid(ck, scene(), small_opts(5, 0.5));
  CHECK(inner.warnings.empty());
}

TEST_CASE("evaluation is deterministic and reports round-trip") {
  testutil::TempDir dir("report");
  auto ck = small_checkpoint(InputMode::Uncoded, 3);
  auto a = eval_grid(ck, scene(), small_opts(3, 1.0), "a", "b");
  auto b = eval_grid(ck, scene(), small_opts(3, 1.0), "a", "b");
  CHECK(a == b);
  save_report(a, dir / "r.json");
  CHECK(load_report(dir / "r.json") == a);
  auto j = to_json(a);
  for (const char* k : {"checkpoint", "scene", "grid", "psnr", "ssim", "mean_psnr", "mean_ssim"}) CHECK(j.contains(k));

  EvalReport inf = a;
  inf.psnr[1][1] = kInf;
  CHECK(to_json(inf)["psnr"][1][1] == "inf");
  CHECK(report_from_json(to_json(inf)) == inf);

  auto png1 = heatmap_png(a), png2 = heatmap_png(load_report(dir / "r.json"));
  CHECK(png1 == png2);
  REQUIRE(png1.size() > 8);
  CHECK(png1[1] == 'P');
  CHECK(heatmap_png(inf) == heatmap_png(inf));
}

TEST_CASE("corner and center aggregates") {
  EvalReport r;
  r.m = 5;
  r.step = 1;
  r.psnr.assign(5, std::vector<double>(5, 10.0));
  r.ssim.assign(5, std::vector<double>(5, 0.5));
  for (std::size_t i : {0u, 1u, 3u, 4u})
    for (std::size_t j : {0u, 1u, 3u, 4u}) r.psnr[i][j] = 20.0;
  r.psnr[0][0] = 36.0;
  r.psnr[2][2] = 30.0;
  CHECK(corner_psnr(r) == doctest::Approx((15 * 20.0 + 36.0) / 16.0));
  CHECK(center_psnr(r) == 30.0);
  CHECK(viridis().size() == 256);
}

TEST_CASE("ablation comparison") {
  auto ck = small_checkpoint(InputMode::Center, 4);
  std::vector<NamedScene> scenes{{"s0", scene()}, {"s1", random_scene(77)}};
  auto opts = small_opts(3, 1.0);
  auto table = compare_ablations(scenes, {{"first", &ck}, {"second", &ck}}, opts);
  REQUIRE(table.rows.size() == 4);
  REQUIRE(table.summary.size() == 2);
  CHECK(table.summary[0].mean_psnr == table.summary[1].mean_psnr);
  CHECK(table.summary[0].mean_ssim == table.summary[1].mean_ssim);
  CHECK(table.summary[0].corner_psnr == table.summary[1].corner_psnr);
  for (std::size_t i = 0; i < table.rows.size(); i += 2) {
    CHECK(table.rows[i].mean_psnr == table.rows[i + 1].mean_psnr);
    CHECK(table.rows[i].scene == table.rows[i + 1].scene);
  }
  std::string csv = table.to_csv();
  CHECK(csv.rfind("scene,variant,mean_psnr,mean_ssim,corner_psnr,center_psnr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 + 2);
  CHECK(table.to_markdown().find("| first |") != std::string::npos);
  CHECK_THROWS_AS(compare_ablations({}, {{"first", &ck}}, opts), Error);
}
