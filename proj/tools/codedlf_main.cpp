#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "codedlf/coding.hpp"
#include "codedlf/error.hpp"
#include "codedlf/eval.hpp"
#include "codedlf/gradcheck.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/service.hpp"
#include "codedlf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace codedlf;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

void print_config(const std::string& command, json cfg) {
  cfg["command"] = command;
  std::cout << cfg.dump() << std::endl;
}

void print_result(json j) { std::cout << j.dump() << std::endl; }

bool is_usage_error(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidSpec:
    case ErrorKind::InvalidConfig:
    case ErrorKind::Schema:
    case ErrorKind::InvalidPattern:
    case ErrorKind::MalformedMetadata:
    case ErrorKind::MissingView:
    case ErrorKind::InconsistentDimensions:
    case ErrorKind::Checkpoint:
      return true;
    default:
      return false;
  }
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

fs::path sidecar(const fs::path& p) {
  fs::path s = p;
  s.replace_extension(".f32");
  return s;
}

std::optional<CodingPattern> pattern_of(const train::Checkpoint& ckpt) { return ckpt.pattern; }

// Loads the network input for render/serve: a light-field directory encoded
// with the checkpoint's mode, or a stored coded image.
Image load_observation(const train::Checkpoint& ckpt, const std::string& lf_dir, const std::string& coded) {
  if (!lf_dir.empty()) {
    LightField lf = load_lightfield(lf_dir);
    return train::observe(lf, ckpt.mode, ckpt.pattern ? &*ckpt.pattern : nullptr);
  }
  fs::path p(coded);
  if (p.extension() == ".png") {
    fs::path f32 = sidecar(p);
    if (fs::exists(f32)) return read_f32_map(f32, kCodedMagic);
    return read_png_gray(p);
  }
  return read_f32_map(p, kCodedMagic);
}

std::atomic<service::RenderService*> g_service{nullptr};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coded light-field capture, training and continuous-view rendering"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesize a light-field directory from a scene spec");
  std::string synth_spec, synth_out, synth_spec_out;
  std::vector<std::size_t> synth_grid{5, 5}, synth_size{48, 48};
  std::uint64_t synth_seed = 0;
  std::optional<std::uint64_t> synth_random;
  auto* spec_opt = synth->add_option("--spec", synth_spec, "Scene spec JSON")->check(CLI::ExistingFile);
  auto* random_opt = synth->add_option("--random", synth_random, "Draw a random scene with this seed instead");
  spec_opt->excludes(random_opt);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--grid", synth_grid, "Views U V")->expected(2);
  synth->add_option("--size", synth_size, "Image H W")->expected(2);
  synth->add_option("--seed", synth_seed, "Texture seed");
  synth->add_option("--spec-out", synth_spec_out, "Also write the scene spec here");

  // pattern
  auto* pattern = app.add_subcommand("pattern", "Generate a coding pattern");
  std::size_t pat_k = 4, pat_tile = 4;
  std::vector<std::size_t> pat_grid{5, 5}, pat_size{48, 48};
  std::uint64_t pat_seed = 7;
  std::string pat_out;
  pattern->add_option("--k", pat_k, "Sub-exposures K");
  pattern->add_option("--grid", pat_grid, "Views U V")->expected(2);
  pattern->add_option("--size", pat_size, "Sensor H W")->expected(2);
  pattern->add_option("--tile", pat_tile, "Exposure tile size");
  pattern->add_option("--seed", pat_seed, "Seed");
  pattern->add_option("--out", pat_out, "Output JSON")->required();

  // encode
  auto* encode_cmd = app.add_subcommand("encode", "Simulate the coded observation of a light field");
  std::string enc_lf, enc_pattern, enc_mode = "joint", enc_out;
  encode_cmd->add_option("--lf", enc_lf, "Light-field directory")->required()->check(CLI::ExistingDirectory);
  encode_cmd->add_option("--pattern", enc_pattern, "Coding pattern JSON (joint mode)")->check(CLI::ExistingFile);
  encode_cmd->add_option("--mode", enc_mode, "joint | uncoded | center")
      ->check(CLI::IsMember({"joint", "uncoded", "center"}));
  encode_cmd->add_option("--out", enc_out, "Output PNG (an .f32 sidecar is written alongside)")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train FeatNet and NeRFNet");
  std::string tr_config, tr_out, tr_log, tr_resume;
  std::vector<std::string> tr_overrides;
  std::optional<long long> tr_epochs;
  train_cmd->add_option("--config", tr_config, "Train config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--override", tr_overrides, "key=value overrides (dotted keys)");
  train_cmd->add_option("--epochs", tr_epochs, "Override epochs");
  train_cmd->add_option("--out", tr_out, "Checkpoint path override");
  train_cmd->add_option("--log", tr_log, "Loss log CSV override");
  train_cmd->add_option("--resume", tr_resume, "Resume from this checkpoint")->check(CLI::ExistingFile);

  // render
  auto* render_cmd = app.add_subcommand("render", "Render a view at a continuous viewpoint");
  std::string rd_ckpt, rd_lf, rd_coded, rd_out, rd_depth;
  double rd_u = 0, rd_v = 0;
  render_cmd->add_option("--ckpt", rd_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* lf_opt = render_cmd->add_option("--lf", rd_lf, "Light-field directory to encode")->check(CLI::ExistingDirectory);
  auto* coded_opt = render_cmd->add_option("--coded", rd_coded, "Coded image (.f32 or .png)")->check(CLI::ExistingFile);
  lf_opt->excludes(coded_opt);
  render_cmd->add_option("--u", rd_u, "Viewpoint u");
  render_cmd->add_option("--v", rd_v, "Viewpoint v");
  render_cmd->add_option("--out", rd_out, "Output PNG")->required();
  render_cmd->add_option("--depth", rd_depth, "Pseudo-depth PNG (an .f32 sidecar is written alongside)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a viewpoint grid against ground truth");
  std::string ev_ckpt, ev_scene, ev_out, ev_heat;
  std::size_t ev_grid = 13;
  double ev_step = 0.5;
  std::vector<std::size_t> ev_size{48, 48};
  eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scene", ev_scene, "Scene spec JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--grid", ev_grid, "Grid size M");
  eval_cmd->add_option("--step", ev_step, "Viewpoint stride");
  eval_cmd->add_option("--size", ev_size, "Image H W")->expected(2);
  eval_cmd->add_option("--out", ev_out, "Report JSON")->required();
  eval_cmd->add_option("--heatmap", ev_heat, "PSNR heat-map PNG");

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check every gradient against finite differences");
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-5;
  bool gc_json = false;
  std::string gc_fault;
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--eps", gc_eps, "Finite-difference step");
  gc_cmd->add_flag("--json", gc_json, "Machine-readable report");
  gc_cmd->add_option("--inject-fault", gc_fault, "Test hook: op[:factor] scales that op's backward");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve on-demand renders over HTTP");
  std::string sv_ckpt, sv_lf, sv_coded, sv_host = "127.0.0.1", sv_web = "web";
  int sv_port = 8080;
  serve_cmd->add_option("--ckpt", sv_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* sv_lf_opt = serve_cmd->add_option("--lf", sv_lf, "Light-field directory")->check(CLI::ExistingDirectory);
  auto* sv_coded_opt = serve_cmd->add_option("--coded", sv_coded, "Coded image")->check(CLI::ExistingFile);
  sv_lf_opt->excludes(sv_coded_opt);
  serve_cmd->add_option("--port", sv_port, "Port");
  serve_cmd->add_option("--host", sv_host, "Bind address");
  serve_cmd->add_option("--web", sv_web, "Static asset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kExitUsage);
  }

  try {
    if (*synth) {
      if (synth_spec.empty() && !synth_random) return report_error("usage", "--spec or --random is required", kExitUsage);
      print_config("synth", {{"spec", synth_spec}, {"random", synth_random ? json(*synth_random) : json(nullptr)},
                             {"out", synth_out}, {"grid", synth_grid}, {"size", synth_size},
                             {"seed", synth_seed}, {"spec_out", synth_spec_out}});
      SceneSpec spec = synth_random ? random_scene(*synth_random) : load_scene(synth_spec);
      LightField lf = synth_lightfield(spec, synth_grid[0], synth_grid[1], synth_size[0], synth_size[1], synth_seed);
      save_lightfield(lf, synth_out);
      if (!synth_spec_out.empty()) save_scene(spec, synth_spec_out);
      print_result({{"status", "ok"}, {"views", lf.grid_u * lf.grid_v}});
    } else if (*pattern) {
      print_config("pattern", {{"k", pat_k}, {"grid", pat_grid}, {"size", pat_size}, {"tile", pat_tile},
                               {"seed", pat_seed}, {"out", pat_out}});
      CodingPattern p = make_default_pattern(pat_k, pat_grid[0], pat_grid[1], pat_size[0], pat_size[1], pat_tile, pat_seed);
      save_pattern(p, pat_out);
      print_result({{"status", "ok"}});
    } else if (*encode_cmd) {
      print_config("encode", {{"lf", enc_lf}, {"pattern", enc_pattern}, {"mode", enc_mode}, {"out", enc_out}});
      InputMode mode = parse_input_mode(enc_mode);
      if (mode == InputMode::Joint && enc_pattern.empty()) {
        return report_error("usage", "--mode joint requires --pattern", kExitUsage);
      }
      LightField lf = load_lightfield(enc_lf);
      std::optional<CodingPattern> pat;
      if (mode == InputMode::Joint) pat = load_pattern(enc_pattern);
      CodedImage coded = encode(lf, mode, pat ? &*pat : nullptr);
      Image norm = normalize(coded);
      write_png_gray16(norm, enc_out);
      write_f32_map(norm, sidecar(enc_out), kCodedMagic);
      print_result({{"status", "ok"}, {"gain", coded.gain}, {"f32", sidecar(enc_out).string()}});
    } else if (*train_cmd) {
      auto bytes = read_file_bytes(tr_config);
      json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (j.is_discarded()) return report_error("InvalidConfig", tr_config + ": not valid JSON", kExitUsage);
      for (const auto& o : tr_overrides) train::apply_override(j, o);
      if (tr_epochs) {
        if (*tr_epochs < 1) return report_error("InvalidConfig", "epochs must be >= 1", kExitUsage);
        j["epochs"] = *tr_epochs;
      }
      if (!tr_out.empty()) j["checkpoint_path"] = tr_out;
      if (!tr_log.empty()) j["loss_log"] = tr_log;
      if (!tr_resume.empty()) j["resume_from"] = tr_resume;
      fs::path base = fs::path(tr_config).parent_path();
      // Paths given on the command line are relative to the working directory.
      for (const char* key : {"checkpoint_path", "loss_log", "resume_from"}) {
        if (j.contains(key) && j[key].is_string()) {
          fs::path p(j[key].get<std::string>());
          bool from_cli = (std::string(key) == "checkpoint_path" && !tr_out.empty()) ||
                          (std::string(key) == "loss_log" && !tr_log.empty()) ||
                          (std::string(key) == "resume_from" && !tr_resume.empty());
          if (from_cli && p.is_relative()) j[key] = fs::absolute(p).string();
        }
      }
      train::TrainConfig cfg = train::train_config_from_json(j, base);
      print_config("train", train::to_json(cfg));
      const auto total = cfg.total_steps();
      auto ckpt = train::train(cfg, {[total](const train::LossRecord& r) {
        if (r.step % 100 == 0 || r.step + 1 == total) {
          std::cerr << json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall_ms", r.wall_ms}}.dump() << std::endl;
        }
      }});
      print_result({{"status", "ok"}, {"steps", ckpt.params.step_count()},
                    {"final_loss", ckpt.history.empty() ? json(nullptr) : json(ckpt.history.back().loss)},
                    {"checkpoint", cfg.checkpoint_path.string()}});
    } else if (*render_cmd) {
      print_config("render", {{"ckpt", rd_ckpt}, {"lf", rd_lf}, {"coded", rd_coded}, {"u", rd_u}, {"v", rd_v},
                              {"out", rd_out}, {"depth", rd_depth}});
      if (rd_lf.empty() == rd_coded.empty()) return report_error("usage", "exactly one of --lf or --coded is required", kExitUsage);
      if (!std::isfinite(rd_u) || !std::isfinite(rd_v)) return report_error("usage", "u and v must be finite", kExitUsage);
      auto ckpt = train::load_checkpoint(rd_ckpt);
      Image input = load_observation(ckpt, rd_lf, rd_coded);
      auto t0 = std::chrono::steady_clock::now();
      auto fv = train::feature_volume(ckpt, input);
      auto t1 = std::chrono::steady_clock::now();
      auto view = train::render_view(ckpt, fv, {rd_u, rd_v});
      auto t2 = std::chrono::steady_clock::now();
      write_png_gray16(view.image, rd_out);
      if (!rd_depth.empty()) {
        Image d = view.depth;
        for (auto& p : d.pixels) p = (p - ckpt.render.t_min) / (ckpt.render.t_max - ckpt.render.t_min);
        write_png_gray16(d, rd_depth);
        write_f32_map(view.depth, sidecar(rd_depth), kDepthMagic);
      }
      print_result({{"status", "ok"},
                    {"feature_ms", std::chrono::duration<double, std::milli>(t1 - t0).count()},
                    {"render_ms", std::chrono::duration<double, std::milli>(t2 - t1).count()}});
    } else if (*eval_cmd) {
      print_config("eval", {{"ckpt", ev_ckpt}, {"scene", ev_scene}, {"grid", ev_grid}, {"step", ev_step},
                            {"size", ev_size}, {"out", ev_out}, {"heatmap", ev_heat}});
      auto ckpt = train::load_checkpoint(ev_ckpt);
      SceneSpec scene = load_scene(ev_scene);
      eval::EvalOptions opts;
      opts.m = ev_grid;
      opts.step = ev_step;
      opts.height = ev_size[0];
      opts.width = ev_size[1];
      if (ckpt.pattern) {
        opts.grid_u = ckpt.pattern->grid_u;
        opts.grid_v = ckpt.pattern->grid_v;
      }
      auto report = eval::eval_grid(ckpt, scene, opts, fs::path(ev_ckpt).filename().string(),
                                    fs::path(ev_scene).filename().string());
      eval::save_report(report, ev_out);
      if (!ev_heat.empty()) write_file_bytes(ev_heat, eval::heatmap_png(report));
      for (const auto& w : report.warnings) std::cerr << json{{"warning", w}}.dump() << std::endl;
      print_result({{"status", "ok"}, {"mean_psnr", eval::to_json(report)["mean_psnr"]}, {"mean_ssim", report.mean_ssim}});
    } else if (*gc_cmd) {
      print_config("gradcheck", {{"seed", gc_seed}, {"eps", gc_eps}, {"json", gc_json}, {"inject_fault", gc_fault}});
      if (!gc_fault.empty()) {
        auto colon = gc_fault.find(':');
        std::string op = gc_fault.substr(0, colon);
        double factor = colon == std::string::npos ? 1.5 : std::stod(gc_fault.substr(colon + 1));
        ad::testing::set_backward_fault(op, factor);
      }
      gradcheck::SuiteOptions opts;
      opts.seed = gc_seed;
      opts.eps = gc_eps;
      auto results = gradcheck::run_suite(opts);
      ad::testing::set_backward_fault("", 1.0);
      auto report = gradcheck::to_json(results);
      if (gc_json) {
        std::cout << report.dump() << std::endl;
      } else {
        for (const auto& r : results) {
          std::printf("%-18s %-8s max_rel_err=%.3e tol=%.0e %s\n", r.name.c_str(), r.kind.c_str(),
                      r.max_rel_error, r.tolerance, r.passed ? "ok" : "FAIL");
        }
        std::printf("worst op: %s (%.3e); pipeline: %.3e\n", report["worst_op"].get<std::string>().c_str(),
                    report["worst_op_error"].get<double>(), report["pipeline_error"].get<double>());
      }
      if (!gradcheck::all_passed(results)) return kExitRuntime;
    } else if (*serve_cmd) {
      print_config("serve", {{"ckpt", sv_ckpt}, {"lf", sv_lf}, {"coded", sv_coded}, {"host", sv_host},
                             {"port", sv_port}, {"web", sv_web}});
      if (sv_lf.empty() == sv_coded.empty()) return report_error("usage", "exactly one of --lf or --coded is required", kExitUsage);
      auto ckpt = train::load_checkpoint(sv_ckpt);
      Image input = load_observation(ckpt, sv_lf, sv_coded);
      service::RenderService svc(std::move(ckpt), input, {sv_web});
      g_service = &svc;
      std::signal(SIGINT, [](int) {
        if (auto* s = g_service.load()) s->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (auto* s = g_service.load()) s->stop();
      });
      std::cerr << json{{"listening", sv_host + ":" + std::to_string(sv_port)}}.dump() << std::endl;
      bool ok = svc.listen(sv_host, sv_port);
      g_service = nullptr;
      if (!ok && !svc.running()) {
        // listen() returns false after a clean stop() as well.
      }
    }
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.kind())), e.what(),
                        is_usage_error(e.kind()) ? kExitUsage : kExitRuntime);
  } catch (const nlohmann::json::exception& e) {
    return report_error("InvalidConfig", e.what(), kExitUsage);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), kExitRuntime);
  }
  return 0;
}
