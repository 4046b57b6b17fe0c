#include "codedlf/service.hpp"

#include <charconv>
#include <cmath>

#include "httplib.h"

#include "codedlf/error.hpp"

namespace codedlf::service {

using nlohmann::json;

namespace {

bool parse_finite(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

void json_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

RenderService::RenderService(train::Checkpoint ckpt, const Image& normalized_input, ServiceOptions opts)
    : ckpt_(std::move(ckpt)), opts_(std::move(opts)) {
  featvol_ = train::feature_volume(ckpt_, normalized_input);
  feature_computations_ += 1;
  height_ = normalized_input.height;
  width_ = normalized_input.width;
  // Captured grid half-extent plus one view step of extrapolation.
  std::size_t gu = 5, gv = 5;
  if (ckpt_.pattern) {
    gu = ckpt_.pattern->grid_u;
    gv = ckpt_.pattern->grid_v;
  } else if (ckpt_.train_config.contains("grid")) {
    gu = ckpt_.train_config["grid"].at(0).get<std::size_t>();
    gv = ckpt_.train_config["grid"].at(1).get<std::size_t>();
  }
  u_extent_ = static_cast<double>(gu - 1) / 2.0 + 1.0;
  v_extent_ = static_cast<double>(gv - 1) / 2.0 + 1.0;
  server_ = std::make_unique<httplib::Server>();
  setup_routes();
}

RenderService::~RenderService() { stop(); }

json RenderService::info() const {
  return {{"H", height_},
          {"W", width_},
          {"t_min", ckpt_.render.t_min},
          {"t_max", ckpt_.render.t_max},
          {"u_range", {-u_extent_, u_extent_}},
          {"v_range", {-v_extent_, v_extent_}}};
}

std::vector<std::uint8_t> RenderService::render_png(double u, double v, bool depth) const {
  auto view = train::render_view(ckpt_, featvol_, {u, v});
  if (!depth) return encode_png_gray16(view.image);
  Image d = view.depth;
  const double lo = ckpt_.render.t_min, span = ckpt_.render.t_max - ckpt_.render.t_min;
  for (auto& p : d.pixels) p = (p - lo) / span;
  return encode_png_gray16(d);
}

void RenderService::setup_routes() {
  server_->Get("/api/info", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(info().dump(), "application/json");
  });
  server_->Get("/api/render", [this](const httplib::Request& req, httplib::Response& res) {
    double u = 0, v = 0;
    if (!parse_finite(req.get_param_value("u"), u) || !parse_finite(req.get_param_value("v"), v)) {
      return json_error(res, 400, "u and v must be finite numbers");
    }
    bool depth = req.has_param("depth") && req.get_param_value("depth") == "1";
    try {
      auto png = render_png(u, v, depth);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const std::exception& e) {
      json_error(res, 500, e.what());
    }
  });
  if (!opts_.web_root.empty() && std::filesystem::is_directory(opts_.web_root)) {
    server_->set_mount_point("/", opts_.web_root.string());
  }
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) json_error(res, 404, "not found");
  });
}

bool RenderService::listen(const std::string& host, int port) { return server_->listen(host, port); }
int RenderService::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool RenderService::listen_after_bind() { return server_->listen_after_bind(); }
void RenderService::stop() {
  if (server_) server_->stop();
}
bool RenderService::running() const { return server_ && server_->is_running(); }

}  // namespace codedlf::service
