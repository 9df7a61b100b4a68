#include "epseg/service.hpp"

#include "epseg/checkpoint.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <mutex>

namespace epseg {

SegmentResult segment(const Network<float>& net, const Image& image, const std::array<Eigen::Vector2d, 4>& points,
                      const SegmentOptions& options) {
  if (image.channels != 3 || image.width < 1 || image.height < 1) throw SegmentError(400, "image must be RGB");
  for (const auto& p : points) {
    if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || p.x() < 0 || p.y() < 0 || p.x() >= image.width ||
        p.y() >= image.height) {
      throw SegmentError(400, "extreme point (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                                  ") lies outside the " + std::to_string(image.width) + "x" +
                                  std::to_string(image.height) + " image");
    }
  }
  if (!(options.threshold > 0 && options.threshold < 1)) throw SegmentError(400, "threshold must be in (0, 1)");
  if (!(options.epsilon >= 0)) throw SegmentError(400, "epsilon must be >= 0");

  double min_x = points[0].x(), max_x = min_x, min_y = points[0].y(), max_y = min_y;
  for (const auto& p : points) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  if (max_x - min_x <= 0 || max_y - min_y <= 0) {
    throw SegmentError(409, "extreme points span a degenerate box (zero width or height)");
  }

  const int S = net.config().input_size;
  const int x0 = static_cast<int>(std::floor(min_x)), x1 = static_cast<int>(std::floor(max_x));
  const int y0 = static_cast<int>(std::floor(min_y)), y1 = static_cast<int>(std::floor(max_y));
  SegmentResult result;
  result.crop_box = expand_box(x0, y0, x1, y1, options.margin, image.width, image.height);
  const Box& box = result.crop_box;
  const double sx = box.width / S, sy = box.height / S;

  const int channels = net.config().input_channels;
  Tensor<float> input(1, channels, S, S);
  const Image crop = crop_resize_rgb(image, box, S);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      for (int c = 0; c < 3; ++c) input(0, c, y, x) = crop.at(x, y, c) / 255.f;
    }
  }
  if (channels == 4) {
    ExtremePoints ep;
    std::array<Point*, 4> slots{&ep.left, &ep.right, &ep.top, &ep.bottom};
    for (int k = 0; k < 4; ++k) {
      *slots[k] = {std::clamp(static_cast<int>(std::floor((points[k].x() + 0.5 - box.x) / sx)), 0, S - 1),
                   std::clamp(static_cast<int>(std::floor((points[k].y() + 0.5 - box.y) / sy)), 0, S - 1)};
    }
    input.sample(0).row(3) = render_ep_channel(ep, options.ep_radius, S).sample(0);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> probs = net.forward(input);
  result.inference_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  const auto mask = binarize(probs, options.threshold);
  if (!mask) throw SegmentError(422, "no object found at threshold " + std::to_string(options.threshold));
  const Polygon crop_poly = mask_to_polygon(*mask, options.epsilon);

  BinaryMask inside = rasterize(crop_poly, S);
  if (!inside.any()) inside = *mask;
  double sum = 0;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (inside(y, x)) sum += probs(0, 0, y, x);
    }
  }
  result.confidence = sum / static_cast<double>(inside.count());
  result.polygon = to_image_coords(crop_poly, box, S);
  return result;
}

std::string segment_json(const Network<float>* net, const std::string& body, const SegmentOptions& defaults) {
  if (!net) throw SegmentError(503, "model not loaded");
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw SegmentError(400, std::string("request is not valid JSON: ") + e.what());
  }
  SegmentOptions options = defaults;
  std::array<Eigen::Vector2d, 4> points;
  Image image;
  try {
    if (!req.is_object()) throw SegmentError(400, "request must be a JSON object");
    const auto& pts = req.at("extreme_points");
    if (!pts.is_array() || pts.size() != 4) throw SegmentError(400, "extreme_points must hold exactly 4 points");
    for (std::size_t k = 0; k < 4; ++k) {
      if (!pts[k].is_array() || pts[k].size() != 2 || !pts[k][0].is_number() || !pts[k][1].is_number()) {
        throw SegmentError(400, "each extreme point must be [x, y]");
      }
      points[k] = {pts[k][0].get<double>(), pts[k][1].get<double>()};
    }
    if (req.contains("threshold")) options.threshold = req["threshold"].get<float>();
    if (req.contains("epsilon")) options.epsilon = req["epsilon"].get<double>();
    const auto bytes = base64_decode(req.at("image").get<std::string>());
    image = decode_png(bytes, 3);
  } catch (const nlohmann::json::exception& e) {
    throw SegmentError(400, std::string("malformed request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SegmentError(400, std::string("malformed image: ") + e.what());
  } catch (const ImageError& e) {
    throw SegmentError(400, e.what());
  }

  const SegmentResult r = segment(*net, image, points, options);
  nlohmann::ordered_json out;
  out["polygon"] = nlohmann::ordered_json::parse(polygon_to_json(r.polygon));
  out["confidence"] = r.confidence;
  out["inference_ms"] = r.inference_ms;
  out["bbox"] = {r.crop_box.x, r.crop_box.y, r.crop_box.width, r.crop_box.height};
  return out.dump();
}

std::string health_json(const Network<float>* net) {
  nlohmann::ordered_json j;
  j["status"] = "ok";
  j["model"] = {{"loaded", net != nullptr}};
  if (net) {
    j["model"]["config"] = nlohmann::ordered_json::parse(config_to_json(net->config()));
    j["model"]["param_count"] = net->param_count();
  }
  return j.dump();
}

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  mutable std::mutex mutex;
  std::shared_ptr<const Network<float>> model;
};

namespace {

std::string error_json(const std::string& message) { return nlohmann::json{{"error", message}}.dump(); }

}  // namespace

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  auto& srv = impl_->server;
  Impl* impl = impl_.get();

  srv.set_default_headers({{"Access-Control-Allow-Origin", impl->config.cors_origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto m = model();
    res.set_content(health_json(m.get()), "application/json");
  });
  srv.Post("/segment", [this, impl](const httplib::Request& req, httplib::Response& res) {
    const auto m = model();
    try {
      res.set_content(segment_json(m.get(), req.body, impl->config.defaults), "application/json");
    } catch (const SegmentError& e) {
      res.status = e.status();
      res.set_content(error_json(e.what()), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_json(e.what()), "application/json");
    }
  });
}

Service::~Service() { stop(); }

void Service::set_model(std::shared_ptr<const Network<float>> model) {
  std::lock_guard lock(impl_->mutex);
  impl_->model = std::move(model);
}

std::shared_ptr<const Network<float>> Service::model() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->model;
}

int Service::bind() {
  if (impl_->config.port == 0) return impl_->server.bind_to_any_port(impl_->config.host);
  return impl_->server.bind_to_port(impl_->config.host, impl_->config.port) ? impl_->config.port : -1;
}

bool Service::run() { return impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace epseg
