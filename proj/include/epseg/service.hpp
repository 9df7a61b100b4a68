#pragma once

#include "epseg/data.hpp"
#include "epseg/polygon.hpp"
#include "epseg/unet.hpp"

#include <Eigen/Core>

#include <array>
#include <memory>
#include <optional>
#include <string>

namespace epseg {

struct SegmentOptions {
  float threshold = 0.5f;
  double epsilon = 1.0;
  double margin = kDefaultMargin;
  int ep_radius = kDefaultEpRadius;
};

/// A segmentation failure carrying the HTTP status it maps to
/// (400 bad request, 409 degenerate box, 422 no object, 503 no model).
class SegmentError : public std::runtime_error {
 public:
  SegmentError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct SegmentResult {
  Polygon polygon;      // image space
  double confidence = 0;  // mean foreground probability inside the polygon
  double inference_ms = 0;
  Box crop_box;
};

/// Four clicked extreme points (image pixel coordinates, any order) -> polygon.
///
/// The crop box spans the points' bounding box plus `margin`, exactly as training
/// crops do; the EP channel is rendered from the points mapped into the crop.
SegmentResult segment(const Network<float>& net, const Image& image, const std::array<Eigen::Vector2d, 4>& points,
                      const SegmentOptions& options);

/// Parses a /segment JSON body and runs `segment`. Throws SegmentError.
std::string segment_json(const Network<float>* net, const std::string& body, const SegmentOptions& defaults);

std::string health_json(const Network<float>* net);

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8601;
  SegmentOptions defaults;
  std::string cors_origin = "*";
};

/// HTTP front end: POST /segment, GET /health. The model is shared read-only
/// between concurrent requests.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void set_model(std::shared_ptr<const Network<float>> model);
  std::shared_ptr<const Network<float>> model() const;

  // Binds config.port (0 picks a free port) and returns the bound port, or -1.
  int bind();
  // Serves until stop(); call after bind().
  bool run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epseg
