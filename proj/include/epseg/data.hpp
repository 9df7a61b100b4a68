#pragma once

#include "epseg/image_io.hpp"
#include "epseg/metrics.hpp"
#include "epseg/rng.hpp"
#include "epseg/tensor.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epseg {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

/// Outermost foreground pixels. Ties: left/right prefer the smallest y,
/// top/bottom prefer the smallest x.
struct ExtremePoints {
  Point left, right, top, bottom;

  std::array<Point, 4> as_array() const { return {left, right, top, bottom}; }
  bool operator==(const ExtremePoints&) const = default;
};

/// Axis-aligned box in continuous image coordinates: pixel i covers [i, i+1).
struct Box {
  double x = 0;
  double y = 0;
  double width = 0;
  double height = 0;
};

struct SampleDescriptor {
  std::string image;
  std::string mask;
  int class_id = 0;
  std::string split;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<SampleDescriptor> samples;
  std::map<std::string, int> classes;

  std::vector<SampleDescriptor> split(const std::string& name) const;
  std::string class_name(int class_id) const;
  std::string serialize() const;
};

// The nine default road-scene classes, used when index.json has no "classes" map.
std::map<std::string, int> default_classes();

/// Reads and validates `root/index.json`. Every referenced file must exist.
DatasetIndex load_dataset(const std::filesystem::path& root);

struct InstanceSample {
  std::string id;
  Tensor<float> rgb;         // 1 x 3 x S x S in [0, 1]
  Tensor<float> ep_channel;  // 1 x 1 x S x S, binary
  BinaryMask gt_mask;        // S x S
  int class_id = 0;
  Box source_box;            // margin-expanded crop box in the source image

  int size() const { return static_cast<int>(gt_mask.rows()); }
};

inline constexpr double kDefaultMargin = 0.08;
inline constexpr int kDefaultEpRadius = 4;

struct DataConfig {
  int input_size = 128;
  double margin = kDefaultMargin;
  int ep_radius = kDefaultEpRadius;
};

/// Tight bbox of `instance_mask`, grown by `margin` of its size on every side and
/// clipped to the image, resized to size x size (bilinear RGB, nearest mask).
/// The EP channel is left empty. Throws DataError for objects under 2x2 px.
InstanceSample extract_instance(const Image& image, const BinaryMask& instance_mask, int class_id,
                                double margin, int size);

// Crop box for a tight pixel bbox [x0, x1] x [y0, y1] (inclusive) in a W x H image.
Box expand_box(int x0, int y0, int x1, int y1, double margin, int image_width, int image_height);

Image crop_resize_rgb(const Image& image, const Box& box, int size);
BinaryMask crop_resize_mask(const BinaryMask& mask, const Box& box, int size);

ExtremePoints extreme_points(const BinaryMask& mask);

/// Binary channel with filled disks (distance <= radius) at the four points.
Tensor<float> render_ep_channel(const ExtremePoints& points, int radius, int size);

// Crop-space sample with its EP channel rendered from the mask.
InstanceSample with_extreme_points(InstanceSample sample, int radius);

struct AugmentConfig {
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
  int ep_radius = kDefaultEpRadius;
};

/// Joint horizontal flip and rotation about the crop centre; extreme points are
/// re-derived from the transformed mask and the EP channel is re-rendered.
/// Returns nullopt when rotation leaves the mask empty.
std::optional<InstanceSample> augment(const InstanceSample& sample, Rng& rng, const AugmentConfig& config);

struct Batch {
  Tensor<float> input;  // N x (3|4) x S x S, channel order R, G, B[, EP]
  Tensor<float> gt;     // N x 1 x S x S in {0, 1}
};

Batch make_batch(const std::vector<const InstanceSample*>& samples, bool with_ep);
Batch make_batch(const std::vector<InstanceSample>& samples, bool with_ep);

Tensor<float> mask_to_tensor(const BinaryMask& mask);
BinaryMask tensor_to_mask(const Tensor<float>& t, int n = 0, float threshold = 0.5f);

Image mask_to_image(const BinaryMask& mask);
BinaryMask image_to_mask(const Image& gray);

/// Loads every sample of `split` ("" for all) as a crop with its EP channel.
std::vector<InstanceSample> load_samples(const DatasetIndex& index, const std::string& split,
                                         const DataConfig& config);

}  // namespace epseg
