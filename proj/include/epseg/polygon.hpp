#pragma once

#include "epseg/data.hpp"
#include "epseg/metrics.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace epseg {

enum class CoordinateSpace { crop, image };

/// Closed polygon; the last vertex connects back to the first.
///
/// Coordinates are pixel-index based: the centre of pixel (x, y) sits at (x, y),
/// so pixel x spans [x - 0.5, x + 0.5).
struct Polygon {
  std::vector<Eigen::Vector2d> points;
  CoordinateSpace space = CoordinateSpace::crop;
};

// Per-pixel `p >= threshold` on plane n of an N x 1 x H x W tensor.
BinaryMask threshold_probs(const Tensor<float>& probs, float threshold = 0.5f, int n = 0);

// Largest 4-connected component; ties go to the one found first in row-major order.
BinaryMask largest_component(const BinaryMask& mask);

/// Threshold plus largest-component filter. nullopt signals "no object".
std::optional<BinaryMask> binarize(const Tensor<float>& probs, float threshold = 0.5f, int n = 0);

/// Moore-neighbour trace of the outer contour, clockwise on screen (y down),
/// starting at the top-most then left-most pixel. Pixels on one-pixel-wide parts
/// appear more than once. Throws std::invalid_argument on an empty mask.
std::vector<Point> trace_contour(const BinaryMask& mask);

/// Douglas-Peucker on a closed chain, split at its two mutually farthest points.
/// Returns nullopt when fewer than 3 distinct vertices survive.
std::optional<Polygon> simplify(const std::vector<Point>& chain, double epsilon);
std::optional<Polygon> simplify(const Polygon& polygon, double epsilon);

// Rectangle through the outer pixel edges of the mask's bounding box.
Polygon bbox_polygon(const BinaryMask& mask);

/// trace -> simplify, falling back to the bbox rectangle for degenerate contours.
Polygon mask_to_polygon(const BinaryMask& mask, double epsilon = 1.0);

/// Even-odd fill testing pixel centres; centres on an edge count as inside.
/// Zero-area polygons rasterize to an empty mask.
BinaryMask rasterize(const Polygon& polygon, int width, int height);
inline BinaryMask rasterize(const Polygon& polygon, int size) { return rasterize(polygon, size, size); }

// Crop pixel coordinates -> source image pixel coordinates for a size x size crop of `box`.
Polygon to_image_coords(const Polygon& polygon, const Box& box, int size);
Polygon to_crop_coords(const Polygon& polygon, const Box& box, int size);

double signed_area(const Polygon& polygon);
bool is_simple(const Polygon& polygon);

// {"space":"image","points":[[x,y],...]}
std::string polygon_to_json(const Polygon& polygon);
Polygon polygon_from_json(const std::string& text);

// One accepted annotation of the labeling tool's export file.
struct Annotation {
  std::string class_name;
  std::array<Eigen::Vector2d, 4> extreme_points;
  Polygon polygon;  // image space
};

/// {"image": name, "annotations": [{"class", "extreme_points": [[x,y] x4], "polygon": [[x,y], ...]}]}
std::string annotations_to_json(const std::string& image, const std::vector<Annotation>& annotations);
std::vector<Annotation> annotations_from_json(const std::string& text, std::string* image = nullptr);

}  // namespace epseg
