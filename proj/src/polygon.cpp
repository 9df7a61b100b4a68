#include "epseg/polygon.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace epseg {

BinaryMask threshold_probs(const Tensor<float>& probs, float threshold, int n) {
  if (probs.c() != 1) throw ShapeError("threshold_probs: expected a single-channel probability map");
  return tensor_to_mask(probs, n, threshold);
}

BinaryMask largest_component(const BinaryMask& mask) {
  const int H = static_cast<int>(mask.rows()), W = static_cast<int>(mask.cols());
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(H, W, -1);
  std::vector<std::size_t> sizes;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!mask(y, x) || label(y, x) >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      std::size_t count = 0;
      stack.push_back({y, x});
      label(y, x) = id;
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        ++count;
        const std::array<std::pair<int, int>, 4> nbrs{{{cy - 1, cx}, {cy + 1, cx}, {cy, cx - 1}, {cy, cx + 1}}};
        for (const auto& [ny, nx] : nbrs) {
          if (ny < 0 || nx < 0 || ny >= H || nx >= W || !mask(ny, nx) || label(ny, nx) >= 0) continue;
          label(ny, nx) = id;
          stack.push_back({ny, nx});
        }
      }
      sizes.push_back(count);
    }
  }
  if (sizes.empty()) return BinaryMask::Constant(H, W, false);
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  return label == best;
}

std::optional<BinaryMask> binarize(const Tensor<float>& probs, float threshold, int n) {
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("binarize: threshold must be in (0, 1)");
  BinaryMask m = largest_component(threshold_probs(probs, threshold, n));
  if (!m.any()) return std::nullopt;
  return m;
}

namespace {

// Clockwise on screen (y grows downward), starting east.
constexpr std::array<Point, 8> kRing{{{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};

int ring_index(int dx, int dy) {
  for (int k = 0; k < 8; ++k) {
    if (kRing[k].x == dx && kRing[k].y == dy) return k;
  }
  throw std::logic_error("ring_index: not a neighbour offset");
}

}  // namespace

std::vector<Point> trace_contour(const BinaryMask& mask) {
  const int H = static_cast<int>(mask.rows()), W = static_cast<int>(mask.cols());
  auto fg = [&](int x, int y) { return x >= 0 && y >= 0 && x < W && y < H && mask(y, x); };

  std::optional<Point> start;
  for (int y = 0; y < H && !start; ++y) {
    for (int x = 0; x < W; ++x) {
      if (mask(y, x)) {
        start = Point{x, y};
        break;
      }
    }
  }
  if (!start) throw std::invalid_argument("trace_contour: empty mask");

  std::vector<Point> chain{*start};
  Point p = *start;
  int back = 4;  // entered from the west, which is background for the first pixel
  // Each pixel has 8 entry states; the walk cannot exceed them all.
  const std::size_t limit = 8 * static_cast<std::size_t>(mask.count()) + 8;
  while (chain.size() <= limit) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int k = (back + i) % 8;
      if (fg(p.x + kRing[k].x, p.y + kRing[k].y)) {
        found = k;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const Point c{p.x + kRing[found].x, p.y + kRing[found].y};
    // Jacob's criterion: back at the start and about to repeat the first move.
    if (chain.size() > 1 && p == *start && c == chain[1]) {
      chain.pop_back();
      break;
    }
    const int prev = (found + 7) % 8;
    const Point q{p.x + kRing[prev].x, p.y + kRing[prev].y};
    back = ring_index(q.x - c.x, q.y - c.y);
    p = c;
    chain.push_back(p);
  }
  return chain;
}

namespace {

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Marks the vertices of pts[lo..hi] kept by Douglas-Peucker (endpoints are kept by the caller).
void douglas_peucker(const std::vector<Eigen::Vector2d>& pts, std::size_t lo, std::size_t hi, double epsilon,
                     std::vector<bool>& keep) {
  if (hi <= lo + 1) return;
  double best = -1;
  std::size_t idx = lo;
  for (std::size_t i = lo + 1; i < hi; ++i) {
    const double d = segment_distance(pts[i], pts[lo], pts[hi]);
    if (d > best) {
      best = d;
      idx = i;
    }
  }
  if (best > epsilon) {
    keep[idx] = true;
    douglas_peucker(pts, lo, idx, epsilon, keep);
    douglas_peucker(pts, idx, hi, epsilon, keep);
  }
}

std::optional<Polygon> simplify_points(const std::vector<Eigen::Vector2d>& chain, double epsilon,
                                       CoordinateSpace space) {
  if (epsilon < 0) throw std::invalid_argument("simplify: epsilon must be >= 0");
  const std::size_t n = chain.size();
  if (n < 3) return std::nullopt;

  std::size_t a = 0, b = 0;
  double far = -1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = (chain[i] - chain[j]).squaredNorm();
      if (d > far) {
        far = d;
        a = i;
        b = j;
      }
    }
  }
  // Rotate so the chain starts at a; the closed loop is then pts[0..m] + pts[m..n] with pts[n] == pts[0].
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) pts.push_back(chain[(a + i) % n]);
  pts.push_back(pts.front());
  const std::size_t m = b - a;

  std::vector<bool> keep(n + 1, false);
  keep[0] = keep[m] = true;
  douglas_peucker(pts, 0, m, epsilon, keep);
  douglas_peucker(pts, m, n, epsilon, keep);

  Polygon poly;
  poly.space = space;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    if (!poly.points.empty() && poly.points.back() == pts[i]) continue;
    poly.points.push_back(pts[i]);
  }
  while (poly.points.size() > 1 && poly.points.back() == poly.points.front()) poly.points.pop_back();
  if (poly.points.size() < 3) return std::nullopt;
  return poly;
}

}  // namespace

std::optional<Polygon> simplify(const std::vector<Point>& chain, double epsilon) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(chain.size());
  for (const Point& p : chain) pts.emplace_back(p.x, p.y);
  return simplify_points(pts, epsilon, CoordinateSpace::crop);
}

std::optional<Polygon> simplify(const Polygon& polygon, double epsilon) {
  return simplify_points(polygon.points, epsilon, polygon.space);
}

Polygon bbox_polygon(const BinaryMask& mask) {
  if (!mask.any()) throw std::invalid_argument("bbox_polygon: empty mask");
  int x0 = static_cast<int>(mask.cols()), y0 = static_cast<int>(mask.rows()), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.rows(); ++y) {
    for (int x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  Polygon p;
  p.points = {{x0 - 0.5, y0 - 0.5}, {x1 + 0.5, y0 - 0.5}, {x1 + 0.5, y1 + 0.5}, {x0 - 0.5, y1 + 0.5}};
  return p;
}

Polygon mask_to_polygon(const BinaryMask& mask, double epsilon) {
  auto poly = simplify(trace_contour(mask), epsilon);
  if (!poly) return bbox_polygon(mask);
  return *poly;
}

double signed_area(const Polygon& polygon) {
  const auto& p = polygon.points;
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return a / 2;
}

BinaryMask rasterize(const Polygon& polygon, int width, int height) {
  BinaryMask out = BinaryMask::Constant(height, width, false);
  const auto& p = polygon.points;
  if (p.size() < 3 || std::abs(signed_area(polygon)) < 1e-12) return out;
  constexpr double tol = 1e-9;
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    xs.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& a = p[i];
      const auto& b = p[(i + 1) % p.size()];
      if ((a.y() <= y && y < b.y()) || (b.y() <= y && y < a.y())) {
        xs.push_back(a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int lo = std::max(0, static_cast<int>(std::ceil(xs[k] - tol)));
      const int hi = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] + tol)));
      for (int x = lo; x <= hi; ++x) out(y, x) = true;
    }
  }
  // Centres lying exactly on an edge (e.g. bottom and horizontal edges) are inside.
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    const int y_lo = std::max(0, static_cast<int>(std::ceil(std::min(a.y(), b.y()) - tol)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::floor(std::max(a.y(), b.y()) + tol)));
    for (int y = y_lo; y <= y_hi; ++y) {
      if (std::abs(b.y() - a.y()) < tol) {
        const int x_lo = std::max(0, static_cast<int>(std::ceil(std::min(a.x(), b.x()) - tol)));
        const int x_hi = std::min(width - 1, static_cast<int>(std::floor(std::max(a.x(), b.x()) + tol)));
        for (int x = x_lo; x <= x_hi; ++x) out(y, x) = true;
      } else {
        const double x = a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
        const double r = std::round(x);
        if (std::abs(x - r) < tol && r >= 0 && r < width) out(y, static_cast<int>(r)) = true;
      }
    }
  }
  return out;
}

Polygon to_image_coords(const Polygon& polygon, const Box& box, int size) {
  if (polygon.space != CoordinateSpace::crop) throw std::invalid_argument("to_image_coords: polygon is not in crop space");
  Polygon out;
  out.space = CoordinateSpace::image;
  const double sx = box.width / size, sy = box.height / size;
  for (const auto& v : polygon.points) {
    out.points.emplace_back(box.x + (v.x() + 0.5) * sx - 0.5, box.y + (v.y() + 0.5) * sy - 0.5);
  }
  return out;
}

Polygon to_crop_coords(const Polygon& polygon, const Box& box, int size) {
  if (polygon.space != CoordinateSpace::image) throw std::invalid_argument("to_crop_coords: polygon is not in image space");
  Polygon out;
  out.space = CoordinateSpace::crop;
  const double sx = box.width / size, sy = box.height / size;
  for (const auto& v : polygon.points) {
    out.points.emplace_back((v.x() + 0.5 - box.x) / sx - 0.5, (v.y() + 0.5 - box.y) / sy - 0.5);
  }
  return out;
}

namespace {

int orientation(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const double v = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  if (std::abs(v) < 1e-12) return 0;
  return v > 0 ? 1 : -1;
}

bool on_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return std::min(a.x(), b.x()) - 1e-12 <= p.x() && p.x() <= std::max(a.x(), b.x()) + 1e-12 &&
         std::min(a.y(), b.y()) - 1e-12 <= p.y() && p.y() <= std::max(a.y(), b.y()) + 1e-12;
}

bool segments_intersect(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& q1,
                        const Eigen::Vector2d& q2) {
  const int o1 = orientation(p1, p2, q1), o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1), o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

}  // namespace

bool is_simple(const Polygon& polygon) {
  const auto& p = polygon.points;
  const std::size_t n = p.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] == p[(i + 1) % n]) return false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex: reject folding back onto each other.
        const auto& shared = j == i + 1 ? p[j] : p[0];
        const auto& u = j == i + 1 ? p[i] : p[1];
        const auto& v = j == i + 1 ? p[(j + 1) % n] : p[n - 1];
        if (orientation(u, shared, v) == 0 && (u - shared).dot(v - shared) > 0) return false;
        continue;
      }
      if (segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) return false;
    }
  }
  return true;
}

std::string polygon_to_json(const Polygon& polygon) {
  nlohmann::ordered_json j;
  j["space"] = polygon.space == CoordinateSpace::image ? "image" : "crop";
  j["points"] = nlohmann::ordered_json::array();
  for (const auto& v : polygon.points) j["points"].push_back({v.x(), v.y()});
  return j.dump();
}

Polygon polygon_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Polygon p;
    const auto space = j.at("space").get<std::string>();
    if (space == "image") {
      p.space = CoordinateSpace::image;
    } else if (space == "crop") {
      p.space = CoordinateSpace::crop;
    } else {
      throw std::runtime_error("unknown coordinate space '" + space + "'");
    }
    for (const auto& pt : j.at("points")) {
      if (!pt.is_array() || pt.size() != 2) throw std::runtime_error("each point must be [x, y]");
      p.points.emplace_back(pt[0].get<double>(), pt[1].get<double>());
    }
    if (p.points.size() < 3) throw std::runtime_error("polygon needs at least 3 points");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed polygon JSON: ") + e.what());
  }
}

std::string annotations_to_json(const std::string& image, const std::vector<Annotation>& annotations) {
  nlohmann::ordered_json j;
  j["image"] = image;
  j["annotations"] = nlohmann::ordered_json::array();
  for (const auto& a : annotations) {
    if (a.polygon.points.size() < 3) throw std::invalid_argument("annotation polygon needs at least 3 points");
    nlohmann::ordered_json e;
    e["class"] = a.class_name;
    e["extreme_points"] = nlohmann::ordered_json::array();
    for (const auto& p : a.extreme_points) e["extreme_points"].push_back({p.x(), p.y()});
    e["polygon"] = nlohmann::ordered_json::array();
    for (const auto& p : a.polygon.points) e["polygon"].push_back({p.x(), p.y()});
    j["annotations"].push_back(std::move(e));
  }
  return j.dump();
}

std::vector<Annotation> annotations_from_json(const std::string& text, std::string* image) {
  auto point = [](const nlohmann::json& pt) {
    if (!pt.is_array() || pt.size() != 2) throw std::runtime_error("each point must be [x, y]");
    return Eigen::Vector2d(pt[0].get<double>(), pt[1].get<double>());
  };
  try {
    const auto j = nlohmann::json::parse(text);
    if (image) *image = j.at("image").get<std::string>();
    std::vector<Annotation> out;
    for (const auto& e : j.at("annotations")) {
      Annotation a;
      a.class_name = e.at("class").get<std::string>();
      const auto& eps = e.at("extreme_points");
      if (!eps.is_array() || eps.size() != 4) throw std::runtime_error("extreme_points must hold 4 points");
      for (std::size_t i = 0; i < 4; ++i) a.extreme_points[i] = point(eps[i]);
      a.polygon.space = CoordinateSpace::image;
      for (const auto& pt : e.at("polygon")) a.polygon.points.push_back(point(pt));
      if (a.polygon.points.size() < 3) throw std::runtime_error("polygon needs at least 3 points");
      out.push_back(std::move(a));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed annotation JSON: ") + e.what());
  }
}

}  // namespace epseg
