#include "epseg/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace epseg {

namespace fs = std::filesystem;

BinaryMask rasterize_shape(const ShapeSpec& shape, int width, int height) {
  BinaryMask m = BinaryMask::Constant(height, width, false);
  const double cs = std::cos(shape.angle), sn = std::sin(shape.angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - shape.cx, dy = y + 0.5 - shape.cy;
      const double u = (cs * dx + sn * dy) / shape.rx;
      const double v = (-sn * dx + cs * dy) / shape.ry;
      m(y, x) = shape.kind == ShapeKind::ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    }
  }
  return m;
}

namespace {

std::array<std::uint8_t, 3> random_color(Rng& rng) {
  return {static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
          static_cast<std::uint8_t>(rng.below(256))};
}

int color_distance(const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d += std::abs(int(a[c]) - int(b[c]));
  return d;
}

Image gradient_background(Rng& rng, int width, int height, std::array<std::uint8_t, 3> base) {
  Image img(width, height, 3);
  const double gx = rng.uniform(-0.4, 0.4), gy = rng.uniform(-0.4, 0.4);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + gx * x + gy * y + rng.uniform(-12, 12);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

void paint(Image& img, const BinaryMask& mask, const std::array<std::uint8_t, 3>& color, Rng& rng) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!mask(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = color[c] + rng.uniform(-10, 10);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

std::array<std::uint8_t, 3> contrasting_color(Rng& rng, const std::array<std::uint8_t, 3>& other) {
  auto c = random_color(rng);
  while (color_distance(c, other) < 180) c = random_color(rng);
  return c;
}

}  // namespace

SyntheticScene random_scene(Rng& rng, int width, int height) {
  const auto bg = random_color(rng);
  ShapeSpec s;
  s.kind = rng.bernoulli(0.5) ? ShapeKind::ellipse : ShapeKind::rectangle;
  const double min_dim = std::min(width, height);
  s.rx = rng.uniform(0.15, 0.35) * min_dim;
  s.ry = rng.uniform(0.15, 0.35) * min_dim;
  s.cx = rng.uniform(0.4, 0.6) * width;
  s.cy = rng.uniform(0.4, 0.6) * height;
  s.angle = rng.uniform(0, std::numbers::pi);
  s.color = contrasting_color(rng, bg);

  SyntheticScene scene;
  scene.image = gradient_background(rng, width, height, bg);
  scene.mask = rasterize_shape(s, width, height);
  paint(scene.image, scene.mask, s.color, rng);
  return scene;
}

std::vector<SyntheticScene> overfit_scenes(int count, std::uint64_t seed, int width, int height) {
  std::vector<SyntheticScene> scenes;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    SyntheticScene s = random_scene(rng, width, height);
    s.class_id = i % 2 == 0 ? 0 : 3;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<InstanceSample> overfit_fixture(int count, std::uint64_t seed, const DataConfig& config) {
  std::vector<InstanceSample> out;
  int i = 0;
  for (auto& scene : overfit_scenes(count, seed)) {
    InstanceSample s = extract_instance(scene.image, scene.mask, scene.class_id, config.margin, config.input_size);
    s.id = "overfit_" + std::to_string(i++);
    out.push_back(with_extreme_points(std::move(s), config.ep_radius));
  }
  return out;
}

std::vector<InstanceSample> overlapping_shapes_dataset(int count, int size, std::uint64_t seed, int ep_radius) {
  std::vector<InstanceSample> out;
  const int W = 2 * size;
  for (std::uint64_t i = 0; out.size() < static_cast<std::size_t>(count); ++i) {
    Rng rng = Rng::stream(seed, i, 0x0e1a9);
    const auto bg = random_color(rng);
    std::array<ShapeSpec, 2> shapes;
    for (int k = 0; k < 2; ++k) {
      ShapeSpec& s = shapes[k];
      s.kind = rng.bernoulli(0.5) ? ShapeKind::ellipse : ShapeKind::rectangle;
      s.rx = rng.uniform(0.1, 0.2) * W;
      s.ry = rng.uniform(0.1, 0.2) * W;
      s.angle = rng.uniform(0, std::numbers::pi);
      s.color = contrasting_color(rng, bg);
    }
    shapes[0].cx = rng.uniform(0.35, 0.65) * W;
    shapes[0].cy = rng.uniform(0.35, 0.65) * W;
    // Second centre offset enough to keep both visible, close enough to overlap.
    const double theta = rng.uniform(0, 2 * std::numbers::pi);
    const double dist = rng.uniform(0.15, 0.25) * W;
    shapes[1].cx = shapes[0].cx + dist * std::cos(theta);
    shapes[1].cy = shapes[0].cy + dist * std::sin(theta);

    const int first = static_cast<int>(rng.below(2));  // drawn underneath
    const int target = static_cast<int>(rng.below(2));
    const BinaryMask below = rasterize_shape(shapes[first], W, W);
    const BinaryMask above = rasterize_shape(shapes[1 - first], W, W);

    Image img = gradient_background(rng, W, W, bg);
    paint(img, below, shapes[first].color, rng);
    paint(img, above, shapes[1 - first].color, rng);

    // The crop frames both shapes, so its extent says nothing about the target.
    const BinaryMask both = below || above;
    const BinaryMask visible_below = below && !above;
    const BinaryMask& gt = target == first ? visible_below : above;
    if ((below && above).count() == 0) continue;
    InstanceSample s;
    try {
      s = extract_instance(img, both, 0, kDefaultMargin, size);
    } catch (const DataError&) {
      continue;
    }
    s.gt_mask = crop_resize_mask(gt, s.source_box, size);
    const BinaryMask other = crop_resize_mask(target == first ? above : visible_below, s.source_box, size);
    if (s.gt_mask.count() < 0.05 * size * size || other.count() < 0.05 * size * size) continue;

    s.id = "overlap_" + std::to_string(i);
    s.class_id = shapes[target].kind == ShapeKind::ellipse ? 0 : 7;
    out.push_back(with_extreme_points(std::move(s), ep_radius));
  }
  return out;
}

void write_scene_dataset(const fs::path& root, const std::vector<SyntheticScene>& scenes, std::size_t train_count,
                         bool val_equals_train) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  nlohmann::ordered_json index;
  index["samples"] = nlohmann::ordered_json::array();
  std::vector<nlohmann::ordered_json> val;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    const std::string image = std::string("images/") + name, mask = std::string("masks/") + name;
    write_png((root / image).string(), scenes[i].image);
    write_png((root / mask).string(), mask_to_image(scenes[i].mask));
    nlohmann::ordered_json entry = {{"image", image}, {"mask", mask}, {"class_id", scenes[i].class_id}};
    const bool is_train = i < train_count;
    entry["split"] = is_train ? "train" : "val";
    index["samples"].push_back(entry);
    if (is_train && val_equals_train) {
      entry["split"] = "val";
      val.push_back(entry);
    }
  }
  for (auto& v : val) index["samples"].push_back(v);
  index["classes"] = nlohmann::ordered_json::object();
  for (const auto& [name, id] : default_classes()) index["classes"][name] = id;
  std::ofstream(root / "index.json") << index.dump(2) << "\n";
}

}  // namespace epseg
