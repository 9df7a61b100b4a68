#include "epseg/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace epseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::map<std::string, int> default_classes() {
  return {{"car", 0},        {"traffic sign", 1}, {"bicycle", 2}, {"person", 3}, {"rider", 4},
          {"motorcycle", 5}, {"traffic light", 6}, {"truck", 7},  {"bus", 8}};
}

std::vector<SampleDescriptor> DatasetIndex::split(const std::string& name) const {
  std::vector<SampleDescriptor> out;
  for (const auto& s : samples) {
    if (name.empty() || s.split == name) out.push_back(s);
  }
  return out;
}

std::string DatasetIndex::class_name(int class_id) const {
  for (const auto& [name, id] : classes) {
    if (id == class_id) return name;
  }
  return std::to_string(class_id);
}

std::string DatasetIndex::serialize() const {
  nlohmann::ordered_json j;
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    j["samples"].push_back({{"image", s.image}, {"mask", s.mask}, {"class_id", s.class_id}, {"split", s.split}});
  }
  j["classes"] = nlohmann::ordered_json::object();
  for (const auto& [name, id] : classes) j["classes"][name] = id;
  return j.dump(2) + "\n";
}

DatasetIndex load_dataset(const fs::path& root) {
  const fs::path index_path = root / "index.json";
  std::ifstream in(index_path);
  if (!in) throw DataError("cannot open dataset index '" + index_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + index_path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("samples") || !j["samples"].is_array()) {
    throw DataError("'" + index_path.string() + "': expected an object with a \"samples\" array");
  }

  DatasetIndex index;
  index.root = root;
  if (j.contains("classes")) {
    if (!j["classes"].is_object()) throw DataError("\"classes\" must map class names to integer ids");
    for (const auto& [name, id] : j["classes"].items()) {
      if (!id.is_number_integer()) throw DataError("class '" + name + "' has a non-integer id");
      index.classes[name] = id.get<int>();
    }
  } else {
    index.classes = default_classes();
  }

  std::size_t k = 0;
  for (const auto& s : j["samples"]) {
    const std::string where = "sample #" + std::to_string(k++);
    if (!s.is_object()) throw DataError(where + ": not an object");
    SampleDescriptor d;
    for (const char* key : {"image", "mask"}) {
      if (!s.contains(key) || !s[key].is_string()) {
        throw DataError(where + ": missing string field \"" + key + "\"");
      }
    }
    d.image = s["image"].get<std::string>();
    d.mask = s["mask"].get<std::string>();
    const std::string name = where + " (" + d.image + ")";
    if (!s.contains("class_id") || !s["class_id"].is_number_integer()) {
      throw DataError(name + ": missing integer field \"class_id\"");
    }
    d.class_id = s["class_id"].get<int>();
    d.split = s.value("split", std::string("train"));
    if (d.split != "train" && d.split != "val") {
      throw DataError(name + ": split must be \"train\" or \"val\", got \"" + d.split + "\"");
    }
    const bool known = std::any_of(index.classes.begin(), index.classes.end(),
                                   [&](const auto& c) { return c.second == d.class_id; });
    if (!known) throw DataError(name + ": unknown class id " + std::to_string(d.class_id));
    for (const auto* rel : {&d.image, &d.mask}) {
      if (!fs::is_regular_file(root / *rel)) {
        throw DataError(name + ": missing file '" + (root / *rel).string() + "'");
      }
    }
    index.samples.push_back(std::move(d));
  }
  return index;
}

Box expand_box(int x0, int y0, int x1, int y1, double margin, int image_width, int image_height) {
  const double bw = x1 - x0 + 1, bh = y1 - y0 + 1;
  const double left = std::max(0.0, x0 - margin * bw);
  const double top = std::max(0.0, y0 - margin * bh);
  const double right = std::min<double>(image_width, x1 + 1 + margin * bw);
  const double bottom = std::min<double>(image_height, y1 + 1 + margin * bh);
  return {left, top, right - left, bottom - top};
}

namespace {

float bilinear(const Image& img, int c, double x, double y) {
  // x, y in pixel-index coordinates (centres at integers), clamped to the image.
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bot = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

}  // namespace

Image crop_resize_rgb(const Image& image, const Box& box, int size) {
  Image out(size, size, image.channels);
  const double sx = box.width / size, sy = box.height / size;
  for (int v = 0; v < size; ++v) {
    const double y = box.y + (v + 0.5) * sy - 0.5;
    for (int u = 0; u < size; ++u) {
      const double x = box.x + (u + 0.5) * sx - 0.5;
      for (int c = 0; c < image.channels; ++c) {
        out.at(u, v, c) = static_cast<std::uint8_t>(std::lround(std::clamp(bilinear(image, c, x, y), 0.f, 255.f)));
      }
    }
  }
  return out;
}

BinaryMask crop_resize_mask(const BinaryMask& mask, const Box& box, int size) {
  const double sx = box.width / size, sy = box.height / size;
  BinaryMask out(size, size);
  for (int v = 0; v < size; ++v) {
    const int my = std::clamp(static_cast<int>(std::floor(box.y + (v + 0.5) * sy)), 0, int(mask.rows()) - 1);
    for (int u = 0; u < size; ++u) {
      const int mx = std::clamp(static_cast<int>(std::floor(box.x + (u + 0.5) * sx)), 0, int(mask.cols()) - 1);
      out(v, u) = mask(my, mx);
    }
  }
  return out;
}

InstanceSample extract_instance(const Image& image, const BinaryMask& instance_mask, int class_id, double margin,
                                int size) {
  if (image.channels != 3) throw DataError("extract_instance: expected an RGB image");
  if (instance_mask.rows() != image.height || instance_mask.cols() != image.width) {
    throw DataError("extract_instance: mask size differs from image size");
  }
  if (margin < 0) throw DataError("extract_instance: margin must be >= 0");
  if (!instance_mask.any()) throw DataError("extract_instance: empty instance mask");

  int x0 = image.width, y0 = image.height, x1 = -1, y1 = -1;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!instance_mask(y, x)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 - x0 + 1 < 2 || y1 - y0 + 1 < 2) {
    throw DataError("extract_instance: object smaller than 2x2 px (" + std::to_string(x1 - x0 + 1) + "x" +
                    std::to_string(y1 - y0 + 1) + ")");
  }

  InstanceSample s;
  s.class_id = class_id;
  s.source_box = expand_box(x0, y0, x1, y1, margin, image.width, image.height);
  const Box& box = s.source_box;
  const double sx = box.width / size, sy = box.height / size;

  const Image crop = crop_resize_rgb(image, box, size);
  s.rgb = Tensor<float>(1, 3, size, size);
  for (int v = 0; v < size; ++v) {
    for (int u = 0; u < size; ++u) {
      for (int c = 0; c < 3; ++c) s.rgb(0, c, v, u) = crop.at(u, v, c) / 255.f;
    }
  }
  s.ep_channel = Tensor<float>(1, 1, size, size);
  s.gt_mask = crop_resize_mask(instance_mask, box, size);
  if (!s.gt_mask.any()) {
    // Nearest sampling can step over thin objects when downscaling; splat them back.
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!instance_mask(y, x)) continue;
        const int u = std::clamp(static_cast<int>((x + 0.5 - box.x) / sx), 0, size - 1);
        const int v = std::clamp(static_cast<int>((y + 0.5 - box.y) / sy), 0, size - 1);
        s.gt_mask(v, u) = true;
      }
    }
  }
  return s;
}

ExtremePoints extreme_points(const BinaryMask& mask) {
  if (!mask.any()) throw DataError("extreme_points: empty mask");
  const int H = static_cast<int>(mask.rows()), W = static_cast<int>(mask.cols());
  ExtremePoints ep;
  bool first = true;
  // Row-major scan: the first pixel seen is the smallest-y (then smallest-x) candidate,
  // so strict comparisons implement the tie-break rules.
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!mask(y, x)) continue;
      const Point p{x, y};
      if (first) {
        ep = {p, p, p, p};
        first = false;
        continue;
      }
      if (x < ep.left.x) ep.left = p;
      if (x > ep.right.x) ep.right = p;
      if (y > ep.bottom.y) ep.bottom = p;
    }
  }
  return ep;
}

Tensor<float> render_ep_channel(const ExtremePoints& points, int radius, int size) {
  if (radius < 1) throw std::invalid_argument("render_ep_channel: radius must be >= 1");
  Tensor<float> out(1, 1, size, size);
  const int r2 = radius * radius;
  for (const Point& p : points.as_array()) {
    if (p.x < 0 || p.y < 0 || p.x >= size || p.y >= size) {
      throw std::invalid_argument("render_ep_channel: point outside the crop");
    }
    for (int y = std::max(0, p.y - radius); y <= std::min(size - 1, p.y + radius); ++y) {
      for (int x = std::max(0, p.x - radius); x <= std::min(size - 1, p.x + radius); ++x) {
        const int dx = x - p.x, dy = y - p.y;
        if (dx * dx + dy * dy <= r2) out(0, 0, y, x) = 1.f;
      }
    }
  }
  return out;
}

InstanceSample with_extreme_points(InstanceSample sample, int radius) {
  sample.ep_channel = render_ep_channel(extreme_points(sample.gt_mask), radius, sample.size());
  return sample;
}

std::optional<InstanceSample> augment(const InstanceSample& sample, Rng& rng, const AugmentConfig& config) {
  const bool flip = rng.bernoulli(config.flip_prob);
  const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);

  InstanceSample out = sample;
  const int S = sample.size();
  if (flip) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) out.rgb(0, c, y, x) = sample.rgb(0, c, y, S - 1 - x);
      }
    }
    out.gt_mask = sample.gt_mask.rowwise().reverse();
  }
  if (config.max_rotation_deg > 0 && angle != 0.0) {
    const InstanceSample src = out;
    const double rad = angle * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double c0 = (S - 1) / 2.0;
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        // Inverse rotation: where does output (x, y) come from.
        const double dx = x - c0, dy = y - c0;
        const double xs = cs * dx + sn * dy + c0;
        const double ys = -sn * dx + cs * dy + c0;
        const int xn = static_cast<int>(std::lround(xs)), yn = static_cast<int>(std::lround(ys));
        out.gt_mask(y, x) = xn >= 0 && yn >= 0 && xn < S && yn < S && src.gt_mask(yn, xn);
        const int xf = static_cast<int>(std::floor(xs)), yf = static_cast<int>(std::floor(ys));
        const double fx = xs - xf, fy = ys - yf;
        for (int c = 0; c < 3; ++c) {
          auto px = [&](int xx, int yy) -> double {
            return (xx >= 0 && yy >= 0 && xx < S && yy < S) ? src.rgb(0, c, yy, xx) : 0.0;
          };
          const double v = (1 - fy) * ((1 - fx) * px(xf, yf) + fx * px(xf + 1, yf)) +
                           fy * ((1 - fx) * px(xf, yf + 1) + fx * px(xf + 1, yf + 1));
          out.rgb(0, c, y, x) = static_cast<float>(v);
        }
      }
    }
  }
  if (!out.gt_mask.any()) return std::nullopt;
  if (flip || (config.max_rotation_deg > 0 && angle != 0.0)) {
    out.ep_channel = render_ep_channel(extreme_points(out.gt_mask), config.ep_radius, S);
  }
  return out;
}

Batch make_batch(const std::vector<const InstanceSample*>& samples, bool with_ep) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const int S = samples.front()->size();
  const int n = static_cast<int>(samples.size());
  Batch b{Tensor<float>(n, with_ep ? 4 : 3, S, S), Tensor<float>(n, 1, S, S)};
  const Eigen::Index plane = static_cast<Eigen::Index>(S) * S;
  for (int i = 0; i < n; ++i) {
    const InstanceSample& s = *samples[i];
    if (s.size() != S || s.rgb.h() != S || s.ep_channel.h() != S) {
      throw ShapeError("make_batch: mixed sample sizes (" + std::to_string(S) + " vs " + std::to_string(s.size()) +
                       ")");
    }
    auto dst = b.input.sample(i);
    dst.topRows(3) = s.rgb.sample(0);
    if (with_ep) dst.row(3) = s.ep_channel.sample(0);
    b.gt.sample(i).row(0) = Eigen::Map<const Eigen::Array<bool, 1, Eigen::Dynamic>>(s.gt_mask.data(), plane)
                                .cast<float>()
                                .matrix();
  }
  return b;
}

Batch make_batch(const std::vector<InstanceSample>& samples, bool with_ep) {
  std::vector<const InstanceSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(ptrs, with_ep);
}

Tensor<float> mask_to_tensor(const BinaryMask& mask) {
  Tensor<float> t(1, 1, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()));
  t.data() = Eigen::Map<const Eigen::Array<bool, Eigen::Dynamic, 1>>(mask.data(), mask.size()).cast<float>().matrix();
  return t;
}

BinaryMask tensor_to_mask(const Tensor<float>& t, int n, float threshold) {
  BinaryMask m(t.h(), t.w());
  const float* p = t.plane_ptr(n, 0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = p[i] >= threshold;
  return m;
}

Image mask_to_image(const BinaryMask& mask) {
  Image img(static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 1);
  for (Eigen::Index i = 0; i < mask.size(); ++i) img.pixels[i] = mask.data()[i] ? 255 : 0;
  return img;
}

BinaryMask image_to_mask(const Image& gray) {
  if (gray.channels != 1) throw DataError("mask image must be single-channel");
  BinaryMask m(gray.height, gray.width);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gray.pixels[i] > 127;
  return m;
}

std::vector<InstanceSample> load_samples(const DatasetIndex& index, const std::string& split,
                                         const DataConfig& config) {
  std::vector<InstanceSample> out;
  for (const auto& d : index.split(split)) {
    const Image rgb = read_png((index.root / d.image).string(), 3);
    const Image gray = read_png((index.root / d.mask).string(), 1);
    if (rgb.width != gray.width || rgb.height != gray.height) {
      throw DataError("sample '" + d.image + "': mask '" + d.mask + "' has a different size");
    }
    const BinaryMask mask = image_to_mask(gray);
    if (!mask.any()) throw DataError("sample '" + d.image + "': mask '" + d.mask + "' is empty");
    InstanceSample s;
    try {
      s = extract_instance(rgb, mask, d.class_id, config.margin, config.input_size);
    } catch (const DataError& e) {
      throw DataError("sample '" + d.image + "': " + e.what());
    }
    s.id = d.image;
    out.push_back(with_extreme_points(std::move(s), config.ep_radius));
  }
  return out;
}

}  // namespace epseg
