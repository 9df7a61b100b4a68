#include "epseg/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace epseg {

double instance_iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("instance_iou: mask dimensions differ");
  }
  const auto uni = (pred || gt).count();
  if (uni == 0) return 1.0;
  return static_cast<double>((pred && gt).count()) / static_cast<double>(uni);
}

double aggregate_aiou(std::span<const double> batch_ious) {
  if (batch_ious.empty()) throw std::invalid_argument("aggregate_aiou: no batches");
  double sum = 0;
  for (double v : batch_ious) sum += v;
  return sum / static_cast<double>(batch_ious.size());
}

MiouResult aggregate_miou(std::span<const EvalRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate_miou: no records");
  std::map<int, std::pair<double, std::size_t>> by_class;
  for (const auto& r : records) {
    auto& [sum, count] = by_class[r.class_id];
    sum += r.iou;
    ++count;
  }
  MiouResult result;
  double total = 0;
  for (const auto& [cls, acc] : by_class) {
    const double mean = acc.first / static_cast<double>(acc.second);
    result.per_class.push_back({cls, mean, acc.second});
    total += mean;
  }
  result.miou = total / static_cast<double>(by_class.size());
  return result;
}

double aggregate_iiou(std::span<const EvalRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate_iiou: no records");
  double sum = 0;
  for (const auto& r : records) sum += r.iou;
  return sum / static_cast<double>(records.size());
}

namespace {

// 1-D squared distance transform of a sampled function: lower envelope of the
// parabolas rooted at finite samples. Infinite samples contribute no parabola.
void sdt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so k stays >= 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const int p = v[k];
    d[q] = double(q - p) * (q - p) + f[p];
  }
}

}  // namespace

DistanceMap edt(const BinaryMask& seeds) {
  if (!seeds.any()) throw std::invalid_argument("edt: seed mask has no true pixels");
  const int H = static_cast<int>(seeds.rows()), W = static_cast<int>(seeds.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();
  DistanceMap sq = seeds.select(DistanceMap::Zero(H, W), inf);

  const int n = std::max(H, W);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) f[y] = sq(y, x);
    sdt_1d(f.data(), d.data(), H, v, z);
    for (int y = 0; y < H; ++y) sq(y, x) = d[y];
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) f[x] = sq(y, x);
    sdt_1d(f.data(), d.data(), W, v, z);
    for (int x = 0; x < W; ++x) sq(y, x) = d[x];
  }
  // Scalar sqrt: Eigen's packet sqrt may use a reciprocal estimate and lose the last ulp.
  return sq.unaryExpr([](double v) { return std::sqrt(v); });
}

BinaryMask boundary(const BinaryMask& mask) {
  const Eigen::Index H = mask.rows(), W = mask.cols();
  BinaryMask out = BinaryMask::Constant(H, W, false);
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x = 0; x < W; ++x) {
      if (!mask(y, x)) continue;
      out(y, x) = y == 0 || x == 0 || y == H - 1 || x == W - 1 || !mask(y - 1, x) || !mask(y + 1, x) ||
                  !mask(y, x - 1) || !mask(y, x + 1);
    }
  }
  return out;
}

std::vector<double> border_error(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("border_error: mask dimensions differ");
  }
  if (!pred.any() || !gt.any()) throw std::invalid_argument("border_error: empty prediction or ground truth");
  const DistanceMap dist = edt(boundary(gt));
  const BinaryMask edge = boundary(pred);
  std::vector<double> out;
  for (Eigen::Index y = 0; y < edge.rows(); ++y) {
    for (Eigen::Index x = 0; x < edge.cols(); ++x) {
      if (edge(y, x)) out.push_back(dist(y, x));
    }
  }
  return out;
}

Histogram histogram(std::span<const double> distances, double bin_width, bool normalize) {
  if (!(bin_width > 0)) throw std::invalid_argument("histogram: bin width must be > 0");
  Histogram h{bin_width, {}, normalize};
  for (double d : distances) {
    if (!(d >= 0) || !std::isfinite(d)) throw std::invalid_argument("histogram: distances must be finite and >= 0");
    const auto k = static_cast<std::size_t>(std::floor(d / bin_width));
    if (k >= h.counts.size()) h.counts.resize(k + 1, 0.0);
    h.counts[k] += 1.0;
  }
  if (normalize && !distances.empty()) {
    for (double& c : h.counts) c /= static_cast<double>(distances.size());
  }
  return h;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["aiou"] = report.aiou;
  j["miou"] = report.miou;
  j["iiou"] = report.iiou;
  j["per_class"] = nlohmann::ordered_json::object();
  for (const auto& [name, v] : report.per_class) j["per_class"][name] = v;
  j["histogram"] = {{"bin_width", report.border_histogram.bin_width},
                    {"normalized", report.border_histogram.normalized},
                    {"counts", report.border_histogram.counts}};
  j["instances"] = report.instances;
  j["degenerate"] = report.degenerate;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.aiou = j.at("aiou").get<double>();
    r.miou = j.at("miou").get<double>();
    r.iiou = j.at("iiou").get<double>();
    for (const auto& [name, v] : j.at("per_class").items()) r.per_class[name] = v.get<double>();
    const auto& h = j.at("histogram");
    r.border_histogram.bin_width = h.at("bin_width").get<double>();
    r.border_histogram.counts = h.at("counts").get<std::vector<double>>();
    r.border_histogram.normalized = h.value("normalized", false);
    r.instances = j.value("instances", std::size_t{0});
    r.degenerate = j.value("degenerate", std::size_t{0});
    if (!(r.border_histogram.bin_width > 0)) throw std::runtime_error("histogram bin_width must be > 0");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed evaluation report: ") + e.what());
  }
}

namespace {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string histogram_csv(const Histogram& hist) {
  std::string out = "bin_start,count\n";
  for (std::size_t k = 0; k < hist.counts.size(); ++k) {
    out += format_number(static_cast<double>(k) * hist.bin_width);
    out += ',';
    out += format_number(hist.counts[k]);
    out += '\n';
  }
  return out;
}

}  // namespace epseg
