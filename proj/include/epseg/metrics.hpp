#pragma once

#include <Eigen/Core>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace epseg {

// rows = image height, cols = image width.
using BinaryMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DistanceMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double instance_iou(const BinaryMask& pred, const BinaryMask& gt);

struct EvalRecord {
  std::string instance_id;
  int class_id = 0;
  double iou = 0;
  std::vector<double> border_distances;
};

// Unweighted mean of per-batch mean IoUs.
double aggregate_aiou(std::span<const double> batch_ious);

struct ClassIou {
  int class_id = 0;
  double mean_iou = 0;
  std::size_t count = 0;
};

struct MiouResult {
  double miou = 0;
  std::vector<ClassIou> per_class;  // ascending class id
};

// Mean over classes of the within-class mean IoU.
MiouResult aggregate_miou(std::span<const EvalRecord> records);

// Flat mean over instances.
double aggregate_iiou(std::span<const EvalRecord> records);

/// Exact Euclidean distance from every pixel to the nearest true pixel of `seeds`.
///
/// Separable lower-envelope-of-parabolas transform on squared distances, columns
/// then rows; squared distances stay integral so the result is exact.
DistanceMap edt(const BinaryMask& seeds);

// Foreground pixels with a background 4-neighbour; outside the image is background.
BinaryMask boundary(const BinaryMask& mask);

/// Distance from each boundary pixel of `pred` (row-major order) to the nearest
/// boundary pixel of `gt`.
std::vector<double> border_error(const BinaryMask& pred, const BinaryMask& gt);

struct Histogram {
  double bin_width = 1.0;
  std::vector<double> counts;  // bin k covers [k*w, (k+1)*w)
  bool normalized = false;
};

Histogram histogram(std::span<const double> distances, double bin_width, bool normalize = false);

struct EvalReport {
  double aiou = 0;
  double miou = 0;
  double iiou = 0;
  std::map<std::string, double> per_class;
  Histogram border_histogram;
  std::size_t instances = 0;
  std::size_t degenerate = 0;
};

std::string report_to_json(const EvalReport& report);
// Throws std::runtime_error on a malformed document.
EvalReport report_from_json(const std::string& text);

// "bin_start,count" rows with a header line; always '.' as decimal separator.
std::string histogram_csv(const Histogram& hist);

}  // namespace epseg
