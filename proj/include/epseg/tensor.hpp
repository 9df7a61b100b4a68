#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace epseg {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Non-deducing so plain VectorX arguments bind without spelling out Scalar.
template <typename Scalar>
using VectorRef = std::type_identity_t<Eigen::Ref<const VectorX<Scalar>>>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced or consumed by a kernel.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Batch, channels, rows, cols.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense NCHW tensor backed by a contiguous Eigen vector.
///
/// Per-sample data is laid out as a row-major (channels x h*w) matrix, which
/// `sample()` exposes as an Eigen map so kernels can use GEMM directly.
template <typename Scalar>
class Tensor {
 public:
  using Vector = VectorX<Scalar>;
  using SampleMap = Eigen::Map<MatrixRM<Scalar>>;
  using ConstSampleMap = Eigen::Map<const MatrixRM<Scalar>>;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape) : shape_(validated(shape)), data_(Vector::Zero(shape_.size())) {}
  Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(shape);
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return shape_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  SampleMap sample(int n) {
    return SampleMap(data_.data() + n * sample_size(), shape_.c, static_cast<Eigen::Index>(shape_.plane()));
  }
  ConstSampleMap sample(int n) const {
    return ConstSampleMap(data_.data() + n * sample_size(), shape_.c,
                          static_cast<Eigen::Index>(shape_.plane()));
  }

  Scalar* plane_ptr(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const Scalar* plane_ptr(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.data() = data_.template cast<Other>();
    return out;
  }

 private:
  static Shape validated(Shape s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
      throw ShapeError("tensor dimensions must be >= 1, got " + to_string(s));
    }
    return s;
  }
  std::ptrdiff_t sample_size() const { return static_cast<std::ptrdiff_t>(shape_.c) * shape_.plane(); }
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_;
  Vector data_;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w) + ")";
}

#if !defined(NDEBUG) || defined(EPSEG_FINITE_CHECKS)
#define EPSEG_CHECK_FINITE(t, what)                                        \
  do {                                                                     \
    if (!(t).all_finite()) throw NonFiniteError(std::string(what) + ": non-finite values"); \
  } while (0)
#else
#define EPSEG_CHECK_FINITE(t, what) ((void)0)
#endif

}  // namespace epseg
