#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stagehand {

enum class DType { numeric, boolean };

/// Small dense row-major array of doubles, rank 0 to 3.
///
/// Boolean tensors hold only 0.0 and 1.0 so masks multiply directly.
/// All operations copy; there are no views or strides.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;
  static constexpr std::size_t kMaxRank = 3;

  Tensor();
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::numeric);

  static Tensor scalar(double value);
  static Tensor boolean(bool value);
  static Tensor vector(std::vector<double> values);
  static Tensor filled(Shape shape, double value);

  std::size_t rank() const noexcept { return shape_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  DType dtype() const noexcept { return dtype_; }
  bool is_boolean() const noexcept { return dtype_ == DType::boolean; }

  /// Value of a rank-0 tensor. Throws NOT_SCALAR for higher ranks.
  double item() const;
  double operator[](std::size_t flat) const { return values_[flat]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
  DType dtype_ = DType::numeric;
};

std::string to_string(const Tensor::Shape& shape);
std::string to_string(const Tensor& tensor);

enum class BinaryOp { add, sub, mul, div, lt, gt, le, ge, eq, ne, bit_and, bit_or };

std::string_view symbol(BinaryOp op) noexcept;
bool is_comparison(BinaryOp op) noexcept;

/// Numpy-style broadcast of two shapes. Throws SHAPE_MISMATCH.
Tensor::Shape broadcast_shape(const Tensor::Shape& a, const Tensor::Shape& b);

/// Broadcasting elementwise operation. Comparisons and &,| yield boolean tensors.
/// Division by an exact zero throws DIVISION_BY_ZERO; &,| require 0/1 operands.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor negate(const Tensor& t);

/// Elementwise select: where(condition != 0, when_true, when_false), broadcasting all three.
Tensor select(const Tensor& condition, const Tensor& when_true, const Tensor& when_false);

template <class Fn>
Tensor apply(const Tensor& t, Fn&& fn) {
  std::vector<double> out(t.values().begin(), t.values().end());
  for (double& v : out) v = fn(v);
  return Tensor(t.shape(), std::move(out));
}

struct Slice {
  std::optional<long> start;
  std::optional<long> stop;
  friend bool operator==(const Slice&, const Slice&) = default;
};
struct Ellipsis {
  friend bool operator==(const Ellipsis&, const Ellipsis&) = default;
};
using IndexItem = std::variant<long, Slice, Ellipsis>;

/// Multi-axis indexing. Integer items drop their axis, slices keep it (clipped
/// like Python), a single ellipsis expands to the untouched middle axes.
/// Negative integers count from the end.
Tensor index(const Tensor& t, std::span<const IndexItem> items);

enum class Reduction { sum, sum_of_squares, l2_last_axis, l1_last_axis, abs };

/// sum and sum_of_squares collapse to a scalar; the *_last_axis norms reduce only
/// the trailing axis (on a scalar they are |x|); abs is elementwise.
Tensor reduce(const Tensor& t, Reduction kind);

}  // namespace stagehand
