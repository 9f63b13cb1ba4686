#include "stagehand/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "stagehand/error.hpp"

namespace stagehand {
namespace {

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Row-major strides of `shape` aligned to the trailing axes of a result of
// rank `rank`; broadcast axes get stride 0.
std::array<std::size_t, Tensor::kMaxRank> broadcast_strides(const Tensor::Shape& shape,
                                                            const Tensor::Shape& result) {
  std::array<std::size_t, Tensor::kMaxRank> strides{};
  const std::size_t offset = result.size() - shape.size();
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i + offset] = shape[i] == 1 && result[i + offset] != 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

// Visits every flat position of `result`, passing the matching flat offsets in each operand.
template <std::size_t N, class Fn>
void for_each_broadcast(const Tensor::Shape& result,
                        const std::array<std::array<std::size_t, Tensor::kMaxRank>, N>& strides,
                        Fn&& fn) {
  const std::size_t total = element_count(result);
  const std::size_t rank = result.size();
  std::array<std::size_t, Tensor::kMaxRank> counter{};
  std::array<std::size_t, N> offsets{};
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, offsets);
    for (std::size_t axis = rank; axis-- > 0;) {
      ++counter[axis];
      for (std::size_t k = 0; k < N; ++k) offsets[k] += strides[k][axis];
      if (counter[axis] < result[axis]) break;
      for (std::size_t k = 0; k < N; ++k) offsets[k] -= strides[k][axis] * counter[axis];
      counter[axis] = 0;
    }
  }
}

bool is_zero_one(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return v == 0.0 || v == 1.0; });
}

long normalize_bound(long value, long length) {
  if (value < 0) value += length;
  return std::clamp(value, 0L, length);
}

}  // namespace

Tensor::Tensor() : values_{0.0} {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), values_(std::move(values)), dtype_(dtype) {
  if (shape_.size() > kMaxRank) {
    throw Error(ErrorCode::ShapeMismatch, "rank " + std::to_string(shape_.size()) + " exceeds 3");
  }
  if (element_count(shape_) != values_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + stagehand::to_string(shape_) + " does not hold " +
                                              std::to_string(values_.size()) + " elements");
  }
  if (dtype_ == DType::boolean) {
    for (double v : values_) {
      if (v != 0.0 && v != 1.0) throw Error(ErrorCode::BooleanOperand, "boolean tensor holds non 0/1 value");
    }
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }
Tensor Tensor::boolean(bool value) { return Tensor({}, {value ? 1.0 : 0.0}, DType::boolean); }
Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}
Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

double Tensor::item() const {
  if (rank() != 0) throw Error(ErrorCode::NotScalar, "expected a scalar, got shape " + stagehand::to_string(shape_));
  return values_[0];
}

std::string to_string(const Tensor::Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

std::string to_string(const Tensor& tensor) {
  std::ostringstream os;
  os.precision(17);
  os << "Tensor" << to_string(tensor.shape()) << "[";
  for (std::size_t i = 0; i < tensor.size(); ++i) os << (i ? ", " : "") << tensor[i];
  os << "]";
  return os.str();
}

std::string_view symbol(BinaryOp op) noexcept {
  switch (op) {
    case BinaryOp::add: return "+";
    case BinaryOp::sub: return "-";
    case BinaryOp::mul: return "*";
    case BinaryOp::div: return "/";
    case BinaryOp::lt: return "<";
    case BinaryOp::gt: return ">";
    case BinaryOp::le: return "<=";
    case BinaryOp::ge: return ">=";
    case BinaryOp::eq: return "==";
    case BinaryOp::ne: return "!=";
    case BinaryOp::bit_and: return "&";
    case BinaryOp::bit_or: return "|";
  }
  return "?";
}

bool is_comparison(BinaryOp op) noexcept {
  switch (op) {
    case BinaryOp::lt:
    case BinaryOp::gt:
    case BinaryOp::le:
    case BinaryOp::ge:
    case BinaryOp::eq:
    case BinaryOp::ne: return true;
    default: return false;
  }
}

Tensor::Shape broadcast_shape(const Tensor::Shape& a, const Tensor::Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Tensor::Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorCode::ShapeMismatch,
                  "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Tensor::Shape shape = broadcast_shape(a.shape(), b.shape());
  if (op == BinaryOp::bit_and || op == BinaryOp::bit_or) {
    if (!is_zero_one(a) || !is_zero_one(b)) {
      throw Error(ErrorCode::BooleanOperand, std::string("operands of '") + std::string(symbol(op)) +
                                                 "' must be boolean (0/1) tensors");
    }
  }
  if (op == BinaryOp::div) {
    for (double v : b.values()) {
      if (v == 0.0) throw Error(ErrorCode::DivisionByZero, "division by zero");
    }
  }
  std::vector<double> out(element_count(shape));
  const std::array<std::array<std::size_t, Tensor::kMaxRank>, 2> strides{
      broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape)};
  const auto av = a.values();
  const auto bv = b.values();
  for_each_broadcast<2>(shape, strides, [&](std::size_t flat, const std::array<std::size_t, 2>& off) {
    const double x = av[off[0]];
    const double y = bv[off[1]];
    double r = 0.0;
    switch (op) {
      case BinaryOp::add: r = x + y; break;
      case BinaryOp::sub: r = x - y; break;
      case BinaryOp::mul: r = x * y; break;
      case BinaryOp::div: r = x / y; break;
      case BinaryOp::lt: r = x < y; break;
      case BinaryOp::gt: r = x > y; break;
      case BinaryOp::le: r = x <= y; break;
      case BinaryOp::ge: r = x >= y; break;
      case BinaryOp::eq: r = x == y; break;
      case BinaryOp::ne: r = x != y; break;
      case BinaryOp::bit_and: r = (x != 0.0) && (y != 0.0); break;
      case BinaryOp::bit_or: r = (x != 0.0) || (y != 0.0); break;
    }
    out[flat] = r;
  });
  const bool boolean = is_comparison(op) || op == BinaryOp::bit_and || op == BinaryOp::bit_or;
  return Tensor(shape, std::move(out), boolean ? DType::boolean : DType::numeric);
}

Tensor negate(const Tensor& t) {
  return apply(t, [](double v) { return -v; });
}

Tensor select(const Tensor& condition, const Tensor& when_true, const Tensor& when_false) {
  const Tensor::Shape shape =
      broadcast_shape(broadcast_shape(condition.shape(), when_true.shape()), when_false.shape());
  std::vector<double> out(element_count(shape));
  const std::array<std::array<std::size_t, Tensor::kMaxRank>, 3> strides{
      broadcast_strides(condition.shape(), shape), broadcast_strides(when_true.shape(), shape),
      broadcast_strides(when_false.shape(), shape)};
  const auto cv = condition.values();
  const auto tv = when_true.values();
  const auto fv = when_false.values();
  for_each_broadcast<3>(shape, strides, [&](std::size_t flat, const std::array<std::size_t, 3>& off) {
    out[flat] = cv[off[0]] != 0.0 ? tv[off[1]] : fv[off[2]];
  });
  const DType dtype =
      when_true.is_boolean() && when_false.is_boolean() ? DType::boolean : DType::numeric;
  return Tensor(shape, std::move(out), dtype);
}

Tensor index(const Tensor& t, std::span<const IndexItem> items) {
  const auto ellipses = std::count_if(items.begin(), items.end(), [](const IndexItem& item) {
    return std::holds_alternative<Ellipsis>(item);
  });
  if (ellipses > 1) throw Error(ErrorCode::BadEllipsis, "more than one ellipsis in index");
  const std::size_t explicit_items = items.size() - static_cast<std::size_t>(ellipses);
  if (explicit_items > t.rank()) {
    throw Error(ErrorCode::IndexOutOfBounds, "too many indices (" + std::to_string(explicit_items) +
                                                 ") for tensor of rank " + std::to_string(t.rank()));
  }

  // Expand to one item per axis.
  std::vector<IndexItem> per_axis;
  per_axis.reserve(t.rank());
  for (const IndexItem& item : items) {
    if (std::holds_alternative<Ellipsis>(item)) {
      for (std::size_t k = 0; k < t.rank() - explicit_items; ++k) per_axis.emplace_back(Slice{});
    } else {
      per_axis.push_back(item);
    }
  }
  while (per_axis.size() < t.rank()) per_axis.emplace_back(Slice{});

  // Per axis: start index and count of selected positions, and whether the axis survives.
  std::vector<std::size_t> starts(t.rank()), counts(t.rank());
  Tensor::Shape out_shape;
  for (std::size_t axis = 0; axis < t.rank(); ++axis) {
    const long length = static_cast<long>(t.shape()[axis]);
    if (const long* integer = std::get_if<long>(&per_axis[axis])) {
      const long pos = *integer < 0 ? *integer + length : *integer;
      if (pos < 0 || pos >= length) {
        throw Error(ErrorCode::IndexOutOfBounds, "index " + std::to_string(*integer) + " out of bounds for axis " +
                                                     std::to_string(axis) + " of length " + std::to_string(length));
      }
      starts[axis] = static_cast<std::size_t>(pos);
      counts[axis] = 1;
    } else {
      const Slice& slice = std::get<Slice>(per_axis[axis]);
      const long lo = slice.start ? normalize_bound(*slice.start, length) : 0;
      const long hi = slice.stop ? normalize_bound(*slice.stop, length) : length;
      starts[axis] = static_cast<std::size_t>(lo);
      counts[axis] = static_cast<std::size_t>(std::max(0L, hi - lo));
      out_shape.push_back(counts[axis]);
    }
  }

  std::vector<std::size_t> strides(t.rank(), 1);
  for (std::size_t axis = t.rank(); axis-- > 1;) strides[axis - 1] = strides[axis] * t.shape()[axis];

  std::vector<double> out;
  out.reserve(element_count(out_shape));
  const auto values = t.values();
  std::vector<std::size_t> counter(t.rank(), 0);
  const bool empty = std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; });
  if (!empty) {
    while (true) {
      std::size_t flat = 0;
      for (std::size_t axis = 0; axis < t.rank(); ++axis) flat += (starts[axis] + counter[axis]) * strides[axis];
      out.push_back(values[flat]);
      std::size_t axis = t.rank();
      while (axis-- > 0) {
        if (++counter[axis] < counts[axis]) break;
        counter[axis] = 0;
      }
      if (axis == static_cast<std::size_t>(-1)) break;
    }
  }
  return Tensor(std::move(out_shape), std::move(out), t.dtype());
}

Tensor reduce(const Tensor& t, Reduction kind) {
  const auto values = t.values();
  switch (kind) {
    case Reduction::sum:
      return Tensor::scalar(std::accumulate(values.begin(), values.end(), 0.0));
    case Reduction::sum_of_squares: {
      double acc = 0.0;
      for (double v : values) acc += v * v;
      return Tensor::scalar(acc);
    }
    case Reduction::abs:
      return apply(t, [](double v) { return std::fabs(v); });
    case Reduction::l2_last_axis:
    case Reduction::l1_last_axis: {
      const bool l2 = kind == Reduction::l2_last_axis;
      if (t.rank() == 0) return Tensor::scalar(std::fabs(values[0]));
      const std::size_t inner = t.shape().back();
      Tensor::Shape out_shape(t.shape().begin(), t.shape().end() - 1);
      const std::size_t rows = inner == 0 ? element_count(out_shape) : values.size() / inner;
      std::vector<double> out(rows, 0.0);
      for (std::size_t row = 0; row < rows; ++row) {
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
          const double v = values[row * inner + k];
          acc += l2 ? v * v : std::fabs(v);
        }
        out[row] = l2 ? std::sqrt(acc) : acc;
      }
      return Tensor(std::move(out_shape), std::move(out));
    }
  }
  return t;
}

}  // namespace stagehand
