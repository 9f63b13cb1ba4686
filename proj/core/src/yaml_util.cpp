#include "yaml_util.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

namespace stagehand::detail {

std::optional<double> yaml_number(const YAML::Node& node) {
  if (!node || !node.IsScalar()) return std::nullopt;
  std::string text;
  for (char c : node.Scalar()) {
    if (c != '_') text.push_back(c);
  }
  if (text.empty()) return std::nullopt;
  const std::string lower = [&] {
    std::string s;
    for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return s;
  }();
  if (lower == ".inf" || lower == "+.inf") return std::numeric_limits<double>::infinity();
  if (lower == "-.inf") return -std::numeric_limits<double>::infinity();
  if (lower == ".nan") return std::numeric_limits<double>::quiet_NaN();
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::optional<long long> yaml_integer(const YAML::Node& node) {
  const auto v = yaml_number(node);
  if (!v || !std::isfinite(*v) || std::floor(*v) != *v || std::fabs(*v) > 9.0e15) return std::nullopt;
  return static_cast<long long>(*v);
}

std::optional<bool> yaml_bool(const YAML::Node& node) {
  if (!node || !node.IsScalar()) return std::nullopt;
  bool value = false;
  if (!YAML::convert<bool>::decode(node, value)) return std::nullopt;
  return value;
}

std::optional<Tensor> yaml_tensor(const YAML::Node& node) {
  if (!node) return std::nullopt;
  if (node.IsScalar()) {
    const auto v = yaml_number(node);
    if (!v) return std::nullopt;
    return Tensor::scalar(*v);
  }
  if (!node.IsSequence()) return std::nullopt;
  std::vector<double> values;
  if (node.size() > 0 && node[0].IsSequence()) {
    const std::size_t cols = node[0].size();
    for (const auto& row : node) {
      if (!row.IsSequence() || row.size() != cols) return std::nullopt;
      for (const auto& cell : row) {
        const auto v = yaml_number(cell);
        if (!v) return std::nullopt;
        values.push_back(*v);
      }
    }
    return Tensor({node.size(), cols}, std::move(values));
  }
  for (const auto& cell : node) {
    const auto v = yaml_number(cell);
    if (!v) return std::nullopt;
    values.push_back(*v);
  }
  return Tensor({node.size()}, std::move(values));
}

std::string yaml_kind(const YAML::Node& node) {
  if (!node) return "nothing";
  switch (node.Type()) {
    case YAML::NodeType::Null: return "null";
    case YAML::NodeType::Scalar: return "'" + node.Scalar() + "'";
    case YAML::NodeType::Sequence: return "a list";
    case YAML::NodeType::Map: return "a mapping";
    default: return "an undefined node";
  }
}

}  // namespace stagehand::detail
