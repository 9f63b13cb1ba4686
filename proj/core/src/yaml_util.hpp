#pragma once

#include <yaml-cpp/yaml.h>

#include <optional>
#include <string>

#include "stagehand/tensor.hpp"

namespace stagehand::detail {

/// Plain or quoted numeric scalar. Digit-group underscores ("400_000_000") are
/// accepted, as are ".inf"/".nan" spellings.
std::optional<double> yaml_number(const YAML::Node& node);
std::optional<long long> yaml_integer(const YAML::Node& node);
std::optional<bool> yaml_bool(const YAML::Node& node);
/// Scalar, list, or list of lists of numbers.
std::optional<Tensor> yaml_tensor(const YAML::Node& node);

std::string yaml_kind(const YAML::Node& node);

}  // namespace stagehand::detail
