#include "stagehand/config.hpp"

namespace stagehand {

const std::vector<std::string>& known_activations() {
  static const std::vector<std::string> names = {"swish", "silu", "tanh", "relu", "elu"};
  return names;
}

const std::vector<std::string>& known_gaits() {
  static const std::vector<std::string> names = {"walk", "jump"};
  return names;
}

}  // namespace stagehand
