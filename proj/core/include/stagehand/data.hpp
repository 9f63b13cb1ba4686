#pragma once

#include <map>
#include <string>
#include <vector>

#include "stagehand/schema.hpp"

namespace stagehand {

/// Files compiled into the library from data/, keyed by their path below it
/// ("templates/selector.txt"). Throws MISSING_FILE.
const std::string& embedded_file(const std::string& path);
std::vector<std::string> embedded_paths(const std::string& prefix);

/// Seed bundle shipped under data/bundles/<name>: "tune", "blind" or "desk".
BundleSources seed_bundle(const std::string& name);

}  // namespace stagehand
