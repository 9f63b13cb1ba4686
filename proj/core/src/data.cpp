#include "stagehand/data.hpp"

#include "stagehand/error.hpp"

namespace stagehand {
namespace detail {
const std::map<std::string, std::string>& embedded_files();
}

const std::string& embedded_file(const std::string& path) {
  const auto& files = detail::embedded_files();
  auto it = files.find(path);
  if (it == files.end()) throw Error(ErrorCode::MissingFile, "no embedded file " + path);
  return it->second;
}

std::vector<std::string> embedded_paths(const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [path, text] : detail::embedded_files()) {
    if (path.compare(0, prefix.size(), prefix) == 0) out.push_back(path);
  }
  return out;
}

BundleSources seed_bundle(const std::string& name) {
  const std::string prefix = "bundles/" + name + "/";
  BundleSources sources;
  for (const auto& path : embedded_paths(prefix)) {
    const std::string rel = path.substr(prefix.size());
    sources.files[rel] = embedded_file(path);
    if (sources.workflow_path.empty() && rel.rfind("workflows/", 0) == 0) sources.workflow_path = rel;
  }
  if (sources.files.empty()) throw Error(ErrorCode::MissingFile, "no seed bundle named " + name);
  if (sources.workflow_path.empty()) throw Error(ErrorCode::MissingFile, "seed bundle " + name + " has no workflow");
  return sources;
}

}  // namespace stagehand
