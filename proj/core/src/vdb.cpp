#include "stagehand/vdb.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "stagehand/digest.hpp"
#include "stagehand/random.hpp"

namespace stagehand {
namespace fs = std::filesystem;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<double> embed(std::string_view text, std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be positive");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw Error(ErrorCode::EmptyText, "text has no alphanumeric tokens");
  std::vector<double> v(dim, 0.0);
  for (const auto& t : tokens) v[fnv1a64(t) % dim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "vectors differ in dimension");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::InvalidArgument, "cosine of a zero vector");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::string embedding_text(const RunArtifact& artifact) {
  return artifact.evaluation.empty() ? artifact.prompt : artifact.prompt + "\n" + artifact.evaluation;
}

std::string derive_run_id(const RunArtifact& artifact) {
  std::string material = artifact.prompt;
  material.push_back('\0');
  for (const auto& [path, text] : artifact.bundle.files) {
    material += path;
    material.push_back('\0');
    material += text;
    material.push_back('\0');
  }
  return "run-" + sha256_hex(material).substr(0, 16);
}

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  }) && id != "." && id != "..";
}

}  // namespace

VectorStore VectorStore::open(const fs::path& root, std::size_t dim) {
  VectorStore store;
  store.root_ = root;
  store.dim_ = dim;
  std::error_code ec;
  fs::create_directories(root / "runs", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + root.string() + ": " + ec.message());
  const fs::path index = root / "index.json";
  if (!fs::exists(index)) return store;
  try {
    const auto j = nlohmann::json::parse(read_file(index));
    if (j.at("dim").get<std::size_t>() != dim) {
      throw Error(ErrorCode::InvalidArgument, "store was built with embedding dimension " +
                                                  std::to_string(j.at("dim").get<std::size_t>()));
    }
    for (const auto& e : j.at("runs")) {
      store.entries_.push_back(
          {e.at("id").get<std::string>(), e.at("sequence").get<long>(), e.at("embedding").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "corrupt index " + index.string() + ": " + e.what());
  }
  return store;
}

void VectorStore::write_index() const {
  nlohmann::json j;
  j["dim"] = dim_;
  j["runs"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    j["runs"].push_back({{"id", e.id}, {"sequence", e.sequence}, {"embedding", e.embedding}});
  }
  write_atomic(root_ / "index.json", j.dump(1) + "\n");
}

std::string VectorStore::add_run(const RunArtifact& artifact) {
  const std::string id = artifact.id.empty() ? derive_run_id(artifact) : artifact.id;
  if (!safe_id(id)) throw Error(ErrorCode::InvalidArtifact, "run id '" + id + "' is not a plain name");
  for (const auto& e : entries_) {
    if (e.id == id) throw Error(ErrorCode::DuplicateId, "run '" + id + "' is already stored");
  }
  if (artifact.schema_version != kSchemaVersion) {
    throw Error(ErrorCode::VersionMismatch, "artifact schema " + artifact.schema_version + " is not " + kSchemaVersion);
  }
  const ValidationReport report = check_sources(artifact.bundle);
  if (!report.ok) {
    throw Error(ErrorCode::InvalidArtifact, "run '" + id + "' bundle does not validate:\n" + format_report(report));
  }
  std::vector<double> embedding = embed(embedding_text(artifact), dim_);

  // Stage everything under a temporary directory, then move it into place.
  const fs::path final_dir = root_ / "runs" / id;
  const fs::path tmp_dir = root_ / "runs" / ("." + id + ".tmp");
  std::error_code ec;
  fs::remove_all(tmp_dir, ec);
  if (fs::exists(final_dir)) throw Error(ErrorCode::DuplicateId, "run directory '" + id + "' already exists");
  for (const auto& [path, text] : artifact.bundle.files) {
    if (!resolve_path("x", path)) throw Error(ErrorCode::PathEscape, "bundle path '" + path + "' leaves the run");
    write_atomic(tmp_dir / "bundle" / path, text);
  }
  for (std::size_t k = 0; k < artifact.stage_metrics.size(); ++k) {
    write_atomic(tmp_dir / ("stage" + std::to_string(k + 1)) / "metrics.jsonl", artifact.stage_metrics[k]);
  }
  write_atomic(tmp_dir / "scores.json", scores_to_json(artifact.scores) + "\n");
  write_atomic(tmp_dir / "evaluation.txt", artifact.evaluation);
  write_atomic(tmp_dir / "prompt.txt", artifact.prompt);
  const nlohmann::json meta = {{"id", id},
                               {"schema_version", artifact.schema_version},
                               {"created_at", artifact.created_at},
                               {"workflow_path", artifact.bundle.workflow_path},
                               {"stages", artifact.stage_metrics.size()}};
  write_atomic(tmp_dir / "meta.json", meta.dump(2) + "\n");
  fs::rename(tmp_dir, final_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot move run into place: " + ec.message());

  const long sequence = entries_.empty() ? 0 : entries_.back().sequence + 1;
  entries_.push_back({id, sequence, std::move(embedding)});
  try {
    write_index();
  } catch (...) {
    entries_.pop_back();
    throw;
  }
  return id;
}

std::vector<QueryHit> VectorStore::query_topk(std::string_view text, std::size_t k) const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (entries_.empty()) throw Error(ErrorCode::EmptyStore, "the vector store has no runs");
  const auto q = embed(text, dim_);
  std::vector<std::pair<QueryHit, long>> scored;
  for (const auto& e : entries_) scored.push_back({{e.id, cosine(q, e.embedding)}, e.sequence});
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first.score != b.first.score) return a.first.score > b.first.score;
    return a.second < b.second;
  });
  std::vector<QueryHit> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].first);
  return out;
}

RunArtifact VectorStore::load_run(const std::string& id) const {
  if (std::none_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.id == id; })) {
    throw Error(ErrorCode::InvalidArgument, "no run '" + id + "' in the store");
  }
  const fs::path dir = root_ / "runs" / id;
  RunArtifact a;
  a.id = id;
  a.prompt = read_file(dir / "prompt.txt");
  a.evaluation = read_file(dir / "evaluation.txt");
  a.scores = scores_from_json(read_file(dir / "scores.json"));
  try {
    const auto meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    a.schema_version = meta.at("schema_version").get<std::string>();
    a.created_at = meta.at("created_at").get<std::string>();
    a.bundle.workflow_path = meta.at("workflow_path").get<std::string>();
    const auto stages = meta.at("stages").get<std::size_t>();
    for (std::size_t k = 0; k < stages; ++k) {
      a.stage_metrics.push_back(read_file(dir / ("stage" + std::to_string(k + 1)) / "metrics.jsonl"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "corrupt meta.json for " + id + ": " + e.what());
  }
  const fs::path bundle_dir = dir / "bundle";
  for (const auto& entry : fs::recursive_directory_iterator(bundle_dir)) {
    if (entry.is_regular_file()) {
      a.bundle.files[fs::relative(entry.path(), bundle_dir).generic_string()] = read_file(entry.path());
    }
  }
  return a;
}

std::vector<std::string> VectorStore::ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.id);
  return out;
}

}  // namespace stagehand
