#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stagehand/schema.hpp"
#include "stagehand/scores.hpp"

namespace stagehand {

constexpr std::size_t kEmbeddingDim = 256;

/// Lowercases, splits on non-alphanumerics, hashes each token into one of
/// `dim` buckets and L2-normalizes the counts. Throws EMPTY_TEXT when no token
/// remains.
std::vector<double> embed(std::string_view text, std::size_t dim = kEmbeddingDim);
std::vector<std::string> tokenize(std::string_view text);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

constexpr const char* kSchemaVersion = "stagehand-bundle/1";

/// One stored run. The bundle sources re-validate before they are stored.
struct RunArtifact {
  /// Empty: derived from a digest of the prompt and bundle files.
  std::string id;
  std::string prompt;
  std::string evaluation;
  BundleSources bundle;
  /// metrics.jsonl text per stage, stage 1 first.
  std::vector<std::string> stage_metrics;
  ScoreTriple scores;
  std::string created_at;
  std::string schema_version = kSchemaVersion;
};

/// Text that represents a run in the index.
std::string embedding_text(const RunArtifact& artifact);
std::string derive_run_id(const RunArtifact& artifact);

struct QueryHit {
  std::string id;
  double score = 0.0;
};

/// Exact cosine search over runs kept under one directory:
///   index.json                     id -> embedding, insertion sequence
///   runs/<id>/bundle/...           the bundle files as stored
///   runs/<id>/stage<k>/metrics.jsonl, scores.json, evaluation.txt, prompt.txt, meta.json
/// Writes go to a temporary name first and are renamed into place.
class VectorStore {
 public:
  /// Creates the directory if needed. Throws IO.
  static VectorStore open(const std::filesystem::path& root, std::size_t dim = kEmbeddingDim);

  /// Throws DUPLICATE_ID, INVALID_ARTIFACT (bundle fails validation), IO.
  std::string add_run(const RunArtifact& artifact);
  /// Sorted by score descending, older run first on ties; at most k hits.
  /// Throws EMPTY_STORE, INVALID_ARGUMENT for k < 1, EMPTY_TEXT.
  std::vector<QueryHit> query_topk(std::string_view text, std::size_t k) const;
  RunArtifact load_run(const std::string& id) const;

  std::size_t size() const { return entries_.size(); }
  /// Insertion order.
  std::vector<std::string> ids() const;
  const std::filesystem::path& root() const { return root_; }

 private:
  struct Entry {
    std::string id;
    long sequence = 0;
    std::vector<double> embedding;
  };
  void write_index() const;

  std::filesystem::path root_;
  std::size_t dim_ = kEmbeddingDim;
  std::vector<Entry> entries_;
};

}  // namespace stagehand
