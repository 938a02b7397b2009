#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcoord/dataset.hpp"
#include "mmcoord/model.hpp"
#include "mmcoord/types.hpp"

namespace mmcoord {

/// Projected embeddings of one modality, one row per split entity.
struct EmbeddingTable {
  std::string modality;
  Matrix rows;                           // entities x D, zero rows where absent
  Presence present;                      // per entity
  std::vector<std::size_t> source_rows;  // raw row index per entity (meaningful when present)
};

/// A split encoded by every head of a model. Tables follow the model's
/// encoder order; `entities` and `labels` follow the split order.
struct ProjectedSplit {
  std::vector<std::size_t> entities;
  std::vector<std::optional<int>> labels;
  std::vector<EmbeddingTable> tables;

  const EmbeddingTable& table(std::string_view modality) const;
};

ProjectedSplit project_dataset(const Model& model, const Dataset& dataset, std::string_view split);

/// Per query, the database indices counted as correct.
struct PositiveSet {
  PositiveMode mode = PositiveMode::entity;
  std::vector<std::vector<std::size_t>> sets;
};

/// Position of every database item in the ranking for one query: descending
/// score, ties broken by ascending database index.
std::vector<std::size_t> rank_positions(std::span<const double> scores);

/// Fraction of queries with at least one positive among the top k.
double recall_at_k(const Matrix& queries, const Matrix& db, const PositiveSet& positives,
                   std::size_t k, std::size_t threads = 1);

/// Mean over queries of (positives within the top r) / r, r = |positives(q)|.
double r_precision(const Matrix& queries, const Matrix& db, const PositiveSet& positives,
                   std::size_t threads = 1);

struct PairMetrics {
  std::string query;
  std::string db;
  std::vector<double> recall;  // aligned with RetrievalReport::ks
  double r_precision = 0.0;
  std::size_t queries = 0;
  std::size_t database = 0;
};

struct RetrievalReport {
  std::vector<std::size_t> ks;
  std::vector<PairMetrics> pairs;
  std::vector<double> avg_recall;
  double avg_r_precision = 0.0;
  std::size_t skipped_entities = 0;

  /// Average r@k for a k listed in `ks`.
  double average_recall(std::size_t k) const;
  nlohmann::json to_json() const;
};

struct RetrievalOptions {
  std::vector<std::size_t> ks{1, 5};
  PositiveMode mode = PositiveMode::entity;
  std::size_t threads = 1;
};

/// Metrics for every ordered modality pair (M (M - 1) entries) plus averages.
RetrievalReport cross_modal_report(const ProjectedSplit& split, const RetrievalOptions& options);

/// Query and/or database vectors fused from several modalities with
/// combine_embeddings. Entities lacking one of a side's modalities are
/// skipped on that side.
RetrievalReport enriched_retrieval(const ProjectedSplit& split,
                                   std::span<const std::string> query_modalities,
                                   std::span<const std::string> db_modalities,
                                   const RetrievalOptions& options);

/// Unweighted mean of directional r@1 over all ordered pairs.
double average_cross_modal_r1(const ProjectedSplit& split, PositiveMode mode, std::size_t threads = 1);

/// Normalize each input, average, normalize the mean.
Vector combine_embeddings(std::span<const Vector> embeddings);

struct ClassTable {
  std::vector<int> labels;  // ascending
  Matrix rows;              // one row per label
};

/// Per-class mean of the given vectors. `classes`, when non-empty, lists the
/// labels that must be present.
ClassTable build_class_embeddings(const Matrix& vectors, std::span<const int> labels,
                                  std::span<const int> classes = {});

struct ZeroShotResult {
  double t1 = 0.0;  // mean of per-class accuracies
  std::vector<int> predictions;
  std::vector<int> classes;
  std::vector<double> per_class_accuracy;
};

/// Predicts the argmax-cosine class (ties to the lowest label).
ZeroShotResult zero_shot_classify(const Matrix& inputs, const ClassTable& classes,
                                  std::span<const int> true_labels);
double zero_shot_t1(const Matrix& inputs, const ClassTable& classes, std::span<const int> true_labels);

}  // namespace mmcoord
