#include "mmcoord/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

#include "mmcoord/error.hpp"
#include "mmcoord/similarity.hpp"

namespace mmcoord {

const EmbeddingTable& ProjectedSplit::table(std::string_view modality) const {
  for (const auto& t : tables) {
    if (t.modality == modality) return t;
  }
  throw_validation("no projected table for modality '" + std::string(modality) + "'");
}

ProjectedSplit project_dataset(const Model& model, const Dataset& dataset, std::string_view split) {
  const auto& indices = dataset.split(split);
  if (indices.empty()) throw_validation("split '" + std::string(split) + "' is empty");

  ProjectedSplit out;
  out.entities = indices;
  for (std::size_t e : indices) out.labels.push_back(dataset.entities[e].class_label);

  const Batch batch = make_batch(dataset, indices);
  for (const auto& encoder : model.encoders) {
    std::size_t m = 0;
    try {
      m = dataset.modality_index(encoder.modality);
    } catch (const Error&) {
      throw_validation("modality mismatch: checkpoint modality '" + encoder.modality +
                       "' is not in the dataset");
    }
    if (dataset.modalities[m].dim != encoder.input_dim()) {
      throw_validation("modality mismatch: '" + encoder.modality + "' has dim " +
                       std::to_string(dataset.modalities[m].dim) + " but the encoder expects " +
                       std::to_string(encoder.input_dim()));
    }
    EmbeddingTable table;
    table.modality = encoder.modality;
    table.rows = encode(encoder, batch.inputs[m], batch.presence[m]);
    table.present = batch.presence[m];
    table.source_rows.resize(indices.size(), 0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& row = dataset.entities[indices[i]].rows[m];
      if (row) table.source_rows[i] = *row;
    }
    out.tables.push_back(std::move(table));
  }
  return out;
}

std::vector<std::size_t> rank_positions(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::size_t> position(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  return position;
}

namespace {

struct QueryOutcome {
  std::size_t best_position = 0;    // rank of the highest-ranked positive
  std::size_t positives_in_top_r = 0;
  std::size_t r = 0;
};

// Scores every query against the database; results are per query, so the
// outcome does not depend on the thread count.
std::vector<QueryOutcome> score_queries(const Matrix& queries, const Matrix& db,
                                        const PositiveSet& positives, std::size_t threads) {
  if (queries.cols() != db.cols()) throw_validation("query and database widths differ");
  if (positives.sets.size() != static_cast<std::size_t>(queries.rows())) {
    throw_validation("positive sets do not match the query count");
  }
  if (queries.rows() == 0) throw_validation("retrieval needs at least one query");
  const auto N = static_cast<std::size_t>(db.rows());
  for (std::size_t q = 0; q < positives.sets.size(); ++q) {
    if (positives.sets[q].empty()) {
      throw_validation("query " + std::to_string(q) + " has an empty positive set");
    }
    for (std::size_t v : positives.sets[q]) {
      if (v >= N) throw_validation("positive index out of range for query " + std::to_string(q));
    }
  }

  const Matrix qn = normalize_rows(queries);
  const Matrix dn = normalize_rows(db);
  const std::size_t Q = positives.sets.size();
  std::vector<QueryOutcome> outcomes(Q);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(N);
    for (std::size_t q = begin; q < end; ++q) {
      const Vector s = dn * qn.row(static_cast<Eigen::Index>(q)).transpose();
      std::copy(s.data(), s.data() + N, scores.begin());
      const auto position = rank_positions(scores);
      const auto& pos = positives.sets[q];
      QueryOutcome& out = outcomes[q];
      out.r = pos.size();
      out.best_position = N;
      for (std::size_t v : pos) {
        out.best_position = std::min(out.best_position, position[v]);
        if (position[v] < pos.size()) ++out.positives_in_top_r;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, Q));
  if (workers == 1) {
    work(0, Q);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (Q + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(Q, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

double recall_from(const std::vector<QueryOutcome>& outcomes, std::size_t k) {
  std::size_t hits = 0;
  for (const auto& o : outcomes) hits += o.best_position < k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double r_precision_from(const std::vector<QueryOutcome>& outcomes) {
  double sum = 0.0;
  for (const auto& o : outcomes) sum += static_cast<double>(o.positives_in_top_r) / static_cast<double>(o.r);
  return sum / static_cast<double>(outcomes.size());
}

// Unique retrieval items of one (possibly fused) side. Entities with the same
// source rows for every fused modality collapse into one item.
struct Side {
  std::string name;
  Matrix vectors;
  std::vector<std::vector<std::size_t>> members;  // split positions
  std::vector<std::vector<int>> labels;           // sorted, unique
  std::vector<std::size_t> item_of;               // split position -> item, npos if skipped
  std::size_t skipped = 0;
};

constexpr std::size_t npos = static_cast<std::size_t>(-1);

Side build_side(const ProjectedSplit& split, std::span<const std::string> modalities) {
  if (modalities.empty()) throw_validation("retrieval side needs at least one modality");
  std::vector<const EmbeddingTable*> tables;
  Side side;
  for (const auto& name : modalities) {
    tables.push_back(&split.table(name));
    side.name += (side.name.empty() ? "" : "+") + name;
  }

  const std::size_t E = split.entities.size();
  side.item_of.assign(E, npos);
  std::map<std::vector<std::size_t>, std::size_t> index;
  std::vector<Vector> vectors;
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<std::size_t> key;
    bool complete = true;
    for (const auto* t : tables) {
      if (!t->present[e]) {
        complete = false;
        break;
      }
      key.push_back(t->source_rows[e]);
    }
    if (!complete) {
      ++side.skipped;
      continue;
    }
    auto [it, inserted] = index.emplace(std::move(key), vectors.size());
    if (inserted) {
      std::vector<Vector> parts;
      for (const auto* t : tables) parts.emplace_back(t->rows.row(static_cast<Eigen::Index>(e)).transpose());
      vectors.push_back(combine_embeddings(parts));
      side.members.emplace_back();
      side.labels.emplace_back();
    }
    const std::size_t item = it->second;
    side.item_of[e] = item;
    side.members[item].push_back(e);
    if (split.labels[e]) side.labels[item].push_back(*split.labels[e]);
  }
  for (auto& l : side.labels) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }

  if (!vectors.empty()) {
    side.vectors.resize(static_cast<Eigen::Index>(vectors.size()), vectors.front().size());
    for (std::size_t i = 0; i < vectors.size(); ++i) side.vectors.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  }
  return side;
}

bool share_label(const std::vector<int>& a, const std::vector<int>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

PairMetrics evaluate_sides(const Side& query, const Side& db, const RetrievalOptions& options) {
  PositiveSet positives;
  positives.mode = options.mode;
  std::vector<Eigen::Index> kept;
  for (std::size_t u = 0; u < query.members.size(); ++u) {
    std::vector<std::size_t> set;
    if (options.mode == PositiveMode::entity) {
      for (std::size_t e : query.members[u]) {
        if (db.item_of[e] != npos) set.push_back(db.item_of[e]);
      }
      std::sort(set.begin(), set.end());
      set.erase(std::unique(set.begin(), set.end()), set.end());
    } else {
      for (std::size_t v = 0; v < db.members.size(); ++v) {
        if (share_label(query.labels[u], db.labels[v])) set.push_back(v);
      }
    }
    if (set.empty()) continue;
    kept.push_back(static_cast<Eigen::Index>(u));
    positives.sets.push_back(std::move(set));
  }
  if (kept.empty()) {
    throw_validation("no " + query.name + " query has a positive among " + db.name + " items");
  }

  Matrix queries(static_cast<Eigen::Index>(kept.size()), query.vectors.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) queries.row(static_cast<Eigen::Index>(i)) = query.vectors.row(kept[i]);

  const auto outcomes = score_queries(queries, db.vectors, positives, options.threads);
  PairMetrics metrics;
  metrics.query = query.name;
  metrics.db = db.name;
  for (std::size_t k : options.ks) metrics.recall.push_back(recall_from(outcomes, k));
  metrics.r_precision = r_precision_from(outcomes);
  metrics.queries = outcomes.size();
  metrics.database = static_cast<std::size_t>(db.vectors.rows());
  return metrics;
}

void check_ks(const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw_validation("at least one k is required");
  for (std::size_t k : ks) {
    if (k < 1) throw_validation("k must be at least 1");
  }
}

void finalize(RetrievalReport& report) {
  report.avg_recall.assign(report.ks.size(), 0.0);
  report.avg_r_precision = 0.0;
  for (const auto& p : report.pairs) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) report.avg_recall[i] += p.recall[i];
    report.avg_r_precision += p.r_precision;
  }
  const auto n = static_cast<double>(report.pairs.size());
  for (double& r : report.avg_recall) r /= n;
  report.avg_r_precision /= n;
}

}  // namespace

double recall_at_k(const Matrix& queries, const Matrix& db, const PositiveSet& positives,
                   std::size_t k, std::size_t threads) {
  if (k < 1) throw_validation("k must be at least 1");
  return recall_from(score_queries(queries, db, positives, threads), k);
}

double r_precision(const Matrix& queries, const Matrix& db, const PositiveSet& positives,
                   std::size_t threads) {
  return r_precision_from(score_queries(queries, db, positives, threads));
}

double RetrievalReport::average_recall(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return avg_recall[i];
  }
  throw_validation("report has no r@" + std::to_string(k));
}

nlohmann::json RetrievalReport::to_json() const {
  nlohmann::json pairs_json = nlohmann::json::object();
  for (const auto& p : pairs) {
    nlohmann::json entry;
    for (std::size_t i = 0; i < ks.size(); ++i) entry["r@" + std::to_string(ks[i])] = p.recall[i];
    entry["r_precision"] = p.r_precision;
    entry["queries"] = p.queries;
    entry["database"] = p.database;
    pairs_json[p.query + "->" + p.db] = std::move(entry);
  }
  nlohmann::json avg;
  for (std::size_t i = 0; i < ks.size(); ++i) avg["r@" + std::to_string(ks[i])] = avg_recall[i];
  avg["r_precision"] = avg_r_precision;
  return {{"pairs", std::move(pairs_json)}, {"avg", std::move(avg)}, {"skipped_entities", skipped_entities}};
}

RetrievalReport cross_modal_report(const ProjectedSplit& split, const RetrievalOptions& options) {
  check_ks(options.ks);
  if (split.tables.size() < 2) throw_validation("cross-modal report needs at least two modalities");

  std::vector<Side> sides;
  for (const auto& t : split.tables) {
    const std::string name = t.modality;
    sides.push_back(build_side(split, std::span(&name, 1)));
  }

  RetrievalReport report;
  report.ks = options.ks;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    for (std::size_t j = 0; j < sides.size(); ++j) {
      if (i == j) continue;
      report.pairs.push_back(evaluate_sides(sides[i], sides[j], options));
    }
  }
  finalize(report);
  return report;
}

RetrievalReport enriched_retrieval(const ProjectedSplit& split,
                                   std::span<const std::string> query_modalities,
                                   std::span<const std::string> db_modalities,
                                   const RetrievalOptions& options) {
  check_ks(options.ks);
  const Side query = build_side(split, query_modalities);
  const Side db = build_side(split, db_modalities);

  RetrievalReport report;
  report.ks = options.ks;
  report.pairs.push_back(evaluate_sides(query, db, options));
  report.skipped_entities = query.skipped + db.skipped;
  finalize(report);
  return report;
}

double average_cross_modal_r1(const ProjectedSplit& split, PositiveMode mode, std::size_t threads) {
  RetrievalOptions options;
  options.ks = {1};
  options.mode = mode;
  options.threads = threads;
  return cross_modal_report(split, options).avg_recall.front();
}

Vector combine_embeddings(std::span<const Vector> embeddings) {
  if (embeddings.empty()) throw_validation("combine_embeddings needs at least one vector");
  const auto width = embeddings.front().size();
  Vector sum = Vector::Zero(width);
  for (const auto& v : embeddings) {
    if (v.size() != width) throw_validation("combine_embeddings: vectors differ in width");
    sum += v / std::max(v.norm(), kNormFloor);
  }
  sum /= static_cast<double>(embeddings.size());
  return sum / std::max(sum.norm(), kNormFloor);
}

ClassTable build_class_embeddings(const Matrix& vectors, std::span<const int> labels,
                                  std::span<const int> classes) {
  if (static_cast<std::size_t>(vectors.rows()) != labels.size()) {
    throw_validation("build_class_embeddings: one label per vector required");
  }
  std::map<int, std::pair<Vector, std::size_t>> acc;
  for (int c : classes) acc.emplace(c, std::make_pair(Vector::Zero(vectors.cols()), std::size_t{0}));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!classes.empty() && !acc.contains(labels[i])) continue;
    auto [it, _] = acc.emplace(labels[i], std::make_pair(Vector::Zero(vectors.cols()), std::size_t{0}));
    it->second.first += vectors.row(static_cast<Eigen::Index>(i)).transpose();
    it->second.second += 1;
  }

  ClassTable table;
  table.rows.resize(static_cast<Eigen::Index>(acc.size()), vectors.cols());
  Eigen::Index r = 0;
  for (const auto& [label, sum_count] : acc) {
    if (sum_count.second == 0) throw_validation("class " + std::to_string(label) + " has no entities");
    table.labels.push_back(label);
    table.rows.row(r++) = (sum_count.first / static_cast<double>(sum_count.second)).transpose();
  }
  return table;
}

ZeroShotResult zero_shot_classify(const Matrix& inputs, const ClassTable& classes,
                                  std::span<const int> true_labels) {
  if (static_cast<std::size_t>(inputs.rows()) != true_labels.size()) {
    throw_validation("zero-shot: one label per input required");
  }
  if (classes.labels.empty()) throw_validation("zero-shot: empty class table");
  if (inputs.cols() != classes.rows.cols()) throw_validation("zero-shot: input and class widths differ");

  std::map<int, std::size_t> slot;
  for (std::size_t c = 0; c < classes.labels.size(); ++c) slot[classes.labels[c]] = c;
  for (int label : true_labels) {
    if (!slot.contains(label)) throw_validation("zero-shot: label " + std::to_string(label) + " is outside the class table");
  }

  const Matrix scores = normalize_rows(inputs) * normalize_rows(classes.rows).transpose();
  ZeroShotResult result;
  std::vector<std::size_t> correct(classes.labels.size(), 0);
  std::vector<std::size_t> total(classes.labels.size(), 0);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    const int predicted = classes.labels[static_cast<std::size_t>(best)];
    result.predictions.push_back(predicted);
    const std::size_t truth = slot[true_labels[static_cast<std::size_t>(i)]];
    total[truth] += 1;
    if (predicted == true_labels[static_cast<std::size_t>(i)]) correct[truth] += 1;
  }

  double sum = 0.0;
  for (std::size_t c = 0; c < classes.labels.size(); ++c) {
    if (total[c] == 0) continue;
    const double acc = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    result.classes.push_back(classes.labels[c]);
    result.per_class_accuracy.push_back(acc);
    sum += acc;
  }
  result.t1 = result.classes.empty() ? 0.0 : sum / static_cast<double>(result.classes.size());
  return result;
}

double zero_shot_t1(const Matrix& inputs, const ClassTable& classes, std::span<const int> true_labels) {
  return zero_shot_classify(inputs, classes, true_labels).t1;
}

}  // namespace mmcoord
