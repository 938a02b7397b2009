#include "mmcoord/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mmcoord/error.hpp"
#include "mmcoord/mmeb.hpp"
#include "mmcoord/random.hpp"

namespace mmcoord {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t EntityRecord::present_count() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.has_value(); }));
}

std::string_view to_string(PositiveMode mode) {
  return mode == PositiveMode::entity ? "entity" : "class";
}

PositiveMode parse_positive_mode(std::string_view text) {
  if (text == "entity") return PositiveMode::entity;
  if (text == "class") return PositiveMode::class_label;
  throw_validation("unknown positive mode '" + std::string(text) + "' (expected entity|class)");
}

std::size_t Dataset::modality_index(std::string_view modality) const {
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    if (modalities[m].name == modality) return m;
  }
  throw_validation("unknown modality '" + std::string(modality) + "'");
}

const std::vector<std::size_t>& Dataset::split(std::string_view split_name) const {
  auto it = splits.find(std::string(split_name));
  if (it == splits.end()) throw_validation("unknown split '" + std::string(split_name) + "'");
  return it->second;
}

void Dataset::validate() const {
  if (modalities.empty()) throw_validation("dataset has no modalities");
  if (entities.empty()) throw_validation("dataset has no entities");
  if (matrices.size() != modalities.size()) {
    throw_validation("matrix count does not match modality count");
  }

  std::set<std::string> names;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const auto& spec = modalities[m];
    if (spec.name.empty()) throw_validation("modality with empty name");
    if (!names.insert(spec.name).second) throw_validation("duplicate modality '" + spec.name + "'");
    if (spec.dim < 1) throw_validation("modality '" + spec.name + "' has dim 0");
    if (static_cast<std::size_t>(matrices[m].cols()) != spec.dim) {
      throw_validation("dimension mismatch for modality '" + spec.name + "': manifest says " +
                       std::to_string(spec.dim) + ", file has " +
                       std::to_string(matrices[m].cols()) + " columns");
    }
  }

  for (std::size_t e = 0; e < entities.size(); ++e) {
    const auto& rec = entities[e];
    if (rec.rows.size() != modalities.size()) {
      throw_validation("entity '" + rec.id + "' does not list every modality");
    }
    if (rec.present_count() < 2) {
      throw_validation("entity '" + rec.id + "' has fewer than two present modalities");
    }
    if (rec.class_label && *rec.class_label < 0) {
      throw_validation("entity '" + rec.id + "' has a negative class label");
    }
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      const auto& row = rec.rows[m];
      if (!row) continue;
      if (*row >= static_cast<std::size_t>(matrices[m].rows())) {
        throw_validation("row index out of range: entity '" + rec.id + "', modality '" +
                         modalities[m].name + "', row " + std::to_string(*row));
      }
      if (!matrices[m].row(static_cast<Eigen::Index>(*row)).allFinite()) {
        throw_validation("non-finite values in modality '" + modalities[m].name + "' row " +
                         std::to_string(*row));
      }
    }
  }

  std::vector<std::uint8_t> used(entities.size(), 0);
  for (const auto& [split_name, indices] : splits) {
    for (std::size_t e : indices) {
      if (e >= entities.size()) {
        throw_validation("split '" + split_name + "' references entity " + std::to_string(e) +
                         " out of range");
      }
      if (used[e]) {
        throw_validation("splits are not disjoint: entity " + std::to_string(e) +
                         " appears twice");
      }
      used[e] = 1;
    }
  }
}

namespace {

template <typename T>
T required(const json& node, const char* key, const std::string& context) {
  if (!node.is_object() || !node.contains(key)) {
    throw_validation("malformed manifest: missing '" + std::string(key) + "' in " + context);
  }
  try {
    return node.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw_validation("malformed manifest: bad '" + std::string(key) + "' in " + context + ": " +
                     ex.what());
  }
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw_validation("cannot open manifest: " + manifest_path.string());

  json doc;
  try {
    in >> doc;
  } catch (const json::exception& ex) {
    throw_validation("malformed manifest: " + std::string(ex.what()));
  }
  if (!doc.is_object()) throw_validation("malformed manifest: top level must be an object");

  Dataset ds;
  ds.name = doc.value("name", std::string{});
  if (doc.contains("positives")) {
    ds.positives = parse_positive_mode(required<std::string>(doc, "positives", "manifest"));
  }

  const auto& mods = doc.contains("modalities") ? doc["modalities"] : json();
  if (!mods.is_array() || mods.empty()) {
    throw_validation("malformed manifest: 'modalities' must be a non-empty array");
  }
  const fs::path base = manifest_path.parent_path();
  for (const auto& node : mods) {
    ModalitySpec spec;
    spec.name = required<std::string>(node, "name", "modality");
    const auto dim = required<std::int64_t>(node, "dim", "modality '" + spec.name + "'");
    if (dim < 1) throw_validation("malformed manifest: modality '" + spec.name + "' dim < 1");
    spec.dim = static_cast<std::size_t>(dim);
    spec.file = required<std::string>(node, "file", "modality '" + spec.name + "'");

    const fs::path file = base / spec.file;
    if (!fs::exists(file)) throw_validation("embedding file not found: " + file.string());
    const MmebHeader header = read_mmeb_header(file);
    if (header.cols != spec.dim) {
      throw_validation("dimension mismatch for modality '" + spec.name + "': manifest says " +
                       std::to_string(spec.dim) + ", file header says " +
                       std::to_string(header.cols));
    }
    ds.matrices.push_back(read_mmeb(file));
    ds.modalities.push_back(std::move(spec));
  }

  const auto& ents = doc.contains("entities") ? doc["entities"] : json();
  if (!ents.is_array()) throw_validation("malformed manifest: 'entities' must be an array");
  for (const auto& node : ents) {
    EntityRecord rec;
    rec.id = required<std::string>(node, "id", "entity");
    const auto& rows = node.contains("rows") ? node["rows"] : json();
    if (!rows.is_object()) {
      throw_validation("malformed manifest: entity '" + rec.id + "' needs a 'rows' object");
    }
    rec.rows.resize(ds.modalities.size());
    for (const auto& [key, value] : rows.items()) {
      const std::size_t m = ds.modality_index(key);
      if (value.is_null()) continue;
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
        throw_validation("malformed manifest: entity '" + rec.id + "' row for '" + key +
                         "' must be a non-negative integer or null");
      }
      rec.rows[m] = value.get<std::size_t>();
    }
    if (node.contains("class_label") && !node["class_label"].is_null()) {
      if (!node["class_label"].is_number_integer()) {
        throw_validation("malformed manifest: entity '" + rec.id + "' class_label must be an int");
      }
      rec.class_label = node["class_label"].get<int>();
    }
    ds.entities.push_back(std::move(rec));
  }

  if (doc.contains("splits")) {
    const auto& splits = doc["splits"];
    if (!splits.is_object()) throw_validation("malformed manifest: 'splits' must be an object");
    for (const auto& [key, value] : splits.items()) {
      try {
        ds.splits[key] = value.get<std::vector<std::size_t>>();
      } catch (const json::exception&) {
        throw_validation("malformed manifest: split '" + key + "' must be an index array");
      }
    }
  }

  ds.validate();
  return ds;
}

fs::path save_dataset(const Dataset& dataset, const fs::path& dir, std::string_view manifest_name) {
  dataset.validate();
  fs::create_directories(dir);

  json doc;
  doc["name"] = dataset.name;
  doc["positives"] = to_string(dataset.positives);
  json mods = json::array();
  for (std::size_t m = 0; m < dataset.modalities.size(); ++m) {
    const auto& spec = dataset.modalities[m];
    const fs::path file = dir / spec.file;
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_mmeb(file, dataset.matrices[m]);
    mods.push_back({{"name", spec.name}, {"dim", spec.dim}, {"file", spec.file}});
  }
  doc["modalities"] = std::move(mods);

  json ents = json::array();
  for (const auto& rec : dataset.entities) {
    json rows = json::object();
    for (std::size_t m = 0; m < dataset.modalities.size(); ++m) {
      rows[dataset.modalities[m].name] = rec.rows[m] ? json(*rec.rows[m]) : json(nullptr);
    }
    json node{{"id", rec.id}, {"rows", std::move(rows)}};
    if (rec.class_label) node["class_label"] = *rec.class_label;
    ents.push_back(std::move(node));
  }
  doc["entities"] = std::move(ents);
  doc["splits"] = dataset.splits;

  const fs::path manifest = dir / std::string(manifest_name);
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw_validation("cannot write manifest: " + manifest.string());
  out << doc.dump(1) << '\n';
  return manifest;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> entity_indices) {
  Batch batch;
  batch.entity_indices.assign(entity_indices.begin(), entity_indices.end());
  batch.last = entity_indices.size();
  const auto B = static_cast<Eigen::Index>(entity_indices.size());

  for (std::size_t m = 0; m < dataset.modalities.size(); ++m) {
    const Matrix& source = dataset.matrices[m];
    Matrix inputs = Matrix::Zero(B, source.cols());
    Presence present(entity_indices.size(), 0);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& row = dataset.entities[entity_indices[static_cast<std::size_t>(b)]].rows[m];
      if (!row) continue;
      inputs.row(b) = source.row(static_cast<Eigen::Index>(*row));
      present[static_cast<std::size_t>(b)] = 1;
    }
    batch.inputs.push_back(std::move(inputs));
    batch.presence.push_back(std::move(present));
  }
  return batch;
}

std::vector<std::size_t> epoch_order(std::span<const std::size_t> split, std::uint64_t seed,
                                     std::uint64_t epoch, bool shuffle) {
  std::vector<std::size_t> order(split.begin(), split.end());
  if (shuffle) {
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
  }
  return order;
}

std::vector<Batch> batch_iter(const Dataset& dataset, std::string_view split,
                              std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                              BatchMode mode, bool shuffle) {
  if (batch_size < 2) throw_validation("batch size must be at least 2");
  const auto& indices = dataset.split(split);
  if (mode == BatchMode::training && indices.size() < batch_size) {
    throw_validation("split '" + std::string(split) + "' has " + std::to_string(indices.size()) +
                     " entities, fewer than one batch of " + std::to_string(batch_size));
  }
  if (indices.empty()) throw_validation("split '" + std::string(split) + "' is empty");

  const auto order = epoch_order(indices, seed, epoch, shuffle);
  const std::size_t full = order.size() / batch_size;
  const std::size_t count =
      mode == BatchMode::training ? full : (order.size() + batch_size - 1) / batch_size;

  std::vector<Batch> batches;
  batches.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t first = k * batch_size;
    const std::size_t last = std::min(first + batch_size, order.size());
    Batch batch = make_batch(dataset, std::span(order).subspan(first, last - first));
    batch.ordinal = k;
    batch.first = first;
    batch.last = last;
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace mmcoord
