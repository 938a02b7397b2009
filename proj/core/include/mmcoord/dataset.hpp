#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmcoord/types.hpp"

namespace mmcoord {

struct ModalitySpec {
  std::string name;
  std::size_t dim = 0;
  std::string file;  // relative to the manifest directory
};

struct EntityRecord {
  std::string id;
  /// Row index into each modality's matrix, aligned with Dataset::modalities.
  /// nullopt marks a missing view.
  std::vector<std::optional<std::size_t>> rows;
  std::optional<int> class_label;

  std::size_t present_count() const;
};

/// How retrieval positives are derived: shared entity, or shared class label.
enum class PositiveMode { entity, class_label };

std::string_view to_string(PositiveMode mode);
PositiveMode parse_positive_mode(std::string_view text);

/// Per-modality embedding matrices plus entity records binding rows together.
/// Immutable after load.
struct Dataset {
  std::string name;
  std::vector<ModalitySpec> modalities;
  std::vector<EntityRecord> entities;
  std::map<std::string, std::vector<std::size_t>> splits;
  std::vector<Matrix> matrices;  // aligned with modalities
  PositiveMode positives = PositiveMode::entity;

  std::size_t size() const { return entities.size(); }
  std::size_t modality_index(std::string_view name) const;
  const std::vector<std::size_t>& split(std::string_view name) const;
  bool has_present(std::size_t entity, std::size_t modality) const {
    return entities[entity].rows[modality].has_value();
  }

  /// Throws Error(validation) on any broken invariant.
  void validate() const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes every matrix as MMEB (at ModalitySpec::file, relative to `dir`) and
/// the manifest as `dir/manifest_name`. Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                                   std::string_view manifest_name = "manifest.json");

/// A mini-batch: rows [first, last) of the epoch ordering.
struct Batch {
  std::size_t ordinal = 0;
  std::size_t first = 0;
  std::size_t last = 0;
  std::vector<std::size_t> entity_indices;
  std::vector<Matrix> inputs;      // per modality, B x D_m; absent rows are zero
  std::vector<Presence> presence;  // per modality, B flags

  std::size_t size() const { return entity_indices.size(); }
  std::size_t modality_count() const { return inputs.size(); }
};

enum class BatchMode { training, evaluation };

/// Gathers the given entities into a batch (no ordering applied).
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> entity_indices);

/// Permutation of the split for one epoch, fully determined by (seed, epoch).
std::vector<std::size_t> epoch_order(std::span<const std::size_t> split, std::uint64_t seed,
                                     std::uint64_t epoch, bool shuffle);

/// Training mode drops the partial tail batch; evaluation mode keeps it.
std::vector<Batch> batch_iter(const Dataset& dataset, std::string_view split,
                              std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                              BatchMode mode, bool shuffle);

}  // namespace mmcoord
