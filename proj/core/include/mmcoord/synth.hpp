#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcoord/dataset.hpp"

namespace mmcoord {

/// entity: one view per entity (or several, caption-style).
/// class: one row per class, shared by every entity of that class.
enum class Granularity { entity, class_level };

struct SynthModality {
  std::string name;
  std::size_t dim = 16;
  double noise_sigma = 0.1;
  std::size_t views_per_entity = 1;
  Granularity granularity = Granularity::entity;
  /// For class-level modalities: when set, each class row is the mean of this
  /// entity-level modality's raw rows over the class (attribute averaging).
  std::string class_source;
  double missing_rate = 0.0;
};

// Generative model: class centroids z_c ~ N(0, I_d); entity latent
// z = z_c + class_spread * eps; view x = A_m z + sigma_m * eps with A_m a
// seeded random d -> dim map.
struct SynthConfig {
  std::string name = "synth";
  std::size_t n_entities = 1000;
  std::size_t n_classes = 10;
  std::size_t latent_dim = 16;
  double class_spread = 1.0;
  std::vector<SynthModality> modalities;
  /// Fraction of entities that copy one raw view from a partner entity.
  double duplicate_view_rate = 0.0;
  std::uint64_t seed = 0;
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
  /// Exact train/val/test entity counts; overrides the fractions.
  std::optional<std::array<std::size_t, 3>> split_counts;
  /// The highest-numbered classes are held out of train/val (test only).
  std::size_t zero_shot_classes = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& doc);
};

struct SynthDataset {
  Dataset dataset;
  /// (entity a, entity b, modality): b's raw view is a copy of a's.
  struct Duplicate {
    std::size_t first;
    std::size_t second;
    std::size_t modality;
  };
  std::vector<Duplicate> duplicates;
  /// Base entity of every record (records share it under multiple views).
  std::vector<std::size_t> base_entity;
};

SynthDataset generate(const SynthConfig& config);

/// Writes the manifest and one MMEB file per modality into `dir`; returns the
/// manifest path.
std::filesystem::path generate_to(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace mmcoord
