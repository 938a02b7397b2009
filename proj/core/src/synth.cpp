#include "mmcoord/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mmcoord/error.hpp"
#include "mmcoord/random.hpp"

namespace mmcoord {

using nlohmann::json;

namespace {

// Stream ids for mix_seed; each random quantity has its own stream so that
// changing one knob does not reshuffle unrelated draws.
enum Stream : std::uint64_t {
  kCentroids = 1,
  kLatents,
  kMissing,
  kDuplicates,
  kSplits,
  kMaps = 100,
  kNoise = 200,
};

std::string_view to_string(Granularity g) { return g == Granularity::entity ? "entity" : "class"; }

Granularity parse_granularity(std::string_view text) {
  if (text == "entity") return Granularity::entity;
  if (text == "class") return Granularity::class_level;
  throw_validation("unknown granularity '" + std::string(text) + "' (expected entity|class)");
}

Matrix random_map(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scale * rng.normal();
  return a;
}

Vector normal_vector(std::size_t n, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

void round_to_float(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

}  // namespace

void SynthConfig::validate() const {
  if (n_entities < 1) throw_validation("synth: n_entities must be at least 1");
  if (n_classes < 1) throw_validation("synth: n_classes must be at least 1");
  if (n_classes > n_entities) throw_validation("synth: infeasible config, n_classes > n_entities");
  if (latent_dim < 1) throw_validation("synth: latent_dim must be at least 1");
  if (!(class_spread >= 0.0)) throw_validation("synth: class_spread must be >= 0");
  if (modalities.size() < 2) throw_validation("synth: at least two modalities are required");
  if (!(duplicate_view_rate >= 0.0 && duplicate_view_rate <= 1.0)) {
    throw_validation("synth: duplicate_view_rate must lie in [0, 1]");
  }
  if (zero_shot_classes >= n_classes) throw_validation("synth: zero_shot_classes must leave a seen class");

  std::set<std::string> names;
  for (const auto& m : modalities) {
    if (m.name.empty() || !names.insert(m.name).second) {
      throw_validation("synth: modality names must be unique and non-empty");
    }
    if (m.dim < 1) throw_validation("synth: modality '" + m.name + "' needs dim >= 1");
    if (!(m.noise_sigma >= 0.0)) throw_validation("synth: noise_sigma must be >= 0");
    if (m.views_per_entity < 1) throw_validation("synth: views_per_entity must be >= 1");
    if (!(m.missing_rate >= 0.0 && m.missing_rate <= 1.0)) {
      throw_validation("synth: missing_rate must lie in [0, 1]");
    }
    if (!m.class_source.empty()) {
      if (m.granularity != Granularity::class_level) {
        throw_validation("synth: class_source is only valid for class-level modalities");
      }
      auto src = std::find_if(modalities.begin(), modalities.end(),
                              [&](const SynthModality& o) { return o.name == m.class_source; });
      if (src == modalities.end() || src->granularity != Granularity::entity) {
        throw_validation("synth: class_source '" + m.class_source + "' must name an entity-level modality");
      }
    }
  }

  const std::size_t first_heldout = n_classes - zero_shot_classes;
  const std::size_t tail = n_entities % n_classes;
  const std::size_t heldout = (n_entities / n_classes) * zero_shot_classes +
                              (tail > first_heldout ? tail - first_heldout : 0);
  const std::size_t seen = n_entities - heldout;
  if (split_counts) {
    const auto& c = *split_counts;
    if (c[0] + c[1] + c[2] > n_entities) throw_validation("synth: split counts exceed n_entities");
    if (c[0] + c[1] > seen) throw_validation("synth: train+val counts exceed the seen-class entities");
  } else {
    for (double f : split_fractions) {
      if (!(f >= 0.0)) throw_validation("synth: split fractions must be >= 0");
    }
    if (std::abs(split_fractions[0] + split_fractions[1] + split_fractions[2] - 1.0) > 1e-9) {
      throw_validation("synth: split fractions must sum to 1");
    }
  }
}

json SynthConfig::to_json() const {
  json mods = json::array();
  for (const auto& m : modalities) {
    mods.push_back({{"name", m.name},
                    {"dim", m.dim},
                    {"noise_sigma", m.noise_sigma},
                    {"views_per_entity", m.views_per_entity},
                    {"granularity", to_string(m.granularity)},
                    {"class_source", m.class_source},
                    {"missing_rate", m.missing_rate}});
  }
  json doc{{"name", name},
           {"n_entities", n_entities},
           {"n_classes", n_classes},
           {"latent_dim", latent_dim},
           {"class_spread", class_spread},
           {"modalities", std::move(mods)},
           {"duplicate_view_rate", duplicate_view_rate},
           {"seed", seed},
           {"split_fractions", split_fractions},
           {"zero_shot_classes", zero_shot_classes}};
  doc["split_counts"] = split_counts ? json(*split_counts) : json(nullptr);
  return doc;
}

SynthConfig SynthConfig::from_json(const json& doc) {
  SynthConfig c;
  try {
    c.name = doc.value("name", c.name);
    c.n_entities = doc.value("n_entities", c.n_entities);
    c.n_classes = doc.value("n_classes", c.n_classes);
    c.latent_dim = doc.value("latent_dim", c.latent_dim);
    c.class_spread = doc.value("class_spread", c.class_spread);
    c.duplicate_view_rate = doc.value("duplicate_view_rate", c.duplicate_view_rate);
    c.seed = doc.value("seed", c.seed);
    c.zero_shot_classes = doc.value("zero_shot_classes", c.zero_shot_classes);
    if (doc.contains("split_fractions")) c.split_fractions = doc["split_fractions"].get<std::array<double, 3>>();
    if (doc.contains("split_counts") && !doc["split_counts"].is_null()) {
      c.split_counts = doc["split_counts"].get<std::array<std::size_t, 3>>();
    }
    for (const auto& m : doc.at("modalities")) {
      SynthModality s;
      s.name = m.at("name").get<std::string>();
      s.dim = m.value("dim", s.dim);
      s.noise_sigma = m.value("noise_sigma", s.noise_sigma);
      s.views_per_entity = m.value("views_per_entity", s.views_per_entity);
      s.granularity = parse_granularity(m.value("granularity", std::string("entity")));
      s.class_source = m.value("class_source", std::string{});
      s.missing_rate = m.value("missing_rate", s.missing_rate);
      c.modalities.push_back(std::move(s));
    }
  } catch (const json::exception& ex) {
    throw_validation(std::string("synth: malformed config: ") + ex.what());
  }
  return c;
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  const std::size_t N = config.n_entities;
  const std::size_t C = config.n_classes;
  const std::size_t d = config.latent_dim;
  const std::size_t M = config.modalities.size();

  Rng centroid_rng(mix_seed(config.seed, kCentroids));
  std::vector<Vector> centroids;
  for (std::size_t c = 0; c < C; ++c) centroids.push_back(normal_vector(d, centroid_rng));

  Rng latent_rng(mix_seed(config.seed, kLatents));
  std::vector<int> label(N);
  std::vector<Vector> latents;
  for (std::size_t e = 0; e < N; ++e) {
    label[e] = static_cast<int>(e % C);
    latents.push_back(centroids[e % C] + config.class_spread * normal_vector(d, latent_rng));
  }

  std::size_t records_per_entity = 1;
  for (const auto& m : config.modalities) {
    if (m.granularity == Granularity::entity) records_per_entity = std::max(records_per_entity, m.views_per_entity);
  }

  SynthDataset out;
  Dataset& ds = out.dataset;
  ds.name = config.name;
  ds.matrices.resize(M);

  // Entity-level views first; class-level modalities may average them.
  for (std::size_t m = 0; m < M; ++m) {
    const auto& spec = config.modalities[m];
    if (spec.granularity != Granularity::entity) continue;
    Rng map_rng(mix_seed(config.seed, kMaps + m));
    Rng noise_rng(mix_seed(config.seed, kNoise + m));
    const Matrix A = random_map(spec.dim, d, map_rng);
    Matrix rows(static_cast<Eigen::Index>(N * spec.views_per_entity), static_cast<Eigen::Index>(spec.dim));
    for (std::size_t e = 0; e < N; ++e) {
      const Vector clean = A * latents[e];
      for (std::size_t v = 0; v < spec.views_per_entity; ++v) {
        rows.row(static_cast<Eigen::Index>(e * spec.views_per_entity + v)) =
            (clean + spec.noise_sigma * normal_vector(spec.dim, noise_rng)).transpose();
      }
    }
    ds.matrices[m] = std::move(rows);
  }

  // Duplicated views: disjoint entity pairs (a, b) where b copies a's raw row.
  std::vector<std::size_t> dup_candidates;
  for (std::size_t m = 0; m < M; ++m) {
    const auto& spec = config.modalities[m];
    if (spec.granularity == Granularity::entity && spec.views_per_entity == 1) dup_candidates.push_back(m);
  }
  std::vector<std::pair<std::size_t, std::size_t>> base_duplicates;  // (a, b) base entities
  std::vector<std::size_t> duplicate_modality;
  const auto pair_count = static_cast<std::size_t>(std::floor(config.duplicate_view_rate * static_cast<double>(N) / 2.0));
  if (pair_count > 0) {
    if (dup_candidates.empty()) throw_validation("synth: duplicate views need a single-view entity-level modality");
    Rng dup_rng(mix_seed(config.seed, kDuplicates));
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    dup_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < pair_count; ++k) {
      const std::size_t a = order[2 * k];
      const std::size_t b = order[2 * k + 1];
      const std::size_t m = dup_candidates[dup_rng.below(dup_candidates.size())];
      ds.matrices[m].row(static_cast<Eigen::Index>(b)) = ds.matrices[m].row(static_cast<Eigen::Index>(a));
      base_duplicates.emplace_back(a, b);
      duplicate_modality.push_back(m);
    }
  }

  for (std::size_t m = 0; m < M; ++m) {
    const auto& spec = config.modalities[m];
    if (spec.granularity != Granularity::class_level) continue;
    if (!spec.class_source.empty()) {
      const std::size_t src = static_cast<std::size_t>(
          std::find_if(config.modalities.begin(), config.modalities.end(),
                       [&](const SynthModality& o) { return o.name == spec.class_source; }) -
          config.modalities.begin());
      const Matrix& source = ds.matrices[src];
      const std::size_t views = config.modalities[src].views_per_entity;
      Matrix rows = Matrix::Zero(static_cast<Eigen::Index>(C), source.cols());
      std::vector<std::size_t> counts(C, 0);
      for (std::size_t r = 0; r < static_cast<std::size_t>(source.rows()); ++r) {
        const std::size_t c = (r / views) % C;
        rows.row(static_cast<Eigen::Index>(c)) += source.row(static_cast<Eigen::Index>(r));
        counts[c] += 1;
      }
      for (std::size_t c = 0; c < C; ++c) rows.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
      ds.matrices[m] = std::move(rows);
    } else {
      Rng map_rng(mix_seed(config.seed, kMaps + m));
      Rng noise_rng(mix_seed(config.seed, kNoise + m));
      const Matrix A = random_map(spec.dim, d, map_rng);
      Matrix rows(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(spec.dim));
      for (std::size_t c = 0; c < C; ++c) {
        rows.row(static_cast<Eigen::Index>(c)) =
            (A * centroids[c] + spec.noise_sigma * normal_vector(spec.dim, noise_rng)).transpose();
      }
      ds.matrices[m] = std::move(rows);
    }
  }

  for (std::size_t m = 0; m < M; ++m) {
    round_to_float(ds.matrices[m]);
    ds.modalities.push_back(ModalitySpec{config.modalities[m].name,
                                         static_cast<std::size_t>(ds.matrices[m].cols()),
                                         config.modalities[m].name + ".mmeb"});
  }

  // Records: one per (base entity, view); missing views drawn per record.
  Rng missing_rng(mix_seed(config.seed, kMissing));
  for (std::size_t e = 0; e < N; ++e) {
    for (std::size_t r = 0; r < records_per_entity; ++r) {
      EntityRecord rec;
      rec.id = records_per_entity == 1 ? "e" + std::to_string(e) : "e" + std::to_string(e) + "_v" + std::to_string(r);
      rec.class_label = label[e];
      rec.rows.resize(M);
      std::vector<std::size_t> dropped;
      for (std::size_t m = 0; m < M; ++m) {
        const auto& spec = config.modalities[m];
        const std::size_t row = spec.granularity == Granularity::entity
                                    ? e * spec.views_per_entity + r % spec.views_per_entity
                                    : static_cast<std::size_t>(label[e]);
        const bool drop = missing_rng.uniform() < spec.missing_rate;
        if (drop) {
          dropped.push_back(m);
        } else {
          rec.rows[m] = row;
        }
      }
      // Every entity keeps at least two views.
      for (std::size_t m : dropped) {
        if (rec.present_count() >= 2) break;
        const auto& spec = config.modalities[m];
        rec.rows[m] = spec.granularity == Granularity::entity
                          ? e * spec.views_per_entity + r % spec.views_per_entity
                          : static_cast<std::size_t>(label[e]);
      }
      ds.entities.push_back(std::move(rec));
      out.base_entity.push_back(e);
    }
  }

  for (std::size_t k = 0; k < base_duplicates.size(); ++k) {
    const auto [a, b] = base_duplicates[k];
    out.duplicates.push_back({a * records_per_entity, b * records_per_entity, duplicate_modality[k]});
  }

  // Splits by base entity so views of one entity never straddle splits.
  const std::size_t first_heldout = C - config.zero_shot_classes;
  std::vector<std::size_t> seen;
  std::vector<std::size_t> heldout;
  for (std::size_t e = 0; e < N; ++e) {
    (static_cast<std::size_t>(label[e]) < first_heldout ? seen : heldout).push_back(e);
  }
  Rng split_rng(mix_seed(config.seed, kSplits));
  split_rng.shuffle(std::span<std::size_t>(seen));

  std::array<std::size_t, 3> counts{};
  if (config.split_counts) {
    counts = *config.split_counts;
    counts[2] = std::min(counts[2], seen.size() - counts[0] - counts[1]);
  } else {
    counts[0] = static_cast<std::size_t>(std::llround(config.split_fractions[0] * static_cast<double>(seen.size())));
    counts[1] = std::min(seen.size() - counts[0],
                         static_cast<std::size_t>(std::llround(config.split_fractions[1] * static_cast<double>(seen.size()))));
    counts[2] = seen.size() - counts[0] - counts[1];
  }

  const std::array<const char*, 3> names{"train", "val", "test"};
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<std::size_t> bases(seen.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   seen.begin() + static_cast<std::ptrdiff_t>(cursor + counts[s]));
    cursor += counts[s];
    if (s == 2) bases.insert(bases.end(), heldout.begin(), heldout.end());
    std::sort(bases.begin(), bases.end());
    std::vector<std::size_t> records;
    for (std::size_t e : bases) {
      for (std::size_t r = 0; r < records_per_entity; ++r) records.push_back(e * records_per_entity + r);
    }
    ds.splits[names[s]] = std::move(records);
  }

  ds.validate();
  return out;
}

std::filesystem::path generate_to(const SynthConfig& config, const std::filesystem::path& dir) {
  return save_dataset(generate(config).dataset, dir);
}

}  // namespace mmcoord
