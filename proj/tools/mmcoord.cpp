// mmcoord: synthesize datasets, train coordinated projections, and evaluate
// them (retrieval, zero-shot classification, enrichment, gradient checks).
//
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmcoord/dataset.hpp"
#include "mmcoord/error.hpp"
#include "mmcoord/gradients.hpp"
#include "mmcoord/mmeb.hpp"
#include "mmcoord/retrieval.hpp"
#include "mmcoord/synth.hpp"
#include "mmcoord/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;

  std::size_t workers() const { return deterministic ? 1 : threads; }
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MMCOORD_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      mmcoord::throw_validation(std::string("MMCOORD_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

json run_manifest(const std::string& subcommand, json config, std::uint64_t seed) {
  return {{"subcommand", subcommand}, {"config", std::move(config)}, {"seed", seed}, {"version", kVersion}};
}

void emit(const json& doc, const std::string& report_path) {
  const std::string text = doc.dump(2) + "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) mmcoord::throw_validation("cannot write report: " + report_path);
    out << text;
  }
  std::cout << text;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

mmcoord::PositiveMode positives_for(const mmcoord::Dataset& ds, const std::string& flag) {
  return flag.empty() ? ds.positives : mmcoord::parse_positive_mode(flag);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::string name = "synth";
  std::size_t entities = 1000;
  std::size_t classes = 10;
  std::size_t latent = 16;
  double class_spread = 1.0;
  std::vector<std::string> modalities;
  double dup_rate = 0.0;
  std::vector<std::string> missing;
  std::vector<double> splits{0.7, 0.1, 0.2};
  std::vector<std::size_t> split_counts;
  std::size_t zero_shot_classes = 0;
};

// name:dim:sigma[:views[:granularity[:class_source]]]
mmcoord::SynthModality parse_modality(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 3 || parts.size() > 6) {
    mmcoord::throw_validation("bad --modality '" + text + "' (name:dim:sigma[:views[:entity|class[:source]]])");
  }
  mmcoord::SynthModality m;
  try {
    m.name = parts[0];
    m.dim = std::stoul(parts[1]);
    m.noise_sigma = std::stod(parts[2]);
    if (parts.size() > 3) m.views_per_entity = std::stoul(parts[3]);
  } catch (const std::exception&) {
    mmcoord::throw_validation("bad number in --modality '" + text + "'");
  }
  if (parts.size() > 4) {
    if (parts[4] == "class") {
      m.granularity = mmcoord::Granularity::class_level;
    } else if (parts[4] != "entity") {
      mmcoord::throw_validation("bad granularity in --modality '" + text + "'");
    }
  }
  if (parts.size() > 5) m.class_source = parts[5];
  return m;
}

int cmd_synth(const SynthArgs& args, const Common& common) {
  mmcoord::SynthConfig config;
  config.name = args.name;
  config.n_entities = args.entities;
  config.n_classes = args.classes;
  config.latent_dim = args.latent;
  config.class_spread = args.class_spread;
  config.duplicate_view_rate = args.dup_rate;
  config.seed = common.seed;
  config.zero_shot_classes = args.zero_shot_classes;
  if (args.splits.size() != 3) mmcoord::throw_validation("--splits needs three fractions");
  config.split_fractions = {args.splits[0], args.splits[1], args.splits[2]};
  if (!args.split_counts.empty()) {
    if (args.split_counts.size() != 3) mmcoord::throw_validation("--split-counts needs three counts");
    config.split_counts = std::array<std::size_t, 3>{args.split_counts[0], args.split_counts[1], args.split_counts[2]};
  }
  if (args.modalities.empty()) {
    for (const char* spec : {"image:32:0.1", "text:24:0.1", "speech:20:0.1"}) config.modalities.push_back(parse_modality(spec));
  } else {
    for (const auto& spec : args.modalities) config.modalities.push_back(parse_modality(spec));
  }
  for (const auto& entry : args.missing) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) mmcoord::throw_validation("bad --missing '" + entry + "' (name=rate)");
    const std::string name = entry.substr(0, eq);
    double rate = 0.0;
    try {
      rate = std::stod(entry.substr(eq + 1));
    } catch (const std::exception&) {
      mmcoord::throw_validation("bad rate in --missing '" + entry + "'");
    }
    bool found = false;
    for (auto& m : config.modalities) {
      if (m.name == name || name == "*") {
        m.missing_rate = rate;
        found = true;
      }
    }
    if (!found) mmcoord::throw_validation("--missing names unknown modality '" + name + "'");
  }

  const auto synth = mmcoord::generate(config);
  const fs::path manifest = mmcoord::save_dataset(synth.dataset, args.out);

  json splits;
  for (const auto& [name, indices] : synth.dataset.splits) splits[name] = indices.size();
  json doc{{"run", run_manifest("synth", config.to_json(), common.seed)},
           {"manifest", manifest.string()},
           {"entities", synth.dataset.size()},
           {"duplicate_pairs", synth.duplicates.size()},
           {"splits", splits}};
  std::ofstream(fs::path(args.out) / "synth_config.json") << config.to_json().dump(2) << "\n";
  emit(doc, "");
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  std::string loss = "pcmc";
  double rho = 1.0;
  double threshold = 0.99;
  std::size_t dim = 256;
  std::size_t hidden = 256;
  std::size_t batch = 128;
  double lr = 1e-4;
  double wd = 0.2;
  std::string decay = "decoupled";
  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::string tau_mode = "learned";
  double tau = 1.0 / 0.07;
  double tau_max = 100.0;
  std::string ce_reduction = "mean";
  std::string train_split = "train";
  std::string val_split = "val";
  bool quiet = false;
};

int cmd_train(const TrainArgs& args, const Common& common) {
  const mmcoord::Dataset ds = mmcoord::load_dataset(args.data);
  mmcoord::TrainConfig config;
  config.loss.family = mmcoord::parse_loss_family(args.loss);
  config.loss.rho = args.rho;
  config.loss.target_threshold = args.threshold;
  config.loss.tau_mode = mmcoord::parse_tau_mode(args.tau_mode);
  if (!(args.tau > 0.0)) mmcoord::throw_validation("--tau must be positive");
  config.loss.log_tau = std::log(args.tau);
  config.loss.tau_max = args.tau_max;
  config.loss.reduction = mmcoord::parse_ce_reduction(args.ce_reduction);
  config.space = {args.dim, args.hidden};
  config.batch_size = args.batch;
  config.lr_max = args.lr;
  config.weight_decay = args.wd;
  config.decay_mode = mmcoord::parse_decay_mode(args.decay);
  config.max_epochs = args.epochs;
  config.patience = args.patience;
  config.seed = common.seed;
  config.train_split = args.train_split;
  config.val_split = args.val_split;
  config.threads = common.workers();

  const auto on_epoch = [&](const mmcoord::EpochRecord& r) {
    if (args.quiet) return;
    std::cerr << "epoch " << r.epoch << "  train_loss " << r.train_loss << "  val_avg_r1 " << r.val_metric
              << (r.improved ? "  *" : "") << '\n';
  };
  const mmcoord::Checkpoint ckpt = mmcoord::train(ds, config, on_epoch);
  mmcoord::save_checkpoint(ckpt, args.out);

  json history = json::array();
  for (const auto& h : ckpt.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_avg_r1", h.val_metric}, {"improved", h.improved}});
  }
  json resolved = config.to_json();
  resolved["data"] = args.data;
  resolved["out"] = args.out;
  json doc{{"run", run_manifest("train", resolved, common.seed)},
           {"best_epoch", ckpt.epoch},
           {"best_val_avg_r1", ckpt.best_metric},
           {"epochs_run", ckpt.history.size()},
           {"history", history}};
  std::ofstream(fs::path(args.out) / "history.json") << doc.dump(2) << "\n";
  emit(doc, "");
  return 0;
}

// ---------------------------------------------------------------- eval / enrich

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::vector<std::size_t> ks{1, 5};
  std::string positives;
  std::string report;
  std::string query;  // enrich only
  std::string db;     // enrich only
};

mmcoord::Checkpoint load_for(const mmcoord::Dataset& ds, const std::string& dir) {
  mmcoord::Checkpoint ckpt = mmcoord::load_checkpoint(dir);
  for (const auto& m : ckpt.modalities) {
    const std::size_t idx = [&] {
      try {
        return ds.modality_index(m.name);
      } catch (const mmcoord::Error&) {
        mmcoord::throw_validation("modality mismatch: checkpoint modality '" + m.name + "' is not in the dataset");
      }
    }();
    if (ds.modalities[idx].dim != m.dim) {
      mmcoord::throw_validation("modality mismatch: '" + m.name + "' dims differ between checkpoint and dataset");
    }
  }
  return ckpt;
}

json eval_config(const EvalArgs& args, mmcoord::PositiveMode mode) {
  return {{"ckpt", args.ckpt}, {"data", args.data}, {"split", args.split}, {"ks", args.ks},
          {"positives", mmcoord::to_string(mode)}};
}

int cmd_eval(const EvalArgs& args, const Common& common) {
  const mmcoord::Dataset ds = mmcoord::load_dataset(args.data);
  const mmcoord::Checkpoint ckpt = load_for(ds, args.ckpt);
  mmcoord::RetrievalOptions options;
  options.ks = args.ks;
  options.mode = positives_for(ds, args.positives);
  options.threads = common.workers();
  const auto projected = mmcoord::project_dataset(ckpt.model, ds, args.split);
  const auto report = mmcoord::cross_modal_report(projected, options);

  json doc = report.to_json();
  doc["run"] = run_manifest("eval", eval_config(args, options.mode), common.seed);
  emit(doc, args.report);
  return 0;
}

int cmd_enrich(const EvalArgs& args, const Common& common) {
  const mmcoord::Dataset ds = mmcoord::load_dataset(args.data);
  const mmcoord::Checkpoint ckpt = load_for(ds, args.ckpt);
  mmcoord::RetrievalOptions options;
  options.ks = args.ks;
  options.mode = positives_for(ds, args.positives);
  options.threads = common.workers();
  const auto query = split_list(args.query);
  const auto db = split_list(args.db);
  const auto projected = mmcoord::project_dataset(ckpt.model, ds, args.split);
  const auto report = mmcoord::enriched_retrieval(projected, query, db, options);

  json config = eval_config(args, options.mode);
  config["query"] = query;
  config["db"] = db;
  json doc = report.to_json();
  doc["run"] = run_manifest("enrich", config, common.seed);
  emit(doc, args.report);
  return 0;
}

// ---------------------------------------------------------------- zeroshot

struct ZeroShotArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string input = "image";
  std::string class_source;   // raw modality averaged per class
  std::string class_encoder;  // head that projects the class vectors
  std::string prompts;        // MMEB file, row i = class label i
  std::string prompt_encoder;
  std::string report;
  bool unseen_only = false;  // restrict to classes absent from the train split
};

int cmd_zeroshot(const ZeroShotArgs& args, const Common& common) {
  const mmcoord::Dataset ds = mmcoord::load_dataset(args.data);
  const mmcoord::Checkpoint ckpt = load_for(ds, args.ckpt);
  const auto inputs = split_list(args.input);
  if (inputs.empty()) mmcoord::throw_validation("--input needs at least one modality");
  if (args.class_source.empty() == args.prompts.empty()) {
    mmcoord::throw_validation("give exactly one of --class-source or --prompts");
  }

  const auto projected = mmcoord::project_dataset(ckpt.model, ds, args.split);
  std::vector<const mmcoord::EmbeddingTable*> tables;
  for (const auto& name : inputs) tables.push_back(&projected.table(name));

  std::set<int> seen;
  if (args.unseen_only) {
    for (std::size_t e : ds.split("train")) {
      if (ds.entities[e].class_label) seen.insert(*ds.entities[e].class_label);
    }
  }

  // Fused input vectors for every labeled entity that has all input views.
  std::vector<mmcoord::Vector> fused;
  std::vector<int> labels;
  std::size_t skipped = 0;
  for (std::size_t e = 0; e < projected.entities.size(); ++e) {
    if (projected.labels[e] && seen.count(*projected.labels[e])) continue;
    bool complete = projected.labels[e].has_value();
    for (const auto* t : tables) complete = complete && t->present[e];
    if (!complete) {
      ++skipped;
      continue;
    }
    std::vector<mmcoord::Vector> parts;
    for (const auto* t : tables) parts.emplace_back(t->rows.row(static_cast<Eigen::Index>(e)).transpose());
    fused.push_back(mmcoord::combine_embeddings(parts));
    labels.push_back(*projected.labels[e]);
  }
  if (fused.empty()) mmcoord::throw_validation("no labeled entity has every input modality");
  mmcoord::Matrix input_matrix(static_cast<Eigen::Index>(fused.size()), fused.front().size());
  for (std::size_t i = 0; i < fused.size(); ++i) input_matrix.row(static_cast<Eigen::Index>(i)) = fused[i].transpose();

  mmcoord::ClassTable classes;
  json class_config;
  if (!args.class_source.empty()) {
    // Class vectors: per-class mean of the raw source vectors of the split.
    const std::size_t src = ds.modality_index(args.class_source);
    std::vector<std::size_t> rows;
    std::vector<int> row_labels;
    for (std::size_t e : projected.entities) {
      const auto& rec = ds.entities[e];
      if (rec.rows[src] && rec.class_label) {
        rows.push_back(*rec.rows[src]);
        row_labels.push_back(*rec.class_label);
      }
    }
    mmcoord::Matrix raw(static_cast<Eigen::Index>(rows.size()), ds.matrices[src].cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      raw.row(static_cast<Eigen::Index>(i)) = ds.matrices[src].row(static_cast<Eigen::Index>(rows[i]));
    }
    std::vector<int> wanted(labels);
    std::sort(wanted.begin(), wanted.end());
    wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
    mmcoord::ClassTable raw_classes = mmcoord::build_class_embeddings(raw, row_labels, wanted);
    const std::string encoder_name = args.class_encoder.empty() ? args.class_source : args.class_encoder;
    const auto& encoder = ckpt.model.encoder(encoder_name);
    const mmcoord::Presence all(raw_classes.labels.size(), 1);
    classes.labels = raw_classes.labels;
    classes.rows = mmcoord::encode(encoder, raw_classes.rows, all);
    class_config = {{"class_source", args.class_source}, {"class_encoder", encoder_name}};
  } else {
    const mmcoord::Matrix prompts = mmcoord::read_mmeb(args.prompts);
    for (Eigen::Index c = 0; c < prompts.rows(); ++c) classes.labels.push_back(static_cast<int>(c));
    if (!args.prompt_encoder.empty()) {
      const mmcoord::Presence all(static_cast<std::size_t>(prompts.rows()), 1);
      classes.rows = mmcoord::encode(ckpt.model.encoder(args.prompt_encoder), prompts, all);
    } else {
      classes.rows = prompts;
    }
    class_config = {{"prompts", args.prompts}, {"prompt_encoder", args.prompt_encoder}};
  }

  const auto result = mmcoord::zero_shot_classify(input_matrix, classes, labels);
  json per_class = json::object();
  for (std::size_t c = 0; c < result.classes.size(); ++c) per_class[std::to_string(result.classes[c])] = result.per_class_accuracy[c];

  json config{{"ckpt", args.ckpt}, {"data", args.data}, {"split", args.split}, {"input", inputs},
              {"unseen_only", args.unseen_only}};
  config.update(class_config);
  json doc{{"run", run_manifest("zeroshot", config, common.seed)},
           {"t1", result.t1},
           {"classes", result.classes.size()},
           {"chance", 1.0 / static_cast<double>(result.classes.size())},
           {"samples", labels.size()},
           {"skipped_entities", skipped},
           {"per_class_accuracy", per_class}};
  emit(doc, args.report);
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckArgs {
  std::string loss = "pcmc";
  std::size_t modalities = 3;
  std::size_t dim = 8;
  std::size_t hidden = 8;
  std::size_t batch = 4;
  double rho = 1.0;
  double missing_rate = 0.0;
  bool shared_view = false;
  std::string tau_mode = "learned";
  std::string ce_reduction = "mean";
  double step = 1e-5;
  double tolerance = 1e-3;
};

int cmd_gradcheck(const GradCheckArgs& args, const Common& common) {
  mmcoord::RandomInstanceSpec spec;
  spec.modalities = args.modalities;
  spec.dim = args.dim;
  spec.hidden = args.hidden;
  spec.batch = args.batch;
  spec.missing_rate = args.missing_rate;
  spec.shared_view = args.shared_view;
  spec.seed = common.seed;
  const auto instance = mmcoord::random_instance(spec);

  mmcoord::LossConfig loss;
  loss.family = mmcoord::parse_loss_family(args.loss);
  loss.rho = args.rho;
  loss.tau_mode = mmcoord::parse_tau_mode(args.tau_mode);
  loss.reduction = mmcoord::parse_ce_reduction(args.ce_reduction);
  loss.validate();

  mmcoord::GradCheckOptions options;
  options.step = args.step;
  const auto result = mmcoord::finite_diff_check(instance.model, instance.batch, loss, options);

  json config{{"loss", args.loss},     {"modalities", args.modalities}, {"dim", args.dim},
              {"hidden", args.hidden}, {"batch", args.batch},           {"rho", args.rho},
              {"missing_rate", args.missing_rate}, {"shared_view", args.shared_view},
              {"tau_mode", args.tau_mode}, {"ce_reduction", args.ce_reduction},
              {"step", args.step},     {"tolerance", args.tolerance}};
  const bool ok = result.max_relative_error < args.tolerance;
  json doc{{"run", run_manifest("gradcheck", config, common.seed)},
           {"max_rel_error", result.max_relative_error},
           {"coordinates", result.coordinates},
           {"worst_tensor", result.worst_tensor},
           {"passed", ok}};
  emit(doc, "");
  return ok ? 0 : kExitNumerical;
}

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--seed", common.seed, "Random seed (default: $MMCOORD_SEED or 0)");
  sub->add_option("--threads", common.threads, "Worker threads for evaluation scoring")->check(CLI::PositiveNumber);
  sub->add_flag("--deterministic", common.deterministic, "Force sequential reductions");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coordinated multimodal embedding spaces: synth, train, eval, zeroshot, enrich, gradcheck"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
  app.require_subcommand(1);

  Common common;
  try {
    common.seed = default_seed();
  } catch (const mmcoord::Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitValidation;
  }

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--name", synth.name, "Dataset name");
  synth_cmd->add_option("--entities", synth.entities, "Number of base entities");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes");
  synth_cmd->add_option("--latent", synth.latent, "Latent dimension");
  synth_cmd->add_option("--class-spread", synth.class_spread, "Within-class latent spread");
  synth_cmd->add_option("--modality", synth.modalities, "name:dim:sigma[:views[:entity|class[:source]]] (repeatable)");
  synth_cmd->add_option("--dup-rate", synth.dup_rate, "Fraction of entities sharing a raw view with a partner");
  synth_cmd->add_option("--missing", synth.missing, "name=rate missing-view rate ('*' for all; repeatable)");
  synth_cmd->add_option("--splits", synth.splits, "train,val,test fractions")->delimiter(',');
  synth_cmd->add_option("--split-counts", synth.split_counts, "train,val,test entity counts")->delimiter(',');
  synth_cmd->add_option("--zero-shot-classes", synth.zero_shot_classes, "Classes held out of train/val");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train projection heads");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", train.data, "Dataset manifest")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint directory")->required();
  train_cmd->add_option("--loss", train.loss, "pcmc | pcmr");
  train_cmd->add_option("--rho", train.rho, "PCMR exponent modulator");
  train_cmd->add_option("--threshold", train.threshold, "Target-matrix cosine threshold");
  train_cmd->add_option("--dim", train.dim, "Coordination space dimension");
  train_cmd->add_option("--hidden", train.hidden, "Feed-forward hidden width");
  train_cmd->add_option("--batch", train.batch, "Batch size");
  train_cmd->add_option("--lr", train.lr, "Peak learning rate");
  train_cmd->add_option("--wd", train.wd, "Weight decay");
  train_cmd->add_option("--decay", train.decay, "decoupled | l2");
  train_cmd->add_option("--epochs", train.epochs, "Maximum epochs");
  train_cmd->add_option("--patience", train.patience, "Early-stopping patience");
  train_cmd->add_option("--tau-mode", train.tau_mode, "learned | fixed");
  train_cmd->add_option("--tau", train.tau, "Initial temperature");
  train_cmd->add_option("--tau-max", train.tau_max, "Temperature clamp");
  train_cmd->add_option("--ce-reduction", train.ce_reduction, "mean | sum");
  train_cmd->add_option("--train-split", train.train_split, "Training split name");
  train_cmd->add_option("--val-split", train.val_split, "Validation split name");
  train_cmd->add_flag("--quiet", train.quiet, "No per-epoch progress on stderr");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Cross-modal retrieval report");
  add_common(eval_cmd, common);
  EvalArgs enrich;
  auto* enrich_cmd = app.add_subcommand("enrich", "Retrieval with fused query/database vectors");
  add_common(enrich_cmd, common);
  for (auto [cmd, args] : {std::pair{eval_cmd, &eval}, std::pair{enrich_cmd, &enrich}}) {
    cmd->add_option("--ckpt", args->ckpt, "Checkpoint directory")->required();
    cmd->add_option("--data", args->data, "Dataset manifest")->required();
    cmd->add_option("--split", args->split, "Split to evaluate");
    cmd->add_option("--ks", args->ks, "Recall cutoffs, e.g. 1,5")->delimiter(',');
    cmd->add_option("--positives", args->positives, "entity | class (default: manifest)");
    cmd->add_option("--report", args->report, "Also write the JSON report here");
  }
  enrich_cmd->add_option("--query", enrich.query, "Query modalities, comma-separated")->required();
  enrich_cmd->add_option("--db", enrich.db, "Database modalities, comma-separated")->required();

  ZeroShotArgs zs;
  auto* zs_cmd = app.add_subcommand("zeroshot", "Zero-shot classification as retrieval");
  add_common(zs_cmd, common);
  zs_cmd->add_option("--ckpt", zs.ckpt, "Checkpoint directory")->required();
  zs_cmd->add_option("--data", zs.data, "Dataset manifest")->required();
  zs_cmd->add_option("--split", zs.split, "Split to classify");
  zs_cmd->add_option("--input", zs.input, "Input modalities, comma-separated (fused by averaging)");
  zs_cmd->add_option("--class-source", zs.class_source, "Raw modality averaged per class");
  zs_cmd->add_option("--class-encoder", zs.class_encoder, "Head projecting class vectors (default: class source)");
  zs_cmd->add_option("--prompts", zs.prompts, "MMEB file of prompt embeddings, row = class label");
  zs_cmd->add_option("--prompt-encoder", zs.prompt_encoder, "Head projecting prompts (default: use raw)");
  zs_cmd->add_option("--report", zs.report, "Also write the JSON report here");
  zs_cmd->add_flag("--unseen-only", zs.unseen_only, "Classify only classes absent from the train split");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc_cmd->set_help_flag("--help", "Print this help message and exit");  // frees "h" for the step size
  add_common(gc_cmd, common);
  gc_cmd->add_option("--loss", gc.loss, "pcmc | pcmr");
  gc_cmd->add_option("--modalities", gc.modalities, "Number of modalities");
  gc_cmd->add_option("--dim", gc.dim, "Coordination space dimension");
  gc_cmd->add_option("--hidden", gc.hidden, "Feed-forward hidden width");
  gc_cmd->add_option("--batch", gc.batch, "Batch size");
  gc_cmd->add_option("--rho", gc.rho, "PCMR exponent modulator");
  gc_cmd->add_option("--missing-rate", gc.missing_rate, "Per-view missing probability");
  gc_cmd->add_flag("--shared-view", gc.shared_view, "Make two samples share a raw view");
  gc_cmd->add_option("--tau-mode", gc.tau_mode, "learned | fixed");
  gc_cmd->add_option("--ce-reduction", gc.ce_reduction, "mean | sum");
  gc_cmd->add_option("--h", gc.step, "Finite-difference step");
  gc_cmd->add_option("--tol", gc.tolerance, "Maximum accepted relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitValidation;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, common);
    if (*train_cmd) return cmd_train(train, common);
    if (*eval_cmd) return cmd_eval(eval, common);
    if (*enrich_cmd) return cmd_enrich(enrich, common);
    if (*zs_cmd) return cmd_zeroshot(zs, common);
    if (*gc_cmd) return cmd_gradcheck(gc, common);
  } catch (const mmcoord::Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return ex.kind() == mmcoord::ErrorKind::numerical ? kExitNumerical : kExitValidation;
  } catch (const std::filesystem::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
