// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   mmcoord_acceptance [--only N[,N...]]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmcoord/gradients.hpp"
#include "mmcoord/losses.hpp"
#include "mmcoord/random.hpp"
#include "mmcoord/retrieval.hpp"
#include "mmcoord/synth.hpp"
#include "mmcoord/trainer.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace mmcoord;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ------------------------------------------------------------------ shared setups

// Entity-level benchmark: every entity has its own latent centroid, so the
// only shared structure across entities is the modality maps.
SynthConfig entity_benchmark(std::uint64_t seed) {
  SynthConfig c;
  c.name = "entity_bench";
  c.n_entities = 1300;
  c.n_classes = 1300;
  c.latent_dim = 16;
  c.seed = seed;
  c.split_counts = std::array<std::size_t, 3>{1000, 100, 200};
  c.modalities = {{"image", 16, 0.05}, {"text", 16, 0.05}, {"speech", 16, 0.05}};
  return c;
}

TrainConfig default_training(LossFamily family, std::uint64_t seed) {
  TrainConfig t;
  t.loss.family = family;
  t.batch_size = 80;
  t.seed = seed;
  return t;
}

double test_avg_r1(const Model& model, const Dataset& ds, PositiveMode mode = PositiveMode::entity) {
  return average_cross_modal_r1(project_dataset(model, ds, "test"), mode);
}

// ------------------------------------------------------------------ criteria

Outcome gradient_correctness() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t instances = 0;
  for (LossFamily family : {LossFamily::pcmc, LossFamily::pcmr}) {
    for (double missing : {0.0, 0.3}) {
      for (double rho : {0.0, 1.0}) {
        for (std::uint64_t i = 0; i < 20; ++i) {
          Rng pick(mix_seed(4242, i));
          RandomInstanceSpec spec;
          spec.seed = 9000 + i;
          spec.modalities = 2 + pick.below(3);    // 2..4
          spec.dim = 4 + pick.below(13);          // 4..16
          spec.hidden = 4 + pick.below(13);
          spec.batch = 2 + pick.below(5);         // 2..6
          spec.missing_rate = missing;
          spec.shared_view = pick.uniform() < 0.3;
          const auto inst = random_instance(spec);
          LossConfig config;
          config.family = family;
          config.rho = rho;
          const auto r = finite_diff_check(inst.model, inst.batch, config);
          ++instances;
          if (r.max_relative_error > worst) {
            worst = r.max_relative_error;
            where = std::string(to_string(family)) + " missing=" + fmt(missing) + " rho=" + fmt(rho) +
                    " seed=" + std::to_string(spec.seed) + " tensor=" + r.worst_tensor;
          }
        }
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {worst < 1e-3 && elapsed < 120.0,
          "max rel err " + fmt(worst, 3) + " (< 1e-3) over " + std::to_string(instances) + " instances in " +
              fmt(elapsed, 3) + " s (< 120 s); worst at " + where};
}

Outcome loss_oracles() {
  auto sim = [](Matrix m) { return SimilarityMatrix{std::move(m), "a", "b"}; };
  const double ce = ce_loss(sim(Matrix::Identity(2, 2)), 1.0);
  const double uniform = ce_loss(sim(Matrix::Constant(4, 4, 0.3)), 2.5);
  const Matrix s{{1.0, 0.5}, {0.5, 1.0}};
  const TargetMatrix t{Matrix::Identity(2, 2)};
  const double r1 = pcmr_pair_loss(sim(s), t, 1.0);
  const double r0 = pcmr_pair_loss(sim(s), t, 0.0);
  const bool ok = std::abs(ce - 0.313262) < 1e-6 && std::abs(uniform - std::log(4.0)) < 1e-9 &&
                  std::abs(r1 - 0.353553) < 1e-6 && std::abs(r0 - 0.5) < 1e-9;
  return {ok, "ce " + fmt(ce, 10) + ", uniform CE " + fmt(uniform, 12) + ", pcmr(rho=1) " + fmt(r1, 10) +
                  ", pcmr(rho=0) " + fmt(r0, 12)};
}

Outcome mask_equivalence() {
  Rng rng(31337);
  auto sim = [](Matrix m) { return SimilarityMatrix{std::move(m), "a", "b"}; };
  auto presence = [&](std::size_t b) {
    Presence p(b);
    for (auto& f : p) f = rng.uniform() < 0.35 ? 0 : 1;
    p[0] = 1;
    return p;
  };
  std::size_t pcmr_mismatch = 0;
  double pcmc_worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto b = static_cast<std::size_t>(2 + rng.below(5));
    const auto B = static_cast<Eigen::Index>(b);
    Matrix s(B, B);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = rng.uniform(-1.0, 1.0);
    Matrix tv = Matrix::Identity(B, B);
    if (b > 3) tv(1, 3) = tv(3, 1) = 1.0;
    const Presence qp = presence(b), dp = presence(b);

    // PCMR: masked loss vs loss on the pass-entry submatrix.
    const double rho = i % 2 ? 1.0 : 0.0;
    const Mask reg = build_mask(qp, dp, MaskKind::regression);
    std::vector<Eigen::Index> rows, cols;
    for (std::size_t p = 0; p < b; ++p) {
      if (qp[p]) rows.push_back(static_cast<Eigen::Index>(p));
      if (dp[p]) cols.push_back(static_cast<Eigen::Index>(p));
    }
    Matrix ss(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    Matrix ts(ss.rows(), ss.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        ss(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s(rows[r], cols[c]);
        ts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = tv(rows[r], cols[c]);
      }
    }
    if (pcmr_pair_loss(sim(s), TargetMatrix{tv}, rho, &reg) != pcmr_pair_loss(sim(ss), TargetMatrix{ts}, rho)) {
      ++pcmr_mismatch;
    }

    // PCMC: masked loss vs CE over the row-dropped, column-removed sub-batch.
    const double tau = rng.uniform(1.0, 30.0);
    const Mask con = build_mask(qp, dp, MaskKind::contrastive);
    std::vector<std::size_t> both, q_rows, d_rows;
    for (std::size_t p = 0; p < b; ++p) {
      if (qp[p] && dp[p]) both.push_back(p);
      if (qp[p]) q_rows.push_back(p);
      if (dp[p]) d_rows.push_back(p);
    }
    oracle::Rows rs(b);
    for (std::size_t p = 0; p < b; ++p) rs[p] = {s.row(static_cast<Eigen::Index>(p)).data(), s.row(static_cast<Eigen::Index>(p)).data() + B};
    const double reference = 0.5 * (oracle::sub_batch_ce(rs, tau, both, d_rows) +
                                    oracle::sub_batch_ce(oracle::transpose(rs), tau, both, q_rows));
    pcmc_worst = std::max(pcmc_worst, std::abs(pcmc_pair_loss(sim(s), tau, &con) - reference));
  }
  return {pcmr_mismatch == 0 && pcmc_worst < 1e-10,
          "PCMR exact on " + std::to_string(50 - pcmr_mismatch) + "/50, PCMC max |diff| " + fmt(pcmc_worst, 3) +
              " (< 1e-10) on 50 instances"};
}

Outcome target_matrix_behavior() {
  // Duplicates present: every duplicated pair that lands in one batch is marked.
  SynthConfig dup = entity_benchmark(77);
  dup.duplicate_view_rate = 0.2;
  const auto with_dups = generate(dup);
  std::map<std::size_t, std::set<std::size_t>> partner;
  for (const auto& d : with_dups.duplicates) {
    partner[d.first].insert(d.second);
    partner[d.second].insert(d.first);
  }
  std::size_t pairs_seen = 0, pairs_marked = 0, batches = 0;
  for (std::uint64_t epoch = 0; epoch < 10; ++epoch) {
    for (const auto& batch : batch_iter(with_dups.dataset, "train", 80, 77, epoch, BatchMode::training, true)) {
      ++batches;
      const auto t = target_from_batch(batch);
      std::map<std::size_t, Eigen::Index> slot;
      for (std::size_t i = 0; i < batch.size(); ++i) slot[batch.entity_indices[i]] = static_cast<Eigen::Index>(i);
      for (const auto& [e, i] : slot) {
        auto it = partner.find(e);
        if (it == partner.end()) continue;
        for (std::size_t other : it->second) {
          auto j = slot.find(other);
          if (j == slot.end()) continue;
          ++pairs_seen;
          pairs_marked += t.values(i, j->second) == 1.0 ? 1 : 0;
        }
      }
    }
  }

  // No duplicates: every sampled batch has an identity target.
  const auto clean = generate(entity_benchmark(78));
  std::size_t clean_batches = 0, identity = 0;
  for (std::uint64_t epoch = 0; epoch < 10; ++epoch) {
    for (const auto& batch : batch_iter(clean.dataset, "train", 80, 78, epoch, BatchMode::training, true)) {
      ++clean_batches;
      const auto t = target_from_batch(batch);
      identity += t.values == Matrix::Identity(t.values.rows(), t.values.cols()) ? 1 : 0;
    }
  }
  return {pairs_seen > 0 && pairs_marked == pairs_seen && identity == clean_batches,
          "duplicate pairs marked " + std::to_string(pairs_marked) + "/" + std::to_string(pairs_seen) + " over " +
              std::to_string(batches) + " batches; identity targets " + std::to_string(identity) + "/" +
              std::to_string(clean_batches) + " batches at rate 0"};
}

Outcome metric_oracles() {
  std::size_t agree = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(mix_seed(555, seed));
    const auto n = static_cast<Eigen::Index>(2 + rng.below(199));
    const auto q = static_cast<Eigen::Index>(1 + rng.below(60));
    Matrix db(n, 5), queries(q, 5);
    for (Eigen::Index i = 0; i < db.size(); ++i) db.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < queries.size(); ++i) queries.data()[i] = rng.normal();
    for (int d = 0; d < 4; ++d) db.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))) = db.row(0);
    PositiveSet pos;
    for (Eigen::Index i = 0; i < q; ++i) {
      std::set<std::size_t> s;
      const auto count = 1 + rng.below(std::min<std::uint64_t>(10, static_cast<std::uint64_t>(n)));
      while (s.size() < count) s.insert(static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n))));
      pos.sets.emplace_back(s.begin(), s.end());
    }
    const Matrix qn = normalize_rows(queries), dn = normalize_rows(db);
    oracle::Rows scores(static_cast<std::size_t>(q));
    for (Eigen::Index i = 0; i < q; ++i) {
      const Vector s = dn * qn.row(i).transpose();
      scores[static_cast<std::size_t>(i)] = {s.data(), s.data() + s.size()};
    }
    bool ok = r_precision(queries, db, pos) == oracle::r_precision(scores, pos.sets);
    for (std::size_t k : {1, 5, 10}) ok = ok && recall_at_k(queries, db, pos, k) == oracle::recall_at_k(scores, pos.sets, k);
    agree += ok ? 1 : 0;
  }
  return {agree == 50, "exact agreement on " + std::to_string(agree) + "/50 instances (r@1, r@5, r@10, R-P)"};
}

struct EntityRuns {
  Dataset dataset;
  double untrained = 0.0;
  double pcmc = 0.0;
  std::map<double, std::vector<double>> pcmr;  // rho -> per-seed test r@1
  double seconds_pcmc = 0.0;
  double seconds_pcmr = 0.0;
};

EntityRuns& entity_runs() {
  static EntityRuns runs = [] {
    EntityRuns r;
    r.dataset = generate(entity_benchmark(1)).dataset;
    const TrainConfig base = default_training(LossFamily::pcmc, 1);
    r.untrained = test_avg_r1(init_model(r.dataset.modalities, base.space, base.seed, base.loss.log_tau), r.dataset);
    auto start = Clock::now();
    r.pcmc = test_avg_r1(train(r.dataset, base).model, r.dataset);
    r.seconds_pcmc = seconds_since(start);
    for (double rho : {1.0, 0.0}) {
      for (std::uint64_t seed : {1, 2, 3}) {
        TrainConfig t = default_training(LossFamily::pcmr, seed);
        t.loss.rho = rho;
        start = Clock::now();
        r.pcmr[rho].push_back(test_avg_r1(train(r.dataset, t).model, r.dataset));
        if (rho == 1.0 && seed == 1) r.seconds_pcmr = seconds_since(start);
      }
    }
    return r;
  }();
  return runs;
}

Outcome end_to_end() {
  const auto& r = entity_runs();
  const double pcmr = r.pcmr.at(1.0).front();
  return {r.pcmc >= 0.80 && pcmr >= 0.80 && r.untrained <= 0.05,
          "test avg r@1: PCMC " + fmt(r.pcmc) + " (>= 0.80), PCMR " + fmt(pcmr) + " (>= 0.80), untrained " +
              fmt(r.untrained) + " (<= 0.05); train time PCMC " + fmt(r.seconds_pcmc, 3) + " s, PCMR " +
              fmt(r.seconds_pcmr, 3) + " s"};
}

Outcome rho_direction() {
  const auto& r = entity_runs();
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  const double m1 = mean(r.pcmr.at(1.0));
  const double m0 = mean(r.pcmr.at(0.0));
  std::string per_seed;
  for (std::size_t i = 0; i < 3; ++i) {
    per_seed += (i ? ", " : "") + fmt(r.pcmr.at(1.0)[i]) + " vs " + fmt(r.pcmr.at(0.0)[i]);
  }
  return {m1 >= m0 - 0.02, "mean test r@1 rho=1 " + fmt(m1) + " vs rho=0 " + fmt(m0) + " (need >= rho=0 - 0.02); per seed " + per_seed};
}

Outcome enrichment_direction() {
  std::string detail;
  bool all = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    SynthConfig c;
    c.name = "enrich";
    c.n_entities = 1000;
    c.n_classes = 10;
    c.class_spread = 1.5;
    c.seed = seed;
    c.modalities = {{"image", 16, 0.1}, {"text", 16, 0.5}, {"cls", 16, 0.05}};
    c.modalities[2].granularity = Granularity::class_level;
    const Dataset ds = generate(c).dataset;
    const Checkpoint ckpt = train(ds, default_training(LossFamily::pcmc, seed));
    const auto split = project_dataset(ckpt.model, ds, "test");
    RetrievalOptions options;
    options.ks = {1};
    options.mode = PositiveMode::class_label;
    const std::vector<std::string> db{"image"}, plain{"text"}, fused{"text", "cls"};
    const double r_plain = enriched_retrieval(split, plain, db, options).average_recall(1);
    const double r_fused = enriched_retrieval(split, fused, db, options).average_recall(1);
    all = all && r_fused > r_plain;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": text+cls->image " +
              fmt(r_fused) + " vs text->image " + fmt(r_plain);
  }
  return {all, "class-level r@1, " + detail};
}

Outcome zero_shot_path() {
  SynthConfig c;
  c.name = "zeroshot";
  c.n_entities = 3000;
  c.n_classes = 100;
  c.zero_shot_classes = 30;
  c.class_spread = 0.5;
  c.seed = 3;
  c.modalities = {{"image", 16, 0.1}, {"attr", 16, 0.3}};
  const Dataset ds = generate(c).dataset;
  const Checkpoint ckpt = train(ds, default_training(LossFamily::pcmc, 3));

  std::set<int> seen;
  for (std::size_t e : ds.split("train")) seen.insert(*ds.entities[e].class_label);
  const std::size_t image = ds.modality_index("image"), attr = ds.modality_index("attr");
  std::vector<std::size_t> held_out;
  std::vector<int> labels;
  for (std::size_t e : ds.split("test")) {
    const int label = *ds.entities[e].class_label;
    if (seen.count(label) || !ds.entities[e].rows[image] || !ds.entities[e].rows[attr]) continue;
    held_out.push_back(e);
    labels.push_back(label);
  }
  const Batch batch = make_batch(ds, held_out);
  // Class embeddings: per-class mean of raw attribute vectors, projected by the attribute head.
  const ClassTable raw = build_class_embeddings(batch.inputs[attr], labels);
  ClassTable classes{raw.labels, encode(ckpt.model.encoder("attr"), raw.rows, Presence(raw.labels.size(), 1))};
  const Matrix inputs = encode(ckpt.model.encoder("image"), batch.inputs[image], batch.presence[image]);
  const double t1 = zero_shot_t1(inputs, classes, labels);
  const double chance = 1.0 / static_cast<double>(classes.labels.size());
  return {t1 >= 10.0 * chance, "T1 " + fmt(t1) + " on " + std::to_string(classes.labels.size()) +
                                   " held-out classes, chance " + fmt(chance) + " (need >= 10x chance = " +
                                   fmt(10.0 * chance) + ")"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome cli_determinism() {
  testing::ScratchDir dir("accept10");
  const std::string cli = MMCOORD_CLI_PATH;
  auto run = [&](const std::string& args, const std::filesystem::path& out) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + out.string() + "\" 2>/dev/null";
    return std::system(cmd.c_str());
  };
  const auto data = dir / "data";
  if (run("synth --out \"" + data.string() + "\" --entities 300 --seed 4 --modality a:12:0.1 --modality b:10:0.1 "
          "--modality c:8:0.1 --missing c=0.2",
          dir / "synth.json") != 0) {
    return {false, "synth subcommand failed"};
  }
  const std::string flags = "train --data \"" + (data / "manifest.json").string() +
                            "\" --dim 32 --hidden 32 --batch 32 --epochs 4 --lr 1e-3 --seed 11 --deterministic --quiet";
  std::vector<std::string> files{"params.bin", "checkpoint.json", "history.json"};
  // Both runs write to the same --out so every input, including the echoed path, is identical.
  const auto out = dir / "run";
  if (run(flags + " --out \"" + out.string() + "\"", dir / "r1.json") != 0) return {false, "train subcommand failed"};
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(out / f));
  std::filesystem::remove_all(out);
  if (run(flags + " --out \"" + out.string() + "\"", dir / "r2.json") != 0) return {false, "train subcommand failed"};
  std::size_t identical = 0;
  for (std::size_t k = 0; k < files.size(); ++k) identical += first[k] == slurp(out / files[k]) ? 1 : 0;
  const bool reports = slurp(dir / "r1.json") == slurp(dir / "r2.json");
  return {identical == files.size() && reports,
          std::to_string(identical) + "/" + std::to_string(files.size()) +
              " checkpoint/history files byte-identical; stdout reports " + (reports ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"loss-value oracles", loss_oracles},
      {"mask equivalence", mask_equivalence},
      {"target-matrix behavior", target_matrix_behavior},
      {"metric oracles", metric_oracles},
      {"end-to-end synthetic coordination", end_to_end},
      {"rho-modulation direction", rho_direction},
      {"enrichment direction", enrichment_direction},
      {"zero-shot path", zero_shot_path},
      {"determinism", cli_determinism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& ex) {
      out = {false, std::string("exception: ") + ex.what()};
    }
    failures += out.pass ? 0 : 1;
    std::cout << (out.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << ": " << out.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
