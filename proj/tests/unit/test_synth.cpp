#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

#include <Eigen/QR>

#include "mmcoord/similarity.hpp"
#include "mmcoord/synth.hpp"
#include "scratch.hpp"

using namespace mmcoord;

namespace {

SynthConfig three_modalities(std::size_t n, std::uint64_t seed) {
  SynthConfig c;
  c.n_entities = n;
  c.seed = seed;
  c.modalities = {{"image", 12, 0.1}, {"text", 10, 0.1}, {"speech", 8, 0.1}};
  return c;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generate_to writes one file per modality and a full manifest") {
  testing::ScratchDir dir("synth");
  const auto manifest = generate_to(three_modalities(1000, 1), dir.path());
  const Dataset ds = load_dataset(manifest);
  CHECK(ds.size() == 1000);
  CHECK(ds.modalities.size() == 3);
  for (const auto& m : ds.modalities) CHECK(std::filesystem::exists(dir / m.file));
  std::size_t total = 0;
  for (const auto& [name, idx] : ds.splits) total += idx.size();
  CHECK(total == 1000);
}

TEST_CASE("same seed gives byte-identical files") {
  testing::ScratchDir a("synth"), b("synth");
  const SynthConfig c = three_modalities(300, 7);
  generate_to(c, a.path());
  generate_to(c, b.path());
  for (const char* f : {"manifest.json", "image.mmeb", "text.mmeb", "speech.mmeb"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  testing::ScratchDir other("synth");
  generate_to(three_modalities(300, 8), other.path());
  CHECK(slurp(a / "image.mmeb") != slurp(other / "image.mmeb"));
}

TEST_CASE("missing-view frequency tracks missing_rate") {
  for (double rate : {0.1, 0.3}) {
    SynthConfig c = three_modalities(2000, 3);
    c.modalities[1].missing_rate = rate;
    const auto s = generate(c);
    std::size_t missing = 0;
    for (const auto& e : s.dataset.entities) missing += e.rows[1] ? 0 : 1;
    CHECK(std::abs(static_cast<double>(missing) / 2000.0 - rate) < 0.02);
    for (const auto& e : s.dataset.entities) CHECK(e.present_count() >= 2);
  }
}

TEST_CASE("without duplicates every sampled batch has an identity target") {
  const auto s = generate(three_modalities(600, 4));
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    for (const auto& batch : batch_iter(s.dataset, "train", 64, 4, epoch, BatchMode::training, true)) {
      const auto t = target_from_batch(batch);
      CHECK(t.values == Matrix::Identity(t.values.rows(), t.values.cols()));
    }
  }
}

TEST_CASE("duplicated views are exact copies and mark the target") {
  SynthConfig c = three_modalities(400, 5);
  c.duplicate_view_rate = 0.2;
  const auto s = generate(c);
  CHECK(s.duplicates.size() == 40);
  for (const auto& d : s.duplicates) {
    const auto& a = s.dataset.entities[d.first].rows[d.modality];
    const auto& b = s.dataset.entities[d.second].rows[d.modality];
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    const Matrix& x = s.dataset.matrices[d.modality];
    CHECK(x.row(static_cast<Eigen::Index>(*a)) == x.row(static_cast<Eigen::Index>(*b)));

    const std::vector<std::size_t> pair{d.first, d.second};
    const auto t = target_from_batch(make_batch(s.dataset, pair));
    CHECK(t.values == Matrix::Ones(2, 2));
  }
}

TEST_CASE("matched views are more similar than mismatched ones under a linear probe") {
  const auto s = generate(three_modalities(1500, 6));
  const auto& ds = s.dataset;
  // Least-squares probe text -> image fitted on train, scored on test.
  auto stack = [&](const std::string& split, std::size_t m) {
    const auto& idx = ds.split(split);
    Matrix out(static_cast<Eigen::Index>(idx.size()), ds.matrices[m].cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = ds.matrices[m].row(static_cast<Eigen::Index>(*ds.entities[idx[i]].rows[m]));
    }
    return out;
  };
  const Matrix xt = stack("train", 1), yt = stack("train", 0);
  const Eigen::MatrixXd probe = Eigen::MatrixXd(xt).colPivHouseholderQr().solve(Eigen::MatrixXd(yt));
  const Matrix mapped = stack("test", 1) * probe;
  const Matrix image = stack("test", 0);
  const Matrix sims = normalize_rows(mapped) * normalize_rows(image).transpose();
  double matched = 0.0, mismatched = 0.0;
  std::size_t n_matched = 0, n_mismatched = 0;
  for (Eigen::Index p = 0; p < sims.rows(); ++p) {
    for (Eigen::Index q = 0; q < sims.cols(); ++q) {
      if (p == q) {
        matched += sims(p, q);
        ++n_matched;
      } else {
        mismatched += sims(p, q);
        ++n_mismatched;
      }
    }
  }
  REQUIRE(n_matched >= 200);
  CHECK(matched / static_cast<double>(n_matched) > mismatched / static_cast<double>(n_mismatched));
}

TEST_CASE("split counts, held-out classes and class-level views") {
  SynthConfig c;
  c.n_entities = 600;
  c.n_classes = 20;
  c.zero_shot_classes = 5;
  c.seed = 9;
  c.modalities = {{"image", 8, 0.1}, {"attr", 6, 0.2}, {"cls", 6, 0.0}};
  c.modalities[2].granularity = Granularity::class_level;
  c.modalities[2].class_source = "attr";
  c.split_counts = std::array<std::size_t, 3>{300, 50, 250};
  const auto s = generate(c);
  const auto& ds = s.dataset;
  CHECK(ds.split("train").size() == 300);
  CHECK(ds.split("val").size() == 50);
  CHECK(ds.split("test").size() == 250);

  for (const char* split : {"train", "val"}) {
    for (std::size_t e : ds.split(split)) CHECK(*ds.entities[e].class_label < 15);
  }
  std::set<int> test_classes;
  for (std::size_t e : ds.split("test")) test_classes.insert(*ds.entities[e].class_label);
  for (int held = 15; held < 20; ++held) CHECK(test_classes.count(held) == 1);

  // Entities of a class share their class-level row.
  std::map<int, std::size_t> row_of_class;
  for (const auto& e : ds.entities) {
    REQUIRE(e.rows[2].has_value());
    const auto [it, inserted] = row_of_class.emplace(*e.class_label, *e.rows[2]);
    if (!inserted) CHECK(it->second == *e.rows[2]);
  }
  CHECK(ds.matrices[2].rows() == 20);
}

TEST_CASE("synth config validation and JSON round trip") {
  SynthConfig c = three_modalities(10, 1);
  c.n_classes = 11;
  CHECK_THROWS(c.validate());
  c = three_modalities(10, 1);
  c.modalities.pop_back();
  c.modalities.pop_back();
  CHECK_THROWS(c.validate());
  c = three_modalities(100, 1);
  c.zero_shot_classes = 3;
  c.split_counts = std::array<std::size_t, 3>{50, 20, 30};
  CHECK(SynthConfig::from_json(c.to_json()).to_json() == c.to_json());
}
