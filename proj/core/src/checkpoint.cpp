#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <utility>

#include "mmcoord/error.hpp"
#include "mmcoord/trainer.hpp"

namespace mmcoord {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr const char* kParamsFile = "params.bin";
constexpr const char* kIndexFile = "checkpoint.json";

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  std::size_t size() const { return bytes_.size(); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw_validation("corrupt checkpoint: truncated params.bin");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

// Every persisted tensor, in file order: parameters, then both Adam moments.
template <typename ModelT>
std::vector<std::pair<std::string, decltype(named_tensors(std::declval<ModelT&>()))>> groups(
    ModelT& params, ModelT& m, ModelT& v) {
  return {{"param/", named_tensors(params)}, {"adam.m/", named_tensors(m)}, {"adam.v/", named_tensors(v)}};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);

  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  const auto all = groups(ckpt.model, ckpt.optim.first_moment, ckpt.optim.second_moment);
  std::uint32_t count = 0;
  for (const auto& [prefix, list] : all) count += static_cast<std::uint32_t>(list.size());
  w.u32(count);

  json index = json::array();
  for (const auto& [prefix, list] : all) {
    for (const auto& t : list) {
      const std::string name = prefix + t.name;
      const std::size_t offset = w.size();
      w.u32(static_cast<std::uint32_t>(name.size()));
      w.raw(name.data(), name.size());
      w.u32(static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
      for (double x : t.data) w.f64(x);
      index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    }
  }

  json modalities = json::array();
  for (const auto& m : ckpt.modalities) modalities.push_back({{"name", m.name}, {"dim", m.dim}});
  json history = json::array();
  for (const auto& h : ckpt.history) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"val_metric", h.val_metric},
                       {"improved", h.improved}});
  }
  const auto& oc = ckpt.optim.config;
  json doc{
      {"format", "mmcoord-checkpoint"},
      {"version", kCheckpointVersion},
      {"config", ckpt.config.to_json()},
      {"modalities", std::move(modalities)},
      {"space", {{"dim", ckpt.model.space.dim}, {"hidden", ckpt.model.space.hidden}}},
      {"epoch", ckpt.epoch},
      {"best_metric", ckpt.best_metric},
      {"history", std::move(history)},
      {"optimizer",
       {{"step", ckpt.optim.step},
        {"lr_max", ckpt.optim.lr_max},
        {"beta1", oc.beta1},
        {"beta2", oc.beta2},
        {"eps", oc.eps},
        {"weight_decay", oc.weight_decay},
        {"decay_mode", to_string(oc.decay_mode)}}},
      {"tensors", std::move(index)},
  };

  {
    std::ofstream out(dir / kParamsFile, std::ios::binary | std::ios::trunc);
    if (!out) throw_validation("cannot write checkpoint: " + (dir / kParamsFile).string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  }
  std::ofstream out(dir / kIndexFile, std::ios::trunc);
  if (!out) throw_validation("cannot write checkpoint: " + (dir / kIndexFile).string());
  out << doc.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream index_in(dir / kIndexFile);
  if (!index_in) throw_validation("cannot open checkpoint: " + (dir / kIndexFile).string());
  json doc;
  try {
    index_in >> doc;
  } catch (const json::exception& ex) {
    throw_validation(std::string("corrupt checkpoint: ") + ex.what());
  }
  if (!doc.is_object() || doc.value("format", std::string{}) != "mmcoord-checkpoint") {
    throw_validation("corrupt checkpoint: unrecognized checkpoint.json");
  }
  if (doc.value("version", 0u) != kCheckpointVersion) {
    throw_validation("checkpoint version mismatch: expected " + std::to_string(kCheckpointVersion));
  }

  std::ifstream bin(dir / kParamsFile, std::ios::binary);
  if (!bin) throw_validation("cannot open checkpoint: " + (dir / kParamsFile).string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(bin), {}));
  if (r.str(4) != std::string(kMagic, 4)) throw_validation("corrupt checkpoint: bad magic bytes");
  if (r.u32() != kCheckpointVersion) throw_validation("checkpoint version mismatch in params.bin");

  std::map<std::string, Record> records;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    Record rec;
    const std::uint32_t rank = r.u32();
    if (rank > 2) throw_validation("corrupt checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.shape.push_back(r.u32());
      n *= rec.shape.back();
    }
    rec.data.resize(n);
    for (double& x : rec.data) x = r.f64();
    if (!records.emplace(name, std::move(rec)).second) {
      throw_validation("corrupt checkpoint: duplicate tensor '" + name + "'");
    }
  }
  if (!r.done()) throw_validation("corrupt checkpoint: trailing bytes in params.bin");

  Checkpoint ckpt;
  try {
    ckpt.config = TrainConfig::from_json(doc.at("config"));
    for (const auto& m : doc.at("modalities")) {
      ckpt.modalities.push_back(ModalitySpec{m.at("name").get<std::string>(), m.at("dim").get<std::size_t>(), {}});
    }
    ckpt.epoch = doc.at("epoch").get<std::size_t>();
    ckpt.best_metric = doc.at("best_metric").get<double>();
    for (const auto& h : doc.at("history")) {
      ckpt.history.push_back(EpochRecord{h.at("epoch").get<std::size_t>(), h.at("train_loss").get<double>(),
                                         h.at("val_metric").get<double>(), h.at("improved").get<bool>()});
    }
    const auto& o = doc.at("optimizer");
    ckpt.optim.step = o.at("step").get<std::uint64_t>();
    ckpt.optim.lr_max = o.at("lr_max").get<double>();
    ckpt.optim.config.beta1 = o.at("beta1").get<double>();
    ckpt.optim.config.beta2 = o.at("beta2").get<double>();
    ckpt.optim.config.eps = o.at("eps").get<double>();
    ckpt.optim.config.weight_decay = o.at("weight_decay").get<double>();
    ckpt.optim.config.decay_mode = parse_decay_mode(o.at("decay_mode").get<std::string>());
    ckpt.model.space.dim = doc.at("space").at("dim").get<std::size_t>();
    ckpt.model.space.hidden = doc.at("space").at("hidden").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw_validation(std::string("corrupt checkpoint: ") + ex.what());
  }

  // Shapes come from the modality list; the records must match them exactly.
  ckpt.model.encoders.clear();
  for (const auto& m : ckpt.modalities) {
    ProjectionParams p;
    p.modality = m.name;
    const auto D = static_cast<Eigen::Index>(ckpt.model.space.dim);
    const auto H = static_cast<Eigen::Index>(ckpt.model.space.hidden);
    p.w0 = Matrix::Zero(D, static_cast<Eigen::Index>(m.dim));
    p.b0 = Vector::Zero(D);
    p.w1 = Matrix::Zero(H, D);
    p.b1 = Vector::Zero(H);
    p.w2 = Matrix::Zero(D, H);
    p.b2 = Vector::Zero(D);
    p.gamma = Vector::Zero(D);
    p.beta = Vector::Zero(D);
    ckpt.model.encoders.push_back(std::move(p));
  }
  ckpt.optim.first_moment = ckpt.model.zeros_like();
  ckpt.optim.second_moment = ckpt.model.zeros_like();

  std::size_t consumed = 0;
  for (const auto& [prefix, list] : groups(ckpt.model, ckpt.optim.first_moment, ckpt.optim.second_moment)) {
    for (auto& t : list) {
      const std::string name = prefix + t.name;
      auto it = records.find(name);
      if (it == records.end()) throw_validation("corrupt checkpoint: missing tensor '" + name + "'");
      if (it->second.shape != t.shape) throw_validation("corrupt checkpoint: shape mismatch for '" + name + "'");
      std::copy(it->second.data.begin(), it->second.data.end(), t.data.begin());
      ++consumed;
    }
  }
  if (consumed != records.size()) throw_validation("corrupt checkpoint: unexpected extra tensors");
  return ckpt;
}

Checkpoint load_checkpoint(const fs::path& dir, std::span<const ModalitySpec> expected) {
  Checkpoint ckpt = load_checkpoint(dir);
  bool same = expected.size() == ckpt.modalities.size();
  for (std::size_t m = 0; same && m < expected.size(); ++m) {
    same = expected[m].name == ckpt.modalities[m].name && expected[m].dim == ckpt.modalities[m].dim;
  }
  if (!same) throw_validation("modality mismatch between checkpoint and dataset");
  return ckpt;
}

}  // namespace mmcoord
