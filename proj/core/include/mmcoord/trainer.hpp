#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcoord/dataset.hpp"
#include "mmcoord/losses.hpp"
#include "mmcoord/model.hpp"
#include "mmcoord/optimizer.hpp"

namespace mmcoord {

struct TrainConfig {
  LossConfig loss;
  CoordinationSpace space;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double lr_max = 1e-4;
  double weight_decay = 0.2;
  DecayMode decay_mode = DecayMode::decoupled;
  std::uint64_t seed = 0;
  std::string eval_metric = "avg_r1";
  std::string train_split = "train";
  std::string val_split = "val";
  /// Worker count for validation scoring. Results do not depend on it.
  std::size_t threads = 1;
  /// An epoch improves only if it beats the best metric by more than this.
  double min_improvement = 1e-6;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_metric = 0.0;
  bool improved = false;
};

struct Checkpoint {
  std::vector<ModalitySpec> modalities;
  Model model;
  OptimState optim;
  std::size_t epoch = 0;  // epoch the parameters come from
  double best_metric = -std::numeric_limits<double>::infinity();
  TrainConfig config;
  std::vector<EpochRecord> history;
};

/// Patience-based stopping on a maximized metric.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_improvement = 1e-6);

  /// Records one epoch's metric; returns true if it is a new best.
  bool update(double metric);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one projection head per dataset modality. After every epoch the
/// average cross-modal r@1 on the validation split decides early stopping;
/// the best epoch's state is returned together with the full history.
Checkpoint train(const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean training loss over one pass of the split, without updates.
double mean_split_loss(const Model& model, const Dataset& dataset, const TrainConfig& config,
                       std::uint64_t epoch);

// Checkpoint directory: checkpoint.json (config, epoch, metrics, tensor index)
// and params.bin ("MMCK", u32 version, u32 record count, then records of
// u32 name length, UTF-8 name, u32 rank, u32 dims..., float64 LE data).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Also verifies the checkpoint was trained on exactly these modalities.
Checkpoint load_checkpoint(const std::filesystem::path& dir, std::span<const ModalitySpec> expected);

}  // namespace mmcoord
