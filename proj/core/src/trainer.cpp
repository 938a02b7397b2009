#include "mmcoord/trainer.hpp"

#include <cmath>
#include <sstream>

#include "mmcoord/error.hpp"
#include "mmcoord/gradients.hpp"
#include "mmcoord/retrieval.hpp"

namespace mmcoord {

using nlohmann::json;

void TrainConfig::validate() const {
  loss.validate();
  space.validate();
  if (batch_size < 2) throw_validation("batch size must be at least 2");
  if (max_epochs < 1) throw_validation("max_epochs must be at least 1");
  if (patience < 1) throw_validation("patience must be at least 1");
  if (!(lr_max >= 0.0) || !std::isfinite(lr_max)) throw_validation("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw_validation("weight decay must be >= 0");
  if (eval_metric != "avg_r1") throw_validation("unsupported eval metric '" + eval_metric + "'");
  if (threads < 1) throw_validation("threads must be at least 1");
}

json TrainConfig::to_json() const {
  return {
      {"loss",
       {{"family", to_string(loss.family)},
        {"tau_mode", to_string(loss.tau_mode)},
        {"log_tau", loss.log_tau},
        {"tau_max", loss.tau_max},
        {"rho", loss.rho},
        {"target_threshold", loss.target_threshold},
        {"ce_reduction", to_string(loss.reduction)}}},
      {"dim", space.dim},
      {"hidden", space.hidden},
      {"batch_size", batch_size},
      {"max_epochs", max_epochs},
      {"patience", patience},
      {"lr_max", lr_max},
      {"weight_decay", weight_decay},
      {"decay_mode", to_string(decay_mode)},
      {"seed", seed},
      {"eval_metric", eval_metric},
      {"train_split", train_split},
      {"val_split", val_split},
      {"min_improvement", min_improvement},
  };
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  try {
    const auto& l = doc.at("loss");
    c.loss.family = parse_loss_family(l.at("family").get<std::string>());
    c.loss.tau_mode = parse_tau_mode(l.at("tau_mode").get<std::string>());
    c.loss.log_tau = l.at("log_tau").get<double>();
    c.loss.tau_max = l.at("tau_max").get<double>();
    c.loss.rho = l.at("rho").get<double>();
    c.loss.target_threshold = l.at("target_threshold").get<double>();
    c.loss.reduction = parse_ce_reduction(l.at("ce_reduction").get<std::string>());
    c.space.dim = doc.at("dim").get<std::size_t>();
    c.space.hidden = doc.at("hidden").get<std::size_t>();
    c.batch_size = doc.at("batch_size").get<std::size_t>();
    c.max_epochs = doc.at("max_epochs").get<std::size_t>();
    c.patience = doc.at("patience").get<std::size_t>();
    c.lr_max = doc.at("lr_max").get<double>();
    c.weight_decay = doc.at("weight_decay").get<double>();
    c.decay_mode = parse_decay_mode(doc.at("decay_mode").get<std::string>());
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.eval_metric = doc.at("eval_metric").get<std::string>();
    c.train_split = doc.at("train_split").get<std::string>();
    c.val_split = doc.at("val_split").get<std::string>();
    c.min_improvement = doc.at("min_improvement").get<double>();
  } catch (const json::exception& ex) {
    throw_validation(std::string("corrupt checkpoint: bad training config: ") + ex.what());
  }
  return c;
}

EarlyStopping::EarlyStopping(std::size_t patience, double min_improvement)
    : patience_(patience), min_improvement_(min_improvement) {
  if (patience_ < 1) throw_validation("patience must be at least 1");
}

bool EarlyStopping::update(double metric) {
  ++epochs_;
  if (epochs_ == 1 || metric > best_ + min_improvement_) {
    best_ = metric;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

double mean_split_loss(const Model& model, const Dataset& dataset, const TrainConfig& config,
                       std::uint64_t epoch) {
  const auto batches = batch_iter(dataset, config.train_split, config.batch_size, config.seed, epoch,
                                  BatchMode::training, true);
  double sum = 0.0;
  for (const auto& batch : batches) sum += total_loss(batch, model, config.loss).value;
  return sum / static_cast<double>(batches.size());
}

Checkpoint train(const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.modalities.size() < 2) throw_validation("training needs at least two modalities");
  if (dataset.split(config.train_split).empty()) throw_validation("training split is empty");
  if (dataset.split(config.val_split).empty()) throw_validation("validation split is empty");

  Model model = init_model(dataset.modalities, config.space, config.seed, config.loss.log_tau);
  AdamConfig adam;
  adam.weight_decay = config.weight_decay;
  adam.decay_mode = config.decay_mode;
  OptimState optim = init_optim_state(model, adam, config.lr_max);
  const double log_tau_max = std::log(config.loss.tau_max);

  Checkpoint best;
  best.modalities = dataset.modalities;
  best.config = config;

  EarlyStopping stopper(config.patience, config.min_improvement);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto batches = batch_iter(dataset, config.train_split, config.batch_size, config.seed,
                                    epoch, BatchMode::training, true);
    const double steps = static_cast<double>(batches.size());
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      const LossAndGrad lg = grad_total_loss(model, batches[s], config.loss);
      if (!std::isfinite(lg.loss.value)) {
        throw_numerical("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                        ", step " + std::to_string(s));
      }
      loss_sum += lg.loss.value;

      const double progress =
          (static_cast<double>(epoch) + static_cast<double>(s) / steps) / static_cast<double>(config.max_epochs);
      const double lr = cosine_lr(progress, config.lr_max);
      if (lr > 0.0) adam_step(optim, model, lg.grads, lr);
      model.log_tau = std::min(model.log_tau, log_tau_max);
      if (!model.all_finite()) {
        throw_numerical("training diverged: non-finite parameters at epoch " + std::to_string(epoch + 1));
      }
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_sum / steps;
    const ProjectedSplit val = project_dataset(model, dataset, config.val_split);
    record.val_metric = average_cross_modal_r1(val, dataset.positives, config.threads);
    record.improved = stopper.update(record.val_metric);
    best.history.push_back(record);
    if (record.improved) {
      best.model = model;
      best.optim = optim;
      best.epoch = record.epoch;
      best.best_metric = record.val_metric;
    }
    if (on_epoch) on_epoch(record);
    if (stopper.should_stop()) break;
  }
  return best;
}

}  // namespace mmcoord
