#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flilab/model.hpp"
#include "flilab/simulate.hpp"

namespace flilab {

struct TrainConfig {
  double lr0 = 1e-3;
  double plateau_factor = 0.5;
  std::size_t patience = 5;
  double min_lr = 1e-5;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  double validation_fraction = 0.1;
  std::array<double, 3> loss_weights{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  /// Write a resumable checkpoint every this many epochs (0 disables).
  std::size_t checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const;
};

struct LossTerms {
  Tensor total;                  // scalar, on the active tape
  std::array<double, 3> heads{};  // unweighted per-head MSE
};

/// Σ_h w_h · mean over mask > 0 of (pred_h - truth_h)²; every tensor is [B].
LossTerms mse_multihead(const HeadOutputs& pred, const std::array<Tensor, 3>& truth, const Tensor& mask,
                        const std::array<double, 3>& weights = {1.0, 1.0, 1.0});

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with bias correction.
///
/// Parameters and moments are rounded to float32 after every update so that
/// a checkpoint written in the float32 containers resumes bit-exactly.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the parameters' current gradients. Returns
  /// false, leaving everything untouched, when any gradient is not finite.
  bool step(double lr);

  std::size_t steps() const noexcept { return t_; }
  std::size_t skipped() const noexcept { return skipped_; }
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  void set_steps(std::size_t t) noexcept { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
};

/// Reduce-on-plateau: after `patience` epochs without a strictly lower
/// validation loss the rate is multiplied by `factor`, floored at min_lr.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor, std::size_t patience, double min_lr);

  /// Returns true when `loss` is a new best.
  bool observe(double loss);
  double lr() const noexcept;

  std::size_t reductions = 0;
  std::size_t wait = 0;
  double best = 0;
  bool has_best = false;

 private:
  double lr0_, factor_, min_lr_;
  std::size_t patience_;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double train_loss = 0;  // NaN for the pre-training evaluation row
  std::array<double, 3> train_heads{};
  double val_loss = 0;
  std::array<double, 3> val_heads{};
  double lr = 0;
  double seconds = 0;
  std::string checkpoint;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  /// Header: epoch,train_loss,train_tau1,train_tau2,train_a_r,val_loss,
  /// val_tau1,val_tau2,val_a_r,lr,seconds,checkpoint
  void write_csv(std::ostream& os, bool include_time = true) const;
};

/// Pixel indices of the train/validation split (disjoint, seed-stable).
struct DataSplit {
  std::vector<std::size_t> train, validation;
};
DataSplit split_pixels(const FliDataset& ds, double validation_fraction, std::uint64_t seed);

struct TrainResult {
  MFliNetWeights best;  // lowest validation loss
  MFliNetWeights last;
  TrainLog log;
};

/// Trains from scratch, or continues from `resume_from` (a checkpoint path
/// written by an earlier run with the same configs).
TrainResult train(const FliDataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::optional<std::string>& resume_from = std::nullopt);

/// Mean loss of `w` over `pixels` without recording gradients.
LossTerms evaluate_loss(const FliDataset& ds, const MFliNetWeights& w, const std::vector<std::size_t>& pixels,
                        const std::array<double, 3>& weights, std::size_t batch);

}  // namespace flilab
