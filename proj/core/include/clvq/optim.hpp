#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "clvq/nn.hpp"

namespace clvq {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

/// Adam with decoupled weight decay. Moment buffers follow the order of the
/// parameter list given at construction.
class Adam {
 public:
  Adam() = default;
  Adam(nn::ParamRefs params, AdamConfig config);

  void step();
  void zero_grad();

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  const nn::ParamRefs& params() const { return params_; }

  std::int64_t steps() const { return steps_; }
  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  nn::ParamRefs params_;
  AdamConfig config_;
  std::vector<Mat> m_, v_;
  std::int64_t steps_ = 0;
};

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement of the monitored loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience) : factor_(factor), patience_(patience) {}

  /// Returns the learning rate to use for the next epoch.
  double observe(double loss, double lr);
  int reductions() const { return reductions_; }

 private:
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records one epoch. Returns true when training should stop.
  bool observe(double loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  bool improved_ = false;
};

}  // namespace clvq
