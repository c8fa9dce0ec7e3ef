#include "clvq/optim.hpp"

#include <cmath>

namespace clvq {

Adam::Adam(nn::ParamRefs params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (config_.weight_decay > 0.0) p.value *= 1.0 - config_.lr * config_.weight_decay;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    const auto denom = ((v_[i].array() / bc2).sqrt() + config_.eps);
    p.value.array() -= config_.lr * (m_[i].array() / bc1) / denom;
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

double PlateauScheduler::observe(double loss, double lr) {
  if (loss < best_) {
    best_ = loss;
    bad_epochs_ = 0;
    return lr;
  }
  if (++bad_epochs_ > patience_) {
    bad_epochs_ = 0;
    ++reductions_;
    return lr * factor_;
  }
  return lr;
}

bool EarlyStopping::observe(double loss) {
  improved_ = loss < best_;
  if (improved_) {
    best_ = loss;
    bad_epochs_ = 0;
    return false;
  }
  return ++bad_epochs_ >= patience_;
}

}  // namespace clvq
