// Learning-rate schedules: constant, exponential decay with reset on new
// classes, and the adaptive high/low schedule driven by a one-sided t-test.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>

#include "numerics.hpp"

namespace clib {

class ConstantLr {
 public:
  explicit ConstantLr(double eta0) : eta0_(eta0) {
    if (!(eta0 > 0.0)) throw std::invalid_argument("ConstantLr: eta0 must be positive");
  }
  double lr() const { return eta0_; }

 private:
  double eta0_;
};

/// lr = eta0 * gamma^steps_since_reset; the exponent restarts whenever a label
/// not seen before is observed and advances once per model update.
class ExpResetLr {
 public:
  ExpResetLr(double eta0, double gamma) : eta0_(eta0), gamma_(gamma) {
    if (!(eta0 > 0.0)) throw std::invalid_argument("ExpResetLr: eta0 must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ExpResetLr: gamma must be in (0, 1]");
  }

  /// Returns true when the label triggered a reset.
  bool observe_label(int label) {
    if (!known_.insert(label).second) return false;
    steps_since_reset_ = 0;
    return true;
  }

  double lr() const { return eta0_ * std::pow(gamma_, static_cast<double>(steps_since_reset_)); }
  void on_update() { ++steps_since_reset_; }

  std::uint64_t steps_since_reset() const { return steps_since_reset_; }
  const std::set<int>& known_classes() const { return known_; }

 private:
  double eta0_;
  double gamma_;
  std::uint64_t steps_since_reset_ = 0;
  std::set<int> known_;
};

struct AdaptiveLrConfig {
  double base_lr = 3e-4;
  double gamma = 0.95;  // LR step, < 1
  std::size_t hist_len = 10;
  double alpha = 0.05;
};

/// Alternates a high LR base/gamma and a low LR base*gamma, records the loss
/// decrease achieved under each, and moves the base by gamma^2 toward the LR
/// that wins a one-sided t-test once both histories hold hist_len entries.
class AdaptiveLr {
 public:
  explicit AdaptiveLr(const AdaptiveLrConfig& cfg)
      : cfg_(cfg), eta_bar_(cfg.base_lr), eta_(cfg.base_lr / cfg.gamma), high_(cfg.hist_len), low_(cfg.hist_len) {
    if (!(cfg.base_lr > 0.0)) throw std::invalid_argument("AdaptiveLr: base_lr must be positive");
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw std::invalid_argument("AdaptiveLr: gamma must be in (0, 1)");
    if (cfg.hist_len < 2) throw std::invalid_argument("AdaptiveLr: hist_len must be >= 2");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 0.5)) throw std::invalid_argument("AdaptiveLr: alpha must be in (0, 0.5)");
  }

  /// LR to use for the next model update.
  double lr() const { return eta_; }
  double base_lr() const { return eta_bar_; }
  const LossHistory& high_history() const { return high_; }
  const LossHistory& low_history() const { return low_; }
  std::optional<double> l_before() const { return l_before_; }
  std::optional<double> last_p_value() const { return last_p_; }

  /// Feed the loss observed after an update made at lr(); returns the next LR.
  double step(double l_cur) {
    if (!std::isfinite(l_cur)) throw std::invalid_argument("AdaptiveLr::step: non-finite loss");
    if (l_before_) {
      const double l_diff = *l_before_ - l_cur;
      (eta_ > eta_bar_ ? high_ : low_).push(l_diff);
    }
    l_before_ = l_cur;
    if (high_.full() && low_.full()) {
      const double p = t_test_one_sided(low_, high_);
      last_p_ = p;
      if (p < cfg_.alpha) {
        eta_bar_ *= cfg_.gamma * cfg_.gamma;
        high_.clear();
        low_.clear();
      } else if (p > 1.0 - cfg_.alpha) {
        eta_bar_ /= cfg_.gamma * cfg_.gamma;
        high_.clear();
        low_.clear();
      }
    }
    eta_ = eta_ > eta_bar_ ? cfg_.gamma * eta_bar_ : eta_bar_ / cfg_.gamma;
    return eta_;
  }

 private:
  AdaptiveLrConfig cfg_;
  double eta_bar_;
  double eta_;
  LossHistory high_;
  LossHistory low_;
  std::optional<double> l_before_;
  std::optional<double> last_p_;
};

}  // namespace clib
