#include "covidnet/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace covidnet::train {

void PlateauSchedule::validate() const {
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau factor must lie in (0, 1)");
  if (patience < 1) throw std::invalid_argument("plateau patience must be at least 1");
  if (!(threshold >= 0.0)) throw std::invalid_argument("plateau threshold must be nonnegative");
  if (!(lr > 0.0) || !(min_lr >= 0.0)) throw std::invalid_argument("learning rates must be positive");
}

bool PlateauSchedule::improves(double metric) const {
  if (std::isnan(best)) return true;
  return mode == MonitorMode::Minimize ? metric <= best - threshold : metric >= best + threshold;
}

double PlateauSchedule::update(double metric) {
  if (!std::isfinite(metric)) throw std::invalid_argument("plateau schedule fed a non-finite metric");
  if (improves(metric)) {
    best = metric;
    epochs_since_improvement = 0;
  } else if (++epochs_since_improvement > patience) {
    lr = std::max(lr * factor, min_lr);
    epochs_since_improvement = 0;
  }
  return lr;
}

}  // namespace covidnet::train
