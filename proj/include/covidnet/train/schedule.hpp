#pragma once

#include <limits>

namespace covidnet::train {

enum class MonitorMode { Minimize, Maximize };

/// Multiplies the learning rate by `factor` once the monitored metric has
/// failed to improve for more than `patience` consecutive epochs.
struct PlateauSchedule {
  double lr = 2e-4;
  double factor = 0.7;
  int patience = 5;
  double threshold = 1e-6;  // minimum improvement that counts
  double min_lr = 0.0;
  MonitorMode mode = MonitorMode::Minimize;

  double best = std::numeric_limits<double>::quiet_NaN();  // NaN until the first update
  int epochs_since_improvement = 0;

  void validate() const;
  bool improves(double metric) const;
  /// Feeds one epoch's metric and returns the learning rate for the next
  /// epoch. Throws std::invalid_argument on a non-finite metric.
  double update(double metric);
};

}  // namespace covidnet::train
