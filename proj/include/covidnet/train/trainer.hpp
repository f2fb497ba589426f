#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "covidnet/arch/covidnet.hpp"
#include "covidnet/arch/model.hpp"
#include "covidnet/data/augment.hpp"
#include "covidnet/data/dataset.hpp"
#include "covidnet/train/checkpoint.hpp"
#include "covidnet/train/optim.hpp"
#include "covidnet/train/schedule.hpp"
#include "covidnet/util/kv.hpp"

namespace covidnet::train {

enum class Monitor { ValLoss, ValAccuracy };

/// Text keys: lr, epochs, batch_size, seed, checkpoint_dir,
/// validation_fraction, plateau_factor, plateau_patience,
/// plateau_threshold, min_lr, monitor (val_loss | val_accuracy),
/// eval_batch, augment (true | false), aug_translation, aug_rotation_deg,
/// aug_hflip_prob, aug_zoom_lo, aug_zoom_hi, aug_intensity_shift.
struct TrainConfig {
  double lr = 2e-4;
  std::size_t epochs = 22;
  std::size_t batch_size = 64;  // rounded down to a multiple of 3
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoint files
  double validation_fraction = 0.1;
  double plateau_factor = 0.7;
  int plateau_patience = 5;
  double plateau_threshold = 1e-6;
  double min_lr = 0.0;
  Monitor monitor = Monitor::ValLoss;
  std::size_t eval_batch = 128;
  bool augment = true;
  data::AugmentationConfig augmentation;

  void validate() const;
  /// Applies entries whose key is_train_key(); others are ignored.
  static TrainConfig from_entries(const std::vector<util::KeyValue>& entries);
  static TrainConfig parse(const std::string& text);
  std::string to_text() const;
  PlateauSchedule initial_schedule() const;
};

bool is_train_key(const std::string& key);

/// One line of the training log.
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate used during the epoch
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  /// `epoch lr train_loss val_loss val_acc`, shortest round-trip decimals.
  std::string log_line() const;
};

inline constexpr const char* kLogHeader = "# epoch lr train_loss val_loss val_acc";

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  arch::ParameterStore params;
  AdamState adam;
  PlateauSchedule schedule;
  std::size_t epochs_done = 0;
  double best_metric = 0.0;
  bool has_best = false;
};

/// Metadata key holding the mean pixel intensity of the images trained on.
inline constexpr const char* kMeanIntensityKey = "data.mean_intensity";

Checkpoint to_checkpoint(const TrainState& state, const arch::ArchConfig& arch,
                         const TrainConfig& config);
/// Restores the state and, when requested, the configurations stored with it.
TrainState from_checkpoint(const Checkpoint& checkpoint, arch::ArchConfig* arch = nullptr,
                           TrainConfig* config = nullptr);
/// Parameters only; accepts any checkpoint written by to_checkpoint.
arch::ParameterStore params_from_checkpoint(const Checkpoint& checkpoint);
arch::ArchConfig arch_from_checkpoint(const Checkpoint& checkpoint);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
  std::vector<std::array<double, 3>> probabilities;
};

/// Forward passes in chunks of `batch` images without recording gradients.
EvalResult evaluate_set(const arch::ArchGraph& graph, const arch::ParameterStore& params,
                        const data::ImageSet& set, std::size_t batch = 128);

struct TrainResult {
  std::vector<EpochRecord> history;
  TrainState state;
};

/// Hooks called after every epoch; used for logging and tests.
using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

class Trainer {
 public:
  Trainer(arch::ArchConfig arch, TrainConfig config);

  const arch::ArchGraph& graph() const { return graph_; }
  const TrainConfig& config() const { return config_; }

  /// Fresh state: parameters initialized from config.seed.
  TrainState initial_state() const;
  TrainState initial_state(arch::ParameterStore warm_start) const;

  /// Runs epochs state.epochs_done + 1 .. min(config.epochs, stop_after).
  /// Batches, augmentation draws and the validation carve depend only on
  /// (seed, epoch, data), so a resumed run repeats an uninterrupted one.
  /// With config.checkpoint_dir set, writes last.ckpt every epoch and
  /// best.ckpt whenever the monitored metric improves.
  TrainResult run(const data::ImageSet& train_set, TrainState state,
                  std::optional<std::size_t> stop_after = std::nullopt,
                  const EpochCallback& on_epoch = {}) const;

  /// Train and validation sides of the patient-level validation carve.
  data::ImageSetSplit carve(const data::ImageSet& train_set) const;

 private:
  double train_batch(const data::ImageSet& set, const std::vector<std::size_t>& batch,
                     std::size_t epoch, std::size_t batch_index, TrainState& state, double lr,
                     std::size_t& correct) const;

  arch::ArchConfig arch_;
  TrainConfig config_;
  arch::ArchGraph graph_;
};

}  // namespace covidnet::train
