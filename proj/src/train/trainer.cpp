#include "covidnet/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "covidnet/data/sampler.hpp"
#include "covidnet/tensor/ops.hpp"
#include "covidnet/tensor/tape.hpp"

namespace covidnet::train {

namespace {

const char* const kTrainKeys[] = {
    "lr",           "epochs",           "batch_size",       "seed",
    "checkpoint_dir", "validation_fraction", "plateau_factor", "plateau_patience",
    "plateau_threshold", "min_lr",       "monitor",          "eval_batch",
    "augment",      "aug_translation",  "aug_rotation_deg", "aug_hflip_prob",
    "aug_zoom_lo",  "aug_zoom_hi",      "aug_intensity_shift"};

constexpr const char* kParamPrefix = "param/";
constexpr const char* kMomentPrefix = "adam.m/";
constexpr const char* kVariancePrefix = "adam.v/";

std::string fmt(double v) { return util::format_double(v); }

double meta_double(const Checkpoint& c, const std::string& key) {
  return util::parse_double(util::KeyValue{key, c.meta(key), 0});
}

std::uint64_t meta_u64(const Checkpoint& c, const std::string& key) {
  return util::parse_u64(util::KeyValue{key, c.meta(key), 0});
}

}  // namespace

bool is_train_key(const std::string& key) {
  return std::find(std::begin(kTrainKeys), std::end(kTrainKeys), key) != std::end(kTrainKeys);
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a nonnegative number");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  data::balanced_batch_size(batch_size);
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must lie in [0, 1)");
  }
  if (eval_batch == 0) throw std::invalid_argument("eval_batch must be positive");
  augmentation.validate();
  PlateauSchedule s = initial_schedule();
  if (lr == 0.0) s.lr = 1.0;  // lr = 0 is allowed for frozen runs
  s.validate();
}

TrainConfig TrainConfig::from_entries(const std::vector<util::KeyValue>& entries) {
  TrainConfig c;
  for (const util::KeyValue& kv : entries) {
    const std::string& k = kv.key;
    if (k == "lr") c.lr = util::parse_double(kv);
    else if (k == "epochs") c.epochs = util::parse_size(kv);
    else if (k == "batch_size") c.batch_size = util::parse_size(kv);
    else if (k == "seed") c.seed = util::parse_u64(kv);
    else if (k == "checkpoint_dir") c.checkpoint_dir = kv.value;
    else if (k == "validation_fraction") c.validation_fraction = util::parse_double(kv);
    else if (k == "plateau_factor") c.plateau_factor = util::parse_double(kv);
    else if (k == "plateau_patience") c.plateau_patience = static_cast<int>(util::parse_size(kv));
    else if (k == "plateau_threshold") c.plateau_threshold = util::parse_double(kv);
    else if (k == "min_lr") c.min_lr = util::parse_double(kv);
    else if (k == "monitor") {
      if (kv.value == "val_loss") c.monitor = Monitor::ValLoss;
      else if (kv.value == "val_accuracy") c.monitor = Monitor::ValAccuracy;
      else throw std::invalid_argument("line " + std::to_string(kv.line) + ": monitor must be val_loss or val_accuracy");
    } else if (k == "eval_batch") c.eval_batch = util::parse_size(kv);
    else if (k == "augment") c.augment = util::parse_bool(kv);
    else if (k == "aug_translation") c.augmentation.max_translation_frac = util::parse_double(kv);
    else if (k == "aug_rotation_deg") c.augmentation.max_rotation_deg = util::parse_double(kv);
    else if (k == "aug_hflip_prob") c.augmentation.hflip_prob = util::parse_double(kv);
    else if (k == "aug_zoom_lo") c.augmentation.zoom_lo = util::parse_double(kv);
    else if (k == "aug_zoom_hi") c.augmentation.zoom_hi = util::parse_double(kv);
    else if (k == "aug_intensity_shift") c.augmentation.max_intensity_shift_frac = util::parse_double(kv);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  const auto entries = util::parse_key_values(text);
  for (const util::KeyValue& kv : entries) {
    if (!is_train_key(kv.key)) {
      throw std::invalid_argument("line " + std::to_string(kv.line) + ": unknown training key '" + kv.key + "'");
    }
  }
  return from_entries(entries);
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "lr = " << fmt(lr) << '\n'
      << "epochs = " << epochs << '\n'
      << "batch_size = " << batch_size << '\n'
      << "seed = " << seed << '\n';
  if (!checkpoint_dir.empty()) out << "checkpoint_dir = " << checkpoint_dir << '\n';
  out << "validation_fraction = " << fmt(validation_fraction) << '\n'
      << "plateau_factor = " << fmt(plateau_factor) << '\n'
      << "plateau_patience = " << plateau_patience << '\n'
      << "plateau_threshold = " << fmt(plateau_threshold) << '\n'
      << "min_lr = " << fmt(min_lr) << '\n'
      << "monitor = " << (monitor == Monitor::ValLoss ? "val_loss" : "val_accuracy") << '\n'
      << "eval_batch = " << eval_batch << '\n'
      << "augment = " << (augment ? "true" : "false") << '\n'
      << "aug_translation = " << fmt(augmentation.max_translation_frac) << '\n'
      << "aug_rotation_deg = " << fmt(augmentation.max_rotation_deg) << '\n'
      << "aug_hflip_prob = " << fmt(augmentation.hflip_prob) << '\n'
      << "aug_zoom_lo = " << fmt(augmentation.zoom_lo) << '\n'
      << "aug_zoom_hi = " << fmt(augmentation.zoom_hi) << '\n'
      << "aug_intensity_shift = " << fmt(augmentation.max_intensity_shift_frac) << '\n';
  return out.str();
}

PlateauSchedule TrainConfig::initial_schedule() const {
  PlateauSchedule s;
  s.lr = lr;
  s.factor = plateau_factor;
  s.patience = plateau_patience;
  s.threshold = plateau_threshold;
  s.min_lr = min_lr;
  s.mode = monitor == Monitor::ValLoss ? MonitorMode::Minimize : MonitorMode::Maximize;
  return s;
}

std::string EpochRecord::log_line() const {
  return std::to_string(epoch) + ' ' + fmt(lr) + ' ' + fmt(train_loss) + ' ' + fmt(val_loss) + ' ' +
         fmt(val_accuracy);
}

Checkpoint to_checkpoint(const TrainState& state, const arch::ArchConfig& arch,
                         const TrainConfig& config) {
  Checkpoint c;
  c.metadata["format"] = "covidnet-train";
  c.metadata["arch"] = arch.to_text();
  c.metadata["train"] = config.to_text();
  c.metadata["epochs_done"] = std::to_string(state.epochs_done);
  c.metadata["has_best"] = state.has_best ? "1" : "0";
  c.metadata["best_metric"] = fmt(state.best_metric);
  c.metadata["adam.step"] = std::to_string(state.adam.step);
  c.metadata["adam.beta1"] = fmt(state.adam.config.beta1);
  c.metadata["adam.beta2"] = fmt(state.adam.config.beta2);
  c.metadata["adam.epsilon"] = fmt(state.adam.config.epsilon);
  const PlateauSchedule& s = state.schedule;
  c.metadata["schedule.lr"] = fmt(s.lr);
  c.metadata["schedule.factor"] = fmt(s.factor);
  c.metadata["schedule.patience"] = std::to_string(s.patience);
  c.metadata["schedule.threshold"] = fmt(s.threshold);
  c.metadata["schedule.min_lr"] = fmt(s.min_lr);
  c.metadata["schedule.mode"] = s.mode == MonitorMode::Minimize ? "min" : "max";
  c.metadata["schedule.has_best"] = std::isnan(s.best) ? "0" : "1";
  c.metadata["schedule.best"] = std::isnan(s.best) ? "0" : fmt(s.best);
  c.metadata["schedule.since_improvement"] = std::to_string(s.epochs_since_improvement);
  for (const auto& [name, t] : state.params.entries()) c.tensors[kParamPrefix + name] = t.clone();
  for (const auto& [name, t] : state.adam.m) c.tensors[kMomentPrefix + name] = t.clone();
  for (const auto& [name, t] : state.adam.v) c.tensors[kVariancePrefix + name] = t.clone();
  return c;
}

arch::ParameterStore params_from_checkpoint(const Checkpoint& checkpoint) {
  arch::ParameterStore params;
  const std::string prefix = kParamPrefix;
  for (const auto& [name, t] : checkpoint.tensors) {
    if (name.rfind(prefix, 0) == 0) params.set(name.substr(prefix.size()), t.clone());
  }
  if (params.size() == 0) throw std::runtime_error("checkpoint holds no parameters");
  return params;
}

arch::ArchConfig arch_from_checkpoint(const Checkpoint& checkpoint) {
  return arch::ArchConfig::parse(checkpoint.meta("arch"));
}

TrainState from_checkpoint(const Checkpoint& c, arch::ArchConfig* arch, TrainConfig* config) {
  if (c.meta("format") != "covidnet-train") throw std::runtime_error("not a training checkpoint");
  TrainState s;
  s.params = params_from_checkpoint(c);
  s.adam.config.beta1 = meta_double(c, "adam.beta1");
  s.adam.config.beta2 = meta_double(c, "adam.beta2");
  s.adam.config.epsilon = meta_double(c, "adam.epsilon");
  s.adam.step = meta_u64(c, "adam.step");
  for (const auto& [name, t] : s.params.entries()) {
    s.adam.m[name] = c.tensor(kMomentPrefix + name).clone();
    s.adam.v[name] = c.tensor(kVariancePrefix + name).clone();
    if (s.adam.m[name].shape() != t.shape() || s.adam.v[name].shape() != t.shape()) {
      throw std::runtime_error("optimizer state for '" + name + "' does not match the parameter");
    }
  }
  s.epochs_done = meta_u64(c, "epochs_done");
  s.has_best = c.meta("has_best") == "1";
  s.best_metric = meta_double(c, "best_metric");
  s.schedule.lr = meta_double(c, "schedule.lr");
  s.schedule.factor = meta_double(c, "schedule.factor");
  s.schedule.patience = static_cast<int>(meta_u64(c, "schedule.patience"));
  s.schedule.threshold = meta_double(c, "schedule.threshold");
  s.schedule.min_lr = meta_double(c, "schedule.min_lr");
  s.schedule.mode = c.meta("schedule.mode") == "max" ? MonitorMode::Maximize : MonitorMode::Minimize;
  s.schedule.best = c.meta("schedule.has_best") == "1" ? meta_double(c, "schedule.best")
                                                       : std::numeric_limits<double>::quiet_NaN();
  s.schedule.epochs_since_improvement = static_cast<int>(meta_u64(c, "schedule.since_improvement"));
  if (arch) *arch = arch::ArchConfig::parse(c.meta("arch"));
  if (config) *config = TrainConfig::parse(c.meta("train"));
  return s;
}

EvalResult evaluate_set(const arch::ArchGraph& graph, const arch::ParameterStore& params,
                        const data::ImageSet& set, std::size_t batch) {
  if (set.size() == 0) throw std::invalid_argument("evaluate_set: empty image set");
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + batch); ++i) idx.push_back(i);
    const Tensor probs = arch::forward(graph, params, data::stack_batch(set.images, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::array<double, 3> p{probs.at(3 * k), probs.at(3 * k + 1), probs.at(3 * k + 2)};
      const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      const int label = set.labels[idx[k]];
      loss_sum -= std::log(std::clamp(p[static_cast<std::size_t>(label)], ops::kProbabilityFloor, 1.0));
      correct += pred == label;
      r.predictions.push_back(pred);
      r.probabilities.push_back(p);
    }
  }
  r.loss = loss_sum / static_cast<double>(set.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  if (!std::isfinite(r.loss)) throw NumericalHalt("non-finite evaluation loss");
  return r;
}

Trainer::Trainer(arch::ArchConfig arch, TrainConfig config)
    : arch_(std::move(arch)), config_(std::move(config)), graph_(arch::build_covidnet(arch_)) {
  config_.validate();
}

TrainState Trainer::initial_state() const {
  return initial_state(arch::init_parameters(graph_, config_.seed));
}

TrainState Trainer::initial_state(arch::ParameterStore params) const {
  const arch::ParameterStore expected = arch::init_parameters(graph_, 0);
  for (const auto& [name, t] : expected.entries()) {
    if (!params.contains(name) || params.at(name).shape() != t.shape()) {
      throw std::invalid_argument("parameters do not fit the architecture at '" + name + "'");
    }
  }
  if (params.size() != expected.size()) {
    throw std::invalid_argument("parameters hold entries the architecture does not use");
  }
  TrainState s;
  s.params = std::move(params);
  s.adam = AdamState::zeros_like(s.params);
  s.schedule = config_.initial_schedule();
  return s;
}

data::ImageSetSplit Trainer::carve(const data::ImageSet& train_set) const {
  if (config_.validation_fraction == 0.0) return data::ImageSetSplit{train_set, {}};
  return data::split_by_patient(train_set, config_.validation_fraction, config_.seed);
}

double Trainer::train_batch(const data::ImageSet& set, const std::vector<std::size_t>& batch,
                            std::size_t epoch, std::size_t batch_index, TrainState& state, double lr,
                            std::size_t& correct) const {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Tensor& img = set.images[batch[k]];
    if (config_.augment) {
      std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(batch_index),
                        static_cast<std::uint32_t>(k)};
      std::mt19937_64 rng(seq);
      images.push_back(data::augment(img, config_.augmentation, rng));
    } else {
      images.push_back(img);
    }
    labels.push_back(set.labels[batch[k]]);
    order.push_back(k);
  }
  const Tensor x = data::stack_batch(images, order);

  state.params.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  Tensor probs;
  {
    Tape::Scope scope(tape);
    probs = arch::forward(graph_, state.params, x);
    loss = ops::cross_entropy(probs, labels);
  }
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw NumericalHalt("non-finite training loss at epoch " + std::to_string(epoch) + " batch " +
                        std::to_string(batch_index + 1));
  }
  const Gradients g = backward(tape, loss);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, p] : state.params.entries()) grads[name] = g[p];
  tape.clear();
  state.params.set_requires_grad(false);
  adam_step(state.params, grads, state.adam, lr);

  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c) {
      if (probs.at(3 * k + c) > probs.at(3 * k + best)) best = c;
    }
    correct += static_cast<int>(best) == labels[k];
  }
  return loss_value;
}

TrainResult Trainer::run(const data::ImageSet& train_set, TrainState state,
                         std::optional<std::size_t> stop_after, const EpochCallback& on_epoch) const {
  const data::ImageSetSplit split = carve(train_set);
  const bool has_val = split.held_out.size() > 0;
  const std::size_t last_epoch = std::min(config_.epochs, stop_after.value_or(config_.epochs));
  if (!config_.checkpoint_dir.empty()) std::filesystem::create_directories(config_.checkpoint_dir);
  const std::string mean_intensity = fmt(split.train.mean_intensity());

  TrainResult result;
  for (std::size_t epoch = state.epochs_done + 1; epoch <= last_epoch; ++epoch) {
    const auto batches = data::rebalanced_batches(split.train.labels, config_.batch_size, config_.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = state.schedule.lr;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      loss_sum += train_batch(split.train, batches[b], epoch, b, state, rec.lr, correct);
      seen += batches[b].size();
    }
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (has_val) {
      const EvalResult val = evaluate_set(graph_, state.params, split.held_out, config_.eval_batch);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
    } else {
      rec.val_loss = rec.train_loss;
      rec.val_accuracy = rec.train_accuracy;
    }

    const double metric = config_.monitor == Monitor::ValLoss ? rec.val_loss : rec.val_accuracy;
    const bool better = !state.has_best || (config_.monitor == Monitor::ValLoss ? metric < state.best_metric
                                                                                : metric > state.best_metric);
    if (better) {
      state.has_best = true;
      state.best_metric = metric;
    }
    state.schedule.update(metric);
    state.epochs_done = epoch;
    result.history.push_back(rec);

    if (!config_.checkpoint_dir.empty()) {
      Checkpoint ckpt = to_checkpoint(state, arch_, config_);
      ckpt.metadata[kMeanIntensityKey] = mean_intensity;
      const std::filesystem::path dir(config_.checkpoint_dir);
      save_checkpoint(ckpt, (dir / "last.ckpt").string());
      if (better) save_checkpoint(ckpt, (dir / "best.ckpt").string());
    }
    if (on_epoch) on_epoch(rec, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace covidnet::train
