#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "covidnet/arch/covidnet.hpp"
#include "covidnet/data/manifest.hpp"
#include "covidnet/explain/occlusion.hpp"
#include "covidnet/train/trainer.hpp"

namespace covidnet::cli {

/// A source manifest and the rule deciding which of its records are kept.
struct SourceSpec {
  std::string manifest;
  data::SelectionRule rule;
};

struct DataConfig {
  std::vector<SourceSpec> sources;
  double test_fraction = 0.1;
  std::string aliases;         // optional alias CSV
  std::string train_manifest;  // used by train
  std::string test_manifest;   // used by evaluate
};

/// One `key = value` file covering every command. Architecture and training
/// keys are those of ArchConfig and TrainConfig; the rest are
///   source = <manifest> <rule>   (repeatable, rule as in SelectionRule)
///   test_fraction, aliases, train_manifest, test_manifest,
///   patch_size, patch_stride, selection_fraction, occlusion_value, out_dir.
/// Relative paths are resolved against the directory of the config file.
struct RunConfig {
  arch::ArchConfig arch;
  train::TrainConfig train;
  DataConfig data;
  explain::AttributionConfig attribution;
  std::optional<double> occlusion_value;  // default: training mean intensity
  std::uint64_t seed = 0;                 // mirrored into train.seed
  std::string out_dir = "covidnet-out";

  /// Unknown keys are rejected with std::invalid_argument.
  static RunConfig parse(const std::string& text, const std::string& base_dir = ".");
  static RunConfig load(const std::string& path);
  void set_seed(std::uint64_t value);
  /// Canonical text form; parse(to_text()) gives back the same config.
  std::string to_text() const;
};

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitGateFailed = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitNumericalHalt = 3;

/// Runs one subcommand: build-dataset, train, evaluate, explain or analyze.
/// Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace covidnet::cli
