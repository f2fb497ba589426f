#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace covidnet::eval {

inline constexpr std::size_t kClasses = 3;

/// Table column titles for normal, pneumonia and covid19.
inline constexpr std::array<const char*, kClasses> kClassTitles{"Normal", "Non-COVID19", "COVID-19"};
/// Lower-case keys used in report files.
inline constexpr std::array<const char*, kClasses> kClassKeys{"normal", "pneumonia", "covid19"};

/// counts[i][j]: samples of true class i predicted as class j.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kClasses>, kClasses> counts{};

  std::uint64_t row_sum(std::size_t i) const;
  std::uint64_t col_sum(std::size_t j) const;
  std::uint64_t total() const;
  std::uint64_t trace() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws std::invalid_argument on length mismatch, empty input or a class
/// index outside 0..2.
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

/// An exact ratio; undefined when the denominator is zero.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 0;

  bool defined() const { return den != 0; }
  /// Throws std::logic_error when undefined.
  double value() const;
  /// Percentage in tenths, rounded half away from zero with integer
  /// arithmetic (90.476% -> 905).
  std::optional<std::int64_t> tenths_percent() const;
  /// "90.5", or "undefined".
  std::string percent_text() const;
  /// num / den >= threshold_percent / 100, evaluated exactly.
  bool at_least_percent(std::uint64_t threshold_percent) const;
};

struct MetricsReport {
  ConfusionMatrix matrix;
  Ratio accuracy;
  std::array<Ratio, kClasses> sensitivity;
  std::array<Ratio, kClasses> ppv;
};

/// sensitivity_i = cm[i][i] / row_i; ppv_i = cm[i][i] / col_i;
/// accuracy = trace / total. Empty rows or columns give undefined ratios.
MetricsReport metrics(const ConfusionMatrix& cm);

struct GateResult {
  std::string name;
  std::uint64_t threshold_percent = 80;
  bool passed = false;
  std::string reason;  // "undefined" when the metric has no value
};

inline constexpr std::uint64_t kGateThresholdPercent = 80;

/// COVID-19 sensitivity and PPV, each required to be at least 80%.
std::vector<GateResult> check_design_requirements(const MetricsReport& report);
bool all_passed(const std::vector<GateResult>& gates);

/// `key = value` lines; see README for the layout.
std::string report_text(const MetricsReport& report, const std::vector<GateResult>& gates);
/// Sensitivity and PPV tables with one row labelled `row_title`, followed
/// by the accuracy line.
std::string report_tables(const MetricsReport& report, const std::string& row_title);
std::string confusion_table(const ConfusionMatrix& cm);
std::string gate_lines(const std::vector<GateResult>& gates);

}  // namespace covidnet::eval
