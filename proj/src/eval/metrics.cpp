#include "covidnet/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace covidnet::eval {

namespace {

std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

std::string ratio_value(const Ratio& r) {
  if (!r.defined()) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", r.value());
  return buf;
}

}  // namespace

std::uint64_t ConfusionMatrix::row_sum(std::size_t i) const {
  std::uint64_t s = 0;
  for (std::uint64_t v : counts.at(i)) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t j) const {
  std::uint64_t s = 0;
  for (const auto& row : counts) s += row.at(j);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < kClasses; ++i) s += row_sum(i);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < kClasses; ++i) s += counts[i][i];
  return s;
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) + " predictions but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("confusion: no samples");
  ConfusionMatrix cm;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int t = labels[k], p = predictions[k];
    if (t < 0 || t >= static_cast<int>(kClasses) || p < 0 || p >= static_cast<int>(kClasses)) {
      throw std::invalid_argument("confusion: class index out of range at sample " + std::to_string(k));
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

double Ratio::value() const {
  if (!defined()) throw std::logic_error("value of an undefined ratio");
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<std::int64_t> Ratio::tenths_percent() const {
  if (!defined()) return std::nullopt;
  // round(1000 num / den) for nonnegative values, halves rounded up
  return static_cast<std::int64_t>((2000 * num + den) / (2 * den));
}

std::string Ratio::percent_text() const {
  const auto t = tenths_percent();
  if (!t) return "undefined";
  return std::to_string(*t / 10) + "." + std::to_string(*t % 10);
}

bool Ratio::at_least_percent(std::uint64_t threshold_percent) const {
  return defined() && 100 * num >= threshold_percent * den;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.matrix = cm;
  r.accuracy = Ratio{cm.trace(), cm.total()};
  for (std::size_t i = 0; i < kClasses; ++i) {
    r.sensitivity[i] = Ratio{cm.counts[i][i], cm.row_sum(i)};
    r.ppv[i] = Ratio{cm.counts[i][i], cm.col_sum(i)};
  }
  return r;
}

std::vector<GateResult> check_design_requirements(const MetricsReport& report) {
  auto gate = [](const char* name, const Ratio& r) {
    GateResult g;
    g.name = name;
    g.threshold_percent = kGateThresholdPercent;
    if (!r.defined()) {
      g.passed = false;
      g.reason = "undefined";
    } else {
      g.passed = r.at_least_percent(kGateThresholdPercent);
      g.reason = r.percent_text() + "%";
    }
    return g;
  };
  return {gate("covid19_sensitivity", report.sensitivity[2]), gate("covid19_ppv", report.ppv[2])};
}

bool all_passed(const std::vector<GateResult>& gates) {
  for (const GateResult& g : gates) {
    if (!g.passed) return false;
  }
  return true;
}

std::string report_text(const MetricsReport& report, const std::vector<GateResult>& gates) {
  std::ostringstream out;
  out << "# covidnet-metrics 1\n";
  out << "samples = " << report.matrix.total() << '\n';
  for (std::size_t i = 0; i < kClasses; ++i) {
    out << "confusion." << kClassKeys[i] << " = ";
    for (std::size_t j = 0; j < kClasses; ++j) out << (j ? "," : "") << report.matrix.counts[i][j];
    out << '\n';
  }
  out << "accuracy = " << ratio_value(report.accuracy) << '\n';
  out << "accuracy_percent = " << report.accuracy.percent_text() << '\n';
  for (std::size_t i = 0; i < kClasses; ++i) {
    out << "sensitivity." << kClassKeys[i] << " = " << ratio_value(report.sensitivity[i]) << '\n';
    out << "sensitivity_percent." << kClassKeys[i] << " = " << report.sensitivity[i].percent_text() << '\n';
  }
  for (std::size_t i = 0; i < kClasses; ++i) {
    out << "ppv." << kClassKeys[i] << " = " << ratio_value(report.ppv[i]) << '\n';
    out << "ppv_percent." << kClassKeys[i] << " = " << report.ppv[i].percent_text() << '\n';
  }
  for (const GateResult& g : gates) {
    out << "gate." << g.name << " = " << (g.passed ? "pass" : "fail") << " (" << g.reason
        << ", threshold " << g.threshold_percent << "%)\n";
  }
  return out.str();
}

std::string report_tables(const MetricsReport& report, const std::string& row_title) {
  const std::size_t first = std::max<std::size_t>(12, row_title.size());
  const std::size_t col = 11;
  const std::size_t width = first + 3 + kClasses * (col + 3) + 1;
  std::ostringstream out;
  auto rule = [&] { out << std::string(width, '-') << '\n'; };
  auto table = [&](const std::string& title, const std::array<Ratio, kClasses>& values) {
    rule();
    const std::size_t inner = width - 4;
    const std::size_t left = (inner - title.size()) / 2;
    out << "| " << std::string(left, ' ') << title << std::string(inner - left - title.size(), ' ') << " |\n";
    rule();
    out << "| " << pad("Architecture", first, false) << " |";
    for (const char* t : kClassTitles) out << ' ' << pad(t, col, true) << " |";
    out << '\n';
    rule();
    out << "| " << pad(row_title, first, false) << " |";
    for (const Ratio& r : values) out << ' ' << pad(r.percent_text(), col, true) << " |";
    out << '\n';
    rule();
  };
  table("Sensitivity (%)", report.sensitivity);
  out << '\n';
  table("Positive Predictive Value (%)", report.ppv);
  out << "\nAccuracy (%): " << report.accuracy.percent_text() << '\n';
  return out.str();
}

std::string confusion_table(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << pad("true \\ pred", 12, false);
  for (const char* t : kClassTitles) out << ' ' << pad(t, 11, true);
  out << '\n';
  for (std::size_t i = 0; i < kClasses; ++i) {
    out << pad(kClassTitles[i], 12, false);
    for (std::size_t j = 0; j < kClasses; ++j) out << ' ' << pad(std::to_string(cm.counts[i][j]), 11, true);
    out << '\n';
  }
  return out.str();
}

std::string gate_lines(const std::vector<GateResult>& gates) {
  std::ostringstream out;
  for (const GateResult& g : gates) {
    out << (g.passed ? "PASS " : "FAIL ") << g.name << " >= " << g.threshold_percent << "%: " << g.reason
        << '\n';
  }
  return out.str();
}

}  // namespace covidnet::eval
