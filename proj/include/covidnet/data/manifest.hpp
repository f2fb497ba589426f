#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace covidnet::data {

/// Class order is fixed: normal, pneumonia, covid19.
enum class Label : int { Normal = 0, Pneumonia = 1, Covid19 = 2 };

inline constexpr std::array<Label, 3> kLabels{Label::Normal, Label::Pneumonia, Label::Covid19};

const char* label_name(Label label);
/// Accepts `normal`, `pneumonia`, `covid19`.
Label parse_label(const std::string& text);
inline int label_index(Label label) { return static_cast<int>(label); }

struct SampleRecord {
  std::string patient_id;
  std::string image_path;
  Label label = Label::Normal;
  std::string source;

  bool operator==(const SampleRecord&) const = default;
};

/// Maps (source, patient_id) to a canonical patient key. Records whose pair
/// is absent are keyed by "source/patient_id".
class PatientAliases {
 public:
  void add(const std::string& source, const std::string& patient_id, const std::string& canonical);
  std::string key(const SampleRecord& record) const;
  std::size_t size() const { return table_.size(); }

  /// CSV with header `source,patient_id,canonical`.
  static PatientAliases parse_csv(const std::string& text);

 private:
  std::map<std::pair<std::string, std::string>, std::string> table_;
};

class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<SampleRecord> records);

  /// Throws std::invalid_argument on an empty field or a repeated
  /// (source, image_path) pair.
  void add(SampleRecord record);

  const std::vector<SampleRecord>& records() const { return records_; }
  const std::map<std::string, std::size_t>& provenance() const { return provenance_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::array<std::size_t, 3> image_counts() const;
  std::array<std::size_t, 3> patient_counts(const PatientAliases& aliases = {}) const;

  /// CSV with header `patient_id,image_path,label,source`. Fields may be
  /// double-quoted; quoted fields may contain commas and doubled quotes.
  static Manifest parse_csv(const std::string& text);
  static Manifest load(const std::string& path);
  std::string to_csv() const;
  void save(const std::string& path) const;

  bool operator==(const Manifest& other) const { return records_ == other.records_; }

 private:
  std::vector<SampleRecord> records_;
  std::map<std::string, std::size_t> provenance_;
  std::set<std::pair<std::string, std::string>> keys_;
};

/// Admits records from `source` whose label is in `admitted`. The source
/// name `*` matches every source.
struct SelectionRule {
  std::string source;
  std::set<Label> admitted;

  SelectionRule(std::string source, std::set<Label> admitted);
  bool admits(const SampleRecord& record) const;
  bool matches_all_sources() const { return source == "*"; }

  /// `source:label,label,...`; `all` stands for the three labels.
  static SelectionRule parse(const std::string& text);
};

/// Records admitted by the rule paired with their manifest, in input order.
/// A (source, image_path) pair seen twice with the same label is kept once;
/// with different labels the merge is rejected listing every conflict.
Manifest merge_manifests(const std::vector<std::pair<Manifest, SelectionRule>>& sources);

struct Split {
  Manifest train;
  Manifest test;
};

/// Number of a class's patients placed in the held-out side.
std::size_t held_out_patients(std::size_t class_patients, double fraction);

/// Splits by patient. A patient's class is the label of their first record
/// in manifest order. Per class, patients are shuffled by `seed` and the
/// first held_out_patients() go to the test side. Record order within each
/// side follows the input manifest.
Split patient_split(const Manifest& manifest, double test_fraction, std::uint64_t seed,
                    const PatientAliases& aliases = {});

/// Per-class image and patient counts for both sides of a split.
std::string distribution_report(const Split& split, const PatientAliases& aliases = {});

}  // namespace covidnet::data
