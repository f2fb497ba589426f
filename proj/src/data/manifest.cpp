#include "covidnet/data/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "covidnet/util/kv.hpp"

namespace covidnet::data {

namespace {

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    row.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(row);
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

const char* label_name(Label label) {
  switch (label) {
    case Label::Normal: return "normal";
    case Label::Pneumonia: return "pneumonia";
    case Label::Covid19: return "covid19";
  }
  throw std::invalid_argument("invalid label value");
}

Label parse_label(const std::string& text) {
  for (Label l : kLabels) {
    if (text == label_name(l)) return l;
  }
  throw std::invalid_argument("unknown label '" + text + "' (expected normal, pneumonia or covid19)");
}

void PatientAliases::add(const std::string& source, const std::string& patient_id,
                         const std::string& canonical) {
  if (canonical.empty()) throw std::invalid_argument("empty canonical patient id");
  table_[{source, patient_id}] = canonical;
}

std::string PatientAliases::key(const SampleRecord& record) const {
  const auto it = table_.find({record.source, record.patient_id});
  if (it != table_.end()) return it->second;
  return record.source + "/" + record.patient_id;
}

PatientAliases PatientAliases::parse_csv(const std::string& text) {
  const auto rows = parse_csv_rows(text);
  if (rows.empty() || rows[0] != std::vector<std::string>{"source", "patient_id", "canonical"}) {
    throw std::invalid_argument("alias table header must be source,patient_id,canonical");
  }
  PatientAliases aliases;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) {
      throw std::invalid_argument("alias table row " + std::to_string(r + 1) + ": expected 3 fields");
    }
    aliases.add(rows[r][0], rows[r][1], rows[r][2]);
  }
  return aliases;
}

Manifest::Manifest(std::vector<SampleRecord> records) {
  for (SampleRecord& r : records) add(std::move(r));
}

void Manifest::add(SampleRecord record) {
  if (record.patient_id.empty()) throw std::invalid_argument("record with empty patient_id");
  if (record.image_path.empty()) throw std::invalid_argument("record with empty image_path");
  if (record.source.empty()) throw std::invalid_argument("record with empty source");
  if (!keys_.insert({record.source, record.image_path}).second) {
    throw std::invalid_argument("duplicate image '" + record.image_path + "' in source '" +
                                record.source + "'");
  }
  ++provenance_[record.source];
  records_.push_back(std::move(record));
}

std::array<std::size_t, 3> Manifest::image_counts() const {
  std::array<std::size_t, 3> counts{};
  for (const SampleRecord& r : records_) ++counts[label_index(r.label)];
  return counts;
}

std::array<std::size_t, 3> Manifest::patient_counts(const PatientAliases& aliases) const {
  std::map<std::string, Label> first;
  for (const SampleRecord& r : records_) first.emplace(aliases.key(r), r.label);
  std::array<std::size_t, 3> counts{};
  for (const auto& [key, label] : first) ++counts[label_index(label)];
  return counts;
}

Manifest Manifest::parse_csv(const std::string& text) {
  const auto rows = parse_csv_rows(text);
  if (rows.empty() ||
      rows[0] != std::vector<std::string>{"patient_id", "image_path", "label", "source"}) {
    throw std::invalid_argument("manifest header must be patient_id,image_path,label,source");
  }
  Manifest m;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    try {
      if (f.size() != 4) throw std::invalid_argument("expected 4 fields, got " + std::to_string(f.size()));
      m.add(SampleRecord{f[0], f[1], parse_label(f[2]), f[3]});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("manifest row " + std::to_string(r + 1) + ": " + e.what());
    }
  }
  return m;
}

Manifest Manifest::load(const std::string& path) {
  try {
    return parse_csv(util::read_text_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string Manifest::to_csv() const {
  std::string out = "patient_id,image_path,label,source\n";
  for (const SampleRecord& r : records_) {
    out += csv_field(r.patient_id) + ',' + csv_field(r.image_path) + ',' + label_name(r.label) +
           ',' + csv_field(r.source) + '\n';
  }
  return out;
}

void Manifest::save(const std::string& path) const { util::write_text_file(path, to_csv()); }

SelectionRule::SelectionRule(std::string source_name, std::set<Label> admitted_labels)
    : source(std::move(source_name)), admitted(std::move(admitted_labels)) {
  if (source.empty()) throw std::invalid_argument("selection rule needs a source name");
  if (admitted.empty()) {
    throw std::invalid_argument("selection rule for '" + source + "' admits no labels");
  }
}

bool SelectionRule::admits(const SampleRecord& record) const {
  return (matches_all_sources() || record.source == source) && admitted.count(record.label) > 0;
}

SelectionRule SelectionRule::parse(const std::string& text) {
  const std::size_t colon = text.rfind(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("selection rule '" + text + "' must look like source:label,label");
  }
  std::set<Label> labels;
  for (const std::string& part : util::split(text.substr(colon + 1), ',')) {
    const std::string name = util::trim(part);
    if (name.empty()) continue;
    if (name == "all") {
      labels.insert(kLabels.begin(), kLabels.end());
    } else {
      labels.insert(parse_label(name));
    }
  }
  return SelectionRule(util::trim(text.substr(0, colon)), labels);
}

Manifest merge_manifests(const std::vector<std::pair<Manifest, SelectionRule>>& sources) {
  Manifest out;
  std::map<std::pair<std::string, std::string>, Label> seen;
  std::vector<std::string> conflicts;
  for (const auto& [manifest, rule] : sources) {
    for (const SampleRecord& r : manifest.records()) {
      if (!rule.admits(r)) continue;
      const auto key = std::make_pair(r.source, r.image_path);
      const auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, r.label);
        out.add(r);
      } else if (it->second != r.label) {
        conflicts.push_back(r.source + ":" + r.image_path + " (" + label_name(it->second) + " vs " +
                            label_name(r.label) + ")");
      }
    }
  }
  if (!conflicts.empty()) {
    std::string msg = "conflicting labels for " + std::to_string(conflicts.size()) + " image(s):";
    for (const std::string& c : conflicts) msg += "\n  " + c;
    throw std::invalid_argument(msg);
  }
  return out;
}

std::size_t held_out_patients(std::size_t class_patients, double fraction) {
  if (class_patients < 2) throw std::invalid_argument("a class needs at least 2 patients to split");
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(class_patients)));
  return std::clamp<std::size_t>(target, 1, class_patients - 1);
}

Split patient_split(const Manifest& manifest, double test_fraction, std::uint64_t seed,
                    const PatientAliases& aliases) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test fraction must lie strictly between 0 and 1");
  }
  std::map<std::string, Label> patient_class;
  std::array<std::vector<std::string>, 3> by_class;
  for (const SampleRecord& r : manifest.records()) {
    const std::string key = aliases.key(r);
    if (patient_class.emplace(key, r.label).second) by_class[label_index(r.label)].push_back(key);
  }

  std::set<std::string> held_out;
  for (Label l : kLabels) {
    auto& patients = by_class[label_index(l)];
    if (patients.size() < 2) {
      throw std::invalid_argument(std::string("class ") + label_name(l) + " has " +
                                  std::to_string(patients.size()) +
                                  " patient(s); at least 2 are needed to split");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(label_index(l))};
    std::mt19937_64 rng(seq);
    std::shuffle(patients.begin(), patients.end(), rng);
    const std::size_t k = held_out_patients(patients.size(), test_fraction);
    held_out.insert(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(k));
  }

  Split split;
  for (const SampleRecord& r : manifest.records()) {
    (held_out.count(aliases.key(r)) ? split.test : split.train).add(r);
  }
  return split;
}

std::string distribution_report(const Split& split, const PatientAliases& aliases) {
  const auto ti = split.train.image_counts(), si = split.test.image_counts();
  const auto tp = split.train.patient_counts(aliases), sp = split.test.patient_counts(aliases);
  std::ostringstream out;
  out << "# per-class images and patients by split\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %12s %11s %14s %13s\n", "class", "train_images",
                "test_images", "train_patients", "test_patients");
  out << line;
  std::array<std::size_t, 4> total{};
  for (Label l : kLabels) {
    const int i = label_index(l);
    std::snprintf(line, sizeof line, "%-10s %12zu %11zu %14zu %13zu\n", label_name(l), ti[i], si[i],
                  tp[i], sp[i]);
    out << line;
    total[0] += ti[i];
    total[1] += si[i];
    total[2] += tp[i];
    total[3] += sp[i];
  }
  std::snprintf(line, sizeof line, "%-10s %12zu %11zu %14zu %13zu\n", "total", total[0], total[1],
                total[2], total[3]);
  out << line;
  return out.str();
}

}  // namespace covidnet::data
