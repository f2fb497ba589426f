#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "covidnet/cli/cli.hpp"
#include "covidnet/util/kv.hpp"

namespace covidnet::cli {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& base_dir, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty() || base_dir == ".") return path;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string rule_text(const data::SelectionRule& rule) {
  if (rule.admitted.size() == data::kLabels.size()) return rule.source + ":all";
  std::string out = rule.source + ":";
  bool first = true;
  for (data::Label l : rule.admitted) {
    if (!first) out += ',';
    out += data::label_name(l);
    first = false;
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& base_dir) {
  const std::vector<util::KeyValue> entries = util::parse_key_values(text);
  RunConfig c;
  std::string arch_text;
  for (const util::KeyValue& kv : entries) {
    if (arch::is_arch_key(kv.key)) {
      arch_text += kv.key + " = " + kv.value + "\n";
    } else if (train::is_train_key(kv.key)) {
      // applied below in one pass
    } else if (kv.key == "source") {
      std::istringstream in(kv.value);
      std::string manifest, rule, extra;
      if (!(in >> manifest >> rule) || (in >> extra)) {
        throw std::invalid_argument("line " + std::to_string(kv.line) +
                                    ": source expects '<manifest> <rule>', got '" + kv.value + "'");
      }
      c.data.sources.push_back({resolve(base_dir, manifest), data::SelectionRule::parse(rule)});
    } else if (kv.key == "test_fraction") {
      c.data.test_fraction = util::parse_double(kv);
    } else if (kv.key == "aliases") {
      c.data.aliases = resolve(base_dir, kv.value);
    } else if (kv.key == "train_manifest") {
      c.data.train_manifest = resolve(base_dir, kv.value);
    } else if (kv.key == "test_manifest") {
      c.data.test_manifest = resolve(base_dir, kv.value);
    } else if (kv.key == "patch_size") {
      c.attribution.patch_size = util::parse_size(kv);
    } else if (kv.key == "patch_stride") {
      c.attribution.stride = util::parse_size(kv);
    } else if (kv.key == "selection_fraction") {
      c.attribution.selection_fraction = util::parse_double(kv);
    } else if (kv.key == "occlusion_value") {
      c.occlusion_value = util::parse_double(kv);
      c.attribution.occlusion_value = *c.occlusion_value;
    } else if (kv.key == "out_dir") {
      c.out_dir = resolve(base_dir, kv.value);
    } else {
      throw std::invalid_argument("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
    }
  }
  c.arch = arch::ArchConfig::parse(arch_text);
  c.train = train::TrainConfig::from_entries(entries);
  c.seed = c.train.seed;
  if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in (0, 1)");
  }
  c.attribution.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  try {
    return parse(util::read_text_file(path), fs::path(path).parent_path().string());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  train.seed = value;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "# architecture\n" << arch.to_text() << "# training\n" << train.to_text() << "# data\n";
  for (const SourceSpec& s : data.sources) out << "source = " << s.manifest << ' ' << rule_text(s.rule) << '\n';
  out << "test_fraction = " << util::format_double(data.test_fraction) << '\n';
  if (!data.aliases.empty()) out << "aliases = " << data.aliases << '\n';
  if (!data.train_manifest.empty()) out << "train_manifest = " << data.train_manifest << '\n';
  if (!data.test_manifest.empty()) out << "test_manifest = " << data.test_manifest << '\n';
  out << "# explain\n"
      << "patch_size = " << attribution.patch_size << '\n'
      << "patch_stride = " << attribution.stride << '\n'
      << "selection_fraction = " << util::format_double(attribution.selection_fraction) << '\n';
  if (occlusion_value) out << "occlusion_value = " << util::format_double(*occlusion_value) << '\n';
  out << "out_dir = " << out_dir << '\n';
  return out.str();
}

}  // namespace covidnet::cli
