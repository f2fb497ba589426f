#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "covidnet/arch/complexity.hpp"
#include "covidnet/cli/cli.hpp"
#include "covidnet/data/dataset.hpp"
#include "covidnet/data/image.hpp"
#include "covidnet/eval/metrics.hpp"
#include "covidnet/util/kv.hpp"

namespace covidnet::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::pair<std::string, std::string>> sources;
  double test_fraction = 0.0;
  std::string aliases;
  std::string manifest;
  std::size_t epochs = 0;
  std::string resume;
  std::string warm_start;
  std::string checkpoint;
  std::string image;
  std::string target;
  std::string format = "png";
};

fs::path absolute_normal(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

std::string dir_of(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

data::PatientAliases load_aliases(const std::string& path) {
  if (path.empty()) return {};
  return data::PatientAliases::parse_csv(util::read_text_file(path));
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw std::invalid_argument(what + " is required");
  if (!fs::is_regular_file(path)) throw std::invalid_argument(what + " '" + path + "' does not exist");
}

/// Re-roots image paths of a manifest read from `manifest_path` so that
/// they resolve from `out_dir`.
data::Manifest rebase(const data::Manifest& manifest, const std::string& manifest_path, const fs::path& out_dir) {
  const fs::path from = absolute_normal(dir_of(manifest_path));
  const fs::path to = absolute_normal(out_dir);
  data::Manifest result;
  for (data::SampleRecord r : manifest.records()) {
    const fs::path image = absolute_normal(from / r.image_path);
    const fs::path rel = image.lexically_relative(to);
    r.image_path = rel.empty() ? image.string() : rel.string();
    result.add(std::move(r));
  }
  return result;
}

std::string seed_line(std::uint64_t seed) { return "seed = " + std::to_string(seed) + "\n"; }

int build_dataset(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.sources.empty()) throw std::invalid_argument("build-dataset needs at least one source");
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  std::vector<std::pair<data::Manifest, data::SelectionRule>> inputs;
  for (const SourceSpec& s : cfg.data.sources) {
    require_file("source manifest", s.manifest);
    inputs.emplace_back(rebase(data::Manifest::load(s.manifest), s.manifest, dir), s.rule);
  }
  const data::PatientAliases aliases = load_aliases(cfg.data.aliases);
  const data::Manifest merged = data::merge_manifests(inputs);
  if (merged.empty()) throw std::invalid_argument("no records admitted by the selection rules");
  const data::Split split = data::patient_split(merged, cfg.data.test_fraction, cfg.seed, aliases);

  merged.save((dir / "merged.csv").string());
  split.train.save((dir / "train.csv").string());
  split.test.save((dir / "test.csv").string());
  const std::string report = "# covidnet-distribution 1\n# " + seed_line(cfg.seed) + "# test_fraction = " +
                             util::format_double(cfg.data.test_fraction) + "\n" +
                             data::distribution_report(split, aliases);
  util::write_text_file((dir / "distribution.txt").string(), report);
  out << report;
  return kExitOk;
}

/// Log lines of an earlier run up to and including `epochs_done`.
std::vector<std::string> kept_log_lines(const fs::path& log, std::size_t epochs_done) {
  std::vector<std::string> kept;
  if (!fs::exists(log)) return kept;
  std::istringstream in(util::read_text_file(log.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::size_t epoch = 0;
    if (fields >> epoch && epoch <= epochs_done) kept.push_back(line);
  }
  return kept;
}

int train_command(RunConfig cfg, const Options& opt, std::ostream& out) {
  require_file("training manifest", cfg.data.train_manifest);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  cfg.train.checkpoint_dir = (dir / "checkpoints").string();
  cfg.train.validate();

  const data::Manifest manifest = data::Manifest::load(cfg.data.train_manifest);
  const data::ImageSet set = data::load_image_set(manifest, dir_of(cfg.data.train_manifest), cfg.arch.input_size,
                                                  load_aliases(cfg.data.aliases));
  const train::Trainer trainer(cfg.arch, cfg.train);

  train::TrainState state;
  if (!opt.resume.empty()) {
    require_file("resume checkpoint", opt.resume);
    const train::Checkpoint ckpt = train::load_checkpoint(opt.resume);
    arch::ArchConfig stored;
    state = train::from_checkpoint(ckpt, &stored);
    if (stored.to_text() != cfg.arch.to_text()) {
      throw std::invalid_argument("checkpoint '" + opt.resume + "' was trained with a different architecture");
    }
  } else if (!opt.warm_start.empty()) {
    require_file("warm-start checkpoint", opt.warm_start);
    state = trainer.initial_state(train::params_from_checkpoint(train::load_checkpoint(opt.warm_start)));
  } else {
    state = trainer.initial_state();
  }

  util::write_text_file((dir / "run_config.txt").string(), cfg.to_text());
  const fs::path log_path = dir / "train.log";
  const std::vector<std::string> kept = kept_log_lines(log_path, opt.resume.empty() ? 0 : state.epochs_done);
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << "# " << seed_line(cfg.seed) << train::kLogHeader << '\n';
  for (const std::string& line : kept) log << line << '\n';
  log.flush();

  out << train::kLogHeader << '\n';
  const train::TrainResult result =
      trainer.run(set, std::move(state), std::nullopt, [&](const train::EpochRecord& rec, const train::TrainState&) {
        const std::string line = rec.log_line();
        log << line << '\n';
        log.flush();
        out << line << '\n';
      });
  out << "epochs_done = " << result.state.epochs_done << '\n'
      << "checkpoints = " << cfg.train.checkpoint_dir << '\n';
  return kExitOk;
}

struct LoadedModel {
  train::Checkpoint checkpoint;
  arch::ArchConfig arch;
  arch::ArchGraph graph;
  arch::ParameterStore params;
};

LoadedModel load_model(const std::string& path) {
  require_file("checkpoint", path);
  LoadedModel m;
  m.checkpoint = train::load_checkpoint(path);
  m.arch = train::arch_from_checkpoint(m.checkpoint);
  m.graph = arch::build_covidnet(m.arch);
  m.params = train::params_from_checkpoint(m.checkpoint);
  return m;
}

int evaluate_command(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  require_file("test manifest", cfg.data.test_manifest);
  const LoadedModel model = load_model(opt.checkpoint);
  const data::Manifest manifest = data::Manifest::load(cfg.data.test_manifest);
  const data::ImageSet set = data::load_image_set(manifest, dir_of(cfg.data.test_manifest), model.arch.input_size);
  if (set.size() == 0) throw std::invalid_argument("test manifest '" + cfg.data.test_manifest + "' is empty");

  const train::EvalResult result = train::evaluate_set(model.graph, model.params, set, cfg.train.eval_batch);
  const eval::MetricsReport report = eval::metrics(eval::confusion(result.predictions, set.labels));
  const std::vector<eval::GateResult> gates = eval::check_design_requirements(report);

  const std::string tables = eval::confusion_table(report.matrix) + "\n" + eval::report_tables(report, "COVID-Net");
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  util::write_text_file((dir / "metrics.txt").string(),
                        eval::report_text(report, gates) + seed_line(cfg.seed) +
                            "loss = " + util::format_double(result.loss) + "\n");
  util::write_text_file((dir / "tables.txt").string(), tables);
  out << tables << '\n' << eval::gate_lines(gates);
  return eval::all_passed(gates) ? kExitOk : kExitGateFailed;
}

int parse_target(const std::string& text) {
  if (text.size() == 1 && std::isdigit(static_cast<unsigned char>(text[0]))) {
    const int index = text[0] - '0';
    if (index > 2) throw std::invalid_argument("class index " + text + " is not 0, 1 or 2");
    return index;
  }
  return data::label_index(data::parse_label(text));
}

int explain_command(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  if (opt.format != "png" && opt.format != "pgm") {
    throw std::invalid_argument("--format must be png or pgm, got '" + opt.format + "'");
  }
  const LoadedModel model = load_model(opt.checkpoint);
  require_file("image", opt.image);
  const Tensor image = data::preprocess(opt.image, model.arch.input_size);
  const explain::Classifier classifier = explain::network_classifier(model.graph, model.params);
  const Tensor probs = classifier(Tensor({1, 1, image.dim(0), image.dim(1)},
                                         std::vector<double>(image.values().begin(), image.values().end())));

  int target = 0;
  if (!opt.target.empty()) {
    target = parse_target(opt.target);
  } else {
    for (int c = 1; c < 3; ++c) {
      if (probs.at(static_cast<std::size_t>(c)) > probs.at(static_cast<std::size_t>(target))) target = c;
    }
  }

  explain::AttributionConfig config = cfg.attribution;
  if (cfg.occlusion_value) {
    config.occlusion_value = *cfg.occlusion_value;
  } else if (model.checkpoint.metadata.count(train::kMeanIntensityKey)) {
    const util::KeyValue kv{train::kMeanIntensityKey, model.checkpoint.meta(train::kMeanIntensityKey), 0};
    config.occlusion_value = util::parse_double(kv);
  } else {
    double sum = 0.0;
    for (double v : image.values()) sum += v;
    config.occlusion_value = sum / static_cast<double>(image.numel());
  }
  const explain::InterpretationMask mask = explain::critical_factors(classifier, image, target, config);

  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  // Nothing is highlighted when no patch lowers the target score.
  explain::InterpretationMask shown = mask;
  if (mask.no_critical_factors) shown.selected.assign(shown.selected.size(), 0);
  explain::overlay(image, shown, (dir / ("overlay." + opt.format)).string());
  util::write_text_file((dir / "drop_map.csv").string(), explain::drop_map_csv(mask));
  std::string report = explain::mask_report(mask, config) + seed_line(cfg.seed) + "probabilities =";
  for (std::size_t c = 0; c < 3; ++c) report += " " + util::format_double(probs.at(c));
  report += "\n";
  util::write_text_file((dir / "explain.txt").string(), report);
  out << report;
  return kExitOk;
}

int analyze_command(const RunConfig& cfg, bool write_files, std::ostream& out) {
  const arch::ArchGraph graph = arch::build_covidnet(cfg.arch);
  graph.validate();
  const arch::ComplexityReport report = arch::analyze(graph);
  const std::string text = report.to_text();
  if (write_files) {
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    util::write_text_file((dir / "complexity.txt").string(), text);
    util::write_text_file((dir / "architecture.txt").string(), graph.describe());
  }
  out << text;
  return kExitOk;
}

bool given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* o = sub->get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config, "key = value run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", opt.seed, "overrides the configured seed");
  sub->add_option("--out", opt.out, "output directory");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale COVID-Net pipeline", "covidnet"};
  app.require_subcommand(1);
  Options opt;

  CLI::App* build = app.add_subcommand("build-dataset", "merge source manifests and split by patient");
  add_common(build, opt);
  build->add_option("--source", opt.sources, "MANIFEST RULE, repeatable");
  build->add_option("--test-fraction", opt.test_fraction, "fraction of each class's patients held out");
  build->add_option("--aliases", opt.aliases, "patient alias CSV")->check(CLI::ExistingFile);

  CLI::App* train_cmd = app.add_subcommand("train", "train a network and write checkpoints");
  add_common(train_cmd, opt);
  train_cmd->add_option("--manifest", opt.manifest, "training manifest");
  train_cmd->add_option("--epochs", opt.epochs, "overrides the configured epoch count");
  auto* resume = train_cmd->add_option("--resume", opt.resume, "continue from a checkpoint");
  train_cmd->add_option("--warm-start", opt.warm_start, "initialize parameters from a checkpoint")->excludes(resume);

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a test manifest");
  add_common(evaluate, opt);
  evaluate->add_option("--checkpoint", opt.checkpoint)->required();
  evaluate->add_option("--manifest", opt.manifest, "test manifest");

  CLI::App* explain_cmd = app.add_subcommand("explain", "find the image regions driving a prediction");
  add_common(explain_cmd, opt);
  explain_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  explain_cmd->add_option("--image", opt.image)->required();
  explain_cmd->add_option("--class", opt.target, "normal, pneumonia, covid19 or 0..2; default: predicted");
  explain_cmd->add_option("--format", opt.format, "overlay format, png or pgm");

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "parameter and MAC counts of an architecture");
  add_common(analyze_cmd, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInvalid;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    RunConfig cfg = opt.config.empty() ? RunConfig{} : RunConfig::load(opt.config);
    if (given(sub, "--seed")) cfg.set_seed(opt.seed);
    if (given(sub, "--out")) cfg.out_dir = opt.out;
    for (const auto& [manifest, rule] : opt.sources) cfg.data.sources.push_back({manifest, data::SelectionRule::parse(rule)});
    if (given(sub, "--test-fraction")) {
      if (!(opt.test_fraction > 0.0 && opt.test_fraction < 1.0)) {
        throw std::invalid_argument("--test-fraction must lie in (0, 1)");
      }
      cfg.data.test_fraction = opt.test_fraction;
    }
    if (given(sub, "--aliases")) cfg.data.aliases = opt.aliases;
    if (given(sub, "--epochs")) cfg.train.epochs = opt.epochs;

    if (sub == build) return build_dataset(cfg, out);
    if (sub == train_cmd) {
      if (!opt.manifest.empty()) cfg.data.train_manifest = opt.manifest;
      return train_command(std::move(cfg), opt, out);
    }
    if (sub == evaluate) {
      if (!opt.manifest.empty()) cfg.data.test_manifest = opt.manifest;
      return evaluate_command(cfg, opt, out);
    }
    if (sub == explain_cmd) return explain_command(cfg, opt, out);
    return analyze_command(cfg, given(sub, "--out"), out);
  } catch (const train::NumericalHalt& e) {
    err << "covidnet: numerical halt: " << e.what() << '\n';
    return kExitNumericalHalt;
  } catch (const std::exception& e) {
    err << "covidnet " << sub->get_name() << ": " << e.what() << '\n';
    return kExitInvalid;
  }
}

}  // namespace covidnet::cli
