// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails. Criterion numbers given as arguments restrict
// the run to those criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "covidnet/arch/complexity.hpp"
#include "covidnet/arch/covidnet.hpp"
#include "covidnet/arch/model.hpp"
#include "covidnet/data/manifest.hpp"
#include "covidnet/data/sampler.hpp"
#include "covidnet/data/synthetic.hpp"
#include "covidnet/eval/metrics.hpp"
#include "covidnet/explain/occlusion.hpp"
#include "covidnet/tensor/conv.hpp"
#include "covidnet/tensor/grad_check.hpp"
#include "covidnet/tensor/ops.hpp"
#include "covidnet/train/schedule.hpp"
#include "covidnet/train/trainer.hpp"
#include "support/matrix_search.hpp"
#include "support/planted.hpp"
#include "support/random_arch.hpp"
#include "support/reference.hpp"
#include "support/reference_graph.hpp"

using namespace covidnet;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int number;
  const char* name;
  double budget_seconds;
  std::function<Verdict()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict metric_reproduction() {
  const auto figures = reference::covidnet_figures();
  const auto without_constraint = reference::search_matrices(figures, 100);
  const auto found = reference::search_matrices(figures, 100, reference::single_pneumonia_to_covid_error);
  if (found.size() != 1) {
    return {false, "search returned " + std::to_string(found.size()) + " matrices"};
  }
  eval::ConfusionMatrix expected;
  expected.counts = {{{95, 5, 0}, {5, 94, 1}, {5, 4, 91}}};
  if (!(found.front() == expected)) return {false, "search returned a different matrix"};

  const eval::MetricsReport m = eval::metrics(expected);
  const std::array<std::int64_t, 3> sens{950, 940, 910}, ppv{905, 913, 989};
  bool ok = m.accuracy.tenths_percent() == 933;
  std::string values = "sensitivity";
  for (std::size_t i = 0; i < 3; ++i) {
    ok = ok && m.sensitivity[i].tenths_percent() == sens[i] && m.ppv[i].tenths_percent() == ppv[i];
    values += " " + m.sensitivity[i].percent_text();
  }
  values += ", ppv";
  for (std::size_t i = 0; i < 3; ++i) values += " " + m.ppv[i].percent_text();
  values += ", accuracy " + m.accuracy.percent_text();
  return {ok, "unique matrix [[95,5,0],[5,94,1],[5,4,91]] (" + std::to_string(without_constraint.size()) +
                  " without the single-error constraint); " + values};
}

Verdict gate_check() {
  eval::ConfusionMatrix cm;
  cm.counts = {{{95, 5, 0}, {5, 94, 1}, {5, 4, 91}}};
  const auto gates = eval::check_design_requirements(eval::metrics(cm));
  std::string lines = eval::gate_lines(gates);
  std::replace(lines.begin(), lines.end(), '\n', ';');
  const bool ok = gates.size() == 2 && eval::all_passed(gates) && gates[0].threshold_percent == 80 &&
                  gates[1].threshold_percent == 80;
  return {ok, lines};
}

// ---------------------------------------------------------------------------

constexpr double kGradTolerance = 1e-3;
constexpr int kGradSeeds = 10;

ConvSpec conv_spec(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                   std::size_t groups) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.padding = pad;
  s.groups = groups;
  return s;
}

Verdict gradient_correctness() {
  using reference::random_tensor;
  const double eps = 1e-6;
  std::map<std::string, double> worst;
  auto check = [&](const std::string& name, const DifferentiableOp& op, const InputSampler& sampler) {
    for (int seed = 0; seed < kGradSeeds; ++seed) {
      worst[name] = std::max(worst[name], grad_check(op, sampler, eps, static_cast<std::uint64_t>(seed)));
    }
  };

  check("dense", [](const std::vector<Tensor>& in) { return ops::dense(in[0], in[1], in[2]); },
        [](std::mt19937_64& rng) {
          return std::vector<Tensor>{random_tensor({4, 8}, rng), random_tensor({5, 8}, rng), random_tensor({5}, rng)};
        });
  check("relu", [](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
        [](std::mt19937_64& rng) { return std::vector<Tensor>{reference::random_away_from_zero({3, 7}, rng, 1e-3)}; });
  check("softmax+cross_entropy",
        [](const std::vector<Tensor>& in) {
          const std::vector<int> labels{0, 2, 1, 2};
          return ops::cross_entropy(ops::softmax(in[0], 1), labels);
        },
        [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor({4, 3}, rng, -3, 3)}; });
  check("pooling", [](const std::vector<Tensor>& in) { return ops::global_avg_pool(ops::max_pool2d(in[0], 2, 2)); },
        [](std::mt19937_64& rng) {
          std::vector<double> v(2 * 3 * 6 * 6);
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
          std::shuffle(v.begin(), v.end(), rng);
          return std::vector<Tensor>{Tensor({2, 3, 6, 6}, v)};
        });
  const std::vector<std::pair<std::string, ConvSpec>> convs = {
      {"conv2d ungrouped", conv_spec(3, 4, 3, 1, 1, 1)},
      {"conv2d grouped", conv_spec(4, 6, 3, 2, 1, 2)},
      {"conv2d depthwise", ConvSpec::depthwise(5, 3)}};
  for (const auto& [name, spec] : convs) {
    check(name, [spec](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], spec); },
          [spec](std::mt19937_64& rng) {
            return std::vector<Tensor>{random_tensor({2, spec.in_channels, 7, 6}, rng),
                                       random_tensor(spec.weight_shape(), rng), random_tensor({spec.out_channels}, rng)};
          });
  }

  // A two-stage network with PEPX blocks, max pooling and hubs.
  const arch::ArchConfig config = arch::ArchConfig::parse(
      "input_size = 8\nstem_kernel = 3\nstem_stride = 1\nstem_channels = 4\nwidths = 4,6\n"
      "blocks_per_stage = 1\nhead_hidden = 5\n");
  const arch::ArchGraph graph = arch::build_covidnet(config);
  const arch::ParameterStore shapes = arch::init_parameters(graph, 0);
  std::vector<std::string> names;
  for (const auto& [name, t] : shapes.entries()) names.push_back(name);
  check("tiny network",
        [&](const std::vector<Tensor>& in) {
          arch::ParameterStore params;
          for (std::size_t k = 0; k < names.size(); ++k) params.set(names[k], in[k + 1]);
          const std::vector<int> labels{2, 0};
          return ops::cross_entropy(arch::forward(graph, params, in[0]), labels);
        },
        [&](std::mt19937_64& rng) {
          std::vector<Tensor> in{random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0)};
          const arch::ParameterStore init = arch::init_parameters(graph, rng());
          for (const std::string& name : names) {
            const Tensor& t = init.at(name);
            in.push_back(t.dim(0) && t.shape().size() == 1 ? random_tensor(t.shape(), rng, -0.1, 0.1) : t.clone());
          }
          return in;
        });

  bool ok = true;
  std::string detail = "max relative error over " + std::to_string(kGradSeeds) + " seeds:";
  for (const auto& [name, err] : worst) {
    ok = ok && err <= kGradTolerance;
    detail += " " + name + "=" + fmt("%.1e", err);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Verdict complexity_oracle() {
  std::mt19937_64 rng(7);
  int matched = 0, four_hub = 0;
  std::string detail;
  for (int trial = 0; trial < 6; ++trial) {
    arch::ArchConfig c = reference::random_small_config(rng, trial == 0 ? 4 : 0);
    if (trial == 0) c.hub_policy = arch::HubPolicy::PerStage;
    const arch::ArchGraph g = arch::build_covidnet(c);
    if (g.hubs().size() == 4) ++four_hub;
    const arch::ParameterStore params = arch::init_parameters(g, static_cast<std::uint64_t>(trial));
    const Tensor x = reference::random_tensor({1, c.input_channels, c.input_size, c.input_size}, rng, 0.0, 1.0);
    const std::uint64_t naive = reference::run_graph_naive(g, params, x).multiplies;
    const std::uint64_t counted = arch::count_macs(g, c.input_channels, c.input_size, c.input_size);
    matched += naive == counted;
    detail += (detail.empty() ? "" : ",") + std::to_string(counted);
  }

  arch::ArchGraph block;
  arch::LayerNode in;
  in.id = "in";
  in.kind = arch::LayerKind::Input;
  in.channels = 64;
  in.height = in.width = 16;
  block.add_node(in);
  arch::attach_pepx(block, arch::build_pepx(arch::PEPXSpec{64, 32, 128, 32, 64}, "blk", 1), "in");
  const std::uint64_t hand = (64 * 32 + 32) + (32 * 128 + 128) + (128 * 9 + 128) + (128 * 32 + 32) + (32 * 64 + 64);
  const bool params_ok = arch::count_params(block) == hand;

  const bool ok = matched == 6 && four_hub >= 1 && params_ok;
  return {ok, std::to_string(matched) + "/6 random graphs exact (MACs " + detail + "), " + std::to_string(four_hub) +
                  " with 4 hubs; PEPX 64-32-128-32-64 params " + std::to_string(arch::count_params(block)) +
                  " vs hand " + std::to_string(hand)};
}

// ---------------------------------------------------------------------------

Verdict end_to_end_training() {
  constexpr std::uint64_t seed = 1;
  constexpr std::size_t max_epochs = 30;
  const data::ImageSet train_set = data::make_synthetic_set(100, 64, 1000 + seed, "tr");
  const data::ImageSet test_set = data::make_synthetic_set(100, 64, 2000 + seed, "te");
  train::TrainConfig config;  // lr 2e-4, factor 0.7, patience 5, batch re-balancing
  config.epochs = max_epochs;
  config.seed = seed;
  const train::Trainer trainer(arch::ArchConfig{}, config);

  train::TrainState state = trainer.initial_state();
  std::vector<std::string> log;
  double accuracy = 0.0;
  std::size_t epoch = 0;
  while (epoch < max_epochs && accuracy < 0.90) {
    train::TrainResult r = trainer.run(train_set, std::move(state), epoch + 1);
    state = std::move(r.state);
    epoch = state.epochs_done;
    log.push_back(r.history.back().log_line());
    accuracy = train::evaluate_set(trainer.graph(), state.params, test_set).accuracy;
  }

  // Same seed, fresh trainer: identical log and parameters.
  const train::Trainer again(arch::ArchConfig{}, config);
  const train::TrainResult repeat = again.run(train_set, again.initial_state(), epoch);
  std::vector<std::string> repeat_log;
  for (const auto& rec : repeat.history) repeat_log.push_back(rec.log_line());
  const bool deterministic = repeat_log == log && repeat.state.params.identical(state.params);

  return {accuracy >= 0.90 && deterministic,
          fmt("test accuracy %.4f after %.0f epoch(s) on 300/300 synthetic 64x64 images; ", accuracy,
              static_cast<double>(epoch)) +
              (deterministic ? "rerun bit-identical" : "rerun differs")};
}

// ---------------------------------------------------------------------------

data::Manifest random_manifest(std::mt19937_64& rng, data::PatientAliases& aliases) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  data::Manifest m;
  const std::size_t sources = pick(1, 3);
  std::size_t image = 0;
  for (data::Label l : data::kLabels) {
    const std::size_t patients = pick(2, 30);
    for (std::size_t p = 0; p < patients; ++p) {
      const std::string id = std::string(data::label_name(l)) + std::to_string(p);
      const std::size_t images = pick(1, 4);
      for (std::size_t i = 0; i < images; ++i) {
        const std::string source = "src" + std::to_string(pick(0, sources - 1));
        if (pick(0, 4) == 0) aliases.add(source, id, "person-" + id);
        m.add({id, "img" + std::to_string(image++) + ".png", l, source});
      }
    }
  }
  return m;
}

Verdict sampler_and_split() {
  std::mt19937_64 rng(31337);
  int split_ok = 0, batch_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    data::PatientAliases aliases;
    const data::Manifest m = random_manifest(rng, aliases);
    const double fraction = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
    const data::Split split = data::patient_split(m, fraction, rng(), aliases);

    std::set<std::string> train_patients;
    for (const auto& r : split.train.records()) train_patients.insert(aliases.key(r));
    bool disjoint = true;
    for (const auto& r : split.test.records()) disjoint = disjoint && train_patients.count(aliases.key(r)) == 0;

    auto key = [](const data::SampleRecord& r) { return r.source + "|" + r.image_path + "|" + r.patient_id; };
    std::multiset<std::string> before, after;
    for (const auto& r : m.records()) before.insert(key(r) + data::label_name(r.label));
    for (const auto* side : {&split.train, &split.test}) {
      for (const auto& r : side->records()) after.insert(key(r) + data::label_name(r.label));
    }
    split_ok += disjoint && before == after;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c) {
      labels.insert(labels.end(), std::uniform_int_distribution<std::size_t>(1, 150)(rng), c);
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    const std::size_t batch = std::uniform_int_distribution<std::size_t>(3, 96)(rng);
    const std::size_t quota = data::balanced_batch_size(batch) / 3;
    const auto batches = data::rebalanced_batches(labels, batch, rng(), static_cast<std::size_t>(trial));
    bool exact = !batches.empty();
    for (const auto& b : batches) {
      std::array<std::size_t, 3> hist{};
      for (std::size_t i : b) {
        if (i >= labels.size()) {
          exact = false;
          break;
        }
        ++hist[static_cast<std::size_t>(labels[i])];
      }
      exact = exact && hist == std::array<std::size_t, 3>{quota, quota, quota};
    }
    batch_ok += exact;
  }
  return {split_ok == 1000 && batch_ok == 1000,
          std::to_string(split_ok) + "/1000 splits patient-disjoint and conserving, " + std::to_string(batch_ok) +
              "/1000 batch plans with exact per-class quotas"};
}

// ---------------------------------------------------------------------------

Verdict plateau_schedule() {
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::abs(b); };
  train::PlateauSchedule s;  // lr 2e-4, factor 0.7, patience 5
  bool ok = s.lr == 2e-4 && s.factor == 0.7 && s.patience == 5;
  s.update(1.0);
  for (int i = 0; i < 5; ++i) ok = ok && s.update(1.0) == 2e-4;
  const double after_one = s.update(1.0);
  for (int i = 0; i < 5; ++i) ok = ok && close(s.update(1.0), 1.4e-4);
  const double after_two = s.update(1.0);

  train::PlateauSchedule improving;
  for (int i = 0; i < 20; ++i) improving.update(1.0 / (i + 1));
  ok = ok && close(after_one, 1.4e-4) && close(after_two, 9.8e-5) && improving.lr == 2e-4;
  return {ok, fmt("lr after one stagnation cycle %.6g, after two %.6g, steady improvement %.6g", after_one, after_two,
                  improving.lr)};
}

// ---------------------------------------------------------------------------

Verdict explainability_audit() {
  constexpr std::size_t size = 32;
  const arch::ArchConfig arch_config = arch::ArchConfig::parse(
      "input_size = 32\nstem_kernel = 3\nstem_stride = 1\nstem_channels = 8\nwidths = 8,16\n"
      "blocks_per_stage = 1\nhead_hidden = 16\n");
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const data::ImageSet train_set = reference::planted_quadrant_set(240, size, 2 * seed, "tr");
    const data::ImageSet test_set = reference::planted_quadrant_set(60, size, 2 * seed + 1, "te");
    train::TrainConfig config;
    config.seed = seed;
    config.epochs = 20;
    config.lr = 5e-3;
    config.batch_size = 15;
    config.augment = false;
    const train::Trainer trainer(arch_config, config);
    const train::TrainResult result = trainer.run(train_set, trainer.initial_state());
    const explain::Classifier model = explain::network_classifier(trainer.graph(), result.state.params);

    explain::AttributionConfig attribution;  // 8x8 patches, top 10%
    attribution.occlusion_value = train_set.mean_intensity();
    double inside = 0.0, total = 0.0;
    for (std::size_t k = 0; k < test_set.size(); ++k) {
      if (test_set.labels[k] == 0) continue;
      const explain::InterpretationMask mask =
          explain::critical_factors(model, test_set.images[k], test_set.labels[k], attribution);
      const Tensor pixels = mask.pixel_mask();
      for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
          const double v = pixels.at(i * size + j);
          total += v;
          if (i < size / 2 && j < size / 2) inside += v;
        }
      }
    }
    const double share = total > 0.0 ? inside / total : 0.0;
    ok = ok && share >= 0.70;
    detail += fmt("%.3f (accuracy %.3f) ", share,
                  train::evaluate_set(trainer.graph(), result.state.params, test_set).accuracy);
  }

  // A classifier that ignores its input.
  const explain::Classifier constant = [](const Tensor& batch) {
    std::vector<double> v;
    for (std::size_t n = 0; n < batch.dim(0); ++n) v.insert(v.end(), {0.2, 0.3, 0.5});
    return Tensor({batch.dim(0), 3}, v);
  };
  const explain::InterpretationMask flat = explain::critical_factors(
      constant, reference::planted_quadrant_image(2, size, 99), 2, explain::AttributionConfig{});
  bool all_zero = flat.no_critical_factors &&
                  flat.selected_count == explain::selection_count(0.1, flat.grid.count());
  for (double d : flat.score_drop) all_zero = all_zero && d == 0.0;
  return {ok && all_zero, "selected area inside the signal quadrant per seed: " + detail +
                              (all_zero ? "; constant model drop map all zero" : "; constant model drop map NOT zero")};
}

// ---------------------------------------------------------------------------

Verdict checkpoint_continuation() {
  const fs::path dir = fs::temp_directory_path() / "covidnet_acceptance_resume";
  fs::remove_all(dir);
  const arch::ArchConfig arch_config = arch::ArchConfig::parse(
      "input_size = 16\nstem_kernel = 3\nstem_stride = 1\nstem_channels = 4\nwidths = 4,8\n"
      "blocks_per_stage = 1\nhead_hidden = 8\n");
  const data::ImageSet set = data::make_synthetic_set(20, 16, 77, "r");
  train::TrainConfig config;
  config.epochs = 8;
  config.seed = 5;
  config.batch_size = 12;
  config.lr = 1e-3;
  // Reduce the rate often so the resumed part depends on restored schedule state.
  config.plateau_patience = 1;
  config.plateau_threshold = 0.05;
  constexpr std::size_t resume_at = 4;

  auto log_of = [](const train::TrainResult& r) {
    std::vector<std::string> lines;
    for (const auto& rec : r.history) lines.push_back(rec.log_line());
    return lines;
  };

  config.checkpoint_dir = (dir / "full").string();
  const train::Trainer full(arch_config, config);
  const std::vector<std::string> uninterrupted = log_of(full.run(set, full.initial_state()));

  config.checkpoint_dir = (dir / "part").string();
  const train::Trainer first(arch_config, config);
  first.run(set, first.initial_state(), resume_at);

  arch::ArchConfig stored_arch;
  train::TrainConfig stored_config;
  train::TrainState restored = train::from_checkpoint(
      train::load_checkpoint((dir / "part" / "last.ckpt").string()), &stored_arch, &stored_config);
  const train::Trainer second(stored_arch, stored_config);
  const std::vector<std::string> resumed = log_of(second.run(set, std::move(restored)));

  const std::vector<std::string> tail(uninterrupted.begin() + resume_at, uninterrupted.end());
  std::set<std::string> rates;
  for (const std::string& line : uninterrupted) {
    std::istringstream fields(line);
    std::string epoch, rate;
    fields >> epoch >> rate;
    rates.insert(rate);
  }
  fs::remove_all(dir);
  return {resumed == tail && !tail.empty() && rates.size() > 1,
          "epochs " + std::to_string(resume_at + 1) + "-" + std::to_string(config.epochs) + ": " +
              std::to_string(resumed.size()) + " resumed log lines " + (resumed == tail ? "identical" : "DIFFER") +
              " to the uninterrupted run (" + std::to_string(rates.size()) + " distinct learning rates)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "metric reproduction", 1.0, metric_reproduction},
      {2, "design requirement gates", 1.0, gate_check},
      {3, "gradient correctness", 120.0, gradient_correctness},
      {4, "complexity counter oracle", 60.0, complexity_oracle},
      {5, "end-to-end desk-scale training", 600.0, end_to_end_training},
      {6, "sampler and split properties", 60.0, sampler_and_split},
      {7, "plateau schedule", 1.0, plateau_schedule},
      {8, "explainability audit", 120.0, explainability_audit},
      {9, "checkpoint continuation", 300.0, checkpoint_continuation},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.budget_seconds;
    const bool passed = v.passed && in_time;
    failures += !passed;
    std::printf("%s [%d] %s: %s (%.2f s, budget %.0f s%s)\n", passed ? "PASS" : "FAIL", c.number, c.name,
                v.detail.c_str(), seconds, c.budget_seconds, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
