#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "covidnet/arch/complexity.hpp"
#include "covidnet/arch/covidnet.hpp"
#include "covidnet/arch/model.hpp"
#include "support/random_arch.hpp"
#include "support/reference.hpp"
#include "support/reference_graph.hpp"

using namespace covidnet;
using namespace covidnet::arch;

namespace {

ArchConfig tiny_config() {
  ArchConfig c;
  c.input_size = 16;
  c.stem_channels = 8;
  c.widths = {8};
  c.blocks_per_stage = 1;
  return c;
}

std::size_t count_kind(const ArchGraph& g, LayerKind kind) {
  return static_cast<std::size_t>(std::count_if(g.nodes().begin(), g.nodes().end(),
                                                [kind](const LayerNode& n) { return n.kind == kind; }));
}

Tensor random_images(std::size_t n, std::size_t c, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return reference::random_tensor({n, c, size, size}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("PEPX fragment structure") {
  const PEPXSpec spec{64, 32, 128, 32, 64};
  const PEPXFragment f = build_pepx(spec, "blk", 1);
  REQUIRE(f.nodes.size() == 5);
  for (const LayerNode& n : f.nodes) CHECK(n.kind == LayerKind::Conv);
  CHECK(f.nodes[0].kernel == 1);
  CHECK(f.nodes[1].kernel == 1);
  CHECK(f.nodes[2].kernel == 3);
  CHECK(f.nodes[2].groups == 128);
  CHECK(f.nodes[3].kernel == 1);
  CHECK(f.nodes[4].kernel == 1);
  CHECK(f.nodes[4].out_channels == 64);
  CHECK(f.residual);

  ArchGraph g;
  LayerNode in;
  in.id = "in";
  in.kind = LayerKind::Input;
  in.channels = 64;
  in.height = in.width = 16;
  g.add_node(in);
  attach_pepx(g, f, "in");
  CHECK(g.residual_inputs("blk.extend") == std::vector<std::string>{"in"});

  const std::uint64_t weights = 64 * 32 + 32 * 128 + 128 * 9 + 128 * 32 + 32 * 64;
  const std::uint64_t biases = 32 + 128 + 128 + 32 + 64;
  CHECK(count_params(g) == weights + biases);

  const PEPXFragment widened = build_pepx(PEPXSpec{64, 32, 128, 32, 96}, "w", 1);
  CHECK_FALSE(widened.residual);

  CHECK_THROWS_AS(build_pepx(PEPXSpec{64, 64, 128, 32, 64}, "x", 1), std::invalid_argument);
  CHECK_THROWS_AS(build_pepx(PEPXSpec{64, 32, 32, 16, 64}, "x", 1), std::invalid_argument);
  CHECK_THROWS_AS(build_pepx(PEPXSpec{64, 32, 128, 128, 64}, "x", 1), std::invalid_argument);
}

TEST_CASE("default desk-scale network validates") {
  const ArchConfig config;
  const ArchGraph g = build_covidnet(config);
  CHECK_NOTHROW(g.validate());
  CHECK(g.hubs().size() == 4);
  CHECK(g.infer_shapes().at(g.output_id()).channels == 3);

  std::set<std::size_t> kernels;
  bool grouped = false, ungrouped = false;
  for (const LayerNode& n : g.nodes()) {
    if (n.kind != LayerKind::Conv) continue;
    kernels.insert(n.kernel);
    (n.groups > 1 ? grouped : ungrouped) = true;
  }
  CHECK(kernels == std::set<std::size_t>{1, 3, 7});
  CHECK(grouped);
  CHECK(ungrouped);

  for (const std::string& hub : g.hubs()) {
    std::set<int> stages;
    for (const Edge& e : g.edges()) {
      if (e.to == hub) {
        CHECK(e.kind == EdgeKind::LongRange);
        stages.insert(g.node(e.from).stage);
      }
    }
    CHECK(stages.size() >= 2);
  }

  const ParameterStore params = init_parameters(g, 7);
  const Tensor probs = forward(g, params, random_images(1, 1, 64, 1));
  REQUIRE(probs.shape() == Shape{1, 3});
  CHECK(std::abs(probs.at(0) + probs.at(1) + probs.at(2) - 1.0) <= 1e-12);
}

TEST_CASE("hub count follows the hub policy") {
  for (std::size_t stages = 1; stages <= 4; ++stages) {
    ArchConfig c;
    c.widths.assign(stages, 16);
    c.stem_channels = 16;
    c.input_size = 32;
    CHECK(build_covidnet(c).hubs().size() == stages);
    c.hub_policy = HubPolicy::None;
    CHECK(build_covidnet(c).hubs().empty());
  }
}

TEST_CASE("tiny network parameter total matches a hand count") {
  const ArchGraph g = build_covidnet(tiny_config());
  const std::uint64_t stem = 7 * 7 * 1 * 8 + 8;
  const std::uint64_t pepx = (8 * 4 + 4) + (4 * 16 + 16) + (16 * 9 + 16) + (16 * 4 + 4) + (4 * 8 + 8);
  const std::uint64_t hub = (8 + 8) * 8 + 8;
  const std::uint64_t fc1 = 8 * 64 + 64;
  const std::uint64_t fc2 = 64 * 3 + 3;
  CHECK(count_params(g) == stem + pepx + hub + fc1 + fc2);
  CHECK(init_parameters(g, 1).scalar_count() == count_params(g));
}

TEST_CASE("complexity of single layers") {
  SUBCASE("depthwise 3x3 over 4 channels at 8x8") {
    const ConvSpec dw = ConvSpec::depthwise(4, 3);
    CHECK(dw.mac_count(8, 8) == 3 * 3 * 4 * 8 * 8);
    std::mt19937_64 rng(1);
    std::uint64_t multiplies = 0;
    reference::conv2d_naive(reference::random_tensor({1, 4, 8, 8}, rng),
                            reference::random_tensor(dw.weight_shape(), rng), Tensor(), dw, &multiplies);
    CHECK(multiplies == 2304);
  }
  SUBCASE("1x1 64 to 32 at 16x16") {
    CHECK(ConvSpec::pointwise(64, 32).mac_count(16, 16) == 524288);
  }
  SUBCASE("dense 100 to 3") {
    ArchGraph g;
    LayerNode in;
    in.id = "in";
    in.kind = LayerKind::Input;
    in.channels = 100;
    in.height = in.width = 1;
    g.add_node(in);
    LayerNode gap;
    gap.id = "gap";
    gap.kind = LayerKind::GlobalAvgPool;
    g.add_node(gap);
    LayerNode fc;
    fc.id = "fc";
    fc.kind = LayerKind::Dense;
    fc.out_features = 3;
    g.add_node(fc);
    g.add_edge("in", "gap");
    g.add_edge("gap", "fc");
    const ComplexityReport r = analyze(g);
    CHECK(r.total_params == 303);
    CHECK(r.total_macs == 300);
  }
}

TEST_CASE("complexity totals equal the per-layer sum") {
  const ComplexityReport r = analyze(build_covidnet(ArchConfig{}));
  std::uint64_t p = 0, m = 0;
  for (const LayerComplexity& l : r.layers) {
    p += l.params;
    m += l.macs;
  }
  CHECK(p == r.total_params);
  CHECK(m == r.total_macs);
  CHECK(r.to_text().find("total params=" + std::to_string(p)) != std::string::npos);
}

TEST_CASE("MAC count equals multiplications of the naive forward pass") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 6; ++trial) {
    const ArchConfig c = reference::random_small_config(rng, trial == 0 ? 4 : 0);
    const ArchGraph g = build_covidnet(c);
    const ParameterStore params = init_parameters(g, trial);
    const Tensor x = random_images(1, c.input_channels, c.input_size, trial);
    const reference::GraphRun run = reference::run_graph_naive(g, params, x);
    CHECK(run.multiplies == count_macs(g, c.input_channels, c.input_size, c.input_size));
    const Tensor fast = forward(g, params, x);
    CHECK(reference::max_abs_diff(fast, run.output) < 1e-12);
  }
}

TEST_CASE("removing a long-range edge strictly reduces parameters") {
  const ArchGraph g = build_covidnet(ArchConfig{});
  const std::uint64_t before = count_params(g);
  for (const Edge& e : g.edges()) {
    if (e.kind != EdgeKind::LongRange) continue;
    ArchGraph pruned = g;
    REQUIRE(pruned.remove_edge(e.from, e.to));
    CHECK(count_params(pruned) < before);
  }
}

TEST_CASE("forward on a hand-evaluable graph") {
  ArchGraph g;
  LayerNode in;
  in.id = "input";
  in.kind = LayerKind::Input;
  in.channels = 1;
  in.height = in.width = 2;
  g.add_node(in);
  LayerNode stem;
  stem.id = "stem";
  stem.kind = LayerKind::Conv;
  stem.out_channels = 1;
  stem.relu = true;
  g.add_node(stem);
  LayerNode gap;
  gap.id = "gap";
  gap.kind = LayerKind::GlobalAvgPool;
  g.add_node(gap);
  LayerNode fc;
  fc.id = "fc";
  fc.kind = LayerKind::Dense;
  fc.out_features = 3;
  g.add_node(fc);
  LayerNode sm;
  sm.id = "softmax";
  sm.kind = LayerKind::Softmax;
  g.add_node(sm);
  g.add_edge("input", "stem");
  g.add_edge("stem", "gap");
  g.add_edge("gap", "fc");
  g.add_edge("fc", "softmax");
  CHECK_NOTHROW(g.validate());

  ParameterStore p;
  p.set("stem.weight", Tensor({1, 1, 1, 1}, 1.0));
  p.set("stem.bias", Tensor({1}, 0.0));
  p.set("fc.weight", Tensor({3, 1}, std::vector<double>{2.0, -1.0, 0.0}));
  p.set("fc.bias", Tensor({3}, std::vector<double>{0.0, 0.5, 1.0}));
  const Tensor x({1, 1, 2, 2}, std::vector<double>{0.2, 0.4, 0.6, 0.8});
  const Tensor y = forward(g, p, x);
  // mean 0.5 -> logits (1.0, 0.0, 1.0)
  const double e1 = std::exp(1.0), e0 = 1.0;
  const double z = 2 * e1 + e0;
  CHECK(y.at(0) == doctest::Approx(e1 / z).epsilon(1e-14));
  CHECK(y.at(1) == doctest::Approx(e0 / z).epsilon(1e-14));
  CHECK(y.at(2) == doctest::Approx(e1 / z).epsilon(1e-14));
}

TEST_CASE("forward is independent of stored node order") {
  const ArchGraph g = build_covidnet(tiny_config());
  const ParameterStore params = init_parameters(g, 3);
  const Tensor x = random_images(2, 1, 16, 4);
  const Tensor base = forward(g, params, x);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> order(g.nodes().size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const ArchGraph permuted = g.with_node_order(order);
    CHECK(forward(permuted, params, x).identical(base));
  }
}

TEST_CASE("identical images in a batch give identical rows") {
  const ArchGraph g = build_covidnet(tiny_config());
  const ParameterStore params = init_parameters(g, 3);
  const Tensor one = random_images(1, 1, 16, 8);
  std::vector<double> both(one.values().begin(), one.values().end());
  both.insert(both.end(), one.values().begin(), one.values().end());
  const Tensor y = forward(g, params, Tensor({2, 1, 16, 16}, both));
  for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(c) == y.at(3 + c));
}

TEST_CASE("invalid configurations and graphs are rejected with context") {
  ArchConfig c;
  c.widths = {32, 1};
  try {
    build_covidnet(c);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("stage 2") != std::string::npos);
  }

  ArchGraph g = build_covidnet(tiny_config());
  g.add_edge("input", "s1.hub", EdgeKind::LongRange);  // 16x16 into an 8x8 merge
  try {
    g.infer_shapes();
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("s1.hub") != std::string::npos);
  }

  ArchGraph cyclic = build_covidnet(tiny_config());
  cyclic.add_edge("s1.hub", "s1.b1.proj1");
  CHECK_THROWS_AS(cyclic.topological_order(), std::invalid_argument);

  const ArchGraph tiny = build_covidnet(tiny_config());
  const ParameterStore params = init_parameters(tiny, 1);
  try {
    forward(tiny, params, Tensor({1, 1, 20, 20}));
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("input") != std::string::npos);
  }
}

TEST_CASE("architecture config text round trip and errors") {
  ArchConfig c;
  c.widths = {16, 24};
  c.hub_policy = HubPolicy::None;
  c.expansion_ratio = 1.5;
  const ArchConfig back = ArchConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(build_covidnet(back).describe() == build_covidnet(c).describe());

  CHECK_THROWS_AS(ArchConfig::parse("bogus = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(ArchConfig::parse("stages = 3\nwidths = 8,16\n"), std::invalid_argument);
  CHECK_THROWS_AS(ArchConfig::parse("classes = 4\n"), std::invalid_argument);
  CHECK_THROWS_AS(ArchConfig::parse("input_size = -3\n"), std::invalid_argument);
  CHECK(ArchConfig::parse("# comment only\n\nwidths = 8 # trailing\n").widths == std::vector<std::size_t>{8});
}

TEST_CASE("describe lists every node and edge") {
  const ArchGraph g = build_covidnet(tiny_config());
  const std::string text = g.describe();
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  CHECK(line == "covidnet-arch 1");
  std::size_t nodes = 0, edges = 0;
  while (std::getline(in, line)) {
    if (line.rfind("node ", 0) == 0) ++nodes;
    if (line.rfind("edge ", 0) == 0) ++edges;
  }
  CHECK(nodes == g.nodes().size());
  CHECK(edges == g.edges().size());
  CHECK(text.find("node s1.b1.dw kind=conv stage=1 role=pepx.depthwise kernel=3x3 stride=1 pad=1 groups=16 in=16 out=16") != std::string::npos);
  CHECK(text.find("node s1.hub kind=conv stage=1 role=hub kernel=1x1 stride=1 pad=0 groups=1 in=16 out=8 bias=1 relu=1 hub=1 shape=8x8x8") != std::string::npos);
  CHECK(text.find("edge input s1.b1.extend") == std::string::npos);
  CHECK(text.find("edge stem s1.b1.extend residual") != std::string::npos);
}
