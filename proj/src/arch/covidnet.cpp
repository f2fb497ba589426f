#include "covidnet/arch/covidnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "covidnet/util/kv.hpp"

namespace covidnet::arch {

namespace {

LayerNode pointwise_node(const std::string& id, const std::string& role, int stage,
                         std::size_t out) {
  LayerNode n;
  n.id = id;
  n.role = role;
  n.kind = LayerKind::Conv;
  n.stage = stage;
  n.out_channels = out;
  n.kernel = 1;
  n.relu = true;
  return n;
}

const char* const kArchKeys[] = {"input_size",       "input_channels", "stem_kernel",
                                 "stem_stride",      "stem_channels",  "stages",
                                 "widths",           "blocks_per_stage", "hub_policy",
                                 "projection_ratio", "expansion_ratio", "head_hidden",
                                 "classes"};

}  // namespace

void PEPXSpec::validate() const {
  if (in_channels == 0 || proj1_channels == 0 || expand_channels == 0 || proj2_channels == 0 ||
      out_channels == 0) {
    throw std::invalid_argument("PEPX widths must be positive");
  }
  if (proj1_channels >= in_channels) {
    throw std::invalid_argument("PEPX first projection (" + std::to_string(proj1_channels) +
                                ") must be narrower than the input (" +
                                std::to_string(in_channels) + ")");
  }
  if (expand_channels <= proj1_channels) {
    throw std::invalid_argument("PEPX expansion (" + std::to_string(expand_channels) +
                                ") must be wider than the first projection (" +
                                std::to_string(proj1_channels) + ")");
  }
  if (proj2_channels >= expand_channels) {
    throw std::invalid_argument("PEPX second projection (" + std::to_string(proj2_channels) +
                                ") must be narrower than the expansion (" +
                                std::to_string(expand_channels) + ")");
  }
}

PEPXFragment build_pepx(const PEPXSpec& spec, const std::string& prefix, int stage) {
  spec.validate();
  PEPXFragment f;
  f.nodes.push_back(pointwise_node(prefix + ".proj1", "pepx.proj1", stage, spec.proj1_channels));
  f.nodes.push_back(pointwise_node(prefix + ".expand", "pepx.expand", stage, spec.expand_channels));
  LayerNode dw = pointwise_node(prefix + ".dw", "pepx.depthwise", stage, spec.expand_channels);
  dw.kernel = 3;
  dw.padding = 1;
  dw.groups = spec.expand_channels;
  f.nodes.push_back(dw);
  f.nodes.push_back(pointwise_node(prefix + ".proj2", "pepx.proj2", stage, spec.proj2_channels));
  f.nodes.push_back(pointwise_node(prefix + ".extend", "pepx.extend", stage, spec.out_channels));
  for (std::size_t i = 0; i + 1 < f.nodes.size(); ++i) {
    f.edges.push_back(Edge{f.nodes[i].id, f.nodes[i + 1].id, EdgeKind::Data});
  }
  f.residual = spec.residual();
  return f;
}

void attach_pepx(ArchGraph& graph, const PEPXFragment& fragment, const std::string& source) {
  for (const LayerNode& n : fragment.nodes) graph.add_node(n);
  graph.add_edge(source, fragment.entry(), EdgeKind::Data);
  for (const Edge& e : fragment.edges) graph.add_edge(e.from, e.to, e.kind);
  if (fragment.residual) graph.add_edge(source, fragment.exit(), EdgeKind::Residual);
}

bool is_arch_key(const std::string& key) {
  return std::find(std::begin(kArchKeys), std::end(kArchKeys), key) != std::end(kArchKeys);
}

ArchConfig ArchConfig::parse(const std::string& text) {
  ArchConfig c;
  std::size_t stages = 0;
  bool stages_given = false;
  for (const util::KeyValue& kv : util::parse_key_values(text)) {
    if (kv.key == "input_size") c.input_size = util::parse_size(kv);
    else if (kv.key == "input_channels") c.input_channels = util::parse_size(kv);
    else if (kv.key == "stem_kernel") c.stem_kernel = util::parse_size(kv);
    else if (kv.key == "stem_stride") c.stem_stride = util::parse_size(kv);
    else if (kv.key == "stem_channels") c.stem_channels = util::parse_size(kv);
    else if (kv.key == "stages") {
      stages = util::parse_size(kv);
      stages_given = true;
    } else if (kv.key == "widths") {
      c.widths.clear();
      for (const std::string& part : util::split(kv.value, ',')) {
        c.widths.push_back(util::parse_size(util::KeyValue{kv.key, util::trim(part), kv.line}));
      }
    } else if (kv.key == "blocks_per_stage") c.blocks_per_stage = util::parse_size(kv);
    else if (kv.key == "hub_policy") {
      if (kv.value == "per_stage") c.hub_policy = HubPolicy::PerStage;
      else if (kv.value == "none") c.hub_policy = HubPolicy::None;
      else throw std::invalid_argument("line " + std::to_string(kv.line) + ": hub_policy must be per_stage or none");
    } else if (kv.key == "projection_ratio") c.projection_ratio = util::parse_double(kv);
    else if (kv.key == "expansion_ratio") c.expansion_ratio = util::parse_double(kv);
    else if (kv.key == "head_hidden") c.head_hidden = util::parse_size(kv);
    else if (kv.key == "classes") c.classes = util::parse_size(kv);
    else throw std::invalid_argument("line " + std::to_string(kv.line) + ": unknown architecture key '" + kv.key + "'");
  }
  if (stages_given && stages != c.widths.size()) {
    throw std::invalid_argument("stages = " + std::to_string(stages) + " but widths lists " +
                                std::to_string(c.widths.size()) + " stage widths");
  }
  c.validate();
  return c;
}

ArchConfig ArchConfig::load(const std::string& path) {
  try {
    return parse(util::read_text_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string ArchConfig::to_text() const {
  std::ostringstream out;
  out << "input_size = " << input_size << '\n'
      << "input_channels = " << input_channels << '\n'
      << "stem_kernel = " << stem_kernel << '\n'
      << "stem_stride = " << stem_stride << '\n'
      << "stem_channels = " << stem_channels << '\n'
      << "stages = " << widths.size() << '\n'
      << "widths = ";
  for (std::size_t i = 0; i < widths.size(); ++i) out << (i ? "," : "") << widths[i];
  out << '\n'
      << "blocks_per_stage = " << blocks_per_stage << '\n'
      << "hub_policy = " << (hub_policy == HubPolicy::PerStage ? "per_stage" : "none") << '\n'
      << "projection_ratio = " << util::format_double(projection_ratio) << '\n'
      << "expansion_ratio = " << util::format_double(expansion_ratio) << '\n'
      << "head_hidden = " << head_hidden << '\n'
      << "classes = " << classes << '\n';
  return out.str();
}

void ArchConfig::validate() const {
  if (input_size == 0 || input_channels == 0) throw std::invalid_argument("input geometry must be positive");
  if (stem_kernel == 0 || stem_stride == 0 || stem_channels == 0) {
    throw std::invalid_argument("stem kernel, stride and channels must be positive");
  }
  if (widths.empty()) throw std::invalid_argument("at least one stage is required");
  if (blocks_per_stage == 0) throw std::invalid_argument("blocks_per_stage must be positive");
  if (!(projection_ratio > 0.0 && projection_ratio < 1.0)) {
    throw std::invalid_argument("projection_ratio must lie in (0, 1)");
  }
  if (!(expansion_ratio > 0.0)) throw std::invalid_argument("expansion_ratio must be positive");
  if (head_hidden == 0) throw std::invalid_argument("head_hidden must be positive");
  if (classes != kNumClasses) {
    throw std::invalid_argument("classes must be " + std::to_string(kNumClasses));
  }
}

PEPXSpec ArchConfig::block_spec(std::size_t in, std::size_t out) const {
  PEPXSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.proj1_channels = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(in * projection_ratio)));
  s.expand_channels = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(out * expansion_ratio)));
  s.proj2_channels = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(out * projection_ratio)));
  return s;
}

ArchGraph build_covidnet(const ArchConfig& config) {
  config.validate();
  ArchGraph g;

  LayerNode input;
  input.id = "input";
  input.kind = LayerKind::Input;
  input.role = "input";
  input.channels = config.input_channels;
  input.height = input.width = config.input_size;
  g.add_node(input);

  LayerNode stem;
  stem.id = "stem";
  stem.role = "stem";
  stem.kind = LayerKind::Conv;
  stem.out_channels = config.stem_channels;
  stem.kernel = config.stem_kernel;
  stem.stride = config.stem_stride;
  stem.padding = config.stem_kernel / 2;
  stem.relu = true;
  g.add_node(stem);
  g.add_edge("input", "stem");

  std::string current = "stem";
  std::size_t current_width = config.stem_channels;
  const std::size_t stages = config.widths.size();
  for (std::size_t s = 1; s <= stages; ++s) {
    const int stage = static_cast<int>(s);
    const std::string stage_prefix = "s" + std::to_string(s);
    const std::size_t width = config.widths[s - 1];
    const std::string stage_input = current;
    std::vector<std::string> block_outputs;
    for (std::size_t b = 1; b <= config.blocks_per_stage; ++b) {
      const PEPXSpec spec = config.block_spec(current_width, width);
      PEPXFragment fragment;
      try {
        fragment = build_pepx(spec, stage_prefix + ".b" + std::to_string(b), stage);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("stage " + std::to_string(s) + " block " + std::to_string(b) +
                                    ": " + e.what());
      }
      attach_pepx(g, fragment, current);
      current = fragment.exit();
      current_width = width;
      block_outputs.push_back(current);
    }
    if (config.hub_policy == HubPolicy::PerStage) {
      const std::string hub = stage_prefix + ".hub";
      g.add_node(pointwise_node(hub, "hub", stage, width));
      g.add_edge(stage_input, hub, EdgeKind::LongRange);
      for (const std::string& out : block_outputs) g.add_edge(out, hub, EdgeKind::LongRange);
      g.mark_hub(hub);
      current = hub;
    }
    if (s < stages) {
      LayerNode pool;
      pool.id = stage_prefix + ".pool";
      pool.role = "downsample";
      pool.kind = LayerKind::MaxPool;
      pool.stage = stage;
      pool.kernel = 2;
      pool.stride = 2;
      g.add_node(pool);
      g.add_edge(current, pool.id);
      current = pool.id;
    }
  }

  const int head_stage = static_cast<int>(stages) + 1;
  LayerNode gap;
  gap.id = "head.gap";
  gap.role = "head";
  gap.kind = LayerKind::GlobalAvgPool;
  gap.stage = head_stage;
  g.add_node(gap);
  g.add_edge(current, gap.id);

  LayerNode fc1;
  fc1.id = "head.fc1";
  fc1.role = "head";
  fc1.kind = LayerKind::Dense;
  fc1.stage = head_stage;
  fc1.out_features = config.head_hidden;
  fc1.relu = true;
  g.add_node(fc1);
  g.add_edge(gap.id, fc1.id);

  LayerNode fc2 = fc1;
  fc2.id = "head.fc2";
  fc2.out_features = config.classes;
  fc2.relu = false;
  g.add_node(fc2);
  g.add_edge(fc1.id, fc2.id);

  LayerNode softmax;
  softmax.id = "head.softmax";
  softmax.role = "head";
  softmax.kind = LayerKind::Softmax;
  softmax.stage = head_stage;
  g.add_node(softmax);
  g.add_edge(fc2.id, softmax.id);

  g.validate();
  return g;
}

}  // namespace covidnet::arch
