#include "rawicl/serialize.hpp"

#include <fstream>

namespace rawicl {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw FormatError(std::string("missing field \"") + name + "\"");
  return j.at(name);
}

template <typename T>
T get(const json& j, const char* name) {
  try {
    return field(j, name).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field \"") + name + "\": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* name, T fallback) {
  if (!j.contains(name)) return fallback;
  return get<T>(j, name);
}

void check_format(const json& j) {
  if (!j.is_object()) throw FormatError("expected a JSON object");
  const int version = get_or<int>(j, "format", kFormatVersion);
  if (version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(version));
}

json range_json(const IndexRange& r) { return json::array({r.begin, r.end}); }

IndexRange range_from(const json& j, const char* name) {
  if (!j.contains(name)) return {};
  const json& r = j.at(name);
  if (!r.is_array() || (r.size() != 2 && !r.empty())) throw FormatError(std::string("range \"") + name + "\" must be [begin, end]");
  if (r.empty()) return {};
  return {r[0].get<std::size_t>(), r[1].get<std::size_t>()};
}

Vector vector_from(const json& j, const char* name) {
  if (!j.contains(name)) return {};
  return get<Vector>(j, name);
}

DenseMatrix matrix_field(const json& j, const char* name) {
  if (!j.contains(name)) return {};
  try {
    return matrix_from_json(j.at(name));
  } catch (const FormatError& e) {
    throw FormatError(std::string("field \"") + name + "\": " + e.what());
  }
}

const char* map_name(TimestepMap::Kind k) {
  switch (k) {
    case TimestepMap::Kind::self:
      return "self";
    case TimestepMap::Kind::previous_token:
      return "previous_token";
    case TimestepMap::Kind::fixed_token:
      return "fixed_token";
    case TimestepMap::Kind::empty_before:
      return "empty_before";
  }
  return "self";
}

TimestepMap map_from(const json& j) {
  const std::string name = get<std::string>(j, "map");
  const std::size_t t = get_or<std::size_t>(j, "t", 0);
  if (name == "self") return TimestepMap::self();
  if (name == "previous_token") return TimestepMap::previous();
  if (name == "fixed_token") return TimestepMap::fixed(t);
  if (name == "empty_before") return TimestepMap::empty_before(t);
  throw FormatError("unknown timestep map \"" + name + "\"");
}

json op_json(const RawOp& op) {
  json j;
  j["op"] = op.op == RawOpKind::add ? "add" : "mul";
  j["read"] = range_json(op.read);
  j["operand"] = range_json(op.operand);
  j["write"] = range_json(op.write);
  j["read_proj"] = to_json(op.read_proj);
  j["operand_proj"] = to_json(op.operand_proj);
  j["out_proj"] = to_json(op.out_proj);
  j["read_bias"] = op.read_bias;
  j["operand_bias"] = op.operand_bias;
  j["out_bias"] = op.out_bias;
  j["timestep"] = {{"map", map_name(op.timestep.kind)}, {"t", op.timestep.token}};
  j["label"] = op.label;
  return j;
}

RawOp op_from(const json& j) {
  RawOp op;
  const std::string kind = get_or<std::string>(j, "op", "add");
  if (kind == "add")
    op.op = RawOpKind::add;
  else if (kind == "mul")
    op.op = RawOpKind::mul;
  else
    throw FormatError("unknown op kind \"" + kind + "\"");
  op.read = range_from(j, "read");
  op.operand = range_from(j, "operand");
  op.write = range_from(j, "write");
  op.read_proj = matrix_field(j, "read_proj");
  op.operand_proj = matrix_field(j, "operand_proj");
  op.out_proj = matrix_field(j, "out_proj");
  op.read_bias = vector_from(j, "read_bias");
  op.operand_bias = vector_from(j, "operand_bias");
  op.out_bias = vector_from(j, "out_bias");
  if (j.contains("timestep")) op.timestep = map_from(j.at("timestep"));
  op.label = get_or<std::string>(j, "label", "");
  return op;
}

json layer_json(const LayerParams& l) {
  json j;
  auto mats = [](const std::vector<DenseMatrix>& v) {
    json a = json::array();
    for (const auto& m : v) a.push_back(to_json(m));
    return a;
  };
  j["query"] = mats(l.query);
  j["key"] = mats(l.key);
  j["value"] = mats(l.value);
  j["head_merge"] = to_json(l.head_merge);
  j["mlp_in"] = to_json(l.mlp_in);
  j["mlp_in_bias"] = l.mlp_in_bias;
  j["mlp_out"] = to_json(l.mlp_out);
  j["mlp_out_bias"] = l.mlp_out_bias;
  j["layer_norm"] = l.layer_norm_enabled;
  j["imaginary_timestep"] = l.imaginary_timestep_enabled;
  return j;
}

LayerParams layer_from(const json& j) {
  LayerParams l;
  auto mats = [&](const char* name) {
    std::vector<DenseMatrix> v;
    for (const auto& m : field(j, name)) v.push_back(matrix_from_json(m));
    return v;
  };
  l.query = mats("query");
  l.key = mats("key");
  l.value = mats("value");
  l.head_merge = matrix_field(j, "head_merge");
  l.mlp_in = matrix_field(j, "mlp_in");
  l.mlp_in_bias = vector_from(j, "mlp_in_bias");
  l.mlp_out = matrix_field(j, "mlp_out");
  l.mlp_out_bias = vector_from(j, "mlp_out_bias");
  // A layer without MLP units stores mlp_in as [], which drops its column count.
  if (l.mlp_in.rows() == 0) l.mlp_in = DenseMatrix(0, l.mlp_out.rows());
  l.layer_norm_enabled = get_or<bool>(j, "layer_norm", true);
  l.imaginary_timestep_enabled = get_or<bool>(j, "imaginary_timestep", true);
  return l;
}

}  // namespace

json to_json(const DenseMatrix& m) {
  json a = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    a.push_back(Vector(row.begin(), row.end()));
  }
  return a;
}

DenseMatrix matrix_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("matrix must be an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  DenseMatrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw FormatError("ragged matrix row " + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw FormatError("non-numeric matrix entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

json to_json(const TransformerParams& p) {
  json j;
  j["format"] = kFormatVersion;
  j["hidden"] = p.hidden;
  j["depth"] = p.depth();
  j["heads"] = p.layers.empty() ? 0 : p.layers.front().heads();
  j["tokens_dim"] = p.token_dim;
  j["max_positions"] = p.max_positions();
  j["embedding"] = to_json(p.embedding);
  j["positions"] = to_json(p.positions.transpose());  // one row per position p_t
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back(layer_json(l));
  j["layers"] = std::move(layers);
  return j;
}

TransformerParams params_from_json(const json& j) {
  check_format(j);
  TransformerParams p;
  p.hidden = get<std::size_t>(j, "hidden");
  p.token_dim = get<std::size_t>(j, "tokens_dim");
  p.embedding = matrix_field(j, "embedding");
  p.positions = matrix_from_json(field(j, "positions")).transpose();
  for (const auto& l : field(j, "layers")) p.layers.push_back(layer_from(l));
  if (j.contains("depth") && get<std::size_t>(j, "depth") != p.layers.size())
    throw FormatError("depth does not match the number of layers");
  if (p.positions.rows() != p.hidden) {
    if (p.positions.empty()) p.positions = DenseMatrix(p.hidden, 0);
    else throw FormatError("position embeddings do not match hidden size");
  }
  try {
    p.validate();
  } catch (const NumericError& e) {
    throw FormatError(e.what());
  }
  return p;
}

json to_json(const ProgramConstants& c) {
  return {{"gelu_bypass", c.gelu_bypass},   {"layer_norm_bypass", c.layer_norm_bypass},
          {"mul_scale", c.mul_scale},       {"div_n", c.div_n},
          {"div_m", c.div_m},               {"div_floor", c.div_floor},
          {"attention", c.attention},       {"imaginary_timestep", c.imaginary_timestep}};
}

ProgramConstants constants_from_json(const json& j, ProgramConstants c) {
  if (!j.is_object()) throw FormatError("constants must be an object");
  c.gelu_bypass = get_or(j, "gelu_bypass", c.gelu_bypass);
  c.layer_norm_bypass = get_or(j, "layer_norm_bypass", c.layer_norm_bypass);
  c.mul_scale = get_or(j, "mul_scale", c.mul_scale);
  c.div_n = get_or(j, "div_n", c.div_n);
  c.div_m = get_or(j, "div_m", c.div_m);
  c.div_floor = get_or(j, "div_floor", c.div_floor);
  c.attention = get_or(j, "attention", c.attention);
  c.imaginary_timestep = get_or(j, "imaginary_timestep", c.imaginary_timestep);
  return c;
}

json to_json(const RawProgram& p) {
  json j;
  j["format"] = kFormatVersion;
  j["kind"] = p.kind;
  j["token_dim"] = p.token_dim;
  j["data_rows"] = p.data_rows;
  j["hidden"] = p.hidden;
  j["output_row"] = p.output_row;
  j["examples"] = p.examples;
  j["constants"] = to_json(p.constants);
  json regions = json::object();
  for (const auto& [name, r] : p.regions) regions[name] = range_json(r);
  j["regions"] = std::move(regions);
  json steps = json::array();
  for (const auto& s : p.steps) {
    json step;
    step["label"] = s.label;
    if (s.kind == ProgramStep::Kind::div) {
      step["type"] = "div";
      step["numerator"] = range_json(s.div.numerator);
      step["denominator"] = s.div.denominator;
      step["write"] = range_json(s.div.write);
      step["div_label"] = s.div.label;
    } else {
      step["type"] = "raw";
      json ops = json::array();
      for (const auto& op : s.ops) ops.push_back(op_json(op));
      step["ops"] = std::move(ops);
    }
    steps.push_back(std::move(step));
  }
  j["steps"] = std::move(steps);
  return j;
}

RawProgram program_from_json(const json& j) {
  check_format(j);
  RawProgram p;
  p.kind = get_or<std::string>(j, "kind", "custom");
  p.token_dim = get<std::size_t>(j, "token_dim");
  p.data_rows = get<std::size_t>(j, "data_rows");
  p.hidden = get_or<std::size_t>(j, "hidden", 0);
  p.output_row = get<std::size_t>(j, "output_row");
  p.examples = get_or<std::size_t>(j, "examples", 1);
  if (j.contains("constants")) p.constants = constants_from_json(j.at("constants"));
  if (j.contains("regions"))
    for (const auto& [name, r] : j.at("regions").items()) p.regions[name] = range_from(j.at("regions"), name.c_str());
  for (const auto& s : field(j, "steps")) {
    ProgramStep step;
    step.label = get_or<std::string>(s, "label", "");
    const std::string type = get_or<std::string>(s, "type", "raw");
    if (type == "div") {
      step.kind = ProgramStep::Kind::div;
      step.div.numerator = range_from(s, "numerator");
      step.div.denominator = get<std::size_t>(s, "denominator");
      step.div.write = range_from(s, "write");
      step.div.label = get_or<std::string>(s, "div_label", "");
    } else if (type == "raw") {
      for (const auto& op : field(s, "ops")) step.ops.push_back(op_from(op));
    } else {
      throw FormatError("unknown step type \"" + type + "\"");
    }
    p.steps.push_back(std::move(step));
  }
  return p;
}

RawProgram program_from_spec(const json& j) {
  if (!j.is_object()) throw FormatError("program document must be an object");
  if (j.contains("steps")) return program_from_json(j);
  const std::string name = get<std::string>(j, "program");
  const std::size_t d = get<std::size_t>(j, "d");
  RawProgram p;
  if (name == "sgd_step") {
    p = program_sgd_step(d, vector_from(j, "w0"), get_or(j, "alpha", 0.25), get_or(j, "lambda", 0.0));
  } else if (name == "sgd_multi_step") {
    SgdConfig c{d, get<std::size_t>(j, "n_examples"), vector_from(j, "w0"), get_or(j, "alpha", 0.25),
                get_or(j, "lambda", 0.0)};
    if (c.examples == 0) throw CompileError("n_examples must be at least 1");
    p = program_sgd(c);
  } else if (name == "sherman_morrison") {
    p = program_sherman_morrison(d, get_or(j, "lambda", 1.0));
  } else {
    throw FormatError("unknown program \"" + name + "\"");
  }
  if (j.contains("constants")) p.constants = constants_from_json(j.at("constants"), p.constants);
  if (j.contains("hidden")) p.hidden = get<std::size_t>(j, "hidden");
  return p;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace rawicl
