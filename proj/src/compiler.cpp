#include <cmath>
#include <numbers>

#include "rawicl/raw.hpp"

namespace rawicl {

namespace {

std::size_t scratch_need(const ProgramStep& step) {
  if (step.kind == ProgramStep::Kind::div) return step.div.numerator.size();
  std::size_t n = 0;
  for (const auto& op : step.ops)
    if (op.op == RawOpKind::mul) n += 2 * op.inner();
  return n;
}

/// The pattern read by head 0 of a raw bundle.
TimestepMap read_pattern(const std::vector<RawOp>& ops) {
  for (const auto& op : ops)
    if (!op.read.empty()) return op.timestep;
  return TimestepMap::self();
}

/// Rows (gate, gate*u, gate*u^2) that drive a pattern's queries.
struct PatternRows {
  std::size_t gate, gate_u, gate_u2;
};

PatternRows pattern_rows(const TimestepMap& k, const Layout& layout) {
  if (k.kind == TimestepMap::Kind::self) return {layout.one, layout.pos, layout.pos_sq};
  const std::size_t base = layout.pattern_rows.at(k);
  return {base, base + 1, base + 2};
}

/// Query/key pair giving logit(i, j) = N (1 - 2 (j - target(i))^2), or -N for
/// every j when K(i) is empty. Keys live in the first three key components.
void set_attention_pattern(const TimestepMap& k, const Layout& layout, double saturation, DenseMatrix& query,
                           DenseMatrix& key) {
  const PatternRows p = pattern_rows(k, layout);
  const double n = saturation;
  const double t2 = static_cast<double>(layout.max_positions) * static_cast<double>(layout.max_positions);
  key(0, layout.one) = 1.0;
  key(1, layout.pos) = 1.0;
  key(2, layout.pos_sq) = 1.0;
  query(0, p.gate) += 2.0 * n;
  query(0, layout.one) += -n;
  query(0, p.gate_u2) += -2.0 * n * t2;
  query(1, p.gate_u) += 4.0 * n * t2;
  query(2, p.gate) += -2.0 * n * t2;
}

/// x = self_coef h_i + read_coef avg_K h, with ballast rows that make the
/// mean of x exactly zero and its variance ~ 2 scale^2 / H, regardless of
/// the other entries: hi = scale*c - s/2, lo = -scale*c - s/2, s = sum of others.
struct AttentionPlan {
  DenseMatrix self_coef;
  DenseMatrix read_coef;

  explicit AttentionPlan(std::size_t hidden)
      : self_coef(DenseMatrix::identity(hidden)), read_coef(hidden, hidden) {}

  void clear_row(std::size_t r) {
    for (double& v : self_coef.row(r)) v = 0.0;
    for (double& v : read_coef.row(r)) v = 0.0;
  }

  void set_ballast(const Layout& layout, std::size_t scale_row, double scale) {
    const std::size_t h = layout.hidden;
    clear_row(layout.ballast_hi);
    clear_row(layout.ballast_lo);
    Vector s_self(h, 0.0), s_read(h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
      if (r == layout.ballast_hi || r == layout.ballast_lo) continue;
      for (std::size_t c = 0; c < h; ++c) {
        s_self[c] += self_coef(r, c);
        s_read[c] += read_coef(r, c);
      }
    }
    for (std::size_t c = 0; c < h; ++c) {
      self_coef(layout.ballast_hi, c) = -0.5 * s_self[c];
      self_coef(layout.ballast_lo, c) = -0.5 * s_self[c];
      read_coef(layout.ballast_hi, c) = -0.5 * s_read[c];
      read_coef(layout.ballast_lo, c) = -0.5 * s_read[c];
    }
    self_coef(layout.ballast_hi, scale_row) += scale;
    self_coef(layout.ballast_lo, scale_row) -= scale;
  }

  /// Two heads: head 0 reads with `pattern`, head 1 attends to itself.
  void emit(LayerParams& layer, const Layout& layout, const TimestepMap& pattern, double saturation) const {
    const std::size_t h = layout.hidden;
    set_attention_pattern(pattern, layout, saturation, layer.query[0], layer.key[0]);
    set_attention_pattern(TimestepMap::self(), layout, saturation, layer.query[1], layer.key[1]);
    layer.value[0] = DenseMatrix::identity(h);
    layer.value[1] = DenseMatrix::identity(h);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < h; ++c) {
        layer.head_merge(r, c) = read_coef(r, c);
        layer.head_merge(r, h + c) = self_coef(r, c) - (r == c ? 1.0 : 0.0);
      }
  }
};

/// Feed-forward units, accumulated then written into a layer.
struct MlpPlan {
  std::vector<std::vector<std::pair<std::size_t, double>>> in;  // sparse rows of mlp_in
  Vector in_bias;
  std::vector<std::vector<std::pair<std::size_t, double>>> out;  // per unit: (hidden row, weight)
  Vector out_bias;

  explicit MlpPlan(std::size_t hidden) : out_bias(hidden, 0.0) {}

  std::size_t add_unit(std::vector<std::pair<std::size_t, double>> weights, double bias) {
    in.push_back(std::move(weights));
    in_bias.push_back(bias);
    out.emplace_back();
    return in.size() - 1;
  }

  void emit(LayerParams& layer, std::size_t hidden) const {
    const std::size_t width = in.size();
    layer.mlp_in = DenseMatrix(width, hidden);
    layer.mlp_in_bias = in_bias;
    layer.mlp_out = DenseMatrix(hidden, width);
    layer.mlp_out_bias = out_bias;
    for (std::size_t u = 0; u < width; ++u) {
      for (auto [c, w] : in[u]) layer.mlp_in(u, c) += w;
      for (auto [r, w] : out[u]) layer.mlp_out(r, u) += w;
    }
  }
};

LayerParams blank_layer(const Layout& layout, const ProgramConstants& constants) {
  LayerParams layer = LayerParams::zeros(layout.hidden, 2, 0);
  layer.layer_norm_enabled = true;
  layer.imaginary_timestep_enabled = constants.imaginary_timestep;
  return layer;
}

}  // namespace

Layout plan_layout(const RawProgram& program, std::size_t max_positions) {
  program.validate();
  if (max_positions == 0) throw CompileError("max_positions must be positive");
  Layout layout;
  layout.max_positions = max_positions;
  layout.data_rows = program.data_rows;
  std::size_t next = program.data_rows;
  layout.one = next++;
  layout.pos = next++;
  layout.pos_sq = next++;
  std::size_t scratch = 0;
  for (const auto& step : program.steps) {
    scratch = std::max(scratch, scratch_need(step));
    if (step.kind != ProgramStep::Kind::raw) continue;
    const TimestepMap k = read_pattern(step.ops);
    if (k.kind != TimestepMap::Kind::self && !layout.pattern_rows.contains(k)) {
      layout.pattern_rows[k] = next;
      next += 3;
    }
  }
  layout.scratch = {next, next + scratch};
  next += scratch;
  layout.ballast_hi = next++;
  layout.ballast_lo = next++;
  if (program.hidden != 0 && program.hidden < next)
    throw CompileError("hidden size " + std::to_string(program.hidden) + " too small: program needs " +
                       std::to_string(next) + " rows (" + std::to_string(program.data_rows) + " data + " +
                       std::to_string(next - program.data_rows) + " scratch/position)");
  layout.hidden = program.hidden != 0 ? program.hidden : next;
  return layout;
}

LayerParams compile_bundle(const std::vector<RawOp>& ops, const Layout& layout, const ProgramConstants& constants) {
  const std::size_t h = layout.hidden;
  for (const auto& op : ops) op.validate(layout.data_rows);
  if (ops.size() > 1) check_parallel(ops);
  std::size_t need = 0;
  for (const auto& op : ops)
    if (op.op == RawOpKind::mul) need += 2 * op.inner();
  if (need > layout.scratch.size())
    throw CompileError("scratch overflow: bundle needs " + std::to_string(need) + " rows, layout has " +
                       std::to_string(layout.scratch.size()));
  const TimestepMap pattern = read_pattern(ops);
  if (pattern.can_be_empty() && !constants.imaginary_timestep)
    throw CompileError("timestep map " + pattern.name() + " needs the imaginary timestep");
  for (const auto& op : ops)
    if (!op.read.empty() && !(op.timestep == pattern))
      throw CompileError("ops in one layer must share a timestep map");

  LayerParams layer = blank_layer(layout, constants);
  AttentionPlan att(h);
  for (std::size_t r = layout.scratch.begin; r < layout.scratch.end; ++r) att.clear_row(r);
  for (const auto& op : ops)
    for (std::size_t r = op.write.begin; r < op.write.end; ++r) att.clear_row(r);

  // Linear pieces t_r = read_proj avg h[read] + read_bias, t_s = operand_proj h[operand] + operand_bias,
  // added into `row` of x after multiplying by `coef`.
  auto add_read = [&](const RawOp& op, std::size_t i, std::size_t row, double coef) {
    for (std::size_t c = 0; c < op.read.size(); ++c) att.read_coef(row, op.read[c]) += coef * op.read_proj(i, c);
    if (!op.read_bias.empty()) att.read_coef(row, layout.one) += coef * op.read_bias[i];
  };
  auto add_operand = [&](const RawOp& op, std::size_t i, std::size_t row, double coef) {
    for (std::size_t c = 0; c < op.operand.size(); ++c)
      att.self_coef(row, op.operand[c]) += coef * op.operand_proj(i, c);
    if (!op.operand_bias.empty()) att.self_coef(row, layout.one) += coef * op.operand_bias[i];
  };

  // Add-form ops are linear, so the attention block writes them directly and
  // the feed-forward block leaves them alone. Mul-form ops stage t_r and t_s
  // in scratch rows and the feed-forward block forms the products.
  std::vector<std::size_t> slot_base(ops.size(), 0);
  std::size_t cursor = layout.scratch.begin;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const auto& op = ops[k];
    const std::size_t n = op.inner();
    if (op.op == RawOpKind::add) {
      for (std::size_t m = 0; m < op.write.size(); ++m) {
        const std::size_t row = op.write[m];
        for (std::size_t i = 0; i < n; ++i) {
          const double c = op.out_proj(m, i);
          if (c == 0.0) continue;
          add_read(op, i, row, c);
          add_operand(op, i, row, c);
        }
        if (!op.out_bias.empty()) att.self_coef(row, layout.one) += op.out_bias[m];
      }
      continue;
    }
    slot_base[k] = cursor;
    for (std::size_t i = 0; i < n; ++i) {
      add_read(op, i, cursor + i, 1.0);
      add_operand(op, i, cursor + n + i, 1.0);
    }
    cursor += 2 * n;
  }
  att.set_ballast(layout, layout.one, constants.layer_norm_bypass);
  att.emit(layer, layout, pattern, constants.attention);

  // Layer norm maps x to x / (scale * sqrt(2/H)) up to a common factor 1 + O(|x|^2 / scale^2).
  const double recover = constants.layer_norm_bypass * std::sqrt(2.0 / static_cast<double>(h));
  const double ms = constants.mul_scale;
  const double mul_gain = ms * ms * std::sqrt(std::numbers::pi / 2.0);

  MlpPlan mlp(h);
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const auto& op = ops[k];
    if (op.op != RawOpKind::mul) continue;
    const std::size_t n = op.inner();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t tr = slot_base[k] + i;
      const std::size_t ts = slot_base[k] + n + i;
      const std::size_t both = mlp.add_unit({{tr, recover / ms}, {ts, recover / ms}}, 0.0);
      const std::size_t left = mlp.add_unit({{tr, recover / ms}}, 0.0);
      const std::size_t right = mlp.add_unit({{ts, recover / ms}}, 0.0);
      for (std::size_t m = 0; m < op.write.size(); ++m) {
        const double c = op.out_proj(m, i);
        if (c == 0.0) continue;
        mlp.out[both].push_back({op.write[m], c * mul_gain});
        mlp.out[left].push_back({op.write[m], -c * mul_gain});
        mlp.out[right].push_back({op.write[m], -c * mul_gain});
      }
    }
    if (!op.out_bias.empty())
      for (std::size_t m = 0; m < op.write.size(); ++m) mlp.out_bias[op.write[m]] += op.out_bias[m];
  }
  mlp.emit(layer, h);
  return layer;
}

LayerParams compile_op(const RawOp& op, const Layout& layout, const ProgramConstants& constants) {
  return compile_bundle({op}, layout, constants);
}

LayerParams compile_div_layer(const DivOp& op, const Layout& layout, const ProgramConstants& constants) {
  op.validate(layout.data_rows);
  const std::size_t h = layout.hidden;
  const std::size_t n = op.numerator.size();
  if (n > layout.scratch.size()) throw CompileError("scratch overflow in division layer");
  LayerParams layer = blank_layer(layout, constants);
  AttentionPlan att(h);
  for (std::size_t r = layout.scratch.begin; r < layout.scratch.end; ++r) att.clear_row(r);
  const IndexRange slot{layout.scratch.begin, layout.scratch.begin + n};
  for (std::size_t i = 0; i < n; ++i) att.self_coef(slot[i], op.numerator[i]) = 1.0 / constants.div_m;
  for (std::size_t r = op.write.begin; r < op.write.end; ++r) att.clear_row(r);
  att.set_ballast(layout, op.denominator, constants.div_n);
  att.emit(layer, layout, TimestepMap::self(), constants.attention);

  // layer_norm(x)_j ~ x_j / (N |c| sqrt(2/H)), so N M sqrt(2/H) layer_norm(x)[slot] ~ y / |c|.
  const double gain = constants.div_n * constants.div_m * std::sqrt(2.0 / static_cast<double>(h));
  MlpPlan mlp(h);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t u = mlp.add_unit({{slot[i], gain}}, constants.gelu_bypass);
    mlp.out[u].push_back({op.write[i], 1.0});
    mlp.out_bias[op.write[i]] -= constants.gelu_bypass;
  }
  mlp.emit(layer, h);
  return layer;
}

TransformerParams compile(const RawProgram& program, std::size_t max_positions) {
  const Layout layout = plan_layout(program, max_positions);
  TransformerParams params;
  params.hidden = layout.hidden;
  params.token_dim = program.token_dim;
  params.embedding = DenseMatrix(layout.hidden, program.token_dim);
  for (std::size_t r = 0; r < program.token_dim; ++r) params.embedding(r, r) = 1.0;
  params.positions = DenseMatrix(layout.hidden, max_positions);
  const double t_max = static_cast<double>(max_positions);
  auto u = [&](std::size_t t) { return static_cast<double>(t + 1) / t_max; };
  for (std::size_t t = 0; t < max_positions; ++t) {
    params.positions(layout.one, t) = 1.0;
    params.positions(layout.pos, t) = u(t);
    params.positions(layout.pos_sq, t) = u(t) * u(t);
    for (const auto& [k, base] : layout.pattern_rows) {
      const auto target = k.target(t);
      if (!target) continue;
      params.positions(base, t) = 1.0;
      params.positions(base + 1, t) = u(*target);
      params.positions(base + 2, t) = u(*target) * u(*target);
    }
  }
  for (std::size_t s = 0; s < program.steps.size(); ++s) {
    const auto& step = program.steps[s];
    try {
      params.layers.push_back(step.kind == ProgramStep::Kind::div
                                  ? compile_div_layer(step.div, layout, program.constants)
                                  : compile_bundle(step.ops, layout, program.constants));
    } catch (const CompileError& e) {
      throw CompileError(e.what(), s);
    }
  }
  return params;
}

std::vector<DenseMatrix> evaluate_symbolic(const RawProgram& program, const Layout& layout, const DenseMatrix& tokens) {
  const std::size_t rows = layout.data_rows;
  const std::size_t steps = tokens.cols();
  DenseMatrix h(rows, steps);
  for (std::size_t r = 0; r < program.token_dim; ++r)
    for (std::size_t t = 0; t < steps; ++t) h(r, t) = tokens(r, t);
  std::vector<DenseMatrix> out{h};
  for (const auto& step : program.steps) {
    DenseMatrix next = h;
    for (std::size_t i = 0; i < steps; ++i) {
      if (step.kind == ProgramStep::Kind::div) {
        const double c = std::abs(h(step.div.denominator, i));
        for (std::size_t k = 0; k < step.div.numerator.size(); ++k)
          next(step.div.write[k], i) = c == 0.0 ? 0.0 : h(step.div.numerator[k], i) / c;
        continue;
      }
      for (const auto& op : step.ops) {
        const std::size_t n = op.inner();
        Vector read_term(n, 0.0), operand_term(n, 0.0);
        const auto target = op.timestep.target(i);
        if (!op.read.empty() && target) {
          for (std::size_t k = 0; k < n; ++k) {
            double acc = op.read_bias.empty() ? 0.0 : op.read_bias[k];
            for (std::size_t c = 0; c < op.read.size(); ++c) acc += op.read_proj(k, c) * h(op.read[c], *target);
            read_term[k] = acc;
          }
        }
        for (std::size_t k = 0; k < n; ++k) {
          double acc = op.operand_bias.empty() ? 0.0 : op.operand_bias[k];
          for (std::size_t c = 0; c < op.operand.size(); ++c) acc += op.operand_proj(k, c) * h(op.operand[c], i);
          operand_term[k] = acc;
        }
        for (std::size_t m = 0; m < op.write.size(); ++m) {
          double acc = op.out_bias.empty() ? 0.0 : op.out_bias[m];
          for (std::size_t k = 0; k < n; ++k) {
            const double e = op.op == RawOpKind::add ? read_term[k] + operand_term[k] : read_term[k] * operand_term[k];
            acc += op.out_proj(m, k) * e;
          }
          next(op.write[m], i) = acc;
        }
      }
    }
    h = std::move(next);
    out.push_back(h);
  }
  return out;
}

CompiledProgram::CompiledProgram(RawProgram program, std::size_t max_positions)
    : program_(std::move(program)),
      layout_(plan_layout(program_, max_positions)),
      interpreter_(compile(program_, max_positions)) {}

CompiledProgram::CompiledProgram(RawProgram program, TransformerParams params)
    : program_(std::move(program)),
      layout_(plan_layout(program_, params.max_positions())),
      interpreter_(std::move(params)) {
  if (interpreter_.params().hidden != layout_.hidden || interpreter_.params().depth() != program_.steps.size())
    throw CompileError("parameters do not match the program's layout");
}

ExecutionReport CompiledProgram::execute(const DenseMatrix& tokens) const {
  ExecutionReport report;
  report.trace = interpreter_.forward(tokens);
  report.output = report.trace.output()(program_.output_row, tokens.cols() - 1);
  for (std::size_t s = 0; s < program_.steps.size(); ++s) {
    const auto& step = program_.steps[s];
    if (step.kind != ProgramStep::Kind::div) continue;
    const DenseMatrix& in = report.trace.states[s];
    for (std::size_t t = 0; t < tokens.cols(); ++t)
      if (std::abs(in(step.div.denominator, t)) < program_.constants.div_floor)
        report.warnings.push_back("step " + std::to_string(s) + ", token " + std::to_string(t) +
                                  ": denominator below division floor");
  }
  return report;
}

double CompiledProgram::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query) const {
  const DenseMatrix tokens = encode_task(x, y, query);
  return interpreter_.run(tokens)(program_.output_row, tokens.cols() - 1);
}

}  // namespace rawicl
