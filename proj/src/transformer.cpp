#include "rawicl/transformer.hpp"

#include <cmath>
#include <string>

namespace rawicl {

LayerParams LayerParams::zeros(std::size_t hidden, std::size_t heads, std::size_t width) {
  LayerParams p;
  for (std::size_t j = 0; j < heads; ++j) {
    p.query.emplace_back(hidden, hidden);
    p.key.emplace_back(hidden, hidden);
    p.value.emplace_back(hidden, hidden);
  }
  p.head_merge = DenseMatrix(hidden, heads * hidden);
  p.mlp_in = DenseMatrix(width, hidden);
  p.mlp_in_bias.assign(width, 0.0);
  p.mlp_out = DenseMatrix(hidden, width);
  p.mlp_out_bias.assign(hidden, 0.0);
  return p;
}

void LayerParams::validate(std::size_t hidden) const {
  const std::size_t m = heads();
  if (m == 0) throw NumericError("layer: at least one head required");
  if (key.size() != m || value.size() != m) throw NumericError("layer: query/key/value head counts differ");
  for (std::size_t j = 0; j < m; ++j)
    for (const DenseMatrix* w : {&query[j], &key[j], &value[j]})
      if (w->rows() != hidden || w->cols() != hidden) throw NumericError("layer: head projection must be hidden x hidden");
  if (head_merge.rows() != hidden || head_merge.cols() != m * hidden)
    throw NumericError("layer: head_merge must be hidden x (heads*hidden)");
  const std::size_t width = mlp_in.rows();
  if (mlp_in.cols() != hidden || mlp_in_bias.size() != width) throw NumericError("layer: mlp_in shape");
  if (mlp_out.rows() != hidden || mlp_out.cols() != width || mlp_out_bias.size() != hidden)
    throw NumericError("layer: mlp_out shape");
}

void TransformerParams::validate() const {
  if (embedding.rows() != hidden || embedding.cols() != token_dim) throw NumericError("params: embedding must be hidden x token_dim");
  if (positions.rows() != hidden) throw NumericError("params: positions must have hidden rows");
  for (const auto& l : layers) l.validate(hidden);
}

DenseMatrix encode_task(const DenseMatrix& x, std::span<const double> y, std::span<const double> query) {
  const std::size_t n = x.rows();
  const std::size_t d = query.size();
  if (y.size() != n) throw NumericError("encode_task: y length differs from number of examples");
  if (n > 0 && x.cols() != d) throw NumericError("encode_task: query dimension differs from X");
  DenseMatrix tokens(d + 1, 2 * n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) tokens(1 + k, 2 * i) = x(i, k);
    tokens(0, 2 * i + 1) = y[i];
  }
  for (std::size_t k = 0; k < d; ++k) tokens(1 + k, 2 * n) = query[k];
  return tokens;
}

DecodedTask decode_task(const DenseMatrix& tokens) {
  if (tokens.rows() < 1 || tokens.cols() % 2 != 1) throw NumericError("decode_task: expected odd token count");
  const std::size_t d = tokens.rows() - 1;
  const std::size_t n = tokens.cols() / 2;
  DecodedTask out{DenseMatrix(n, d), Vector(n), Vector(d)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) out.x(i, k) = tokens(1 + k, 2 * i);
    out.y[i] = tokens(0, 2 * i + 1);
  }
  for (std::size_t k = 0; k < d; ++k) out.query[k] = tokens(1 + k, 2 * n);
  return out;
}

Interpreter::Sparse Interpreter::Sparse::from(const DenseMatrix& m) {
  Sparse s;
  s.rows = m.rows();
  s.row_ptr.reserve(m.rows() + 1);
  s.row_ptr.push_back(0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0.0) {
        s.col.push_back(c);
        s.val.push_back(m(r, c));
      }
    }
    s.row_ptr.push_back(s.col.size());
  }
  return s;
}

void Interpreter::Sparse::apply(std::span<const double> x, std::span<double> out) const {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) acc += val[k] * x[col[k]];
    out[r] = acc;
  }
}

Interpreter::Interpreter(TransformerParams params) : params_(std::move(params)) {
  params_.validate();
  compiled_.reserve(params_.layers.size());
  for (const auto& l : params_.layers) {
    CompiledLayer c;
    for (std::size_t j = 0; j < l.heads(); ++j) {
      c.query.push_back(Sparse::from(l.query[j]));
      c.key.push_back(Sparse::from(l.key[j]));
      c.value.push_back(Sparse::from(l.value[j]));
    }
    c.head_merge = Sparse::from(l.head_merge);
    c.mlp_in = Sparse::from(l.mlp_in);
    c.mlp_out = Sparse::from(l.mlp_out);
    compiled_.push_back(std::move(c));
  }
}

namespace {

void check_finite(std::span<const double> v, std::size_t layer, std::size_t t, const char* stage) {
  for (double e : v)
    if (!std::isfinite(e))
      throw NumericError("non-finite " + std::string(stage) + " at layer " + std::to_string(layer) +
                         ", timestep " + std::to_string(t));
}

}  // namespace

DenseMatrix Interpreter::apply_layer(std::size_t index, const DenseMatrix& h) const {
  const LayerParams& lp = params_.layers[index];
  const CompiledLayer& cl = compiled_[index];
  const std::size_t hidden = params_.hidden;
  const std::size_t steps = h.cols();
  const std::size_t heads = lp.heads();
  const std::size_t width = lp.mlp_width();

  // Column-major copies: cols[t] is h_t.
  std::vector<Vector> cols(steps);
  for (std::size_t t = 0; t < steps; ++t) cols[t] = h.column(t);

  std::vector<std::vector<Vector>> q(heads, std::vector<Vector>(steps, Vector(hidden)));
  auto k = q;
  auto v = q;
  for (std::size_t j = 0; j < heads; ++j)
    for (std::size_t t = 0; t < steps; ++t) {
      cl.query[j].apply(cols[t], q[j][t]);
      cl.key[j].apply(cols[t], k[j][t]);
      cl.value[j].apply(cols[t], v[j][t]);
    }

  DenseMatrix out(hidden, steps);
  Vector heads_out(heads * hidden);
  Vector a(hidden), x(hidden), u(width), m(hidden);
  Vector logits;
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j < heads; ++j) {
      const std::size_t offset = lp.imaginary_timestep_enabled ? 1 : 0;
      logits.assign(i + 1 + offset, 0.0);
      for (std::size_t s = 0; s <= i; ++s) logits[s + offset] = dot(q[j][i], k[j][s]);
      check_finite(logits, index, i, "attention logit");
      const Vector alpha = softmax(logits);
      std::span<double> b(heads_out.data() + j * hidden, hidden);
      std::fill(b.begin(), b.end(), 0.0);
      for (std::size_t s = 0; s <= i; ++s) {
        const double w = alpha[s + offset];
        if (w == 0.0) continue;
        for (std::size_t r = 0; r < hidden; ++r) b[r] += w * v[j][s][r];
      }
    }
    cl.head_merge.apply(heads_out, a);
    for (std::size_t r = 0; r < hidden; ++r) x[r] = a[r] + cols[i][r];
    check_finite(x, index, i, "attention output");

    const Vector normed = lp.layer_norm_enabled ? layer_norm(x) : x;
    cl.mlp_in.apply(normed, u);
    for (std::size_t r = 0; r < width; ++r) u[r] = gelu(u[r] + lp.mlp_in_bias[r]);
    cl.mlp_out.apply(u, m);
    for (std::size_t r = 0; r < hidden; ++r) out(r, i) = m[r] + lp.mlp_out_bias[r] + x[r];
    check_finite(out.column(i), index, i, "layer output");
  }
  return out;
}

HiddenTrace Interpreter::forward(const DenseMatrix& tokens) const {
  if (tokens.rows() != params_.token_dim) throw NumericError("forward: token dimension mismatch");
  if (tokens.cols() > params_.max_positions())
    throw NumericError("forward: sequence longer than position embedding count");
  DenseMatrix h0 = params_.embedding * tokens;
  for (std::size_t r = 0; r < params_.hidden; ++r)
    for (std::size_t t = 0; t < tokens.cols(); ++t) h0(r, t) += params_.positions(r, t);
  if (!h0.all_finite()) throw NumericError("forward: non-finite embedded input");

  HiddenTrace trace;
  trace.states.reserve(params_.layers.size() + 1);
  trace.states.push_back(std::move(h0));
  for (std::size_t l = 0; l < params_.layers.size(); ++l)
    trace.states.push_back(apply_layer(l, trace.states.back()));
  return trace;
}

DenseMatrix Interpreter::run(const DenseMatrix& tokens) const { return forward(tokens).output(); }

HiddenTrace forward(const TransformerParams& params, const DenseMatrix& tokens) {
  return Interpreter(params).forward(tokens);
}

}  // namespace rawicl
