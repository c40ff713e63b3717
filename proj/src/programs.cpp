#include <cmath>

#include "rawicl/raw.hpp"

namespace rawicl {

namespace {

DenseMatrix ones(std::size_t rows, std::size_t cols) { return DenseMatrix(rows, cols, 1.0); }

DenseMatrix scaled_identity(std::size_t n, double s) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = s;
  return m;
}

IndexRange span_of(std::size_t begin, std::size_t n) { return {begin, begin + n}; }

ProgramStep single(RawOp op) {
  ProgramStep step;
  step.label = op.label;
  step.ops.push_back(std::move(op));
  return step;
}

/// h[write] <- h_{K(i)}[read]
RawOp mov(IndexRange read, IndexRange write, TimestepMap k, std::string label) {
  RawOp op;
  op.read = read;
  op.write = write;
  op.read_proj = DenseMatrix::identity(read.size());
  op.out_proj = DenseMatrix::identity(read.size());
  op.timestep = k;
  op.label = std::move(label);
  return op;
}

/// h[write] <- a * h[read] + b * h[operand], both from the current token.
RawOp combine(IndexRange read, double a, IndexRange operand, double b, IndexRange write, std::string label) {
  RawOp op;
  const std::size_t n = write.size();
  op.read = read;
  op.operand = operand;
  op.write = write;
  op.read_proj = scaled_identity(n, a);
  op.operand_proj = scaled_identity(n, b);
  op.out_proj = DenseMatrix::identity(n);
  op.label = std::move(label);
  return op;
}

/// h[write] <- sum_k h[a]_k h[b]_k, both from the current token.
RawOp dot_op(IndexRange a, IndexRange b, std::size_t write, std::string label) {
  RawOp op;
  op.op = RawOpKind::mul;
  op.read = a;
  op.operand = b;
  op.write = span_of(write, 1);
  op.read_proj = DenseMatrix::identity(a.size());
  op.operand_proj = DenseMatrix::identity(b.size());
  op.out_proj = ones(1, a.size());
  op.label = std::move(label);
  return op;
}

/// h[write] <- h[vec] * h[scalar] elementwise.
RawOp scale_op(std::size_t scalar, IndexRange vec, IndexRange write, std::string label) {
  RawOp op;
  op.op = RawOpKind::mul;
  op.read = span_of(scalar, 1);
  op.operand = vec;
  op.write = write;
  op.read_proj = ones(vec.size(), 1);
  op.operand_proj = DenseMatrix::identity(vec.size());
  op.out_proj = DenseMatrix::identity(vec.size());
  op.label = std::move(label);
  return op;
}

/// h[write] <- value.
RawOp write_const(IndexRange write, const Vector& value, std::string label) {
  RawOp op;
  op.write = write;
  op.out_proj = DenseMatrix(write.size(), 1);
  op.out_bias = value;
  op.label = std::move(label);
  return op;
}

struct SgdRows {
  std::size_t y, p, e, out;
  IndexRange x, xp, g, wr, r;
  std::size_t data_rows;
};

SgdRows sgd_rows(std::size_t d) {
  SgdRows s;
  s.y = 0;
  s.x = span_of(1, d);
  s.xp = span_of(1 + d, d);
  s.p = 1 + 2 * d;
  s.e = 2 + 2 * d;
  s.g = span_of(3 + 2 * d, d);
  s.wr = span_of(3 + 3 * d, d);
  s.r = span_of(3 + 4 * d, d);
  s.out = 3 + 5 * d;
  s.data_rows = 4 + 5 * d;
  return s;
}

/// E = P - Y, G = XP * E, R = G + lambda WR, WR <- WR - 2 alpha R.
void sgd_update_tail(std::vector<ProgramStep>& steps, const SgdRows& s, std::size_t d, double alpha, double lambda,
                     bool first, const Vector& w0) {
  steps.push_back(single(combine(span_of(s.y, 1), -1.0, span_of(s.p, 1), 1.0, span_of(s.e, 1), "residual")));
  steps.push_back(single(scale_op(s.e, s.xp, s.g, "gradient")));
  if (first) steps.push_back(single(write_const(s.wr, w0, "write w")));
  steps.push_back(single(combine(s.g, 1.0, s.wr, lambda, s.r, "regularized gradient")));
  steps.push_back(single(combine(s.r, -2.0 * alpha, s.wr, 1.0, s.wr, "update w")));
  (void)d;
}

RawProgram sgd_base(std::size_t d, const SgdRows& s, std::string kind) {
  RawProgram p;
  p.kind = std::move(kind);
  p.token_dim = d + 1;
  p.data_rows = s.data_rows;
  p.output_row = s.out;
  p.regions = {{"y", span_of(s.y, 1)}, {"x", s.x},          {"x_prev", s.xp},          {"prediction", span_of(s.p, 1)},
               {"residual", span_of(s.e, 1)}, {"gradient", s.g}, {"w", s.wr},       {"regularized_gradient", s.r},
               {"output", span_of(s.out, 1)}};
  return p;
}

}  // namespace

RawProgram program_sgd(const SgdConfig& config) {
  const std::size_t d = config.d;
  if (d == 0) throw CompileError("d must be positive");
  if (config.examples == 0) throw CompileError("need at least one example");
  if (!std::isfinite(config.alpha) || !std::isfinite(config.lambda)) throw CompileError("alpha and lambda must be finite");
  Vector w0 = config.w0.empty() ? Vector(d, 0.0) : config.w0;
  if (w0.size() != d) throw CompileError("w0 has length " + std::to_string(w0.size()) + ", expected " + std::to_string(d));

  const SgdRows s = sgd_rows(d);
  RawProgram p = sgd_base(d, s, config.examples == 1 ? "sgd_step" : "sgd_multi_step");
  p.examples = config.examples;
  auto& steps = p.steps;
  steps.push_back(single(mov(s.x, s.xp, TimestepMap::previous(), "move x")));
  {
    RawOp pred;
    pred.operand = s.xp;
    pred.write = span_of(s.p, 1);
    pred.operand_proj = DenseMatrix(1, d);
    for (std::size_t k = 0; k < d; ++k) pred.operand_proj(0, k) = w0[k];
    pred.out_proj = ones(1, 1);
    pred.label = "w^T x";
    steps.push_back(single(std::move(pred)));
  }
  sgd_update_tail(steps, s, d, config.alpha, config.lambda, true, w0);
  for (std::size_t k = 1; k < config.examples; ++k) {
    // Example k sits at token 2k+1; w from the previous block sits at token 2k-1.
    steps.push_back(single(mov(s.wr, s.wr, TimestepMap::previous(), "move w")));
    steps.push_back(single(mov(s.wr, s.wr, TimestepMap::previous(), "move w")));
    steps.push_back(single(dot_op(s.xp, s.wr, s.p, "w^T x")));
    sgd_update_tail(steps, s, d, config.alpha, config.lambda, false, w0);
  }
  steps.push_back(single(mov(s.wr, s.wr, TimestepMap::previous(), "move w")));
  steps.push_back(single(dot_op(s.wr, s.x, s.out, "w^T x_query")));
  return p;
}

RawProgram program_sgd_step(std::size_t d, const Vector& w0, double alpha, double lambda) {
  return program_sgd({d, 1, w0, alpha, lambda});
}

RawProgram program_sgd_multi_step(std::size_t d, std::size_t examples, double alpha, double lambda) {
  if (examples == 0) throw CompileError("n_examples must be at least 1");
  return program_sgd({d, examples, {}, alpha, lambda});
}

ProgramStep matmul_step(std::size_t a, std::size_t b, std::size_t c, IndexRange lhs, IndexRange rhs, IndexRange out,
                        std::string label) {
  if (lhs.size() != a * b || rhs.size() != b * c || out.size() != a * c)
    throw CompileError("matmul ranges do not match " + std::to_string(a) + "x" + std::to_string(b) + " * " +
                       std::to_string(b) + "x" + std::to_string(c));
  std::vector<RawOp> ops;
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      RawOp op;
      op.op = RawOpKind::mul;
      op.read = span_of(lhs.begin + i * b, b);
      op.operand = rhs;
      op.write = span_of(out.begin + i * c + j, 1);
      op.read_proj = DenseMatrix::identity(b);
      op.operand_proj = DenseMatrix(b, b * c);
      for (std::size_t k = 0; k < b; ++k) op.operand_proj(k, k * c + j) = 1.0;
      op.out_proj = ones(1, b);
      op.label = label + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
      ops.push_back(std::move(op));
    }
  return fuse_parallel(std::move(ops), std::move(label));
}

RawProgram program_sherman_morrison(std::size_t d, double lambda) {
  if (d == 0) throw CompileError("d must be positive");
  RawProgram p;
  if (!(lambda > 0.0)) throw CompileError("lambda must be positive");
  if (lambda < p.constants.div_floor)
    throw CompileError("lambda " + std::to_string(lambda) + " is below the division floor " +
                       std::to_string(p.constants.div_floor));
  const std::size_t d2 = d * d;
  std::size_t next = 0;
  auto take = [&](std::size_t n) {
    IndexRange r = span_of(next, n);
    next += n;
    return r;
  };
  const IndexRange y = take(1), x = take(d), xp = take(d), xy = take(d), a = take(d2), au = take(d), va = take(d),
                   uv = take(d2), s = take(1), rt = take(d2), ax = take(d), wp = take(d), out = take(1);
  p.kind = "sherman_morrison";
  p.token_dim = d + 1;
  p.data_rows = next;
  p.output_row = out.begin;
  p.regions = {{"y", y},       {"x", x},   {"x_prev", xp}, {"xy", xy}, {"a_inv", a},       {"a_inv_u", au},
               {"v_a_inv", va}, {"outer", uv}, {"denominator", s}, {"right_term", rt}, {"a_inv_x", ax},
               {"w", wp},       {"output", out}};
  Vector identity(d2, 0.0);
  for (std::size_t i = 0; i < d; ++i) identity[i * d + i] = 1.0 / lambda;

  auto& steps = p.steps;
  steps.push_back(single(mov(x, xp, TimestepMap::previous(), "move x")));
  steps.push_back(single(scale_op(y.begin, xp, xy, "x y")));
  steps.push_back(single(write_const(a, identity, "A0^-1 = I/lambda")));
  steps.push_back(matmul_step(d, d, 1, a, xp, au, "A0^-1 u"));
  steps.push_back(matmul_step(1, d, d, xp, a, va, "v^T A0^-1"));
  steps.push_back(matmul_step(d, 1, d, au, va, uv, "A0^-1 u v^T A0^-1"));
  steps.push_back(matmul_step(1, d, 1, va, xp, s, "v^T A0^-1 u"));
  {
    RawOp inc;
    inc.operand = s;
    inc.write = s;
    inc.operand_proj = ones(1, 1);
    inc.out_proj = ones(1, 1);
    inc.out_bias = {1.0};
    inc.label = "1 + v^T A0^-1 u";
    steps.push_back(single(std::move(inc)));
  }
  {
    ProgramStep div;
    div.kind = ProgramStep::Kind::div;
    div.div = {uv, s.begin, rt, "right term"};
    div.label = "right term";
    steps.push_back(std::move(div));
  }
  steps.push_back(single(combine(rt, -1.0, a, 1.0, a, "A1^-1")));
  steps.push_back(matmul_step(d, d, 1, a, xp, ax, "A1^-1 x"));
  steps.push_back(single(scale_op(y.begin, ax, wp, "A1^-1 x y")));
  steps.push_back(single(mov(wp, wp, TimestepMap::previous(), "move w")));
  steps.push_back(single(dot_op(wp, x, out.begin, "w^T x_query")));
  return p;
}

}  // namespace rawicl
