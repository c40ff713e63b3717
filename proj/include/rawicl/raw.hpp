#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rawicl/numerics.hpp"
#include "rawicl/transformer.hpp"

namespace rawicl {

/// Raised for malformed or unsatisfiable programs. `step` is the offending
/// step index when known.
class CompileError : public std::runtime_error {
 public:
  explicit CompileError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : std::runtime_error(step ? "step " + std::to_string(*step) + ": " + what : what), step_(step) {}
  std::optional<std::size_t> step() const { return step_; }

 private:
  std::optional<std::size_t> step_;
};

/// Half-open row interval [begin, end) into the hidden vector.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return size() == 0; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool overlaps(const IndexRange& o) const { return !empty() && !o.empty() && begin < o.end && o.begin < end; }
  std::size_t operator[](std::size_t k) const { return begin + k; }

  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Which earlier tokens each position reads from (0-based token indices).
struct TimestepMap {
  enum class Kind { self, previous_token, fixed_token, empty_before };
  Kind kind = Kind::self;
  std::size_t token = 0;  // used by fixed_token and empty_before

  static TimestepMap self() { return {Kind::self, 0}; }
  static TimestepMap previous() { return {Kind::previous_token, 0}; }
  /// K(i) = {t} for i >= t, empty before.
  static TimestepMap fixed(std::size_t t) { return {Kind::fixed_token, t}; }
  /// K(i) = {i} for i >= t, empty before.
  static TimestepMap empty_before(std::size_t t) { return {Kind::empty_before, t}; }

  /// Token attended by position i, or nullopt when K(i) is empty.
  std::optional<std::size_t> target(std::size_t i) const;
  bool can_be_empty() const { return kind != Kind::self; }
  std::string name() const;

  friend bool operator==(const TimestepMap&, const TimestepMap&) = default;
  friend auto operator<=>(const TimestepMap&, const TimestepMap&) = default;
};

enum class RawOpKind { add, mul };

/// One Read-Arithmetic-Write operation:
///   h_i[write] <- out_proj((read_proj avg_{k in K(i)} h_k[read] + read_bias)
///                          (+ or .*) (operand_proj h_i[operand] + operand_bias)) + out_bias
/// Every other row is carried through unchanged.
struct RawOp {
  RawOpKind op = RawOpKind::add;
  IndexRange read;
  IndexRange operand;
  IndexRange write;
  DenseMatrix read_proj;     // inner x |read|
  DenseMatrix operand_proj;  // inner x |operand|
  DenseMatrix out_proj;      // |write| x inner
  Vector read_bias;          // inner, empty = zero
  Vector operand_bias;       // inner, empty = zero
  Vector out_bias;           // |write|, empty = zero
  TimestepMap timestep = TimestepMap::self();
  std::string label;

  std::size_t inner() const { return out_proj.cols(); }
  /// Checks shapes and that every range lies inside [0, rows).
  void validate(std::size_t rows) const;

  friend bool operator==(const RawOp&, const RawOp&) = default;
};

/// h_i[write] <- h_i[numerator] / |h_i[denominator]|, realised through layer norm.
struct DivOp {
  IndexRange numerator;
  std::size_t denominator = 0;
  IndexRange write;
  std::string label;

  void validate(std::size_t rows) const;
  friend bool operator==(const DivOp&, const DivOp&) = default;
};

/// One transformer layer: either a bundle of independent RAW ops sharing a
/// timestep map, or a single division.
struct ProgramStep {
  enum class Kind { raw, div };
  Kind kind = Kind::raw;
  std::vector<RawOp> ops;
  DivOp div;
  std::string label;

  friend bool operator==(const ProgramStep&, const ProgramStep&) = default;
};

struct ProgramConstants {
  double gelu_bypass = 30.0;        // GeLU(N + x) - N == x
  double layer_norm_bypass = 1e4;   // ballast magnitude in non-division layers
  double mul_scale = 1e3;           // operands divided by this before the GeLU product
  double div_n = 1e4;               // ballast scale of the division layer
  double div_m = 1e2;               // numerator down-scale of the division layer
  double div_floor = 0.5;           // smallest |denominator| the division contract covers
  double attention = 40.0;          // attention logit saturation
  bool imaginary_timestep = true;

  friend bool operator==(const ProgramConstants&, const ProgramConstants&) = default;
};

/// Ordered RAW steps over a token layout with `token_dim` input rows.
struct RawProgram {
  std::string kind = "custom";
  std::size_t token_dim = 0;  // rows 0..token_dim-1 hold the encoded token
  std::size_t data_rows = 0;  // rows addressable by ops; scratch is appended by the compiler
  std::size_t hidden = 0;     // requested hidden size, 0 = smallest that fits
  std::size_t output_row = 0; // result row, read at the last token
  std::size_t examples = 1;   // in-context examples expected; sequences have 2*examples+1 tokens
  ProgramConstants constants;
  std::vector<ProgramStep> steps;
  /// Named data-row regions (documentation, probing targets, tests).
  std::map<std::string, IndexRange> regions;

  void validate() const;
  friend bool operator==(const RawProgram&, const RawProgram&) = default;
};

/// Row assignment of a compiled program.
struct Layout {
  std::size_t data_rows = 0;
  std::size_t one = 0;       // constant 1 at every position
  std::size_t pos = 0;       // (t+1)/T
  std::size_t pos_sq = 0;    // ((t+1)/T)^2
  std::map<TimestepMap, std::size_t> pattern_rows;  // base of (gate, gate*u, gate*u^2)
  IndexRange scratch;
  std::size_t ballast_hi = 0;
  std::size_t ballast_lo = 0;
  std::size_t hidden = 0;
  std::size_t max_positions = 0;
};

/// Lays out rows for `program` run on sequences of up to `max_positions` tokens.
Layout plan_layout(const RawProgram& program, std::size_t max_positions);

/// Checks the independence condition of a parallel bundle: every op's
/// read/operand/write rows are disjoint from every other op's write rows,
/// and all ops share one timestep map. Throws CompileError naming the pairs.
void check_parallel(const std::vector<RawOp>& ops);

/// Bundles independent ops into one step (one layer).
ProgramStep fuse_parallel(std::vector<RawOp> ops, std::string label = {});

LayerParams compile_op(const RawOp& op, const Layout& layout, const ProgramConstants& constants);
LayerParams compile_bundle(const std::vector<RawOp>& ops, const Layout& layout, const ProgramConstants& constants);
LayerParams compile_div_layer(const DivOp& op, const Layout& layout, const ProgramConstants& constants);

/// Lowers a whole program into transformer weights.
TransformerParams compile(const RawProgram& program, std::size_t max_positions);

/// Direct evaluation of the program semantics (no transformer), one
/// hidden-state matrix per step boundary. Used as the symbolic oracle.
std::vector<DenseMatrix> evaluate_symbolic(const RawProgram& program, const Layout& layout,
                                           const DenseMatrix& tokens);

// ---- Program builders -------------------------------------------------

struct SgdConfig {
  std::size_t d = 2;
  std::size_t examples = 1;
  Vector w0;  // empty = zeros
  double alpha = 0.25;
  double lambda = 0.0;
};

/// One SGD step on one in-context example, then predict on the query.
RawProgram program_sgd_step(std::size_t d, const Vector& w0, double alpha, double lambda);
/// One pass of single-example SGD over `examples` in-context examples.
RawProgram program_sgd_multi_step(std::size_t d, std::size_t examples, double alpha, double lambda);
RawProgram program_sgd(const SgdConfig& config);
/// One Sherman-Morrison ridge update from I/lambda on one example.
RawProgram program_sherman_morrison(std::size_t d, double lambda);

/// Row-major (a x b) * (b x c) product as a bundle of a*c parallel dot products.
ProgramStep matmul_step(std::size_t a, std::size_t b, std::size_t c, IndexRange lhs, IndexRange rhs,
                        IndexRange out, std::string label = {});

// ---- Execution helpers ------------------------------------------------

struct ExecutionReport {
  HiddenTrace trace;
  double output = 0.0;
  /// Division layers whose denominator fell below the floor: "step s, token t".
  std::vector<std::string> warnings;
};

class CompiledProgram {
 public:
  CompiledProgram(RawProgram program, std::size_t max_positions);
  CompiledProgram(RawProgram program, TransformerParams params);

  const RawProgram& program() const { return program_; }
  const Layout& layout() const { return layout_; }
  const TransformerParams& params() const { return interpreter_.params(); }
  const Interpreter& interpreter() const { return interpreter_; }

  ExecutionReport execute(const DenseMatrix& tokens) const;
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query) const;

 private:
  RawProgram program_;
  Layout layout_;
  Interpreter interpreter_;
};

}  // namespace rawicl
