#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rawicl/numerics.hpp"

namespace rawicl {

/// One decoder layer:
///   a_i  = head_merge [b_1; ...; b_m],  b_j = softmax((Q_j h_i)^T K_j H_{:i}) V_j H_{:i}
///   h'_i = mlp_out gelu(mlp_in layer_norm(a_i + h_i) + mlp_in_bias) + mlp_out_bias + a_i + h_i
/// mlp_in is the first feed-forward matrix (W_2 in the usual write-up of this
/// block) and mlp_out the second (W_1).
struct LayerParams {
  std::vector<DenseMatrix> query;  // per head, hidden x hidden
  std::vector<DenseMatrix> key;
  std::vector<DenseMatrix> value;
  DenseMatrix head_merge;          // hidden x (heads * hidden)
  DenseMatrix mlp_in;              // width x hidden
  Vector mlp_in_bias;              // width
  DenseMatrix mlp_out;             // hidden x width
  Vector mlp_out_bias;             // hidden
  bool layer_norm_enabled = true;
  /// Prepend a constant zero logit (with a zero value vector) to every
  /// attention row, so a query can attend to "nothing".
  bool imaginary_timestep_enabled = true;

  std::size_t heads() const { return query.size(); }
  std::size_t mlp_width() const { return mlp_in.rows(); }

  /// All-zero layer of the given shape (an exact identity map).
  static LayerParams zeros(std::size_t hidden, std::size_t heads, std::size_t width);
  /// Throws NumericError if any matrix disagrees with `hidden`.
  void validate(std::size_t hidden) const;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct TransformerParams {
  std::size_t hidden = 0;
  std::size_t token_dim = 0;
  DenseMatrix embedding;  // hidden x token_dim
  DenseMatrix positions;  // hidden x max_positions, column t is p_t
  std::vector<LayerParams> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t max_positions() const { return positions.cols(); }
  void validate() const;

  friend bool operator==(const TransformerParams&, const TransformerParams&) = default;
};

/// states[l] is H^(l), hidden x T; states[0] is the embedded input.
struct HiddenTrace {
  std::vector<DenseMatrix> states;
  const DenseMatrix& layer(std::size_t l) const { return states.at(l); }
  const DenseMatrix& output() const { return states.back(); }
};

/// Regression prompt laid out as columns [0;x_1], [y_1;0], ..., [0;x_query].
DenseMatrix encode_task(const DenseMatrix& x, std::span<const double> y, std::span<const double> query);

struct DecodedTask {
  DenseMatrix x;
  Vector y;
  Vector query;
};
DecodedTask decode_task(const DenseMatrix& tokens);

/// Precomputes sparse forms of a parameter set and runs forward passes.
class Interpreter {
 public:
  explicit Interpreter(TransformerParams params);

  const TransformerParams& params() const { return params_; }
  HiddenTrace forward(const DenseMatrix& tokens) const;
  /// Final hidden state only.
  DenseMatrix run(const DenseMatrix& tokens) const;

 private:
  struct Sparse {
    std::size_t rows = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<std::size_t> col;
    std::vector<double> val;
    static Sparse from(const DenseMatrix& m);
    void apply(std::span<const double> x, std::span<double> out) const;
  };
  struct CompiledLayer {
    std::vector<Sparse> query, key, value;
    Sparse head_merge, mlp_in, mlp_out;
  };

  DenseMatrix apply_layer(std::size_t index, const DenseMatrix& h) const;

  TransformerParams params_;
  std::vector<CompiledLayer> compiled_;
};

HiddenTrace forward(const TransformerParams& params, const DenseMatrix& tokens);

}  // namespace rawicl
