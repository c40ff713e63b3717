#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rawicl/raw.hpp"
#include "rawicl/transformer.hpp"

using namespace rawicl;

namespace {

DenseMatrix random_dense(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale) {
  return DenseMatrix::from_rows(oracle::random_matrix(rng, r, c, -scale, scale));
}

TransformerParams random_params(std::uint64_t seed, std::size_t hidden, std::size_t token_dim, std::size_t depth,
                                std::size_t heads, std::size_t width, std::size_t positions) {
  std::mt19937_64 rng(seed);
  TransformerParams p;
  p.hidden = hidden;
  p.token_dim = token_dim;
  p.embedding = random_dense(rng, hidden, token_dim, 1.0);
  p.positions = random_dense(rng, hidden, positions, 1.0);
  for (std::size_t l = 0; l < depth; ++l) {
    LayerParams lp = LayerParams::zeros(hidden, heads, width);
    for (std::size_t j = 0; j < heads; ++j) {
      lp.query[j] = random_dense(rng, hidden, hidden, 0.5);
      lp.key[j] = random_dense(rng, hidden, hidden, 0.5);
      lp.value[j] = random_dense(rng, hidden, hidden, 0.5);
    }
    lp.head_merge = random_dense(rng, hidden, heads * hidden, 0.3);
    lp.mlp_in = random_dense(rng, width, hidden, 0.5);
    lp.mlp_out = random_dense(rng, hidden, width, 0.3);
    lp.mlp_in_bias = oracle::random_vector(rng, width, -0.1, 0.1);
    lp.mlp_out_bias = oracle::random_vector(rng, hidden, -0.1, 0.1);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

DenseMatrix random_tokens(std::uint64_t seed, std::size_t token_dim, std::size_t steps) {
  std::mt19937_64 rng(seed);
  return random_dense(rng, token_dim, steps, 1.0);
}

}  // namespace

TEST_CASE("encode_task lays out alternating x and y columns") {
  const DenseMatrix tokens = encode_task(DenseMatrix{{1, 2}}, Vector{3}, Vector{4, 5});
  const DenseMatrix want{{0, 3, 0}, {1, 0, 4}, {2, 0, 5}};
  CHECK(tokens == want);

  const DenseMatrix q_only = encode_task(DenseMatrix(0, 2), Vector{}, Vector{7, 8});
  CHECK(q_only == DenseMatrix{{0}, {7}, {8}});
  CHECK_THROWS(encode_task(DenseMatrix{{1, 2}}, Vector{3, 4}, Vector{4, 5}));
}

TEST_CASE("decode_task inverts encode_task") {
  std::mt19937_64 rng(2);
  const auto x = DenseMatrix::from_rows(oracle::random_matrix(rng, 4, 3));
  const auto y = oracle::random_vector(rng, 4);
  const auto q = oracle::random_vector(rng, 3);
  const DecodedTask back = decode_task(encode_task(x, y, q));
  CHECK(back.x == x);
  CHECK(back.y == y);
  CHECK(back.query == q);
}

TEST_CASE("zero weights leave every hidden state equal to the input") {
  TransformerParams p = random_params(1, 6, 3, 3, 2, 4, 5);
  for (auto& l : p.layers) l = LayerParams::zeros(6, 2, 4);
  const HiddenTrace trace = forward(p, random_tokens(9, 3, 5));
  for (std::size_t l = 1; l < trace.states.size(); ++l) CHECK(trace.states[l] == trace.states[0]);
}

TEST_CASE("attend-to-self with zero values and zero MLP is the identity") {
  TransformerParams p = random_params(4, 5, 3, 1, 1, 3, 4);
  LayerParams& l = p.layers[0];
  l = LayerParams::zeros(5, 1, 3);
  l.query[0] = DenseMatrix::identity(5);
  l.key[0] = 30.0 * DenseMatrix::identity(5);
  const HiddenTrace trace = forward(p, random_tokens(5, 3, 4));
  CHECK(trace.output() == trace.states[0]);
}

TEST_CASE("causality: perturbing token t leaves earlier timesteps untouched") {
  const TransformerParams p = random_params(7, 6, 3, 3, 2, 5, 6);
  const DenseMatrix tokens = random_tokens(8, 3, 6);
  const HiddenTrace base = forward(p, tokens);
  for (std::size_t t = 0; t < 6; ++t) {
    DenseMatrix changed = tokens;
    changed(1, t) += 0.7;
    const HiddenTrace other = forward(p, changed);
    for (std::size_t l = 0; l < base.states.size(); ++l)
      for (std::size_t s = 0; s < t; ++s) CHECK(base.states[l].column(s) == other.states[l].column(s));
    CHECK(base.states.back().column(t) != other.states.back().column(t));
  }
}

TEST_CASE("forward is deterministic") {
  const TransformerParams p = random_params(10, 7, 3, 4, 2, 6, 5);
  const DenseMatrix tokens = random_tokens(11, 3, 5);
  const HiddenTrace a = forward(p, tokens), b = forward(p, tokens);
  for (std::size_t l = 0; l < a.states.size(); ++l) CHECK(a.states[l] == b.states[l]);
}

TEST_CASE("shape errors") {
  const TransformerParams p = random_params(12, 4, 2, 1, 1, 2, 3);
  CHECK_THROWS_AS(forward(p, random_tokens(1, 3, 2)), NumericError);  // wrong token dim
  CHECK_THROWS_AS(forward(p, random_tokens(1, 2, 4)), NumericError);  // longer than the position budget
  TransformerParams bad = p;
  bad.layers[0].mlp_in = DenseMatrix(2, 5);
  CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("relabelling padding rows outside the embedding's range changes no output") {
  // Conjugate every weight by a permutation that swaps two rows the embedding never writes.
  const CompiledProgram compiled(program_sgd_step(2, {}, 0.25, 0.0), 3);
  const Layout& layout = compiled.layout();
  REQUIRE(layout.scratch.size() >= 2);
  TransformerParams p = compiled.params();
  const std::size_t a = layout.scratch.begin, b = layout.scratch.begin + 1;
  for (std::size_t c = 0; c < p.token_dim; ++c) {
    REQUIRE(p.embedding(a, c) == 0.0);
    REQUIRE(p.embedding(b, c) == 0.0);
  }
  const std::size_t h = p.hidden;
  DenseMatrix perm = DenseMatrix::identity(h);
  perm(a, a) = perm(b, b) = 0.0;
  perm(a, b) = perm(b, a) = 1.0;
  const DenseMatrix pt = perm.transpose();
  TransformerParams q = p;
  q.embedding = perm * p.embedding;
  q.positions = perm * p.positions;
  for (auto& l : q.layers) {
    for (std::size_t j = 0; j < l.heads(); ++j) {
      l.query[j] = perm * l.query[j] * pt;
      l.key[j] = perm * l.key[j] * pt;
      l.value[j] = perm * l.value[j] * pt;
    }
    DenseMatrix blocks(l.heads() * h, l.heads() * h);
    for (std::size_t j = 0; j < l.heads(); ++j)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < h; ++c) blocks(j * h + r, j * h + c) = pt(r, c);
    l.head_merge = perm * l.head_merge * blocks;
    if (l.mlp_width() > 0) {
      l.mlp_in = l.mlp_in * pt;
      l.mlp_out = perm * l.mlp_out;
    }
    l.mlp_out_bias = perm * l.mlp_out_bias;
  }
  const DenseMatrix tokens = encode_task(DenseMatrix{{0.05, -0.08}}, Vector{0.03}, Vector{0.07, 0.02});
  const DenseMatrix out_p = forward(p, tokens).output(), out_q = forward(q, tokens).output();
  const std::size_t row = compiled.program().output_row;
  CHECK(std::abs(out_p(row, 2) - out_q(row, 2)) <= 1e-12);
}
