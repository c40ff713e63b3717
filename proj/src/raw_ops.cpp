#include <algorithm>
#include <set>
#include <sstream>

#include "rawicl/raw.hpp"

namespace rawicl {

std::optional<std::size_t> TimestepMap::target(std::size_t i) const {
  switch (kind) {
    case Kind::self:
      return i;
    case Kind::previous_token:
      if (i == 0) return std::nullopt;
      return i - 1;
    case Kind::fixed_token:
      if (i < token) return std::nullopt;
      return token;
    case Kind::empty_before:
      if (i < token) return std::nullopt;
      return i;
  }
  return std::nullopt;
}

std::string TimestepMap::name() const {
  switch (kind) {
    case Kind::self:
      return "self";
    case Kind::previous_token:
      return "previous_token";
    case Kind::fixed_token:
      return "fixed_token";
    case Kind::empty_before:
      return "empty_before";
  }
  return "?";
}

namespace {

void check_range(const IndexRange& r, std::size_t rows, const char* what) {
  if (r.end < r.begin) throw CompileError(std::string(what) + " range has end < begin");
  if (r.end > rows)
    throw CompileError(std::string(what) + " range [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
                       ") exceeds " + std::to_string(rows) + " addressable rows");
}

void check_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw CompileError(std::string(what) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

void check_bias(const Vector& b, std::size_t n, const char* what) {
  if (!b.empty() && b.size() != n) throw CompileError(std::string(what) + " has wrong length");
}

}  // namespace

void RawOp::validate(std::size_t rows) const {
  check_range(read, rows, "read");
  check_range(operand, rows, "operand");
  check_range(write, rows, "write");
  if (write.empty()) throw CompileError("op writes no rows");
  const std::size_t n = inner();
  if (n == 0) throw CompileError("out_proj has no inner columns");
  check_shape(out_proj, write.size(), n, "out_proj");
  if (!read.empty() || !read_proj.empty()) check_shape(read_proj, n, read.size(), "read_proj");
  if (!operand.empty() || !operand_proj.empty()) check_shape(operand_proj, n, operand.size(), "operand_proj");
  check_bias(read_bias, n, "read_bias");
  check_bias(operand_bias, n, "operand_bias");
  check_bias(out_bias, write.size(), "out_bias");
  for (const auto* m : {&read_proj, &operand_proj, &out_proj})
    if (!m->all_finite()) throw CompileError("non-finite op parameter");
}

void DivOp::validate(std::size_t rows) const {
  check_range(numerator, rows, "numerator");
  check_range(write, rows, "write");
  if (denominator >= rows) throw CompileError("denominator row out of range");
  if (numerator.size() != write.size()) throw CompileError("division numerator and write ranges differ in size");
  if (numerator.empty()) throw CompileError("division has an empty numerator");
}

void check_parallel(const std::vector<RawOp>& ops) {
  std::ostringstream conflicts;
  bool any = false;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    for (std::size_t j = 0; j < ops.size(); ++j) {
      if (i == j) continue;
      const IndexRange& wj = ops[j].write;
      const auto& a = ops[i];
      if (a.read.overlaps(wj) || a.operand.overlaps(wj) || (i < j && a.write.overlaps(wj))) {
        conflicts << (any ? "; " : "") << "op " << i << " <-> op " << j;
        any = true;
      }
    }
  }
  if (any) throw CompileError("parallel ops are not independent: " + conflicts.str());
  // Ops that read nothing through attention do not constrain the pattern.
  std::optional<std::size_t> first;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].read.empty()) continue;
    if (!first) {
      first = i;
    } else if (!(ops[*first].timestep == ops[i].timestep)) {
      throw CompileError("parallel ops must share one timestep map (op " + std::to_string(*first) + " vs op " +
                         std::to_string(i) + ")");
    }
  }
}

ProgramStep fuse_parallel(std::vector<RawOp> ops, std::string label) {
  if (ops.empty()) throw CompileError("fuse_parallel: no ops");
  check_parallel(ops);
  ProgramStep step;
  step.kind = ProgramStep::Kind::raw;
  step.ops = std::move(ops);
  step.label = std::move(label);
  return step;
}

void RawProgram::validate() const {
  if (token_dim == 0) throw CompileError("program has token_dim 0");
  if (data_rows < token_dim) throw CompileError("data_rows smaller than token_dim");
  if (output_row >= data_rows) throw CompileError("output row outside data rows");
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& step = steps[s];
    try {
      if (step.kind == ProgramStep::Kind::div) {
        step.div.validate(data_rows);
      } else {
        if (step.ops.empty()) throw CompileError("raw step has no ops");
        for (const auto& op : step.ops) op.validate(data_rows);
        if (step.ops.size() > 1) check_parallel(step.ops);
        for (const auto& op : step.ops)
          if (!op.read.empty() && op.timestep.can_be_empty() && !constants.imaginary_timestep)
            throw CompileError("timestep map " + op.timestep.name() +
                               " can be empty and needs the imaginary timestep");
      }
    } catch (const CompileError& e) {
      if (e.step()) throw;
      throw CompileError(e.what(), s);
    }
  }
}

}  // namespace rawicl
