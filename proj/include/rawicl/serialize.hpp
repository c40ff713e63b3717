#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "rawicl/raw.hpp"
#include "rawicl/transformer.hpp"

namespace rawicl {

/// Malformed JSON document (missing field, wrong shape, unknown format).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kFormatVersion = 1;

nlohmann::json to_json(const DenseMatrix& m);
DenseMatrix matrix_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TransformerParams& params);
TransformerParams params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ProgramConstants& c);
ProgramConstants constants_from_json(const nlohmann::json& j, ProgramConstants base = {});

nlohmann::json to_json(const RawProgram& program);
RawProgram program_from_json(const nlohmann::json& j);

/// Builds a program from either a full program document (has "steps") or a
/// short spec such as {"program": "sgd_step", "d": 2, "alpha": 0.25}.
/// Builder failures surface as CompileError, malformed documents as FormatError.
RawProgram program_from_spec(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace rawicl
