#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "flexlmm/oracle.hpp"
#include "flexlmm/propriety.hpp"
#include "flexlmm/sampler.hpp"
#include "flexlmm/selection.hpp"

namespace flexlmm {

using Json = nlohmann::ordered_json;

struct CsvTable {
  Eigen::MatrixXd values;
  /// Column names when the first row is a header; empty otherwise.
  std::vector<std::string> header;
};

/// Comma-separated numbers, one row per line. A first row with no numeric field is a header.
/// Blank lines are skipped. Ragged rows and bad fields raise ParseError with 1-based row/column.
CsvTable parse_csv(const std::string& text, const std::string& source = "<csv>");
CsvTable read_csv(const std::filesystem::path& path);
/// A single row or a single column.
Eigen::VectorXd read_vector_csv(const std::filesystem::path& path);

/// Non-finite numbers become the strings "inf", "-inf" and "nan".
Json number_json(double x);

Json to_json(const ProprietyVerdict& v);
Json to_json(const ProbeVerdict& v);
Json to_json(const DiagnosticsReport& d, const std::vector<ChainOutput>& chains);
Json to_json(const SavageDickeyResult& r);
Json to_json(const InvarianceReport& r);

/// "chain,iteration,<columns>" then one row per stored draw, 17 significant digits.
void write_draws_csv(std::ostream& os, const std::vector<ChainOutput>& chains);

/// Validates against the subset of JSON Schema used by the bundled schemas: type (name or list),
/// enum, required, properties, additionalProperties (bool or schema), items, minimum, oneOf and
/// local $ref.
/// Returns one message per violation, each prefixed with the JSON pointer of the offending value.
std::vector<std::string> validate_schema(const Json& instance, const Json& schema);

/// The published schema for emitted propriety verdicts.
const Json& verdict_schema();
const Json& probe_schema();

}  // namespace flexlmm
