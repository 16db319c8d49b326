#include "flexlmm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "flexlmm/errors.hpp"
#include "schemas.hpp"

namespace flexlmm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& field, double& out) {
  if (field.empty()) return false;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

Json map_json(const std::map<std::string, double>& m) {
  Json out = Json::object();
  for (const auto& [k, v] : m) out[k] = number_json(v);
  return out;
}

std::string type_of(const Json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

bool type_matches(const Json& v, const std::string& t) {
  const std::string actual = type_of(v);
  if (t == "number") return actual == "number" || actual == "integer";
  return actual == t;
}

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

void validate_node(const Json& v, const Json& schema, const Json& root, const std::string& ptr,
                   std::vector<std::string>& errors) {
  const std::string where = ptr.empty() ? "/" : ptr;
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"].get<std::string>();
    if (ref.rfind("#", 0) != 0) {
      errors.push_back(where + ": unsupported $ref " + ref);
      return;
    }
    validate_node(v, root.at(Json::json_pointer(ref.substr(1))), root, ptr, errors);
    return;
  }
  if (schema.contains("oneOf")) {
    int matches = 0;
    for (const auto& alt : schema["oneOf"]) {
      std::vector<std::string> sub;
      validate_node(v, alt, root, ptr, sub);
      if (sub.empty()) ++matches;
    }
    if (matches != 1) errors.push_back(where + ": matches " + std::to_string(matches) + " alternatives of oneOf");
  }
  if (schema.contains("type")) {
    const Json& t = schema["type"];
    bool ok = false;
    if (t.is_array()) {
      for (const auto& alt : t) ok = ok || type_matches(v, alt.get<std::string>());
    } else {
      ok = type_matches(v, t.get<std::string>());
    }
    if (!ok) {
      errors.push_back(where + ": expected type " + t.dump() + ", found " + type_of(v));
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == v;
    if (!found) errors.push_back(where + ": value " + v.dump() + " not in " + schema["enum"].dump());
  }
  if (schema.contains("minimum") && v.is_number() && v.get<double>() < schema["minimum"].get<double>()) {
    errors.push_back(where + ": below minimum " + schema["minimum"].dump());
  }
  if (v.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        if (!v.contains(key.get<std::string>())) errors.push_back(where + ": missing required key " + key.dump());
      }
    }
    const Json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string child = ptr + "/" + escape_pointer_token(it.key());
      if (props != nullptr && props->contains(it.key())) {
        validate_node(it.value(), (*props)[it.key()], root, child, errors);
      } else if (schema.contains("additionalProperties")) {
        const Json& ap = schema["additionalProperties"];
        if (ap.is_boolean()) {
          if (!ap.get<bool>()) errors.push_back(child + ": unexpected key");
        } else {
          validate_node(it.value(), ap, root, child, errors);
        }
      }
    }
  }
  if (v.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < v.size(); ++i) validate_node(v[i], schema["items"], root, ptr + "/" + std::to_string(i), errors);
  }
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable out;
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  std::size_t row = 0;
  std::size_t width = 0;
  bool first = true;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    std::vector<double> values(fields.size());
    std::size_t bad = 0;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (!parse_number(fields[j], values[j]) && bad == 0) bad = j + 1;
    }
    if (first && bad != 0) {
      bool named = true;
      double ignored = 0.0;
      for (const auto& f : fields) named = named && !f.empty() && !parse_number(f, ignored);
      if (named) {
        out.header = fields;
        width = fields.size();
        first = false;
        continue;
      }
    }
    if (width == 0) width = fields.size();
    first = false;
    if (fields.size() != width) {
      std::ostringstream os;
      os << source << ": row " << row << " has " << fields.size() << " fields, expected " << width;
      throw ParseError(os.str(), row, std::min(fields.size(), width) + 1);
    }
    if (bad != 0) {
      std::ostringstream os;
      os << source << ": row " << row << ", column " << bad << ": '" << fields[bad - 1] << "' is not a number";
      throw ParseError(os.str(), row, bad);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError(source + ": no data rows", 0, 0);
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

Eigen::VectorXd read_vector_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.values.cols() == 1) return t.values.col(0);
  if (t.values.rows() == 1) return t.values.row(0).transpose();
  throw ParseError(path.string() + ": expected a single row or column, found " + std::to_string(t.values.rows()) + " x " +
                   std::to_string(t.values.cols()));
}

Json number_json(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0.0 ? "inf" : "-inf";
  return x;
}

Json to_json(const ProprietyVerdict& v) {
  Json out;
  out["kind"] = "propriety_verdict";
  out["theorem_case"] = to_string(v.theorem_case);
  out["verdict"] = to_string(v.overall);
  Json conds = Json::object();
  for (const auto& [name, c] : v.conditions) {
    conds[name] = {{"status", to_string(c.status)}, {"role", to_string(c.role)}, {"evidence", map_json(c.evidence)}, {"note", c.note}};
  }
  out["conditions"] = conds;
  out["sample_guard"] = v.sample_guard ? Json(*v.sample_guard) : Json(nullptr);
  out["design"] = map_json(v.design);
  out["notes"] = v.notes;
  return out;
}

Json to_json(const ProbeVerdict& v) {
  Json out;
  out["kind"] = "propriety_probe";
  out["outcome"] = to_string(v.outcome);
  out["tol"] = v.tol;
  out["reason"] = v.reason;
  Json trace = Json::array();
  for (const auto& s : v.trace) {
    trace.push_back({{"k", s.k}, {"value", number_json(s.value)}, {"log_value", number_json(s.log_value)},
                     {"rel_increment", number_json(s.rel_increment)}});
  }
  out["trace"] = trace;
  return out;
}

Json to_json(const DiagnosticsReport& d, const std::vector<ChainOutput>& chains) {
  Json out;
  out["chains"] = d.chains;
  out["draws_per_chain"] = d.draws_per_chain;
  Json params = Json::object();
  for (const auto& [name, p] : d.parameters) {
    params[name] = {{"mean", number_json(p.mean)}, {"sd", number_json(p.sd)}, {"ess", number_json(p.ess)},
                    {"mcse", number_json(p.mcse)}, {"split_rhat", number_json(p.split_rhat)},
                    {"rhat_undefined", p.rhat_undefined}};
  }
  out["parameters"] = params;
  out["acceptance_rates"] = map_json(d.acceptance_rates);
  out["warnings"] = d.warnings;
  Json per_chain = Json::array();
  for (const auto& c : chains) {
    Json j;
    j["chain_index"] = c.chain_index;
    j["seed"] = c.seed;
    j["acceptance_rates"] = map_json(c.acceptance_rates);
    j["step_sizes"] = map_json(c.step_sizes);
    j["warnings"] = c.warnings;
    if (c.gate_verdict) j["gate_verdict"] = to_string(*c.gate_verdict);
    per_chain.push_back(j);
  }
  out["per_chain"] = per_chain;
  return out;
}

Json to_json(const SavageDickeyResult& r) {
  Json out;
  out["kind"] = "savage_dickey";
  out["bayes_factor"] = number_json(r.bf);
  out["se"] = number_json(r.se);
  out["posterior_density"] = number_json(r.posterior_density);
  out["posterior_density_se"] = number_json(r.posterior_density_se);
  out["prior_density"] = number_json(r.prior_density);
  out["bandwidth"] = number_json(r.bandwidth);
  out["draws"] = r.draws;
  out["draws_near"] = r.draws_near;
  out["warnings"] = r.warnings;
  return out;
}

Json to_json(const InvarianceReport& r) {
  Json out;
  out["kind"] = "smn_invariance";
  out["mixings"] = r.mixings;
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dataset", row.dataset},
                    {"mixing", row.mixing},
                    {"log_m_smn", number_json(row.log_m_smn)},
                    {"log_m_normal", number_json(row.log_m_normal)},
                    {"ratio", number_json(row.ratio)},
                    {"constant", number_json(row.constant)},
                    {"deviation", number_json(row.deviation)},
                    {"oracle", to_string(row.outcome)}});
  }
  out["rows"] = rows;
  Json bfs = Json::array();
  for (double b : r.bayes_factors) bfs.push_back(number_json(b));
  out["bayes_factors"] = bfs;
  out["expected_bayes_factor"] = number_json(r.expected_bayes_factor);
  out["max_ratio_deviation"] = number_json(r.max_ratio_deviation);
  out["max_bf_deviation"] = number_json(r.max_bf_deviation);
  out["incomplete"] = r.incomplete;
  out["notes"] = r.notes;
  return out;
}

void write_draws_csv(std::ostream& os, const std::vector<ChainOutput>& chains) {
  if (chains.empty()) return;
  os << "chain,iteration";
  for (const auto& n : chains.front().names) os << ',' << n;
  os << '\n';
  for (const auto& c : chains) {
    for (Eigen::Index t = 0; t < c.draws.rows(); ++t) {
      os << c.chain_index << ',' << t;
      for (Eigen::Index j = 0; j < c.draws.cols(); ++j) os << ',' << format_double(c.draws(t, j));
      os << '\n';
    }
  }
}

std::vector<std::string> validate_schema(const Json& instance, const Json& schema) {
  std::vector<std::string> errors;
  validate_node(instance, schema, schema, "", errors);
  return errors;
}

const Json& verdict_schema() {
  static const Json s = Json::parse(schema_text::verdict);
  return s;
}

const Json& probe_schema() {
  static const Json s = Json::parse(schema_text::probe);
  return s;
}

}  // namespace flexlmm
