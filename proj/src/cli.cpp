#include "flexlmm/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "flexlmm/errors.hpp"
#include "flexlmm/propriety.hpp"
#include "flexlmm/selection.hpp"

namespace flexlmm {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& ptr, const std::string& msg) {
  throw ConfigError((ptr.empty() ? "/" : ptr) + ": " + msg);
}

void expect_object(const Json& j, const std::string& ptr, const std::set<std::string>& allowed,
                   const std::set<std::string>& required = {}) {
  if (!j.is_object()) fail(ptr, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) fail(ptr + "/" + it.key(), "unknown key");
  }
  for (const auto& k : required) {
    if (!j.contains(k)) fail(ptr, "missing required key \"" + k + "\"");
  }
}

double number(const Json& j, const std::string& ptr) {
  if (!j.is_number()) fail(ptr, "expected a number");
  return j.get<double>();
}

std::uint64_t count(const Json& j, const std::string& ptr) {
  if (!j.is_number_integer() || j.get<long long>() < 0) fail(ptr, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string text(const Json& j, const std::string& ptr) {
  if (!j.is_string()) fail(ptr, "expected a string");
  return j.get<std::string>();
}

bool boolean(const Json& j, const std::string& ptr) {
  if (!j.is_boolean()) fail(ptr, "expected true or false");
  return j.get<bool>();
}

const Json& array(const Json& j, const std::string& ptr) {
  if (!j.is_array()) fail(ptr, "expected an array");
  return j;
}

std::vector<double> numbers(const Json& j, const std::string& ptr) {
  std::vector<double> out;
  for (std::size_t i = 0; i < array(j, ptr).size(); ++i) out.push_back(number(j[i], ptr + "/" + std::to_string(i)));
  return out;
}

Hyper hyper(const Json& j, const std::string& ptr) {
  try {
    if (j.is_string()) return Hyper::parse(j.get<std::string>());
    if (j.is_number()) return Hyper::of(j.get<double>());
  } catch (const Error& e) {
    fail(ptr, e.what());
  }
  fail(ptr, "expected a number or a rational string");
}

std::vector<Hyper> hypers(const Json& j, const std::string& ptr) {
  std::vector<Hyper> out;
  for (std::size_t i = 0; i < array(j, ptr).size(); ++i) out.push_back(hyper(j[i], ptr + "/" + std::to_string(i)));
  return out;
}

fs::path resolve(const Json& j, const std::string& ptr, const fs::path& base) {
  fs::path p = text(j, ptr);
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) fail(ptr, "file not found: " + p.string());
  return p;
}

ShapePrior shape_prior(const Json& j, const std::string& ptr) {
  if (!j.is_object() || !j.contains("type")) fail(ptr, "expected an object with a \"type\"");
  const std::string type = text(j["type"], ptr + "/type");
  try {
    if (type == "uniform") {
      expect_object(j, ptr, {"type", "lo", "hi"}, {"lo", "hi"});
      return ShapePrior::uniform(number(j["lo"], ptr + "/lo"), number(j["hi"], ptr + "/hi"));
    }
    if (type == "truncated_normal") {
      expect_object(j, ptr, {"type", "mean", "sd", "lo", "hi"}, {"mean", "sd", "lo", "hi"});
      return ShapePrior::truncated_normal(number(j["mean"], ptr + "/mean"), number(j["sd"], ptr + "/sd"),
                                          number(j["lo"], ptr + "/lo"), number(j["hi"], ptr + "/hi"));
    }
    if (type == "gamma") {
      expect_object(j, ptr, {"type", "shape", "rate"}, {"shape", "rate"});
      return ShapePrior::gamma(number(j["shape"], ptr + "/shape"), number(j["rate"], ptr + "/rate"));
    }
    if (type == "point_mass") {
      expect_object(j, ptr, {"type", "value"}, {"value"});
      return ShapePrior::point_mass(number(j["value"], ptr + "/value"));
    }
  } catch (const DomainError& e) {
    fail(ptr, e.what());
  }
  fail(ptr + "/type", "unknown shape prior \"" + type + "\"");
}

std::vector<ShapePrior> shape_priors(const Json& j, const std::string& ptr) {
  std::vector<ShapePrior> out;
  for (std::size_t i = 0; i < array(j, ptr).size(); ++i) out.push_back(shape_prior(j[i], ptr + "/" + std::to_string(i)));
  return out;
}

std::shared_ptr<const SkewParameterisation> parameterisation(const Json& j, const std::string& ptr) {
  const std::string name = text(j, ptr);
  try {
    return default_registry().get(name);
  } catch (const Error&) {
    fail(ptr, "unknown parameterisation \"" + name + "\"");
  }
}

std::shared_ptr<const FsnFamily> fsn_family(const Json& j, const std::string& ptr) {
  const std::string name = text(j, ptr);
  try {
    return fsn_family_by_name(name);
  } catch (const Error&) {
    fail(ptr, "unknown FSN family \"" + name + "\"");
  }
}

std::shared_ptr<const MixingDistribution> mixing(const Json& j, const std::string& ptr) {
  const std::string name = text(j, ptr);
  try {
    return mixing_by_name(name);
  } catch (const Error&) {
    fail(ptr, "unknown mixing distribution \"" + name + "\"");
  }
}

SmnEffects smn_effects(const Json& j, const std::string& ptr, bool allow_type) {
  std::set<std::string> keys = {"mixing", "delta_prior"};
  if (allow_type) keys.insert("type");
  expect_object(j, ptr, keys, {"mixing"});
  SmnEffects out{mixing(j["mixing"], ptr + "/mixing"), ShapePrior::point_mass(1.0)};
  if (j.contains("delta_prior")) {
    out.delta_prior = shape_prior(j["delta_prior"], ptr + "/delta_prior");
  } else if (!out.mixing->is_point_mass()) {
    fail(ptr, "missing required key \"delta_prior\"");
  }
  return out;
}

RandomEffects effects(const Json& j, const std::string& ptr) {
  if (!j.is_object() || !j.contains("type")) fail(ptr, "expected an object with a \"type\"");
  const std::string type = text(j["type"], ptr + "/type");
  if (type == "normal") {
    expect_object(j, ptr, {"type"});
    return NormalEffects{};
  }
  if (type == "two_piece") {
    expect_object(j, ptr, {"type", "parameterisation", "shape_priors"}, {"parameterisation", "shape_priors"});
    return TpnEffects{parameterisation(j["parameterisation"], ptr + "/parameterisation"),
                      shape_priors(j["shape_priors"], ptr + "/shape_priors")};
  }
  if (type == "fsn") {
    expect_object(j, ptr, {"type", "family", "shape_priors"}, {"family", "shape_priors"});
    return FsnEffects{fsn_family(j["family"], ptr + "/family"), shape_priors(j["shape_priors"], ptr + "/shape_priors")};
  }
  if (type == "smn") return smn_effects(j, ptr, true);
  fail(ptr + "/type", "unknown family \"" + type + "\"");
}

PriorStructure prior(const Json& j, const std::string& ptr, std::size_t r) {
  if (!j.is_object() || !j.contains("type")) fail(ptr, "expected an object with a \"type\"");
  const std::string type = text(j["type"], ptr + "/type");
  if (type == "standard_diffuse") {
    expect_object(j, ptr, {"type"});
    return standard_diffuse_prior(r);
  }
  if (type == "power_exp") {
    expect_object(j, ptr, {"type", "a", "b"}, {"a", "b"});
    return PowerExpPrior{hypers(j["a"], ptr + "/a"), hypers(j["b"], ptr + "/b")};
  }
  if (type == "half_cauchy") {
    expect_object(j, ptr, {"type", "a0", "s"}, {"a0", "s"});
    return HalfCauchyPrior{hyper(j["a0"], ptr + "/a0"), numbers(j["s"], ptr + "/s")};
  }
  fail(ptr + "/type", "unknown prior \"" + type + "\"");
}

void parse_model(const Json& j, const std::string& ptr, const fs::path& base, RunConfig& cfg) {
  expect_object(j, ptr, {"X", "Z", "y", "factor_sizes", "prior", "family", "rank_tolerance_scale"},
                {"X", "Z", "factor_sizes", "prior", "family"});
  const Eigen::MatrixXd X = read_csv(resolve(j["X"], ptr + "/X", base)).values;
  const Eigen::MatrixXd Z = read_csv(resolve(j["Z"], ptr + "/Z", base)).values;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < array(j["factor_sizes"], ptr + "/factor_sizes").size(); ++i) {
    sizes.push_back(count(j["factor_sizes"][i], ptr + "/factor_sizes/" + std::to_string(i)));
  }
  RankOptions rank;
  if (j.contains("rank_tolerance_scale")) rank.tolerance_scale = number(j["rank_tolerance_scale"], ptr + "/rank_tolerance_scale");
  PriorStructure pr = prior(j["prior"], ptr + "/prior", sizes.size());
  RandomEffects re = effects(j["family"], ptr + "/family");
  try {
    cfg.model.emplace(X, Z, sizes, std::move(re), std::move(pr), rank);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    fail(ptr, e.what());
  }
  if (j.contains("y")) {
    cfg.y = read_vector_csv(resolve(j["y"], ptr + "/y", base));
    try {
      cfg.model->check_response(*cfg.y);
    } catch (const Error& e) {
      fail(ptr + "/y", e.what());
    }
  }
}

void parse_probit(const Json& j, const std::string& ptr, RunConfig& cfg) {
  expect_object(j, ptr, {"groups", "a1", "family"}, {"groups", "a1", "family"});
  ProbitSpec spec;
  for (std::size_t i = 0; i < array(j["groups"], ptr + "/groups").size(); ++i) {
    const std::string gp = ptr + "/groups/" + std::to_string(i);
    const Json& g = j["groups"][i];
    if (!g.is_array() || g.size() != 2) fail(gp, "expected [successes, failures]");
    spec.group_counts.emplace_back(static_cast<long>(number(g[0], gp + "/0")), static_cast<long>(number(g[1], gp + "/1")));
  }
  spec.a1 = hyper(j["a1"], ptr + "/a1");
  RandomEffects re = effects(j["family"], ptr + "/family");
  if (auto* t = std::get_if<TpnEffects>(&re)) {
    spec.effects = *t;
  } else if (auto* f = std::get_if<FsnEffects>(&re)) {
    spec.effects = *f;
  } else {
    fail(ptr + "/family", "the probit check needs two_piece or fsn effects");
  }
  cfg.probit = spec;
}

void parse_oracle(const Json& j, const std::string& ptr, RunConfig& cfg) {
  expect_object(j, ptr, {"schedule", "nodes_per_panel", "shape_nodes", "mixing_nodes", "orthant_tol", "threads", "tol"});
  if (j.contains("schedule")) cfg.grid.schedule = numbers(j["schedule"], ptr + "/schedule");
  if (j.contains("nodes_per_panel")) cfg.grid.nodes_per_panel = static_cast<int>(count(j["nodes_per_panel"], ptr + "/nodes_per_panel"));
  if (j.contains("shape_nodes")) cfg.grid.shape_nodes = static_cast<int>(count(j["shape_nodes"], ptr + "/shape_nodes"));
  if (j.contains("mixing_nodes")) cfg.grid.mixing_nodes = static_cast<int>(count(j["mixing_nodes"], ptr + "/mixing_nodes"));
  if (j.contains("orthant_tol")) cfg.grid.orthant_tol = number(j["orthant_tol"], ptr + "/orthant_tol");
  if (j.contains("threads")) cfg.grid.threads = static_cast<unsigned>(count(j["threads"], ptr + "/threads"));
  if (j.contains("tol")) cfg.probe_tol = number(j["tol"], ptr + "/tol");
}

void parse_sampler(const Json& j, const std::string& ptr, RunConfig& cfg) {
  expect_object(j, ptr, {"iterations", "burn_in", "chains", "threads", "override_propriety", "fixed_scales",
                         "target_acceptance", "initial_step"});
  auto& s = cfg.sampler;
  if (j.contains("iterations")) s.iterations = count(j["iterations"], ptr + "/iterations");
  if (j.contains("burn_in")) s.burn_in = count(j["burn_in"], ptr + "/burn_in");
  if (j.contains("chains")) cfg.chains = count(j["chains"], ptr + "/chains");
  if (j.contains("threads")) cfg.threads = static_cast<unsigned>(count(j["threads"], ptr + "/threads"));
  if (j.contains("override_propriety")) s.override_propriety = boolean(j["override_propriety"], ptr + "/override_propriety");
  if (j.contains("fixed_scales")) s.fixed_scales = numbers(j["fixed_scales"], ptr + "/fixed_scales");
  if (j.contains("target_acceptance")) s.target_acceptance = number(j["target_acceptance"], ptr + "/target_acceptance");
  if (j.contains("initial_step")) s.initial_step = number(j["initial_step"], ptr + "/initial_step");
  if (s.burn_in >= s.iterations) fail(ptr + "/burn_in", "must be smaller than iterations");
  if (cfg.chains == 0) fail(ptr + "/chains", "must be positive");
}

void parse_bf(const Json& j, const std::string& ptr, const fs::path& base, RunConfig& cfg) {
  expect_object(j, ptr, {"mode", "factor", "gamma0", "datasets", "mixing1", "mixing2"});
  auto& b = cfg.bf;
  if (j.contains("mode")) b.mode = text(j["mode"], ptr + "/mode");
  if (b.mode == "savage_dickey") {
    for (const char* k : {"datasets", "mixing1", "mixing2"}) {
      if (j.contains(k)) fail(ptr + "/" + k, "only used by mode smn_demo");
    }
    if (j.contains("factor")) b.factor = count(j["factor"], ptr + "/factor");
    if (j.contains("gamma0")) b.gamma0 = number(j["gamma0"], ptr + "/gamma0");
  } else if (b.mode == "smn_demo") {
    for (const char* k : {"factor", "gamma0"}) {
      if (j.contains(k)) fail(ptr + "/" + k, "only used by mode savage_dickey");
    }
    expect_object(j, ptr, {"mode", "datasets", "mixing1", "mixing2"}, {"datasets", "mixing1", "mixing2"});
    for (std::size_t i = 0; i < array(j["datasets"], ptr + "/datasets").size(); ++i) {
      b.datasets.push_back(read_vector_csv(resolve(j["datasets"][i], ptr + "/datasets/" + std::to_string(i), base)));
    }
    b.mixing1 = smn_effects(j["mixing1"], ptr + "/mixing1", false);
    b.mixing2 = smn_effects(j["mixing2"], ptr + "/mixing2", false);
  } else {
    fail(ptr + "/mode", "expected \"savage_dickey\" or \"smn_demo\"");
  }
}

void parse_dist(const Json& j, const std::string& ptr, RunConfig& cfg) {
  expect_object(j, ptr, {"family", "parameterisation", "fsn_family", "mixing", "shape", "mu", "sigma", "from", "to",
                         "points", "samples"},
                {"family"});
  auto& d = cfg.dist;
  d.family = text(j["family"], ptr + "/family");
  if (d.family != "normal" && d.family != "two_piece" && d.family != "fsn" && d.family != "smn") {
    fail(ptr + "/family", "expected normal, two_piece, fsn or smn");
  }
  if (j.contains("parameterisation")) {
    d.parameterisation = text(j["parameterisation"], ptr + "/parameterisation");
    parameterisation(j["parameterisation"], ptr + "/parameterisation");
  }
  if (j.contains("fsn_family")) {
    d.fsn_family = text(j["fsn_family"], ptr + "/fsn_family");
    fsn_family(j["fsn_family"], ptr + "/fsn_family");
  }
  if (j.contains("mixing")) {
    d.mixing = text(j["mixing"], ptr + "/mixing");
    mixing(j["mixing"], ptr + "/mixing");
  }
  if (j.contains("shape")) d.shape = number(j["shape"], ptr + "/shape");
  if (j.contains("mu")) d.mu = number(j["mu"], ptr + "/mu");
  if (j.contains("sigma")) d.sigma = number(j["sigma"], ptr + "/sigma");
  if (j.contains("from")) d.from = number(j["from"], ptr + "/from");
  if (j.contains("to")) d.to = number(j["to"], ptr + "/to");
  if (j.contains("points")) d.points = count(j["points"], ptr + "/points");
  if (j.contains("samples")) d.samples = count(j["samples"], ptr + "/samples");
  if (!(d.to > d.from) || d.points < 2) fail(ptr, "need from < to and at least 2 points");
  if (!(d.sigma > 0.0)) fail(ptr + "/sigma", "must be positive");
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void require_schema(const Json& j, const Json& schema, const std::string& what) {
  const auto errors = validate_schema(j, schema);
  if (!errors.empty()) throw Error(what + " does not match its schema: " + errors.front());
}

const ModelSpec& need_model(const RunConfig& cfg) {
  if (!cfg.model) throw ConfigError("/model: required by the " + to_string(cfg.command) + " command");
  return *cfg.model;
}

const Eigen::VectorXd& need_y(const RunConfig& cfg) {
  if (!cfg.y) throw ConfigError("/model/y: required by the " + to_string(cfg.command) + " command");
  return *cfg.y;
}

Json dist_json(const DistConfig& d, std::uint64_t seed) {
  std::function<double(double)> log_pdf;
  std::function<double(Rng&)> draw;
  const double mu = d.mu;
  const double sigma = d.sigma;
  if (d.family == "normal") {
    log_pdf = [=](double x) { return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) - 0.5 * std::pow((x - mu) / sigma, 2); };
    draw = [=](Rng& rng) { return mu + sigma * std::normal_distribution<double>()(rng); };
  } else if (d.family == "two_piece") {
    const auto param = default_registry().get(d.parameterisation);
    if (!param->contains(d.shape)) throw DomainError("/dist/shape: gamma outside the parameterisation's domain");
    log_pdf = [=](double x) { return tpn_log_pdf(x, mu, sigma, d.shape, *param); };
    draw = [=](Rng& rng) { return tpn_sample(rng, mu, sigma, d.shape, *param); };
  } else if (d.family == "fsn") {
    const auto fam = fsn_family_by_name(d.fsn_family);
    if (!fam->contains(d.shape)) throw DomainError("/dist/shape: lambda outside the family's domain");
    log_pdf = [=](double x) { return fsn_log_pdf(x, mu, sigma, d.shape, *fam); };
    if (fam->name == "skew_normal" || fam->name == "uniform") {
      const double lam = fam->name == "uniform" ? 0.0 : d.shape;
      draw = [=](Rng& rng) {
        std::normal_distribution<double> z;
        const double a = z(rng);
        const double b = z(rng);
        const double c = lam / std::sqrt(1.0 + lam * lam);
        return mu + sigma * (c * std::abs(a) + std::sqrt(1.0 - c * c) * b);
      };
    }
  } else {
    const auto mix = mixing_by_name(d.mixing);
    log_pdf = [=](double x) {
      const double v = x - mu;
      return std::log(smn_pdf(std::span<const double>(&v, 1), sigma, *mix, d.shape));
    };
    draw = [=](Rng& rng) {
      const double tau = mix->sample(rng, d.shape);
      return mu + sigma / std::sqrt(tau) * std::normal_distribution<double>()(rng);
    };
  }
  Json out;
  out["kind"] = "dist";
  out["family"] = d.family;
  out["shape"] = d.shape;
  out["mu"] = d.mu;
  out["sigma"] = d.sigma;
  Json xs = Json::array();
  Json dens = Json::array();
  Json logd = Json::array();
  double mass = 0.0;
  double prev = 0.0;
  const double step = (d.to - d.from) / static_cast<double>(d.points - 1);
  for (std::size_t i = 0; i < d.points; ++i) {
    const double x = d.from + step * static_cast<double>(i);
    const double l = log_pdf(x);
    const double p = std::exp(l);
    if (i > 0) mass += 0.5 * step * (p + prev);
    prev = p;
    xs.push_back(x);
    dens.push_back(number_json(p));
    logd.push_back(number_json(l));
  }
  out["x"] = xs;
  out["density"] = dens;
  out["log_density"] = logd;
  out["grid_mass"] = number_json(mass);
  if (d.samples > 0) {
    if (!draw) throw ConfigError("/dist/samples: sampling is not available for this family");
    Rng rng = chain_rng(seed, 0);
    Json s = Json::array();
    for (std::size_t i = 0; i < d.samples; ++i) s.push_back(number_json(draw(rng)));
    out["samples"] = s;
  }
  return out;
}

}  // namespace

std::string to_string(Command c) {
  switch (c) {
    case Command::Check:
      return "check";
    case Command::Probe:
      return "probe";
    case Command::Sample:
      return "sample";
    case Command::Bf:
      return "bf";
    case Command::Dist:
      return "dist";
  }
  return "?";
}

Command command_from_string(const std::string& name) {
  for (Command c : {Command::Check, Command::Probe, Command::Sample, Command::Bf, Command::Dist}) {
    if (to_string(c) == name) return c;
  }
  throw ConfigError("/command: unknown command \"" + name + "\"");
}

RunConfig parse_config(const Json& doc, const fs::path& base_dir, std::optional<Command> command) {
  expect_object(doc, "", {"command", "model", "probit", "oracle", "sampler", "bf", "dist", "seed", "output"});
  RunConfig cfg;
  if (doc.contains("command")) {
    cfg.command = command_from_string(text(doc["command"], "/command"));
    if (command && *command != cfg.command) {
      fail("/command", "config says \"" + to_string(cfg.command) + "\" but \"" + to_string(*command) + "\" was requested");
    }
  } else if (command) {
    cfg.command = *command;
  } else {
    fail("", "missing required key \"command\"");
  }
  if (doc.contains("model") && doc.contains("probit")) fail("/probit", "give either model or probit, not both");
  if (doc.contains("model")) parse_model(doc["model"], "/model", base_dir, cfg);
  if (doc.contains("probit")) parse_probit(doc["probit"], "/probit", cfg);
  if (doc.contains("oracle")) parse_oracle(doc["oracle"], "/oracle", cfg);
  if (doc.contains("sampler")) parse_sampler(doc["sampler"], "/sampler", cfg);
  if (doc.contains("bf")) parse_bf(doc["bf"], "/bf", base_dir, cfg);
  if (doc.contains("dist")) parse_dist(doc["dist"], "/dist", cfg);
  if (doc.contains("seed")) cfg.seed = count(doc["seed"], "/seed");
  if (doc.contains("output")) {
    fs::path out = text(doc["output"], "/output");
    cfg.output = out.is_relative() ? base_dir / out : out;
  }
  if (cfg.probit && cfg.command != Command::Check) fail("/probit", "only the check command accepts a probit model");
  if (cfg.command == Command::Dist && !doc.contains("dist")) fail("", "missing required key \"dist\"");
  return cfg;
}

RunConfig load_config(const fs::path& path, std::optional<Command> command) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.has_parent_path() ? path.parent_path() : fs::path("."), command);
}

int exit_code_for(Verdict v) {
  switch (v) {
    case Verdict::Proper:
      return 0;
    case Verdict::Improper:
      return 2;
    case Verdict::Undetermined:
      return 3;
  }
  return 1;
}

int exit_code_for(ProbeOutcome o) {
  switch (o) {
    case ProbeOutcome::Converges:
      return 0;
    case ProbeOutcome::Diverges:
      return 2;
    case ProbeOutcome::Inconclusive:
      return 3;
  }
  return 1;
}

RunResult run(const RunConfig& cfg, const RunOptions& options) {
  std::ostream& out = options.out != nullptr ? *options.out : std::cout;
  std::ostream& err = options.err != nullptr ? *options.err : std::cerr;
  fs::path dir = ".";
  if (options.out_dir) {
    dir = *options.out_dir;
  } else if (cfg.output) {
    dir = *cfg.output;
  } else if (const char* env = std::getenv("FLEXLMM_OUT_DIR"); env != nullptr && *env != '\0') {
    dir = env;
  }
  fs::create_directories(dir);
  const std::uint64_t seed = options.seed.value_or(cfg.seed);
  auto log = [&](const std::string& line) {
    if (options.verbose) err << line << '\n';
  };
  RunResult result;
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    write_text(p, content);
    result.artifacts.push_back(p);
    log("wrote " + p.string());
  };

  switch (cfg.command) {
    case Command::Check: {
      ProprietyVerdict v;
      if (cfg.probit) {
        v = check_probit(*cfg.probit);
      } else {
        v = check_propriety(need_model(cfg), cfg.y);
      }
      const Json j = to_json(v);
      require_schema(j, verdict_schema(), "verdict");
      out << dump(j);
      emit("verdict.json", dump(j));
      log("check: " + to_string(v.overall) + " (" + to_string(v.theorem_case) + ")");
      result.exit_code = exit_code_for(v.overall);
      break;
    }
    case Command::Probe: {
      const ProbeVerdict v = propriety_probe(need_model(cfg), need_y(cfg), cfg.grid, cfg.probe_tol);
      Json j = to_json(v);
      j["grid"] = cfg.grid.describe();
      require_schema(j, probe_schema(), "probe");
      out << dump(j);
      emit("probe.json", dump(j));
      emit("probe_trace.csv", probe_trace_csv(v));
      log("probe: " + to_string(v.outcome));
      result.exit_code = exit_code_for(v.outcome);
      break;
    }
    case Command::Sample: {
      SamplerOptions opts = cfg.sampler;
      opts.seed = seed;
      const auto chains = sample_chains(need_model(cfg), need_y(cfg), opts, cfg.chains, cfg.threads);
      std::ostringstream draws;
      write_draws_csv(draws, chains);
      emit("draws.csv", draws.str());
      const DiagnosticsReport d = diagnostics(chains);
      emit("diagnostics.json", dump(to_json(d, chains)));
      for (const auto& w : d.warnings) err << "warning: " << w << '\n';
      log("sample: " + std::to_string(cfg.chains) + " chains x " + std::to_string(d.draws_per_chain) + " draws");
      break;
    }
    case Command::Bf: {
      const ModelSpec& spec = need_model(cfg);
      Json j;
      if (cfg.bf.mode == "smn_demo") {
        const InvarianceReport r = smn_bf_invariance_demo(spec, cfg.bf.datasets, *cfg.bf.mixing1, *cfg.bf.mixing2, cfg.grid);
        j = to_json(r);
        if (r.incomplete) err << "warning: report incomplete\n";
      } else {
        const std::size_t f = cfg.bf.factor;
        if (f < 1 || f > spec.r()) throw ConfigError("/bf/factor: must be between 1 and " + std::to_string(spec.r()));
        std::string column;
        ShapePrior prior = ShapePrior::point_mass(0.0);
        double gamma0 = 0.0;
        if (const auto* t = std::get_if<TpnEffects>(&spec.effects())) {
          column = "gamma_" + std::to_string(f);
          prior = t->shape_priors.at(f - 1);
          if (!cfg.bf.gamma0 && !t->param->symmetric_point) {
            throw ConfigError("/bf/gamma0: the parameterisation has no symmetric point; give gamma0");
          }
          gamma0 = cfg.bf.gamma0.value_or(t->param->symmetric_point.value_or(0.0));
        } else if (const auto* fe = std::get_if<FsnEffects>(&spec.effects())) {
          column = "lambda_" + std::to_string(f);
          prior = fe->shape_priors.at(f - 1);
          gamma0 = cfg.bf.gamma0.value_or(0.0);
        } else {
          throw ConfigError("/model/family: Savage-Dickey needs two_piece or fsn effects");
        }
        SamplerOptions opts = cfg.sampler;
        opts.seed = seed;
        const auto chains = sample_chains(spec, need_y(cfg), opts, cfg.chains, cfg.threads);
        std::vector<double> pooled;
        for (const auto& c : chains) {
          const Eigen::VectorXd col = c.column(column);
          pooled.insert(pooled.end(), col.data(), col.data() + col.size());
        }
        const SavageDickeyResult r = savage_dickey(pooled, prior, gamma0);
        j = to_json(r);
        j["parameter"] = column;
        j["gamma0"] = gamma0;
        j["chains"] = chains.size();
        for (const auto& w : r.warnings) err << "warning: " << w << '\n';
      }
      out << dump(j);
      emit("bf.json", dump(j));
      break;
    }
    case Command::Dist: {
      const Json j = dist_json(cfg.dist, seed);
      emit("dist.json", dump(j));
      log("dist: " + cfg.dist.family);
      break;
    }
  }
  return result;
}

}  // namespace flexlmm
