#include "triad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "triad/evaluation.hpp"
#include "triad/oracle.hpp"
#include "triad/parallel.hpp"
#include "triad/rng.hpp"
#include "triad/sampling.hpp"

namespace fs = std::filesystem;

namespace triad {

// ---------------------------------------------------------------------------
// Names and budgets

namespace {

const std::vector<std::pair<Scenario, const char*>> kScenarioNames = {
    {Scenario::methods_vs_n, "methods_vs_n"},
    {Scenario::repeated_vs_random, "repeated_vs_random"},
    {Scenario::landmark_vs_random, "landmark_vs_random"},
    {Scenario::dimension_sweep, "dimension_sweep"},
    {Scenario::cross_subject, "cross_subject"},
    {Scenario::pooling, "pooling"},
    {Scenario::single_fit, "single_fit"},
};

const std::vector<std::pair<BudgetRule, const char*>> kBudgetNames = {
    {BudgetRule::fixed, "fixed"},
    {BudgetRule::n_log_n, "3nlog2n"},
    {BudgetRule::n2_log_n, "3n2log2n"},
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

[[noreturn]] void invalid(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::validation, where + ": " + what);
}

}  // namespace

std::string to_string(Scenario s) {
  for (const auto& [v, name] : kScenarioNames) {
    if (v == s) return name;
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
  for (const auto& [v, name] : kScenarioNames) {
    if (s == name) return v;
  }
  throw Error(ErrorCode::validation, "unknown scenario '" + s + "'");
}

std::string to_string(BudgetRule r) {
  for (const auto& [v, name] : kBudgetNames) {
    if (v == r) return name;
  }
  return "unknown";
}

BudgetRule budget_rule_from_string(const std::string& s) {
  for (const auto& [v, name] : kBudgetNames) {
    if (s == name) return v;
  }
  throw Error(ErrorCode::validation, "unknown budget rule '" + s + "' (fixed, 3nlog2n, 3n2log2n)");
}

std::size_t budget(BudgetRule rule, std::size_t n, std::size_t fixed_m) {
  if (n < 3) throw Error(ErrorCode::too_few_items, "budget needs n >= 3, got " + std::to_string(n));
  const double x = static_cast<double>(n);
  switch (rule) {
    case BudgetRule::fixed:
      return fixed_m;
    case BudgetRule::n_log_n:
      return static_cast<std::size_t>(std::ceil(3.0 * x * std::log2(x)));
    case BudgetRule::n2_log_n:
      return static_cast<std::size_t>(std::ceil(3.0 * x * x * std::log2(x)));
  }
  return fixed_m;
}

// ---------------------------------------------------------------------------
// Spec parsing

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) invalid(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) invalid(where + "." + key, "unknown or not allowed here");
  }
}

std::size_t get_size(const json& j, const std::string& where) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
    invalid(where, "expected a non-negative integer");
  }
  return j.get<std::size_t>();
}

double get_double(const json& j, const std::string& where) {
  if (!j.is_number()) invalid(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) invalid(where, "expected a finite number");
  return v;
}

std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) invalid(where, "expected a string");
  return j.get<std::string>();
}

std::vector<std::size_t> get_size_list(const json& j, const std::string& where) {
  std::vector<std::size_t> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_size(j[i], where + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(get_size(j, where));
  }
  return out;
}

std::vector<double> get_double_list(const json& j, const std::string& where) {
  std::vector<double> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_double(j[i], where + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(get_double(j, where));
  }
  return out;
}

std::vector<std::string> get_string_list(const json& j, const std::string& where) {
  std::vector<std::string> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_string(j[i], where + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(get_string(j, where));
  }
  return out;
}

std::set<std::string> scenario_keys(Scenario s) {
  std::set<std::string> keys{"scenario", "data", "methods", "embed", "seed", "output", "workers"};
  auto add = [&](std::initializer_list<const char*> more) {
    for (const char* k : more) keys.insert(k);
  };
  switch (s) {
    case Scenario::methods_vs_n:
      add({"budget", "noise_p", "runs", "truth_cap"});
      break;
    case Scenario::repeated_vs_random:
      add({"repeats", "base_m", "noise_levels", "runs", "truth_cap"});
      break;
    case Scenario::landmark_vs_random:
      add({"landmarks", "noise_levels", "runs", "truth_cap"});
      break;
    case Scenario::dimension_sweep:
      add({"dims", "train_size", "test_size", "noise_p", "runs"});
      break;
    case Scenario::cross_subject:
      add({"groups", "session_size", "train_size", "test_size", "runs"});
      break;
    case Scenario::pooling:
      add({"sessions", "session_size", "trials", "noise_p"});
      break;
    case Scenario::single_fit:
      add({"budget", "noise_p", "truth_cap"});
      break;
  }
  return keys;
}

DataSource parse_data(const json& j) {
  DataSource d;
  if (!j.is_object()) invalid("spec.data", "expected an object");
  const std::string source = j.contains("source") ? get_string(j["source"], "spec.data.source") : "unit_cube";
  if (source == "unit_cube") {
    d.kind = DataSource::Kind::unit_cube;
    check_keys(j, "spec.data", {"source", "n", "dim", "metadata"});
    if (j.contains("n")) d.n = get_size_list(j["n"], "spec.data.n");
    if (j.contains("dim")) d.dim = get_size(j["dim"], "spec.data.dim");
  } else if (source == "vectors") {
    d.kind = DataSource::Kind::vectors;
    check_keys(j, "spec.data", {"source", "path", "delimiter", "n", "metadata"});
    if (!j.contains("path")) invalid("spec.data.path", "required for vector data");
    d.path = get_string(j["path"], "spec.data.path");
    d.n.clear();
    if (j.contains("n")) d.n = get_size_list(j["n"], "spec.data.n");
    if (j.contains("delimiter")) {
      const auto delim = get_string(j["delimiter"], "spec.data.delimiter");
      if (delim.size() != 1) invalid("spec.data.delimiter", "expected a single character");
      d.delimiter = delim[0];
    }
  } else if (source == "answers") {
    d.kind = DataSource::Kind::answers;
    check_keys(j, "spec.data", {"source", "paths", "test_paths", "n_items", "metadata"});
    d.n.clear();
    if (j.contains("paths")) d.paths = get_string_list(j["paths"], "spec.data.paths");
    if (j.contains("test_paths")) d.test_paths = get_string_list(j["test_paths"], "spec.data.test_paths");
    if (j.contains("n_items")) d.n_items = get_size(j["n_items"], "spec.data.n_items");
  } else {
    invalid("spec.data.source", "unknown source '" + source + "' (unit_cube, vectors, answers)");
  }
  if (j.contains("metadata")) d.metadata = get_string(j["metadata"], "spec.data.metadata");
  return d;
}

std::string source_name(DataSource::Kind k) {
  switch (k) {
    case DataSource::Kind::unit_cube:
      return "unit_cube";
    case DataSource::Kind::vectors:
      return "vectors";
    case DataSource::Kind::answers:
      return "answers";
  }
  return "unit_cube";
}

void parse_embed(const json& j, EmbedConfig& cfg, bool& restarts_given) {
  check_keys(j, "spec.embed",
             {"d", "max_iters", "learning_rate", "tolerance", "max_halvings", "restarts", "margin", "alpha",
              "init_scale"});
  if (j.contains("d")) cfg.d = get_size(j["d"], "spec.embed.d");
  if (j.contains("max_iters")) cfg.max_iters = get_size(j["max_iters"], "spec.embed.max_iters");
  if (j.contains("learning_rate")) cfg.learning_rate = get_double(j["learning_rate"], "spec.embed.learning_rate");
  if (j.contains("tolerance")) cfg.tolerance = get_double(j["tolerance"], "spec.embed.tolerance");
  if (j.contains("max_halvings")) cfg.max_halvings = get_size(j["max_halvings"], "spec.embed.max_halvings");
  if (j.contains("restarts")) {
    cfg.restarts = get_size(j["restarts"], "spec.embed.restarts");
    restarts_given = true;
  }
  if (j.contains("margin")) cfg.margin = get_double(j["margin"], "spec.embed.margin");
  if (j.contains("alpha") && !j["alpha"].is_null()) cfg.alpha = get_double(j["alpha"], "spec.embed.alpha");
  if (j.contains("init_scale")) cfg.init_scale = get_double(j["init_scale"], "spec.embed.init_scale");
}

SubjectGroup parse_group(const json& j, const std::string& where) {
  check_keys(j, where, {"label", "paths", "subjects", "noise_p"});
  SubjectGroup g;
  if (!j.contains("label")) invalid(where + ".label", "required");
  g.label = get_string(j["label"], where + ".label");
  if (j.contains("paths")) g.paths = get_string_list(j["paths"], where + ".paths");
  if (j.contains("subjects")) g.subjects = get_size(j["subjects"], where + ".subjects");
  if (j.contains("noise_p")) g.noise_p = get_double(j["noise_p"], where + ".noise_p");
  return g;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json(const json& input) {
  const json& doc = input.is_object() && input.contains("manifest_version") ? input.at("spec") : input;
  if (!doc.is_object()) invalid("spec", "expected an object");
  if (!doc.contains("scenario")) invalid("spec.scenario", "required");
  ExperimentSpec s;
  s.scenario = scenario_from_string(get_string(doc["scenario"], "spec.scenario"));
  check_keys(doc, "spec", scenario_keys(s.scenario));

  if (doc.contains("data")) s.data = parse_data(doc["data"]);
  if (doc.contains("budget")) {
    const auto& b = doc["budget"];
    check_keys(b, "spec.budget", {"rule", "m"});
    if (b.contains("rule")) s.budget_rule = budget_rule_from_string(get_string(b["rule"], "spec.budget.rule"));
    if (b.contains("m")) {
      if (s.budget_rule != BudgetRule::fixed) invalid("spec.budget.m", "only meaningful with rule 'fixed'");
      s.budget_m = get_size(b["m"], "spec.budget.m");
    }
  }
  if (doc.contains("noise_p")) s.noise_p = get_double(doc["noise_p"], "spec.noise_p");
  if (doc.contains("methods")) s.methods = get_string_list(doc["methods"], "spec.methods");
  if (doc.contains("embed")) parse_embed(doc["embed"], s.embed, s.restarts_given);
  if (doc.contains("runs")) s.runs = get_size(doc["runs"], "spec.runs");
  if (doc.contains("seed")) {
    const auto& j = doc["seed"];
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
      invalid("spec.seed", "expected a non-negative integer");
    }
    s.seed = j.get<std::uint64_t>();
  }
  if (doc.contains("output")) s.output = get_string(doc["output"], "spec.output");
  if (doc.contains("workers")) s.workers = get_size(doc["workers"], "spec.workers");
  if (doc.contains("truth_cap")) s.truth_cap = get_size(doc["truth_cap"], "spec.truth_cap");
  if (doc.contains("repeats")) s.repeats = get_size_list(doc["repeats"], "spec.repeats");
  if (doc.contains("base_m")) s.base_m = get_size(doc["base_m"], "spec.base_m");
  if (doc.contains("noise_levels")) s.noise_levels = get_double_list(doc["noise_levels"], "spec.noise_levels");
  if (doc.contains("landmarks")) s.landmarks = get_size_list(doc["landmarks"], "spec.landmarks");
  if (doc.contains("dims")) s.dims = get_size_list(doc["dims"], "spec.dims");
  if (doc.contains("train_size")) s.train_size = get_size(doc["train_size"], "spec.train_size");
  if (doc.contains("test_size")) s.test_size = get_size(doc["test_size"], "spec.test_size");
  if (doc.contains("groups")) {
    const auto& g = doc["groups"];
    if (!g.is_array()) invalid("spec.groups", "expected an array");
    for (std::size_t i = 0; i < g.size(); ++i) {
      s.groups.push_back(parse_group(g[i], "spec.groups[" + std::to_string(i) + "]"));
    }
  }
  if (doc.contains("sessions")) s.sessions = get_size(doc["sessions"], "spec.sessions");
  if (doc.contains("session_size")) s.session_size = get_size(doc["session_size"], "spec.session_size");
  if (doc.contains("trials")) s.trials = get_size(doc["trials"], "spec.trials");
  s.validate();
  return s;
}

json ExperimentSpec::to_json() const {
  json j;
  j["scenario"] = to_string(scenario);
  json d;
  d["source"] = source_name(data.kind);
  switch (data.kind) {
    case DataSource::Kind::unit_cube:
      d["n"] = data.n;
      d["dim"] = data.dim;
      break;
    case DataSource::Kind::vectors:
      d["path"] = data.path;
      d["delimiter"] = std::string(1, data.delimiter);
      if (!data.n.empty()) d["n"] = data.n;
      break;
    case DataSource::Kind::answers:
      d["paths"] = data.paths;
      if (!data.test_paths.empty()) d["test_paths"] = data.test_paths;
      if (data.n_items) d["n_items"] = data.n_items;
      break;
  }
  if (!data.metadata.empty()) d["metadata"] = data.metadata;
  j["data"] = d;
  j["methods"] = methods;
  json e;
  e["d"] = embed.d;
  e["max_iters"] = embed.max_iters;
  e["learning_rate"] = embed.learning_rate;
  e["tolerance"] = embed.tolerance;
  e["max_halvings"] = embed.max_halvings;
  if (restarts_given) e["restarts"] = embed.restarts;
  e["margin"] = embed.margin;
  if (embed.alpha) e["alpha"] = *embed.alpha;
  e["init_scale"] = embed.init_scale;
  j["embed"] = e;
  j["seed"] = seed;
  if (!output.empty()) j["output"] = output;
  if (workers) j["workers"] = workers;

  const auto keys = scenario_keys(scenario);
  auto put = [&](const char* key, json value) {
    if (keys.contains(key)) j[key] = std::move(value);
  };
  json b;
  b["rule"] = to_string(budget_rule);
  if (budget_rule == BudgetRule::fixed) b["m"] = budget_m;
  put("budget", b);
  put("noise_p", noise_p);
  put("runs", runs);
  put("truth_cap", truth_cap);
  put("repeats", repeats);
  put("base_m", base_m);
  put("noise_levels", noise_levels);
  put("landmarks", landmarks);
  put("dims", dims);
  put("train_size", train_size);
  put("test_size", test_size);
  json groups_json = json::array();
  for (const auto& g : groups) {
    json gj;
    gj["label"] = g.label;
    if (!g.paths.empty()) gj["paths"] = g.paths;
    if (g.subjects) {
      gj["subjects"] = g.subjects;
      gj["noise_p"] = g.noise_p;
    }
    groups_json.push_back(gj);
  }
  put("groups", groups_json);
  put("sessions", sessions);
  put("session_size", session_size);
  put("trials", trials);
  return j;
}

void ExperimentSpec::validate() const {
  try {
    embed.validate();
  } catch (const Error& e) {
    invalid("spec.embed", e.what());
  }
  if (runs == 0) invalid("spec.runs", "must be >= 1");
  if (methods.empty()) invalid("spec.methods", "at least one method is required");
  std::set<std::string> seen;
  for (const auto& m : methods) {
    Learner l;
    try {
      l = learner_from_string(m);
    } catch (const Error& e) {
      invalid("spec.methods", e.what());
    }
    if (!seen.insert(lower(l.name())).second) invalid("spec.methods", "duplicate method '" + m + "'");
    if (!l.is_embedding() && (scenario == Scenario::dimension_sweep)) {
      invalid("spec.methods", "dimension sweeps need embedding methods, got '" + m + "'");
    }
  }
  auto check_noise = [](double p, const std::string& where) {
    if (!(p >= 0.0 && p < 0.5)) invalid(where, "noise must lie in [0, 0.5)");
  };
  check_noise(noise_p, "spec.noise_p");
  for (double p : noise_levels) check_noise(p, "spec.noise_levels");

  const bool simulated = data.kind != DataSource::Kind::answers;
  if (data.kind == DataSource::Kind::unit_cube) {
    if (data.n.empty()) invalid("spec.data.n", "at least one item count is required");
    if (data.dim == 0) invalid("spec.data.dim", "must be >= 1");
  }
  for (auto n : data.n) {
    if (n < 3) invalid("spec.data.n", "item counts must be >= 3");
  }
  if (data.kind == DataSource::Kind::answers && data.paths.empty() && scenario != Scenario::cross_subject) {
    invalid("spec.data.paths", "answer data needs at least one file");
  }
  if (budget_rule == BudgetRule::fixed && budget_m == 0 &&
      (scenario == Scenario::methods_vs_n || (scenario == Scenario::single_fit && simulated))) {
    invalid("spec.budget.m", "fixed budget needs m >= 1");
  }

  switch (scenario) {
    case Scenario::methods_vs_n:
    case Scenario::repeated_vs_random:
    case Scenario::landmark_vs_random:
      if (!simulated) invalid("spec.data.source", "this scenario needs ground-truth points");
      break;
    default:
      break;
  }
  switch (scenario) {
    case Scenario::repeated_vs_random:
      if (repeats.empty()) invalid("spec.repeats", "at least one repetition count is required");
      for (auto l : repeats) {
        if (l == 0 || l % 2 == 0) invalid("spec.repeats", "repetition counts must be odd");
      }
      if (base_m == 0) invalid("spec.base_m", "must be >= 1");
      if (noise_levels.empty()) invalid("spec.noise_levels", "at least one noise level is required");
      break;
    case Scenario::landmark_vs_random:
      if (landmarks.empty()) invalid("spec.landmarks", "at least one landmark count is required");
      for (auto k : landmarks) {
        if (k < 2) invalid("spec.landmarks", "landmark counts must be >= 2");
        for (auto n : data.n) {
          if (k > n) invalid("spec.landmarks", "landmark count " + std::to_string(k) + " exceeds n=" + std::to_string(n));
        }
      }
      if (noise_levels.empty()) invalid("spec.noise_levels", "at least one noise level is required");
      break;
    case Scenario::dimension_sweep:
      if (dims.empty()) invalid("spec.dims", "at least one dimension is required");
      for (auto d : dims) {
        if (d == 0) invalid("spec.dims", "dimensions must be >= 1");
      }
      if (test_size == 0) invalid("spec.test_size", "must be >= 1");
      if (train_size == 0) invalid("spec.train_size", "must be >= 1");
      break;
    case Scenario::cross_subject: {
      if (groups.empty()) invalid("spec.groups", "at least one group is required");
      std::set<std::string> labels;
      for (const auto& g : groups) {
        if (!labels.insert(g.label).second) invalid("spec.groups", "duplicate label '" + g.label + "'");
        if (g.label.empty() || g.label.find('/') != std::string::npos) {
          invalid("spec.groups", "labels must be non-empty and contain no '/'");
        }
        if (g.paths.empty() == (g.subjects == 0)) {
          invalid("spec.groups." + g.label, "give either answer paths or a simulated subject count");
        }
        if (g.subjects && !simulated) invalid("spec.groups." + g.label, "simulated subjects need point data");
        check_noise(g.noise_p, "spec.groups." + g.label + ".noise_p");
      }
      if (test_size == 0 || train_size == 0) invalid("spec.train_size", "split sizes must be >= 1");
      if (session_size == 0) invalid("spec.session_size", "must be >= 1");
      break;
    }
    case Scenario::pooling:
      if (trials == 0) invalid("spec.trials", "must be >= 1");
      if (simulated && sessions < 2) invalid("spec.sessions", "pooling needs at least 2 sessions");
      if (!simulated && data.paths.size() < 2) invalid("spec.data.paths", "pooling needs at least 2 session files");
      if (session_size == 0) invalid("spec.session_size", "must be >= 1");
      break;
    default:
      break;
  }
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
  return ExperimentSpec::from_json(doc);
}

// ---------------------------------------------------------------------------
// Execution plan

namespace {

struct Row {
  std::string panel;
  json x;
  std::string series;
  double accuracy = 0.0;
  std::size_t n_test = 0;
  double std_error = 0.0;
  bool sampled = false;
  // Set when the job already aggregated over its own trials.
  std::optional<double> preset_sd;
  std::size_t preset_count = 1;
};

struct JobOutput {
  std::vector<Row> rows;
  std::vector<std::string> errors;
};

struct Job {
  std::size_t run = 0;
  std::string key;
  std::function<void(JobOutput&)> fn;
};

struct Panel {
  std::string name;
  std::string x_name;
  std::vector<json> xs;
  std::vector<std::string> series;
};

struct Plan {
  std::vector<Panel> panels;
  std::vector<Job> jobs;
  std::size_t inner_workers = 1;
};

struct Context {
  const ExperimentSpec& spec;
  std::string out_dir;
  std::vector<std::uint64_t> run_seeds;
  std::shared_ptr<const VectorDataset> vectors;  // ingested once
};

std::string series_name(const std::string& method) { return lower(learner_from_string(method).name()); }

Learner make_learner(const ExperimentSpec& spec, const std::string& method, std::size_t n) {
  EmbedConfig cfg = spec.embed;
  if (!spec.restarts_given) cfg.restarts = default_restarts(n);
  return learner_from_string(method, cfg);
}

Row report_row(std::string panel, json x, std::string series, const PredictionReport& r) {
  Row row;
  row.panel = std::move(panel);
  row.x = std::move(x);
  row.series = std::move(series);
  row.accuracy = r.accuracy;
  row.n_test = r.n_test;
  row.std_error = r.std_error;
  row.sampled = r.sampled;
  return row;
}

std::size_t point_count(const Context& ctx, std::size_t requested) {
  if (ctx.vectors && requested == 0) return ctx.vectors->size();
  return requested;
}

std::shared_ptr<const VectorDataset> make_points(const Context& ctx, std::size_t n, std::uint64_t seed) {
  if (!ctx.vectors) return std::make_shared<VectorDataset>(sample_unit_cube(n, ctx.spec.data.dim, seed));
  const auto& full = *ctx.vectors;
  if (n == 0 || n >= full.size()) return ctx.vectors;
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(full.size(), n);
  std::sort(idx.begin(), idx.end());
  std::vector<double> coords;
  std::vector<std::string> labels;
  coords.reserve(n * full.dim());
  for (auto i : idx) {
    const auto p = full.point(static_cast<ItemId>(i));
    coords.insert(coords.end(), p.begin(), p.end());
    if (!full.items().labels().empty()) labels.push_back(full.items().labels()[i]);
  }
  auto items = labels.empty() ? std::make_shared<ItemSet>(n) : std::make_shared<ItemSet>(n, std::move(labels));
  return std::make_shared<VectorDataset>(items, full.dim(), std::move(coords));
}

AnswerSet answer_with_noise(std::shared_ptr<const VectorDataset> ds, const std::vector<Triplet>& triplets, double p,
                            std::uint64_t seed, const std::string& provenance) {
  NoisyOracle oracle(std::move(ds), p, seed);
  return oracle.answer_all(triplets, provenance);
}

// Each of the m/l draws is answered l times and reduced to its own majority
// record. Voting per draw keeps groups odd when two draws hit one question.
AnswerSet answer_repeated_voted(std::shared_ptr<const VectorDataset> ds, std::size_t m, std::size_t l, double p,
                                Rng& rng, std::uint64_t noise_seed) {
  const auto draws = sample_random(ds->size(), m / l, rng);
  NoisyOracle oracle(ds, p, noise_seed);
  AnswerSet voted(ds->item_set(), "repeated");
  voted.reserve(draws.size());
  for (const auto& t : draws) {
    std::size_t left = 0;
    for (std::size_t k = 0; k < l; ++k) left += oracle.answer(t).value;
    voted.add(t, Answer{static_cast<std::uint8_t>(2 * left > l ? 1 : 0), std::nullopt, "repeated"});
  }
  return voted;
}

// Runs every method on one training set and records truth accuracy.
void fit_all_truth(const Context& ctx, JobOutput& out, const AnswerSet& train, const VectorDataset& ds,
                   std::uint64_t seed, const std::string& panel, const json& x, const std::string& prefix,
                   const std::string& suffix) {
  const bool single = ctx.spec.methods.size() == 1;
  for (const auto& method : ctx.spec.methods) {
    const std::string series = (single ? "" : series_name(method) + "_") + prefix + suffix;
    try {
      const auto learner = make_learner(ctx.spec, method, ds.size());
      const auto model = fit(learner, train, derive_seed(seed, Stream::init));
      const auto report =
          exhaustive_or_sampled_truth_accuracy(model, ds, ctx.spec.truth_cap, derive_seed(seed, Stream::evaluation));
      out.rows.push_back(report_row(panel, x, series, report));
    } catch (const std::exception& e) {
      out.errors.push_back(series + ": " + e.what());
    }
  }
}

std::vector<std::string> truth_series(const ExperimentSpec& spec, const std::vector<std::string>& variants) {
  std::vector<std::string> out;
  if (spec.methods.size() == 1) return variants;
  for (const auto& m : spec.methods) {
    for (const auto& v : variants) out.push_back(series_name(m) + "_" + v);
  }
  return out;
}

std::string number_label(double v) { return csv::format_double(v); }

Plan plan_methods_vs_n(Context& ctx) {
  const auto& spec = ctx.spec;
  Plan plan;
  Panel panel{"accuracy_vs_n", "n", {}, {}};
  for (auto n : spec.data.n) panel.xs.push_back(n);
  if (panel.xs.empty()) panel.xs.push_back(point_count(ctx, 0));
  for (const auto& m : spec.methods) panel.series.push_back(series_name(m));
  plan.panels.push_back(panel);
  for (std::size_t r = 0; r < spec.runs; ++r) {
    for (std::size_t ni = 0; ni < panel.xs.size(); ++ni) {
      const std::size_t n = panel.xs[ni].get<std::size_t>();
      plan.jobs.push_back({r, "run" + std::to_string(r) + "/n" + std::to_string(n), [&ctx, r, ni, n](JobOutput& out) {
                             const auto& spec = ctx.spec;
                             const auto seed = ctx.run_seeds[r];
                             const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points, ni));
                             Rng rng(seed, Stream::triplets, ni);
                             const auto m = budget(spec.budget_rule, ds->size(), spec.budget_m);
                             const auto triplets = sample_random(ds->size(), m, rng);
                             const auto train = answer_with_noise(ds, triplets, spec.noise_p,
                                                                  derive_seed(seed, Stream::noise, ni), "simulated");
                             for (const auto& method : spec.methods) {
                               const auto series = series_name(method);
                               try {
                                 const auto learner = make_learner(spec, method, ds->size());
                                 const auto model = fit(learner, train, derive_seed(seed, Stream::init, ni));
                                 const auto report = exhaustive_or_sampled_truth_accuracy(
                                     model, *ds, spec.truth_cap, derive_seed(seed, Stream::evaluation, ni));
                                 out.rows.push_back(report_row("accuracy_vs_n", json(n), series, report));
                               } catch (const std::exception& e) {
                                 out.errors.push_back(series + ": " + e.what());
                               }
                             }
                           }});
    }
  }
  return plan;
}

Plan plan_repeated(Context& ctx) {
  const auto& spec = ctx.spec;
  Plan plan;
  std::vector<std::string> variants;
  for (auto l : spec.repeats) {
    variants.push_back("repeated_l" + std::to_string(l));
    variants.push_back("random_l" + std::to_string(l));
  }
  for (auto n : spec.data.n.empty() ? std::vector<std::size_t>{0} : spec.data.n) {
    Panel p{"n" + std::to_string(point_count(ctx, n)), "noise", {}, truth_series(spec, variants)};
    for (double q : spec.noise_levels) p.xs.push_back(q);
    plan.panels.push_back(p);
  }
  for (std::size_t r = 0; r < spec.runs; ++r) {
    std::size_t cell = 0;
    for (std::size_t ni = 0; ni < plan.panels.size(); ++ni) {
      for (std::size_t pi = 0; pi < spec.noise_levels.size(); ++pi) {
        for (std::size_t li = 0; li < spec.repeats.size(); ++li, ++cell) {
          const std::string panel = plan.panels[ni].name;
          const std::size_t n = spec.data.n.empty() ? 0 : spec.data.n[ni];
          const double p = spec.noise_levels[pi];
          const std::size_t l = spec.repeats[li];
          plan.jobs.push_back(
              {r, "run" + std::to_string(r) + "/" + panel + "/p" + number_label(p) + "/l" + std::to_string(l),
               [&ctx, r, ni, n, p, l, cell, panel](JobOutput& out) {
                 const auto& spec = ctx.spec;
                 const auto seed = ctx.run_seeds[r];
                 const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points, ni));
                 const std::size_t N = ds->size();
                 const std::size_t m = spec.base_m * l;
                 Rng rep_rng(seed, Stream::triplets, 2 * cell);
                 Rng rnd_rng(seed, Stream::triplets, 2 * cell + 1);
                 const auto voted =
                     answer_repeated_voted(ds, m, l, p, rep_rng, derive_seed(seed, Stream::noise, 2 * cell));
                 const auto random = sample_random(N, m, rnd_rng);
                 const auto rnd_answers =
                     answer_with_noise(ds, random, p, derive_seed(seed, Stream::noise, 2 * cell + 1), "random");
                 const std::string tag = "_l" + std::to_string(l);
                 fit_all_truth(ctx, out, voted, *ds, derive_seed(seed, 2 * cell), panel, json(p), "repeated", tag);
                 fit_all_truth(ctx, out, rnd_answers, *ds, derive_seed(seed, 2 * cell + 1), panel, json(p), "random",
                               tag);
               }});
        }
      }
    }
  }
  return plan;
}

Plan plan_landmark(Context& ctx) {
  const auto& spec = ctx.spec;
  Plan plan;
  const auto ns = spec.data.n.empty() ? std::vector<std::size_t>{0} : spec.data.n;
  const auto series = truth_series(spec, {"landmark", "random"});
  for (auto n : ns) {
    for (double p : spec.noise_levels) {
      Panel panel{"n" + std::to_string(point_count(ctx, n)) + "_p" + number_label(p), "k", {}, series};
      for (auto k : spec.landmarks) panel.xs.push_back(k);
      plan.panels.push_back(panel);
    }
  }
  for (std::size_t r = 0; r < spec.runs; ++r) {
    std::size_t cell = 0;
    for (std::size_t ni = 0; ni < ns.size(); ++ni) {
      for (std::size_t pi = 0; pi < spec.noise_levels.size(); ++pi) {
        const std::string panel = plan.panels[ni * spec.noise_levels.size() + pi].name;
        for (std::size_t ki = 0; ki < spec.landmarks.size(); ++ki, ++cell) {
          const std::size_t n = ns[ni];
          const double p = spec.noise_levels[pi];
          const std::size_t k = spec.landmarks[ki];
          plan.jobs.push_back(
              {r, "run" + std::to_string(r) + "/" + panel + "/k" + std::to_string(k),
               [&ctx, r, ni, n, p, k, cell, panel](JobOutput& out) {
                 const auto seed = ctx.run_seeds[r];
                 const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points, ni));
                 const std::size_t N = ds->size();
                 if (k > N) throw Error(ErrorCode::plan, "landmark count exceeds item count");
                 Rng lm_rng(seed, Stream::landmarks, cell);
                 const auto landmarks = choose_landmarks(N, k, lm_rng);
                 Rng lt_rng(seed, Stream::triplets, 2 * cell);
                 const auto lm_triplets = sample_landmark(N, landmarks, lt_rng);
                 Rng rnd_rng(seed, Stream::triplets, 2 * cell + 1);
                 const auto rnd_triplets = sample_random(N, lm_triplets.size(), rnd_rng);
                 const auto lm_answers =
                     answer_with_noise(ds, lm_triplets, p, derive_seed(seed, Stream::noise, 2 * cell), "landmark");
                 const auto rnd_answers =
                     answer_with_noise(ds, rnd_triplets, p, derive_seed(seed, Stream::noise, 2 * cell + 1), "random");
                 fit_all_truth(ctx, out, lm_answers, *ds, derive_seed(seed, 2 * cell), panel, json(k), "landmark", "");
                 fit_all_truth(ctx, out, rnd_answers, *ds, derive_seed(seed, 2 * cell + 1), panel, json(k), "random",
                               "");
               }});
        }
      }
    }
  }
  return plan;
}

std::shared_ptr<const ItemSet> shared_items(std::size_t n) { return std::make_shared<ItemSet>(n); }

// Reads answer files onto one common item set.
std::vector<AnswerSet> read_answer_files(const std::vector<std::string>& paths, std::size_t n_items) {
  std::vector<AnswerSet> sets;
  for (const auto& p : paths) sets.push_back(read_records(p, n_items));
  if (n_items == 0) {
    std::size_t n = 3;
    for (const auto& s : sets) n = std::max(n, s.n_items());
    const auto items = shared_items(n);
    for (auto& s : sets) {
      AnswerSet moved(items, s.provenance());
      moved.reserve(s.size());
      for (const auto& r : s.records()) moved.add(r);
      s = std::move(moved);
    }
  }
  for (std::size_t i = 0; i < sets.size(); ++i) sets[i].set_provenance(fs::path(paths[i]).stem().string());
  return sets;
}

AnswerSet concat(const std::vector<AnswerSet>& sets, const std::string& provenance) {
  AnswerSet out(sets.front().item_set(), provenance);
  for (const auto& s : sets) out.append(s);
  return out;
}

struct TrainTest {
  AnswerSet train;
  AnswerSet test;
  std::shared_ptr<const VectorDataset> truth;
};

// Train/test data for the sweep from files or from a simulated source.
TrainTest sweep_data(const Context& ctx, std::uint64_t seed) {
  const auto& spec = ctx.spec;
  if (spec.data.kind == DataSource::Kind::answers) {
    const std::size_t n_items = spec.data.n_items;
    std::vector<std::string> all = spec.data.paths;
    all.insert(all.end(), spec.data.test_paths.begin(), spec.data.test_paths.end());
    auto sets = read_answer_files(all, n_items);
    std::vector<AnswerSet> train_sets(sets.begin(), sets.begin() + static_cast<std::ptrdiff_t>(spec.data.paths.size()));
    auto train = concat(train_sets, "train");
    if (spec.data.test_paths.empty()) {
      auto split = split_train_test(train, std::min(spec.train_size, train.size()), spec.test_size,
                                    derive_seed(seed, Stream::split));
      return {std::move(split.train), std::move(split.test), nullptr};
    }
    std::vector<AnswerSet> test_sets(sets.begin() + static_cast<std::ptrdiff_t>(spec.data.paths.size()), sets.end());
    auto test = concat(test_sets, "test");
    return {exclude_questions(train, test), std::move(test), nullptr};
  }
  const std::size_t n = spec.data.n.empty() ? 0 : spec.data.n.front();
  const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points));
  Rng train_rng(seed, Stream::triplets, 0);
  Rng test_rng(seed, Stream::triplets, 1);
  const auto test =
      answer_with_noise(ds, sample_random(ds->size(), spec.test_size, test_rng), spec.noise_p,
                        derive_seed(seed, Stream::noise, 1), "test");
  const auto train =
      answer_with_noise(ds, sample_random(ds->size(), spec.train_size, train_rng), spec.noise_p,
                        derive_seed(seed, Stream::noise, 0), "train");
  return {exclude_questions(train, test), test, ds};
}

Plan plan_dimension_sweep(Context& ctx) {
  const auto& spec = ctx.spec;
  Plan plan;
  Panel panel{"accuracy_vs_d", "d", {}, {}};
  for (auto d : spec.dims) panel.xs.push_back(d);
  for (const auto& m : spec.methods) panel.series.push_back(series_name(m));
  plan.panels.push_back(panel);
  for (std::size_t r = 0; r < spec.runs; ++r) {
    for (std::size_t di = 0; di < spec.dims.size(); ++di) {
      const std::size_t d = spec.dims[di];
      plan.jobs.push_back({r, "run" + std::to_string(r) + "/d" + std::to_string(d), [&ctx, r, d](JobOutput& out) {
                             const auto& spec = ctx.spec;
                             const auto seed = ctx.run_seeds[r];
                             const auto data = sweep_data(ctx, seed);
                             for (const auto& method : spec.methods) {
                               const auto series = series_name(method);
                               try {
                                 EmbedConfig cfg = make_learner(spec, method, data.train.n_items()).embed;
                                 const auto cells = dimension_sweep(data.train, data.test, {d},
                                                                    {embed_method_from_string(method)}, cfg,
                                                                    derive_seed(seed, Stream::init), 1);
                                 out.rows.push_back(report_row("accuracy_vs_d", json(d), series, cells.front().report));
                               } catch (const std::exception& e) {
                                 out.errors.push_back(series + ": " + e.what());
                               }
                             }
                           }});
    }
  }
  return plan;
}

// Answer sets of one cross-subject group for one run.
std::vector<AnswerSet> group_sets(const Context& ctx, std::size_t r, std::size_t gi) {
  const auto& spec = ctx.spec;
  const auto& g = spec.groups[gi];
  if (!g.paths.empty()) {
    auto sets = read_answer_files(g.paths, spec.data.n_items);
    return sets;
  }
  const auto seed = ctx.run_seeds[r];
  const std::size_t n = spec.data.n.empty() ? 0 : spec.data.n.front();
  const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points));
  std::vector<AnswerSet> sets;
  for (std::size_t s = 0; s < g.subjects; ++s) {
    const std::uint64_t subject = (gi << 20) | s;
    Rng rng(seed, Stream::triplets, subject);
    const auto triplets = sample_random(ds->size(), spec.session_size, rng);
    sets.push_back(answer_with_noise(ds, triplets, g.noise_p, derive_seed(seed, Stream::noise, subject),
                                     g.label + "-" + std::to_string(s + 1)));
  }
  return sets;
}

Plan plan_cross_subject(Context& ctx, std::size_t workers) {
  const auto& spec = ctx.spec;
  Plan plan;
  Panel panel{"transfer", "block", {}, {}};
  for (const auto& a : spec.groups) {
    for (const auto& b : spec.groups) panel.xs.push_back(a.label + "/" + b.label);
  }
  for (const auto& m : spec.methods) {
    panel.series.push_back(series_name(m));
    panel.series.push_back(series_name(m) + "_within");
  }
  plan.panels.push_back(panel);
  const std::size_t G = spec.groups.size();
  const std::size_t jobs_per_run = G * G;
  plan.inner_workers = std::max<std::size_t>(1, workers / std::max<std::size_t>(1, jobs_per_run * spec.runs));
  for (std::size_t r = 0; r < spec.runs; ++r) {
    for (std::size_t a = 0; a < G; ++a) {
      for (std::size_t b = 0; b < G; ++b) {
        const std::string block = spec.groups[a].label + "/" + spec.groups[b].label;
        const std::size_t inner = plan.inner_workers;
        plan.jobs.push_back({r, "run" + std::to_string(r) + "/" + block, [&ctx, r, a, b, block, inner](JobOutput& out) {
                               const auto& spec = ctx.spec;
                               const auto seed = ctx.run_seeds[r];
                               const auto train_sets = group_sets(ctx, r, a);
                               const auto test_sets = a == b ? std::vector<AnswerSet>{} : group_sets(ctx, r, b);
                               const auto& tests = a == b ? train_sets : test_sets;
                               for (const auto& method : spec.methods) {
                                 const auto series = series_name(method);
                                 try {
                                   CrossSubjectConfig cfg;
                                   cfg.learner = make_learner(spec, method, train_sets.front().n_items());
                                   cfg.n_train = spec.train_size;
                                   cfg.n_test = spec.test_size;
                                   cfg.seed = derive_seed(seed, Stream::split);
                                   cfg.block = block;
                                   cfg.workers = inner;
                                   const auto m = cross_subject(train_sets, tests, cfg);
                                   for (std::size_t i = 0; i < m.cells.size(); ++i) {
                                     for (std::size_t j = 0; j < m.cells[i].size(); ++j) {
                                       out.rows.push_back(report_row("cells", json(m.row_labels[i] + "|" + m.col_labels[j]),
                                                                     series + ":" + block, m.cells[i][j]));
                                     }
                                   }
                                   const bool has_off = !(a == b && m.cells.size() < 2);
                                   if (has_off) {
                                     Row row;
                                     row.panel = "transfer";
                                     row.x = block;
                                     row.series = series;
                                     row.accuracy = m.mean_accuracy(false);
                                     out.rows.push_back(row);
                                   }
                                   if (a == b) {
                                     Row row;
                                     row.panel = "transfer";
                                     row.x = block;
                                     row.series = series + "_within";
                                     row.accuracy = m.mean_diagonal();
                                     out.rows.push_back(row);
                                   }
                                 } catch (const std::exception& e) {
                                   out.errors.push_back(series + ": " + e.what());
                                 }
                               }
                             }});
      }
    }
  }
  return plan;
}

std::vector<AnswerSet> pooling_sessions(const Context& ctx) {
  const auto& spec = ctx.spec;
  if (spec.data.kind == DataSource::Kind::answers) return read_answer_files(spec.data.paths, spec.data.n_items);
  const auto seed = ctx.run_seeds.front();
  const std::size_t n = spec.data.n.empty() ? 0 : spec.data.n.front();
  const auto ds = make_points(ctx, n, derive_seed(seed, Stream::points));
  std::vector<AnswerSet> sessions;
  for (std::size_t s = 0; s < spec.sessions; ++s) {
    Rng rng(seed, Stream::triplets, s);
    const auto triplets = sample_random(ds->size(), spec.session_size, rng);
    sessions.push_back(answer_with_noise(ds, triplets, spec.noise_p, derive_seed(seed, Stream::noise, s),
                                         "session-" + std::to_string(s + 1)));
  }
  return sessions;
}

Plan plan_pooling(Context& ctx, std::size_t workers) {
  const auto& spec = ctx.spec;
  Plan plan;
  const std::size_t S = spec.data.kind == DataSource::Kind::answers ? spec.data.paths.size() : spec.sessions;
  Panel panel{"pooling", "pool_size", {}, {}};
  for (std::size_t k = 1; k < S; ++k) panel.xs.push_back(k);
  for (const auto& m : spec.methods) panel.series.push_back(series_name(m));
  plan.panels.push_back(panel);
  plan.inner_workers = std::max<std::size_t>(1, workers / spec.methods.size());
  const std::size_t inner = plan.inner_workers;
  for (const auto& method : spec.methods) {
    plan.jobs.push_back({0, "pool/" + series_name(method), [&ctx, method, inner](JobOutput& out) {
                           const auto& spec = ctx.spec;
                           const auto sessions = pooling_sessions(ctx);
                           const auto learner = make_learner(spec, method, sessions.front().n_items());
                           const auto curve = pooling_curve(sessions, spec.trials, learner,
                                                            derive_seed(ctx.run_seeds.front(), Stream::shuffle), inner);
                           for (const auto& point : curve) {
                             Row row;
                             row.panel = "pooling";
                             row.x = point.pool_size;
                             row.series = series_name(method);
                             row.accuracy = point.mean;
                             row.preset_sd = point.sd;
                             row.preset_count = point.trials;
                             out.rows.push_back(row);
                           }
                         }});
  }
  return plan;
}

// item_id -> remaining columns of a metadata table, plus its header.
struct Metadata {
  std::vector<std::string> header;
  std::map<std::size_t, std::vector<std::string>> rows;
};

Metadata read_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open metadata '" + path + "'");
  Metadata md;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (csv::trim(line).empty()) continue;
    auto fields = csv::split(line);
    if (md.header.empty()) {
      if (fields.empty() || csv::trim(fields[0]) != "item_id") {
        throw Error(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": first column must be item_id");
      }
      md.header.assign(fields.begin() + 1, fields.end());
      continue;
    }
    const auto id = csv::parse_int(csv::trim(fields[0]));
    if (!id || *id < 0) throw Error(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": bad item_id");
    fields.erase(fields.begin());
    fields.resize(md.header.size());
    md.rows[static_cast<std::size_t>(*id)] = fields;
  }
  return md;
}

void write_annotated(const std::string& path, const Embedding& e, const Metadata& md) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  out << "item_id";
  for (std::size_t k = 0; k < e.d; ++k) out << ",c" << k;
  for (const auto& h : md.header) out << ',' << csv::quote(h);
  out << '\n';
  for (std::size_t i = 0; i < e.n; ++i) {
    out << i;
    for (double v : e.point(static_cast<ItemId>(i))) out << ',' << csv::format_double(v);
    const auto it = md.rows.find(i);
    for (std::size_t c = 0; c < md.header.size(); ++c) {
      out << ',';
      if (it != md.rows.end()) out << csv::quote(it->second[c]);
    }
    out << '\n';
  }
}

Plan plan_single_fit(Context& ctx) {
  const auto& spec = ctx.spec;
  Plan plan;
  const bool has_test = spec.data.kind != DataSource::Kind::answers || !spec.data.test_paths.empty();
  Panel panel{"fit", "method", {}, {}};
  for (const auto& m : spec.methods) panel.xs.push_back(series_name(m));
  if (has_test) panel.series.push_back("accuracy");
  panel.series.push_back("train_accuracy");
  plan.panels.push_back(panel);
  for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
    const auto method = spec.methods[mi];
    plan.jobs.push_back({0, "fit/" + series_name(method), [&ctx, method, mi](JobOutput& out) {
                           const auto& spec = ctx.spec;
                           const auto seed = ctx.run_seeds.front();
                           const auto name = series_name(method);
                           AnswerSet train;
                           std::optional<AnswerSet> test;
                           std::shared_ptr<const VectorDataset> ds;
                           if (spec.data.kind == DataSource::Kind::answers) {
                             std::vector<std::string> all = spec.data.paths;
                             all.insert(all.end(), spec.data.test_paths.begin(), spec.data.test_paths.end());
                             auto sets = read_answer_files(all, spec.data.n_items);
                             std::vector<AnswerSet> tr(sets.begin(),
                                                       sets.begin() + static_cast<std::ptrdiff_t>(spec.data.paths.size()));
                             train = concat(tr, "train");
                             if (!spec.data.test_paths.empty()) {
                               std::vector<AnswerSet> te(
                                   sets.begin() + static_cast<std::ptrdiff_t>(spec.data.paths.size()), sets.end());
                               test = concat(te, "test");
                             }
                           } else {
                             const std::size_t n = spec.data.n.empty() ? 0 : spec.data.n.front();
                             ds = make_points(ctx, n, derive_seed(seed, Stream::points));
                             Rng rng(seed, Stream::triplets);
                             const auto m = budget(spec.budget_rule, ds->size(), spec.budget_m);
                             train = answer_with_noise(ds, sample_random(ds->size(), m, rng), spec.noise_p,
                                                       derive_seed(seed, Stream::noise), "simulated");
                           }
                           const auto learner = make_learner(spec, method, train.n_items());
                           const auto model = fit(learner, train, derive_seed(seed, Stream::init, mi));
                           const fs::path base = fs::path(ctx.out_dir) / ("fit_" + name + ".csv");
                           if (const auto* e = std::get_if<Embedding>(&model)) {
                             export_embedding(base.string(), *e);
                             if (!spec.data.metadata.empty()) {
                               const auto md = read_metadata(spec.data.metadata);
                               write_annotated((fs::path(ctx.out_dir) / ("fit_" + name + "_annotated.csv")).string(), *e,
                                               md);
                             }
                           } else {
                             export_scores(base.string(), std::get<PairScoreTable>(model));
                           }
                           out.rows.push_back(report_row("fit", json(name), "train_accuracy", evaluate(model, train)));
                           if (test) {
                             out.rows.push_back(report_row("fit", json(name), "accuracy", evaluate(model, *test)));
                           } else if (ds) {
                             out.rows.push_back(report_row(
                                 "fit", json(name), "accuracy",
                                 exhaustive_or_sampled_truth_accuracy(model, *ds, spec.truth_cap,
                                                                      derive_seed(seed, Stream::evaluation))));
                           }
                         }});
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Output

std::string x_text(const json& x) {
  if (x.is_string()) return x.get<std::string>();
  if (x.is_number_unsigned()) return std::to_string(x.get<std::uint64_t>());
  if (x.is_number_integer()) return std::to_string(x.get<std::int64_t>());
  if (x.is_number()) return csv::format_double(x.get<double>());
  return x.dump();
}

std::string value_text(const json& v) {
  if (v.is_null()) return "";
  return x_text(v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

std::string utc_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace

std::string default_output_dir(Scenario scenario) {
  const char* env = std::getenv("TRIAD_OUTPUT_ROOT");
  const fs::path root = env && *env ? env : "results";
  const std::string base = to_string(scenario) + "-" + utc_stamp();
  fs::path dir = root / base;
  for (int i = 2; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  return dir.string();
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  spec.validate();
  const std::size_t workers =
      options.workers.value_or(spec.workers ? spec.workers : default_workers());
  std::string dir = options.out_dir.value_or(spec.output);
  if (dir.empty()) dir = default_output_dir(spec.scenario);
  fs::create_directories(dir);

  Context ctx{spec, dir, {}, nullptr};
  const std::size_t runs =
      spec.scenario == Scenario::pooling || spec.scenario == Scenario::single_fit ? 1 : spec.runs;
  for (std::size_t r = 0; r < runs; ++r) ctx.run_seeds.push_back(derive_seed(spec.seed, r));
  if (spec.data.kind == DataSource::Kind::vectors) {
    ctx.vectors = std::make_shared<VectorDataset>(ingest_vectors(spec.data.path, spec.data.delimiter));
    for (auto n : spec.data.n) {
      if (n > ctx.vectors->size()) {
        invalid("spec.data.n", "requested " + std::to_string(n) + " items but '" + spec.data.path + "' has " +
                                   std::to_string(ctx.vectors->size()));
      }
    }
  }

  Plan plan;
  switch (spec.scenario) {
    case Scenario::methods_vs_n:
      plan = plan_methods_vs_n(ctx);
      break;
    case Scenario::repeated_vs_random:
      plan = plan_repeated(ctx);
      break;
    case Scenario::landmark_vs_random:
      plan = plan_landmark(ctx);
      break;
    case Scenario::dimension_sweep:
      plan = plan_dimension_sweep(ctx);
      break;
    case Scenario::cross_subject:
      plan = plan_cross_subject(ctx, workers);
      break;
    case Scenario::pooling:
      plan = plan_pooling(ctx, workers);
      break;
    case Scenario::single_fit:
      plan = plan_single_fit(ctx);
      break;
  }

  std::vector<JobOutput> outputs(plan.jobs.size());
  parallel_for(plan.jobs.size(), std::max<std::size_t>(1, workers / plan.inner_workers), [&](std::size_t i) {
    try {
      plan.jobs[i].fn(outputs[i]);
    } catch (const std::exception& e) {
      outputs[i].errors.push_back(e.what());
    }
  });

  // Deterministic reduce in job order.
  std::ostringstream raw;
  raw << "run,seed,panel,x,series,accuracy,n_test,std_error,sampled\n";
  struct Acc {
    std::vector<double> values;
    std::optional<double> preset_sd;
    std::size_t preset_count = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> acc;
  json run_status = json::array();
  std::vector<std::vector<json>> run_errors(runs);
  for (std::size_t i = 0; i < plan.jobs.size(); ++i) {
    const auto& job = plan.jobs[i];
    for (const auto& row : outputs[i].rows) {
      raw << job.run << ',' << ctx.run_seeds[job.run] << ',' << csv::quote(row.panel) << ','
          << csv::quote(x_text(row.x)) << ',' << csv::quote(row.series) << ',' << csv::format_double(row.accuracy)
          << ',' << row.n_test << ',' << csv::format_double(row.std_error) << ',' << (row.sampled ? 1 : 0) << '\n';
      auto& a = acc[{row.panel, x_text(row.x), row.series}];
      a.values.push_back(row.accuracy);
      if (row.preset_sd) {
        a.preset_sd = row.preset_sd;
        a.preset_count = row.preset_count;
      }
    }
    for (const auto& err : outputs[i].errors) run_errors[job.run].push_back(json{{"job", job.key}, {"message", err}});
  }
  for (std::size_t r = 0; r < runs; ++r) {
    run_status.push_back(json{{"run", r},
                              {"seed", ctx.run_seeds[r]},
                              {"status", run_errors[r].empty() ? "ok" : "failed"},
                              {"errors", run_errors[r]}});
  }

  std::ostringstream agg;
  agg << "panel,x,series,mean,sd,count\n";
  json panels = json::array();
  for (const auto& panel : plan.panels) {
    json pj;
    pj["name"] = panel.name;
    pj["x_name"] = panel.x_name;
    pj["x"] = panel.xs;
    pj["series_names"] = panel.series;
    json series = json::array();
    for (const auto& s : panel.series) {
      json means = json::array(), sds = json::array(), counts = json::array();
      for (const auto& x : panel.xs) {
        const auto it = acc.find({panel.name, x_text(x), s});
        if (it == acc.end() || it->second.values.empty()) {
          means.push_back(nullptr);
          sds.push_back(nullptr);
          counts.push_back(0);
          continue;
        }
        const auto& a = it->second;
        double mean, sd;
        std::size_t count;
        if (a.preset_sd) {
          mean = a.values.front();
          sd = *a.preset_sd;
          count = a.preset_count;
        } else {
          std::tie(mean, sd) = mean_sd(a.values);
          count = a.values.size();
        }
        means.push_back(mean);
        sds.push_back(sd);
        counts.push_back(count);
        agg << csv::quote(panel.name) << ',' << csv::quote(x_text(x)) << ',' << csv::quote(s) << ','
            << csv::format_double(mean) << ',' << csv::format_double(sd) << ',' << count << '\n';
      }
      series.push_back(json{{"name", s}, {"mean", means}, {"sd", sds}, {"count", counts}});
    }
    pj["series"] = series;
    panels.push_back(pj);
  }

  json spec_echo = spec.to_json();
  spec_echo.erase("output");
  spec_echo.erase("workers");
  json result;
  result["scenario"] = to_string(spec.scenario);
  result["panels"] = panels;
  result["runs"] = run_status;

  json manifest;
  manifest["manifest_version"] = kManifestVersion;
  manifest["tool"] = kToolName;
  manifest["version"] = kToolVersion;
  manifest["spec"] = spec_echo;
  manifest["run_seeds"] = ctx.run_seeds;

  const fs::path out(dir);
  write_text(out / "raw.csv", raw.str());
  write_text(out / "aggregate.csv", agg.str());
  write_text(out / "result.json", result.dump(2) + "\n");
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_plot_tables(emit_plot_data(result), (out / "plots").string());
  return {result, dir};
}

// ---------------------------------------------------------------------------
// Plot tables

std::string PlotTable::to_csv() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << csv::quote(columns[i]);
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv::quote(row[i]);
    out << '\n';
  }
  return out.str();
}

std::vector<PlotTable> emit_plot_data(const json& result) {
  std::vector<PlotTable> tables;
  if (!result.is_object() || !result.contains("panels")) return tables;
  for (const auto& panel : result.at("panels")) {
    PlotTable t;
    t.name = panel.value("name", std::string("panel"));
    const std::string x_name = panel.value("x_name", std::string("x"));
    t.columns.push_back(x_name);
    static const json kNoX = json::array();
    const json& xs = panel.contains("x") ? panel.at("x") : kNoX;
    static const json kNoSeries = json::array();
    const json& all_series = panel.contains("series") ? panel.at("series") : kNoSeries;
    std::vector<const json*> series;
    for (const auto& s : all_series) {
      const std::string name = s.value("name", std::string());
      if (name.empty()) throw Error(ErrorCode::emission, "panel '" + t.name + "' has a series without a name");
      if (!s.contains("mean") || !s.contains("sd") || !s.at("mean").is_array() || !s.at("sd").is_array()) {
        throw Error(ErrorCode::emission, "panel '" + t.name + "': series '" + name + "' is missing mean/sd data");
      }
      if (s.at("mean").size() != xs.size() || s.at("sd").size() != xs.size()) {
        throw Error(ErrorCode::emission, "panel '" + t.name + "': series '" + name + "' does not match the x axis");
      }
      const std::string col = lower(name);
      t.columns.push_back(col + "_mean");
      t.columns.push_back(col + "_sd");
      series.push_back(&s);
    }
    if (panel.contains("series_names")) {
      for (const auto& want : panel.at("series_names")) {
        const bool found = std::any_of(series.begin(), series.end(),
                                       [&](const json* s) { return s->value("name", std::string()) == want; });
        if (!found) throw Error(ErrorCode::emission, "panel '" + t.name + "': missing series '" + want.get<std::string>() + "'");
      }
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<std::string> row{x_text(xs[i])};
      for (const json* s : series) {
        row.push_back(value_text(s->at("mean")[i]));
        row.push_back(value_text(s->at("sd")[i]));
      }
      t.rows.push_back(std::move(row));
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

void write_plot_tables(const std::vector<PlotTable>& tables, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& t : tables) write_text(fs::path(dir) / (t.name + ".csv"), t.to_csv());
}

}  // namespace triad
