#pragma once

// Declarative experiment runner.
//
// An experiment is described by one JSON document (ExperimentSpec). Running
// it writes a result directory:
//
//   manifest.json    normalized spec, run seeds, tool version
//   raw.csv          run,seed,panel,x,series,accuracy,n_test,std_error,sampled
//   aggregate.csv    panel,x,series,mean,sd,count
//   result.json      panels with mean/sd arrays, run statuses and errors
//   plots/<panel>.csv
//
// Plot tables have an x column named after the panel's x axis followed by
// `<series>_mean,<series>_sd` pairs, series names lowercase.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "triad/embedding.hpp"

namespace triad {

using json = nlohmann::json;

inline constexpr const char* kToolName = "triad";
inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr int kManifestVersion = 1;

enum class Scenario {
  methods_vs_n,
  repeated_vs_random,
  landmark_vs_random,
  dimension_sweep,
  cross_subject,
  pooling,
  single_fit,
};
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

enum class BudgetRule { fixed, n_log_n, n2_log_n };
std::string to_string(BudgetRule r);
BudgetRule budget_rule_from_string(const std::string& s);

/// ceil(3 n log2 n), ceil(3 n^2 log2 n), or `fixed_m`.
std::size_t budget(BudgetRule rule, std::size_t n, std::size_t fixed_m = 0);

struct DataSource {
  enum class Kind { unit_cube, vectors, answers };
  Kind kind = Kind::unit_cube;
  std::vector<std::size_t> n{100};  // item counts (unit_cube, vectors subsample)
  std::size_t dim = 3;              // unit_cube dimension
  std::string path;                 // vectors file
  char delimiter = ',';
  std::vector<std::string> paths;       // answer files
  std::vector<std::string> test_paths;  // held-out answer files
  std::size_t n_items = 0;              // 0 infers from the records
  std::string metadata;                 // item parameter table joined to exports
};

/// One population in a cross-subject run: answer files, or simulated
/// subjects with their own flip noise.
struct SubjectGroup {
  std::string label;
  std::vector<std::string> paths;
  std::size_t subjects = 0;
  double noise_p = 0.0;
};

struct ExperimentSpec {
  Scenario scenario = Scenario::methods_vs_n;
  DataSource data;
  BudgetRule budget_rule = BudgetRule::n_log_n;
  std::size_t budget_m = 0;
  double noise_p = 0.0;
  std::vector<std::string> methods{"SOE", "STE", "tSTE", "GNMDS"};
  EmbedConfig embed;
  bool restarts_given = false;  // otherwise default_restarts(n)
  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::string output;
  std::size_t workers = 0;  // 0: machine parallelism
  std::uint64_t truth_cap = 2'000'000;

  // repeated_vs_random
  std::vector<std::size_t> repeats{3, 5};
  std::size_t base_m = 2000;
  std::vector<double> noise_levels{0.0, 0.1, 0.2, 0.3, 0.4};
  // landmark_vs_random
  std::vector<std::size_t> landmarks{4, 6, 8, 10, 12, 14};
  // dimension_sweep
  std::vector<std::size_t> dims{1, 2, 3, 4, 5};
  std::size_t train_size = 1500;
  std::size_t test_size = 250;
  // cross_subject, pooling
  std::vector<SubjectGroup> groups;
  std::size_t sessions = 5;
  std::size_t session_size = 2000;
  std::size_t trials = 20;

  /// Strict: unknown keys and keys foreign to the scenario are validation
  /// errors. A manifest document is accepted and its "spec" is used.
  static ExperimentSpec from_json(const json& doc);
  json to_json() const;
  void validate() const;
};

ExperimentSpec load_spec(const std::string& path);

struct RunOptions {
  std::optional<std::string> out_dir;
  std::optional<std::size_t> workers;
};

struct ExperimentOutcome {
  json result;
  std::string directory;
};

/// Runs the scenario and writes the result directory. Failures of single
/// jobs are recorded in the result and do not stop the others.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Output directory when none is given: $TRIAD_OUTPUT_ROOT (default
/// "results") / <scenario>-<UTC timestamp>.
std::string default_output_dir(Scenario scenario);

struct PlotTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

std::vector<PlotTable> emit_plot_data(const json& result);
void write_plot_tables(const std::vector<PlotTable>& tables, const std::string& dir);

}  // namespace triad
