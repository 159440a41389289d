// triad: command-line front end for experiments, fitting, evaluation and the
// study service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "CLI11.hpp"
#include "triad/evaluation.hpp"
#include "triad/harness.hpp"
#include "triad/service.hpp"

namespace fs = std::filesystem;
using triad::json;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required = true) {
  auto* opt = cmd->add_option("--config", o.config, "JSON config document");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override the master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--workers", o.workers, "worker threads (default: machine parallelism)");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw triad::Error(triad::ErrorCode::io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw triad::Error(triad::ErrorCode::parse, path + ": " + e.what());
  }
}

// Loads a spec, defaulting or checking the scenario against the subcommand.
triad::ExperimentSpec load_for(const Overrides& o, std::optional<triad::Scenario> required) {
  json doc = read_json(o.config);
  json& spec = doc.is_object() && doc.contains("manifest_version") ? doc["spec"] : doc;
  if (required) {
    if (!spec.contains("scenario")) {
      spec["scenario"] = triad::to_string(*required);
    } else if (spec["scenario"] != triad::to_string(*required)) {
      throw triad::Error(triad::ErrorCode::validation,
                         "this subcommand runs scenario '" + triad::to_string(*required) + "', config has " +
                             spec["scenario"].dump());
    }
  }
  auto s = triad::ExperimentSpec::from_json(doc);
  if (o.seed) s.seed = *o.seed;
  return s;
}

int run_scenario(const Overrides& o, std::optional<triad::Scenario> required) {
  const auto spec = load_for(o, required);
  triad::RunOptions options;
  if (!o.out.empty()) options.out_dir = o.out;
  options.workers = o.workers;
  const auto outcome = triad::run_experiment(spec, options);
  std::size_t failed = 0;
  for (const auto& r : outcome.result["runs"]) {
    for (const auto& e : r["errors"]) {
      std::cerr << "run " << r["run"] << " " << e["job"].get<std::string>() << ": "
                << e["message"].get<std::string>() << "\n";
      ++failed;
    }
  }
  std::cout << outcome.directory << "\n";
  return failed ? 3 : 0;
}

int run_evaluate(const Overrides& o) {
  const json cfg = read_json(o.config);
  for (const auto& [key, value] : cfg.items()) {
    static const std::set<std::string> allowed{"predictor", "n_items", "test", "vectors", "delimiter", "truth_cap"};
    if (!allowed.contains(key)) {
      throw triad::Error(triad::ErrorCode::validation, "evaluate config: unknown key '" + key + "'");
    }
  }
  if (!cfg.contains("predictor")) throw triad::Error(triad::ErrorCode::validation, "evaluate config: 'predictor' is required");
  if (cfg.contains("test") == cfg.contains("vectors")) {
    throw triad::Error(triad::ErrorCode::validation, "evaluate config: give exactly one of 'test' or 'vectors'");
  }
  const std::string path = cfg["predictor"].get<std::string>();
  triad::Predictor predictor;
  if (fs::exists(path + ".json")) {
    predictor = triad::import_embedding(path);
  } else {
    if (!cfg.contains("n_items")) {
      throw triad::Error(triad::ErrorCode::validation, "evaluate config: score tables need 'n_items'");
    }
    predictor = triad::import_scores(path, cfg["n_items"].get<std::size_t>());
  }
  triad::PredictionReport report;
  if (cfg.contains("test")) {
    report = triad::evaluate(predictor, triad::read_records(cfg["test"].get<std::string>(), triad::predictor_items(predictor)));
  } else {
    const std::string delim = cfg.value("delimiter", std::string(","));
    const auto ds = triad::ingest_vectors(cfg["vectors"].get<std::string>(), delim.empty() ? ',' : delim[0]);
    report = triad::exhaustive_or_sampled_truth_accuracy(predictor, ds, cfg.value("truth_cap", triad::kDefaultTruthCap),
                                                         o.seed.value_or(0));
  }
  const json doc{{"accuracy", report.accuracy},         {"n_test", report.n_test},
                 {"n_correct", report.n_correct},       {"std_error", report.std_error},
                 {"unconstrained_items", report.unconstrained_items}, {"predictor", report.predictor},
                 {"sampled", report.sampled}};
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "report.json") << doc.dump(2) << "\n";
    std::ofstream csv(fs::path(o.out) / "report.csv");
    csv << "accuracy,n_test,n_correct,std_error,unconstrained_items,predictor,sampled\n"
        << report.accuracy << ',' << report.n_test << ',' << report.n_correct << ',' << report.std_error << ','
        << report.unconstrained_items << ',' << report.predictor << ',' << (report.sampled ? 1 : 0) << "\n";
  }
  std::cout << doc.dump(2) << "\n";
  return 0;
}

int run_emit(const std::string& input, const std::string& out) {
  fs::path result_path = input;
  if (fs::is_directory(result_path)) result_path /= "result.json";
  const auto tables = triad::emit_plot_data(read_json(result_path.string()));
  const std::string dir = out.empty() ? (result_path.parent_path() / "plots").string() : out;
  triad::write_plot_tables(tables, dir);
  for (const auto& t : tables) std::cout << (fs::path(dir) / (t.name + ".csv")).string() << "\n";
  return 0;
}

int run_serve(const std::string& data, const std::string& host, int port, const std::string& assets) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  triad::service::StudyStore store(data);
  triad::service::HttpServer server(store, {host, port, assets});
  const int bound = server.bind();
  std::cout << "listening on " << host << ":" << bound << std::endl;
  std::thread worker([&] { server.serve(); });
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  worker.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triplet comparison toolkit: ordinal embedding, pair ranking, experiments and a study service"};
  app.set_version_flag("--version", triad::kToolVersion);
  app.require_subcommand(1);

  Overrides sim, fit, cross, pool, sweep, eval;
  add_common(app.add_subcommand("simulate", "run a simulation experiment from a config"), sim);
  add_common(app.add_subcommand("fit", "fit methods to answer files or simulated data (single_fit)"), fit);
  add_common(app.add_subcommand("cross", "cross-subject transfer matrices"), cross);
  add_common(app.add_subcommand("pool", "session pooling curves"), pool);
  add_common(app.add_subcommand("sweep-dims", "prediction accuracy across embedding dimensions"), sweep);
  add_common(app.add_subcommand("evaluate", "score a saved embedding or score table"), eval);

  auto* emit = app.add_subcommand("emit-plots", "write plot tables for a result document");
  std::string emit_config, emit_out;
  std::optional<std::uint64_t> unused_seed;
  emit->add_option("--config,--result", emit_config, "result.json or a result directory")->required();
  emit->add_option("--out", emit_out, "output directory (default: <result>/plots)");
  emit->add_option("--seed", unused_seed, "accepted for uniformity; has no effect");

  auto* serve = app.add_subcommand("serve", "run the study service");
  std::string data_dir = "study-data", host = "127.0.0.1", assets;
  int port = 8080;
  serve->add_option("--data", data_dir, "data directory for plans and session logs");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--port", port, "listen port (0 picks a free one)");
  serve->add_option("--assets", assets, "directory served under /assets");

  CLI11_PARSE(app, argc, argv);

  try {
    using triad::Scenario;
    if (app.got_subcommand("simulate")) return run_scenario(sim, std::nullopt);
    if (app.got_subcommand("fit")) return run_scenario(fit, Scenario::single_fit);
    if (app.got_subcommand("cross")) return run_scenario(cross, Scenario::cross_subject);
    if (app.got_subcommand("pool")) return run_scenario(pool, Scenario::pooling);
    if (app.got_subcommand("sweep-dims")) return run_scenario(sweep, Scenario::dimension_sweep);
    if (app.got_subcommand("evaluate")) return run_evaluate(eval);
    if (app.got_subcommand("emit-plots")) return run_emit(emit_config, emit_out);
    if (app.got_subcommand("serve")) return run_serve(data_dir, host, port, assets);
  } catch (const triad::Error& e) {
    std::cerr << "error [" << triad::to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
