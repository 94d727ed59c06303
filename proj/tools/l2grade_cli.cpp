// l2grade: command-line harness over the grading pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "l2grade/experiment.hpp"

namespace fs = std::filesystem;
using namespace l2grade;
using namespace l2grade::experiment;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Options {
  Common common;
  std::string from;
  std::string data;
  std::string input;
  std::string kind = "pseudo-joint";
  std::string name;
  std::vector<std::string> experts;
  std::optional<double> lambda;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "global seed; overrides the config");
  cmd->add_option("--out", c.out, "output directory");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return json::parse(in);
}

/// Config from --config, or from the workspace when only --from is given.
/// --seed and --out are applied before the config is parsed.
ExperimentConfig load_config(const Options& o) {
  json j;
  if (!o.common.config.empty()) {
    j = read_json(o.common.config);
  } else if (!o.from.empty()) {
    j = read_json(fs::path(o.from) / "config.json");
  } else {
    throw ValidationError("--config is required");
  }
  if (o.common.seed) j["seed"] = *o.common.seed;
  return ExperimentConfig::from_json(j);
}

template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

ExperimentConfig in_stage_config(const Options& o) {
  return in_stage("config", [&] { return load_config(o); });
}

fs::path output_dir(const Options& o, const ExperimentConfig* config, const std::string& command) {
  if (!o.common.out.empty()) return o.common.out;
  if (config && o.common.config.size() && !config->out.empty()) return config->out;
  if (const char* root = std::getenv("L2GRADE_OUT_ROOT"); root && *root) return fs::path(root) / command;
  return fs::path("l2grade-out") / command;
}

std::string need_workspace(const Options& o, const std::string& command) {
  if (o.from.empty()) throw StageError(command, "--from <workspace> is required");
  return o.from;
}

// --- subcommands -----------------------------------------------------------------------

void cmd_synth(const Options& o) {
  // Without a config the generator runs with its defaults.
  const auto config = in_stage("config", [&] {
    json j = {{"schema_version", kSchemaVersion}, {"data", {{"synthesis", json::object()}}}};
    if (!o.common.config.empty()) j = read_json(o.common.config);
    if (o.common.seed) j["seed"] = *o.common.seed;
    return ExperimentConfig::from_json(j, false);
  });
  if (!config.data.synthesis) throw StageError("synth", "config has no data.synthesis section");
  const auto out = output_dir(o, &config, "synth");
  const auto corpus = corpus::synthesize_corpus(*config.data.synthesis);
  const auto splits = prepare_data(config);
  fs::create_directories(out);
  corpus::write_dataset((out / "dataset.tsv").string(), corpus.dataset);
  corpus.grammar.write((out / "grammar.tsv").string());
  corpus::write_dataset((out / "train.tsv").string(), splits.train);
  corpus::write_dataset((out / "validation.tsv").string(), splits.validation);
  corpus::write_dataset((out / "test.tsv").string(), splits.test);
  write_manifest(out.string(), {{"global", config.seed},
                                {"synthesis", config.data.synthesis->seed},
                                {"test_split", config.test_split_seed},
                                {"validation_split", config.validation_split_seed}});
  std::cout << "wrote " << corpus.dataset.size() << " exchanges and " << corpus.grammar.prompt_count()
            << " grammar prompts to " << out.string() << "\n";
}

void cmd_train_lm(const Options& o) {
  const auto config = in_stage_config(o);
  if (config.resources.language_models.empty()) throw StageError("train-lm", "config declares no language models");
  const auto out = output_dir(o, &config, "train-lm");
  const auto splits = prepare_data(config);
  std::vector<lm::NGramModel> models;
  try {
    models = fit_language_models(config, splits.train);
  } catch (const std::exception& e) {
    throw StageError("train-lm", e.what());
  }
  std::vector<Tokens> held;
  for (const auto& ex : splits.validation) held.push_back(corpus::tokenize(ex.response));
  json rows = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto path = out / "lm" / (std::to_string(i) + ".json");
    write_json(path, models[i].to_json());
    rows.push_back({{"path", "lm/" + std::to_string(i) + ".json"},
                    {"order", models[i].order()},
                    {"role", lm::to_string(models[i].role())},
                    {"boundary", models[i].boundary()},
                    {"vocabulary", models[i].vocabulary().size()},
                    {"validation_perplexity", lm::perplexity(models[i], held)}});
  }
  write_json(out / "lm-report.json", {{"models", rows}});
  std::cout << "wrote " << models.size() << " language models to " << out.string() << "\n";
}

void cmd_train_embeddings(const Options& o) {
  const auto config = in_stage_config(o);
  if (config.resources.embeddings.source != EmbeddingDecl::Source::skipgram) {
    throw StageError("train-embeddings", "config has no skip-gram embeddings section");
  }
  const auto out = output_dir(o, &config, "train-embeddings");
  const auto splits = prepare_data(config);
  std::vector<Tokens> documents;
  for (const auto& ex : splits.train) {
    documents.push_back(corpus::tokenize(ex.prompt));
    documents.push_back(corpus::tokenize(ex.response));
  }
  embed::SkipGramResult r;
  try {
    r = embed::train_skipgram(documents, config.resources.embeddings.skipgram);
  } catch (const std::exception& e) {
    throw StageError("train-embeddings", e.what());
  }
  fs::create_directories(out);
  r.table.save((out / "embeddings.vec").string());
  write_json(out / "embeddings-report.json",
             {{"dim", r.table.dim()}, {"words", r.table.size()}, {"epoch_loss", r.epoch_loss}});
  std::cout << "wrote " << r.table.size() << " vectors of dimension " << r.table.dim() << " to " << out.string()
            << "\n";
}

void cmd_train_expert(const Options& o) {
  const auto config = in_stage_config(o);
  const auto out = output_dir(o, &config, "train-expert");
  std::vector<const ExpertDecl*> chosen;
  try {
    if (o.experts.empty()) {
      for (const auto& e : config.experts) chosen.push_back(&e);
    } else {
      for (const auto& id : o.experts) chosen.push_back(&config.expert(id));
    }
  } catch (const std::exception& e) {
    throw StageError("train-expert", e.what());
  }
  const auto splits = prepare_data(config);
  const auto res = fit_resources(config, splits);
  fs::create_directories(out);
  write_json(out / "config.json", workspace_config_json(config));
  fs::create_directories(out / "data");
  corpus::write_dataset((out / "data" / "train.tsv").string(), splits.train);
  corpus::write_dataset((out / "data" / "validation.tsv").string(), splits.validation);
  corpus::write_dataset((out / "data" / "test.tsv").string(), splits.test);
  save_resources(res, (out / "resources").string());
  json seeds = {{"global", config.seed}, {"experts", json::object()}};
  std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
  for (const auto* decl : chosen) {
    const auto trained = train_expert(config, *decl, splits, res);
    save_expert(trained, *decl, (out / "experts").string());
    seeds["experts"][decl->id] = {{"init", trained.init_seed}, {"shuffle", trained.shuffle_seed}};
    rows.emplace_back(decl->id, trained.validation);
  }
  write_file(out / "train-report.txt", "validation split\n" + metrics::format_table(rows));
  write_manifest(out.string(), seeds);
  std::cout << "validation split\n" << metrics::format_table(rows);
}

void cmd_eval(const Options& o) {
  const auto ws = need_workspace(o, "eval");
  const auto out = output_dir(o, nullptr, "eval");
  const auto res = in_stage("eval", [&] { return load_resources((fs::path(ws) / "resources").string()); });
  const auto experts = in_stage("eval", [&] { return load_workspace_experts(ws, o.experts); });
  const std::string data_path = o.data.empty() ? (fs::path(ws) / "data" / "validation.tsv").string() : o.data;
  const auto data = in_stage("eval", [&] { return corpus::parse_dataset(data_path); });
  json reports = json::object();
  std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
  for (const auto& e : experts) {
    const auto r = in_stage("eval " + e.id, [&] {
      e.validate(res);
      return evaluate_expert(e, data, res);
    });
    reports[e.id] = r.to_json();
    rows.emplace_back(e.id, r);
  }
  write_json(out / "eval.json", {{"format", "l2grade-eval"}, {"version", 1}, {"exchanges", data.size()}, {"experts", reports}});
  write_file(out / "eval.txt", metrics::format_table(rows));
  std::cout << metrics::format_table(rows);
}

void combine_from_workspace(const Options& o, const std::string& command, const CombinerDecl& decl) {
  const auto ws = need_workspace(o, command);
  const auto out = output_dir(o, nullptr, command);
  const auto res = in_stage(command, [&] { return load_resources((fs::path(ws) / "resources").string()); });
  const auto experts = in_stage(command, [&] { return load_workspace_experts(ws, o.experts); });
  auto splits = in_stage(command, [&] { return load_workspace_data(ws); });
  if (!o.data.empty()) splits.test = in_stage(command, [&] { return corpus::parse_dataset(o.data); });
  const auto result = build_combiner(ExperimentConfig{}, decl, experts, splits, res);
  save_combiner(result, fs::absolute(out).string(), fs::absolute(fs::path(ws) / "experts").string());
  const auto table = metrics::format_table({{decl.name + " (validation)", result.validation},
                                            {decl.name + " (test)", result.test}});
  write_file(out / (decl.name + ".txt"), table);
  std::cout << table;
}

void cmd_combine(const Options& o) {
  if (o.kind != "pseudo-joint" && o.kind != "majority") {
    throw StageError("combine", "--kind must be pseudo-joint or majority");
  }
  CombinerDecl decl;
  decl.kind = o.kind;
  decl.name = o.name.empty() ? o.kind : o.name;
  combine_from_workspace(o, "combine", decl);
}

void cmd_train_gate(const Options& o) {
  need_workspace(o, "train-gate");
  const auto config = in_stage_config(o);
  CombinerDecl decl;
  bool found = false;
  for (const auto& c : config.combiners) {
    if (c.kind == "mixture" && (o.name.empty() || c.name == o.name)) {
      decl = c;
      found = true;
      break;
    }
  }
  if (!found) {
    if (!o.name.empty()) throw StageError("train-gate", "config has no mixture named '" + o.name + "'");
    decl = parse_combiner({{"name", "mixture"}, {"kind", "mixture"}}, config.seed);
  }
  if (o.lambda) decl.lambda = *o.lambda;
  if (!(decl.lambda >= 1.0)) throw StageError("train-gate", "--lambda must be >= 1");
  if (!o.experts.empty()) decl.experts.clear();
  combine_from_workspace(o, "train-gate", decl);
}

void cmd_grid(const Options& o) {
  auto config = in_stage_config(o);
  if (!config.grid) throw StageError("grid", "config has no grid section");
  config.out = output_dir(o, &config, "grid").string();
  const auto board = grid_search(config, *config.grid);
  std::cout << board.to_text();
}

void cmd_report(const Options& o) {
  fs::path input = o.input;
  if (input.empty()) input = fs::path(need_workspace(o, "report")) / "report.json";
  const auto text = in_stage("report", [&] { return report_text(read_json(input)); });
  if (!o.common.out.empty()) write_file(fs::path(o.common.out) / "report.txt", text);
  std::cout << text;
}

void cmd_run(const Options& o) {
  auto config = in_stage_config(o);
  config.out = output_dir(o, &config, "run").string();
  const auto result = run_experiment(config);
  std::cout << report_text(result.report) << "workspace: " << config.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"l2grade: multi-expert grading of second-language responses"};
  app.require_subcommand(1, 1);
  Options o;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset, its grammar and the splits");
  auto* train_lm = app.add_subcommand("train-lm", "fit the configured n-gram models on the training split");
  auto* train_emb = app.add_subcommand("train-embeddings", "train skip-gram embeddings on the training split");
  auto* train_expert = app.add_subcommand("train-expert", "train experts and write a workspace");
  auto* eval = app.add_subcommand("eval", "score workspace experts on a dataset");
  auto* combine = app.add_subcommand("combine", "pseudo-joint or majority combination of workspace experts");
  auto* train_gate = app.add_subcommand("train-gate", "train a gating network over workspace experts");
  auto* grid = app.add_subcommand("grid", "grid search over one expert's hyperparameters");
  auto* report = app.add_subcommand("report", "print the metrics table of a run");
  auto* run = app.add_subcommand("run", "full pipeline from data to report");

  for (auto* cmd : {synth, train_lm, train_emb, train_expert, eval, combine, train_gate, grid, report, run}) {
    add_common(cmd, o.common);
  }
  for (auto* cmd : {eval, combine, train_gate, report}) cmd->add_option("--from", o.from, "workspace directory");
  for (auto* cmd : {train_expert, eval, combine, train_gate}) {
    cmd->add_option("--expert", o.experts, "expert id (repeatable)");
  }
  for (auto* cmd : {eval, combine, train_gate}) cmd->add_option("--data", o.data, "dataset TSV to score");
  combine->add_option("--kind", o.kind, "pseudo-joint | majority");
  for (auto* cmd : {combine, train_gate}) cmd->add_option("--name", o.name, "combiner name");
  train_gate->add_option("--lambda", o.lambda, "penalty weight; 1 trains with plain MSE");
  report->add_option("--input", o.input, "report.json to format");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const CLI::App* scope = &app;
    for (const auto* cmd : app.get_subcommands()) scope = cmd;
    std::cerr << "error: " << e.what() << "\n\n" << scope->help();
    return 2;
  }

  const std::vector<std::pair<CLI::App*, void (*)(const Options&)>> handlers = {
      {synth, cmd_synth},   {train_lm, cmd_train_lm},     {train_emb, cmd_train_embeddings},
      {train_expert, cmd_train_expert}, {eval, cmd_eval}, {combine, cmd_combine},
      {train_gate, cmd_train_gate},     {grid, cmd_grid}, {report, cmd_report},
      {run, cmd_run}};
  for (const auto& [cmd, handler] : handlers) {
    if (!cmd->parsed()) continue;
    try {
      handler(o);
      return 0;
    } catch (const StageError& e) {
      std::cerr << "error: " << e.what() << "\n";
    } catch (const std::exception& e) {
      std::cerr << "error: stage " << cmd->get_name() << ": " << e.what() << "\n";
    }
    return 1;
  }
  return 2;
}
