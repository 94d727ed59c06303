#include <cstdlib>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "l2grade/experiment.hpp"
#include "test_util.hpp"

using namespace l2grade;
using namespace l2grade::experiment;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return json::parse(R"({
    "schema_version": 1,
    "seed": 7,
    "data": {"synthesis": {"num_prompts": 10, "responses_per_prompt": 20}},
    "resources": {
      "language_models": [{"order": 2, "role": "train-accepted"}],
      "embeddings": {"source": "skipgram", "dim": 6, "window": 2, "negatives": 2, "epochs": 1}
    },
    "views": [
      {"name": "bow", "kind": "bow-concat"},
      {"name": "w2v", "kind": "embedding-sequence", "source": "static"}
    ],
    "experts": [
      {"id": "ffn", "view": "bow", "hidden": [8], "train": {"learning_rate": 0.01, "max_epochs": 4, "patience": 2}},
      {"id": "rnn", "view": "w2v", "hidden": [6], "train": {"learning_rate": 0.01, "max_epochs": 3, "patience": 2}}
    ],
    "combiners": [
      {"name": "mix", "kind": "mixture", "gating_hidden": [4], "train": {"max_epochs": 3}},
      {"name": "pj", "kind": "pseudo-joint"},
      {"name": "vote", "kind": "majority"}
    ]
  })");
}

ExperimentConfig parse(const json& j) { return ExperimentConfig::from_json(j); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testutil::slurp(e.path().string());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(L2GRADE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config rejects zero experts before any work") {
  testutil::TempDir dir("cfg");
  auto j = small_config();
  j["experts"] = json::array();
  j["combiners"] = json::array();
  j["out"] = (dir.path() / "ws").string();
  CHECK_THROWS_WITH_AS(parse(j), doctest::Contains("no experts"), Error);
  const auto unchecked = ExperimentConfig::from_json(j, false);
  CHECK_THROWS_AS(run_experiment(unchecked), StageError);
  CHECK_FALSE(fs::exists(dir.path() / "ws"));
}

TEST_CASE("config rejects unknown keys and bad references") {
  auto j = small_config();
  j["learning_rate"] = 0.1;
  CHECK_THROWS_AS(parse(j), Error);

  j = small_config();
  j["experts"][0]["view"] = "nope";
  CHECK_THROWS_WITH_AS(parse(j), doctest::Contains("nope"), Error);

  j = small_config();
  j["experts"][1]["id"] = "ffn";
  CHECK_THROWS_AS(parse(j), Error);

  j = small_config();
  j["combiners"][0]["experts"] = {"ghost"};
  CHECK_THROWS_AS(parse(j), Error);

  j = small_config();
  j["schema_version"] = 2;
  CHECK_THROWS_AS(parse(j), Error);

  j = small_config();
  j["resources"].erase("embeddings");
  CHECK_THROWS_AS(parse(j), Error);
}

TEST_CASE("config json is a fixed point") {
  const auto c = parse(small_config());
  const auto once = c.to_json();
  const auto twice = parse(once).to_json();
  CHECK(once == twice);
  CHECK(once.at("data").contains("test_split_seed"));
  CHECK(once.at("experts")[0].contains("init_seed"));
}

TEST_CASE("seeds follow the global seed") {
  auto a = small_config(), b = small_config();
  b["seed"] = 8;
  const auto ca = parse(a), cb = parse(b);
  CHECK(ca.test_split_seed != cb.test_split_seed);
  CHECK(ca.experts[0].init_seed != cb.experts[0].init_seed);
  CHECK(ca.experts[0].init_seed != ca.experts[1].init_seed);
}

TEST_CASE("splits are disjoint and cover the corpus") {
  const auto c = parse(small_config());
  const auto s = prepare_data(c);
  CHECK(s.train.size() + s.validation.size() + s.test.size() == 200);
  CHECK(s.test.size() == 40);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const auto& ex : *part) ids.insert(ex.id);
  CHECK(ids.size() == 200);
}

TEST_CASE("held-out rows never reach fitted resources") {
  testutil::TempDir dir("poison");
  const auto base = prepare_data(parse(small_config()));
  auto validation = base.validation, test = base.test;
  validation.front().response += " zzsentinel";
  test.front().prompt += " zzsentinel";
  corpus::write_dataset(dir.file("train.tsv"), base.train);
  corpus::write_dataset(dir.file("validation.tsv"), validation);
  corpus::write_dataset(dir.file("test.tsv"), test);

  auto j = small_config();
  j["data"] = {{"dataset", dir.file("train.tsv")}, {"validation", dir.file("validation.tsv")}, {"test", dir.file("test.tsv")}};
  j["resources"]["language_models"].push_back({{"order", 3}, {"role", "generic"}});
  j["resources"]["language_models"].push_back({{"order", 1}, {"role", "train-rejected"}});
  const auto c = parse(j);
  const auto splits = prepare_data(c);
  const auto res = fit_resources(c, splits);
  CHECK_FALSE(res.vocabulary.contains("zzsentinel"));
  CHECK(res.idf.size() == res.vocabulary.size());
  CHECK(res.idf.documents() == 2 * splits.train.size());
  REQUIRE(res.lms.size() == 3);
  for (const auto& m : res.lms) CHECK_FALSE(m.vocabulary().contains("zzsentinel"));
  REQUIRE(res.static_embeddings);
  CHECK_FALSE(res.static_embeddings->contains("zzsentinel"));
}

TEST_CASE("runs are byte-identical across output directories") {
  testutil::TempDir dir("det");
  auto j = small_config();
  j["out"] = (dir.path() / "a").string();
  const auto first = run_experiment(parse(j));
  j["out"] = (dir.path() / "b").string();
  run_experiment(parse(j));
  const auto a = tree(dir.path() / "a"), b = tree(dir.path() / "b");
  CHECK(a.size() == b.size());
  CHECK(a == b);
  CHECK(a.count("manifest.json") == 1);
  CHECK(a.count("experts/ffn.json") == 1);
  CHECK(a.count("combiners/mix.gating.json") == 1);
  CHECK(first.combiners.size() == 3);

  const auto manifest = json::parse(a.at("manifest.json"));
  CHECK(manifest.at("files").size() == a.size() - 1);
}

TEST_CASE("workspace round trip reproduces validation metrics") {
  testutil::TempDir dir("ws");
  auto j = small_config();
  j["out"] = dir.path().string();
  const auto c = parse(j);
  const auto result = run_experiment(c);

  const auto res = load_resources((dir.path() / "resources").string());
  const auto splits = load_workspace_data(dir.path().string());
  const auto experts = load_workspace_experts(dir.path().string());
  REQUIRE(experts.size() == 2);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto again = evaluate_expert(experts[i], splits.validation, res);
    CHECK(again.tally == result.experts[i].validation.tally);
  }
  CHECK(res.vocabulary.words() == fit_resources(c, prepare_data(c)).vocabulary.words());
  const auto only = load_workspace_experts(dir.path().string(), {"rnn"});
  REQUIRE(only.size() == 1);
  CHECK(only[0].network.spec().recurrent);
  CHECK_THROWS_AS(load_workspace_experts(dir.path().string(), {"ghost"}), Error);
}

TEST_CASE("a single-point grid matches the plain run") {
  auto c = parse(small_config());
  const auto plain = run_experiment(c);
  GridSpec g;
  g.expert = "ffn";
  g.learning_rates = {0.01};
  const auto board = grid_search(c, g);
  REQUIRE(board.rows.size() == 1);
  CHECK(board.rows[0].validation.tally == plain.experts[0].validation.tally);
}

TEST_CASE("grid rows are distinct and totally ordered") {
  auto c = parse(small_config());
  GridSpec g;
  g.expert = "ffn";
  g.learning_rates = {0.001, 0.0001};
  const auto board = grid_search(c, g);
  REQUIRE(board.rows.size() == 2);
  CHECK(board.rows[0].config_id != board.rows[1].config_id);
  CHECK(ranks_before(board.rows[0], board.rows[1], board.target));
  CHECK_FALSE(ranks_before(board.rows[1], board.rows[0], board.target));
  CHECK_FALSE(ranks_before(board.rows[0], board.rows[0], board.target));
  CHECK(board.best_by.at("d_full") == board.rows[0].config_id);
  CHECK(board.to_text().find(board.rows[1].config_id) != std::string::npos);
}

TEST_CASE("grid cap is enforced before training") {
  testutil::TempDir dir("cap");
  auto j = small_config();
  j["out"] = dir.path().string();
  const auto c = parse(j);
  GridSpec g;
  g.learning_rates = {0.1, 0.01, 0.001};
  g.lambdas = {1, 3};
  g.cap = 5;
  CHECK(g.combinations() == 6);
  CHECK_THROWS_AS(grid_search(c, g), StageError);
  CHECK(fs::is_empty(dir.path()));
}

TEST_CASE("ranking breaks ties by size then id") {
  const auto r = metrics::MetricsReport::from_tally({10, 2, 8, 1, 1});
  LeaderboardRow a{"a", 100, {}, r}, b{"b", 100, {}, r}, small{"z", 50, {}, r};
  CHECK(ranks_before(a, b, metrics::Target::d_full));
  CHECK(ranks_before(small, a, metrics::Target::d_full));
  const auto undefined = metrics::MetricsReport::from_tally({0, 0, 3, 1, 0});
  LeaderboardRow u{"0", 1, {}, undefined};
  CHECK(ranks_before(a, u, metrics::Target::d_full));
}

TEST_CASE("format_real uses the shortest form") {
  CHECK(format_real(0.01) == "0.01");
  CHECK(format_real(3) == "3");
  CHECK(format_real(0.0001) == "1e-04");
}

TEST_CASE("cli synth writes the data files") {
  testutil::TempDir dir("cli");
  const auto out = (dir.path() / "synth").string();
  CHECK(run_cli("synth --seed 3 --out " + out) == 0);
  for (const char* f : {"dataset.tsv", "grammar.tsv", "train.tsv", "validation.tsv", "test.tsv", "manifest.json"})
    CHECK(fs::exists(fs::path(out) / f));
}

TEST_CASE("cli rejects bad usage") {
  CHECK(run_cli("") != 0);
  CHECK(run_cli("bogus") != 0);
  CHECK(run_cli("synth --no-such-flag") != 0);
  CHECK(run_cli("report --from /nonexistent/workspace") == 1);
}
