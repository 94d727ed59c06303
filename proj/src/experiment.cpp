#include "l2grade/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace l2grade::experiment {

namespace fs = std::filesystem;
using corpus::Dataset;
using nlohmann::json;

namespace {

// --- json helpers ------------------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ValidationError("unknown key '" + key + "' in " + where);
    }
  }
}

std::uint64_t stream_seed(std::uint64_t global, const std::string& stream) {
  return derive_seed(global, fnv1a(stream));
}

bool safe_name(const std::string& s) {
  return !s.empty() && s != "." && s != ".." && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
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

// --- config sections ------------------------------------------------------------------

json synthesis_to_json(const corpus::SynthesisConfig& s) {
  return {{"prompt_vocab_size", s.prompt_vocab_size},
          {"response_vocab_size", s.response_vocab_size},
          {"num_prompts", s.num_prompts},
          {"responses_per_prompt", s.responses_per_prompt},
          {"language_error_rate", s.language_error_rate},
          {"meaning_error_rate", s.meaning_error_rate},
          {"seed", s.seed}};
}

corpus::SynthesisConfig synthesis_from_json(const json& j, std::uint64_t default_seed) {
  check_keys(j,
             {"prompt_vocab_size", "response_vocab_size", "num_prompts", "responses_per_prompt",
              "language_error_rate", "meaning_error_rate", "seed"},
             "data.synthesis");
  corpus::SynthesisConfig s;
  s.prompt_vocab_size = j.value("prompt_vocab_size", s.prompt_vocab_size);
  s.response_vocab_size = j.value("response_vocab_size", s.response_vocab_size);
  s.num_prompts = j.value("num_prompts", s.num_prompts);
  s.responses_per_prompt = j.value("responses_per_prompt", s.responses_per_prompt);
  s.language_error_rate = j.value("language_error_rate", s.language_error_rate);
  s.meaning_error_rate = j.value("meaning_error_rate", s.meaning_error_rate);
  s.seed = j.value("seed", default_seed);
  s.validate();
  return s;
}

json skipgram_to_json(const embed::SkipGramConfig& c) {
  return {{"dim", c.dim},         {"window", c.window},
          {"negatives", c.negatives}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}

embed::SkipGramConfig skipgram_from_json(const json& j, std::uint64_t default_seed) {
  embed::SkipGramConfig c;
  c.dim = j.value("dim", c.dim);
  c.window = j.value("window", c.window);
  c.negatives = j.value("negatives", c.negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", default_seed);
  return c;
}

json resources_to_json(const ResourceConfig& r) {
  json lms = json::array();
  for (const auto& lm : r.language_models) {
    lms.push_back({{"order", lm.order}, {"role", lm::to_string(lm.role)}, {"boundary", lm.boundary}});
  }
  json j = {{"min_count", r.min_count}, {"language_models", lms}};
  if (!r.generic_corpus.empty()) j["generic_corpus"] = r.generic_corpus;
  if (!r.contextual_path.empty()) j["contextual"] = r.contextual_path;
  if (r.stopwords) j["stopwords"] = *r.stopwords;
  switch (r.embeddings.source) {
    case EmbeddingDecl::Source::none:
      break;
    case EmbeddingDecl::Source::skipgram: {
      auto e = skipgram_to_json(r.embeddings.skipgram);
      e["source"] = "skipgram";
      j["embeddings"] = e;
      break;
    }
    case EmbeddingDecl::Source::file:
      j["embeddings"] = {{"source", "file"}, {"path", r.embeddings.path}};
      break;
  }
  return j;
}

ResourceConfig resources_from_json(const json& j, std::uint64_t global) {
  check_keys(j, {"min_count", "language_models", "generic_corpus", "embeddings", "contextual", "stopwords"},
             "resources");
  ResourceConfig r;
  r.min_count = j.value("min_count", 1);
  if (r.min_count < 1) throw ValidationError("resources.min_count must be >= 1");
  for (const auto& lm : j.value("language_models", json::array())) {
    check_keys(lm, {"order", "role", "boundary"}, "resources.language_models[]");
    LmDecl d;
    d.order = lm.value("order", 3);
    d.role = lm::parse_role(lm.value("role", std::string("train-accepted")));
    d.boundary = lm.value("boundary", true);
    if (d.order < 1 || d.order > lm::NGramModel::kMaxOrder) {
      throw ValidationError("language model order must be in 1.." + std::to_string(lm::NGramModel::kMaxOrder));
    }
    r.language_models.push_back(d);
  }
  r.generic_corpus = j.value("generic_corpus", std::string());
  r.contextual_path = j.value("contextual", std::string());
  if (j.contains("stopwords")) r.stopwords = j.at("stopwords").get<std::vector<std::string>>();
  if (j.contains("embeddings")) {
    const auto& e = j.at("embeddings");
    const auto source = e.value("source", std::string("skipgram"));
    if (source == "skipgram") {
      check_keys(e, {"source", "dim", "window", "negatives", "epochs", "learning_rate", "seed"},
                 "resources.embeddings");
      r.embeddings.source = EmbeddingDecl::Source::skipgram;
      r.embeddings.skipgram = skipgram_from_json(e, stream_seed(global, "skipgram"));
    } else if (source == "file") {
      check_keys(e, {"source", "path"}, "resources.embeddings");
      r.embeddings.source = EmbeddingDecl::Source::file;
      r.embeddings.path = e.at("path").get<std::string>();
    } else {
      throw ValidationError("unknown embedding source: " + source);
    }
  }
  return r;
}

json expert_to_json(const ExpertDecl& e) {
  json j = {{"id", e.id},
            {"view", e.view},
            {"activation", nn::to_string(e.activation)},
            {"loss", e.loss.to_json()},
            {"train", e.train.to_json()},
            {"init_seed", e.init_seed}};
  if (!e.architecture.empty()) {
    j["architecture"] = e.architecture;
  } else {
    j["hidden"] = e.hidden;
  }
  return j;
}

ExpertDecl expert_from_json(const json& j, std::uint64_t global) {
  check_keys(j, {"id", "view", "architecture", "hidden", "activation", "loss", "train", "init_seed"}, "experts[]");
  ExpertDecl e;
  e.id = j.at("id").get<std::string>();
  e.view = j.at("view").get<std::string>();
  e.architecture = j.value("architecture", std::string());
  e.hidden = j.value("hidden", std::vector<std::size_t>{});
  if (!e.architecture.empty() && !e.hidden.empty()) {
    throw ValidationError("expert '" + e.id + "': give an architecture or hidden widths, not both");
  }
  e.activation = nn::parse_activation(j.value("activation", std::string("tanh")));
  e.loss = nn::LossSpec::from_json(j.value("loss", json::object()));
  nn::TrainConfig defaults;
  defaults.seed = stream_seed(global, "train:" + e.id);
  e.train = nn::TrainConfig::from_json(j.value("train", json::object()), defaults);
  e.init_seed = j.value("init_seed", stream_seed(global, "init:" + e.id));
  return e;
}

json combiner_to_json(const CombinerDecl& c) {
  json j = {{"name", c.name}, {"kind", c.kind}, {"experts", c.experts}};
  if (c.kind == "mixture") {
    j["gating_hidden"] = c.gating_hidden;
    j["train"] = c.train.to_json();
    j["lambda"] = c.lambda;
    j["init_seed"] = c.init_seed;
    j["fit_on"] = c.fit_on;
    if (c.fit_on == "validation") {
      j["fit_fraction"] = c.fit_fraction;
      j["fit_split_seed"] = c.fit_split_seed;
    }
  }
  return j;
}

}  // namespace

CombinerDecl parse_combiner(const json& j, std::uint64_t global) {
  check_keys(j,
             {"name", "kind", "experts", "gating_hidden", "train", "lambda", "init_seed", "fit_on", "fit_fraction",
              "fit_split_seed"},
             "combiners[]");
  CombinerDecl c;
  c.kind = j.at("kind").get<std::string>();
  c.name = j.value("name", c.kind);
  c.experts = j.value("experts", std::vector<std::string>{});
  c.gating_hidden = j.value("gating_hidden", std::vector<std::size_t>{});
  nn::TrainConfig defaults;
  defaults.seed = stream_seed(global, "gate-train:" + c.name);
  c.train = nn::TrainConfig::from_json(j.value("train", json::object()), defaults);
  c.lambda = j.value("lambda", 3.0);
  c.init_seed = j.value("init_seed", stream_seed(global, "gate:" + c.name));
  c.fit_on = j.value("fit_on", c.fit_on);
  c.fit_fraction = j.value("fit_fraction", c.fit_fraction);
  c.fit_split_seed = j.value("fit_split_seed", stream_seed(global, "gate-split:" + c.name));
  return c;
}

namespace {

const std::set<std::string> kCombinerKinds = {"pseudo-joint", "mixture", "majority"};

nn::LossSpec lambda_loss(double lambda, nn::PenaltyCondition condition) {
  if (lambda == 1.0) return {nn::LossKind::mse, 1.0, condition};
  return {nn::LossKind::penalized, lambda, condition};
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// --- GridSpec ---------------------------------------------------------------------------

std::size_t GridSpec::combinations() const {
  std::size_t n = 1;
  for (std::size_t size : {learning_rates.size(), lambdas.size(), hidden.size(), optimizers.size()}) {
    if (size > 0) n *= size;
  }
  return n;
}

void GridSpec::validate() const {
  if (learning_rates.empty() && lambdas.empty() && hidden.empty() && optimizers.empty()) {
    throw ValidationError("grid has no candidate values");
  }
  for (double lr : learning_rates) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("grid learning rates must be finite and >= 0");
  }
  for (double l : lambdas) {
    if (!(l >= 1.0) || !std::isfinite(l)) throw ValidationError("grid lambdas must be finite and >= 1");
  }
  for (const auto& h : hidden) {
    if (std::find(h.begin(), h.end(), 0) != h.end()) throw ValidationError("grid hidden widths must be >= 1");
  }
  if (cap < 1) throw ValidationError("grid cap must be >= 1");
  if (combinations() > cap) {
    throw ValidationError("grid has " + std::to_string(combinations()) + " combinations, above its cap of " +
                          std::to_string(cap));
  }
}

json GridSpec::to_json() const {
  json opts = json::array();
  for (auto o : optimizers) opts.push_back(nn::to_string(o));
  return {{"expert", expert}, {"learning_rates", learning_rates}, {"lambdas", lambdas},
          {"hidden", hidden}, {"optimizers", opts},                {"cap", cap}};
}

GridSpec GridSpec::from_json(const json& j) {
  check_keys(j, {"expert", "learning_rates", "lambdas", "hidden", "optimizers", "cap"}, "grid");
  GridSpec g;
  g.expert = j.value("expert", std::string());
  g.learning_rates = j.value("learning_rates", std::vector<double>{});
  g.lambdas = j.value("lambdas", std::vector<double>{});
  g.hidden = j.value("hidden", std::vector<std::vector<std::size_t>>{});
  for (const auto& o : j.value("optimizers", std::vector<std::string>{})) g.optimizers.push_back(nn::parse_optimizer(o));
  g.cap = j.value("cap", std::size_t{64});
  return g;
}

// --- ExperimentConfig ---------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ValidationError("unsupported schema_version " + std::to_string(schema_version));
  }
  if (experts.empty()) throw ValidationError("config declares no experts");

  const bool synth = data.synthesis.has_value();
  if (synth == !data.dataset_path.empty()) {
    throw ValidationError("data needs exactly one of synthesis or dataset");
  }
  if (synth && (!data.validation_path.empty() || !data.test_path.empty())) {
    throw ValidationError("synthetic data cannot be combined with validation or test files");
  }
  if (data.test_path.empty() && !(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ValidationError("data.test_fraction must be in (0, 1)");
  }
  if (data.validation_path.empty() && !(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw ValidationError("data.train_fraction must be in (0, 1)");
  }

  std::set<std::string> view_names;
  for (const auto& v : views) {
    if (!view_names.insert(v.name).second) throw ValidationError("duplicate view name: " + v.name);
    for (auto i : v.lm_indices) {
      if (i >= resources.language_models.size()) {
        throw ValidationError("view '" + v.name + "' references language model " + std::to_string(i) + " but only " +
                              std::to_string(resources.language_models.size()) + " are declared");
      }
    }
    if (v.is_sequence() && v.source == features::EmbeddingSource::static_table &&
        resources.embeddings.source == EmbeddingDecl::Source::none) {
      throw ValidationError("view '" + v.name + "' needs static embeddings but none are declared");
    }
    if (v.is_sequence() && v.source == features::EmbeddingSource::contextual && resources.contextual_path.empty()) {
      throw ValidationError("view '" + v.name + "' needs contextual embeddings but none are declared");
    }
  }

  std::set<std::string> ids;
  for (const auto& e : experts) {
    if (!safe_name(e.id)) throw ValidationError("expert id '" + e.id + "' must be a plain file name");
    if (!ids.insert(e.id).second) throw ValidationError("duplicate expert id: " + e.id);
    if (!view_names.count(e.view)) {
      throw ValidationError("expert '" + e.id + "' references undeclared view '" + e.view + "'");
    }
    if (!e.architecture.empty()) nn::build_architecture(e.architecture);
    e.loss.validate();
    e.train.validate();
  }

  std::set<std::string> names;
  for (const auto& c : combiners) {
    if (!safe_name(c.name)) throw ValidationError("combiner name '" + c.name + "' must be a plain file name");
    if (!names.insert(c.name).second) throw ValidationError("duplicate combiner name: " + c.name);
    if (!kCombinerKinds.count(c.kind)) throw ValidationError("unknown combiner kind: " + c.kind);
    std::set<std::string> members;
    for (const auto& id : c.experts) {
      if (!ids.count(id)) throw ValidationError("combiner '" + c.name + "' references unknown expert '" + id + "'");
      if (!members.insert(id).second) throw ValidationError("combiner '" + c.name + "' lists expert '" + id + "' twice");
    }
    if (c.kind == "mixture") {
      if (!(c.lambda >= 1.0)) throw ValidationError("combiner '" + c.name + "': lambda must be >= 1");
      c.train.validate();
      if (std::find(c.gating_hidden.begin(), c.gating_hidden.end(), 0) != c.gating_hidden.end()) {
        throw ValidationError("combiner '" + c.name + "': gating widths must be >= 1");
      }
      if (c.fit_on != "train" && c.fit_on != "validation") {
        throw ValidationError("combiner '" + c.name + "': fit_on must be train or validation");
      }
      if (!(c.fit_fraction > 0.0 && c.fit_fraction < 1.0)) {
        throw ValidationError("combiner '" + c.name + "': fit_fraction must be in (0, 1)");
      }
    }
  }

  if (grid) {
    grid->validate();
    if (!grid->expert.empty() && !ids.count(grid->expert)) {
      throw ValidationError("grid references unknown expert '" + grid->expert + "'");
    }
  }
}

const features::FeatureView& ExperimentConfig::view(const std::string& name) const {
  for (const auto& v : views) {
    if (v.name == name) return v;
  }
  throw ValidationError("no view named '" + name + "'");
}

const ExpertDecl& ExperimentConfig::expert(const std::string& id) const {
  for (const auto& e : experts) {
    if (e.id == id) return e;
  }
  throw ValidationError("no expert with id '" + id + "'");
}

json ExperimentConfig::to_json() const {
  json d = {{"test_fraction", data.test_fraction},
            {"train_fraction", data.train_fraction},
            {"test_split_seed", test_split_seed},
            {"validation_split_seed", validation_split_seed}};
  if (data.synthesis) d["synthesis"] = synthesis_to_json(*data.synthesis);
  if (!data.dataset_path.empty()) d["dataset"] = data.dataset_path;
  if (!data.validation_path.empty()) d["validation"] = data.validation_path;
  if (!data.test_path.empty()) d["test"] = data.test_path;
  if (!data.grammar_path.empty()) d["grammar"] = data.grammar_path;

  json v = json::array();
  for (const auto& view : views) v.push_back(view.to_json());
  json e = json::array();
  for (const auto& x : experts) e.push_back(expert_to_json(x));
  json c = json::array();
  for (const auto& x : combiners) c.push_back(combiner_to_json(x));

  json j = {{"schema_version", schema_version},
            {"seed", seed},
            {"data", d},
            {"resources", resources_to_json(resources)},
            {"views", v},
            {"experts", e},
            {"combiners", c},
            {"selection_target", metrics::to_string(selection_target)}};
  if (!out.empty()) j["out"] = out;
  if (grid) j["grid"] = grid->to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, bool check) {
  try {
    check_keys(j,
               {"schema_version", "seed", "data", "resources", "views", "experts", "combiners", "combiner",
                "selection_target", "out", "grid", "description"},
               "config");
    ExperimentConfig c;
    if (!j.contains("schema_version")) throw ValidationError("config has no schema_version");
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kSchemaVersion) {
      throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version));
    }
    c.seed = j.value("seed", std::uint64_t{1});

    const auto& d = j.value("data", json::object());
    check_keys(d,
               {"synthesis", "dataset", "validation", "test", "grammar", "test_fraction", "train_fraction",
                "test_split_seed", "validation_split_seed"},
               "data");
    if (d.contains("synthesis")) c.data.synthesis = synthesis_from_json(d.at("synthesis"), stream_seed(c.seed, "synthesis"));
    c.data.dataset_path = d.value("dataset", std::string());
    c.data.validation_path = d.value("validation", std::string());
    c.data.test_path = d.value("test", std::string());
    c.data.grammar_path = d.value("grammar", std::string());
    c.data.test_fraction = d.value("test_fraction", 0.2);
    c.data.train_fraction = d.value("train_fraction", 0.8);
    c.test_split_seed = d.value("test_split_seed", stream_seed(c.seed, "split:test"));
    c.validation_split_seed = d.value("validation_split_seed", stream_seed(c.seed, "split:validation"));

    c.resources = resources_from_json(j.value("resources", json::object()), c.seed);
    for (const auto& v : j.value("views", json::array())) c.views.push_back(features::FeatureView::from_json(v));
    for (const auto& e : j.value("experts", json::array())) c.experts.push_back(expert_from_json(e, c.seed));
    if (j.contains("combiner") && j.contains("combiners")) {
      throw ValidationError("config has both combiner and combiners");
    }
    if (j.contains("combiner")) c.combiners.push_back(parse_combiner(j.at("combiner"), c.seed));
    for (const auto& x : j.value("combiners", json::array())) c.combiners.push_back(parse_combiner(x, c.seed));
    c.selection_target = metrics::parse_target(j.value("selection_target", std::string("d_full")));
    c.out = j.value("out", std::string());
    if (j.contains("grid")) c.grid = GridSpec::from_json(j.at("grid"));
    if (check) c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_json(read_json(path)); }

json workspace_config_json(const ExperimentConfig& config) {
  json j = config.to_json();
  j.erase("out");
  return j;
}

// --- data and resources ---------------------------------------------------------------------

DataSplits prepare_data(const ExperimentConfig& config) {
  return in_stage("data", [&] {
    DataSplits s;
    Dataset pool;
    if (config.data.synthesis) {
      auto synth = corpus::synthesize_corpus(*config.data.synthesis);
      pool = std::move(synth.dataset);
      s.grammar = std::move(synth.grammar);
    } else {
      pool = corpus::parse_dataset(config.data.dataset_path);
      if (!config.data.grammar_path.empty()) s.grammar = corpus::ReferenceGrammar::parse(config.data.grammar_path);
    }

    if (config.data.test_path.empty()) {
      auto carved = corpus::split(pool, 1.0 - config.data.test_fraction, config.test_split_seed);
      pool = std::move(carved.train);
      s.test = std::move(carved.validation);
    } else {
      s.test = corpus::parse_dataset(config.data.test_path);
    }
    if (config.data.validation_path.empty()) {
      auto parts = corpus::split(pool, config.data.train_fraction, config.validation_split_seed);
      s.train = std::move(parts.train);
      s.validation = std::move(parts.validation);
    } else {
      s.train = std::move(pool);
      s.validation = corpus::parse_dataset(config.data.validation_path);
    }

    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      if (part->empty()) throw ValidationError("a data split is empty; the corpus is too small for the fractions");
    }
    Dataset all = s.train;
    all.insert(all.end(), s.validation.begin(), s.validation.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    corpus::check_unique_ids(all);
    return s;
  });
}

namespace {

std::vector<Tokens> lm_corpus(const ExperimentConfig& config, lm::CorpusRole role, const Dataset& train) {
  std::vector<Tokens> out;
  if (role == lm::CorpusRole::generic && !config.resources.generic_corpus.empty()) {
    std::ifstream in(config.resources.generic_corpus);
    if (!in) throw ParseError("cannot open " + config.resources.generic_corpus);
    for (std::string line; std::getline(in, line);) {
      auto t = corpus::tokenize(line);
      if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
  }
  for (const auto& ex : train) {
    const bool keep = role == lm::CorpusRole::generic || (role == lm::CorpusRole::train_accepted) == ex.gold_accept();
    if (keep) out.push_back(corpus::tokenize(ex.response));
  }
  return out;
}

}  // namespace

std::vector<lm::NGramModel> fit_language_models(const ExperimentConfig& config, const Dataset& train) {
  std::vector<lm::NGramModel> out;
  for (const auto& decl : config.resources.language_models) {
    out.push_back(lm::NGramModel::train(lm_corpus(config, decl.role, train), decl.order, decl.role, decl.boundary));
  }
  return out;
}

namespace {

std::vector<Tokens> documents_of(const Dataset& train) {
  std::vector<Tokens> documents;
  documents.reserve(2 * train.size());
  for (const auto& ex : train) {
    documents.push_back(corpus::tokenize(ex.prompt));
    documents.push_back(corpus::tokenize(ex.response));
  }
  return documents;
}

}  // namespace

std::optional<embed::EmbeddingTable> fit_embeddings(const ExperimentConfig& config, const Dataset& train) {
  switch (config.resources.embeddings.source) {
    case EmbeddingDecl::Source::none:
      break;
    case EmbeddingDecl::Source::skipgram:
      return embed::train_skipgram(documents_of(train), config.resources.embeddings.skipgram).table;
    case EmbeddingDecl::Source::file:
      return embed::EmbeddingTable::load(config.resources.embeddings.path);
  }
  return std::nullopt;
}

features::FeatureResources fit_resources(const ExperimentConfig& config, const DataSplits& splits) {
  return in_stage("resources", [&] {
    features::FeatureResources res;
    const auto documents = documents_of(splits.train);
    res.vocabulary = corpus::Vocabulary::build(documents, config.resources.min_count);
    res.idf = features::IdfTable::fit(documents, res.vocabulary);
    res.lms = fit_language_models(config, splits.train);
    res.grammar = splits.grammar;
    if (config.resources.stopwords) res.content = features::ContentWordPredicate(*config.resources.stopwords);
    res.static_embeddings = fit_embeddings(config, splits.train);
    if (!config.resources.contextual_path.empty()) {
      res.contextual = embed::ContextualEmbeddingStore::load(config.resources.contextual_path);
    }
    return res;
  });
}

// --- experts ---------------------------------------------------------------------------------

nn::LayerSpec expert_spec(const ExpertDecl& decl, const features::FeatureView& view,
                          const features::FeatureResources& res) {
  const auto width = features::view_width(view, res);
  nn::LayerSpec spec;
  if (!decl.architecture.empty()) {
    spec = nn::build_architecture(decl.architecture);
    if (spec.recurrent != view.is_sequence()) {
      throw ValidationError("expert '" + decl.id + "': architecture " + decl.architecture + " has recurrent=" +
                            (spec.recurrent ? "true" : "false") + " but view '" + view.name + "' is " +
                            features::to_string(view.kind));
    }
    if (spec.input_width() != width) {
      throw ValidationError("expert '" + decl.id + "': architecture " + decl.architecture + " expects " +
                            std::to_string(spec.input_width()) + " inputs but view '" + view.name + "' gives " +
                            std::to_string(width));
    }
  } else {
    spec.widths.push_back(width);
    spec.widths.insert(spec.widths.end(), decl.hidden.begin(), decl.hidden.end());
    spec.widths.push_back(corpus::ClassLabel::kCount);
    spec.recurrent = view.is_sequence();
  }
  spec.hidden = decl.activation;
  spec.validate_expert();
  return spec;
}

namespace {

std::vector<nn::Sample> samples_for(const features::FeatureView& view, const Dataset& data,
                                    const features::FeatureResources& res) {
  std::vector<nn::Sample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back({features::extract(view, ex, res), ex.label()});
  return out;
}

json expert_metadata(const TrainedExpert& t, const ExpertDecl& decl) {
  return {{"format", "l2grade-expert-meta"},
          {"version", 1},
          {"id", decl.id},
          {"view", t.expert.view.to_json()},
          {"architecture", decl.architecture},
          {"loss", decl.loss.to_json()},
          {"train", decl.train.to_json()},
          {"init_seed", t.init_seed},
          {"shuffle_seed", t.shuffle_seed},
          {"parameters", t.expert.network.parameter_count()},
          {"history", t.history.to_json()},
          {"validation", t.validation.to_json()}};
}

}  // namespace

TrainedExpert train_expert(const ExperimentConfig& config, const ExpertDecl& decl, const DataSplits& splits,
                           const features::FeatureResources& res) {
  return in_stage("train-expert " + decl.id, [&] {
    const auto& view = config.view(decl.view);
    auto net = nn::Network::initialized(expert_spec(decl, view, res), decl.init_seed);
    net.view_descriptor = {{"expert", decl.id}, {"view", view.to_json()}};
    auto result = nn::train(std::move(net), samples_for(view, splits.train, res),
                            samples_for(view, splits.validation, res), decl.loss, decl.train);
    TrainedExpert t{{decl.id, view, std::move(result.network), {}}, result.history, {}, decl.init_seed,
                    decl.train.seed};
    t.validation = evaluate_expert(t.expert, splits.validation, res);
    t.expert.metadata = expert_metadata(t, decl);
    return t;
  });
}

std::vector<metrics::Decision> expert_decisions(const combine::Expert& expert, const Dataset& data,
                                                const features::FeatureResources& res) {
  std::vector<metrics::Decision> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    const auto p = combine::expert_posterior(expert, ex, res);
    out.push_back(combine::decide(p).accept() ? metrics::Decision::accept : metrics::Decision::reject);
  }
  return out;
}

metrics::MetricsReport evaluate_expert(const combine::Expert& expert, const Dataset& data,
                                       const features::FeatureResources& res) {
  return metrics::MetricsReport::from_tally(metrics::tally(data, expert_decisions(expert, data, res)));
}

// --- combiners -------------------------------------------------------------------------------

namespace {

using PosteriorRows = std::vector<std::vector<combine::Posterior>>;

PosteriorRows posterior_rows(const std::vector<combine::Expert>& experts, const Dataset& data,
                             const features::FeatureResources& res) {
  PosteriorRows rows(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows[i].reserve(experts.size());
    for (const auto& e : experts) rows[i].push_back(combine::expert_posterior(e, data[i], res));
  }
  return rows;
}

metrics::Decision as_decision(corpus::ClassLabel label) {
  return label.accept() ? metrics::Decision::accept : metrics::Decision::reject;
}

}  // namespace

CombinerResult build_combiner(const ExperimentConfig& config, const CombinerDecl& decl,
                              const std::vector<combine::Expert>& experts, const DataSplits& splits,
                              const features::FeatureResources& res) {
  (void)config;
  return in_stage("combine " + decl.name, [&] {
    std::vector<combine::Expert> members;
    if (decl.experts.empty()) {
      members = experts;
    } else {
      for (const auto& id : decl.experts) {
        const auto it = std::find_if(experts.begin(), experts.end(), [&](const auto& e) { return e.id == id; });
        if (it == experts.end()) throw ValidationError("no trained expert '" + id + "'");
        members.push_back(*it);
      }
    }
    if (members.empty()) throw ValidationError("combiner has no experts");

    CombinerResult r;
    r.name = decl.name;
    r.kind = decl.kind;
    for (const auto& e : members) r.expert_ids.push_back(e.id);

    const auto val_rows = posterior_rows(members, splits.validation, res);
    const auto test_rows = posterior_rows(members, splits.test, res);
    std::function<metrics::Decision(const std::vector<combine::Posterior>&)> decide_row;

    if (decl.kind == "pseudo-joint") {
      r.priors = combine::estimate_priors(splits.train);
      decide_row = [&](const std::vector<combine::Posterior>& ps) {
        return as_decision(combine::pseudo_joint(ps, *r.priors).decision);
      };
    } else if (decl.kind == "mixture") {
      auto gating = nn::Network::initialized(combine::gating_spec(members.size(), decl.gating_hidden), decl.init_seed);
      gating.view_descriptor = {{"combiner", decl.name}, {"experts", r.expert_ids}};
      const auto loss = lambda_loss(decl.lambda, nn::PenaltyCondition::gross_false_accept);
      nn::TrainResult trained{nn::Network(gating.spec()), {}};
      if (decl.fit_on == "train") {
        trained = combine::train_gating_network(std::move(gating), posterior_rows(members, splits.train, res),
                                                splits.train, val_rows, splits.validation, decl.train, loss);
      } else {
        const auto parts = corpus::split(splits.validation, decl.fit_fraction, decl.fit_split_seed);
        if (parts.train.empty() || parts.validation.empty()) {
          throw ValidationError("validation split too small to fit and early-stop the gating network");
        }
        trained = combine::train_gating_network(std::move(gating), posterior_rows(members, parts.train, res),
                                                parts.train, posterior_rows(members, parts.validation, res),
                                                parts.validation, decl.train, loss);
      }
      r.gating = std::move(trained.network);
      r.history = std::move(trained.history);
      decide_row = [&](const std::vector<combine::Posterior>& ps) {
        return as_decision(combine::gate(*r.gating, ps).decision);
      };
    } else if (decl.kind == "majority") {
      decide_row = [](const std::vector<combine::Posterior>& ps) {
        std::vector<metrics::Decision> votes;
        for (const auto& p : ps) votes.push_back(as_decision(combine::decide(p)));
        return combine::majority_vote(votes);
      };
    } else {
      throw ValidationError("unknown combiner kind: " + decl.kind);
    }

    auto score = [&](const PosteriorRows& rows, const Dataset& gold) {
      std::vector<metrics::Decision> d;
      d.reserve(rows.size());
      for (const auto& row : rows) d.push_back(decide_row(row));
      return metrics::MetricsReport::from_tally(metrics::tally(gold, d));
    };
    r.validation = score(val_rows, splits.validation);
    r.test = score(test_rows, splits.test);
    return r;
  });
}

// --- persistence ------------------------------------------------------------------------------

void save_resources(const features::FeatureResources& res, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "lm");
  json lms = json::array();
  for (std::size_t i = 0; i < res.lms.size(); ++i) {
    const auto rel = "lm/" + std::to_string(i) + ".json";
    write_json(root / rel, res.lms[i].to_json());
    lms.push_back(rel);
  }
  std::ostringstream grammar;
  res.grammar.write(grammar);
  write_text(root / "grammar.tsv", grammar.str());

  json j = {{"format", "l2grade-resources"},
            {"version", 1},
            {"vocabulary", res.vocabulary.regular_words()},
            {"vocabulary_boundary", res.vocabulary.has_boundary()},
            {"idf", res.idf.values()},
            {"idf_documents", res.idf.documents()},
            {"lms", lms},
            {"grammar", "grammar.tsv"},
            {"stopwords", res.content.stopwords()}};
  if (res.static_embeddings) {
    res.static_embeddings->save((root / "embeddings.vec").string());
    j["embeddings"] = "embeddings.vec";
  }
  if (res.contextual) {
    res.contextual->save((root / "contextual.json").string());
    j["contextual"] = "contextual.json";
  }
  write_json(root / "resources.json", j);
}

features::FeatureResources load_resources(const std::string& dir) {
  const fs::path root(dir);
  const auto j = read_json(root / "resources.json");
  if (j.value("format", "") != "l2grade-resources" || j.value("version", 0) != 1) {
    throw ParseError((root / "resources.json").string() + " is not an l2grade-resources v1 file");
  }
  features::FeatureResources res;
  res.vocabulary = corpus::Vocabulary(j.at("vocabulary").get<std::vector<std::string>>(),
                                      j.value("vocabulary_boundary", false));
  res.idf = features::IdfTable(j.at("idf").get<std::vector<double>>(), j.at("idf_documents").get<std::size_t>());
  for (const auto& rel : j.at("lms")) {
    res.lms.push_back(lm::NGramModel::from_json(read_json(root / rel.get<std::string>())));
  }
  res.grammar = corpus::ReferenceGrammar::parse((root / j.at("grammar").get<std::string>()).string());
  res.content = features::ContentWordPredicate(j.at("stopwords").get<std::vector<std::string>>());
  if (j.contains("embeddings")) {
    res.static_embeddings = embed::EmbeddingTable::load((root / j.at("embeddings").get<std::string>()).string());
  }
  if (j.contains("contextual")) {
    res.contextual = embed::ContextualEmbeddingStore::load((root / j.at("contextual").get<std::string>()).string());
  }
  return res;
}

void save_expert(const TrainedExpert& trained, const ExpertDecl& decl, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  write_json(root / (decl.id + ".json"), nn::network_to_json(trained.expert.network));
  write_json(root / (decl.id + ".meta.json"), expert_metadata(trained, decl));
}

combine::Expert load_expert(const std::string& network_path) {
  auto net = nn::load_network(network_path);
  const auto& desc = net.view_descriptor;
  if (!desc.is_object() || !desc.contains("expert") || !desc.contains("view")) {
    throw ParseError(network_path + " does not describe an expert");
  }
  combine::Expert e{desc.at("expert").get<std::string>(), features::FeatureView::from_json(desc.at("view")),
                    std::move(net), json::object()};
  fs::path meta(network_path);
  meta.replace_extension(".meta.json");
  if (fs::exists(meta)) e.metadata = read_json(meta);
  return e;
}

void save_combiner(const CombinerResult& c, const std::string& dir, const std::string& experts_dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  combine::CombinerManifest m;
  m.kind = c.kind;
  m.expert_ids = c.expert_ids;
  for (const auto& id : c.expert_ids) {
    m.expert_paths.push_back((fs::path(experts_dir).lexically_relative(root) / (id + ".json")).generic_string());
  }
  m.priors = c.priors;
  if (c.gating) {
    m.gating_path = c.name + ".gating.json";
    write_json(root / m.gating_path, nn::network_to_json(*c.gating));
  }
  auto j = m.to_json();
  j["name"] = c.name;
  j["validation"] = c.validation.to_json();
  j["test"] = c.test.to_json();
  if (c.history) j["history"] = c.history->to_json();
  write_json(root / (c.name + ".json"), j);
}

DataSplits load_workspace_data(const std::string& workspace) {
  const fs::path root(workspace);
  DataSplits s;
  s.train = corpus::parse_dataset((root / "data" / "train.tsv").string());
  s.validation = corpus::parse_dataset((root / "data" / "validation.tsv").string());
  s.test = corpus::parse_dataset((root / "data" / "test.tsv").string());
  s.grammar = corpus::ReferenceGrammar::parse((root / "resources" / "grammar.tsv").string());
  return s;
}

std::vector<combine::Expert> load_workspace_experts(const std::string& workspace, const std::vector<std::string>& ids) {
  const fs::path dir = fs::path(workspace) / "experts";
  std::vector<std::string> names = ids;
  if (names.empty()) {
    if (!fs::is_directory(dir)) throw ParseError(dir.string() + " does not exist");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto file = entry.path().filename().string();
      const std::string suffix = ".meta.json";
      if (file.size() > suffix.size() && file.compare(file.size() - suffix.size(), suffix.size(), suffix) == 0) continue;
      if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
  }
  if (names.empty()) throw ValidationError("workspace " + workspace + " holds no experts");
  std::vector<combine::Expert> out;
  for (const auto& id : names) out.push_back(load_expert((dir / (id + ".json")).string()));
  return out;
}

void write_manifest(const std::string& dir, const json& seeds) {
  const fs::path root(dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& rel : files) {
    const auto bytes = read_text(root / rel);
    list.push_back({{"path", rel}, {"bytes", bytes.size()}, {"fnv1a", hex64(fnv1a(bytes))}});
  }
  write_json(root / "manifest.json", {{"format", "l2grade-manifest"}, {"version", 1}, {"seeds", seeds}, {"files", list}});
}

// --- full run ---------------------------------------------------------------------------------

namespace {

json seeds_json(const ExperimentConfig& config) {
  json experts = json::object();
  for (const auto& e : config.experts) experts[e.id] = {{"init", e.init_seed}, {"shuffle", e.train.seed}};
  json combiners = json::object();
  for (const auto& c : config.combiners) {
    if (c.kind == "mixture") {
      combiners[c.name] = {{"init", c.init_seed}, {"shuffle", c.train.seed}, {"fit_split", c.fit_split_seed}};
    }
  }
  json j = {{"global", config.seed},
            {"test_split", config.test_split_seed},
            {"validation_split", config.validation_split_seed},
            {"experts", experts},
            {"combiners", combiners}};
  if (config.data.synthesis) j["synthesis"] = config.data.synthesis->seed;
  if (config.resources.embeddings.source == EmbeddingDecl::Source::skipgram) {
    j["skipgram"] = config.resources.embeddings.skipgram.seed;
  }
  return j;
}

struct Candidate {
  std::string name;
  const metrics::MetricsReport* validation;
};

std::string select_best(const std::vector<Candidate>& candidates, metrics::Target target) {
  const Candidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!best) {
      best = &c;
      continue;
    }
    const double a = metrics::selection_key(*c.validation, target), b = metrics::selection_key(*best->validation, target);
    if (a > b || (a == b && c.name < best->name)) best = &c;
  }
  return best ? best->name : std::string();
}

json build_report(const ExperimentConfig& config, const DataSplits& splits, const ExperimentResult& r) {
  json experts = json::object();
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < r.experts.size(); ++i) {
    const auto& t = r.experts[i];
    experts[t.expert.id] = {{"view", t.expert.view.name},
                            {"parameters", t.expert.network.parameter_count()},
                            {"best_epoch", t.history.best_epoch},
                            {"validation", t.validation.to_json()},
                            {"test", r.expert_test[i].to_json()}};
    candidates.push_back({t.expert.id, &t.validation});
  }
  json combiners = json::object();
  for (const auto& c : r.combiners) {
    combiners[c.name] = {{"kind", c.kind},
                         {"experts", c.expert_ids},
                         {"validation", c.validation.to_json()},
                         {"test", c.test.to_json()}};
    candidates.push_back({c.name, &c.validation});
  }
  json selected = json::object();
  for (auto t : {metrics::Target::d_full, metrics::Target::accuracy, metrics::Target::f1}) {
    selected[metrics::to_string(t)] = select_best(candidates, t);
  }
  return {{"format", "l2grade-report"},
          {"version", 1},
          {"seed", config.seed},
          {"selection_target", metrics::to_string(config.selection_target)},
          {"splits", {{"train", splits.train.size()}, {"validation", splits.validation.size()}, {"test", splits.test.size()}}},
          {"experts", experts},
          {"combiners", combiners},
          {"selected", selected},
          {"best", selected[metrics::to_string(config.selection_target)]}};
}

}  // namespace

std::string report_text(const json& report) {
  std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
  for (const auto& [id, e] : report.at("experts").items()) rows.emplace_back(id, metrics::MetricsReport::from_json(e.at("test")));
  for (const auto& [name, c] : report.at("combiners").items()) {
    rows.emplace_back(name, metrics::MetricsReport::from_json(c.at("test")));
  }
  std::ostringstream s;
  s << "held-out test split (" << report.at("splits").at("test").get<std::size_t>() << " exchanges)\n";
  s << metrics::format_table(rows);
  s << "selected on validation by " << report.at("selection_target").get<std::string>() << ": "
    << report.at("best").get<std::string>() << "\n";
  return s.str();
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  in_stage("config", [&] { config.validate(); });
  const auto splits = prepare_data(config);
  const auto res = fit_resources(config, splits);

  ExperimentResult r;
  std::vector<combine::Expert> experts;
  for (const auto& decl : config.experts) {
    r.experts.push_back(train_expert(config, decl, splits, res));
    r.expert_test.push_back(
        in_stage("evaluate " + decl.id, [&] { return evaluate_expert(r.experts.back().expert, splits.test, res); }));
    experts.push_back(r.experts.back().expert);
  }
  for (const auto& decl : config.combiners) r.combiners.push_back(build_combiner(config, decl, experts, splits, res));
  r.report = build_report(config, splits, r);

  if (!config.out.empty()) {
    in_stage("write", [&] {
      const fs::path root(config.out);
      fs::create_directories(root);
      write_json(root / "config.json", workspace_config_json(config));
      fs::create_directories(root / "data");
      corpus::write_dataset((root / "data" / "train.tsv").string(), splits.train);
      corpus::write_dataset((root / "data" / "validation.tsv").string(), splits.validation);
      corpus::write_dataset((root / "data" / "test.tsv").string(), splits.test);
      save_resources(res, (root / "resources").string());
      for (std::size_t i = 0; i < r.experts.size(); ++i) {
        save_expert(r.experts[i], config.experts[i], (root / "experts").string());
      }
      for (const auto& c : r.combiners) {
        save_combiner(c, (root / "combiners").string(), (root / "experts").string());
      }
      write_json(root / "report.json", r.report);
      write_text(root / "report.txt", report_text(r.report));
      write_manifest(root.string(), seeds_json(config));
    });
  }
  return r;
}

// --- grid search --------------------------------------------------------------------------------

bool ranks_before(const LeaderboardRow& a, const LeaderboardRow& b, metrics::Target target) {
  const double ka = metrics::selection_key(a.validation, target), kb = metrics::selection_key(b.validation, target);
  if (ka != kb) return ka > kb;
  if (a.parameters != b.parameters) return a.parameters < b.parameters;
  return a.config_id < b.config_id;
}

json Leaderboard::to_json() const {
  json rows_json = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows_json.push_back({{"rank", i + 1},
                         {"config_id", rows[i].config_id},
                         {"parameters", rows[i].parameters},
                         {"hyperparameters", rows[i].hyperparameters},
                         {"validation", rows[i].validation.to_json()}});
  }
  return {{"format", "l2grade-leaderboard"}, {"version", 1}, {"target", metrics::to_string(target)},
          {"rows", rows_json},               {"best_by", best_by}};
}

std::string Leaderboard::to_text() const {
  std::vector<std::pair<std::string, metrics::MetricsReport>> table;
  for (const auto& r : rows) table.emplace_back(r.config_id, r.validation);
  std::ostringstream s;
  s << "validation leaderboard, ranked by " << metrics::to_string(target) << "\n" << metrics::format_table(table);
  for (const auto& [metric, id] : best_by) s << "best by " << metric << ": " << id << "\n";
  return s.str();
}

namespace {

std::string hidden_id(const std::vector<std::size_t>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) s += (i ? "x" : "") + std::to_string(h[i]);
  return s.empty() ? "none" : s;
}

struct GridPoint {
  ExpertDecl decl;
  std::string id;
  json hyperparameters;
};

std::vector<GridPoint> enumerate(const ExpertDecl& base, const GridSpec& grid) {
  std::vector<GridPoint> points{{base, "", json::object()}};
  auto expand = [&](std::size_t n, auto apply) {
    if (n == 0) return;
    std::vector<GridPoint> next;
    for (const auto& p : points) {
      for (std::size_t i = 0; i < n; ++i) {
        auto q = p;
        apply(q, i);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  };
  auto append = [](GridPoint& p, const std::string& part) { p.id += (p.id.empty() ? "" : ",") + part; };
  expand(grid.learning_rates.size(), [&](GridPoint& p, std::size_t i) {
    p.decl.train.learning_rate = grid.learning_rates[i];
    p.hyperparameters["learning_rate"] = grid.learning_rates[i];
    append(p, "lr=" + format_real(grid.learning_rates[i]));
  });
  expand(grid.lambdas.size(), [&](GridPoint& p, std::size_t i) {
    p.decl.loss = lambda_loss(grid.lambdas[i], p.decl.loss.condition);
    p.hyperparameters["lambda"] = grid.lambdas[i];
    append(p, "lambda=" + format_real(grid.lambdas[i]));
  });
  expand(grid.hidden.size(), [&](GridPoint& p, std::size_t i) {
    p.decl.architecture.clear();
    p.decl.hidden = grid.hidden[i];
    p.hyperparameters["hidden"] = grid.hidden[i];
    append(p, "hidden=" + hidden_id(grid.hidden[i]));
  });
  expand(grid.optimizers.size(), [&](GridPoint& p, std::size_t i) {
    p.decl.train.optimizer = grid.optimizers[i];
    p.hyperparameters["optimizer"] = nn::to_string(grid.optimizers[i]);
    append(p, "opt=" + nn::to_string(grid.optimizers[i]));
  });
  return points;
}

}  // namespace

Leaderboard grid_search(const ExperimentConfig& config, const GridSpec& grid) {
  in_stage("config", [&] { config.validate(); });
  in_stage("grid", [&] { grid.validate(); });
  const auto& base = in_stage("grid", [&]() -> const ExpertDecl& {
    return grid.expert.empty() ? config.experts.front() : config.expert(grid.expert);
  });
  const auto points = enumerate(base, grid);
  const auto splits = prepare_data(config);
  const auto res = fit_resources(config, splits);

  Leaderboard board;
  board.target = config.selection_target;
  std::vector<TrainedExpert> trained;
  for (const auto& p : points) {
    trained.push_back(train_expert(config, p.decl, splits, res));
    board.rows.push_back({p.id, trained.back().expert.network.parameter_count(), p.hyperparameters,
                          trained.back().validation});
  }

  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto by = [&](metrics::Target t) {
    auto o = order;
    std::sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return ranks_before(board.rows[a], board.rows[b], t); });
    return o;
  };
  std::map<std::string, std::size_t> best_index;
  for (auto t : {metrics::Target::d_full, metrics::Target::accuracy, metrics::Target::f1}) {
    best_index[metrics::to_string(t)] = by(t).front();
    board.best_by[metrics::to_string(t)] = board.rows[by(t).front()].config_id;
  }
  const auto ranked = by(board.target);
  std::vector<LeaderboardRow> rows;
  for (auto i : ranked) rows.push_back(board.rows[i]);
  board.rows = std::move(rows);

  if (!config.out.empty()) {
    in_stage("write", [&] {
      const fs::path root(config.out);
      fs::create_directories(root);
      write_json(root / "config.json", workspace_config_json(config));
      write_json(root / "leaderboard.json", board.to_json());
      write_text(root / "leaderboard.txt", board.to_text());
      for (const auto& [metric, i] : best_index) {
        auto decl = points[i].decl;
        decl.id = "best-" + metric;
        save_expert(trained[i], decl, (root / "best").string());
      }
      write_manifest(root.string(), seeds_json(config));
    });
  }
  return board;
}

}  // namespace l2grade::experiment
