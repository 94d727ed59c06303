#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "l2grade/corpus.hpp"
#include "test_util.hpp"

using namespace l2grade;
using namespace l2grade::corpus;

TEST_CASE("class labels round-trip through their index") {
  for (int i = 0; i < ClassLabel::kCount; ++i) {
    const auto label = ClassLabel::from_index(i);
    CHECK(label.index() == i);
    CHECK(ClassLabel(label.language_correct(), label.meaning_correct()) == label);
    CHECK(label.accept() == (i == 0));
  }
  CHECK(ClassLabel(true, true).index() == 0);
  CHECK(ClassLabel(true, false).index() == 1);
  CHECK(ClassLabel(false, true).index() == 2);
  CHECK(ClassLabel(false, false).index() == 3);
  CHECK_THROWS_AS(ClassLabel::from_index(4), ValidationError);
  CHECK_THROWS_AS(ClassLabel::from_index(-1), ValidationError);
}

TEST_CASE("dataset rows decode flags") {
  std::istringstream in("u1\tWie alt bist du\ti am twelve\t1\t1\nu2\tWo wohnst du\ti live berlin\t0\t1\n");
  const auto data = read_dataset(in);
  REQUIRE(data.size() == 2);
  CHECK(data[0].id == "u1");
  CHECK(data[0].prompt == "Wie alt bist du");
  CHECK(data[0].response == "i am twelve");
  CHECK(data[0].language_correct);
  CHECK(data[0].meaning_correct);
  CHECK(data[0].gold_accept());
  CHECK_FALSE(data[1].language_correct);
  CHECK(data[1].meaning_correct);
  CHECK_FALSE(data[1].gold_accept());
}

TEST_CASE("malformed rows name their row number") {
  SUBCASE("missing field") {
    std::istringstream in("u1\ta\tb\t1\t1\nu2\ta\tb\t1\n");
    try {
      read_dataset(in, "d.tsv");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
  SUBCASE("bad flag") {
    std::istringstream in("u1\ta\tb\t2\t1\n");
    CHECK_THROWS_AS(read_dataset(in), ParseError);
  }
  SUBCASE("duplicate id") {
    std::istringstream in("u1\ta\tb\t1\t1\nu1\tc\td\t0\t0\n");
    CHECK_THROWS_AS(read_dataset(in), ValidationError);
  }
}

TEST_CASE("parse and serialize round-trip") {
  const auto syn = synthesize_corpus({.num_prompts = 5, .responses_per_prompt = 8, .seed = 3});
  testutil::TempDir dir("corpus");
  write_dataset(dir.file("d.tsv"), syn.dataset);
  const auto back = parse_dataset(dir.file("d.tsv"));
  CHECK(back == syn.dataset);

  syn.grammar.write(dir.file("g.tsv"));
  const auto g = ReferenceGrammar::parse(dir.file("g.tsv"));
  CHECK(g.all() == syn.grammar.all());
}

TEST_CASE("missing dataset file is an error") {
  CHECK_THROWS_AS(parse_dataset("/nonexistent/path/d.tsv"), Error);
}

TEST_CASE("tokenize") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("The cat sat.") == Tokens{"the", "cat", "sat"});
  CHECK(tokenize("it's OK!") == Tokens{"it's", "ok"});
  CHECK(tokenize("  (hello),   \"world\"  ") == Tokens{"hello", "world"});
  CHECK(tokenize("... !! ?") .empty());
  CHECK(tokenize("a\tb\nc") == Tokens{"a", "b", "c"});
  CHECK(prompt_key("Wie  alt bist du?") == "wie alt bist du");
}

TEST_CASE("vocabulary construction") {
  const std::vector<Tokens> corpus{{"a", "b", "a"}};
  const auto v1 = Vocabulary::build(corpus, 1);
  CHECK(v1.regular_words() == std::vector<std::string>{"a", "b"});
  CHECK(v1.size() == 3);
  CHECK(v1.word(v1.unknown_index()) == "<unk>");

  const auto v2 = Vocabulary::build(corpus, 2);
  CHECK(v2.regular_words() == std::vector<std::string>{"a"});
  CHECK(v2.index("b") == v2.unknown_index());

  const auto empty = Vocabulary::build({}, 1);
  CHECK(empty.size() == 1);
  CHECK(empty.regular_words().empty());

  CHECK_THROWS_AS(Vocabulary::build(corpus, 0), ValidationError);
}

TEST_CASE("vocabulary ties break lexicographically and indices are contiguous") {
  const auto v = Vocabulary::build({{"c", "b", "a", "c"}, {"b"}}, 1, true);
  CHECK(v.regular_words() == std::vector<std::string>{"b", "c", "a"});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.index(v.word(i)) == i);
  CHECK(v.contains("_start_"));
  CHECK(v.contains("_end_"));
  CHECK(v.unknown_index() == v.size() - 1);
}

TEST_CASE("split partitions") {
  Dataset ten;
  for (int i = 0; i < 10; ++i) ten.push_back({"e" + std::to_string(i), "p", "r", true, true});
  const auto s = split(ten, 0.8, 7);
  CHECK(s.train.size() == 8);
  CHECK(s.validation.size() == 2);

  const auto again = split(ten, 0.8, 7);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);

  CHECK_THROWS_AS(split(ten, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(split(ten, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(split({}, 0.5, 1), ValidationError);
}

TEST_CASE("split is a disjoint exhaustive partition for every seed") {
  Dataset hundred;
  for (int i = 0; i < 100; ++i) hundred.push_back({"e" + std::to_string(i), "p", "r", true, true});
  std::vector<std::set<std::string>> trains;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const auto s = split(hundred, 0.7, seed);
    std::set<std::string> tr, va;
    for (const auto& e : s.train) tr.insert(e.id);
    for (const auto& e : s.validation) va.insert(e.id);
    CHECK(tr.size() == 70);
    CHECK(va.size() == 30);
    std::vector<std::string> both;
    std::set_intersection(tr.begin(), tr.end(), va.begin(), va.end(), std::back_inserter(both));
    CHECK(both.empty());
    tr.insert(va.begin(), va.end());
    CHECK(tr.size() == 100);
    trains.push_back(std::move(tr));
  }
  const auto s1 = split(hundred, 0.7, 1);
  const auto s2 = split(hundred, 0.7, 2);
  CHECK_FALSE(s1.train == s2.train);
}

TEST_CASE("synthesis with zero error rates matches the grammar") {
  const auto syn = synthesize_corpus(
      {.num_prompts = 10, .responses_per_prompt = 10, .language_error_rate = 0, .meaning_error_rate = 0});
  REQUIRE(syn.dataset.size() == 100);
  for (const auto& ex : syn.dataset) {
    CHECK(ex.language_correct);
    CHECK(ex.meaning_correct);
    const auto& entries = syn.grammar.entries(prompt_key(ex.prompt));
    CHECK(std::find(entries.begin(), entries.end(), tokenize(ex.response)) != entries.end());
  }
}

TEST_CASE("synthesis with language rate 1 gives false/true everywhere") {
  const auto syn = synthesize_corpus(
      {.num_prompts = 8, .responses_per_prompt = 10, .language_error_rate = 1, .meaning_error_rate = 0});
  for (const auto& ex : syn.dataset) {
    CHECK_FALSE(ex.language_correct);
    CHECK(ex.meaning_correct);
    const auto& entries = syn.grammar.entries(prompt_key(ex.prompt));
    CHECK(std::find(entries.begin(), entries.end(), tokenize(ex.response)) == entries.end());
  }
}

TEST_CASE("synthesis label proportions follow the configured rates") {
  const auto syn = synthesize_corpus({.num_prompts = 20,
                                      .responses_per_prompt = 50,
                                      .language_error_rate = 0.3,
                                      .meaning_error_rate = 0.2,
                                      .seed = 11});
  REQUIRE(syn.dataset.size() == 1000);
  double lang_wrong = 0, meaning_wrong = 0;
  for (const auto& ex : syn.dataset) {
    lang_wrong += ex.language_correct ? 0 : 1;
    meaning_wrong += ex.meaning_correct ? 0 : 1;
    CHECK(ex.gold_accept() == (ex.language_correct && ex.meaning_correct));
    CHECK(ex.label().accept() == ex.gold_accept());
  }
  CHECK(std::abs(lang_wrong / 1000 - 0.3) <= 0.05);
  CHECK(std::abs(meaning_wrong / 1000 - 0.2) <= 0.05);
}

TEST_CASE("synthesis is deterministic and ids are unique") {
  SynthesisConfig cfg{.num_prompts = 6, .responses_per_prompt = 12, .seed = 5};
  const auto a = synthesize_corpus(cfg);
  const auto b = synthesize_corpus(cfg);
  CHECK(a.dataset == b.dataset);
  CHECK(a.grammar.all() == b.grammar.all());
  CHECK_NOTHROW(check_unique_ids(a.dataset));
  cfg.seed = 6;
  CHECK_FALSE(synthesize_corpus(cfg).dataset == a.dataset);
}

TEST_CASE("synthesis config validation") {
  CHECK_THROWS_AS(synthesize_corpus({.language_error_rate = 1.5}), ValidationError);
  CHECK_THROWS_AS(synthesize_corpus({.meaning_error_rate = -0.1}), ValidationError);
  CHECK_THROWS_AS(synthesize_corpus({.num_prompts = 0}), ValidationError);
}

TEST_CASE("grammar lookup of an unknown prompt is an error") {
  ReferenceGrammar g;
  g.add("wie alt bist du", {"i", "am", "twelve"});
  CHECK(g.contains("wie alt bist du"));
  CHECK_THROWS_AS(g.entries("wo wohnst du"), ValidationError);
}

TEST_CASE("writing rejects fields containing tabs") {
  std::ostringstream out;
  CHECK_THROWS_AS(write_dataset(out, Dataset{{"u1", "a\tb", "c", true, true}}), ValidationError);
}
