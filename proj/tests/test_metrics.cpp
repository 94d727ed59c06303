#include <cmath>
#include <limits>

#include "doctest.h"
#include "l2grade/metrics.hpp"
#include "oracles/metric_oracle.hpp"

using namespace l2grade;
using namespace l2grade::metrics;

namespace {

ConfusionTally make(long ca, long fr, long cr, long pfa, long gfa) { return {ca, fr, cr, pfa, gfa}; }

std::optional<double> d_or_undefined(const ConfusionTally& t) {
  try {
    return d_full(t);
  } catch (const UndefinedResult&) {
    return std::nullopt;
  }
}

}  // namespace

TEST_CASE("tally buckets") {
  const corpus::Dataset gold{{"1", "p", "r", true, true},  {"2", "p", "r", true, true},
                             {"3", "p", "r", false, true}, {"4", "p", "r", false, true},
                             {"5", "p", "r", true, false}, {"6", "p", "r", false, false}};
  const std::vector<Decision> d{Decision::accept, Decision::reject, Decision::accept,
                                Decision::reject, Decision::accept, Decision::accept};
  const auto t = tally(gold, d);
  CHECK(t == make(1, 1, 1, 1, 2));
  CHECK(t.total() == 6);
  CHECK_THROWS_AS(tally(gold, {Decision::accept}), ValidationError);
}

TEST_CASE("single-item buckets") {
  ConfusionTally t;
  t.add({"a", "p", "r", true, true}, Decision::accept);
  CHECK(t == make(1, 0, 0, 0, 0));
  t.add({"b", "p", "r", false, true}, Decision::accept);
  CHECK(t.pfa == 1);
}

TEST_CASE("d_full examples") {
  CHECK(d_full(make(90, 10, 80, 10, 10)) == doctest::Approx(80.0 / 120 / 0.1).epsilon(1e-12));
  CHECK(std::abs(d_full(make(90, 10, 80, 10, 10)) - 6.666666666666667) < 1e-9);
  CHECK(d_full(make(0, 50, 30, 0, 0)) == 1.0);
  CHECK(std::isinf(d_full(make(10, 0, 5, 1, 0))));
  CHECK_THROWS_AS(d_full(make(10, 0, 0, 2, 3)), UndefinedResult);
  CHECK_THROWS_AS(d_full(make(10, 5, 0, 0, 0)), UndefinedResult);
  CHECK_THROWS_AS(d_full(make(0, 0, 3, 1, 0)), UndefinedResult);
}

TEST_CASE("accuracy and f1 examples") {
  CHECK(accuracy(make(20, 20, 20, 20, 20)) == doctest::Approx(0.4));
  CHECK(accuracy(make(5, 0, 7, 0, 0)) == 1.0);
  CHECK(accuracy(make(0, 3, 0, 2, 1)) == 0.0);
  CHECK_THROWS_AS(accuracy(ConfusionTally{}), UndefinedResult);
  CHECK(f1(make(5, 0, 7, 0, 0)) == 1.0);
  CHECK(f1(make(8, 2, 0, 1, 1)) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(f1(make(0, 3, 2, 1, 1)) == 0.0);
  CHECK_THROWS_AS(f1(ConfusionTally{}), UndefinedResult);
}

TEST_CASE("oracle equivalence on all small tallies") {
  int compared = 0;
  for (long ca = 0; ca <= 2; ++ca)
    for (long fr = 0; fr <= 2; ++fr)
      for (long cr = 0; cr <= 2; ++cr)
        for (long pfa = 0; pfa <= 2; ++pfa)
          for (long gfa = 0; gfa <= 2; ++gfa) {
            const auto items = oracle::simulate(ca, fr, cr, pfa, gfa);
            const auto want = oracle::evaluate(items, 3.0);
            const auto t = make(ca, fr, cr, pfa, gfa);
            const auto got = d_or_undefined(t);
            CAPTURE(ca);
            CAPTURE(fr);
            CAPTURE(cr);
            CAPTURE(pfa);
            CAPTURE(gfa);
            CHECK(got.has_value() == want.d_full.has_value());
            if (got && want.d_full) CHECK(*got == *want.d_full);
            if (want.accuracy) {
              CHECK(accuracy(t) == *want.accuracy);
              CHECK(f1(t) == want.f1);
            } else {
              CHECK_THROWS_AS(accuracy(t), UndefinedResult);
            }
            ++compared;
          }
  CHECK(compared == 243);
}

TEST_CASE("more gross false accepts lower D_full") {
  for (long ca = 1; ca <= 4; ++ca)
    for (long fr = 1; fr <= 3; ++fr)
      for (long cr = 1; cr <= 4; ++cr)
        for (long pfa = 0; pfa <= 2; ++pfa)
          for (long gfa = 0; gfa <= 3; ++gfa) CHECK(d_full(make(ca, fr, cr, pfa, gfa + 1)) < d_full(make(ca, fr, cr, pfa, gfa)));
}

TEST_CASE("swapping PFA and GFA") {
  const auto a = make(10, 3, 8, 4, 1), b = make(10, 3, 8, 1, 4);
  CHECK(accuracy(a) == accuracy(b));
  CHECK(f1(a) == f1(b));
  CHECK(d_full(a) != d_full(b));
  CHECK(d_full(a) > d_full(b));
}

TEST_CASE("all-reject baseline scores exactly one") {
  for (long na = 1; na <= 20; ++na)
    for (long nr = 1; nr <= 20; ++nr) CHECK(d_full(make(0, na, nr, 0, 0)) == 1.0);
}

TEST_CASE("report json round-trip") {
  for (const auto& t : {make(90, 10, 80, 10, 10), make(10, 0, 5, 1, 0), make(0, 0, 3, 1, 0)}) {
    const auto r = MetricsReport::from_tally(t);
    const auto back = MetricsReport::from_json(r.to_json());
    CHECK(back.tally == t);
    CHECK(back.accuracy == r.accuracy);
    CHECK(back.f1 == r.f1);
    CHECK(back.d_full.has_value() == r.d_full.has_value());
    if (r.d_full) CHECK(*back.d_full == *r.d_full);
  }
  CHECK(MetricsReport::from_tally(make(10, 0, 5, 1, 0)).to_json()["d_full"] == "inf");
  CHECK(MetricsReport::from_tally(make(0, 0, 3, 1, 0)).to_json()["d_full"].is_null());
}

TEST_CASE("table formatting") {
  const auto text = format_table({{"bow", MetricsReport::from_tally(make(90, 10, 80, 10, 10))},
                                  {"mixture", MetricsReport::from_tally(make(10, 0, 5, 1, 0))}});
  CHECK(text.find("6.667") != std::string::npos);
  CHECK(text.find("inf") != std::string::npos);
  CHECK(text.find("mixture") != std::string::npos);
}

TEST_CASE("selection keys") {
  const auto inf = MetricsReport::from_tally(make(10, 0, 5, 1, 0));
  const auto finite = MetricsReport::from_tally(make(90, 10, 80, 10, 10));
  const auto undef = MetricsReport::from_tally(make(0, 0, 3, 1, 0));
  CHECK(selection_key(inf, Target::d_full) > selection_key(finite, Target::d_full));
  CHECK(selection_key(finite, Target::d_full) > selection_key(undef, Target::d_full));
  CHECK(selection_key(finite, Target::accuracy) == finite.accuracy);
  CHECK(parse_target("f1") == Target::f1);
  CHECK(to_string(Target::d_full) == "d_full");
  CHECK_THROWS_AS(parse_target("auc"), ValidationError);
}
