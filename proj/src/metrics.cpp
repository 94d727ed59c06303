#include "l2grade/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace l2grade::metrics {

using nlohmann::json;

void ConfusionTally::add(const corpus::LabeledExchange& gold, Decision decision) {
  const bool accept = decision == Decision::accept;
  if (gold.gold_accept()) {
    ++(accept ? ca : fr);
  } else if (!accept) {
    ++cr;
  } else if (gold.meaning_correct) {
    ++pfa;
  } else {
    ++gfa;
  }
}

ConfusionTally tally(const corpus::Dataset& gold, const std::vector<Decision>& decisions) {
  if (gold.size() != decisions.size()) {
    throw ValidationError("tally: " + std::to_string(gold.size()) + " gold items but " +
                          std::to_string(decisions.size()) + " decisions");
  }
  ConfusionTally t;
  for (std::size_t i = 0; i < gold.size(); ++i) t.add(gold[i], decisions[i]);
  return t;
}

double d_full(const ConfusionTally& t, double k) {
  const double incorrect_den = static_cast<double>(t.cr) + static_cast<double>(t.pfa) + k * static_cast<double>(t.gfa);
  const double correct_den = static_cast<double>(t.fr + t.ca);
  if (incorrect_den == 0.0) throw UndefinedResult("D_full undefined: no gold-reject items");
  if (correct_den == 0.0) throw UndefinedResult("D_full undefined: no gold-accept items");
  const double rr_incorrect = static_cast<double>(t.cr) / incorrect_den;
  const double rr_correct = static_cast<double>(t.fr) / correct_den;
  if (rr_correct == 0.0) {
    if (rr_incorrect > 0.0) return std::numeric_limits<double>::infinity();
    throw UndefinedResult("D_full undefined: both rejection rates are zero");
  }
  return rr_incorrect / rr_correct;
}

double accuracy(const ConfusionTally& t) {
  if (t.total() == 0) throw UndefinedResult("accuracy of an empty tally");
  return static_cast<double>(t.ca + t.cr) / static_cast<double>(t.total());
}

double f1(const ConfusionTally& t) {
  if (t.total() == 0) throw UndefinedResult("F1 of an empty tally");
  const long accepted = t.ca + t.pfa + t.gfa;
  const long gold_accepts = t.ca + t.fr;
  if (accepted == 0 || gold_accepts == 0) return 0.0;
  const double precision = static_cast<double>(t.ca) / static_cast<double>(accepted);
  const double recall = static_cast<double>(t.ca) / static_cast<double>(gold_accepts);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricsReport MetricsReport::from_tally(const ConfusionTally& t, double k) {
  MetricsReport r;
  r.tally = t;
  try {
    r.d_full = metrics::d_full(t, k);
  } catch (const UndefinedResult&) {
    r.d_full.reset();
  }
  r.accuracy = metrics::accuracy(t);
  r.f1 = metrics::f1(t);
  return r;
}

json MetricsReport::to_json() const {
  json d = nullptr;
  if (d_full) d = std::isinf(*d_full) ? json("inf") : json(*d_full);
  return {{"d_full", d},
          {"accuracy", accuracy},
          {"f1", f1},
          {"tally", {{"ca", tally.ca}, {"fr", tally.fr}, {"cr", tally.cr}, {"pfa", tally.pfa}, {"gfa", tally.gfa}}}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  const auto& d = j.at("d_full");
  if (d.is_string() && d.get<std::string>() == "inf") {
    r.d_full = std::numeric_limits<double>::infinity();
  } else if (d.is_number()) {
    r.d_full = d.get<double>();
  }
  r.accuracy = j.at("accuracy").get<double>();
  r.f1 = j.at("f1").get<double>();
  const auto& t = j.at("tally");
  r.tally = {t.at("ca").get<long>(), t.at("fr").get<long>(), t.at("cr").get<long>(), t.at("pfa").get<long>(),
             t.at("gfa").get<long>()};
  return r;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t name_w = 5;
  for (const auto& [name, r] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %9s %6s %6s %6s %6s %6s %6s\n", static_cast<int>(name_w), "model",
                "D_full", "accuracy", "F1", "CA", "FR", "CR", "PFA", "GFA");
  out << buf;
  for (const auto& [name, r] : rows) {
    std::string d = "undef";
    if (r.d_full) {
      if (std::isinf(*r.d_full)) {
        d = "inf";
      } else {
        char dbuf[32];
        std::snprintf(dbuf, sizeof dbuf, "%.3f", *r.d_full);
        d = dbuf;
      }
    }
    std::snprintf(buf, sizeof buf, "%-*s %8s %8.1f%% %6.3f %6ld %6ld %6ld %6ld %6ld\n", static_cast<int>(name_w),
                  name.c_str(), d.c_str(), 100.0 * r.accuracy, r.f1, r.tally.ca, r.tally.fr, r.tally.cr, r.tally.pfa,
                  r.tally.gfa);
    out << buf;
  }
  return out.str();
}

Target parse_target(const std::string& name) {
  if (name == "d_full") return Target::d_full;
  if (name == "accuracy") return Target::accuracy;
  if (name == "f1") return Target::f1;
  throw ValidationError("unknown selection target: " + name);
}

std::string to_string(Target t) {
  switch (t) {
    case Target::d_full:
      return "d_full";
    case Target::accuracy:
      return "accuracy";
    case Target::f1:
      return "f1";
  }
  return "?";
}

double selection_key(const MetricsReport& r, Target target) {
  switch (target) {
    case Target::d_full:
      return r.d_full ? *r.d_full : -std::numeric_limits<double>::infinity();
    case Target::accuracy:
      return r.accuracy;
    case Target::f1:
      return r.f1;
  }
  return 0.0;
}

}  // namespace l2grade::metrics
