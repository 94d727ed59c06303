#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/corpus.hpp"

namespace l2grade::metrics {

enum class Decision { reject, accept };

/// Five-way outcome counts for accept/reject decisions against gold labels.
struct ConfusionTally {
  long ca = 0;   // correct accept
  long fr = 0;   // false reject
  long cr = 0;   // correct reject
  long pfa = 0;  // plain false accept: gold meaning correct, language wrong
  long gfa = 0;  // gross false accept: gold meaning wrong

  long total() const { return ca + fr + cr + pfa + gfa; }
  void add(const corpus::LabeledExchange& gold, Decision decision);

  friend bool operator==(const ConfusionTally&, const ConfusionTally&) = default;
};

ConfusionTally tally(const corpus::Dataset& gold, const std::vector<Decision>& decisions);

inline constexpr double kDefaultGfaWeight = 3.0;

/// Rejection rate on gold-reject items with gross false accepts weighted by
/// `k`, divided by the rejection rate on gold-accept items:
///
///   D = [CR / (CR + PFA + k GFA)] / [FR / (FR + CA)]
///
/// Returns +inf when the denominator rate is 0 and the numerator rate is
/// positive; throws UndefinedResult when either rate is 0/0 or both rates
/// are 0.
double d_full(const ConfusionTally& t, double k = kDefaultGfaWeight);

/// (CA + CR) / total; throws UndefinedResult on an empty tally.
double accuracy(const ConfusionTally& t);

/// F-measure with accept as the positive class; 0/0 terms give F1 = 0.
double f1(const ConfusionTally& t);

struct MetricsReport {
  std::optional<double> d_full;  // nullopt when undefined; may be +inf
  double accuracy = 0.0;
  double f1 = 0.0;
  ConfusionTally tally;

  static MetricsReport from_tally(const ConfusionTally& t, double k = kDefaultGfaWeight);

  /// d_full is written as a number, the string "inf", or null.
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Aligned plain-text table, one row per named report.
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

enum class Target { d_full, accuracy, f1 };
Target parse_target(const std::string& name);
std::string to_string(Target t);

/// Sort key for model selection: larger is better; +inf D_full ranks first,
/// undefined D_full ranks last.
double selection_key(const MetricsReport& r, Target target);

}  // namespace l2grade::metrics
