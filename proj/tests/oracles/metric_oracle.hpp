#pragma once

// Recomputes D_full / accuracy / F1 from an explicit list of simulated
// (gold, decision) items instead of from the five counters.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

struct Item {
  bool language_correct;
  bool meaning_correct;
  bool accepted;
};

inline std::vector<Item> simulate(long ca, long fr, long cr, long pfa, long gfa) {
  std::vector<Item> items;
  for (long i = 0; i < ca; ++i) items.push_back({true, true, true});
  for (long i = 0; i < fr; ++i) items.push_back({true, true, false});
  // Gold rejects cycle through the three wrong label combinations.
  for (long i = 0; i < cr; ++i) items.push_back({i % 3 != 0, i % 3 == 0, false});
  for (long i = 0; i < pfa; ++i) items.push_back({false, true, true});
  for (long i = 0; i < gfa; ++i) items.push_back({i % 2 == 0, false, true});
  return items;
}

struct Result {
  std::optional<double> d_full;  // nullopt = undefined
  std::optional<double> accuracy;
  double f1 = 0.0;
};

inline Result evaluate(const std::vector<Item>& items, double weight) {
  Result r;
  double accept_items = 0, accept_rejected = 0;
  double reject_weight = 0, reject_rejected = 0;
  double correct = 0, true_pos = 0, predicted_pos = 0;
  for (const auto& it : items) {
    const bool gold_accept = it.language_correct && it.meaning_correct;
    if (gold_accept) {
      accept_items += 1;
      if (!it.accepted) accept_rejected += 1;
    } else {
      const double w = (it.accepted && !it.meaning_correct) ? weight : 1.0;
      reject_weight += w;
      if (!it.accepted) reject_rejected += 1;
    }
    if (gold_accept == it.accepted) correct += 1;
    if (it.accepted) {
      predicted_pos += 1;
      if (gold_accept) true_pos += 1;
    }
  }
  if (!items.empty()) r.accuracy = correct / static_cast<double>(items.size());
  if (accept_items > 0 && reject_weight > 0) {
    const double ir = reject_rejected / reject_weight;
    const double cr = accept_rejected / accept_items;
    if (cr > 0) {
      r.d_full = ir / cr;
    } else if (ir > 0) {
      r.d_full = std::numeric_limits<double>::infinity();
    }
  }
  if (predicted_pos > 0 && accept_items > 0) {
    const double p = true_pos / predicted_pos;
    const double rec = true_pos / accept_items;
    r.f1 = (p + rec) > 0 ? 2 * p * rec / (p + rec) : 0.0;
  }
  return r;
}

}  // namespace oracle
