#pragma once

// Brute-force interpolated Witten-Bell reference. Works on raw strings and
// rescans the training corpus on every query; shares no code with the
// count-table implementation it checks.

#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace oracle {

class WittenBell {
 public:
  WittenBell(std::vector<std::vector<std::string>> corpus, int order, bool boundary)
      : order_(order), boundary_(boundary) {
    for (auto& seq : corpus) {
      std::vector<std::string> s;
      if (boundary) s.push_back("_start_");
      for (auto& w : seq) s.push_back(w);
      if (boundary) s.push_back("_end_");
      for (std::size_t i = first(); i < s.size(); ++i) support_.insert(s[i]);
      seqs_.push_back(std::move(s));
    }
    support_.insert("<unk>");
  }

  std::size_t support_size() const { return support_.size(); }
  const std::set<std::string>& support() const { return support_; }

  bool known(const std::string& w) const { return support_.count(w) > 0 && w != "<unk>" && w != "_end_"; }

  double prob(const std::vector<std::string>& history, const std::string& w) const {
    std::vector<std::string> h = history;
    while (h.size() > static_cast<std::size_t>(order_ - 1)) h.erase(h.begin());
    return rec(h, w);
  }

  double score(const std::vector<std::string>& tokens) const {
    std::vector<std::string> s;
    if (boundary_) s.push_back("_start_");
    for (const auto& w : tokens) s.push_back(known(w) ? w : "<unk>");
    if (boundary_) s.push_back("_end_");
    double total = 0.0;
    for (std::size_t i = first(); i < s.size(); ++i) {
      const std::size_t lo = i >= static_cast<std::size_t>(order_ - 1) ? i - (order_ - 1) : 0;
      std::vector<std::string> h(s.begin() + lo, s.begin() + i);
      total += std::log10(rec(h, s[i]));
    }
    return total;
  }

 private:
  std::size_t first() const { return boundary_ ? 1 : 0; }

  double rec(const std::vector<std::string>& h, const std::string& w) const {
    const double uniform = 1.0 / static_cast<double>(support_.size());
    double lower = uniform;
    if (!h.empty()) lower = rec(std::vector<std::string>(h.begin() + 1, h.end()), w);
    double context_count = 0.0;
    double word_count = 0.0;
    std::set<std::string> followers;
    for (const auto& s : seqs_) {
      for (std::size_t i = first(); i < s.size(); ++i) {
        if (i < h.size()) continue;
        bool match = true;
        for (std::size_t k = 0; k < h.size(); ++k) {
          if (s[i - h.size() + k] != h[k]) {
            match = false;
            break;
          }
        }
        if (!match) continue;
        context_count += 1.0;
        followers.insert(s[i]);
        if (s[i] == w) word_count += 1.0;
      }
    }
    if (context_count == 0.0) return lower;
    const double types = static_cast<double>(followers.size());
    return (word_count + types * lower) / (context_count + types);
  }

  int order_;
  bool boundary_;
  std::vector<std::vector<std::string>> seqs_;
  std::set<std::string> support_;
};

}  // namespace oracle
