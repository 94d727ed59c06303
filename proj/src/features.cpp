#include "l2grade/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

namespace l2grade::features {

ContentWordPredicate::ContentWordPredicate() : ContentWordPredicate(corpus::default_stopwords()) {}

ContentWordPredicate::ContentWordPredicate(const std::vector<std::string>& stopwords)
    : stop_(stopwords.begin(), stopwords.end()) {}

std::vector<std::string> ContentWordPredicate::stopwords() const {
  std::vector<std::string> words(stop_.begin(), stop_.end());
  std::sort(words.begin(), words.end());
  return words;
}

Vector standard_features(const Tokens& response, const corpus::Vocabulary& vocab,
                         const ContentWordPredicate& is_content) {
  double content = 0.0;
  double oov = 0.0;
  for (const auto& w : response) {
    if (is_content(w)) content += 1.0;
    if (!vocab.contains(w)) oov += 1.0;
  }
  const double n = static_cast<double>(response.size());
  return {n, content, oov, oov / std::max(1.0, n)};
}

std::size_t edit_distance(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

Vector grammar_features(const Tokens& response, const std::vector<Tokens>& entries) {
  if (entries.empty()) throw ValidationError("grammar_features needs at least one reference entry");
  const Tokens* best = nullptr;
  std::size_t best_d = 0;
  for (const auto& entry : entries) {
    const std::size_t d = edit_distance(response, entry);
    const bool better = best == nullptr || d < best_d ||
                        (d == best_d && (entry.size() < best->size() || (entry.size() == best->size() && entry < *best)));
    if (better) {
      best = &entry;
      best_d = d;
    }
  }
  // The normalized minimum is taken over all entries, independently of the
  // tie-broken best entry.
  double best_norm = std::numeric_limits<double>::infinity();
  for (const auto& entry : entries) {
    const double norm = std::max<double>({static_cast<double>(response.size()), static_cast<double>(entry.size()), 1.0});
    best_norm = std::min(best_norm, static_cast<double>(edit_distance(response, entry)) / norm);
  }
  const double len_best = static_cast<double>(best->size());
  return {static_cast<double>(best_d), best_norm, best_d == 0 ? 1.0 : 0.0, len_best,
          static_cast<double>(response.size()) - len_best};
}

Vector lm_feature_block(const Tokens& response, const std::vector<const lm::NGramModel*>& models) {
  if (models.empty()) throw ValidationError("lm_feature_block needs at least one model");
  Vector out;
  out.reserve(5 * models.size());
  const double n = std::max<double>(1.0, static_cast<double>(response.size()));
  for (const auto* model : models) {
    const auto s = model->score(response);
    out.push_back(s.log10_prob);
    out.push_back(s.token_count == 0 ? 0.0 : s.log10_prob / static_cast<double>(s.token_count));
    out.push_back(static_cast<double>(s.oov_count));
    out.push_back(static_cast<double>(s.oov_count) / n);
    out.push_back(static_cast<double>(s.backoff_count));
  }
  return out;
}

Vector bow_vector(const Tokens& tokens, const corpus::Vocabulary& vocab) {
  Vector v(vocab.size(), 0.0);
  for (const auto& w : tokens) v[vocab.index(w)] += 1.0;
  return v;
}

IdfTable IdfTable::fit(const std::vector<Tokens>& documents, const corpus::Vocabulary& vocab) {
  if (documents.empty()) throw ValidationError("tfidf_fit needs a non-empty corpus");
  std::vector<double> df(vocab.size(), 0.0);
  std::vector<char> seen(vocab.size());
  for (const auto& doc : documents) {
    std::fill(seen.begin(), seen.end(), 0);
    for (const auto& w : doc) {
      const auto i = vocab.index(w);
      if (!seen[i]) {
        seen[i] = 1;
        df[i] += 1.0;
      }
    }
  }
  const double n = static_cast<double>(documents.size());
  std::vector<double> idf(vocab.size());
  for (std::size_t i = 0; i < idf.size(); ++i) idf[i] = std::log((1.0 + n) / (1.0 + df[i])) + 1.0;
  return IdfTable(std::move(idf), documents.size());
}

Vector tfidf_vector(const Tokens& tokens, const corpus::Vocabulary& vocab, const IdfTable& idf) {
  if (idf.size() != vocab.size()) throw ValidationError("idf table does not match the vocabulary");
  Vector v = bow_vector(tokens, vocab);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= idf[i];
  return v;
}

Vector concat_prompt_response(const Vector& prompt, const Vector& response) {
  Vector out;
  out.reserve(prompt.size() + response.size());
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.insert(out.end(), response.begin(), response.end());
  return out;
}

void write_feature_dump(std::ostream& out, const std::vector<std::string>& ids, const std::vector<Vector>& rows) {
  if (ids.size() != rows.size()) throw ValidationError("feature dump: id/row count mismatch");
  char buf[40];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << '\t';
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      if (k > 0) out << ' ';
      const auto res = std::to_chars(buf, buf + sizeof buf, rows[i][k]);
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

}  // namespace l2grade::features
