#include "gvqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace gvqg::metrics {

namespace {

using Counts = std::unordered_map<std::string, double>;

std::string key(const Sentence& s, std::size_t start, int n) {
  std::string k;
  for (int i = 0; i < n; ++i) {
    if (i > 0) k += '\x1f';
    k += s[start + static_cast<std::size_t>(i)];
  }
  return k;
}

Counts ngrams(const Sentence& s, int n) {
  Counts c;
  if (s.size() < static_cast<std::size_t>(n)) return c;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) c[key(s, i, n)] += 1.0;
  return c;
}

void require_nonempty(const Corpus& corpus, const char* what) {
  if (corpus.empty()) throw EmptyCorpusError(std::string(what) + ": empty corpus");
}

}  // namespace

NgramTally ngram_tally(const Corpus& corpus, int n) {
  NgramTally t;
  for (const auto& it : corpus) {
    const Counts c = ngrams(it.candidate, n);
    const Counts r = ngrams(it.reference, n);
    for (const auto& [g, cnt] : c) {
      t.total += cnt;
      if (auto f = r.find(g); f != r.end()) t.matched += std::min(cnt, f->second);
    }
  }
  return t;
}

double bleu(const Corpus& corpus, int max_n) {
  require_nonempty(corpus, "bleu");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: order must be in 1..4");
  double cand_len = 0.0;
  double ref_len = 0.0;
  double log_sum = 0.0;
  for (const auto& it : corpus) {
    cand_len += static_cast<double>(it.candidate.size());
    ref_len += static_cast<double>(it.reference.size());
  }
  for (int n = 1; n <= max_n; ++n) {
    const auto [matched, total] = ngram_tally(corpus, n);
    if (matched == 0.0 || total == 0.0) return 0.0;
    log_sum += std::log(matched / total) / max_n;
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Corpus& corpus) {
  require_nonempty(corpus, "rouge_l");
  constexpr double kBeta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (const auto& it : corpus) {
    const double l = static_cast<double>(lcs_length(it.candidate, it.reference));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(it.candidate.size());
    const double r = l / static_cast<double>(it.reference.size());
    sum += (1.0 + kBeta2) * p * r / (r + kBeta2 * p);
  }
  return sum / static_cast<double>(corpus.size());
}

double cider(const Corpus& corpus) {
  if (corpus.size() < 2) throw std::invalid_argument("cider: needs at least 2 items for document frequencies");
  const double log_n = std::log(static_cast<double>(corpus.size()));
  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    Counts df;
    std::vector<Counts> refs;
    std::vector<Counts> cands;
    for (const auto& it : corpus) {
      refs.push_back(ngrams(it.reference, n));
      cands.push_back(ngrams(it.candidate, n));
      for (const auto& [g, cnt] : refs.back()) df[g] += 1.0;
    }
    auto weight = [&](const std::string& g) {
      auto f = df.find(g);
      return log_n - std::log(std::max(1.0, f == df.end() ? 0.0 : f->second));
    };
    double order_sum = 0.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      double dot = 0.0;
      double nc = 0.0;
      double nr = 0.0;
      for (const auto& [g, cnt] : cands[i]) {
        const double v = cnt * weight(g);
        nc += v * v;
        if (auto f = refs[i].find(g); f != refs[i].end()) dot += v * f->second * weight(g);
      }
      for (const auto& [g, cnt] : refs[i]) {
        const double v = cnt * weight(g);
        nr += v * v;
      }
      if (nc > 0.0 && nr > 0.0) order_sum += dot / (std::sqrt(nc) * std::sqrt(nr));
    }
    total += order_sum / static_cast<double>(corpus.size());
  }
  return total / 4.0;
}

double meteor_lite(const Corpus& corpus) {
  require_nonempty(corpus, "meteor_lite");
  double sum = 0.0;
  for (const auto& it : corpus) {
    const auto& c = it.candidate;
    const auto& r = it.reference;
    std::vector<char> used(r.size(), 0);
    std::vector<long> align(c.size(), -1);
    int m = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (!used[j] && r[j] == c[i]) {
          used[j] = 1;
          align[i] = static_cast<long>(j);
          ++m;
          break;
        }
      }
    }
    if (m == 0) continue;
    int chunks = 0;
    long prev = -2;
    bool prev_aligned = false;
    for (long a : align) {
      if (a < 0) {
        prev_aligned = false;
        continue;
      }
      if (!prev_aligned || a != prev + 1) ++chunks;
      prev = a;
      prev_aligned = true;
    }
    const double p = static_cast<double>(m) / static_cast<double>(c.size());
    const double rc = static_cast<double>(m) / static_cast<double>(r.size());
    const double fmean = 10.0 * p * rc / (rc + 9.0 * p);
    // A single contiguous chunk is not fragmented.
    const double frag = chunks > 1 ? static_cast<double>(chunks) / static_cast<double>(m) : 0.0;
    sum += fmean * (1.0 - 0.5 * frag * frag * frag);
  }
  return sum / static_cast<double>(corpus.size());
}

double msj(std::span<const Sentence> generated, std::span<const Sentence> reference, int max_n) {
  if (generated.empty() || reference.empty()) throw EmptyCorpusError("msj: empty corpus");
  if (max_n < 1) throw std::invalid_argument("msj: order must be >= 1");
  auto distribution = [](std::span<const Sentence> corpus, int n) {
    Counts c;
    double total = 0.0;
    for (const auto& s : corpus)
      for (const auto& [g, cnt] : ngrams(s, n)) {
        c[g] += cnt;
        total += cnt;
      }
    for (auto& [g, v] : c) v /= total;
    return c;
  };
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const Counts p = distribution(generated, n);
    const Counts q = distribution(reference, n);
    if (p.empty() && q.empty()) continue;
    if (p.empty() || q.empty()) return 0.0;
    double lo = 0.0;
    double hi = 0.0;
    for (const auto& [g, v] : p) {
      auto f = q.find(g);
      const double w = f == q.end() ? 0.0 : f->second;
      lo += std::min(v, w);
      hi += std::max(v, w);
    }
    for (const auto& [g, w] : q)
      if (!p.count(g)) hi += w;
    if (lo == 0.0) return 0.0;
    log_sum += std::log(lo / hi);
  }
  return std::exp(log_sum / max_n);
}

double overlap_accuracy(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& gold,
                        int k) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("overlap_accuracy: size mismatch");
  if (predicted.empty()) throw EmptyCorpusError("overlap_accuracy: no items");
  if (k < 1) throw std::invalid_argument("overlap_accuracy: k must be >= 1");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    std::vector<int> p = predicted[i];
    std::vector<int> g = gold[i];
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    std::vector<int> both;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
    sum += static_cast<double>(both.size()) / k;
  }
  return sum / static_cast<double>(predicted.size());
}

bool EvalReport::all_finite_in_range() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0 + 1e-12; };
  for (double b : bleu)
    if (!ok(b)) return false;
  for (double m : msj)
    if (!ok(m)) return false;
  if (overlap_accuracy && !ok(*overlap_accuracy)) return false;
  return ok(rouge_l) && ok(cider) && ok(meteor);
}

EvalReport evaluate_corpus(const Corpus& corpus) {
  require_nonempty(corpus, "evaluate_corpus");
  EvalReport r;
  r.items = corpus.size();
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(corpus, n);
  r.rouge_l = rouge_l(corpus);
  r.cider = cider(corpus);
  r.meteor = meteor_lite(corpus);
  std::vector<Sentence> gen;
  std::vector<Sentence> ref;
  for (const auto& it : corpus) {
    gen.push_back(it.candidate);
    ref.push_back(it.reference);
  }
  for (int n = 3; n <= 5; ++n) r.msj[n - 3] = msj(gen, ref, n);
  return r;
}

}  // namespace gvqg::metrics
