#pragma once
// Corpus-level text generation metrics (single reference) and object-overlap
// accuracy. All scores are in [0, 1]; reports multiply by 100 for display.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvqg::metrics {

using Sentence = std::vector<std::string>;

struct Item {
  Sentence candidate;
  Sentence reference;
};

using Corpus = std::vector<Item>;

struct EmptyCorpusError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Clipped n-gram matches and candidate n-gram total summed over the corpus.
struct NgramTally {
  double matched = 0.0;
  double total = 0.0;
};
NgramTally ngram_tally(const Corpus& corpus, int n);

// Corpus BLEU with uniform weights over orders 1..max_n and the standard
// brevity penalty; no smoothing.
double bleu(const Corpus& corpus, int max_n);

// Mean per-pair LCS F-measure (beta = 1.2).
double rouge_l(const Corpus& corpus);
std::size_t lcs_length(const Sentence& a, const Sentence& b);

// Mean over orders 1..4 of the TF-IDF cosine between candidate and reference,
// with document frequencies taken over the references. Needs >= 2 items.
// Multiply by 10 for the conventional scale.
double cider(const Corpus& corpus);

// Exact-match unigram alignment, Fmean = 10PR / (R + 9P), fragmentation
// penalty 0.5 (chunks / matches)^3 when the alignment has more than one
// chunk; mean over pairs.
double meteor_lite(const Corpus& corpus);

// Geometric mean over orders 1..max_n of the Jaccard similarity between the
// normalised n-gram frequency distributions of the two corpora.
double msj(std::span<const Sentence> generated, std::span<const Sentence> reference, int max_n);

// Mean |pred & gold| / k.
double overlap_accuracy(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& gold,
                        int k);

struct EvalReport {
  double bleu[4] = {0, 0, 0, 0};
  double rouge_l = 0.0;
  double cider = 0.0;
  double meteor = 0.0;
  double msj[3] = {0, 0, 0};  // orders 3, 4, 5
  std::optional<double> overlap_accuracy;
  std::size_t items = 0;

  double bleu4() const { return bleu[3]; }
  bool all_finite_in_range() const;
};

EvalReport evaluate_corpus(const Corpus& corpus);

}  // namespace gvqg::metrics
