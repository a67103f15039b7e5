#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gvqg/metrics.hpp"

using namespace gvqg::metrics;

namespace {

Sentence words(const std::string& text) {
  std::istringstream in(text);
  Sentence s;
  for (std::string w; in >> w;) s.push_back(w);
  return s;
}

Corpus toy_corpus() {
  return {{words("the cat sat on the mat"), words("the cat sat on a mat")},
          {words("a dog runs"), words("the dog runs fast")},
          {words("what color is it"), words("what color is the car")}};
}

Corpus identical(const std::vector<std::string>& lines) {
  Corpus c;
  for (const auto& l : lines) c.push_back({words(l), words(l)});
  return c;
}

// Longest common subsequence by enumerating every subsequence of a.
std::size_t brute_lcs(const Sentence& a, const Sentence& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    Sentence sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask & (1u << i)) sub.push_back(a[i]);
    std::size_t j = 0;
    for (const auto& w : b)
      if (j < sub.size() && sub[j] == w) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

Corpus random_corpus(std::mt19937_64& rng, std::size_t items) {
  const std::vector<std::string> vocab{"what", "is", "the", "color", "of", "dog", "cat", "red", "left", "how"};
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  std::uniform_int_distribution<int> len(1, 8);
  Corpus c;
  for (std::size_t i = 0; i < items; ++i) {
    Item it;
    for (int n = len(rng); n > 0; --n) it.candidate.push_back(vocab[word(rng)]);
    for (int n = len(rng); n > 0; --n) it.reference.push_back(vocab[word(rng)]);
    c.push_back(it);
  }
  return c;
}

}  // namespace

TEST_CASE("BLEU on a hand-tallied toy corpus") {
  const Corpus c = toy_corpus();
  // Clipped matches / candidate n-grams per order:
  //   1: 5+2+3 / 6+3+4   2: 3+1+2 / 5+2+3   3: 2+0+1 / 4+1+2   4: 1+0+0 / 3+0+1
  // Lengths 13 vs 15 give a brevity penalty of exp(1 - 15/13).
  CHECK(ngram_tally(c, 1).matched == 10);
  CHECK(ngram_tally(c, 1).total == 13);
  CHECK(ngram_tally(c, 2).matched == 6);
  CHECK(ngram_tally(c, 2).total == 10);
  CHECK(ngram_tally(c, 3).matched == 3);
  CHECK(ngram_tally(c, 3).total == 7);
  CHECK(ngram_tally(c, 4).matched == 1);
  CHECK(ngram_tally(c, 4).total == 4);

  const double bp = std::exp(1.0 - 15.0 / 13.0);
  CHECK(bleu(c, 1) == doctest::Approx(bp * 10.0 / 13.0).epsilon(1e-12));
  CHECK(bleu(c, 2) == doctest::Approx(bp * std::sqrt(6.0 / 13.0)).epsilon(1e-12));
  CHECK(bleu(c, 3) == doctest::Approx(bp * std::cbrt(10.0 / 13.0 * 0.6 * 3.0 / 7.0)).epsilon(1e-12));
  CHECK(bleu(c, 4) == doctest::Approx(bp * std::pow(9.0 / 182.0, 0.25)).epsilon(1e-12));

  CHECK(std::abs(bleu(c, 1) - 0.659541) < 1e-6);
  CHECK(std::abs(bleu(c, 2) - 0.582491) < 1e-6);
  CHECK(std::abs(bleu(c, 3) - 0.499569) < 1e-6);
  CHECK(std::abs(bleu(c, 4) - 0.404323) < 1e-6);
}

TEST_CASE("BLEU identity, disjoint and errors") {
  const Corpus same = identical({"what color is the dog", "how many cats are there"});
  for (int n = 1; n <= 4; ++n) CHECK(bleu(same, n) == doctest::Approx(1.0));
  const Corpus disjoint{{words("red blue"), words("green yellow")}};
  CHECK(bleu(disjoint, 1) == 0.0);
  CHECK_THROWS_AS(bleu(Corpus{}, 4), EmptyCorpusError);
  CHECK_THROWS_AS(bleu(same, 0), std::invalid_argument);
  CHECK_THROWS_AS(bleu(same, 5), std::invalid_argument);
}

TEST_CASE("appending a matching n-gram never lowers the clipped numerator") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 300; ++t) {
    Corpus c = random_corpus(rng, 3);
    const int n = 1 + t % 4;
    const auto& ref = c[0].reference;
    if (ref.size() < static_cast<std::size_t>(n)) continue;
    const double before = ngram_tally(c, n).matched;
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, ref.size() - n)(rng);
    c[0].candidate.insert(c[0].candidate.end(), ref.begin() + static_cast<long>(start),
                          ref.begin() + static_cast<long>(start) + n);
    CHECK(ngram_tally(c, n).matched >= before);
  }
}

TEST_CASE("ROUGE-L") {
  CHECK(lcs_length(words("a b c d"), words("a c d")) == 3);
  CHECK(lcs_length(words("a b"), words("")) == 0);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(0, 9);
  std::uniform_int_distribution<int> sym(0, 3);
  for (int t = 0; t < 300; ++t) {
    Sentence a, b;
    for (int n = len(rng); n > 0; --n) a.push_back(std::string(1, static_cast<char>('a' + sym(rng))));
    for (int n = len(rng); n > 0; --n) b.push_back(std::string(1, static_cast<char>('a' + sym(rng))));
    CHECK(lcs_length(a, b) == brute_lcs(a, b));
  }

  CHECK(rouge_l(identical({"is the cat red", "where is it"})) == doctest::Approx(1.0));
  CHECK(rouge_l(Corpus{{words("red blue"), words("green yellow")}}) == 0.0);

  // LCS 5, 2, 3 with (P, R) = (5/6, 5/6), (2/3, 1/2), (3/4, 3/5); beta^2 = 1.44
  auto f = [](double p, double r) { return 2.44 * p * r / (r + 1.44 * p); };
  const double expected = (5.0 / 6.0 + f(2.0 / 3.0, 0.5) + f(0.75, 0.6)) / 3.0;
  CHECK(rouge_l(toy_corpus()) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(rouge_l(toy_corpus()) - 0.681327) < 1e-6);
  CHECK_THROWS_AS(rouge_l(Corpus{}), EmptyCorpusError);
}

TEST_CASE("CIDEr") {
  SUBCASE("identical distinct sentences score the maximum") {
    const Corpus same = identical({"what color is the big dog", "how many cats are on the left",
                                   "is the red ball near the table"});
    CHECK(cider(same) == doctest::Approx(1.0));
    Corpus perturbed = same;
    perturbed[1].candidate = words("how many dogs are on the left");
    CHECK(cider(perturbed) < cider(same));
  }
  SUBCASE("words present in every reference carry no weight") {
    // idf(the) = ln 3 - ln 3 = 0, so "the" alone has a zero vector; items 2 and 3
    // match exactly on orders 1 and 2 and have no 3- or 4-grams.
    const Corpus c{{words("the"), words("the dog")}, {words("the cat"), words("the cat")},
                   {words("the bird"), words("the bird")}};
    CHECK(cider(c) == doctest::Approx((2.0 / 3.0 + 2.0 / 3.0) / 4.0).epsilon(1e-12));
    const Corpus stop{{words("the the"), words("the dog")}, {words("the"), words("the cat")},
                      {words("the the the"), words("the bird")}};
    CHECK(cider(stop) == 0.0);
  }
  SUBCASE("needs two items") {
    CHECK_THROWS_AS(cider(identical({"one item"})), std::invalid_argument);
  }
}

TEST_CASE("CIDEr and MSJ on the toy corpus") {
  // Frozen from an independent Python tally of the same definitions.
  const Corpus c = toy_corpus();
  CHECK(std::abs(cider(c) - 0.428189503) < 1e-6);
  std::vector<Sentence> gen, ref;
  for (const auto& it : c) {
    gen.push_back(it.candidate);
    ref.push_back(it.reference);
  }
  CHECK(std::abs(msj(gen, ref, 3) - 0.359280486) < 1e-6);
  CHECK(std::abs(msj(gen, ref, 4) - 0.254816209) < 1e-6);
  CHECK(msj(gen, ref, 5) == 0.0);
}

TEST_CASE("METEOR-lite") {
  // A contiguous exact match is unpenalised.
  CHECK(meteor_lite(identical({"dog"})) == 1.0);
  for (int m : {2, 3, 5, 8}) {
    Sentence s;
    for (int i = 0; i < m; ++i) s.push_back("w" + std::to_string(i));
    CHECK(meteor_lite(Corpus{{s, s}}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(meteor_lite(Corpus{{words("red blue"), words("green yellow")}}) == 0.0);

  auto fmean = [](double p, double r) { return 10.0 * p * r / (r + 9.0 * p); };
  // "a dog runs" vs "the dog runs fast": m = 2, P = 2/3, R = 1/2, one chunk.
  CHECK(meteor_lite(Corpus{{words("a dog runs"), words("the dog runs fast")}}) ==
        doctest::Approx(fmean(2.0 / 3.0, 0.5)).epsilon(1e-12));
  // Reversed order: two chunks over two matches.
  CHECK(meteor_lite(Corpus{{words("b a"), words("a b")}}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(meteor_lite(Corpus{{words("a x b"), words("a b")}}) == doctest::Approx(fmean(2.0 / 3.0, 1.0) * 0.5).epsilon(1e-12));

  // Toy corpus: item 1 has m = 5 in two chunks (the second "the" is unmatched),
  // items 2 and 3 are single chunks.
  const double expected =
      (fmean(5.0 / 6.0, 5.0 / 6.0) * (1.0 - 0.5 * 0.064) + fmean(2.0 / 3.0, 0.5) + fmean(0.75, 0.6)) / 3.0;
  CHECK(meteor_lite(toy_corpus()) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(meteor_lite(toy_corpus()) - 0.643911) < 1e-6);
  CHECK_THROWS_AS(meteor_lite(Corpus{}), EmptyCorpusError);
}

TEST_CASE("MSJ") {
  const std::vector<Sentence> gen{words("a b"), words("a c")};
  const std::vector<Sentence> ref{words("a b"), words("b c")};
  // unigrams: {a .5, b .25, c .25} vs {a .25, b .5, c .25} -> 0.75 / 1.25
  // bigrams: {ab .5, ac .5} vs {ab .5, bc .5} -> 0.5 / 1.5
  CHECK(msj(gen, ref, 1) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(msj(gen, ref, 2) == doctest::Approx(std::sqrt(0.6 / 3.0)).epsilon(1e-12));
  CHECK(msj(gen, ref, 2) == doctest::Approx(msj(ref, gen, 2)).epsilon(1e-15));
  CHECK(msj(gen, gen, 5) == doctest::Approx(1.0));
  const std::vector<Sentence> other{words("x y"), words("y z")};
  CHECK(msj(gen, other, 2) == 0.0);
  CHECK_THROWS_AS(msj(std::vector<Sentence>{}, ref, 2), EmptyCorpusError);

  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Corpus c = random_corpus(rng, 6);
    std::vector<Sentence> a, b;
    for (const auto& it : c) {
      a.push_back(it.candidate);
      b.push_back(it.reference);
    }
    CHECK(msj(a, b, 3) == doctest::Approx(msj(b, a, 3)).epsilon(1e-12));
  }
}

TEST_CASE("overlap accuracy") {
  const std::vector<std::vector<int>> gold{{0, 3}, {1, 2}};
  CHECK(overlap_accuracy(gold, gold, 2) == 1.0);
  CHECK(overlap_accuracy({{1, 2}, {0, 3}}, gold, 2) == 0.0);
  CHECK(overlap_accuracy({{0, 5}, {2}}, gold, 2) == 0.5);
  CHECK_THROWS_AS(overlap_accuracy({}, {}, 2), EmptyCorpusError);
  CHECK_THROWS_AS(overlap_accuracy({{0}}, {}, 2), std::invalid_argument);

  std::mt19937_64 rng(77);
  std::vector<int> slots(8);
  std::iota(slots.begin(), slots.end(), 0);
  std::vector<std::vector<int>> pred, ref;
  for (int t = 0; t < 100000; ++t) {
    std::vector<int> p, g;
    std::sample(slots.begin(), slots.end(), std::back_inserter(p), 2, rng);
    std::sample(slots.begin(), slots.end(), std::back_inserter(g), 2, rng);
    pred.push_back(p);
    ref.push_back(g);
  }
  CHECK(std::abs(overlap_accuracy(pred, ref, 2) - 0.25) < 0.005);
}

TEST_CASE("reports are in range and order invariant") {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 30; ++t) {
    Corpus c = random_corpus(rng, 12);
    const auto a = evaluate_corpus(c);
    CHECK(a.all_finite_in_range());
    std::shuffle(c.begin(), c.end(), rng);
    const auto b = evaluate_corpus(c);
    for (int n = 0; n < 4; ++n) CHECK(a.bleu[n] == doctest::Approx(b.bleu[n]).epsilon(1e-12));
    for (int n = 0; n < 3; ++n) CHECK(a.msj[n] == doctest::Approx(b.msj[n]).epsilon(1e-12));
    CHECK(a.rouge_l == doctest::Approx(b.rouge_l).epsilon(1e-12));
    CHECK(a.cider == doctest::Approx(b.cider).epsilon(1e-12));
    CHECK(a.meteor == doctest::Approx(b.meteor).epsilon(1e-12));
  }
}
