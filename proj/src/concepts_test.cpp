#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "gvqg/concepts.hpp"
#include "gvqg/world.hpp"

using namespace gvqg;
using namespace gvqg::concepts;

namespace {

const Tokens kObjects{"person", "dog", "frisbee", "grass"};
const Tokens kCaption = world::split_ws("a man throwing a frisbee to a dog");

double raw_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Exhaustive oracle: enumerate every k-subset, keep the one with the highest
// score vector (sorted descending), ties by lexicographic token list.
Tokens brute_force_top_k(const Tokens& cands, const Tokens& qa, int k, const TokenEmbedder& emb) {
  std::map<std::string, double> score;
  for (const auto& c : cands) {
    double best = -2.0;
    for (const auto& q : qa) best = std::max(best, raw_cosine(emb.embed(c), emb.embed(q)));
    score[c] = best;
  }
  Tokens sorted = cands;
  std::sort(sorted.begin(), sorted.end());
  const int n = static_cast<int>(sorted.size());
  Tokens best_set;
  double best_sum = -1e9;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != std::min(k, n)) continue;
    Tokens s;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        s.push_back(sorted[static_cast<std::size_t>(i)]);
        sum += score[sorted[static_cast<std::size_t>(i)]];
      }
    if (sum > best_sum + 1e-12 || (std::abs(sum - best_sum) <= 1e-12 && s < best_set)) {
      best_sum = sum;
      best_set = s;
    }
  }
  return best_set;
}

}  // namespace

TEST_CASE("worked example candidate set and selection") {
  const auto cands = build_candidate_concepts(kObjects, kCaption);
  CHECK(cands.tokens == Tokens{"dog", "frisbee", "grass", "man", "person", "throwing"});
  const auto qa = prepare_qa_tokens(world::split_ws("what is the labrador about to catch ? frisbee"));
  const auto sel = filter_concepts(cands, qa, 2, TokenEmbedder::standard());
  CHECK(sel.concepts == Tokens{"dog", "frisbee"});
  CHECK(sel.mode == SelectionMode::filtered);
  CHECK(sel.subset_of(cands));
}

TEST_CASE("candidate construction edge cases") {
  CHECK(build_candidate_concepts({"dog", "dog"}, {}).tokens == Tokens{"dog"});
  const auto only_stop = build_candidate_concepts({"cat", "tree"}, world::split_ws("a the of and"));
  CHECK(only_stop.tokens == Tokens{"cat", "tree"});
  CHECK(build_candidate_concepts({}, {}).flagged_empty());
  const auto c = build_candidate_concepts({"dog"}, {"dog", "running"});
  CHECK(c.provenance[0] == Provenance::object);
  CHECK(c.provenance[1] == Provenance::caption);
}

TEST_CASE("embedder contracts") {
  const auto& e = TokenEmbedder::standard();
  const auto v = e.embed("giraffe");
  CHECK(raw_cosine(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.cosine("dog", "dog") == doctest::Approx(1.0));
  CHECK(e.cosine("labrador", "dog") >= 0.8);
  CHECK(e.cosine("dogs", "dog") >= 0.8);
}

TEST_CASE("exact matches score one and select everything") {
  const Tokens toks{"apple", "kite", "zebra"};
  const auto cands = build_candidate_concepts(toks, {});
  const auto scores = score_candidates(cands, toks, TokenEmbedder::standard());
  for (const auto& [t, s] : scores) CHECK(s == doctest::Approx(1.0));
  CHECK(filter_concepts(cands, toks, 3, TokenEmbedder::standard()).concepts == toks);
}

TEST_CASE("fewer candidates than k returns all with a warning") {
  const auto cands = build_candidate_concepts({"dog"}, {});
  const auto sel = filter_concepts(cands, {"dog"}, 2, TokenEmbedder::standard());
  CHECK(sel.concepts == Tokens{"dog"});
  CHECK_FALSE(sel.warning.empty());
  CHECK_THROWS(filter_concepts(cands, {"dog"}, 0, TokenEmbedder::standard()));
}

TEST_CASE("filtering equals the brute-force oracle on random instances") {
  std::mt19937_64 rng(17);
  const auto& onto = world::ontology();
  const auto& emb = TokenEmbedder::standard();
  for (int trial = 0; trial < 200; ++trial) {
    Tokens objs, qa;
    while (objs.size() < 6) {
      const auto& l = onto[rng() % onto.size()].name;
      if (std::find(objs.begin(), objs.end(), l) == objs.end()) objs.push_back(l);
    }
    while (qa.size() < 5) {
      const auto& l = onto[rng() % onto.size()].name;
      if (std::find(qa.begin(), qa.end(), l) == qa.end()) qa.push_back(l);
    }
    const auto cands = build_candidate_concepts(objs, {});
    const int k = 1 + static_cast<int>(rng() % 3);
    CHECK(filter_concepts(cands, qa, k, emb).concepts == brute_force_top_k(cands.tokens, qa, k, emb));
  }
}

TEST_CASE("filtering is idempotent and order invariant") {
  const auto& emb = TokenEmbedder::standard();
  const auto qa = prepare_qa_tokens(world::split_ws("what color is the kite ? red"));
  Tokens objs{"kite", "tree", "person", "bus", "clock"};
  const auto sel = filter_concepts(build_candidate_concepts(objs, {}), qa, 2, emb);
  CHECK(filter_concepts(build_candidate_concepts(sel.concepts, {}), qa, 2, emb).concepts == sel.concepts);
  std::reverse(objs.begin(), objs.end());
  CHECK(filter_concepts(build_candidate_concepts(objs, {}), qa, 2, emb).concepts == sel.concepts);
}

TEST_CASE("random selection is reproducible and uniform") {
  const auto cands = build_candidate_concepts(kObjects, kCaption);
  const auto tax = world::CategoryTaxonomy::desk_default();
  const auto a = random_selection(cands, 2, tax, 5);
  CHECK(a.concepts == random_selection(cands, 2, tax, 5).concepts);
  CHECK(a.category == random_selection(cands, 2, tax, 5).category);
  CHECK(a.mode == SelectionMode::random);
  std::map<std::string, int> freq;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const auto sel = random_selection(cands, 2, tax, static_cast<std::uint64_t>(s));
    CHECK(sel.concepts.size() == 2);
    CHECK(tax.index(sel.category) >= 0);
    for (const auto& c : sel.concepts) ++freq[c];
  }
  for (const auto& t : cands.tokens) CHECK(std::abs(freq[t] / static_cast<double>(draws) - 2.0 / 6.0) < 0.02);
}

TEST_CASE("actor selection rejects tokens outside the candidates") {
  const auto cands = build_candidate_concepts(kObjects, kCaption);
  const auto ok = actor_selection(cands, {"frisbee", "dog"}, "object", 2);
  CHECK(ok.concepts == Tokens{"dog", "frisbee"});
  CHECK(ok.mode == SelectionMode::actor);
  try {
    actor_selection(cands, {"dog", "zebra", "cake"}, "object", 3);
    FAIL("expected SelectionError");
  } catch (const SelectionError& e) {
    CHECK(e.offending == Tokens{"zebra", "cake"});
  }
  CHECK_THROWS_AS(actor_selection(cands, {"dog", "frisbee", "man"}, "object", 2), SelectionError);
}

TEST_CASE("gold slots for implicit guidance") {
  const auto& emb = TokenEmbedder::standard();
  const Tokens detected{"dog", "frisbee", "grass", "person"};
  const auto qa = prepare_qa_tokens(world::split_ws("what is the labrador about to catch ? frisbee"));
  CHECK(gold_objects_for_implicit(detected, qa, 2, emb) == std::vector<int>{0, 1});
  CHECK(gold_objects_for_implicit(detected, qa, 4, emb) == std::vector<int>{0, 1, 2, 3});
  const auto once = gold_objects_for_implicit(detected, {"zzz"}, 2, emb);
  CHECK(once == gold_objects_for_implicit(detected, {"zzz"}, 2, emb));
  CHECK(once.size() == 2);
}

TEST_CASE("selections are strict subsets on random worlds") {
  const auto& emb = TokenEmbedder::standard();
  const auto tax = world::CategoryTaxonomy::desk_default();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    world::WorldConfig cfg;
    cfg.num_scenes = 5;
    const auto ds = world::generate_dataset(cfg, seed);
    const auto& scene = ds.scenes[0];
    world::DetectorNoise noise;
    noise.drop_prob = 0.2;
    noise.confuse_prob = 0.1;
    const auto det = world::detect_objects(scene, noise, seed, cfg.k_o);
    const auto cands = build_candidate_concepts(det.labels, world::caption_scene(scene));
    const auto qa = prepare_qa_tokens(ds.qa[seed % ds.qa.size()].qa_tokens());
    const auto f = filter_concepts(cands, qa, 2, emb);
    CHECK(f.subset_of(cands));
    CHECK(random_selection(cands, 2, tax, seed).subset_of(cands));
    if (!f.concepts.empty()) CHECK(actor_selection(cands, f.concepts, "color", 2).subset_of(cands));
    ++checked;
  }
  CHECK(checked == 1000);
}
