#include "gvqg/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "gvqg/hash.hpp"

#ifndef GVQG_DATA_DIR
#define GVQG_DATA_DIR "data"
#endif

namespace gvqg::concepts {

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("GVQG_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return GVQG_DATA_DIR;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stopwords

Stopwords Stopwords::from_file(const std::filesystem::path& path) {
  std::set<std::string> words;
  for (auto& l : read_lines(path)) {
    std::istringstream is(l);
    std::string w;
    if (is >> w) words.insert(w);
  }
  return Stopwords(std::move(words));
}

const Stopwords& Stopwords::standard() {
  static const Stopwords s = from_file(data_dir() / "stopwords.txt");
  return s;
}

Tokens Stopwords::strip(const Tokens& toks) const {
  Tokens out;
  for (const auto& t : toks)
    if (!contains(t)) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Embedder

TokenEmbedder TokenEmbedder::from_file(const std::filesystem::path& synonyms, int dim) {
  std::map<std::string, std::string> syn;
  for (auto& l : read_lines(synonyms)) {
    std::istringstream is(l);
    std::string a, b;
    if (is >> a >> b) syn[a] = b;
  }
  for (const auto& label : world::ontology())
    if (label.plural != label.name) syn.emplace(label.plural, label.name);
  return TokenEmbedder(std::move(syn), dim);
}

const TokenEmbedder& TokenEmbedder::standard() {
  static const TokenEmbedder e = from_file(data_dir() / "synonyms.txt");
  return e;
}

TokenEmbedder::TokenEmbedder(std::map<std::string, std::string> synonyms, int dim)
    : synonyms_(std::move(synonyms)), dim_(dim) {}

const std::string& TokenEmbedder::canonical(const std::string& token) const {
  auto it = synonyms_.find(token);
  return it == synonyms_.end() ? token : it->second;
}

namespace {

std::vector<double> unit_gaussian(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  for (auto& x : v) {
    x = nd(rng);
    n2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

std::vector<double> TokenEmbedder::embed(const std::string& token) const {
  {
    std::lock_guard lock(cache_->mu);
    if (auto it = cache_->vectors.find(token); it != cache_->vectors.end()) return it->second;
  }
  const std::string& canon = canonical(token);
  std::vector<double> v = unit_gaussian(derive_seed(0x656d6265ull, canon), dim_);
  if (canon != token) {
    // Synonyms sit close to their canonical term (cosine ~0.97).
    const auto jitter = unit_gaussian(derive_seed(0x73796e6full, token), dim_);
    double n2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] += 0.25 * jitter[i];
      n2 += v[i] * v[i];
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
  }
  std::lock_guard lock(cache_->mu);
  cache_->vectors.emplace(token, v);
  return v;
}

double TokenEmbedder::cosine(const std::string& a, const std::string& b) const {
  if (a == b) return 1.0;
  const auto va = embed(a);
  const auto vb = embed(b);
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
  return s;
}

// ---------------------------------------------------------------------------
// Concept sets

bool ConceptSet::contains(const std::string& t) const { return std::binary_search(tokens.begin(), tokens.end(), t); }

std::string_view to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::filtered: return "filtered";
    case SelectionMode::actor: return "actor";
    case SelectionMode::random: return "random";
  }
  return "?";
}

bool ConceptSelection::subset_of(const ConceptSet& s) const {
  return std::all_of(concepts.begin(), concepts.end(), [&](const auto& c) { return s.contains(c); });
}

ConceptSet build_candidate_concepts(const Tokens& objects, const Tokens& caption, const Stopwords& stop) {
  std::map<std::string, Provenance> merged;
  for (const auto& o : objects)
    if (!stop.contains(o)) merged.emplace(o, Provenance::object);
  for (const auto& c : stop.strip(caption)) merged.emplace(c, Provenance::caption);
  ConceptSet out;
  for (const auto& [tok, prov] : merged) {
    out.tokens.push_back(tok);
    out.provenance.push_back(prov);
  }
  return out;
}

Tokens prepare_qa_tokens(const Tokens& qa, const Stopwords& stop) {
  Tokens out;
  for (const auto& t : stop.strip(qa))
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, double>> score_candidates(const ConceptSet& candidates, const Tokens& qa_tokens,
                                                             const TokenEmbedder& embedder) {
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& c : candidates.tokens) {
    double best = -1.0;
    for (const auto& q : qa_tokens) best = std::max(best, embedder.cosine(c, q));
    scored.emplace_back(c, best);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return scored;
}

ConceptSelection filter_concepts(const ConceptSet& candidates, const Tokens& qa_tokens, int k,
                                 const TokenEmbedder& embedder, std::string category) {
  if (k < 1) throw std::invalid_argument("filter_concepts: k must be >= 1");
  ConceptSelection sel;
  sel.mode = SelectionMode::filtered;
  sel.category = std::move(category);
  const auto scored = score_candidates(candidates, qa_tokens, embedder);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  if (scored.size() < static_cast<std::size_t>(k))
    sel.warning = "only " + std::to_string(scored.size()) + " candidates for k=" + std::to_string(k);
  for (std::size_t i = 0; i < take; ++i) sel.concepts.push_back(scored[i].first);
  std::sort(sel.concepts.begin(), sel.concepts.end());
  return sel;
}

ConceptSelection random_selection(const ConceptSet& candidates, int k, const world::CategoryTaxonomy& categories,
                                  std::uint64_t seed) {
  if (candidates.tokens.empty()) throw std::invalid_argument("random_selection: empty candidate set");
  std::mt19937_64 rng(mix64(seed));
  Tokens pool = candidates.tokens;
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), pool.size());
  for (std::size_t i = 0; i < take; ++i)
    std::swap(pool[i], pool[std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng)]);
  ConceptSelection sel;
  sel.mode = SelectionMode::random;
  sel.concepts.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(sel.concepts.begin(), sel.concepts.end());
  sel.category = categories.name(std::uniform_int_distribution<int>(0, categories.size() - 1)(rng));
  return sel;
}

ConceptSelection actor_selection(const ConceptSet& candidates, const Tokens& concepts, std::string category,
                                 int k_max) {
  Tokens offenders;
  for (const auto& c : concepts)
    if (!candidates.contains(c)) offenders.push_back(c);
  if (!offenders.empty())
    throw SelectionError("concepts not among the scene's candidates: " + world::join(offenders, ", "), offenders);
  ConceptSelection sel;
  sel.mode = SelectionMode::actor;
  sel.concepts = concepts;
  std::sort(sel.concepts.begin(), sel.concepts.end());
  sel.concepts.erase(std::unique(sel.concepts.begin(), sel.concepts.end()), sel.concepts.end());
  if (static_cast<int>(sel.concepts.size()) > k_max)
    throw SelectionError("at most " + std::to_string(k_max) + " concepts may be selected", {});
  sel.category = std::move(category);
  return sel;
}

std::vector<int> gold_objects_for_implicit(const Tokens& detected, const Tokens& qa_tokens, int k,
                                           const TokenEmbedder& embedder) {
  if (detected.empty()) throw std::invalid_argument("gold_objects_for_implicit: no detected objects");
  struct Slot {
    int index;
    double score;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    double best = -1.0;
    for (const auto& q : qa_tokens) best = std::max(best, embedder.cosine(detected[i], q));
    slots.push_back({static_cast<int>(i), best});
  }
  std::sort(slots.begin(), slots.end(), [&](const Slot& a, const Slot& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto& la = detected[static_cast<std::size_t>(a.index)];
    const auto& lb = detected[static_cast<std::size_t>(b.index)];
    if (la != lb) return la < lb;
    return a.index < b.index;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < slots.size() && static_cast<int>(i) < k; ++i) out.push_back(slots[i].index);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace gvqg::concepts
