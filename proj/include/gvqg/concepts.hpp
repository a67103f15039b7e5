#pragma once
// Candidate concept construction and QA-driven filtering.
//
// Candidates are the de-duplicated union of detected object labels and the
// caption's content words. Filtering scores each candidate by its best cosine
// similarity against the (stopword-stripped) QA tokens and keeps the top k.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gvqg/world.hpp"

namespace gvqg::concepts {

using world::Tokens;

class Stopwords {
 public:
  static const Stopwords& standard();
  static Stopwords from_file(const std::filesystem::path& path);
  explicit Stopwords(std::set<std::string> words) : words_(std::move(words)) {}

  bool contains(const std::string& w) const { return words_.count(w) > 0; }
  std::size_t size() const { return words_.size(); }
  Tokens strip(const Tokens& toks) const;

 private:
  std::set<std::string> words_;
};

// Directory holding stopwords.txt and synonyms.txt ($GVQG_DATA_DIR overrides).
std::filesystem::path data_dir();

class TokenEmbedder {
 public:
  static constexpr int kDefaultDim = 32;
  static const TokenEmbedder& standard();
  // Curated synonyms from a "token canonical" file plus ontology plurals.
  static TokenEmbedder from_file(const std::filesystem::path& synonyms, int dim = kDefaultDim);
  TokenEmbedder(std::map<std::string, std::string> synonyms, int dim);

  int dim() const { return dim_; }
  // Unit vector for a token; deterministic.
  std::vector<double> embed(const std::string& token) const;
  double cosine(const std::string& a, const std::string& b) const;
  const std::string& canonical(const std::string& token) const;
  const std::map<std::string, std::string>& synonym_map() const { return synonyms_; }

 private:
  std::map<std::string, std::string> synonyms_;
  int dim_;
  struct Cache {
    std::mutex mu;
    std::unordered_map<std::string, std::vector<double>> vectors;
  };
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

enum class Provenance { object, caption };

struct ConceptSet {
  Tokens tokens;  // sorted, unique
  std::vector<Provenance> provenance;
  bool flagged_empty() const { return tokens.empty(); }
  bool contains(const std::string& t) const;
  std::size_t size() const { return tokens.size(); }
};

enum class SelectionMode { filtered, actor, random };
std::string_view to_string(SelectionMode m);

struct ConceptSelection {
  Tokens concepts;        // sorted
  std::string category;   // may be empty for object-only guidance
  SelectionMode mode = SelectionMode::filtered;
  std::string warning;    // set when fewer than k candidates were available

  bool subset_of(const ConceptSet& s) const;
};

struct SelectionError : std::invalid_argument {
  SelectionError(const std::string& msg, Tokens offenders)
      : std::invalid_argument(msg), offending(std::move(offenders)) {}
  Tokens offending;
};

// Lowercases nothing; callers pass lowercased tokens.
ConceptSet build_candidate_concepts(const Tokens& objects, const Tokens& caption,
                                    const Stopwords& stop = Stopwords::standard());

// Stopword-strip and de-duplicate QA tokens, preserving first occurrence order.
Tokens prepare_qa_tokens(const Tokens& qa, const Stopwords& stop = Stopwords::standard());

// Per-candidate score: max cosine over qa tokens. Ties broken lexicographically.
std::vector<std::pair<std::string, double>> score_candidates(const ConceptSet& candidates, const Tokens& qa_tokens,
                                                             const TokenEmbedder& embedder);

ConceptSelection filter_concepts(const ConceptSet& candidates, const Tokens& qa_tokens, int k,
                                 const TokenEmbedder& embedder, std::string category = {});

ConceptSelection random_selection(const ConceptSet& candidates, int k, const world::CategoryTaxonomy& categories,
                                  std::uint64_t seed);

// Actor-provided selection; throws SelectionError naming tokens outside the candidates.
ConceptSelection actor_selection(const ConceptSet& candidates, const Tokens& concepts, std::string category,
                                 int k_max);

// Top-k detected slots by the same scoring (labels only, no caption tokens).
// Returned indices are ascending. Ties: label lexicographic, then slot.
std::vector<int> gold_objects_for_implicit(const Tokens& detected, const Tokens& qa_tokens, int k,
                                           const TokenEmbedder& embedder);

}  // namespace gvqg::concepts
