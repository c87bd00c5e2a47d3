#pragma once

#include "ccn/corpus.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ccn {

inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;

// In-process BM25 inverted index over whole dialogues (each dialogue is one
// document made of its concatenated token stream). Documents are held sorted
// by id, so posting-list order and tie-breaks follow dialogue id.
class CaseIndex {
public:
    static CaseIndex build(std::vector<Dialogue> ds);

    int doc_count() const { return static_cast<int>(docs_.size()); }
    double avg_len() const { return avg_len_; }
    const std::vector<Dialogue>& docs() const { return docs_; }
    const std::vector<long long>& lengths() const { return len_; }
    const Dialogue* find(const std::string& id) const;

    // (doc ordinal, term frequency) pairs, ordinal-ascending; nullptr when
    // the term never occurs.
    const std::vector<std::pair<int, int>>* postings(const std::string& term) const;
    int doc_freq(const std::string& term) const;

private:
    std::vector<Dialogue> docs_;  // sorted by id
    std::vector<long long> len_;
    double avg_len_ = 0.0;
    std::unordered_map<std::string, std::vector<std::pair<int, int>>> postings_;
};

// BM25 over the target's full token stream; the target itself is excluded.
// Returns at most n results, score-descending, ties broken by dialogue id.
std::vector<std::pair<Dialogue, double>> retrieve_candidates(const CaseIndex& idx,
                                                             const Dialogue& target,
                                                             int n = 50);

// Pairwise similarity in [0,1]; swappable so a trained scorer can replace
// the lexical default.
class SimilarityScorer {
public:
    virtual ~SimilarityScorer() = default;
    virtual double score(const Dialogue& target, const Dialogue& candidate) const = 0;
    virtual std::string name() const = 0;
};

// Token-level cosine over TF-IDF vectors (idf = ln((1+N)/(1+df)) + 1 from
// the index corpus), clamped into [0,1].
class TfIdfCosineScorer : public SimilarityScorer {
public:
    explicit TfIdfCosineScorer(const CaseIndex& idx) : idx_(&idx) {}
    double score(const Dialogue& target, const Dialogue& candidate) const override;
    std::string name() const override { return "tfidf-cosine"; }

private:
    const CaseIndex* idx_;
};

// Stable sort of candidates by scorer output, descending. Scores outside
// [0,1] raise a contract-violation error.
std::vector<std::pair<Dialogue, double>> rerank(const Dialogue& target,
                                                const std::vector<Dialogue>& candidates,
                                                const SimilarityScorer& scorer);

struct SimilarCaseSet {
    std::string target_id;
    std::vector<std::pair<Dialogue, double>> cases;  // length k, scores non-increasing

    int k() const { return static_cast<int>(cases.size()); }
};

// retrieve_candidates(·, n) then rerank, truncated to k. When lexical
// retrieval yields fewer than min(n, corpus−1) candidates the pool is topped
// up with the remaining dialogues in id order before reranking, so the
// result has length k and smaller k stays a prefix of larger k.
SimilarCaseSet top_k_similar(const CaseIndex& idx, const Dialogue& target, int k,
                             const SimilarityScorer& scorer, int n = 50);

// Line-delimited JSON persistence: a header line with corpus statistics and
// role names, then one dialogue record per line. Postings are rebuilt on
// load.
void save_index(const CaseIndex& idx, const std::string& path, const RoleTable& roles);
CaseIndex load_index(const std::string& path, RoleTable& roles);

}  // namespace ccn
