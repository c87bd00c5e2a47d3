#pragma once

#include "ccn/config.hpp"
#include "ccn/corpus.hpp"
#include "ccn/decoder.hpp"
#include "ccn/retrieval.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ccn {

// Unigram-overlap F1 with clipped counts.
double rouge_1(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);
// Longest-common-subsequence F1 (plain F1, no recall weighting).
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);
// Geometric mean of clipped n-gram precisions (n = 1..max_n) with brevity
// penalty; zero-count precisions get add-one smoothing.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n = 4);

struct MetricReport {
    std::string variant;
    int samples = 0;
    double rouge1 = 0.0;  // corpus level = mean of per-sample scores, in [0,1]
    double rougeL = 0.0;
    double bleu_score = 0.0;
    std::vector<double> per_rouge1;
    std::vector<double> per_rougeL;
    std::vector<double> per_bleu;
};

// Evaluation seam: any token-sequence generator against gold targets.
using GeneratorFn =
    std::function<std::vector<std::string>(const TrainingPair&)>;

MetricReport evaluate_pairs(const GeneratorFn& gen, const std::vector<TrainingPair>& pairs,
                            const std::string& variant);

// Greedy generation with per-pair retrieval (k = 0 skips retrieval).
MetricReport evaluate_model(const ModelParams& mp, const Vocabulary& vocab,
                            const std::vector<TrainingPair>& pairs, const CaseIndex* index,
                            const SimilarityScorer* scorer, int k, const GenOptions& gen_opt,
                            const std::string& variant);

std::string variant_name(int k);  // 0 -> "vertical-only", 1 -> "top-1", …
int variant_k(const std::string& name);

struct AblationOptions {
    std::vector<int> ks = {0, 1, 3};
    int n_seeds = 3;
    bool quiet = true;          // per-run progress on stdout when false
    std::string report_dir;     // when set, per-run train reports land here
};

struct AblationRun {
    int k = 0;
    std::uint64_t seed = 0;
    MetricReport test;
};

struct AblationResult {
    std::vector<AblationRun> runs;  // grouped by variant, seeds in order

    // Mean over seeds for one variant; metric: 0=rouge1, 1=rougeL, 2=bleu.
    double mean(int k, int metric) const;
};

// Trains one model per (variant, seed) on the split's training dialogues
// and evaluates every run on the shared test split. `roles` must contain
// base.gen_role.
AblationResult ablation_suite(const Split& split, const RoleTable& roles,
                              const Hyperparams& base, const AblationOptions& opt);

// Table-shaped rendering (scores ×100, mean ± spread over seeds).
std::string ablation_table(const AblationResult& res);
std::string ablation_json(const AblationResult& res);
std::string report_json(const MetricReport& r);

}  // namespace ccn
