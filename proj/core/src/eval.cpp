#include "ccn/eval.hpp"

#include "ccn/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ccn {

namespace {

using nlohmann::json;

std::unordered_map<std::string, int> unigram_counts(const std::vector<std::string>& toks) {
    std::unordered_map<std::string, int> counts;
    for (const auto& tok : toks) {
        ++counts[tok];
    }
    return counts;
}

double f1(double precision, double recall) {
    const double denom = precision + recall;
    return denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    // Rolling one-row dynamic program (the tests keep a full-table oracle).
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// N-grams keyed as tokens joined on a separator that cannot occur inside a
// whitespace-split token.
std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& toks, int n) {
    std::unordered_map<std::string, int> counts;
    if (static_cast<int>(toks.size()) < n) {
        return counts;
    }
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
        std::string key = toks[i];
        for (int j = 1; j < n; ++j) {
            key += '\x1f';
            key += toks[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double rouge_1(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) {
    if (reference.empty()) {
        throw std::invalid_argument("rouge_1: empty reference");
    }
    if (candidate.empty()) {
        return 0.0;
    }
    const auto ref_counts = unigram_counts(reference);
    long long overlap = 0;
    for (const auto& [tok, n] : unigram_counts(candidate)) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end()) {
            overlap += std::min(n, it->second);
        }
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
    return f1(p, r);
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) {
    if (reference.empty()) {
        throw std::invalid_argument("rouge_l: empty reference");
    }
    if (candidate.empty()) {
        return 0.0;
    }
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    return f1(p, r);
}

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n) {
    if (reference.empty()) {
        throw std::invalid_argument("bleu: empty reference");
    }
    if (max_n < 1) {
        throw std::invalid_argument("bleu: max_n must be >= 1");
    }
    if (candidate.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const auto ref_counts = ngram_counts(reference, n);
        long long matched = 0;
        long long total = 0;
        for (const auto& [key, count] : ngram_counts(candidate, n)) {
            total += count;
            auto it = ref_counts.find(key);
            if (it != ref_counts.end()) {
                matched += std::min(count, it->second);
            }
        }
        // Add-one smoothing on zero-match orders keeps short sequences off
        // hard zero; an empty order (total = 0) contributes a neutral 1.
        const double p = matched == 0
                             ? 1.0 / static_cast<double>(total + 1)
                             : static_cast<double>(matched) / static_cast<double>(total);
        log_sum += std::log(p);
    }
    const double geo_mean = std::exp(log_sum / static_cast<double>(max_n));
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return brevity * geo_mean;
}

MetricReport evaluate_pairs(const GeneratorFn& gen, const std::vector<TrainingPair>& pairs,
                            const std::string& variant) {
    if (pairs.empty()) {
        throw std::invalid_argument("evaluate: no pairs to score");
    }
    MetricReport report;
    report.variant = variant;
    report.samples = static_cast<int>(pairs.size());
    for (const TrainingPair& pair : pairs) {
        const std::vector<std::string> cand = gen(pair);
        report.per_rouge1.push_back(rouge_1(cand, pair.target.tokens));
        report.per_rougeL.push_back(rouge_l(cand, pair.target.tokens));
        report.per_bleu.push_back(bleu(cand, pair.target.tokens));
    }
    report.rouge1 = mean_of(report.per_rouge1);
    report.rougeL = mean_of(report.per_rougeL);
    report.bleu_score = mean_of(report.per_bleu);
    return report;
}

MetricReport evaluate_model(const ModelParams& mp, const Vocabulary& vocab,
                            const std::vector<TrainingPair>& pairs, const CaseIndex* index,
                            const SimilarityScorer* scorer, int k, const GenOptions& gen_opt,
                            const std::string& variant) {
    if (k >= 1 && (index == nullptr || scorer == nullptr)) {
        throw std::invalid_argument("evaluate_model: k >= 1 requires a retrieval index and scorer");
    }
    GeneratorFn gen = [&](const TrainingPair& pair) {
        std::optional<SimilarCaseSet> sc;
        if (k >= 1) {
            sc = top_k_similar(*index, pair.context, k, *scorer);
        }
        return generate(mp, vocab, pair.context, sc ? &*sc : nullptr, gen_opt).tokens;
    };
    return evaluate_pairs(gen, pairs, variant);
}

std::string variant_name(int k) {
    if (k == 0) {
        return "vertical-only";
    }
    if (k >= 1 && k <= 3) {
        return "top-" + std::to_string(k);
    }
    throw std::invalid_argument("variant_name: k must be in [0,3], got " + std::to_string(k));
}

int variant_k(const std::string& name) {
    if (name == "vertical-only") {
        return 0;
    }
    for (int k = 1; k <= 3; ++k) {
        if (name == "top-" + std::to_string(k)) {
            return k;
        }
    }
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected vertical-only, top-1, top-2 or top-3)");
}

double AblationResult::mean(int k, int metric) const {
    double sum = 0.0;
    int n = 0;
    for (const AblationRun& run : runs) {
        if (run.k != k) {
            continue;
        }
        sum += metric == 0 ? run.test.rouge1 : metric == 1 ? run.test.rougeL : run.test.bleu_score;
        ++n;
    }
    if (n == 0) {
        throw std::invalid_argument("ablation mean: no runs for variant " + variant_name(k));
    }
    return sum / static_cast<double>(n);
}

AblationResult ablation_suite(const Split& split, const RoleTable& roles,
                              const Hyperparams& base, const AblationOptions& opt) {
    base.validate();
    if (opt.ks.empty()) {
        throw std::invalid_argument("ablation: no variants requested");
    }
    if (opt.n_seeds < 1) {
        throw std::invalid_argument("ablation: need at least one seed");
    }
    const int gen_role = roles.lookup(base.gen_role);
    if (gen_role < 0) {
        throw std::invalid_argument("ablation: generation role '" + base.gen_role +
                                    "' is not in the corpus role table");
    }

    const auto train_pairs = make_training_pairs(split.train, gen_role);
    const auto dev_pairs = make_training_pairs(split.dev, gen_role);
    const auto test_pairs = make_training_pairs(split.test, gen_role);
    if (train_pairs.empty()) {
        throw std::invalid_argument("ablation: training split yields no pairs");
    }
    if (test_pairs.empty()) {
        throw std::invalid_argument("ablation: test split yields no pairs");
    }

    const Vocabulary vocab =
        build_vocabulary(train_pairs, base.vocab_max_size, base.vocab_min_freq);

    const bool need_retrieval =
        std::any_of(opt.ks.begin(), opt.ks.end(), [](int k) { return k >= 1; });
    CaseIndex index;
    std::optional<TfIdfCosineScorer> scorer;
    if (need_retrieval) {
        index = CaseIndex::build(split.train);
        scorer.emplace(index);
    }
    if (!opt.report_dir.empty()) {
        std::filesystem::create_directories(opt.report_dir);
    }

    AblationResult result;
    for (int k : opt.ks) {
        variant_name(k);  // range check before any training time is spent
        for (int s = 0; s < opt.n_seeds; ++s) {
            Hyperparams hp = base;
            hp.k = k;
            hp.seed = base.seed + static_cast<std::uint64_t>(s);

            Rng init_rng(hp.seed);
            ModelParams mp;
            mp.init(hp, vocab.size(), roles.size(), init_rng);

            TrainOptions topt;
            topt.quiet = opt.quiet;
            if (k >= 1) {
                topt.index = &index;
                topt.scorer = &*scorer;
            }
            if (!opt.report_dir.empty()) {
                topt.report_path = (std::filesystem::path(opt.report_dir) /
                                    ("train_" + variant_name(k) + "_seed" +
                                     std::to_string(hp.seed) + ".jsonl"))
                                       .string();
            }
            if (!opt.quiet) {
                std::cout << "[ablate] training " << variant_name(k) << " seed " << hp.seed
                          << std::endl;
            }
            train(mp, vocab, train_pairs, dev_pairs, hp, topt);

            GenOptions gen_opt;
            gen_opt.max_len = hp.max_len;
            gen_opt.beam = 1;  // comparisons are over greedy decoding
            MetricReport test =
                evaluate_model(mp, vocab, test_pairs, k >= 1 ? &index : nullptr,
                               k >= 1 ? &*scorer : nullptr, k, gen_opt, variant_name(k));
            if (!opt.quiet) {
                std::cout << "[ablate] " << variant_name(k) << " seed " << hp.seed
                          << " test bleu " << 100.0 * test.bleu_score << std::endl;
            }
            result.runs.push_back(AblationRun{k, hp.seed, std::move(test)});
        }
    }
    return result;
}

namespace {

struct Spread {
    double mean = 0.0;
    double sd = 0.0;
};

Spread seed_spread(const AblationResult& res, int k, int metric) {
    std::vector<double> xs;
    for (const AblationRun& run : res.runs) {
        if (run.k != k) {
            continue;
        }
        xs.push_back(metric == 0   ? run.test.rouge1
                     : metric == 1 ? run.test.rougeL
                                   : run.test.bleu_score);
    }
    Spread s;
    s.mean = mean_of(xs);
    double var = 0.0;
    for (double x : xs) {
        var += (x - s.mean) * (x - s.mean);
    }
    s.sd = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

std::vector<int> variants_in_order(const AblationResult& res) {
    std::vector<int> ks;
    for (const AblationRun& run : res.runs) {
        if (std::find(ks.begin(), ks.end(), run.k) == ks.end()) {
            ks.push_back(run.k);
        }
    }
    return ks;
}

}  // namespace

std::string ablation_table(const AblationResult& res) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(15) << "variant" << std::right << std::setw(16) << "rouge-1"
        << std::setw(16) << "rouge-l" << std::setw(16) << "bleu" << "\n";
    for (int k : variants_in_order(res)) {
        out << std::left << std::setw(15) << variant_name(k) << std::right;
        for (int metric = 0; metric < 3; ++metric) {
            const Spread s = seed_spread(res, k, metric);
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(2) << 100.0 * s.mean << " +- "
                 << 100.0 * s.sd;
            out << std::setw(16) << cell.str();
        }
        out << "\n";
    }
    return out.str();
}

std::string ablation_json(const AblationResult& res) {
    json j;
    j["runs"] = json::array();
    for (const AblationRun& run : res.runs) {
        j["runs"].push_back({{"variant", variant_name(run.k)},
                             {"k", run.k},
                             {"seed", run.seed},
                             {"samples", run.test.samples},
                             {"rouge1", run.test.rouge1},
                             {"rougeL", run.test.rougeL},
                             {"bleu", run.test.bleu_score}});
    }
    j["summary"] = json::array();
    for (int k : variants_in_order(res)) {
        const Spread r1 = seed_spread(res, k, 0);
        const Spread rl = seed_spread(res, k, 1);
        const Spread bl = seed_spread(res, k, 2);
        j["summary"].push_back({{"variant", variant_name(k)},
                                {"k", k},
                                {"rouge1_mean", r1.mean},
                                {"rouge1_sd", r1.sd},
                                {"rougeL_mean", rl.mean},
                                {"rougeL_sd", rl.sd},
                                {"bleu_mean", bl.mean},
                                {"bleu_sd", bl.sd}});
    }
    return j.dump(2);
}

std::string report_json(const MetricReport& r) {
    json j;
    j["variant"] = r.variant;
    j["samples"] = r.samples;
    j["rouge1"] = r.rouge1;
    j["rougeL"] = r.rougeL;
    j["bleu"] = r.bleu_score;
    j["per_rouge1"] = r.per_rouge1;
    j["per_rougeL"] = r.per_rougeL;
    j["per_bleu"] = r.per_bleu;
    return j.dump(2);
}

}  // namespace ccn
