#pragma once

#include "ccn/decoder.hpp"
#include "ccn/retrieval.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ccn {

// −Σ_j log v_f,j(target_j), probabilities floored at 1e-12 before the log.
VarId sequence_nll(Tape& t, const std::vector<VarId>& step_vf,
                   const std::vector<int>& target_ids);

// loss + λ·Σ over every learnable tensor of squared entries, in-graph so
// the penalty's gradient is part of backward().
VarId regularized_objective(Tape& t, VarId loss, ParamStore& store, double lambda);

// Diagonal adaptive-moment optimizer with bias correction.
class Adam {
public:
    explicit Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step();
    long long steps_taken() const { return t_; }

private:
    ParamStore* store_;
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
};

double global_grad_norm(const ParamStore& store);
void clip_gradients(ParamStore& store, double max_norm);  // no-op when max_norm <= 0

struct TrainOptions {
    const CaseIndex* index = nullptr;          // required when hp.k >= 1
    const SimilarityScorer* scorer = nullptr;  // required when hp.k >= 1
    std::string report_path;                   // JSON-lines log; empty = none
    int log_every = 10;
    bool quiet = true;
};

struct TrainReport {
    std::vector<std::pair<long long, double>> loss_curve;  // (step, batch loss)
    std::vector<double> dev_bleu;                          // one entry per epoch
    double best_dev_bleu = -1.0;
    int best_epoch = -1;  // -1 when no dev evaluation ran
    long long steps = 0;
    double wall_seconds = 0.0;  // never serialized, so reports stay bit-stable
};

// Teacher-forced mini-batch training. Similar cases are retrieved once per
// pair (against the provided index) and cached; the best-dev-BLEU parameter
// snapshot is restored into `mp` before returning. Deterministic given
// (seed, data, config). Non-finite loss aborts with the step index.
TrainReport train(ModelParams& mp, const Vocabulary& vocab,
                  const std::vector<TrainingPair>& train_pairs,
                  const std::vector<TrainingPair>& dev_pairs, const Hyperparams& hp,
                  const TrainOptions& opt = {});

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    long long checked = 0;
};

// Compares analytic gradients of the regularized objective on a fixed toy
// pair against central finite differences (ε = 1e-5). Split into stages so
// tests can corrupt the analytic gradients and confirm the harness notices.
class GradChecker {
public:
    // The fixture pair has `context_turns` turns of `turn_tokens` tokens
    // each (plus a fixed 4-token target); shrink both to 1 for the
    // near-linear degenerate regime.
    GradChecker(const Hyperparams& hp_toy, std::uint64_t seed, int context_turns = 3,
                int turn_tokens = 4);

    void compute_analytic();
    std::vector<Mat>& analytic() { return analytic_; }
    GradCheckResult compare(int samples_per_tensor = 40, double eps = 1e-5);
    double objective_value();

private:
    Hyperparams hp_;
    std::uint64_t seed_;
    RoleTable roles_;
    Vocabulary vocab_;
    ModelParams mp_;
    TrainingPair pair_;
    std::optional<SimilarCaseSet> sc_;
    std::vector<Mat> analytic_;

    double eval_objective(bool backward);
};

GradCheckResult gradient_check(const Hyperparams& hp_toy, std::uint64_t seed);

// The shapes the gradient check runs at by default (small enough for fast
// finite differences, large enough to cover every code path).
Hyperparams toy_hyperparams();

}  // namespace ccn
