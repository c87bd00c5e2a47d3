#include "ccn/training.hpp"

#include "ccn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace ccn {

VarId sequence_nll(Tape& t, const std::vector<VarId>& step_vf,
                   const std::vector<int>& target_ids) {
    if (step_vf.size() != target_ids.size()) {
        throw std::invalid_argument("sequence_nll: distribution/target length mismatch");
    }
    if (step_vf.empty()) {
        throw std::invalid_argument("sequence_nll: empty sequence");
    }
    std::vector<VarId> picks;
    picks.reserve(step_vf.size());
    for (std::size_t i = 0; i < step_vf.size(); ++i) {
        const int id = target_ids[i];
        if (id < 0 || id >= t.val(step_vf[i]).rows()) {
            throw std::out_of_range("sequence_nll: target id out of extended range at step " +
                                    std::to_string(i));
        }
        picks.push_back(t.pick(step_vf[i], id));
    }
    VarId stacked = t.concat_rows(picks);
    return t.cmul(t.sum(t.log(t.clamp_min(stacked, 1e-12))), -1.0);
}

VarId regularized_objective(Tape& t, VarId loss, ParamStore& store, double lambda) {
    if (lambda == 0.0) {
        return loss;
    }
    VarId penalty = -1;
    for (Parameter& p : store.items()) {
        VarId sq = t.sum_squares(t.param(p));
        penalty = penalty < 0 ? sq : t.add(penalty, sq);
    }
    if (penalty < 0) {
        return loss;
    }
    return t.add(loss, t.cmul(penalty, lambda));
}

Adam::Adam(ParamStore& store, double lr, double beta1, double beta2, double eps)
    : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Parameter& p : store.items()) {
        m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
}

void Adam::step() {
    if (m_.size() != store_->items().size()) {
        throw std::logic_error("Adam: parameter set changed after construction");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t i = 0;
    for (Parameter& p : store_->items()) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * p.grad.array().square()).matrix();
        p.value.array() -=
            lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
        ++i;
    }
}

double global_grad_norm(const ParamStore& store) {
    double ss = 0.0;
    for (const Parameter& p : store.items()) {
        ss += p.grad.squaredNorm();
    }
    return std::sqrt(ss);
}

void clip_gradients(ParamStore& store, double max_norm) {
    if (max_norm <= 0.0) {
        return;
    }
    const double norm = global_grad_norm(store);
    if (norm <= max_norm) {
        return;
    }
    const double scale = max_norm / norm;
    for (Parameter& p : store.items()) {
        p.grad *= scale;
    }
}

TrainReport train(ModelParams& mp, const Vocabulary& vocab,
                  const std::vector<TrainingPair>& train_pairs,
                  const std::vector<TrainingPair>& dev_pairs, const Hyperparams& hp,
                  const TrainOptions& opt) {
    hp.validate();
    if (train_pairs.empty()) {
        throw std::invalid_argument("train: no training pairs");
    }
    if (hp.k >= 1 && (opt.index == nullptr || opt.scorer == nullptr)) {
        throw std::invalid_argument("train: k >= 1 requires a retrieval index and scorer");
    }

    const auto wall0 = std::chrono::steady_clock::now();
    std::ofstream log;
    if (!opt.report_path.empty()) {
        log.open(opt.report_path);
        if (!log) {
            throw std::runtime_error("train: cannot open report path: " + opt.report_path);
        }
        log << std::setprecision(17);
    }

    // Each pair's similar cases depend only on the frozen index, so retrieve
    // them once up front instead of once per epoch.
    std::vector<std::optional<SimilarCaseSet>> train_sc(train_pairs.size());
    std::vector<std::optional<SimilarCaseSet>> dev_sc(dev_pairs.size());
    if (hp.k >= 1) {
        for (std::size_t i = 0; i < train_pairs.size(); ++i) {
            train_sc[i] = top_k_similar(*opt.index, train_pairs[i].context, hp.k, *opt.scorer);
        }
        for (std::size_t i = 0; i < dev_pairs.size(); ++i) {
            dev_sc[i] = top_k_similar(*opt.index, dev_pairs[i].context, hp.k, *opt.scorer);
        }
    }

    Rng root(hp.seed);
    Rng shuffle_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    Adam optimizer(mp.store, hp.lr);
    TrainReport report;

    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<Mat> best_values;
    bool capped = false;

    for (int epoch = 0; epoch < hp.epochs && !capped; ++epoch) {
        shuffle_rng.shuffle(order);
        const std::size_t batch = static_cast<std::size_t>(hp.batch_size);
        for (std::size_t start = 0; start < order.size() && !capped; start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            Tape t;
            EncodeOptions enc_opt;
            enc_opt.dropout = hp.dropout;
            enc_opt.rng = &dropout_rng;
            VarId total = -1;
            for (std::size_t b = start; b < stop; ++b) {
                const TrainingPair& pair = train_pairs[order[b]];
                const SimilarCaseSet* sc =
                    train_sc[order[b]] ? &*train_sc[order[b]] : nullptr;
                PairGraph pg = teacher_forced_graph(t, mp, vocab, pair, sc, enc_opt, hp.max_len);
                VarId nll = sequence_nll(t, pg.step_vf, pg.target_ext);
                total = total < 0 ? nll : t.add(total, nll);
            }
            VarId mean_loss = t.cmul(total, 1.0 / static_cast<double>(stop - start));
            VarId objective = regularized_objective(t, mean_loss, mp.store, hp.l2);
            const double loss_value = t.val(objective)(0, 0);
            const long long step = report.steps + 1;
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("training diverged at step " + std::to_string(step));
            }
            mp.store.zero_grad();
            t.backward(objective);
            clip_gradients(mp.store, hp.clip_norm);
            optimizer.step();
            report.steps = step;
            report.loss_curve.emplace_back(step, loss_value);
            if (log && (step == 1 || step % opt.log_every == 0)) {
                log << "{\"step\":" << step << ",\"epoch\":" << epoch
                    << ",\"loss\":" << loss_value << "}\n";
            }
            if (!opt.quiet && step % opt.log_every == 0) {
                std::cout << "step " << step << " loss " << loss_value << std::endl;
            }
            if (hp.max_steps > 0 && step >= hp.max_steps) {
                capped = true;
            }
        }

        if (!dev_pairs.empty()) {
            GenOptions gen_opt;
            gen_opt.max_len = hp.max_len;
            gen_opt.beam = 1;
            double dev = 0.0;
            for (std::size_t i = 0; i < dev_pairs.size(); ++i) {
                const SimilarCaseSet* sc = dev_sc[i] ? &*dev_sc[i] : nullptr;
                GenResult g = generate(mp, vocab, dev_pairs[i].context, sc, gen_opt);
                dev += bleu(g.tokens, dev_pairs[i].target.tokens);
            }
            dev /= static_cast<double>(dev_pairs.size());
            report.dev_bleu.push_back(dev);
            if (log) {
                log << "{\"epoch\":" << epoch << ",\"dev_bleu\":" << dev << "}\n";
            }
            if (!opt.quiet) {
                std::cout << "epoch " << epoch << " dev_bleu " << dev << std::endl;
            }
            if (dev > report.best_dev_bleu) {
                report.best_dev_bleu = dev;
                report.best_epoch = epoch;
                best_values.clear();
                for (const Parameter& p : mp.store.items()) {
                    best_values.push_back(p.value);
                }
            }
        }
    }

    if (!best_values.empty()) {
        std::size_t i = 0;
        for (Parameter& p : mp.store.items()) {
            p.value = best_values[i++];
        }
    }
    if (log && report.best_epoch >= 0) {
        log << "{\"best_epoch\":" << report.best_epoch
            << ",\"best_dev_bleu\":" << report.best_dev_bleu << "}\n";
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return report;
}

namespace {

std::string toy_word(int i) { return "w" + std::to_string(i); }

}  // namespace

GradChecker::GradChecker(const Hyperparams& hp_toy, std::uint64_t seed, int context_turns,
                         int turn_tokens)
    : hp_(hp_toy), seed_(seed) {
    if (context_turns < 1 || turn_tokens < 1) {
        throw std::invalid_argument("GradChecker: fixture needs at least one turn and token");
    }
    hp_.dropout = 0.0;  // finite differences need a deterministic forward pass

    const int role_a = roles_.intern("a");
    const int role_b = roles_.intern("b");

    std::vector<std::string> words;
    const int n_words = hp_.vocab_max_size - Vocabulary::kNumSpecials;
    for (int i = 0; i < n_words; ++i) {
        words.push_back(toy_word(i));
    }
    std::vector<std::string> all = {"<pad>", "<unk>", "<bos>", "<eos>", "<case_sep>"};
    all.insert(all.end(), words.begin(), words.end());
    vocab_ = Vocabulary::from_tokens(all);

    // Context: rotating in-vocabulary words with one out-of-vocabulary token
    // ("ctx_rare") to exercise the copy-extended range.
    pair_.context.id = "toy";
    for (int i = 0; i < context_turns; ++i) {
        Turn turn;
        turn.role_id = (i % 2 == 0) ? role_a : role_b;
        for (int j = 0; j < turn_tokens; ++j) {
            if (i == 1 && j == 1) {
                turn.tokens.push_back("ctx_rare");
            } else {
                turn.tokens.push_back(toy_word((i * turn_tokens + j) % n_words));
            }
        }
        pair_.context.turns.push_back(std::move(turn));
    }
    pair_.target.role_id = role_b;
    pair_.target.tokens = {toy_word(3), "ctx_rare", "sc_rare", toy_word(5)};
    pair_.target_index = context_turns;

    if (hp_.k >= 1) {
        SimilarCaseSet sc;
        sc.target_id = pair_.context.id;
        for (int j = 0; j < hp_.k; ++j) {
            Dialogue d;
            d.id = "sc" + std::to_string(j);
            d.turns.push_back(
                Turn{role_a, {toy_word((6 + j) % n_words), toy_word(7), "sc_rare", toy_word(8)}});
            d.turns.push_back(
                Turn{role_b, {toy_word(9), toy_word(10 % n_words), toy_word(11 % n_words),
                              toy_word(12 % n_words)}});
            sc.cases.emplace_back(std::move(d), 1.0);
        }
        sc_ = std::move(sc);
    }

    Rng init_rng(seed_);
    mp_.init(hp_, vocab_.size(), roles_.size(), init_rng);
}

double GradChecker::eval_objective(bool do_backward) {
    Tape t;
    EncodeOptions opt;  // inference mode: no dropout
    PairGraph pg =
        teacher_forced_graph(t, mp_, vocab_, pair_, sc_ ? &*sc_ : nullptr, opt, hp_.max_len);
    VarId nll = sequence_nll(t, pg.step_vf, pg.target_ext);
    VarId obj = regularized_objective(t, nll, mp_.store, hp_.l2);
    const double value = t.val(obj)(0, 0);
    if (do_backward) {
        mp_.store.zero_grad();
        t.backward(obj);
    }
    return value;
}

void GradChecker::compute_analytic() {
    eval_objective(true);
    analytic_.clear();
    for (const Parameter& p : mp_.store.items()) {
        analytic_.push_back(p.grad);
    }
}

double GradChecker::objective_value() { return eval_objective(false); }

GradCheckResult GradChecker::compare(int samples_per_tensor, double eps) {
    if (analytic_.empty()) {
        compute_analytic();
    }
    GradCheckResult res;
    std::size_t pi = 0;
    for (Parameter& p : mp_.store.items()) {
        Rng sampler = Rng(seed_).fork(1000 + pi);
        const auto n_entries = static_cast<std::uint64_t>(p.value.size());
        const auto draws =
            std::min<std::uint64_t>(static_cast<std::uint64_t>(samples_per_tensor), n_entries);
        for (std::uint64_t s = 0; s < draws; ++s) {
            const auto idx = static_cast<Eigen::Index>(sampler.below(n_entries));
            double* slot = p.value.data() + idx;
            const double orig = *slot;
            *slot = orig + eps;
            const double f_plus = eval_objective(false);
            *slot = orig - eps;
            const double f_minus = eval_objective(false);
            *slot = orig;
            const double gn = (f_plus - f_minus) / (2.0 * eps);
            const double ga = analytic_[pi].data()[idx];
            const double rel = std::abs(ga - gn) / std::max(1.0, std::abs(ga) + std::abs(gn));
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p.name;
            }
        }
        ++pi;
    }
    return res;
}

GradCheckResult gradient_check(const Hyperparams& hp_toy, std::uint64_t seed) {
    GradChecker checker(hp_toy, seed);
    checker.compute_analytic();
    return checker.compare();
}

Hyperparams toy_hyperparams() {
    Hyperparams hp;
    hp.d_w = 12;
    hp.d_r = 6;
    hp.hidden = 16;
    hp.n_blocks = 1;
    hp.n_heads = 2;
    hp.dropout = 0.0;
    hp.vocab_max_size = 20;
    hp.vocab_min_freq = 1;
    hp.lr = 5e-4;
    hp.batch_size = 1;
    hp.l2 = 1e-6;
    hp.clip_norm = 0.0;
    hp.epochs = 0;
    hp.max_steps = 0;
    hp.seed = 7;
    hp.max_len = 40;
    hp.k = 1;
    hp.beam = 1;
    return hp;
}

}  // namespace ccn
