#include "ccn/config.hpp"
#include "ccn/corpus.hpp"
#include "ccn/decoder.hpp"
#include "ccn/eval.hpp"
#include "ccn/model.hpp"
#include "ccn/retrieval.hpp"
#include "ccn/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised after the failure has already been reported on stdout/stderr.
struct SilentFailure {};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw std::runtime_error("missing " + what + ": " + path);
    }
}

ccn::Hyperparams resolve_config(const std::string& config_path,
                                const std::vector<std::string>& sets,
                                ccn::Hyperparams hp = {}) {
    if (!config_path.empty()) {
        require_file(config_path, "config file");
        hp = ccn::load_config(config_path, hp);
    }
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        }
        ccn::apply_override(hp, kv.substr(0, eq), kv.substr(eq + 1));
    }
    hp.validate();
    return hp;
}

// Every run directory carries a re-parseable snapshot of the settings it
// actually used plus the invocation that produced it.
void write_run_files(const std::string& out_dir, const ccn::Hyperparams& hp,
                     const std::string& command, const json& args) {
    fs::create_directories(out_dir);
    const fs::path cfg_path = fs::path(out_dir) / "config.resolved.cfg";
    std::ofstream cfg(cfg_path);
    if (!cfg) {
        throw std::runtime_error("cannot write " + cfg_path.string());
    }
    cfg << ccn::serialize_config(hp);
    std::ofstream run(fs::path(out_dir) / "run.json");
    run << json{{"command", command}, {"args", args}}.dump(2) << "\n";
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += toks[i];
    }
    return out;
}

const std::vector<ccn::Dialogue>& pick_subset(const ccn::Split& split, const std::string& name) {
    if (name == "train") {
        return split.train;
    }
    if (name == "dev") {
        return split.dev;
    }
    return split.test;
}

int lookup_gen_role(const ccn::RoleTable& roles, const std::string& gen_role) {
    const int id = roles.lookup(gen_role);
    if (id < 0) {
        throw std::runtime_error("generation role '" + gen_role +
                                 "' does not occur in the corpus");
    }
    return id;
}

// ---- synth ----

struct SynthArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    int patterns = 5;
    int cases = 40;
    int pool = 1000;
    std::uint64_t seed = 1;
};

void run_synth(const SynthArgs& a) {
    ccn::Hyperparams hp = resolve_config(a.config, a.sets);
    ccn::SynthConfig sc;
    sc.n_patterns = a.patterns;
    sc.cases_per_pattern = a.cases;
    sc.entity_pool_size = a.pool;
    sc.seed = a.seed;

    ccn::RoleTable roles;
    const std::vector<ccn::Dialogue> ds = ccn::generate_synthetic_corpus(sc, roles);
    const ccn::Split split = ccn::split_dataset(ds, a.seed);

    write_run_files(a.out, hp, "synth",
                    json{{"patterns", a.patterns},
                         {"cases", a.cases},
                         {"entity_pool", a.pool},
                         {"seed", a.seed}});
    const fs::path corpus_path = fs::path(a.out) / "corpus.jsonl";
    ccn::save_corpus(corpus_path.string(), ds, roles);
    ccn::save_split_manifests(a.out, split);

    std::cout << "wrote " << ds.size() << " dialogues (" << split.train.size() << " train / "
              << split.dev.size() << " dev / " << split.test.size() << " test) to "
              << corpus_path.string() << "\n";
}

// ---- index ----

struct IndexArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string corpus;
    std::string split_dir;
    std::string out;
};

void run_index(const IndexArgs& a) {
    ccn::Hyperparams hp = resolve_config(a.config, a.sets);
    require_file(a.corpus, "corpus file");
    ccn::RoleTable roles;
    const std::vector<ccn::Dialogue> ds = ccn::load_corpus(a.corpus, "jsonl-v1", roles);

    std::vector<ccn::Dialogue> docs = ds;
    if (!a.split_dir.empty()) {
        // Index the training split only so retrieval can never surface
        // dev/test material.
        docs = ccn::load_split_manifests(a.split_dir, ds).train;
    }
    const ccn::CaseIndex idx = ccn::CaseIndex::build(docs);

    write_run_files(a.out, hp, "index",
                    json{{"corpus", a.corpus}, {"split", a.split_dir}});
    const fs::path index_path = fs::path(a.out) / "index.jsonl";
    ccn::save_index(idx, index_path.string(), roles);
    std::cout << "indexed " << idx.doc_count() << " dialogues -> " << index_path.string()
              << "\n";
}

// ---- train ----

struct TrainArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string corpus;
    std::string split_dir;
    std::string index;
    std::string out;
    bool verbose = false;
};

void run_train(const TrainArgs& a) {
    ccn::Hyperparams hp = resolve_config(a.config, a.sets);
    require_file(a.corpus, "corpus file");
    ccn::RoleTable roles;
    const std::vector<ccn::Dialogue> ds = ccn::load_corpus(a.corpus, "jsonl-v1", roles);
    const ccn::Split split = ccn::load_split_manifests(a.split_dir, ds);

    const int gen_role = lookup_gen_role(roles, hp.gen_role);
    const auto train_pairs = ccn::make_training_pairs(split.train, gen_role);
    const auto dev_pairs = ccn::make_training_pairs(split.dev, gen_role);
    if (train_pairs.empty()) {
        throw std::runtime_error("training split yields no pairs for role '" + hp.gen_role +
                                 "'");
    }
    const ccn::Vocabulary vocab =
        ccn::build_vocabulary(train_pairs, hp.vocab_max_size, hp.vocab_min_freq);

    ccn::CaseIndex idx;
    std::optional<ccn::TfIdfCosineScorer> scorer;
    if (hp.k >= 1) {
        if (a.index.empty()) {
            throw std::runtime_error("k=" + std::to_string(hp.k) +
                                     " requires --index (build one with `ccn index`)");
        }
        require_file(a.index, "retrieval index");
        idx = ccn::load_index(a.index, roles);
        scorer.emplace(idx);
    }

    write_run_files(a.out, hp, "train",
                    json{{"corpus", a.corpus}, {"split", a.split_dir}, {"index", a.index}});

    ccn::TrainOptions topt;
    topt.quiet = !a.verbose;
    topt.report_path = (fs::path(a.out) / "train_report.jsonl").string();
    if (hp.k >= 1) {
        topt.index = &idx;
        topt.scorer = &*scorer;
    }

    ccn::Rng rng(hp.seed);
    ccn::ModelParams mp;
    mp.init(hp, vocab.size(), roles.size(), rng);
    const ccn::TrainReport report = ccn::train(mp, vocab, train_pairs, dev_pairs, hp, topt);

    const fs::path model_dir = fs::path(a.out) / "model";
    ccn::save_model_dir(model_dir.string(), hp, vocab, roles, mp.store);

    std::cout << "trained " << report.steps << " steps on " << train_pairs.size()
              << " pairs";
    if (report.best_epoch >= 0) {
        std::cout << "; best dev BLEU " << std::fixed << std::setprecision(2)
                  << 100.0 * report.best_dev_bleu << " at epoch " << report.best_epoch;
    }
    std::cout << "\nmodel -> " << model_dir.string() << "\n";
}

// ---- generate ----

struct GenerateArgs {
    std::string model;
    std::string corpus;
    std::string split_dir;
    std::string subset = "test";
    std::string index;
    std::string out;
    int beam = 0;     // 0 = model config
    int max_len = 0;  // 0 = model config
};

void run_generate(const GenerateArgs& a) {
    require_file(a.model, "model directory");
    ccn::Model m = ccn::load_model_dir(a.model);
    if (a.beam > 0) {
        m.hp.beam = a.beam;
    }
    if (a.max_len > 0) {
        m.hp.max_len = a.max_len;
    }
    m.hp.validate();

    require_file(a.corpus, "corpus file");
    const std::vector<ccn::Dialogue> ds = ccn::load_corpus(a.corpus, "jsonl-v1", m.roles);
    const ccn::Split split = ccn::load_split_manifests(a.split_dir, ds);
    const int gen_role = lookup_gen_role(m.roles, m.hp.gen_role);
    const auto pairs = ccn::make_training_pairs(pick_subset(split, a.subset), gen_role);
    if (pairs.empty()) {
        throw std::runtime_error("subset '" + a.subset + "' yields no pairs for role '" +
                                 m.hp.gen_role + "'");
    }

    ccn::CaseIndex idx;
    std::optional<ccn::TfIdfCosineScorer> scorer;
    if (m.hp.k >= 1) {
        if (a.index.empty()) {
            throw std::runtime_error("model was trained with k=" + std::to_string(m.hp.k) +
                                     " and needs --index");
        }
        require_file(a.index, "retrieval index");
        idx = ccn::load_index(a.index, m.roles);
        scorer.emplace(idx);
    }

    write_run_files(a.out, m.hp, "generate",
                    json{{"model", a.model},
                         {"corpus", a.corpus},
                         {"split", a.split_dir},
                         {"subset", a.subset},
                         {"index", a.index}});

    const fs::path gen_path = fs::path(a.out) / "generations.jsonl";
    std::ofstream gens(gen_path);
    if (!gens) {
        throw std::runtime_error("cannot write " + gen_path.string());
    }
    ccn::GenOptions gopt;
    gopt.max_len = m.hp.max_len;
    gopt.beam = m.hp.beam;
    for (const ccn::TrainingPair& pair : pairs) {
        std::optional<ccn::SimilarCaseSet> sc;
        if (m.hp.k >= 1) {
            sc = ccn::top_k_similar(idx, pair.context, m.hp.k, *scorer);
        }
        const ccn::GenResult g =
            ccn::generate(m.params, m.vocab, pair.context, sc ? &*sc : nullptr, gopt);
        gens << json{{"id", pair.pair_id()},
                     {"generated", join_tokens(g.tokens)},
                     {"copied_from_context", g.copied_from_context},
                     {"copied_from_sc", g.copied_from_sc}}
                    .dump()
             << "\n";
    }
    std::cout << "wrote " << pairs.size() << " generations -> " << gen_path.string() << "\n";
}

// ---- eval ----

struct EvalArgs {
    std::string model;
    std::string corpus;
    std::string split_dir;
    std::string subset = "test";
    std::string index;
    std::string variant = "vertical-only";
    std::string out;
};

void run_eval(const EvalArgs& a) {
    require_file(a.model, "model directory");
    ccn::Model m = ccn::load_model_dir(a.model);
    const int k = ccn::variant_k(a.variant);

    require_file(a.corpus, "corpus file");
    const std::vector<ccn::Dialogue> ds = ccn::load_corpus(a.corpus, "jsonl-v1", m.roles);
    const ccn::Split split = ccn::load_split_manifests(a.split_dir, ds);
    const int gen_role = lookup_gen_role(m.roles, m.hp.gen_role);
    const auto pairs = ccn::make_training_pairs(pick_subset(split, a.subset), gen_role);
    if (pairs.empty()) {
        throw std::runtime_error("subset '" + a.subset + "' yields no pairs for role '" +
                                 m.hp.gen_role + "'");
    }

    ccn::CaseIndex idx;
    std::optional<ccn::TfIdfCosineScorer> scorer;
    if (k >= 1) {
        if (a.index.empty()) {
            throw std::runtime_error("variant " + a.variant + " needs --index");
        }
        require_file(a.index, "retrieval index");
        idx = ccn::load_index(a.index, m.roles);
        scorer.emplace(idx);
    }

    write_run_files(a.out, m.hp, "eval",
                    json{{"model", a.model},
                         {"corpus", a.corpus},
                         {"split", a.split_dir},
                         {"subset", a.subset},
                         {"index", a.index},
                         {"variant", a.variant}});

    ccn::GenOptions gopt;
    gopt.max_len = m.hp.max_len;
    gopt.beam = 1;  // reported metrics are over greedy decoding
    const ccn::MetricReport rep =
        ccn::evaluate_model(m.params, m.vocab, pairs, k >= 1 ? &idx : nullptr,
                            k >= 1 ? &*scorer : nullptr, k, gopt, a.variant);

    const fs::path rep_path = fs::path(a.out) / "eval_report.json";
    std::ofstream repf(rep_path);
    repf << ccn::report_json(rep) << "\n";

    std::cout << std::fixed << std::setprecision(2);
    std::cout << a.variant << " on " << rep.samples << " " << a.subset
              << " pairs: rouge-1 " << 100.0 * rep.rouge1 << "  rouge-l "
              << 100.0 * rep.rougeL << "  bleu " << 100.0 * rep.bleu_score << "\n";
    std::cout << "report -> " << rep_path.string() << "\n";
}

// ---- ablate ----

struct AblateArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string corpus;
    std::string split_dir;
    std::string variants = "vertical-only,top-1,top-3";
    int seeds = 3;
    std::string out;
    bool verbose = false;
};

void run_ablate(const AblateArgs& a) {
    ccn::Hyperparams hp = resolve_config(a.config, a.sets);
    require_file(a.corpus, "corpus file");
    ccn::RoleTable roles;
    const std::vector<ccn::Dialogue> ds = ccn::load_corpus(a.corpus, "jsonl-v1", roles);
    const ccn::Split split = ccn::load_split_manifests(a.split_dir, ds);

    ccn::AblationOptions aopt;
    aopt.ks.clear();
    std::istringstream names(a.variants);
    std::string name;
    while (std::getline(names, name, ',')) {
        if (!name.empty()) {
            aopt.ks.push_back(ccn::variant_k(name));
        }
    }
    aopt.n_seeds = a.seeds;
    aopt.quiet = !a.verbose;
    aopt.report_dir = a.out;

    write_run_files(a.out, hp, "ablate",
                    json{{"corpus", a.corpus},
                         {"split", a.split_dir},
                         {"variants", a.variants},
                         {"seeds", a.seeds}});

    const ccn::AblationResult res = ccn::ablation_suite(split, roles, hp, aopt);

    const std::string table = ccn::ablation_table(res);
    std::ofstream(fs::path(a.out) / "ablation.txt") << table;
    std::ofstream(fs::path(a.out) / "ablation.json") << ccn::ablation_json(res) << "\n";
    std::cout << table;
    std::cout << "reports -> " << a.out << "\n";
}

// ---- gradcheck ----

struct GradcheckArgs {
    std::vector<std::string> sets;
    std::uint64_t seed = 7;
    int samples = 40;
    double tolerance = 1e-4;
    bool degenerate = false;
    std::string out;
};

void run_gradcheck(const GradcheckArgs& a) {
    ccn::Hyperparams hp = ccn::toy_hyperparams();
    if (a.degenerate) {
        hp.n_blocks = 0;
        hp.k = 0;
    }
    for (const std::string& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        }
        ccn::apply_override(hp, kv.substr(0, eq), kv.substr(eq + 1));
    }
    hp.validate();

    ccn::GradChecker checker(hp, a.seed, a.degenerate ? 1 : 3, a.degenerate ? 1 : 4);
    checker.compute_analytic();
    const ccn::GradCheckResult res = checker.compare(a.samples);
    const bool pass = res.max_rel_err < a.tolerance;

    std::cout << std::scientific << std::setprecision(3);
    std::cout << "max relative error " << res.max_rel_err << " (worst tensor "
              << res.worst_param << ", " << res.checked << " entries checked)\n";
    std::cout << (pass ? "PASS" : "FAIL") << " against tolerance " << a.tolerance << "\n";

    if (!a.out.empty()) {
        write_run_files(a.out, hp, "gradcheck",
                        json{{"seed", a.seed},
                             {"samples", a.samples},
                             {"tolerance", a.tolerance},
                             {"degenerate", a.degenerate}});
        std::ofstream(fs::path(a.out) / "gradcheck.json")
            << json{{"max_rel_err", res.max_rel_err},
                    {"worst_param", res.worst_param},
                    {"checked", res.checked},
                    {"tolerance", a.tolerance},
                    {"pass", pass}}
                   .dump(2)
            << "\n";
    }
    if (!pass) {
        throw SilentFailure{};
    }
}

void add_config_options(CLI::App* cmd, std::string& config, std::vector<std::string>& sets) {
    cmd->add_option("--config", config, "settings file (key=value lines)")
        ->envname("CCN_CONFIG");
    cmd->add_option("--set", sets, "override one setting, e.g. --set epochs=5")
        ->type_name("KEY=VALUE");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-copy dialogue generation toolkit"};
    app.require_subcommand(1);

    auto synth = std::make_shared<SynthArgs>();
    auto* synth_cmd =
        app.add_subcommand("synth", "generate a synthetic court-debate corpus with splits");
    add_config_options(synth_cmd, synth->config, synth->sets);
    synth_cmd->add_option("--patterns", synth->patterns, "number of case patterns")
        ->capture_default_str();
    synth_cmd->add_option("--cases", synth->cases, "cases per pattern")->capture_default_str();
    synth_cmd->add_option("--entity-pool", synth->pool, "size of the shared entity pool")
        ->capture_default_str();
    synth_cmd->add_option("--seed", synth->seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth->out, "output directory")->required();
    synth_cmd->callback([synth] { run_synth(*synth); });

    auto index = std::make_shared<IndexArgs>();
    auto* index_cmd = app.add_subcommand("index", "build the retrieval index");
    add_config_options(index_cmd, index->config, index->sets);
    index_cmd->add_option("--corpus", index->corpus, "corpus file (jsonl-v1)")->required();
    index_cmd->add_option("--split", index->split_dir,
                          "split manifest directory (index the train split only)");
    index_cmd->add_option("--out", index->out, "output directory")->required();
    index_cmd->callback([index] { run_index(*index); });

    auto train = std::make_shared<TrainArgs>();
    auto* train_cmd = app.add_subcommand("train", "train a model on a corpus split");
    add_config_options(train_cmd, train->config, train->sets);
    train_cmd->add_option("--corpus", train->corpus, "corpus file (jsonl-v1)")->required();
    train_cmd->add_option("--split", train->split_dir, "split manifest directory")->required();
    train_cmd->add_option("--index", train->index, "retrieval index (required when k >= 1)");
    train_cmd->add_option("--out", train->out, "output directory")->required();
    train_cmd->add_flag("--verbose", train->verbose, "print per-step progress");
    train_cmd->callback([train] { run_train(*train); });

    auto gen = std::make_shared<GenerateArgs>();
    auto* gen_cmd = app.add_subcommand("generate", "decode utterances for a corpus subset");
    gen_cmd->add_option("--model", gen->model, "trained model directory")->required();
    gen_cmd->add_option("--corpus", gen->corpus, "corpus file (jsonl-v1)")->required();
    gen_cmd->add_option("--split", gen->split_dir, "split manifest directory")->required();
    gen_cmd->add_option("--subset", gen->subset, "train, dev or test")
        ->check(CLI::IsMember({"train", "dev", "test"}))
        ->capture_default_str();
    gen_cmd->add_option("--index", gen->index, "retrieval index (required when k >= 1)");
    gen_cmd->add_option("--beam", gen->beam, "beam width override (0 = model config)");
    gen_cmd->add_option("--max-len", gen->max_len, "length budget override (0 = model config)");
    gen_cmd->add_option("--out", gen->out, "output directory")->required();
    gen_cmd->callback([gen] { run_generate(*gen); });

    auto eval = std::make_shared<EvalArgs>();
    auto* eval_cmd = app.add_subcommand("eval", "score a model on a corpus subset");
    eval_cmd->add_option("--model", eval->model, "trained model directory")->required();
    eval_cmd->add_option("--corpus", eval->corpus, "corpus file (jsonl-v1)")->required();
    eval_cmd->add_option("--split", eval->split_dir, "split manifest directory")->required();
    eval_cmd->add_option("--subset", eval->subset, "train, dev or test")
        ->check(CLI::IsMember({"train", "dev", "test"}))
        ->capture_default_str();
    eval_cmd->add_option("--index", eval->index,
                         "retrieval index (required unless --variant vertical-only)");
    eval_cmd->add_option("--variant", eval->variant,
                         "vertical-only, top-1, top-2 or top-3")
        ->required();
    eval_cmd->add_option("--out", eval->out, "output directory")->required();
    eval_cmd->callback([eval] { run_eval(*eval); });

    auto ablate = std::make_shared<AblateArgs>();
    auto* ablate_cmd =
        app.add_subcommand("ablate", "train and compare copy variants over several seeds");
    add_config_options(ablate_cmd, ablate->config, ablate->sets);
    ablate_cmd->add_option("--corpus", ablate->corpus, "corpus file (jsonl-v1)")->required();
    ablate_cmd->add_option("--split", ablate->split_dir, "split manifest directory")->required();
    ablate_cmd->add_option("--variants", ablate->variants, "comma-separated variant names")
        ->capture_default_str();
    ablate_cmd->add_option("--seeds", ablate->seeds, "training seeds per variant")
        ->capture_default_str();
    ablate_cmd->add_option("--out", ablate->out, "output directory")->required();
    ablate_cmd->add_flag("--verbose", ablate->verbose, "print per-run progress");
    ablate_cmd->callback([ablate] { run_ablate(*ablate); });

    auto grad = std::make_shared<GradcheckArgs>();
    auto* grad_cmd = app.add_subcommand(
        "gradcheck", "compare analytic gradients against finite differences on a toy model");
    grad_cmd->add_option("--set", grad->sets, "override one toy setting")
        ->type_name("KEY=VALUE");
    grad_cmd->add_option("--seed", grad->seed, "fixture seed")->capture_default_str();
    grad_cmd->add_option("--samples", grad->samples, "sampled entries per tensor")
        ->capture_default_str();
    grad_cmd->add_option("--tolerance", grad->tolerance, "pass/fail threshold")
        ->capture_default_str();
    grad_cmd->add_flag("--degenerate", grad->degenerate,
                       "near-linear single-token shape (expects ~1e-8 error)");
    grad_cmd->add_option("--out", grad->out, "optional output directory");
    grad_cmd->callback([grad] { run_gradcheck(*grad); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const SilentFailure&) {
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
