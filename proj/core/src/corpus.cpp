#include "ccn/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccn {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

}  // namespace

int RoleTable::intern(const std::string& role) {
    auto it = by_name_.find(role);
    if (it != by_name_.end()) {
        return it->second;
    }
    int id = static_cast<int>(names_.size());
    names_.push_back(role);
    by_name_[role] = id;
    return id;
}

int RoleTable::lookup(const std::string& role) const {
    auto it = by_name_.find(role);
    return it == by_name_.end() ? -1 : it->second;
}

RoleTable RoleTable::from_names(const std::vector<std::string>& names) {
    if (names.empty() || names[0] != "<sep>") {
        fail("role table: first role must be <sep>");
    }
    RoleTable rt;
    for (std::size_t i = 1; i < names.size(); ++i) {
        if (rt.intern(names[i]) != static_cast<int>(i)) {
            fail("role table: duplicate role '" + names[i] + "'");
        }
    }
    return rt;
}

Vocabulary::Vocabulary() {
    for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>", "<case_sep>"}) {
        add(s);
    }
}

int Vocabulary::add(const std::string& tok) {
    auto it = by_token_.find(tok);
    if (it != by_token_.end()) {
        fail("vocabulary: duplicate token '" + tok + "'");
    }
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(tok);
    by_token_[tok] = id;
    return id;
}

int Vocabulary::lookup(const std::string& tok) const {
    auto it = by_token_.find(tok);
    return it == by_token_.end() ? -1 : it->second;
}

int Vocabulary::id_or_unk(const std::string& tok) const {
    int id = lookup(tok);
    return id < 0 ? kUnk : id;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& all) {
    Vocabulary v;
    if (all.size() < static_cast<std::size_t>(kNumSpecials)) {
        fail("vocabulary: token list shorter than the special set");
    }
    for (int i = 0; i < kNumSpecials; ++i) {
        if (all[static_cast<std::size_t>(i)] != v.token(i)) {
            fail("vocabulary: token list does not start with the special set");
        }
    }
    for (std::size_t i = kNumSpecials; i < all.size(); ++i) {
        v.add(all[i]);
    }
    return v;
}

std::vector<Dialogue> load_corpus(const std::string& path, const std::string& format,
                                  RoleTable& roles) {
    if (format != "jsonl-v1") {
        fail("corpus: unsupported format '" + format + "' (expected jsonl-v1)");
    }
    std::ifstream in(path);
    if (!in) {
        fail("corpus: cannot open " + path);
    }
    std::vector<Dialogue> out;
    std::unordered_map<std::string, int> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = "corpus: " + path + ":" + std::to_string(line_no) + ": ";
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            fail(where + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
            fail(where + "record needs a string 'id'");
        }
        if (!rec.contains("turns") || !rec["turns"].is_array() || rec["turns"].empty()) {
            fail(where + "record needs a non-empty 'turns' array");
        }
        Dialogue d;
        d.id = rec["id"].get<std::string>();
        if (!seen_ids.emplace(d.id, line_no).second) {
            fail(where + "duplicate dialogue id '" + d.id + "'");
        }
        for (const auto& jt : rec["turns"]) {
            if (!jt.is_object() || !jt.contains("role") || !jt["role"].is_string() ||
                !jt.contains("text") || !jt["text"].is_string()) {
                fail(where + "every turn needs string 'role' and 'text'");
            }
            Turn t;
            t.role_id = roles.intern(jt["role"].get<std::string>());
            t.tokens = tokenize(jt["text"].get<std::string>());
            if (t.tokens.empty()) {
                fail(where + "turn text has no tokens");
            }
            d.turns.push_back(std::move(t));
        }
        out.push_back(std::move(d));
    }
    if (out.empty()) {
        fail("corpus: " + path + " holds no records");
    }
    return out;
}

void save_corpus(const std::string& path, const std::vector<Dialogue>& ds,
                 const RoleTable& roles) {
    std::ofstream out(path);
    if (!out) {
        fail("corpus: cannot write " + path);
    }
    for (const auto& d : ds) {
        json turns = json::array();
        for (const auto& t : d.turns) {
            std::string text;
            for (std::size_t i = 0; i < t.tokens.size(); ++i) {
                if (i) {
                    text += ' ';
                }
                text += t.tokens[i];
            }
            turns.push_back({{"role", roles.name(t.role_id)}, {"text", text}});
        }
        out << json{{"id", d.id}, {"turns", turns}}.dump() << '\n';
    }
}

std::vector<TrainingPair> make_training_pairs(const Dialogue& d, int generation_role) {
    std::vector<TrainingPair> out;
    for (std::size_t i = 1; i < d.turns.size(); ++i) {
        if (d.turns[i].role_id != generation_role) {
            continue;
        }
        TrainingPair p;
        p.context.id = d.id;
        p.context.turns.assign(d.turns.begin(), d.turns.begin() + static_cast<long>(i));
        p.target = d.turns[i];
        p.target_index = static_cast<int>(i);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<TrainingPair> make_training_pairs(const std::vector<Dialogue>& ds,
                                              int generation_role) {
    std::vector<TrainingPair> out;
    for (const auto& d : ds) {
        auto pairs = make_training_pairs(d, generation_role);
        out.insert(out.end(), std::make_move_iterator(pairs.begin()),
                   std::make_move_iterator(pairs.end()));
    }
    return out;
}

Vocabulary build_vocabulary(const std::vector<TrainingPair>& pairs, int max_size, int min_freq) {
    if (max_size <= Vocabulary::kNumSpecials) {
        fail("vocabulary: max_size must exceed the special count");
    }
    std::unordered_map<std::string, long long> freq;
    auto count_turn = [&](const Turn& t) {
        for (const auto& tok : t.tokens) {
            ++freq[tok];
        }
    };
    for (const auto& p : pairs) {
        for (const auto& t : p.context.turns) {
            count_turn(t);
        }
        count_turn(p.target);
    }
    std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, n] : ranked) {
        if (n < min_freq || v.size() >= max_size) {
            break;
        }
        v.add(tok);
    }
    return v;
}

Split split_dataset(const std::vector<Dialogue>& ds, std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (n < 10) {
        fail("split: need at least 10 dialogues, have " + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    const auto n_dev = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    Split s;
    for (std::size_t i = 0; i < n; ++i) {
        const Dialogue& d = ds[order[i]];
        if (i < n_train) {
            s.train.push_back(d);
        } else if (i < n_train + n_dev) {
            s.dev.push_back(d);
        } else {
            s.test.push_back(d);
        }
    }
    return s;
}

namespace {

void write_ids(const std::string& path, const std::vector<Dialogue>& ds) {
    std::ofstream out(path);
    if (!out) {
        fail("split: cannot write " + path);
    }
    for (const auto& d : ds) {
        out << d.id << '\n';
    }
}

std::vector<Dialogue> read_ids(const std::string& path,
                               const std::unordered_map<std::string, const Dialogue*>& by_id) {
    std::ifstream in(path);
    if (!in) {
        fail("split: cannot open " + path);
    }
    std::vector<Dialogue> out;
    std::string id;
    while (std::getline(in, id)) {
        if (id.empty()) {
            continue;
        }
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            fail("split: " + path + " names unknown dialogue '" + id + "'");
        }
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace

void save_split_manifests(const std::string& dir, const Split& split) {
    write_ids(dir + "/train.ids", split.train);
    write_ids(dir + "/dev.ids", split.dev);
    write_ids(dir + "/test.ids", split.test);
}

Split load_split_manifests(const std::string& dir, const std::vector<Dialogue>& all) {
    std::unordered_map<std::string, const Dialogue*> by_id;
    for (const auto& d : all) {
        by_id[d.id] = &d;
    }
    Split s;
    s.train = read_ids(dir + "/train.ids", by_id);
    s.dev = read_ids(dir + "/dev.ids", by_id);
    s.test = read_ids(dir + "/test.ids", by_id);
    return s;
}

std::vector<Dialogue> generate_synthetic_corpus(const SynthConfig& cfg, RoleTable& roles) {
    if (cfg.n_patterns < 1 || cfg.cases_per_pattern < 1) {
        fail("synth: pattern and case counts must be at least 1");
    }
    const long long needed =
        static_cast<long long>(cfg.n_patterns) * cfg.cases_per_pattern * kEntitiesPerCase;
    if (cfg.entity_pool_size < needed) {
        fail("synth: entity pool too small for distinct fills: --entity-pool is " +
             std::to_string(cfg.entity_pool_size) + ", need at least " + std::to_string(needed));
    }
    const int plaintiff = roles.intern("plaintiff");
    const int defendant = roles.intern("defendant");
    const int judge = roles.intern("judge");

    // Entities are drawn from a seed-shuffled permutation of the pool in
    // disjoint triples, so every case gets distinct fills for any seed.
    std::vector<int> pool(static_cast<std::size_t>(cfg.entity_pool_size));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = static_cast<int>(i);
    }
    Rng rng(cfg.seed);
    rng.shuffle(pool);

    auto turn = [&](int role, const std::string& text) {
        Turn t;
        t.role_id = role;
        std::istringstream in(text);
        std::string tok;
        while (in >> tok) {
            t.tokens.push_back(tok);
        }
        return t;
    };

    std::vector<Dialogue> out;
    for (int p = 0; p < cfg.n_patterns; ++p) {
        const std::string ps = std::to_string(p);
        const std::string kind = "claim_kind_" + ps;
        const std::string item = "item_" + ps;
        const std::string reason = "reason_" + ps;
        const std::string fact = "fact_" + ps;
        const std::string rule = "rule_" + ps;      // judge-only
        const std::string sec = "section_" + ps;    // judge-only
        const std::string basis = "basis_" + ps;    // judge-only
        const std::string relief = "relief_" + ps;  // judge-only
        for (int ci = 0; ci < cfg.cases_per_pattern; ++ci) {
            const int case_no = p * cfg.cases_per_pattern + ci;
            const std::size_t base = static_cast<std::size_t>(kEntitiesPerCase * case_no);
            const std::string e0 = "ent_" + std::to_string(pool[base]);
            const std::string e1 = "ent_" + std::to_string(pool[base + 1]);
            const std::string e2 = "ent_" + std::to_string(pool[base + 2]);
            Dialogue d;
            d.id = "case_" + ps + "_" + std::to_string(ci);
            d.turns.push_back(turn(plaintiff, "i sue the defendant regarding " + kind +
                                                  " for amount " + e0 + " yuan concerning " +
                                                  item));
            d.turns.push_back(turn(defendant, "i reject the claim about " + item + " because " +
                                                  reason + " and offer only " + e1 + " yuan"));
            d.turns.push_back(turn(plaintiff, "my evidence shows " + fact +
                                                  " happened on date " + e2 +
                                                  " which supports the claim"));
            d.turns.push_back(turn(defendant, "i admit " + fact +
                                                  " partly but still dispute the amount " + e0));
            d.turns.push_back(turn(judge, "court finds " + fact + " proven and holds that " +
                                              rule + " applies under " + sec + " with " + basis +
                                              " therefore defendant shall provide " + relief +
                                              " and pay amount " + e0 + " yuan before date " +
                                              e2));
            out.push_back(std::move(d));
        }
    }
    return out;
}

}  // namespace ccn
