#include "ccn/retrieval.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ccn {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::string> token_stream(const Dialogue& d) {
    std::vector<std::string> out;
    for (const auto& t : d.turns) {
        out.insert(out.end(), t.tokens.begin(), t.tokens.end());
    }
    return out;
}

std::vector<std::string> unique_in_order(const std::vector<std::string>& toks) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& t : toks) {
        if (seen.insert(t).second) {
            out.push_back(t);
        }
    }
    return out;
}

}  // namespace

CaseIndex CaseIndex::build(std::vector<Dialogue> ds) {
    if (ds.empty()) {
        fail("index: empty corpus");
    }
    std::sort(ds.begin(), ds.end(),
              [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < ds.size(); ++i) {
        if (ds[i].id == ds[i - 1].id) {
            fail("index: duplicate dialogue id '" + ds[i].id + "'");
        }
    }
    CaseIndex idx;
    idx.docs_ = std::move(ds);
    idx.len_.resize(idx.docs_.size());
    long long total = 0;
    for (std::size_t ord = 0; ord < idx.docs_.size(); ++ord) {
        std::unordered_map<std::string, int> tf;
        long long len = 0;
        for (const auto& turn : idx.docs_[ord].turns) {
            for (const auto& tok : turn.tokens) {
                ++tf[tok];
                ++len;
            }
        }
        idx.len_[ord] = len;
        total += len;
        for (const auto& [tok, n] : tf) {
            idx.postings_[tok].emplace_back(static_cast<int>(ord), n);
        }
    }
    idx.avg_len_ = static_cast<double>(total) / static_cast<double>(idx.docs_.size());
    // Ordinals were appended in increasing order per term already; keep the
    // invariant explicit anyway.
    for (auto& [tok, plist] : idx.postings_) {
        std::sort(plist.begin(), plist.end());
    }
    return idx;
}

const Dialogue* CaseIndex::find(const std::string& id) const {
    auto it = std::lower_bound(docs_.begin(), docs_.end(), id,
                               [](const Dialogue& d, const std::string& key) { return d.id < key; });
    return (it != docs_.end() && it->id == id) ? &*it : nullptr;
}

const std::vector<std::pair<int, int>>* CaseIndex::postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

int CaseIndex::doc_freq(const std::string& term) const {
    const auto* p = postings(term);
    return p ? static_cast<int>(p->size()) : 0;
}

std::vector<std::pair<Dialogue, double>> retrieve_candidates(const CaseIndex& idx,
                                                             const Dialogue& target, int n) {
    if (target.turns.empty()) {
        fail("retrieve: empty target dialogue");
    }
    const int num_docs = idx.doc_count();
    std::vector<double> score(static_cast<std::size_t>(num_docs), 0.0);
    std::vector<char> touched(static_cast<std::size_t>(num_docs), 0);
    for (const auto& term : unique_in_order(token_stream(target))) {
        const auto* plist = idx.postings(term);
        if (!plist) {
            continue;
        }
        const double df = static_cast<double>(plist->size());
        const double idf = std::log(1.0 + (num_docs - df + 0.5) / (df + 0.5));
        for (const auto& [ord, tf] : *plist) {
            const double dl = static_cast<double>(idx.lengths()[static_cast<std::size_t>(ord)]);
            const double denom = tf + kBm25K1 * (1.0 - kBm25B + kBm25B * dl / idx.avg_len());
            score[static_cast<std::size_t>(ord)] += idf * tf * (kBm25K1 + 1.0) / denom;
            touched[static_cast<std::size_t>(ord)] = 1;
        }
    }
    std::vector<int> ords;
    for (int ord = 0; ord < num_docs; ++ord) {
        if (touched[static_cast<std::size_t>(ord)] && idx.docs()[static_cast<std::size_t>(ord)].id != target.id) {
            ords.push_back(ord);
        }
    }
    std::sort(ords.begin(), ords.end(), [&](int a, int b) {
        const double sa = score[static_cast<std::size_t>(a)];
        const double sb = score[static_cast<std::size_t>(b)];
        return sa != sb ? sa > sb : a < b;  // ordinal order == id order
    });
    if (static_cast<int>(ords.size()) > n) {
        ords.resize(static_cast<std::size_t>(n));
    }
    std::vector<std::pair<Dialogue, double>> out;
    out.reserve(ords.size());
    for (int ord : ords) {
        out.emplace_back(idx.docs()[static_cast<std::size_t>(ord)],
                         score[static_cast<std::size_t>(ord)]);
    }
    return out;
}

double TfIdfCosineScorer::score(const Dialogue& target, const Dialogue& candidate) const {
    const double num_docs = idx_->doc_count();
    auto weigh = [&](const Dialogue& d) {
        std::unordered_map<std::string, double> w;
        for (const auto& turn : d.turns) {
            for (const auto& tok : turn.tokens) {
                w[tok] += 1.0;
            }
        }
        double norm_sq = 0.0;
        for (auto& [tok, tf] : w) {
            const double df = static_cast<double>(idx_->doc_freq(tok));
            const double idf = std::log((1.0 + num_docs) / (1.0 + df)) + 1.0;
            tf *= idf;
            norm_sq += tf * tf;
        }
        return std::make_pair(std::move(w), std::sqrt(norm_sq));
    };
    auto [wt, nt] = weigh(target);
    auto [wc, nc] = weigh(candidate);
    if (nt == 0.0 || nc == 0.0) {
        return 0.0;
    }
    double dot = 0.0;
    for (const auto& [tok, v] : wt) {
        auto it = wc.find(tok);
        if (it != wc.end()) {
            dot += v * it->second;
        }
    }
    return std::clamp(dot / (nt * nc), 0.0, 1.0);
}

std::vector<std::pair<Dialogue, double>> rerank(const Dialogue& target,
                                                const std::vector<Dialogue>& candidates,
                                                const SimilarityScorer& scorer) {
    if (candidates.empty()) {
        fail("rerank: no candidates");
    }
    std::vector<std::pair<Dialogue, double>> scored;
    scored.reserve(candidates.size());
    for (const auto& c : candidates) {
        const double s = scorer.score(target, c);
        if (!(s >= 0.0 && s <= 1.0)) {
            fail("rerank: scorer '" + scorer.name() + "' returned " + std::to_string(s) +
                 " outside [0,1] for candidate '" + c.id + "'");
        }
        scored.emplace_back(c, s);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return scored;
}

SimilarCaseSet top_k_similar(const CaseIndex& idx, const Dialogue& target, int k,
                             const SimilarityScorer& scorer, int n) {
    if (k < 1 || k > 3) {
        fail("top_k_similar: k must be in [1,3], got " + std::to_string(k));
    }
    const bool target_in_corpus = idx.find(target.id) != nullptr;
    const int available = idx.doc_count() - (target_in_corpus ? 1 : 0);
    if (available < k) {
        fail("top_k_similar: corpus holds " + std::to_string(available) +
             " other dialogues, need at least " + std::to_string(k));
    }
    auto cands = retrieve_candidates(idx, target, n);
    const int pool_target = std::min(n, available);
    if (static_cast<int>(cands.size()) < pool_target) {
        std::unordered_set<std::string> have;
        have.insert(target.id);
        for (const auto& [d, s] : cands) {
            have.insert(d.id);
        }
        for (const auto& d : idx.docs()) {  // id order
            if (static_cast<int>(cands.size()) >= pool_target) {
                break;
            }
            if (!have.count(d.id)) {
                cands.emplace_back(d, 0.0);
            }
        }
    }
    std::vector<Dialogue> pool;
    pool.reserve(cands.size());
    for (auto& [d, s] : cands) {
        pool.push_back(std::move(d));
    }
    auto reranked = rerank(target, pool, scorer);
    SimilarCaseSet out;
    out.target_id = target.id;
    for (int i = 0; i < k; ++i) {
        out.cases.push_back(std::move(reranked[static_cast<std::size_t>(i)]));
    }
    return out;
}

void save_index(const CaseIndex& idx, const std::string& path, const RoleTable& roles) {
    std::ofstream out(path);
    if (!out) {
        fail("index: cannot write " + path);
    }
    json header{{"format", "ccn-index-v1"},
                {"docs", idx.doc_count()},
                {"roles", roles.names()}};
    out << header.dump() << '\n';
    for (const auto& d : idx.docs()) {
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

CaseIndex load_index(const std::string& path, RoleTable& roles) {
    std::ifstream in(path);
    if (!in) {
        fail("index: cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        fail("index: " + path + " is empty");
    }
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        fail("index: " + path + ":1: " + e.what());
    }
    if (!header.is_object() || header.value("format", "") != "ccn-index-v1") {
        fail("index: " + path + " is not a ccn-index-v1 file");
    }
    std::vector<std::string> saved_roles = header.at("roles").get<std::vector<std::string>>();
    const int expected = header.at("docs").get<int>();
    std::vector<Dialogue> ds;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = "index: " + path + ":" + std::to_string(line_no) + ": ";
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            fail(where + e.what());
        }
        Dialogue d;
        d.id = rec.at("id").get<std::string>();
        for (const auto& jt : rec.at("turns")) {
            Turn t;
            t.role_id = roles.intern(jt.at("role").get<std::string>());
            std::istringstream text(jt.at("text").get<std::string>());
            std::string tok;
            while (text >> tok) {
                t.tokens.push_back(tok);
            }
            if (t.tokens.empty()) {
                fail(where + "turn text has no tokens");
            }
            d.turns.push_back(std::move(t));
        }
        ds.push_back(std::move(d));
    }
    if (static_cast<int>(ds.size()) != expected) {
        fail("index: " + path + " header promises " + std::to_string(expected) +
             " docs, found " + std::to_string(ds.size()));
    }
    return CaseIndex::build(std::move(ds));
}

}  // namespace ccn
