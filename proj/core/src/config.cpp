#include "ccn/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int x = std::stoi(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        fail("config: key '" + key + "' wants an integer, got '" + v + "'");
    }
}

long long to_ll(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long x = std::stoll(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        fail("config: key '" + key + "' wants an integer, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        fail("config: key '" + key + "' wants a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        fail("config: key '" + key + "' wants a number, got '" + v + "'");
    }
}

}  // namespace

void apply_override(Hyperparams& hp, const std::string& key, const std::string& value) {
    if (key == "d_w") {
        hp.d_w = to_int(key, value);
    } else if (key == "d_r") {
        hp.d_r = to_int(key, value);
    } else if (key == "hidden") {
        hp.hidden = to_int(key, value);
    } else if (key == "n_blocks") {
        hp.n_blocks = to_int(key, value);
    } else if (key == "n_heads") {
        hp.n_heads = to_int(key, value);
    } else if (key == "dropout") {
        hp.dropout = to_double(key, value);
    } else if (key == "vocab_max_size") {
        hp.vocab_max_size = to_int(key, value);
    } else if (key == "vocab_min_freq") {
        hp.vocab_min_freq = to_int(key, value);
    } else if (key == "gen_role") {
        hp.gen_role = value;
    } else if (key == "lr") {
        hp.lr = to_double(key, value);
    } else if (key == "batch_size") {
        hp.batch_size = to_int(key, value);
    } else if (key == "l2") {
        hp.l2 = to_double(key, value);
    } else if (key == "clip_norm") {
        hp.clip_norm = to_double(key, value);
    } else if (key == "epochs") {
        hp.epochs = to_int(key, value);
    } else if (key == "max_steps") {
        hp.max_steps = to_ll(key, value);
    } else if (key == "seed") {
        hp.seed = to_u64(key, value);
    } else if (key == "max_len") {
        hp.max_len = to_int(key, value);
    } else if (key == "k") {
        hp.k = to_int(key, value);
    } else if (key == "beam") {
        hp.beam = to_int(key, value);
    } else {
        fail("config: unknown key '" + key + "'");
    }
}

Hyperparams parse_config_text(const std::string& text, const Hyperparams& base) {
    Hyperparams hp = base;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail("config: line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
        }
        apply_override(hp, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return hp;
}

Hyperparams load_config(const std::string& path, const Hyperparams& base) {
    std::ifstream in(path);
    if (!in) {
        fail("config: cannot open " + path);
    }
    std::ostringstream all;
    all << in.rdbuf();
    try {
        return parse_config_text(all.str(), base);
    } catch (const std::exception& e) {
        fail(std::string(e.what()) + " (in " + path + ")");
    }
}

std::string serialize_config(const Hyperparams& hp) {
    std::ostringstream out;
    out.precision(17);
    out << "d_w = " << hp.d_w << '\n'
        << "d_r = " << hp.d_r << '\n'
        << "hidden = " << hp.hidden << '\n'
        << "n_blocks = " << hp.n_blocks << '\n'
        << "n_heads = " << hp.n_heads << '\n'
        << "dropout = " << hp.dropout << '\n'
        << "vocab_max_size = " << hp.vocab_max_size << '\n'
        << "vocab_min_freq = " << hp.vocab_min_freq << '\n'
        << "gen_role = " << hp.gen_role << '\n'
        << "lr = " << hp.lr << '\n'
        << "batch_size = " << hp.batch_size << '\n'
        << "l2 = " << hp.l2 << '\n'
        << "clip_norm = " << hp.clip_norm << '\n'
        << "epochs = " << hp.epochs << '\n'
        << "max_steps = " << hp.max_steps << '\n'
        << "seed = " << hp.seed << '\n'
        << "max_len = " << hp.max_len << '\n'
        << "k = " << hp.k << '\n'
        << "beam = " << hp.beam << '\n';
    return out.str();
}

void Hyperparams::validate() const {
    auto positive = [](const char* name, long long v) {
        if (v <= 0) {
            fail(std::string("config: ") + name + " must be positive");
        }
    };
    positive("d_w", d_w);
    positive("d_r", d_r);
    positive("hidden", hidden);
    positive("vocab_max_size", vocab_max_size);
    positive("batch_size", batch_size);
    positive("max_len", max_len);
    positive("beam", beam);
    if (n_blocks < 0) {
        fail("config: n_blocks must be >= 0");
    }
    if (n_heads <= 0 || hidden % n_heads != 0) {
        fail("config: hidden (" + std::to_string(hidden) + ") must divide evenly into n_heads (" +
             std::to_string(n_heads) + ") attention heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        fail("config: dropout (drop rate) must be in [0,1)");
    }
    if (!(lr > 0.0)) {
        fail("config: lr must be positive");
    }
    if (l2 < 0.0) {
        fail("config: l2 must be >= 0");
    }
    if (clip_norm < 0.0) {
        fail("config: clip_norm must be >= 0");
    }
    if (epochs < 0 || max_steps < 0) {
        fail("config: epochs and max_steps must be >= 0");
    }
    if (vocab_min_freq < 1) {
        fail("config: vocab_min_freq must be >= 1");
    }
    if (k < 0 || k > 3) {
        fail("config: k must be in [0,3]");
    }
    if (gen_role.empty()) {
        fail("config: gen_role must be set");
    }
}

}  // namespace ccn
