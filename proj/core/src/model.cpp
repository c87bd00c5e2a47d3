#include "ccn/model.hpp"

#include "json.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace ccn {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr char kMagic[8] = {'C', 'C', 'N', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        fail("checkpoint: " + path + " ends early");
    }
    return v;
}

}  // namespace

void EncoderParams::init(ParamStore& ps, const std::string& prefix, const Hyperparams& hp,
                         int vocab_size, Rng& rng) {
    word_emb = ps.add(prefix + ".word_emb", vocab_size, hp.d_w);
    init_uniform(word_emb->value, rng, 0.1);
    utt.init(ps, prefix + ".utt", hp.hidden, hp.d_w + hp.d_r, rng);
    dia.init(ps, prefix + ".dia", hp.hidden, hp.hidden, rng);
    attn_word.init(ps, prefix + ".attn_word", hp.hidden, rng);
    attn_utt.init(ps, prefix + ".attn_utt", hp.hidden, rng);
    blocks.resize(static_cast<std::size_t>(hp.n_blocks));
    for (int i = 0; i < hp.n_blocks; ++i) {
        blocks[static_cast<std::size_t>(i)].init(ps, prefix + ".block" + std::to_string(i),
                                                 hp.hidden, hp.n_heads, rng);
    }
}

void DecoderParams::init(ParamStore& ps, const std::string& prefix, const Hyperparams& hp,
                         int vocab_size, Rng& rng) {
    cell.init(ps, prefix + ".cell", hp.hidden, hp.d_w, rng);
    mix.init(ps, prefix + ".mix", hp.hidden, 2 * hp.hidden, rng);
    out.init(ps, prefix + ".out", vocab_size, hp.hidden, rng);
    auto gate_vec = [&](const std::string& name) {
        Parameter* p = ps.add(name, 1, hp.hidden);
        init_glorot(p->value, rng);
        return p;
    };
    a_h = gate_vec(prefix + ".vgate.h");
    a_c = gate_vec(prefix + ".vgate.c");
    a_s = gate_vec(prefix + ".vgate.s");
    a_b = ps.add(prefix + ".vgate.b", 1, 1);
    b_h = gate_vec(prefix + ".hgate.h");
    b_c = gate_vec(prefix + ".hgate.c");
    b_s = gate_vec(prefix + ".hgate.s");
    b_b = ps.add(prefix + ".hgate.b", 1, 1);
}

void ModelParams::init(const Hyperparams& hp, int vocab, int roles, Rng& rng) {
    vocab_size = vocab;
    n_roles = roles;
    role_emb = store.add("role_emb", roles, hp.d_r);
    init_uniform(role_emb->value, rng, 0.1);
    target_enc.init(store, "target", hp, vocab, rng);
    sc_enc.init(store, "sc", hp, vocab, rng);
    dec.init(store, "dec", hp, vocab, rng);
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail("checkpoint: cannot write " + path);
    }
    out.write(kMagic, sizeof(kMagic));
    put(out, kVersion);
    put(out, std::uint32_t{0});
    put(out, static_cast<std::uint64_t>(store.items().size()));
    for (const auto& p : store.items()) {
        put(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put(out, static_cast<std::uint64_t>(p.value.rows()));
        put(out, static_cast<std::uint64_t>(p.value.cols()));
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    }
    if (!out) {
        fail("checkpoint: write to " + path + " failed");
    }
}

void load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail("checkpoint: cannot open " + path);
    }
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail("checkpoint: " + path + " is not a CCNPARAM file");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
        fail("checkpoint: " + path + " has version " + std::to_string(version) + ", expected " +
             std::to_string(kVersion));
    }
    get<std::uint32_t>(in, path);  // reserved
    const auto count = get<std::uint64_t>(in, path);
    if (count != store.items().size()) {
        fail("checkpoint: " + path + " holds " + std::to_string(count) + " tensors, model has " +
             std::to_string(store.items().size()));
    }
    for (auto& p : store.items()) {
        const auto name_len = get<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            fail("checkpoint: " + path + " ends early");
        }
        if (name != p.name) {
            fail("checkpoint: " + path + " lists tensor '" + name + "' where '" + p.name +
                 "' was expected");
        }
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows != static_cast<std::uint64_t>(p.value.rows()) ||
            cols != static_cast<std::uint64_t>(p.value.cols())) {
            fail("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                 std::to_string(cols) + ", expected " + std::to_string(p.value.rows()) + "x" +
                 std::to_string(p.value.cols()));
        }
        if (!in.read(reinterpret_cast<char*>(p.value.data()),
                     static_cast<std::streamsize>(sizeof(double) * p.value.size()))) {
            fail("checkpoint: " + path + " ends early in tensor '" + name + "'");
        }
    }
}

void save_model_dir(const std::string& dir, const Hyperparams& hp, const Vocabulary& vocab,
                    const RoleTable& roles, const ParamStore& store) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/config.cfg");
        if (!out) {
            fail("model: cannot write " + dir + "/config.cfg");
        }
        out << serialize_config(hp);
    }
    {
        std::ofstream out(dir + "/vocab.json");
        out << json{{"tokens", vocab.tokens()}}.dump() << '\n';
    }
    {
        std::ofstream out(dir + "/roles.json");
        out << json{{"roles", roles.names()}}.dump() << '\n';
    }
    save_checkpoint(store, dir + "/params.ckpt");
}

Model load_model_dir(const std::string& dir) {
    Model m;
    m.hp = load_config(dir + "/config.cfg");
    m.hp.validate();
    auto read_json = [&](const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            fail("model: cannot open " + path);
        }
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail("model: " + path + ": " + e.what());
        }
        return j;
    };
    m.vocab = Vocabulary::from_tokens(
        read_json(dir + "/vocab.json").at("tokens").get<std::vector<std::string>>());
    m.roles = RoleTable::from_names(
        read_json(dir + "/roles.json").at("roles").get<std::vector<std::string>>());
    Rng rng(0);  // values are overwritten by the checkpoint
    m.params.init(m.hp, m.vocab.size(), m.roles.size(), rng);
    load_checkpoint(m.params.store, dir + "/params.ckpt");
    return m;
}

}  // namespace ccn
