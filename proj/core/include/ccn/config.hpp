#pragma once

#include <cstdint>
#include <string>

namespace ccn {

// All run settings, serializable as flat key=value text. Unknown keys are
// rejected so typos can't silently fall back to defaults.
struct Hyperparams {
    // model dimensions
    int d_w = 300;   // word embedding width
    int d_r = 100;   // role embedding width
    int hidden = 300;
    int n_blocks = 4;  // transformer depth
    int n_heads = 6;   // must divide hidden (see README on the head count)
    double dropout = 0.2;  // drop rate; 0.8 keep-probability

    // vocabulary
    int vocab_max_size = 50000;
    int vocab_min_freq = 1;
    std::string gen_role = "judge";

    // training
    double lr = 5e-4;
    int batch_size = 64;
    double l2 = 1e-6;        // λ
    double clip_norm = 5.0;  // global-norm gradient clip; 0 disables
    int epochs = 10;
    long long max_steps = 0;  // 0 = no cap
    std::uint64_t seed = 1;

    // decoding / retrieval
    int max_len = 40;
    int k = 1;     // similar cases per target; 0 = vertical-only
    int beam = 1;  // 1 = greedy

    void validate() const;  // throws on inconsistent settings
};

// Parse key=value lines ('#' comments, blank lines allowed) on top of base.
Hyperparams parse_config_text(const std::string& text, const Hyperparams& base = {});
Hyperparams load_config(const std::string& path, const Hyperparams& base = {});

// Single key=value assignment (used for CLI overrides); unknown key throws.
void apply_override(Hyperparams& hp, const std::string& key, const std::string& value);

// Resolved snapshot covering every key, parseable by parse_config_text.
std::string serialize_config(const Hyperparams& hp);

}  // namespace ccn
