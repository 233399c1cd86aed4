#pragma once

#include "nac/executor.hpp"
#include "nac/model.hpp"

// Small configurations shared by the unit tests.
inline nac::ExecutorConfig tiny_config() {
    nac::ExecutorConfig c;
    c.layers = 2;
    c.processors = 4;
    c.readouts = 2;
    c.d_model = 4;
    c.d_sig = 3;
    c.d_code = 3;
    c.d_tok = 3;
    c.heads = 2;
    c.readin_heads = 2;
    c.ffn_hidden = 3;
    c.mlp_hidden = 3;
    c.classes = 3;
    return c;
}

inline nac::ModelConfig small_model_config(std::size_t vocab, std::size_t max_len, std::size_t classes) {
    nac::ModelConfig mc;
    mc.executor = nac::ExecutorConfig::desk();
    mc.executor.layers = 2;
    mc.executor.processors = 8;
    mc.executor.readouts = 2;
    mc.executor.d_model = 16;
    mc.executor.d_sig = 8;
    mc.executor.d_code = 8;
    mc.executor.d_tok = 12;
    mc.executor.heads = 2;
    mc.executor.ffn_hidden = 16;
    mc.executor.mlp_hidden = 16;
    mc.executor.classes = classes;
    mc.vocab = vocab;
    mc.max_len = max_len;
    mc.d_pos = 4;
    mc.d_ctx = 8;
    mc.generator_hidden = 16;
    return mc;
}
