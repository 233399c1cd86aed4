#include "nac/model.hpp"

namespace nac {

void ModelConfig::validate() const {
    executor.validate();
    if (vocab == 0 || max_len == 0) throw ContractError("model: vocab and max_len must be positive");
    if (d_pos >= executor.d_tok) throw ContractError("model: d_pos must be smaller than d_tok");
    if (mode == DesignMode::Conditional && (context_vocab == 0 || d_ctx == 0)) {
        throw ContractError("model: conditional mode needs a context vocabulary");
    }
    if (context_as_tokens && (mode == DesignMode::Conditional || context_vocab >= vocab)) {
        throw ContractError("model: context tokens need an unconditional model and room in the vocabulary");
    }
}

NacModel::NacModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const ExecutorConfig& ex = cfg_.executor;
    tokenizer_ = SequenceTokenizer::init(cfg_.vocab, ex.d_tok - cfg_.d_pos, cfg_.max_len, cfg_.d_pos, rng);
    GeneratorConfig g = ex.generator_config();
    if (cfg_.mode == DesignMode::Unconditional) {
        uncond_ = std::make_unique<UnconditionalGenerator>(g, rng);
    } else {
        g.d_ctx = cfg_.d_ctx;
        g.d_query = cfg_.d_ctx;
        g.heads = 1;
        g.ffn_hidden = cfg_.generator_hidden;
        context_embed_ = SequenceTokenizer::init(cfg_.context_vocab, cfg_.d_ctx, 1, 0, rng);
        cond_ = std::make_unique<ConditionalGenerator>(g, rng);
    }
    executor_ = std::make_unique<CircuitExecutor>(ex, rng);
}

CircuitDesign NacModel::design(const Batch& batch) const {
    if (uncond_) return uncond_->design();
    if (batch.contexts.size() != batch.size()) throw ContractError("conditional model: every sample needs a context");
    return cond_->design(context_embed_.encode_batch(batch.contexts).tokens);
}

Tensor NacModel::link_probs(const CircuitDesign& design) const {
    return link_probabilities(design.proc_signatures, design.proc_signatures, cfg_.executor.kernel.epsilon);
}

SequenceTokenizer::Encoded NacModel::encode(const Batch& batch) const {
    if (!cfg_.context_as_tokens) return tokenizer_.encode_batch(batch.tokens);
    if (batch.contexts.size() != batch.size()) throw ContractError("model: every sample needs a context");
    auto seqs = batch.tokens;
    const std::size_t offset = cfg_.vocab - cfg_.context_vocab;
    for (std::size_t b = 0; b < seqs.size(); ++b)
        for (std::size_t c : batch.contexts[b]) seqs[b].push_back(offset + c);
    return tokenizer_.encode_batch(seqs);
}

Tensor NacModel::forward(const Batch& batch, std::mt19937_64& rng, ForwardOptions opts) const {
    return forward(batch, design(batch), rng, std::move(opts));
}

Tensor NacModel::forward(const Batch& batch, const CircuitDesign& design, std::mt19937_64& rng,
                         ForwardOptions opts) const {
    auto enc = encode(batch);
    if (enc.ragged && !opts.token_bias.defined()) opts.token_bias = padding_bias(enc.lengths, enc.tokens.dim(1));
    return executor_->forward(enc.tokens, design, rng, opts);
}

ParamList NacModel::params() const {
    ParamList out;
    tokenizer_.collect(out, "tokenizer");
    if (uncond_) uncond_->collect(out, "generator");
    if (cond_) {
        context_embed_.collect(out, "context");
        cond_->collect(out, "generator");
    }
    executor_->collect(out, "executor");
    return out;
}

}  // namespace nac
