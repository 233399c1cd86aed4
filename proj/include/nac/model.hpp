#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>

#include "nac/executor.hpp"
#include "nac/generator.hpp"
#include "nac/params.hpp"
#include "nac/tasks.hpp"

namespace nac {

enum class DesignMode { Unconditional, Conditional };

struct ModelConfig {
    ExecutorConfig executor;
    DesignMode mode = DesignMode::Unconditional;
    std::size_t vocab = 2;
    std::size_t max_len = 16;
    std::size_t d_pos = 16;  // positional part of d_tok; the rest is the symbol embedding
    std::size_t context_vocab = 2;
    std::size_t d_ctx = 32;
    std::size_t generator_hidden = 64;
    /// Unconditional models see the context as extra input tokens with ids
    /// vocab - context_vocab + c (vocab and max_len must include them).
    bool context_as_tokens = false;

    void validate() const;
};

/// Tokenizer + circuit generator + executor.
class NacModel {
public:
    NacModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const CircuitExecutor& executor() const { return *executor_; }

    /// Conditional designs are generated from `batch.contexts`.
    CircuitDesign design(const Batch& batch) const;
    /// Processor link probabilities [U_p, U_p] (or [B, U_p, U_p]).
    Tensor link_probs(const CircuitDesign& design) const;

    SequenceTokenizer::Encoded encode(const Batch& batch) const;
    Tensor forward(const Batch& batch, std::mt19937_64& rng, ForwardOptions opts = {}) const;
    Tensor forward(const Batch& batch, const CircuitDesign& design, std::mt19937_64& rng,
                   ForwardOptions opts = {}) const;

    ParamList params() const;

    UnconditionalGenerator* unconditional() { return uncond_.get(); }
    const UnconditionalGenerator* unconditional() const { return uncond_.get(); }

private:
    ModelConfig cfg_;
    SequenceTokenizer tokenizer_;
    SequenceTokenizer context_embed_;
    std::unique_ptr<UnconditionalGenerator> uncond_;
    std::unique_ptr<ConditionalGenerator> cond_;
    std::unique_ptr<CircuitExecutor> executor_;
};

}  // namespace nac
