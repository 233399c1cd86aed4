#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nac/generator.hpp"
#include "nac/layers.hpp"
#include "nac/params.hpp"
#include "nac/tensor.hpp"

namespace nac {

struct ExecutorConfig {
    std::size_t layers = 4;
    std::size_t processors = 32;
    std::size_t readouts = 4;
    std::size_t d_model = 64;
    std::size_t d_sig = 16;
    std::size_t d_code = 64;
    std::size_t d_tok = 32;
    std::size_t heads = 4;
    std::size_t readin_heads = 1;
    std::size_t ffn_hidden = 64;
    std::size_t mlp_hidden = 64;
    std::size_t classes = 2;
    bool share_weights = false;  // one propagator parameter set for all layers
    SkmdpaConfig kernel;         // heads / d_head follow `heads` and `d_model`

    /// Small configuration used for tests and desk experiments.
    static ExecutorConfig desk();
    /// Tiny-ImageNet scale (L=8, U_p=320, U_o=64, d_model=384, ...).
    static ExecutorConfig large();

    SkmdpaConfig attention_config() const;
    GeneratorConfig generator_config() const;
    void validate() const;
};

/// Additive attention bias for padded token batches: [B, 1, N] with 0 for
/// real tokens and a large negative value past each sample's length.
Tensor padding_bias(const std::vector<std::size_t>& lengths, std::size_t max_len);

struct ReadInParams {
    Norm state_norm, token_norm, ffn_norm;
    AttentionParams attn;
    ModFFNParams ffn;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct PropagatorParams {
    Norm attn_norm, ffn_norm;
    AttentionParams attn;
    ModFFNParams ffn;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct ReadOutParams {
    Norm query_norm, kv_norm, ffn_norm, final_norm;
    AttentionParams attn;
    ModFFNParams ffn;
    Linear head;        // d_model -> classes, shared by read-out modules
    Linear confidence;  // d_model -> 1
    void collect(ParamList& out, const std::string& prefix) const;
};

struct ForwardOptions {
    bool training = true;
    Tensor edge_mask;      // optional [U, U] multiplier on propagator kernels
    Tensor token_bias;     // optional padding_bias() for the read-in
    SkmdpaDiagnostics* diagnostics = nullptr;
    std::vector<Tensor>* kernels_out = nullptr;  // sampled propagator kernels
};

/// Processor states Theta_p^(l), [B, U_p, d_model].
struct ModelState {
    Tensor states;
};

class CircuitExecutor {
public:
    CircuitExecutor(const ExecutorConfig& cfg, std::mt19937_64& rng);

    const ExecutorConfig& config() const { return cfg_; }

    /// tokens [B, N, d_tok] -> Theta^(1).
    ModelState read_in(const Tensor& tokens, const CircuitDesign& design, const ForwardOptions& opts = {}) const;
    /// One propagator layer: SKMDPA round among processors then ModFFN.
    ModelState propagate(const ModelState& state, const CircuitDesign& design, std::size_t layer,
                         std::mt19937_64& rng, const ForwardOptions& opts = {}) const;
    /// Same layer with an explicit kernel ([U, U] or [B, U, U]).
    ModelState propagate_with_kernel(const ModelState& state, const CircuitDesign& design, std::size_t layer,
                                     const Tensor& kernel, const ForwardOptions& opts = {}) const;

    struct ReadOut {
        Tensor logits;              // [B, classes]
        Tensor confidence_weights;  // [B, U_o]
    };
    ReadOut read_out(const ModelState& state, const CircuitDesign& design, std::mt19937_64& rng,
                     const ForwardOptions& opts = {}) const;

    /// read_in -> L x propagate -> read_out.
    Tensor forward(const Tensor& tokens, const CircuitDesign& design, std::mt19937_64& rng,
                   const ForwardOptions& opts = {}) const;

    void collect(ParamList& out, const std::string& prefix) const;

    ReadInParams readin;
    std::vector<PropagatorParams> propagators;
    ReadOutParams readout;

private:
    const PropagatorParams& layer_params(std::size_t layer) const;
    ExecutorConfig cfg_;
};

/// Matmul FLOPs per sample (2 m k n per product), split as
/// total = readin_coeff * N * U + quadratic_coeff * U^2 + linear_coeff * U + constant.
///
///  d = d_model, t = d_tok, c = d_code, h = ffn_hidden, s = d_sig, o = U_o,
///  C = classes, L = layers.
///  readin_coeff    = 4 t H_in                    (scores and token sums, H_in = readin_heads)
///  quadratic_coeff = 4 d L + 2 s                 (propagator scores and mixing, P gram)
///  linear_coeff    = [4 c t + 4 d t + 4 d^2 + 6 c d + 6 d h + 2 c h]  read-in per module
///                  + L [8 d^2 + 10 c d + 6 d h + 2 c h]               propagators
///                  + [4 d^2 + 4 c d + 4 d o + 2 s o]                  read-out keys/values
///  constant        = o [4 d^2 + 6 c d + 6 d h + 2 c h + 2 d C + 2 d + 2 C]
struct FlopEstimate {
    std::uint64_t readin_coeff = 0, quadratic_coeff = 0, linear_coeff = 0, constant = 0;
    std::uint64_t readin = 0;      // readin_coeff * N * U
    std::uint64_t quadratic = 0;   // quadratic_coeff * U^2
    std::uint64_t linear = 0;      // linear_coeff * U
    std::uint64_t propagator = 0;  // propagator share of quadratic + linear
    std::uint64_t total = 0;
};

FlopEstimate flop_estimate(const ExecutorConfig& cfg, std::size_t tokens, std::size_t active_modules);

}  // namespace nac
