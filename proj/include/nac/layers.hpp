#pragma once

// Code-conditioned layers and signature-gated attention.
//
// ModFC:   y = W (x * (1 + alpha * LayerNorm(W_c c))) + b
// ModFFN:  ModFC(d -> 2h), GEGLU, ModFC(h -> d), one code for both.
// Kernel:  P_ij = exp(-(1 - cos(s_i, t_j)) / eps), K ~ BinaryConcrete(P, tau)
// SKMDPA:  W = softmax_j(q.k / sqrt(d_head) + log(K_ij / (delta + sum_j K_ij)))

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nac/params.hpp"
#include "nac/tensor.hpp"

namespace nac {

class DegenerateSignatureError : public ContractError {
public:
    using ContractError::ContractError;
};

inline constexpr double kModulationInit = 0.1;
inline constexpr double kLogKernelFloor = 1e-20;
inline constexpr double kProbabilityClamp = 1e-6;

struct ModFCParams {
    Tensor weight;     // [d_out, d_in]
    Tensor bias;       // [d_out]
    Tensor cond;       // W_c, [d_in, d_code]
    Tensor alpha;      // scalar
    Tensor ln_gain;    // [d_in]
    Tensor ln_bias;    // [d_in]

    static ModFCParams init(std::size_t d_in, std::size_t d_out, std::size_t d_code, std::mt19937_64& rng);
    std::size_t d_in() const { return weight.dim(1); }
    std::size_t d_out() const { return weight.dim(0); }
    std::size_t d_code() const { return cond.dim(1); }
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Multiplicative modulation 1 + alpha * LayerNorm(W_c c) for codes of
/// shape [..., d_code]; result is [..., d_in].
Tensor modfc_modulation(const Tensor& codes, const ModFCParams& p);

/// ModFC applied to x [..., d_in] with codes whose modulation broadcasts
/// against x (e.g. codes [U, d_code] for x [B, U, d_in]).
Tensor modfc(const Tensor& x, const Tensor& codes, const ModFCParams& p);

struct ModFFNParams {
    ModFCParams up;    // d -> 2h (GEGLU halves)
    ModFCParams down;  // h -> d

    static ModFFNParams init(std::size_t d, std::size_t hidden, std::size_t d_code, std::mt19937_64& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

Tensor modffn(const Tensor& x, const Tensor& codes, const ModFFNParams& p);

/// Parameter count of L stacked two-layer ModFFNs sharing U codes, counted
/// as L * (2 d_in d_h + 2 d_c d_h) + U d_c.
std::uint64_t modffn_parameter_count(std::uint64_t layers, std::uint64_t d_in, std::uint64_t d_hidden,
                                     std::uint64_t d_code, std::uint64_t modules);

/// exp(-(1 - cos)/eps) between rows of S [Uq, d] (or [B, Uq, d]) and T.
Tensor link_probabilities(const Tensor& queries, const Tensor& keys, double epsilon);

/// Binary Concrete sample sigmoid((logit(P) + logit(u)) / tau) with the
/// given uniform draws (same element count as P).
Tensor sample_kernel(const Tensor& probs, double tau, std::vector<double> uniforms);
Tensor sample_kernel(const Tensor& probs, double tau, std::mt19937_64& rng);

/// Uniform draw in the open interval (0, 1) from 53 random bits.
double open_uniform(std::mt19937_64& rng);

enum class KernelEvalMode : std::uint8_t { Sample, HardThreshold };

struct SkmdpaConfig {
    double epsilon = 1.0;
    double tau = 0.5;
    double delta = 1e-6;
    std::size_t heads = 4;
    std::size_t d_head = 16;
    KernelEvalMode eval_mode = KernelEvalMode::Sample;

    void validate() const;
};

/// Kernel used by one attention call: a Concrete sample when training (or in
/// Sample eval mode), otherwise the constant 1[P > 0.5].
Tensor make_kernel(const Tensor& probs, const SkmdpaConfig& cfg, bool training, std::mt19937_64& rng);

/// Counts rows whose kernel is entirely closed.
struct SkmdpaDiagnostics {
    std::size_t degenerate_rows = 0;
};

/// softmax_j(scores + log(K_hat + 1e-20)); scores [..., Uq, Uk], kernel
/// broadcastable to scores.
Tensor kernel_attention_weights(const Tensor& scores, const Tensor& kernel, double delta,
                                SkmdpaDiagnostics* diag = nullptr);

struct AttentionParams {
    ModFCParams query;
    ModFCParams key;
    ModFCParams value;
    ModFCParams output;

    static AttentionParams init(std::size_t d_query_in, std::size_t d_kv_in, std::size_t d_model,
                                std::size_t d_code, std::mt19937_64& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Multi-head SKMDPA. queries [B, Uq, d_q], keys_values [B, Uk, d_kv];
/// codes broadcast against them. The kernel ([Uq, Uk] or [B, Uq, Uk]) is
/// shared by all heads. Returns [B, Uq, d_model].
Tensor skmdpa(const Tensor& queries, const Tensor& query_codes, const Tensor& keys_values,
              const Tensor& kv_codes, const Tensor& kernel, const SkmdpaConfig& cfg, const AttentionParams& proj,
              SkmdpaDiagnostics* diag = nullptr, Tensor* weights_out = nullptr);

/// Splits [B, U, H*dh] into [B*H, U, dh].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// Inverse of split_heads.
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

}  // namespace nac
