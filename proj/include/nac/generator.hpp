#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "nac/layers.hpp"
#include "nac/params.hpp"
#include "nac/tensor.hpp"

namespace nac {

/// One module's descriptor values (copies, no history).
struct ModuleDescriptor {
    std::vector<double> signature;
    std::vector<double> code;
    std::vector<double> initial_state;
};

/// Signatures, codes and initial states of all modules, one row per module.
/// Processor tensors are [U_p, d] for a shared design or [B, U_p, d] when
/// the design is generated per sample. Read-out tensors are always [U_o, d].
struct CircuitDesign {
    Tensor proc_signatures;
    Tensor proc_codes;
    Tensor proc_states;
    Tensor readout_signatures;
    Tensor readout_codes;
    Tensor readout_states;

    bool per_sample() const { return proc_signatures.rank() == 3; }
    std::size_t processors() const { return proc_signatures.shape()[proc_signatures.rank() - 2]; }
    std::size_t readouts() const { return readout_signatures.dim(0); }
    ModuleDescriptor processor(std::size_t u, std::size_t sample = 0) const;
    ModuleDescriptor readout(std::size_t u) const;

    /// Restricts processors to `rows` (in the given order).
    CircuitDesign select_processors(const std::vector<std::size_t>& rows) const;
};

struct GeneratorConfig {
    std::size_t processors = 32;
    std::size_t readouts = 4;
    std::size_t d_sig = 16;
    std::size_t d_code = 64;
    std::size_t d_model = 64;
    std::size_t mlp_hidden = 64;
    // conditional generator
    std::size_t d_ctx = 64;
    std::size_t d_query = 64;
    std::size_t heads = 4;
    std::size_t ffn_hidden = 128;
};

/// theta^(0) = Linear(GELU(Linear(code))).
struct StateMlp {
    Tensor w1, b1, w2, b2;

    static StateMlp init(std::size_t d_code, std::size_t hidden, std::size_t d_model, std::mt19937_64& rng);
    Tensor operator()(const Tensor& codes) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

class UnconditionalGenerator {
public:
    UnconditionalGenerator(const GeneratorConfig& cfg, std::mt19937_64& rng);

    CircuitDesign design() const;
    void collect(ParamList& out, const std::string& prefix) const;

    Tensor proc_signatures, proc_codes, readout_signatures, readout_codes;
    StateMlp state_mlp;
};

struct Linear {
    Tensor weight, bias;
    static Linear init(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Linear -> GELU -> Linear.
struct Ffn {
    Linear fc1, fc2;
    static Ffn init(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Plain multi-head dot-product attention with pre-normalized inputs.
struct MultiHeadAttention {
    Linear query, key, value, output;
    std::size_t heads = 1;
    static MultiHeadAttention init(std::size_t d_q, std::size_t d_kv, std::size_t d_model, std::size_t heads,
                                   std::mt19937_64& rng);
    Tensor operator()(const Tensor& queries, const Tensor& keys_values) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct Norm {
    Tensor gain, bias;
    static Norm init(std::size_t d);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Learned per-module queries cross-attend to the context, then an FFN, a
/// self-attention over module slots, and two parallel FFNs emitting the
/// signatures and codes. Read-out descriptors stay unconditional.
class ConditionalGenerator {
public:
    ConditionalGenerator(const GeneratorConfig& cfg, std::mt19937_64& rng);

    /// context: [B, N_ctx, d_ctx] (or [N_ctx, d_ctx] for one sample).
    CircuitDesign design(const Tensor& context) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Tensor queries;
    Norm norm_q, norm_ctx, norm_ffn, norm_self, norm_out;
    MultiHeadAttention cross, self;
    Ffn ffn, sig_head, code_head;
    Tensor readout_signatures, readout_codes;
    StateMlp state_mlp;

private:
    GeneratorConfig cfg_;
};

}  // namespace nac
