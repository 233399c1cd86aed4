#include "nac/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace nac {

ModFCParams ModFCParams::init(std::size_t d_in, std::size_t d_out, std::size_t d_code, std::mt19937_64& rng) {
    ModFCParams p;
    p.weight = Tensor::normal({d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng, true);
    p.bias = Tensor::zeros({d_out}, true);
    p.cond = Tensor::normal({d_in, d_code}, 1.0 / std::sqrt(static_cast<double>(d_code)), rng, true);
    p.alpha = Tensor::scalar(kModulationInit, true);
    p.ln_gain = Tensor::full({d_in}, 1.0, true);
    p.ln_bias = Tensor::zeros({d_in}, true);
    return p;
}

void ModFCParams::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
    add_param(out, prefix + ".cond", cond);
    add_param(out, prefix + ".alpha", alpha);
    add_param(out, prefix + ".ln_gain", ln_gain);
    add_param(out, prefix + ".ln_bias", ln_bias);
}

Tensor modfc_modulation(const Tensor& codes, const ModFCParams& p) {
    const Tensor projected = linear(codes, p.cond, Tensor{});
    return add_scalar(mul(p.alpha, layer_norm(projected, p.ln_gain, p.ln_bias)), 1.0);
}

Tensor modfc(const Tensor& x, const Tensor& codes, const ModFCParams& p) {
    if (x.rank() == 0 || x.shape().back() != p.d_in()) {
        throw DimensionError("modfc: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(p.weight.shape()));
    }
    if (codes.rank() == 0 || codes.shape().back() != p.d_code()) {
        throw DimensionError("modfc: codes " + shape_str(codes.shape()) + " do not match conditioning weight " +
                             shape_str(p.cond.shape()));
    }
    return linear(mul(x, modfc_modulation(codes, p)), p.weight, p.bias);
}

ModFFNParams ModFFNParams::init(std::size_t d, std::size_t hidden, std::size_t d_code, std::mt19937_64& rng) {
    return {ModFCParams::init(d, 2 * hidden, d_code, rng), ModFCParams::init(hidden, d, d_code, rng)};
}

void ModFFNParams::collect(ParamList& out, const std::string& prefix) const {
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

Tensor modffn(const Tensor& x, const Tensor& codes, const ModFFNParams& p) {
    return modfc(geglu(modfc(x, codes, p.up)), codes, p.down);
}

std::uint64_t modffn_parameter_count(std::uint64_t layers, std::uint64_t d_in, std::uint64_t d_hidden,
                                     std::uint64_t d_code, std::uint64_t modules) {
    return layers * (2 * d_in * d_hidden + 2 * d_code * d_hidden) + modules * d_code;
}

// ------------------------------------------------------------ link probability

Tensor link_probabilities(const Tensor& queries, const Tensor& keys, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("link_probabilities: bandwidth must be positive");
    if ((queries.rank() != 2 && queries.rank() != 3) || keys.rank() != queries.rank()) {
        throw DimensionError("link_probabilities: expected matching rank-2 or rank-3 signatures, got " +
                             shape_str(queries.shape()) + " and " + shape_str(keys.shape()));
    }
    const bool batched = queries.rank() == 3;
    const std::size_t batch = batched ? queries.dim(0) : 1;
    const std::size_t uq = queries.dim(batched ? 1 : 0);
    const std::size_t uk = keys.dim(batched ? 1 : 0);
    const std::size_t d = queries.shape().back();
    if (keys.shape().back() != d || (batched && keys.dim(0) != batch)) {
        throw DimensionError("link_probabilities: signature shapes differ, " + shape_str(queries.shape()) + " and " +
                             shape_str(keys.shape()));
    }

    auto normalize = [d](const Tensor& s, std::size_t rows) {
        auto unit = std::make_shared<std::vector<double>>(s.numel());
        auto norms = std::make_shared<std::vector<double>>(rows);
        const double* ps = s.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            double n2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) n2 += ps[r * d + k] * ps[r * d + k];
            const double n = std::sqrt(n2);
            if (!(n >= 1e-12)) {
                throw DegenerateSignatureError("link_probabilities: signature row " + std::to_string(r) +
                                               " has norm below 1e-12");
            }
            (*norms)[r] = n;
            for (std::size_t k = 0; k < d; ++k) (*unit)[r * d + k] = ps[r * d + k] / n;
        }
        return std::make_pair(unit, norms);
    };
    auto [q_unit, q_norm] = normalize(queries, batch * uq);
    auto [k_unit, k_norm] = normalize(keys, batch * uk);

    auto cosines = std::make_shared<std::vector<double>>(batch * uq * uk);
    Buffer out(batch * uq * uk);
    const double* pq = queries.data().data();
    const double* pk = keys.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < uq; ++i) {
            const std::size_t qi = b * uq + i;
            for (std::size_t j = 0; j < uk; ++j) {
                const std::size_t kj = b * uk + j;
                double c = 0.0;
                for (std::size_t k = 0; k < d; ++k) c += (*q_unit)[qi * d + k] * (*k_unit)[kj * d + k];
                // identical rows are exactly at distance zero
                if (std::equal(pq + qi * d, pq + (qi + 1) * d, pk + kj * d)) c = 1.0;
                c = std::clamp(c, -1.0, 1.0);
                const std::size_t o = (b * uq + i) * uk + j;
                (*cosines)[o] = c;
                out[o] = std::exp(-(1.0 - c) / epsilon);
            }
        }
    }
    Shape shape = batched ? Shape{batch, uq, uk} : Shape{uq, uk};
    return make_op_result(
        shape, std::move(out), OpKind::LinkProbabilities, {queries, keys},
        [queries, keys, q_unit = q_unit, q_norm = q_norm, k_unit = k_unit, k_norm = k_norm, cosines, batch, uq, uk, d,
         epsilon](const TensorImpl& res) {
            double* gq = queries.requires_grad() ? queries.impl()->ensure_grad().data() : nullptr;
            double* gk = keys.requires_grad() ? keys.impl()->ensure_grad().data() : nullptr;
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < uq; ++i) {
                    const std::size_t qi = b * uq + i;
                    for (std::size_t j = 0; j < uk; ++j) {
                        const std::size_t kj = b * uk + j;
                        const std::size_t o = qi * uk + j;
                        // dP/dcos = P / eps
                        const double gc = res.grad[o] * res.data[o] / epsilon;
                        if (gc == 0.0) continue;
                        const double c = (*cosines)[o];
                        const double* qu = q_unit->data() + qi * d;
                        const double* ku = k_unit->data() + kj * d;
                        if (gq) {
                            const double s = gc / (*q_norm)[qi];
                            for (std::size_t k = 0; k < d; ++k) gq[qi * d + k] += s * (ku[k] - c * qu[k]);
                        }
                        if (gk) {
                            const double s = gc / (*k_norm)[kj];
                            for (std::size_t k = 0; k < d; ++k) gk[kj * d + k] += s * (qu[k] - c * ku[k]);
                        }
                    }
                }
            }
        });
}

// ------------------------------------------------------------ concrete kernel

double open_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

Tensor sample_kernel(const Tensor& probs, double tau, std::vector<double> uniforms) {
    if (!(tau > 0.0)) throw ContractError("sample_kernel: temperature must be positive");
    if (uniforms.size() != probs.numel()) {
        throw DimensionError("sample_kernel: " + std::to_string(uniforms.size()) + " draws for " +
                             shape_str(probs.shape()));
    }
    Buffer out(probs.numel());
    const double* pp = probs.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double p = std::clamp(pp[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        const double u = uniforms[i];
        const double z = (std::log(p / (1.0 - p)) + std::log(u / (1.0 - u))) / tau;
        out[i] = 1.0 / (1.0 + std::exp(-z));
    }
    auto draws = std::make_shared<std::vector<double>>(std::move(uniforms));
    return make_op_result(probs.shape(), std::move(out), OpKind::ConcreteSample, {probs},
                          [probs, tau, draws](const TensorImpl& res) {
                              auto& gp = probs.impl()->ensure_grad();
                              const double* pp = probs.data().data();
                              for (std::size_t i = 0; i < gp.size(); ++i) {
                                  const double p = pp[i];
                                  if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) continue;
                                  const double k = res.data[i];
                                  gp[i] += res.grad[i] * k * (1.0 - k) / (tau * p * (1.0 - p));
                              }
                          });
}

Tensor sample_kernel(const Tensor& probs, double tau, std::mt19937_64& rng) {
    std::vector<double> u(probs.numel());
    for (auto& x : u) x = open_uniform(rng);
    return sample_kernel(probs, tau, std::move(u));
}

void SkmdpaConfig::validate() const {
    if (!(epsilon > 0.0)) throw ContractError("kernel bandwidth epsilon must be positive");
    if (!(tau > 0.0)) throw ContractError("sampling temperature tau must be positive");
    if (!(delta > 0.0 && delta <= 1e-3)) throw ContractError("kernel normalizer delta must lie in (0, 1e-3]");
    if (heads == 0 || d_head == 0) throw ContractError("attention heads and head width must be positive");
}

Tensor make_kernel(const Tensor& probs, const SkmdpaConfig& cfg, bool training, std::mt19937_64& rng) {
    if (training || cfg.eval_mode == KernelEvalMode::Sample) return sample_kernel(probs, cfg.tau, rng);
    std::vector<double> hard(probs.numel());
    const double* pp = probs.data().data();
    for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = pp[i] > 0.5 ? 1.0 : 0.0;
    return Tensor::from(probs.shape(), std::move(hard));
}

// ------------------------------------------------------------------- SKMDPA

Tensor kernel_attention_weights(const Tensor& scores, const Tensor& kernel, double delta, SkmdpaDiagnostics* diag) {
    if (kernel.rank() < 2) throw DimensionError("kernel_attention_weights: kernel must be at least rank 2");
    if (diag) {
        const std::size_t uk = kernel.shape().back();
        const double* pk = kernel.data().data();
        for (std::size_t r = 0; r < kernel.numel() / uk; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < uk; ++j) s += pk[r * uk + j];
            if (s < 1e-12) ++diag->degenerate_rows;
        }
    }
    const Tensor normalized = div(kernel, add_scalar(sum_last(kernel), delta));
    return softmax_last(add(scores, log(add_scalar(normalized, kLogKernelFloor))));
}

AttentionParams AttentionParams::init(std::size_t d_query_in, std::size_t d_kv_in, std::size_t d_model,
                                      std::size_t d_code, std::mt19937_64& rng) {
    AttentionParams p;
    p.query = ModFCParams::init(d_query_in, d_model, d_code, rng);
    p.key = ModFCParams::init(d_kv_in, d_model, d_code, rng);
    p.value = ModFCParams::init(d_kv_in, d_model, d_code, rng);
    p.output = ModFCParams::init(d_model, d_model, d_code, rng);
    return p;
}

void AttentionParams::collect(ParamList& out, const std::string& prefix) const {
    query.collect(out, prefix + ".q");
    key.collect(out, prefix + ".k");
    value.collect(out, prefix + ".v");
    output.collect(out, prefix + ".o");
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || x.dim(2) % heads != 0) {
        throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " + std::to_string(heads) +
                             " heads");
    }
    const std::size_t b = x.dim(0), u = x.dim(1), dh = x.dim(2) / heads;
    if (heads == 1) return x;
    return reshape(permute(reshape(x, {b, u, heads, dh}), {0, 2, 1, 3}), {b * heads, u, dh});
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t u = x.dim(1), dh = x.dim(2);
    return reshape(permute(reshape(x, {batch, heads, u, dh}), {0, 2, 1, 3}), {batch, u, heads * dh});
}

Tensor skmdpa(const Tensor& queries, const Tensor& query_codes, const Tensor& keys_values, const Tensor& kv_codes,
              const Tensor& kernel, const SkmdpaConfig& cfg, const AttentionParams& proj, SkmdpaDiagnostics* diag,
              Tensor* weights_out) {
    if (queries.rank() != 3 || keys_values.rank() != 3 || queries.dim(0) != keys_values.dim(0)) {
        throw DimensionError("skmdpa: expected [B, U, d] queries and keys, got " + shape_str(queries.shape()) +
                             " and " + shape_str(keys_values.shape()));
    }
    const std::size_t batch = queries.dim(0), uq = queries.dim(1), uk = keys_values.dim(1);
    const std::size_t heads = cfg.heads;
    const std::size_t d_model = proj.query.d_out();
    if (d_model != heads * cfg.d_head) {
        throw DimensionError("skmdpa: projection width " + std::to_string(d_model) + " != heads x d_head");
    }
    const bool batched_kernel = kernel.rank() == 3;
    if ((kernel.rank() != 2 && !batched_kernel) || kernel.shape()[kernel.rank() - 2] != uq ||
        kernel.shape().back() != uk || (batched_kernel && kernel.dim(0) != batch)) {
        throw DimensionError("skmdpa: kernel " + shape_str(kernel.shape()) + " does not match " +
                             std::to_string(uq) + " queries and " + std::to_string(uk) + " keys");
    }

    const Tensor q = split_heads(modfc(queries, query_codes, proj.query), heads);
    const Tensor k = split_heads(modfc(keys_values, kv_codes, proj.key), heads);
    const Tensor v = split_heads(modfc(keys_values, kv_codes, proj.value), heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    const Tensor scores = reshape(scale(bmm_nt(q, k), inv_sqrt), {batch, heads, uq, uk});
    const Tensor head_kernel = batched_kernel ? reshape(kernel, {batch, 1, uq, uk}) : kernel;
    const Tensor weights = kernel_attention_weights(scores, head_kernel, cfg.delta, diag);
    if (weights_out) *weights_out = weights;
    const Tensor mixed = bmm(reshape(weights, {batch * heads, uq, uk}), v);
    return modfc(merge_heads(mixed, batch, heads), query_codes, proj.output);
}

}  // namespace nac
