#include "nac/generator.hpp"

#include <cmath>

namespace nac {

namespace {

double init_scale(std::size_t d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

std::vector<double> row_of(const Tensor& t, std::size_t row, std::size_t sample) {
    const std::size_t width = t.shape().back();
    const std::size_t rows = t.shape()[t.rank() - 2];
    const std::size_t offset = (t.rank() == 3 ? sample * rows : 0) + row;
    auto data = t.data();
    return {data.begin() + static_cast<std::ptrdiff_t>(offset * width),
            data.begin() + static_cast<std::ptrdiff_t>((offset + 1) * width)};
}

// Row selection on axis -2 for [U, d] or [B, U, d] tensors.
Tensor select_modules(const Tensor& t, const std::vector<std::size_t>& rows) {
    if (t.rank() == 2) return index_select(t, rows);
    const std::size_t b = t.dim(0), u = t.dim(1), d = t.dim(2);
    std::vector<std::size_t> flat;
    flat.reserve(b * rows.size());
    for (std::size_t s = 0; s < b; ++s)
        for (auto r : rows) flat.push_back(s * u + r);
    return reshape(index_select(reshape(t, {b * u, d}), flat), {b, rows.size(), d});
}

}  // namespace

ModuleDescriptor CircuitDesign::processor(std::size_t u, std::size_t sample) const {
    return {row_of(proc_signatures, u, sample), row_of(proc_codes, u, sample), row_of(proc_states, u, sample)};
}

ModuleDescriptor CircuitDesign::readout(std::size_t u) const {
    return {row_of(readout_signatures, u, 0), row_of(readout_codes, u, 0), row_of(readout_states, u, 0)};
}

CircuitDesign CircuitDesign::select_processors(const std::vector<std::size_t>& rows) const {
    CircuitDesign out = *this;
    out.proc_signatures = select_modules(proc_signatures, rows);
    out.proc_codes = select_modules(proc_codes, rows);
    out.proc_states = select_modules(proc_states, rows);
    return out;
}

StateMlp StateMlp::init(std::size_t d_code, std::size_t hidden, std::size_t d_model, std::mt19937_64& rng) {
    StateMlp m;
    m.w1 = Tensor::normal({hidden, d_code}, init_scale(d_code), rng, true);
    m.b1 = Tensor::zeros({hidden}, true);
    m.w2 = Tensor::normal({d_model, hidden}, init_scale(hidden), rng, true);
    m.b2 = Tensor::zeros({d_model}, true);
    return m;
}

Tensor StateMlp::operator()(const Tensor& codes) const { return linear(gelu(linear(codes, w1, b1)), w2, b2); }

void StateMlp::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".w1", w1);
    add_param(out, prefix + ".b1", b1);
    add_param(out, prefix + ".w2", w2);
    add_param(out, prefix + ".b2", b2);
}

UnconditionalGenerator::UnconditionalGenerator(const GeneratorConfig& cfg, std::mt19937_64& rng) {
    if (cfg.processors == 0 || cfg.readouts == 0) throw ContractError("generator needs at least one module of each kind");
    proc_signatures = Tensor::normal({cfg.processors, cfg.d_sig}, init_scale(cfg.d_sig), rng, true);
    proc_codes = Tensor::normal({cfg.processors, cfg.d_code}, init_scale(cfg.d_code), rng, true);
    readout_signatures = Tensor::normal({cfg.readouts, cfg.d_sig}, init_scale(cfg.d_sig), rng, true);
    readout_codes = Tensor::normal({cfg.readouts, cfg.d_code}, init_scale(cfg.d_code), rng, true);
    state_mlp = StateMlp::init(cfg.d_code, cfg.mlp_hidden, cfg.d_model, rng);
}

CircuitDesign UnconditionalGenerator::design() const {
    return {proc_signatures, proc_codes, state_mlp(proc_codes),
            readout_signatures, readout_codes, state_mlp(readout_codes)};
}

void UnconditionalGenerator::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".proc_signatures", proc_signatures, false);
    add_param(out, prefix + ".proc_codes", proc_codes, false);
    add_param(out, prefix + ".readout_signatures", readout_signatures, false);
    add_param(out, prefix + ".readout_codes", readout_codes, false);
    state_mlp.collect(out, prefix + ".state_mlp");
}

Linear Linear::init(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
    return {Tensor::normal({d_out, d_in}, init_scale(d_in), rng, true), Tensor::zeros({d_out}, true)};
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
}

Ffn Ffn::init(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::mt19937_64& rng) {
    return {Linear::init(d_in, hidden, rng), Linear::init(hidden, d_out, rng)};
}

void Ffn::collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

MultiHeadAttention MultiHeadAttention::init(std::size_t d_q, std::size_t d_kv, std::size_t d_model,
                                            std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || d_model % heads != 0) throw ContractError("attention width must divide into heads");
    MultiHeadAttention a{Linear::init(d_q, d_model, rng), Linear::init(d_kv, d_model, rng),
                         Linear::init(d_kv, d_model, rng), Linear::init(d_model, d_q, rng), heads};
    return a;
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values) const {
    const std::size_t batch = queries.dim(0);
    const std::size_t d_head = query.weight.dim(0) / heads;
    const Tensor q = split_heads(query(queries), heads);
    const Tensor k = split_heads(key(keys_values), heads);
    const Tensor v = split_heads(value(keys_values), heads);
    const Tensor w = softmax_last(scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_head))));
    return output(merge_heads(bmm(w, v), batch, heads));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
    query.collect(out, prefix + ".q");
    key.collect(out, prefix + ".k");
    value.collect(out, prefix + ".v");
    output.collect(out, prefix + ".o");
}

Norm Norm::init(std::size_t d) { return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)}; }

void Norm::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".gain", gain);
    add_param(out, prefix + ".bias", bias);
}

ConditionalGenerator::ConditionalGenerator(const GeneratorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.processors == 0 || cfg.readouts == 0) throw ContractError("generator needs at least one module of each kind");
    queries = Tensor::normal({cfg.processors, cfg.d_query}, init_scale(cfg.d_query), rng, true);
    norm_q = Norm::init(cfg.d_query);
    norm_ctx = Norm::init(cfg.d_ctx);
    norm_ffn = Norm::init(cfg.d_query);
    norm_self = Norm::init(cfg.d_query);
    norm_out = Norm::init(cfg.d_query);
    cross = MultiHeadAttention::init(cfg.d_query, cfg.d_ctx, cfg.d_query, cfg.heads, rng);
    self = MultiHeadAttention::init(cfg.d_query, cfg.d_query, cfg.d_query, cfg.heads, rng);
    ffn = Ffn::init(cfg.d_query, cfg.ffn_hidden, cfg.d_query, rng);
    sig_head = Ffn::init(cfg.d_query, cfg.ffn_hidden, cfg.d_sig, rng);
    code_head = Ffn::init(cfg.d_query, cfg.ffn_hidden, cfg.d_code, rng);
    readout_signatures = Tensor::normal({cfg.readouts, cfg.d_sig}, init_scale(cfg.d_sig), rng, true);
    readout_codes = Tensor::normal({cfg.readouts, cfg.d_code}, init_scale(cfg.d_code), rng, true);
    state_mlp = StateMlp::init(cfg.d_code, cfg.mlp_hidden, cfg.d_model, rng);
}

CircuitDesign ConditionalGenerator::design(const Tensor& context) const {
    if (context.rank() != 2 && context.rank() != 3) {
        throw DimensionError("conditional generator: context must be [N, d] or [B, N, d], got " +
                             shape_str(context.shape()));
    }
    const Tensor ctx = context.rank() == 2 ? reshape(context, {1, context.dim(0), context.dim(1)}) : context;
    if (ctx.dim(1) == 0) throw ContractError("conditional generator: empty context");
    if (ctx.dim(2) != cfg_.d_ctx) {
        throw DimensionError("conditional generator: context width " + std::to_string(ctx.dim(2)) + " != d_ctx " +
                             std::to_string(cfg_.d_ctx));
    }
    const std::size_t batch = ctx.dim(0);
    // broadcast the learned queries over the batch
    const Tensor ones = Tensor::full({batch, 1, 1}, 1.0);
    Tensor z = mul(ones, queries);
    z = add(z, cross(norm_q(z), norm_ctx(ctx)));
    z = add(z, ffn(norm_ffn(z)));
    const Tensor h = norm_self(z);
    z = add(z, self(h, h));
    const Tensor out = norm_out(z);
    const Tensor signatures = sig_head(out);
    const Tensor codes = code_head(out);
    return {signatures, codes, state_mlp(codes), readout_signatures, readout_codes, state_mlp(readout_codes)};
}

void ConditionalGenerator::collect(ParamList& out, const std::string& prefix) const {
    add_param(out, prefix + ".queries", queries);
    norm_q.collect(out, prefix + ".norm_q");
    norm_ctx.collect(out, prefix + ".norm_ctx");
    norm_ffn.collect(out, prefix + ".norm_ffn");
    norm_self.collect(out, prefix + ".norm_self");
    norm_out.collect(out, prefix + ".norm_out");
    cross.collect(out, prefix + ".cross");
    self.collect(out, prefix + ".self");
    ffn.collect(out, prefix + ".ffn");
    sig_head.collect(out, prefix + ".sig_head");
    code_head.collect(out, prefix + ".code_head");
    add_param(out, prefix + ".readout_signatures", readout_signatures, false);
    add_param(out, prefix + ".readout_codes", readout_codes, false);
    state_mlp.collect(out, prefix + ".state_mlp");
}

}  // namespace nac
