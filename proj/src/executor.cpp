#include "nac/executor.hpp"

#include <cmath>

namespace nac {

ExecutorConfig ExecutorConfig::desk() { return ExecutorConfig{}; }

ExecutorConfig ExecutorConfig::large() {
    ExecutorConfig c;
    c.layers = 8;
    c.processors = 320;
    c.readouts = 64;
    c.d_model = 384;
    c.d_sig = 64;
    c.d_code = 384;
    c.d_tok = 384;
    c.heads = 6;
    c.readin_heads = 1;
    c.ffn_hidden = 1536;
    c.mlp_hidden = 384;
    c.classes = 200;
    c.kernel.tau = 0.5;
    c.kernel.epsilon = 1.0;
    return c;
}

SkmdpaConfig ExecutorConfig::attention_config() const {
    SkmdpaConfig k = kernel;
    k.heads = heads;
    k.d_head = d_model / heads;
    return k;
}

GeneratorConfig ExecutorConfig::generator_config() const {
    GeneratorConfig g;
    g.processors = processors;
    g.readouts = readouts;
    g.d_sig = d_sig;
    g.d_code = d_code;
    g.d_model = d_model;
    g.mlp_hidden = mlp_hidden;
    return g;
}

void ExecutorConfig::validate() const {
    for (auto v : {layers, processors, readouts, d_model, d_sig, d_code, d_tok, heads, readin_heads, ffn_hidden,
                   mlp_hidden, classes}) {
        if (v == 0) throw ContractError("executor configuration values must be positive");
    }
    if (d_model % heads != 0) throw ContractError("d_model must be divisible by heads");
    if (d_model % readin_heads != 0) throw ContractError("d_model must be divisible by readin_heads");
    attention_config().validate();
}

Tensor padding_bias(const std::vector<std::size_t>& lengths, std::size_t max_len) {
    std::vector<double> bias(lengths.size() * max_len, 0.0);
    for (std::size_t b = 0; b < lengths.size(); ++b) {
        if (lengths[b] == 0 || lengths[b] > max_len) throw ContractError("padding_bias: invalid sequence length");
        for (std::size_t j = lengths[b]; j < max_len; ++j) bias[b * max_len + j] = -1e30;
    }
    return Tensor::from({lengths.size(), 1, max_len}, std::move(bias));
}

void ReadInParams::collect(ParamList& out, const std::string& prefix) const {
    state_norm.collect(out, prefix + ".state_norm");
    token_norm.collect(out, prefix + ".token_norm");
    ffn_norm.collect(out, prefix + ".ffn_norm");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
}

void PropagatorParams::collect(ParamList& out, const std::string& prefix) const {
    attn_norm.collect(out, prefix + ".attn_norm");
    ffn_norm.collect(out, prefix + ".ffn_norm");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
}

void ReadOutParams::collect(ParamList& out, const std::string& prefix) const {
    query_norm.collect(out, prefix + ".query_norm");
    kv_norm.collect(out, prefix + ".kv_norm");
    ffn_norm.collect(out, prefix + ".ffn_norm");
    final_norm.collect(out, prefix + ".final_norm");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
    head.collect(out, prefix + ".head");
    confidence.collect(out, prefix + ".confidence");
}

CircuitExecutor::CircuitExecutor(const ExecutorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg.d_model, c = cfg.d_code, h = cfg.ffn_hidden;
    readin.state_norm = Norm::init(d);
    readin.token_norm = Norm::init(cfg.d_tok);
    readin.ffn_norm = Norm::init(d);
    readin.attn = AttentionParams::init(d, cfg.d_tok, d, c, rng);
    readin.ffn = ModFFNParams::init(d, h, c, rng);
    const std::size_t sets = cfg.share_weights ? 1 : cfg.layers;
    for (std::size_t l = 0; l < sets; ++l) {
        PropagatorParams p;
        p.attn_norm = Norm::init(d);
        p.ffn_norm = Norm::init(d);
        p.attn = AttentionParams::init(d, d, d, c, rng);
        p.ffn = ModFFNParams::init(d, h, c, rng);
        propagators.push_back(std::move(p));
    }
    readout.query_norm = Norm::init(d);
    readout.kv_norm = Norm::init(d);
    readout.ffn_norm = Norm::init(d);
    readout.final_norm = Norm::init(d);
    readout.attn = AttentionParams::init(d, d, d, c, rng);
    readout.ffn = ModFFNParams::init(d, h, c, rng);
    readout.head = Linear::init(d, cfg.classes, rng);
    readout.confidence = Linear::init(d, 1, rng);
}

const PropagatorParams& CircuitExecutor::layer_params(std::size_t layer) const {
    if (layer >= cfg_.layers) throw ContractError("propagator layer index out of range");
    return propagators[cfg_.share_weights ? 0 : layer];
}

void CircuitExecutor::collect(ParamList& out, const std::string& prefix) const {
    readin.collect(out, prefix + ".readin");
    for (std::size_t l = 0; l < propagators.size(); ++l) propagators[l].collect(out, prefix + ".prop" + std::to_string(l));
    readout.collect(out, prefix + ".readout");
}

namespace {

// [U, d] -> [B, U, d]; per-sample tensors pass through.
Tensor per_batch(const Tensor& t, std::size_t batch) {
    if (t.rank() == 3) return t;
    return mul(Tensor::full({batch, 1, 1}, 1.0), t);
}

}  // namespace

ModelState CircuitExecutor::read_in(const Tensor& tokens, const CircuitDesign& design,
                                    const ForwardOptions& opts) const {
    if (tokens.rank() != 3) throw DimensionError("read_in: tokens must be [B, N, d_tok], got " + shape_str(tokens.shape()));
    if (tokens.dim(2) != cfg_.d_tok) throw DimensionError("read_in: token width does not match d_tok");
    const std::size_t batch = tokens.dim(0);
    const std::size_t u = design.processors();
    const std::size_t d = cfg_.d_model, heads = cfg_.readin_heads, dh = d / heads;
    const Tensor& codes = design.proc_codes;

    const std::size_t t = cfg_.d_tok;
    const Tensor theta0 = per_batch(design.proc_states, batch);
    const Tensor q = modfc(readin.state_norm(theta0), codes, readin.attn.query);  // [B, U, d]
    const Tensor x = readin.token_norm(tokens);                                  // [B, N, t]

    // Keys and values are ModFCs of every token under every module's code.
    // Both are linear after modulation, so instead of materializing them
    // per module, fold the key weight into the query and the value weight
    // after the token sum:
    //   q . W_k (x * m_k) = ((W_k^T q) * m_k) . x
    //   sum_n a_n W_v (x_n * m_v) = W_v ((sum_n a_n x_n) * m_v)
    // The key bias shifts every score of a row equally and drops out.
    const bool shared = codes.rank() == 2;
    const Shape mod_shape = shared ? Shape{u, 1, t} : Shape{batch, u, 1, t};
    const Tensor m_k = reshape(modfc_modulation(codes, readin.attn.key), mod_shape);
    const Tensor m_v = reshape(modfc_modulation(codes, readin.attn.value), mod_shape);

    const Tensor qh = permute(reshape(q, {batch * u, heads, dh}), {1, 0, 2});  // [H, B*U, dh]
    Tensor qk = bmm(qh, reshape(readin.attn.key.weight, {heads, dh, t}));     // [H, B*U, t]
    qk = permute(reshape(qk, {heads, batch, u, t}), {1, 2, 0, 3});            // [B, U, H, t]
    qk = reshape(mul(qk, m_k), {batch, u * heads, t});

    Tensor scores = scale(bmm_nt(qk, x), 1.0 / std::sqrt(static_cast<double>(dh)));  // [B, U*H, N]
    if (opts.token_bias.defined()) scores = add(scores, opts.token_bias);
    Tensor z = mul(reshape(bmm(softmax_last(scores), x), {batch, u, heads, t}), m_v);
    z = permute(reshape(z, {batch * u, heads, t}), {1, 0, 2});                           // [H, B*U, t]
    Tensor values = bmm_nt(z, reshape(readin.attn.value.weight, {heads, dh, t}));        // [H, B*U, dh]
    values = reshape(permute(values, {1, 0, 2}), {batch, u, d});
    const Tensor attended = add(values, readin.attn.value.bias);
    const Tensor y = add(theta0, modfc(attended, codes, readin.attn.output));
    return {add(y, modffn(readin.ffn_norm(y), codes, readin.ffn))};
}

ModelState CircuitExecutor::propagate_with_kernel(const ModelState& state, const CircuitDesign& design,
                                                  std::size_t layer, const Tensor& kernel,
                                                  const ForwardOptions& opts) const {
    const PropagatorParams& p = layer_params(layer);
    const Tensor& codes = design.proc_codes;
    const Tensor h = p.attn_norm(state.states);
    const Tensor attended =
        skmdpa(h, codes, h, codes, kernel, cfg_.attention_config(), p.attn, opts.diagnostics);
    const Tensor mid = add(state.states, attended);
    return {add(mid, modffn(p.ffn_norm(mid), codes, p.ffn))};
}

ModelState CircuitExecutor::propagate(const ModelState& state, const CircuitDesign& design, std::size_t layer,
                                      std::mt19937_64& rng, const ForwardOptions& opts) const {
    const Tensor probs = link_probabilities(design.proc_signatures, design.proc_signatures, cfg_.kernel.epsilon);
    Tensor kernel = make_kernel(probs, cfg_.attention_config(), opts.training, rng);
    if (opts.edge_mask.defined()) kernel = mul(kernel, opts.edge_mask);
    if (opts.kernels_out) opts.kernels_out->push_back(kernel);
    return propagate_with_kernel(state, design, layer, kernel, opts);
}

CircuitExecutor::ReadOut CircuitExecutor::read_out(const ModelState& state, const CircuitDesign& design,
                                                   std::mt19937_64& rng, const ForwardOptions& opts) const {
    const std::size_t batch = state.states.dim(0);
    const std::size_t uo = design.readouts();
    const Tensor& ro_codes = design.readout_codes;
    const Tensor ro_sigs = design.per_sample() ? per_batch(design.readout_signatures, batch) : design.readout_signatures;
    const Tensor probs = link_probabilities(ro_sigs, design.proc_signatures, cfg_.kernel.epsilon);
    const Tensor kernel = make_kernel(probs, cfg_.attention_config(), opts.training, rng);

    const Tensor queries = per_batch(design.readout_states, batch);
    const Tensor attended = skmdpa(readout.query_norm(queries), ro_codes, readout.kv_norm(state.states),
                                   design.proc_codes, kernel, cfg_.attention_config(), readout.attn, opts.diagnostics);
    Tensor out = add(queries, attended);
    out = add(out, modffn(readout.ffn_norm(out), ro_codes, readout.ffn));
    const Tensor features = readout.final_norm(out);
    const Tensor module_logits = readout.head(features);                                      // [B, Uo, C]
    const Tensor weights = softmax_last(reshape(readout.confidence(features), {batch, uo}));  // [B, Uo]
    const Tensor logits = reshape(bmm(reshape(weights, {batch, 1, uo}), module_logits), {batch, cfg_.classes});
    return {logits, weights};
}

Tensor CircuitExecutor::forward(const Tensor& tokens, const CircuitDesign& design, std::mt19937_64& rng,
                                const ForwardOptions& opts) const {
    ModelState state = read_in(tokens, design, opts);
    const Tensor probs = link_probabilities(design.proc_signatures, design.proc_signatures, cfg_.kernel.epsilon);
    const SkmdpaConfig acfg = cfg_.attention_config();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        // fresh kernel per layer per pass
        Tensor kernel = make_kernel(probs, acfg, opts.training, rng);
        if (opts.edge_mask.defined()) kernel = mul(kernel, opts.edge_mask);
        if (opts.kernels_out) opts.kernels_out->push_back(kernel);
        state = propagate_with_kernel(state, design, l, kernel, opts);
    }
    return read_out(state, design, rng, opts).logits;
}

FlopEstimate flop_estimate(const ExecutorConfig& cfg, std::size_t tokens, std::size_t active_modules) {
    using u64 = std::uint64_t;
    const u64 d = cfg.d_model, t = cfg.d_tok, c = cfg.d_code, h = cfg.ffn_hidden, s = cfg.d_sig, o = cfg.readouts,
              C = cfg.classes, L = cfg.layers;
    const u64 n = tokens, u = active_modules;
    FlopEstimate f;
    f.readin_coeff = 4 * t * cfg.readin_heads;
    f.quadratic_coeff = 4 * d * L + 2 * s;
    const u64 readin_per_module = 4 * c * t + 4 * d * t + 4 * d * d + 6 * c * d + 6 * d * h + 2 * c * h;
    const u64 prop_per_module = 8 * d * d + 10 * c * d + 6 * d * h + 2 * c * h;
    const u64 readout_per_module = 4 * d * d + 4 * c * d + 4 * d * o + 2 * s * o;
    f.linear_coeff = readin_per_module + L * prop_per_module + readout_per_module;
    f.constant = o * (4 * d * d + 6 * c * d + 6 * d * h + 2 * c * h + 2 * d * C + 2 * d + 2 * C);
    f.readin = f.readin_coeff * n * u;
    f.quadratic = f.quadratic_coeff * u * u;
    f.linear = f.linear_coeff * u;
    f.propagator = f.quadratic + L * prop_per_module * u;
    f.total = f.readin + f.quadratic + f.linear + f.constant;
    return f;
}

}  // namespace nac
