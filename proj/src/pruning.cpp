#include "nac/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace nac {

std::vector<double> module_importance(const Tensor& probs) {
    if (probs.rank() != 2 || probs.dim(0) != probs.dim(1)) {
        throw DimensionError("module_importance: expected a square matrix, got " + shape_str(probs.shape()));
    }
    const std::size_t n = probs.dim(0);
    std::vector<double> q(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) q[i] += probs.data()[i * n + j];
    return q;
}

std::vector<std::size_t> retained_modules(const std::vector<double>& importance, std::size_t k) {
    const std::size_t n = importance.size();
    if (k >= n) throw ContractError("cannot drop " + std::to_string(k) + " of " + std::to_string(n) + " modules");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] < importance[b]; });
    std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<std::size_t> random_retained(std::size_t modules, std::size_t k, std::mt19937_64& rng) {
    if (k >= modules) throw ContractError("cannot drop " + std::to_string(k) + " of " + std::to_string(modules) + " modules");
    std::vector<std::size_t> ids(modules);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.erase(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

CircuitDesign drop_modules(const CircuitDesign& design, const Tensor& probs, std::size_t k) {
    if (design.per_sample()) throw ContractError("drop_modules needs a shared (unconditional) design");
    return design.select_processors(retained_modules(module_importance(probs), k));
}

Tensor eliminate_edges(const Tensor& probs, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ContractError("eliminate_edges: fraction must lie in [0, 1]");
    if (probs.rank() != 2 || probs.dim(0) != probs.dim(1)) {
        throw DimensionError("eliminate_edges: expected a square matrix, got " + shape_str(probs.shape()));
    }
    const std::size_t n = probs.dim(0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
        return probs.data()[a.first * n + a.second] < probs.data()[b.first * n + b.second];
    });
    const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pairs.size()) + 1e-9));
    std::vector<double> mask(n * n, 1.0);
    for (std::size_t e = 0; e < cut; ++e) {
        const auto [i, j] = pairs[e];
        mask[i * n + j] = 0.0;
        mask[j * n + i] = 0.0;
    }
    return Tensor::from({n, n}, std::move(mask));
}

std::vector<PruneReport> prune_sweep(const NacModel& model, const std::vector<Batch>& data,
                                     const std::vector<std::size_t>& schedule, const SweepOptions& opts) {
    if (data.empty()) throw ContractError("prune_sweep: empty dataset");
    std::size_t tokens = 0;
    for (const auto& b : data)
        for (const auto& s : b.tokens) tokens = std::max(tokens, s.size());
    tokens = std::min(tokens, model.config().max_len);

    NoGradGuard guard;
    const CircuitDesign full = model.design(data.front());
    const Tensor probs = model.link_probs(full);
    const auto q = module_importance(probs);

    std::vector<PruneReport> reports;
    for (std::size_t k : schedule) {
        PruneReport r;
        r.dropped_count = k;
        r.retained_module_ids = retained_modules(q, k);
        const CircuitDesign pruned = full.select_processors(r.retained_module_ids);
        r.flops = flop_estimate(model.config().executor, tokens, r.retained_module_ids.size()).total;

        EvalOptions eo;
        eo.seed = opts.seed;
        eo.design_transform = [&](const CircuitDesign&) { return pruned; };
        std::mt19937_64 warm_rng(opts.seed);
        for (std::size_t w = 0; w < opts.warmup_batches; ++w) {
            ForwardOptions fo;
            fo.training = false;
            model.forward(data[w % data.size()], pruned, warm_rng, fo);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const EvalResult er = evaluate(model, data, eo);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.accuracy = er.accuracy;
        r.wall_time_per_sample = secs / static_cast<double>(er.samples);
        reports.push_back(std::move(r));
    }
    return reports;
}

void write_prune_csv(std::ostream& os, const std::vector<PruneReport>& reports) {
    os << "dropped,retained,accuracy,flops,seconds_per_sample\n";
    for (const auto& r : reports) {
        os << r.dropped_count << ',' << r.retained_module_ids.size() << ',' << std::setprecision(10) << r.accuracy << ','
           << r.flops << ',' << r.wall_time_per_sample << '\n';
    }
}

}  // namespace nac
