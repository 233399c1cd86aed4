#include "nac/graph_prior.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace nac {

std::string to_string(GraphonFamily f) {
    switch (f) {
        case GraphonFamily::ErdosRenyi: return "erdos_renyi";
        case GraphonFamily::ScaleFree: return "scale_free";
        case GraphonFamily::PlantedPartition: return "planted_partition";
        case GraphonFamily::RingOfCliques: return "ring_of_cliques";
    }
    return "?";
}

std::optional<GraphonFamily> parse_graphon_family(const std::string& name) {
    for (auto f : {GraphonFamily::ErdosRenyi, GraphonFamily::ScaleFree, GraphonFamily::PlantedPartition,
                   GraphonFamily::RingOfCliques}) {
        if (to_string(f) == name) return f;
    }
    return std::nullopt;
}

Graphon Graphon::erdos_renyi(double p) {
    Graphon g;
    g.family = GraphonFamily::ErdosRenyi;
    g.p = p;
    return g;
}

Graphon Graphon::scale_free(std::size_t nodes, double beta) {
    Graphon g;
    g.family = GraphonFamily::ScaleFree;
    g.nodes = nodes;
    g.beta = beta;
    return g;
}

Graphon Graphon::planted_partition(std::size_t blocks, double p_in, double p_out) {
    Graphon g;
    g.family = GraphonFamily::PlantedPartition;
    g.blocks = blocks;
    g.p_in = p_in;
    g.p_out = p_out;
    return g;
}

Graphon Graphon::ring_of_cliques(std::size_t blocks, double p_in, double p_bridge) {
    Graphon g;
    g.family = GraphonFamily::RingOfCliques;
    g.blocks = blocks;
    g.p_in = p_in;
    g.p_bridge = p_bridge;
    return g;
}

Graphon Graphon::preset(GraphonFamily family, std::size_t nodes) {
    switch (family) {
        case GraphonFamily::ErdosRenyi: return erdos_renyi(0.1);
        case GraphonFamily::ScaleFree: return scale_free(nodes, 0.5);
        case GraphonFamily::PlantedPartition: return planted_partition(8, 0.9, 0.05);
        case GraphonFamily::RingOfCliques: return ring_of_cliques(8, 0.9, 0.3);
    }
    return erdos_renyi(0.1);
}

namespace {

std::size_t block_of(double r, std::size_t blocks) {
    // r = 1 belongs to the last block
    return std::min(static_cast<std::size_t>(std::floor(r * static_cast<double>(blocks))), blocks - 1);
}

}  // namespace

double eval_graphon_raw(const Graphon& g, double r_i, double r_j) {
    if (!(r_i >= 0.0 && r_i <= 1.0 && r_j >= 0.0 && r_j <= 1.0)) {
        throw ContractError("eval_graphon: coordinates must lie in [0, 1]");
    }
    switch (g.family) {
        case GraphonFamily::ErdosRenyi:
            return g.p;
        case GraphonFamily::ScaleFree:
            return std::pow(static_cast<double>(g.nodes), g.beta) / 16.0 * std::pow(r_i + 1.0, -g.beta) *
                   std::pow(r_j + 1.0, -g.beta);
        case GraphonFamily::PlantedPartition: {
            if (g.blocks == 0) throw ContractError("planted partition needs at least one block");
            return block_of(r_i, g.blocks) == block_of(r_j, g.blocks) ? g.p_in : g.p_out;
        }
        case GraphonFamily::RingOfCliques: {
            if (g.blocks == 0) throw ContractError("ring of cliques needs at least one block");
            const std::size_t a = block_of(r_i, g.blocks);
            const std::size_t b = block_of(r_j, g.blocks);
            if (a == b) return g.p_in;
            const std::size_t gap = a > b ? a - b : b - a;
            return (gap == 1 || gap == g.blocks - 1) ? g.p_bridge : 0.0;
        }
    }
    return 0.0;
}

double eval_graphon(const Graphon& g, double r_i, double r_j) {
    return std::clamp(eval_graphon_raw(g, r_i, r_j), 0.0, 1.0);
}

std::vector<double> canonical_grid(std::size_t nodes) {
    if (nodes < 2) throw ContractError("canonical grid needs at least two nodes");
    std::vector<double> r(nodes);
    for (std::size_t u = 0; u < nodes; ++u) r[u] = static_cast<double>(u) / static_cast<double>(nodes - 1);
    return r;
}

PriorMatrix sample_prior(const Graphon& g, std::size_t nodes) {
    auto grid = canonical_grid(nodes);
    std::vector<double> p(nodes * nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t j = i; j < nodes; ++j) {
            const double w = eval_graphon(g, grid[i], grid[j]);
            p[i * nodes + j] = w;
            p[j * nodes + i] = w;
        }
    }
    return {Tensor::from({nodes, nodes}, std::move(p)), std::move(grid), g};
}

Tensor assignment_cost(const Tensor& probs, const Tensor& prior) {
    if (probs.rank() != 2 || probs.dim(0) != probs.dim(1) || probs.shape() != prior.shape()) {
        throw DimensionError("assignment_cost: expected two equal square matrices, got " + shape_str(probs.shape()) +
                             " and " + shape_str(prior.shape()));
    }
    const std::size_t n = probs.dim(0);
    std::vector<double> c(n * n, 0.0);
    const double* pp = probs.data().data();
    const double* p0 = prior.data().data();
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t w = 0; w < n; ++w) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double diff = pp[v * n + i] - p0[w * n + i];
                s += diff * diff;
            }
            c[v * n + w] = s;
        }
    }
    return Tensor::from({n, n}, std::move(c));
}

Assignment solve_assignment(const std::vector<double>& cost, std::size_t n) {
    if (cost.size() != n * n) throw DimensionError("solve_assignment: cost matrix is not square");
    for (double c : cost) {
        if (std::isnan(c)) throw ContractError("solve_assignment: NaN in cost matrix");
        if (!std::isfinite(c)) throw ContractError("solve_assignment: non-finite cost");
    }
    // 1-based potentials formulation; column 0 is the virtual start.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match_col(n + 1, 0), way(n + 1, 0);
    for (std::size_t row = 1; row <= n; ++row) {
        match_col[0] = row;
        std::size_t col0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[col0] = 1;
            const std::size_t r0 = match_col[col0];
            double delta = inf;
            std::size_t col1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(r0 - 1) * n + (j - 1)] - u[r0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
        } while (match_col[col0] != 0);
        do {
            const std::size_t col1 = way[col0];
            match_col[col0] = match_col[col1];
            col0 = col1;
        } while (col0 != 0);
    }
    Assignment a;
    a.perm.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) a.perm[match_col[j] - 1] = j - 1;
    for (std::size_t r = 0; r < n; ++r) a.cost += cost[r * n + a.perm[r]];
    return a;
}

Assignment solve_assignment(const Tensor& cost) {
    if (cost.rank() != 2 || cost.dim(0) != cost.dim(1)) {
        throw DimensionError("solve_assignment: expected a square matrix, got " + shape_str(cost.shape()));
    }
    return solve_assignment(cost.values(), cost.dim(0));
}

namespace {

Tensor permuted_prior(const PriorMatrix& prior, const std::vector<std::size_t>& perm) {
    const std::size_t n = perm.size();
    std::vector<double> t(n * n);
    const double* p0 = prior.p0.data().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) t[i * n + j] = p0[perm[i] * n + perm[j]];
    return Tensor::from({n, n}, std::move(t));
}

}  // namespace

RegularizerResult graph_regularizer(const Tensor& probs, const PriorMatrix& prior,
                                    const std::optional<Assignment>& frozen) {
    if (probs.shape() != prior.p0.shape()) {
        throw DimensionError("graph_regularizer: link matrix " + shape_str(probs.shape()) + " vs prior " +
                             shape_str(prior.p0.shape()));
    }
    const std::size_t n = probs.dim(0);
    Assignment matching = frozen ? *frozen : solve_assignment(assignment_cost(probs, prior.p0));
    if (matching.perm.size() != n) throw DimensionError("graph_regularizer: matching size differs from U");
    std::vector<double> mask(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0.0;
    const Tensor off_diag = Tensor::from({n, n}, std::move(mask));
    const Tensor diff = mul(sub(probs, permuted_prior(prior, matching.perm)), off_diag);
    return {sum(square(diff)), std::move(matching)};
}

double mean_offdiag_deviation(const Tensor& probs, const PriorMatrix& prior, const Assignment& matching) {
    const std::size_t n = probs.dim(0);
    const Tensor target = permuted_prior(prior, matching.perm);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) s += std::abs(probs.at({i, j}) - target.at({i, j}));
    return s / static_cast<double>(n * (n - 1));
}

void write_matrix_csv(std::ostream& os, const Tensor& m) {
    const std::size_t rows = m.dim(0), cols = m.numel() / rows;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) os << (j ? "," : "") << m.data()[i * cols + j];
        os << '\n';
    }
}

void write_assignment_csv(std::ostream& os, const Assignment& a) {
    os << "module,prior_slot\n";
    for (std::size_t i = 0; i < a.perm.size(); ++i) os << i << ',' << a.perm[i] << '\n';
}

}  // namespace nac
