#pragma once

// Graphon priors over module connectivity and the permutation-matched
// structure regularizer.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nac/tensor.hpp"

namespace nac {

enum class GraphonFamily : std::uint8_t { ErdosRenyi, ScaleFree, PlantedPartition, RingOfCliques };

std::string to_string(GraphonFamily f);
std::optional<GraphonFamily> parse_graphon_family(const std::string& name);

struct Graphon {
    GraphonFamily family = GraphonFamily::ErdosRenyi;
    double p = 0.1;            // Erdos-Renyi edge probability
    double beta = 0.5;         // scale-free exponent
    std::size_t nodes = 320;   // U in the scale-free prefactor U^beta / 16
    std::size_t blocks = 8;    // planted partition / ring of cliques
    double p_in = 0.9;
    double p_out = 0.05;
    double p_bridge = 0.3;

    static Graphon erdos_renyi(double p);
    static Graphon scale_free(std::size_t nodes, double beta = 0.5);
    static Graphon planted_partition(std::size_t blocks, double p_in, double p_out);
    static Graphon ring_of_cliques(std::size_t blocks, double p_in, double p_bridge);

    /// Desk defaults for `family` sized for `nodes` modules.
    static Graphon preset(GraphonFamily family, std::size_t nodes);
};

/// W(r_i, r_j) clamped into [0, 1]. Throws ContractError outside [0, 1]^2.
double eval_graphon(const Graphon& g, double r_i, double r_j);
/// The unclamped formula value (differs from eval_graphon only when > 1).
double eval_graphon_raw(const Graphon& g, double r_i, double r_j);

/// Canonical grid r_u = u / (U - 1).
std::vector<double> canonical_grid(std::size_t nodes);

struct PriorMatrix {
    Tensor p0;                // [U, U], constant
    std::vector<double> grid;
    Graphon graphon;
};

PriorMatrix sample_prior(const Graphon& g, std::size_t nodes);

/// C_vw = sum_i (P_vi - P0_wi)^2.
Tensor assignment_cost(const Tensor& probs, const Tensor& prior);

struct Assignment {
    std::vector<std::size_t> perm;  // row v assigned to column perm[v]
    double cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (shortest augmenting paths with potentials, O(U^3)).
Assignment solve_assignment(const Tensor& cost);
Assignment solve_assignment(const std::vector<double>& cost, std::size_t n);

/// sum_{i != j} (P_ij - P0_{perm(i) perm(j)})^2 with the matching held
/// constant. Re-solves the matching unless `frozen` is given.
struct RegularizerResult {
    Tensor loss;
    Assignment matching;
};
RegularizerResult graph_regularizer(const Tensor& probs, const PriorMatrix& prior,
                                    const std::optional<Assignment>& frozen = std::nullopt);

/// Mean over i != j of |P_ij - P0_{perm(i) perm(j)}|.
double mean_offdiag_deviation(const Tensor& probs, const PriorMatrix& prior, const Assignment& matching);

/// CSV of a square matrix, one row per line.
void write_matrix_csv(std::ostream& os, const Tensor& m);
/// CSV "module,prior_slot".
void write_assignment_csv(std::ostream& os, const Assignment& a);

}  // namespace nac
