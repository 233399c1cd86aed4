#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "nac/model.hpp"
#include "nac/tensor.hpp"
#include "nac/training.hpp"

namespace nac {

/// q_i = sum_j P_ij.
std::vector<double> module_importance(const Tensor& probs);

/// Ids kept after dropping the k least important modules (ties: lower index
/// dropped first), in ascending order. Requires k < U.
std::vector<std::size_t> retained_modules(const std::vector<double>& importance, std::size_t k);
/// Ids kept after dropping k modules uniformly at random, ascending.
std::vector<std::size_t> random_retained(std::size_t modules, std::size_t k, std::mt19937_64& rng);

/// Design restricted to the k-pruned processor set; read-outs untouched.
CircuitDesign drop_modules(const CircuitDesign& design, const Tensor& probs, std::size_t k);

/// {0,1} mask zeroing the smallest `fraction` of upper-triangle off-diagonal
/// link probabilities (mirrored); the diagonal is always kept.
Tensor eliminate_edges(const Tensor& probs, double fraction);

struct PruneReport {
    std::size_t dropped_count = 0;
    std::vector<std::size_t> retained_module_ids;
    double accuracy = 0.0;
    std::uint64_t flops = 0;
    double wall_time_per_sample = 0.0;
};

struct SweepOptions {
    std::uint64_t seed = 0;          // eval kernel stream
    std::size_t warmup_batches = 1;  // untimed passes before measuring
};

/// One report per schedule entry (number of modules dropped), run in order.
std::vector<PruneReport> prune_sweep(const NacModel& model, const std::vector<Batch>& data,
                                     const std::vector<std::size_t>& schedule, const SweepOptions& opts = {});

void write_prune_csv(std::ostream& os, const std::vector<PruneReport>& reports);

}  // namespace nac
