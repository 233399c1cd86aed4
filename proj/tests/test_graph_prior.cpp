#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "nac/graph_prior.hpp"
#include "nac/layers.hpp"

using namespace nac;

namespace {

double brute_force_min(const std::vector<double>& cost, std::size_t n) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
        double c = 0;
        for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

const GraphonFamily kFamilies[] = {GraphonFamily::ErdosRenyi, GraphonFamily::ScaleFree,
                                   GraphonFamily::PlantedPartition, GraphonFamily::RingOfCliques};

}  // namespace

TEST_CASE("graphon examples") {
    CHECK(eval_graphon(Graphon::erdos_renyi(0.1), 0.3, 0.8) == 0.1);
    const Graphon sf = Graphon::scale_free(320, 0.5);
    CHECK(eval_graphon(sf, 1.0, 1.0) == doctest::Approx(0.559017).epsilon(1e-6));
    CHECK(eval_graphon_raw(sf, 0.0, 0.0) == doctest::Approx(1.118034).epsilon(1e-6));
    CHECK(eval_graphon(sf, 0.0, 0.0) == 1.0);
    CHECK_THROWS_AS(eval_graphon(sf, -0.1, 0.5), ContractError);
}

TEST_CASE("canonical grid") {
    const auto r = canonical_grid(4);
    REQUIRE(r.size() == 4);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == doctest::Approx(1.0 / 3.0));
    CHECK(r[2] == doctest::Approx(2.0 / 3.0));
    CHECK(r[3] == 1.0);
    CHECK_THROWS_AS(canonical_grid(1), ContractError);
}

TEST_CASE("planted partition prior matrix") {
    const PriorMatrix p = sample_prior(Graphon::planted_partition(2, 0.9, 0.05), 4);
    const std::vector<double> expected = {.9, .9, .05, .05, .9, .9, .05, .05, .05, .05, .9, .9, .05, .05, .9, .9};
    CHECK(p.p0.values() == expected);
}

TEST_CASE("ring of cliques connects only neighbouring blocks") {
    const Graphon g = Graphon::ring_of_cliques(4, 0.9, 0.3);
    CHECK(eval_graphon(g, 0.1, 0.2) == 0.9);
    CHECK(eval_graphon(g, 0.1, 0.3) == 0.3);   // blocks 0 and 1
    CHECK(eval_graphon(g, 0.1, 0.6) == 0.0);   // blocks 0 and 2
    CHECK(eval_graphon(g, 0.1, 1.0) == 0.3);   // blocks 0 and 3 close the ring
}

TEST_CASE("prior matrices are symmetric and bounded for every family") {
    for (auto fam : kFamilies) {
        for (std::size_t u : {8, 32, 320}) {
            const PriorMatrix p = sample_prior(Graphon::preset(fam, u), u);
            double asym = 0;
            for (std::size_t i = 0; i < u; ++i)
                for (std::size_t j = 0; j < u; ++j) {
                    const double v = p.p0.at({i, j});
                    CHECK((v >= 0.0 && v <= 1.0));
                    asym = std::max(asym, std::abs(v - p.p0.at({j, i})));
                }
            CHECK(asym == 0.0);
        }
    }
}

TEST_CASE("assignment cost examples") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor ones = Tensor::full({2, 2}, 1.0);
    CHECK(assignment_cost(eye, ones).values() == std::vector<double>{1, 1, 1, 1});
    std::mt19937_64 rng(1);
    const Tensor p = sample_prior(Graphon::preset(GraphonFamily::ScaleFree, 6), 6).p0;
    const Tensor c = assignment_cost(p, p);
    for (std::size_t i = 0; i < 6; ++i) CHECK(c.at({i, i}) == 0.0);
    for (double v : c.values()) CHECK(v >= 0.0);
}

TEST_CASE("assignment examples") {
    const Assignment a = solve_assignment(Tensor::from({2, 2}, {0, 5, 5, 0}));
    CHECK(a.perm == std::vector<std::size_t>{0, 1});
    CHECK(a.cost == 0.0);
    const Assignment b = solve_assignment(Tensor::from({2, 2}, {1, 2, 2, 1}));
    CHECK(b.perm == std::vector<std::size_t>{0, 1});
    CHECK(b.cost == 2.0);
    const Assignment c = solve_assignment(Tensor::from({3, 3}, {4, 1, 3, 2, 0, 5, 3, 2, 2}));
    CHECK(c.cost == 5.0);
    CHECK_THROWS_AS(solve_assignment(Tensor::from({2, 2}, {0, NAN, 1, 1})), ContractError);
    CHECK_THROWS_AS(solve_assignment(Tensor::from({2, 2}, {0, INFINITY, 1, 1})), ContractError);
}

TEST_CASE("assignment matches brute force for every size up to 7") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> unif(0.0, 10.0);
    for (std::size_t n = 1; n <= 7; ++n) {
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> cost(n * n);
            for (auto& v : cost) v = n == 7 && trial % 2 ? std::floor(unif(rng)) : unif(rng);  // ties included
            const Assignment a = solve_assignment(cost, n);
            std::vector<std::size_t> sorted = a.perm;
            std::sort(sorted.begin(), sorted.end());
            for (std::size_t i = 0; i < n; ++i) REQUIRE(sorted[i] == i);
            CHECK(a.cost == doctest::Approx(brute_force_min(cost, n)).epsilon(1e-12));
        }
    }
}

TEST_CASE("regularizer examples") {
    for (auto fam : kFamilies) {
        for (std::size_t u : {8, 32}) {
            const PriorMatrix p = sample_prior(Graphon::preset(fam, u), u);
            CHECK(graph_regularizer(p.p0, p).loss.item() == 0.0);
        }
    }
    const double a = 0.3, b = 0.8;
    PriorMatrix prior = sample_prior(Graphon::erdos_renyi(b), 2);
    const Tensor probs = Tensor::from({2, 2}, {1, a, a, 1});
    CHECK(graph_regularizer(probs, prior).loss.item() == doctest::Approx(2 * (a - b) * (a - b)).epsilon(1e-12));
}

TEST_CASE("regularizer is permutation invariant") {
    const std::size_t u = 8;
    const PriorMatrix prior = sample_prior(Graphon::preset(GraphonFamily::PlantedPartition, u), u);
    // relabel the prior's nodes
    const std::vector<std::size_t> perm = {3, 7, 0, 5, 1, 6, 2, 4};
    std::vector<double> shuffled(u * u);
    for (std::size_t i = 0; i < u; ++i)
        for (std::size_t j = 0; j < u; ++j) shuffled[i * u + j] = prior.p0.at({perm[i], perm[j]});
    const RegularizerResult r = graph_regularizer(Tensor::from({u, u}, shuffled), prior);
    CHECK(r.loss.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("regularizer gradient with frozen matching") {
    std::mt19937_64 rng(3);
    const std::size_t u = 6;
    const Tensor sigs = Tensor::normal({u, 4}, 1.0, rng, true);
    const PriorMatrix prior = sample_prior(Graphon::preset(GraphonFamily::RingOfCliques, u), u);
    const Assignment frozen = graph_regularizer(link_probabilities(sigs, sigs, 1.0), prior).matching;
    const auto f = [&] { return graph_regularizer(link_probabilities(sigs, sigs, 1.0), prior, frozen).loss; };
    CHECK(grad_check(f, {sigs}) < 1e-4);
    CHECK(f().item() >= 0.0);
}

TEST_CASE("csv exports") {
    std::ostringstream m, a;
    write_matrix_csv(m, Tensor::from({2, 2}, {1, 0.5, 0.5, 1}));
    CHECK(m.str() == "1,0.5\n0.5,1\n");
    write_assignment_csv(a, Assignment{{1, 0}, 0.0});
    CHECK(a.str() == "module,prior_slot\n0,1\n1,0\n");
}

TEST_CASE("family names round trip") {
    for (auto fam : kFamilies) CHECK(parse_graphon_family(to_string(fam)) == fam);
    CHECK_FALSE(parse_graphon_family("small_world").has_value());
}
