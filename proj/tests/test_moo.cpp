#include "dispatch/moo.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dispatch;

namespace
{

std::vector<std::vector<double>> random_points(Rng &rng, std::size_t n, std::size_t m, bool coarse)
{
    std::vector<std::vector<double>> pts(n, std::vector<double>(m));
    for (auto &p : pts)
        for (auto &v : p)
            v = coarse ? static_cast<double>(rng.below(5)) : rng.uniform();
    return pts;
}

} // namespace

TEST(Dominance, Cases)
{
    const std::vector<double> a{1, 2}, b{2, 3}, c{1, 3}, d{2, 2};
    EXPECT_TRUE(dominates(a, b));
    EXPECT_FALSE(dominates(a, a));
    EXPECT_FALSE(dominates(c, d));
    EXPECT_FALSE(dominates(d, c));
    const std::vector<double> e{1, 2, 3};
    EXPECT_THROW(dominates(a, e), ContractViolation);
}

TEST(NondominatedSort, SmallCases)
{
    std::vector<std::vector<double>> one{{1, 1}};
    EXPECT_EQ(fast_nondominated_sort(one), (Fronts{{0}}));
    std::vector<std::vector<double>> three{{1, 2}, {2, 1}, {2, 2}};
    EXPECT_EQ(fast_nondominated_sort(three), (Fronts{{0, 1}, {2}}));
}

TEST(NondominatedSort, MatchesBruteForce)
{
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial)
    {
        const auto pts = random_points(rng, 100, 3, trial % 2 == 0);
        EXPECT_EQ(fast_nondominated_sort(pts), oracle::peel_fronts(pts));
    }
}

TEST(Crowding, Cases)
{
    std::vector<std::vector<double>> one{{1, 1}};
    EXPECT_EQ(crowding_distance(one)[0], infinite_crowding);
    std::vector<std::vector<double>> two{{0, 1}, {1, 0}};
    EXPECT_EQ(crowding_distance(two), std::vector<double>(2, infinite_crowding));
    std::vector<std::vector<double>> line{{0, 2}, {1, 1}, {2, 0}};
    const auto d = crowding_distance(line);
    EXPECT_EQ(d[0], infinite_crowding);
    EXPECT_DOUBLE_EQ(d[1], 2.0);
    EXPECT_EQ(d[2], infinite_crowding);
}

TEST(Crowding, TiesKeepIndexOrder)
{
    std::vector<std::vector<double>> pts{{1, 1}, {1, 1}, {1, 1}, {1, 1}};
    const auto d = crowding_distance(pts);
    EXPECT_EQ(d[0], infinite_crowding);
    EXPECT_EQ(d[3], infinite_crowding);
    EXPECT_EQ(d[1], 0.0);
    EXPECT_EQ(d[2], 0.0);
}

TEST(Tournament, FullTournamentPicksBest)
{
    Ranking r;
    r.rank = {3, 1, 0, 2};
    r.crowding = {1, 1, 1, 1};
    Rng rng(5);
    // With k = P draws with replacement the best usually appears; force it with many draws.
    for (int i = 0; i < 20; ++i)
        EXPECT_EQ(tournament_select(r, 64, rng), 2u);
}

TEST(Tournament, SizeOneIsUniform)
{
    Ranking r;
    r.rank.assign(4, 0);
    r.crowding.assign(4, 0.0);
    Rng rng(9);
    std::array<int, 4> counts{};
    for (int i = 0; i < 8000; ++i)
        ++counts[tournament_select(r, 1, rng)];
    for (int c : counts)
        EXPECT_NEAR(c, 2000, 3 * std::sqrt(8000 * 0.25 * 0.75));
}

TEST(Tournament, Reproducible)
{
    Rng src(1);
    const auto pts = random_points(src, 50, 2, false);
    const auto r = rank_population(pts);
    Rng a(77), b(77);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(tournament_select(r, 10, a), tournament_select(r, 10, b));
}

TEST(Crossover, CutsAtBoundaries)
{
    const std::vector<int> a{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, b{10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
    auto [ca, cb] = crossover_at(a, b, 5);
    EXPECT_EQ(ca, (std::vector<int>{0, 1, 2, 3, 4, 15, 16, 17, 18, 19}));
    EXPECT_EQ(cb, (std::vector<int>{10, 11, 12, 13, 14, 5, 6, 7, 8, 9}));

    const std::vector<double> x(8, 1.0), y(8, 2.0);
    auto [cx, cy] = crossover_at(x, y, 3);
    EXPECT_EQ(cx, (std::vector<double>{1, 1, 1, 2, 2, 2, 2, 2}));
    EXPECT_EQ(cy, (std::vector<double>{2, 2, 2, 1, 1, 1, 1, 1}));
}

TEST(Crossover, ZeroProbabilityClones)
{
    Rng rng(3);
    const std::vector<int> a{1, 2, 3}, b{4, 5, 6};
    for (int i = 0; i < 50; ++i)
    {
        auto [ca, cb] = crossover(a, b, 0.0, rng);
        EXPECT_EQ(ca, a);
        EXPECT_EQ(cb, b);
    }
}

TEST(Crossover, ChildrenAreGeneRecombinations)
{
    Rng rng(4);
    const std::vector<int> a{1, 2, 3, 4}, b{5, 6, 7, 8};
    for (int i = 0; i < 50; ++i)
    {
        auto [ca, cb] = crossover(a, b, 1.0, rng);
        for (std::size_t k = 0; k < 4; ++k)
        {
            EXPECT_TRUE((ca[k] == a[k] && cb[k] == b[k]) || (ca[k] == b[k] && cb[k] == a[k]));
        }
        EXPECT_NE(ca, a);
    }
}

namespace
{

ComponentCatalog catalog()
{
    return ComponentCatalog({
        {ComponentKind::Resistor, {1.0, 10.0, 600.0, 1200.0}, 400.0, 800.0},
        {ComponentKind::Capacitor, {1e-12, 119.37e-9, 155.12e-9, 1e-5}, 1e-8, 1e-6},
        {ComponentKind::Inductor, {1e-6, 15.24e-3, 61.86e-3, 1e-2}, 1e-6, 1e-1},
    });
}

std::size_t differing_fields(const Gene &a, const Gene &b)
{
    return (a.kind != b.kind) + (a.node_a != b.node_a) + (a.node_b != b.node_b) + (a.value_index != b.value_index) +
           (a.active != b.active);
}

} // namespace

TEST(Mutate, ZeroRateIsIdentity)
{
    Rng rng(1);
    const auto c = random_chromosome(catalog(), 5, 10, 8);
    EXPECT_EQ(mutate(c, 0.0, catalog(), 5, rng), c);
}

TEST(Mutate, FullRateChangesAtMostOneField)
{
    Rng rng(2);
    const auto cat = catalog();
    std::size_t changed = 0;
    for (std::uint64_t s = 0; s < 500; ++s)
    {
        const auto c = random_chromosome(cat, 5, 1, s);
        const auto m = mutate(c, 1.0, cat, 5, rng);
        const auto d = differing_fields(c.genes[0], m.genes[0]);
        // A kind change may also fold value_index into the new list.
        EXPECT_LE(d, c.genes[0].kind != m.genes[0].kind ? 2u : 1u);
        changed += d > 0;
        EXPECT_LT(m.genes[0].value_index, cat.entry(m.genes[0].kind).values.size());
    }
    EXPECT_GT(changed, 300u);
}

TEST(Mutate, RateMatchesBinomial)
{
    Rng rng(3);
    std::vector<std::vector<double>> cand(10000, std::vector<double>{1.0});
    const std::vector<double> v(10000, 0.0);
    const auto m = mutate(v, 0.1, cand, rng);
    const auto n = std::count(m.begin(), m.end(), 1.0);
    EXPECT_NEAR(static_cast<double>(n) / 10000.0, 0.1, 0.01);
}

TEST(Mutate, ComponentVectorUsesSobolCatalog)
{
    const Box box({{400.0, 800.0}, {1e-8, 1e-6}});
    const auto cand = sobol_catalog(box, 16);
    ASSERT_EQ(cand.size(), 2u);
    EXPECT_EQ(cand[0].size(), 16u);
    EXPECT_DOUBLE_EQ(cand[0][0], 600.0);
    Rng rng(4);
    const auto m = mutate(std::vector<double>{500.0, 5e-7}, 1.0, cand, rng);
    EXPECT_NE(std::find(cand[0].begin(), cand[0].end(), m[0]), cand[0].end());
    EXPECT_NE(std::find(cand[1].begin(), cand[1].end(), m[1]), cand[1].end());
}

TEST(SelectFinal, Cases)
{
    std::vector<Individual<int>> one{{1, {{5.0}, true}, 0, infinite_crowding}};
    EXPECT_EQ(select_final(one, 0), 0u);
    std::vector<Individual<int>> two{{1, {{0.9, 1.0}, true}, 0, 1.0},
                                     {2, {{0.8, 2.0}, true}, 0, 1.0},
                                     {3, {{0.1, 9.0}, true}, 1, 1.0}};
    EXPECT_EQ(select_final(two, 0), 1u);
}

TEST(SelectWithin, PrefersTiebreakInsideTolerance)
{
    std::vector<Individual<int>> pop{{1, {{0.100, 8.0}, true}, 0, 1.0},
                                     {2, {{0.1005, 6.0}, true}, 0, 1.0},
                                     {3, {{0.1009, 6.0}, true}, 0, 1.0},
                                     {4, {{0.200, 3.0}, true}, 0, 1.0},
                                     {5, {{0.1001, 2.0}, true}, 1, 1.0}};
    EXPECT_EQ(select_within(pop, 0, 0.0, 1), 0u);
    EXPECT_EQ(select_within(pop, 0, 0.01, 1), 1u);
    EXPECT_EQ(select_within(pop, 0, 1.0, 1), 3u);
}

namespace
{

// Two-objective toy: f1 = x0, f2 = 1 + sum(x) - sqrt(x0), over [0,1]^3.
GenomeOps<std::vector<double>> toy_ops(const std::vector<std::vector<double>> &cand, std::size_t &calls)
{
    GenomeOps<std::vector<double>> ops;
    ops.crossover = [](const auto &a, const auto &b, Rng &rng) { return crossover(a, b, 0.9, rng); };
    ops.mutate = [&cand](std::vector<double> v, Rng &rng) { return mutate(std::move(v), 0.2, cand, rng); };
    ops.key = [](const std::vector<double> &v) { return genome_key(v); };
    ops.evaluate = [&calls](const std::vector<double> &v) {
        ++calls;
        Evaluation e;
        const double g = 1.0 + v[1] + v[2];
        e.objectives = {{v[0], g * (1.0 - std::sqrt(v[0] / g))}, true};
        return e;
    };
    return ops;
}

} // namespace

TEST(Evolve, ElitismAndMonotoneBest)
{
    const Box box({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
    const auto cand = sobol_catalog(box, 64);
    std::size_t calls = 0;
    const auto ops = toy_ops(cand, calls);
    GaConfig cfg;
    cfg.population_size = 20;
    cfg.max_generations = 30;
    cfg.tournament_size = 3;
    cfg.metric_index = 1;
    Rng rng(11);
    const auto r = evolve(cfg, component_population(box, 20), ops, rng);
    EXPECT_EQ(r.log.size(), 30u);
    EXPECT_EQ(r.population.size(), 20u);
    EXPECT_EQ(r.simulations, calls);
    for (std::size_t g = 1; g < r.log.size(); ++g)
        EXPECT_LE(r.log[g].best[1], r.log[g - 1].best[1]);
    std::size_t total = 0;
    for (const auto &s : r.log)
        total += s.new_simulations + s.cache_hits;
    EXPECT_EQ(total, 20u * 30u);
}

TEST(Evolve, FrontZeroSurvivesSelection)
{
    // While lower-ranked members survive, each earlier front-0 member is kept or dominated by a survivor.
    const Box box({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
    const auto cand = sobol_catalog(box, 64);
    std::size_t calls = 0;
    const auto ops = toy_ops(cand, calls);
    GaConfig cfg;
    cfg.population_size = 20;
    cfg.tournament_size = 3;
    std::vector<std::vector<double>> prev_front;
    std::size_t checked = 0;
    for (std::size_t gens = 1; gens <= 12; ++gens)
    {
        cfg.max_generations = gens;
        Rng rng(13);
        const auto r = evolve(cfg, component_population(box, 20), ops, rng);
        const bool mixed = std::any_of(r.population.begin(), r.population.end(), [](const auto &p) { return p.rank > 0; });
        checked += mixed ? prev_front.size() : 0;
        for (const auto &f : mixed ? prev_front : std::vector<std::vector<double>>{})
        {
            bool kept = false;
            for (const auto &p : r.population)
                kept = kept || p.objectives.values == f || dominates(p.objectives.values, f);
            EXPECT_TRUE(kept);
        }
        prev_front.clear();
        for (const auto &p : r.population)
            if (p.rank == 0)
                prev_front.push_back(p.objectives.values);
    }
    EXPECT_GT(checked, 0u);
}

TEST(Evolve, ThresholdAtGenerationZero)
{
    const Box box({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
    const auto cand = sobol_catalog(box, 8);
    std::size_t calls = 0;
    const auto ops = toy_ops(cand, calls);
    GaConfig cfg;
    cfg.population_size = 10;
    cfg.tournament_size = 2;
    cfg.objective_threshold = 10.0;
    Rng rng(1);
    const auto r = evolve(cfg, component_population(box, 10), ops, rng);
    EXPECT_EQ(r.log.size(), 1u);
    EXPECT_EQ(r.reason, StopReason::Threshold);
    EXPECT_EQ(calls, 10u);
}

TEST(Evolve, StagnationAndBudget)
{
    const Box box({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
    const auto cand = sobol_catalog(box, 4);
    std::size_t calls = 0;
    const auto ops = toy_ops(cand, calls);
    GaConfig cfg;
    cfg.population_size = 10;
    cfg.tournament_size = 2;
    cfg.max_generations = 1000;
    cfg.stagnation_window = 5;
    Rng rng(1);
    const auto r = evolve(cfg, component_population(box, 10), ops, rng);
    EXPECT_EQ(r.reason, StopReason::Stagnation);
    EXPECT_LT(r.log.size(), 1000u);

    cfg.stagnation_window = 0;
    cfg.simulation_budget = 25;
    Rng rng2(1);
    const auto b = evolve(cfg, component_population(box, 10), ops, rng2);
    EXPECT_EQ(b.reason, StopReason::Budget);
    EXPECT_GE(b.simulations, 25u);
}

TEST(Evolve, DuplicatesHitTheCache)
{
    const Box box({{0.0, 1.0}});
    std::size_t calls = 0;
    GenomeOps<std::vector<double>> ops;
    ops.crossover = [](const auto &a, const auto &b, Rng &) { return std::make_pair(a, b); };
    ops.mutate = [](std::vector<double> v, Rng &) { return v; };
    ops.key = [](const std::vector<double> &v) { return genome_key(v); };
    ops.evaluate = [&calls](const std::vector<double> &v) {
        ++calls;
        Evaluation e;
        e.objectives = {{v[0]}, true};
        return e;
    };
    GaConfig cfg;
    cfg.population_size = 4;
    cfg.tournament_size = 2;
    cfg.max_generations = 5;
    Rng rng(2);
    const auto r = evolve(cfg, std::vector<std::vector<double>>(4, {0.5}), ops, rng);
    EXPECT_EQ(calls, 1u);
    EXPECT_EQ(r.simulations, 1u);
    EXPECT_EQ(r.cache_hits, 19u);
}

TEST(Evolve, DeterministicAcrossWorkerCounts)
{
    const Box box({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
    const auto cand = sobol_catalog(box, 64);
    std::size_t c1 = 0, c2 = 0;
    auto o1 = toy_ops(cand, c1), o2 = toy_ops(cand, c2);
    // The counting evaluator is not thread-safe; the parallel run uses a pure copy.
    o2.evaluate = [](const std::vector<double> &v) {
        Evaluation r;
        const double g = 1.0 + v[1] + v[2];
        r.objectives = {{v[0], g * (1.0 - std::sqrt(v[0] / g))}, true};
        return r;
    };
    GaConfig cfg;
    cfg.population_size = 20;
    cfg.tournament_size = 3;
    cfg.max_generations = 15;
    Rng a(21), b(21);
    const auto r1 = evolve(cfg, component_population(box, 20), o1, a);
    cfg.workers = 4;
    const auto r2 = evolve(cfg, component_population(box, 20), o2, b);
    ASSERT_EQ(r1.population.size(), r2.population.size());
    for (std::size_t i = 0; i < r1.population.size(); ++i)
        EXPECT_EQ(r1.population[i].genome, r2.population[i].genome);
    EXPECT_EQ(r1.selected, r2.selected);
}

TEST(Evolve, ArchitectureGenerationZero)
{
    const auto cat = catalog();
    const Scaffold s;
    Rng rng(6);
    Chromosome seed = random_chromosome(cat, 5, 10, 1);
    seed.origin = Origin::Seed;
    const auto pop = architecture_population({seed}, 50, cat, s, 10, rng);
    EXPECT_EQ(pop.size(), 50u);
    EXPECT_EQ(pop[0], seed);
    for (std::size_t i = 1; i < pop.size(); ++i)
        EXPECT_TRUE(terminals_connected(pop[i], s));
}

TEST(GaConfig, Validation)
{
    GaConfig c;
    EXPECT_NO_THROW(c.validate());
    c.population_size = 51;
    EXPECT_THROW(c.validate(), ConfigError);
    c.population_size = 8;
    c.tournament_size = 9;
    EXPECT_THROW(c.validate(), ConfigError);
}
