#ifndef DISPATCH_MOO_HPP
#define DISPATCH_MOO_HPP

#include "dispatch/error.hpp"
#include "dispatch/evaluate.hpp"
#include "dispatch/netlist.hpp"
#include "dispatch/parallel.hpp"
#include "dispatch/rng.hpp"
#include "dispatch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

// ---- dominance and ranking ---------------------------------------------------

// Minimisation: a <= b everywhere and a < b somewhere.
inline bool dominates(std::span<const double> a, std::span<const double> b)
{
    require(a.size() == b.size(), "dominates: objective vectors differ in length");
    bool strictly = false;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        if (a[i] > b[i])
            return false;
        if (a[i] < b[i])
            strictly = true;
    }
    return strictly;
}

using Fronts = std::vector<std::vector<std::size_t>>;

// Deb's fast non-dominated sort. Fronts list indices in ascending order.
inline Fronts fast_nondominated_sort(std::span<const std::vector<double>> points)
{
    const std::size_t n = points.size();
    Fronts fronts;
    if (n == 0)
        return fronts;
    for (const auto &p : points)
        require(p.size() == points[0].size(), "fast_nondominated_sort: objective vectors differ in length");
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> counter(n, 0);
    std::vector<std::size_t> current;
    for (std::size_t p = 0; p < n; ++p)
    {
        for (std::size_t q = 0; q < n; ++q)
        {
            if (p == q)
                continue;
            if (dominates(points[p], points[q]))
                dominated[p].push_back(q);
            else if (dominates(points[q], points[p]))
                ++counter[p];
        }
        if (counter[p] == 0)
            current.push_back(p);
    }
    while (!current.empty())
    {
        fronts.push_back(current);
        std::vector<std::size_t> next;
        for (auto p : current)
            for (auto q : dominated[p])
                if (--counter[q] == 0)
                    next.push_back(q);
        std::sort(next.begin(), next.end());
        current = std::move(next);
    }
    return fronts;
}

inline constexpr double infinite_crowding = std::numeric_limits<double>::infinity();

// Per-objective neighbour-gap sums normalised by the objective's range on the front.
// Boundary members get +inf; equal objective values keep index order.
inline std::vector<double> crowding_distance(std::span<const std::vector<double>> front)
{
    require(!front.empty(), "crowding_distance: empty front");
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n <= 2)
    {
        std::fill(dist.begin(), dist.end(), infinite_crowding);
        return dist;
    }
    const std::size_t m = front[0].size();
    std::vector<std::size_t> order(n);
    for (std::size_t obj = 0; obj < m; ++obj)
    {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return front[a][obj] < front[b][obj]; });
        const double lo = front[order.front()][obj];
        const double hi = front[order.back()][obj];
        dist[order.front()] = infinite_crowding;
        dist[order.back()] = infinite_crowding;
        const double range = hi - lo;
        if (!(range > 0.0) || !std::isfinite(range))
            continue;
        for (std::size_t k = 1; k + 1 < n; ++k)
            if (dist[order[k]] != infinite_crowding)
                dist[order[k]] += (front[order[k + 1]][obj] - front[order[k - 1]][obj]) / range;
    }
    return dist;
}

struct Ranking
{
    std::vector<std::size_t> rank;
    std::vector<double> crowding;
    Fronts fronts;
};

inline Ranking rank_population(std::span<const std::vector<double>> objectives)
{
    Ranking r;
    r.fronts = fast_nondominated_sort(objectives);
    r.rank.assign(objectives.size(), 0);
    r.crowding.assign(objectives.size(), 0.0);
    for (std::size_t f = 0; f < r.fronts.size(); ++f)
    {
        std::vector<std::vector<double>> members;
        for (auto i : r.fronts[f])
        {
            r.rank[i] = f;
            members.push_back(objectives[i]);
        }
        const auto d = crowding_distance(members);
        for (std::size_t k = 0; k < r.fronts[f].size(); ++k)
            r.crowding[r.fronts[f][k]] = d[k];
    }
    return r;
}

// Crowded comparison: lower rank, then larger crowding, then lower index.
inline bool crowded_better(const Ranking &r, std::size_t a, std::size_t b)
{
    if (r.rank[a] != r.rank[b])
        return r.rank[a] < r.rank[b];
    if (r.crowding[a] != r.crowding[b])
        return r.crowding[a] > r.crowding[b];
    return a < b;
}

// k draws with replacement; returns the crowded-comparison winner's index.
inline std::size_t tournament_select(const Ranking &r, std::size_t k, Rng &rng)
{
    const std::size_t n = r.rank.size();
    require(n > 0 && k >= 1, "tournament_select: needs a ranked population and k >= 1");
    std::size_t best = rng.index(n);
    for (std::size_t i = 1; i < k; ++i)
    {
        const std::size_t c = rng.index(n);
        if (crowded_better(r, c, best))
            best = c;
    }
    return best;
}

// ---- variation -----------------------------------------------------------------

// Children swap tails at gene boundary `cut` (0 < cut < size).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> crossover_at(const std::vector<T> &a, const std::vector<T> &b, std::size_t cut)
{
    require(a.size() == b.size(), "crossover: parents differ in shape");
    require(cut <= a.size(), "crossover: cut beyond genome");
    std::vector<T> ca(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(cut));
    ca.insert(ca.end(), b.begin() + static_cast<std::ptrdiff_t>(cut), b.end());
    std::vector<T> cb(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(cut));
    cb.insert(cb.end(), a.begin() + static_cast<std::ptrdiff_t>(cut), a.end());
    return {std::move(ca), std::move(cb)};
}

// With probability p_cross, single-point crossover at a uniformly drawn interior boundary;
// otherwise clones. The Bernoulli draw is always consumed.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> crossover(const std::vector<T> &a, const std::vector<T> &b, double p_cross, Rng &rng)
{
    require(a.size() == b.size(), "crossover: parents differ in shape");
    if (!rng.bernoulli(p_cross) || a.size() < 2)
        return {a, b};
    const std::size_t cut = 1 + rng.index(a.size() - 1);
    return crossover_at(a, b, cut);
}

inline std::pair<Chromosome, Chromosome> crossover(const Chromosome &a, const Chromosome &b, double p_cross, Rng &rng)
{
    auto [ga, gb] = crossover(a.genes, b.genes, p_cross, rng);
    return {Chromosome{std::move(ga), Origin::Child}, Chromosome{std::move(gb), Origin::Child}};
}

// Each gene independently, with probability `rate`, has one uniformly chosen field
// (kind, node_a, node_b, value_index, active) redrawn uniformly.
inline Chromosome mutate(Chromosome c, double rate, const ComponentCatalog &catalog, std::uint32_t max_nodes, Rng &rng)
{
    require(rate >= 0.0 && rate <= 1.0, "mutate: rate must lie in [0, 1]");
    for (auto &g : c.genes)
    {
        if (!rng.bernoulli(rate))
            continue;
        switch (rng.index(5))
        {
        case 0: {
            g.kind = catalog.kinds()[rng.index(catalog.kind_count())].kind;
            const auto size = catalog.entry(g.kind).values.size();
            g.value_index %= static_cast<std::uint32_t>(size);
            break;
        }
        case 1:
            g.node_a = static_cast<std::uint32_t>(rng.below(max_nodes));
            break;
        case 2:
            g.node_b = static_cast<std::uint32_t>(rng.below(max_nodes));
            break;
        case 3:
            g.value_index = static_cast<std::uint32_t>(rng.index(catalog.entry(g.kind).values.size()));
            break;
        default:
            g.active = rng.bernoulli(0.5);
            break;
        }
    }
    return c;
}

// Component-vector mode: each parameter, with probability `rate`, is redrawn from its
// discrete candidate list.
inline std::vector<double> mutate(std::vector<double> v, double rate, const std::vector<std::vector<double>> &candidates, Rng &rng)
{
    require(rate >= 0.0 && rate <= 1.0, "mutate: rate must lie in [0, 1]");
    require(candidates.size() == v.size(), "mutate: candidate lists must match the vector");
    for (std::size_t i = 0; i < v.size(); ++i)
        if (rng.bernoulli(rate))
            v[i] = candidates[i][rng.index(candidates[i].size())];
    return v;
}

// Per-dimension candidate values from the first `count` Sobol points scaled into `box`.
inline std::vector<std::vector<double>> sobol_catalog(const Box &box, std::size_t count)
{
    SobolState s(box.size());
    std::vector<std::vector<double>> out(box.size());
    for (std::size_t k = 0; k < count; ++k)
    {
        const auto p = scale_to_box(s.next(), box);
        for (std::size_t d = 0; d < box.size(); ++d)
            out[d].push_back(p[d]);
    }
    return out;
}

// ---- engine --------------------------------------------------------------------

struct GaConfig
{
    std::size_t population_size = 50;
    std::size_t max_generations = 100;
    std::size_t tournament_size = 10;
    double mutation_rate = 0.1;
    double crossover_probability = 0.9;
    // Objective used for stopping checks and final selection.
    std::size_t metric_index = 0;
    // Final pick only: among front-0 members within this relative distance of the best
    // metric, take the lowest `selection_tiebreak` objective.
    double selection_tolerance = 0.0;
    std::optional<std::size_t> selection_tiebreak;
    // Stop once the best metric drops below this value.
    std::optional<double> objective_threshold;
    // Stop when, past `stagnation_min_generations`, the best metric has not moved by
    // more than 1e-9 for `stagnation_window` generations. 0 disables.
    std::size_t stagnation_window = 0;
    std::size_t stagnation_min_generations = 0;
    // Stop after this many fresh simulations. 0 disables.
    std::size_t simulation_budget = 0;
    std::size_t workers = 1;

    void validate() const
    {
        if (population_size == 0 || population_size % 2 != 0)
            throw ConfigError("population_size must be a positive even number");
        if (tournament_size < 1 || tournament_size > population_size)
            throw ConfigError("tournament_size must lie in [1, population_size]");
        if (max_generations < 1)
            throw ConfigError("max_generations must be >= 1");
        if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0))
            throw ConfigError("mutation_rate must lie in [0, 1]");
        if (!(crossover_probability >= 0.0 && crossover_probability <= 1.0))
            throw ConfigError("crossover_probability must lie in [0, 1]");
        if (!(selection_tolerance >= 0.0))
            throw ConfigError("selection_tolerance must be >= 0");
    }
};

template <typename Genome>
struct Individual
{
    Genome genome;
    ObjectiveVector objectives;
    std::size_t rank = 0;
    double crowding = 0.0;
};

struct GenerationSummary
{
    std::size_t generation = 0;
    std::vector<double> mean;
    std::vector<double> best;
    std::size_t front0_size = 0;
    std::size_t new_simulations = 0;
    std::size_t cache_hits = 0;
};

enum class StopReason
{
    MaxGenerations,
    Threshold,
    Stagnation,
    Budget,
};

inline const char *stop_reason_name(StopReason r)
{
    switch (r)
    {
    case StopReason::MaxGenerations:
        return "max_generations";
    case StopReason::Threshold:
        return "threshold";
    case StopReason::Stagnation:
        return "stagnation";
    case StopReason::Budget:
        return "budget";
    }
    return "?";
}

template <typename Genome>
struct EvolveResult
{
    std::vector<Individual<Genome>> population;
    std::size_t selected = 0;
    std::vector<GenerationSummary> log;
    std::size_t simulations = 0;
    std::size_t cache_hits = 0;
    StopReason reason = StopReason::MaxGenerations;

    const Individual<Genome> &selected_individual() const { return population.at(selected); }
};

template <typename Genome>
struct GenomeOps
{
    std::function<std::pair<Genome, Genome>(const Genome &, const Genome &, Rng &)> crossover;
    std::function<Genome(Genome, Rng &)> mutate;
    // Validity post-processing applied to every child (identity when empty).
    std::function<Genome(Genome)> repair;
    // Cache key identifying equal genomes.
    std::function<std::string(const Genome &)> key;
    std::function<Evaluation(const Genome &)> evaluate;
    // Called once per fresh simulation, in population order.
    std::function<void(const Genome &, const Evaluation &, std::size_t generation)> on_simulation;
};

inline std::string genome_key(const Chromosome &c)
{
    std::string k;
    k.reserve(c.genes.size() * 14);
    for (const auto &g : c.genes)
    {
        k += kind_letter(g.kind);
        k += std::to_string(g.node_a) + ',' + std::to_string(g.node_b) + ',' + std::to_string(g.value_index) +
             (g.active ? "+" : "-");
    }
    return k;
}

inline std::string genome_key(const std::vector<double> &v)
{
    std::string k(v.size() * sizeof(double), '\0');
    if (!v.empty())
        std::memcpy(k.data(), v.data(), k.size());
    return k;
}

// Lowest value of objective `metric_index` among front-0 members; ties by crowding
// (descending) then index.
template <typename Genome>
std::size_t select_final(const std::vector<Individual<Genome>> &population, std::size_t metric_index)
{
    require(!population.empty(), "select_final: empty population");
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < population.size(); ++i)
    {
        const auto &p = population[i];
        if (p.rank != 0)
            continue;
        require(metric_index < p.objectives.values.size(), "select_final: metric index out of range");
        if (!best)
        {
            best = i;
            continue;
        }
        const auto &q = population[*best];
        const double a = p.objectives.values[metric_index], b = q.objectives.values[metric_index];
        if (a < b || (a == b && p.crowding > q.crowding))
            best = i;
    }
    require(best.has_value(), "select_final: population has no front-0 member");
    return *best;
}

// select_final with slack: front-0 members whose metric is within `tolerance`·|best| of
// the best compete on objective `tiebreak`, then on the metric, then by index.
template <typename Genome>
std::size_t select_within(const std::vector<Individual<Genome>> &population, std::size_t metric_index,
                          double tolerance, std::size_t tiebreak)
{
    const std::size_t strict = select_final(population, metric_index);
    const double best = population[strict].objectives.values[metric_index];
    const double limit = best + tolerance * std::abs(best);
    std::size_t pick = strict;
    for (std::size_t i = 0; i < population.size(); ++i)
    {
        const auto &p = population[i];
        if (p.rank != 0 || p.objectives.values[metric_index] > limit)
            continue;
        require(tiebreak < p.objectives.values.size(), "select_within: tiebreak index out of range");
        const auto &q = population[pick];
        const double a = p.objectives.values[tiebreak], b = q.objectives.values[tiebreak];
        if (a < b || (a == b && p.objectives.values[metric_index] < q.objectives.values[metric_index]))
            pick = i;
    }
    return pick;
}

namespace detail
{

template <typename Genome>
void assign_ranking(std::vector<Individual<Genome>> &pop)
{
    std::vector<std::vector<double>> objs;
    objs.reserve(pop.size());
    for (const auto &p : pop)
        objs.push_back(p.objectives.values);
    const auto r = rank_population(objs);
    for (std::size_t i = 0; i < pop.size(); ++i)
    {
        pop[i].rank = r.rank[i];
        pop[i].crowding = r.crowding[i];
    }
}

template <typename Genome>
Ranking ranking_of(const std::vector<Individual<Genome>> &pop)
{
    Ranking r;
    for (const auto &p : pop)
    {
        r.rank.push_back(p.rank);
        r.crowding.push_back(p.crowding);
    }
    return r;
}

} // namespace detail

// NSGA-II generational loop:
//   evaluate -> rank -> tournament mating pool of P -> P children -> rank 2P -> keep P.
// `initial` is generation 0 and must hold exactly P genomes.
template <typename Genome>
EvolveResult<Genome> evolve(const GaConfig &config, std::vector<Genome> initial, const GenomeOps<Genome> &ops, Rng &rng)
{
    config.validate();
    if (initial.size() != config.population_size)
        throw ContractViolation("evolve: initial population must hold population_size genomes");

    EvolveResult<Genome> result;
    std::map<std::string, Evaluation> cache;
    std::size_t generation = 0;

    auto evaluate_batch = [&](std::vector<Genome> &genomes, GenerationSummary &summary) {
        if (ops.repair)
            for (auto &g : genomes)
                g = ops.repair(std::move(g));
        std::vector<std::string> keys(genomes.size());
        std::vector<std::size_t> fresh;
        std::map<std::string, std::size_t> pending;
        for (std::size_t i = 0; i < genomes.size(); ++i)
        {
            keys[i] = ops.key(genomes[i]);
            if (cache.count(keys[i]) || pending.count(keys[i]))
                ++summary.cache_hits;
            else
            {
                pending.emplace(keys[i], fresh.size());
                fresh.push_back(i);
            }
        }
        std::vector<Evaluation> evals(fresh.size());
        parallel_for(fresh.size(), config.workers, [&](std::size_t k) { evals[k] = ops.evaluate(genomes[fresh[k]]); });
        for (std::size_t k = 0; k < fresh.size(); ++k)
        {
            if (ops.on_simulation)
                ops.on_simulation(genomes[fresh[k]], evals[k], generation);
            cache.emplace(keys[fresh[k]], std::move(evals[k]));
        }
        summary.new_simulations += fresh.size();
        std::vector<Individual<Genome>> out;
        out.reserve(genomes.size());
        for (std::size_t i = 0; i < genomes.size(); ++i)
            out.push_back({std::move(genomes[i]), cache.at(keys[i]).objectives, 0, 0.0});
        return out;
    };

    GenerationSummary summary;
    summary.generation = 0;
    result.population = evaluate_batch(initial, summary);
    detail::assign_ranking(result.population);

    std::vector<double> best_history;
    auto finish_generation = [&](GenerationSummary &s) {
        const std::size_t m = result.population.front().objectives.values.size();
        s.mean.assign(m, 0.0);
        for (const auto &p : result.population)
            for (std::size_t j = 0; j < m; ++j)
                s.mean[j] += p.objectives.values[j] / static_cast<double>(result.population.size());
        const auto best = select_final(result.population, config.metric_index);
        s.best = result.population[best].objectives.values;
        s.front0_size = static_cast<std::size_t>(std::count_if(result.population.begin(), result.population.end(),
                                                               [](const auto &p) { return p.rank == 0; }));
        result.simulations += s.new_simulations;
        result.cache_hits += s.cache_hits;
        best_history.push_back(s.best[config.metric_index]);
        result.log.push_back(s);
    };
    finish_generation(summary);

    auto should_stop = [&]() -> std::optional<StopReason> {
        const double best = best_history.back();
        if (config.objective_threshold && best < *config.objective_threshold)
            return StopReason::Threshold;
        if (config.simulation_budget && result.simulations >= config.simulation_budget)
            return StopReason::Budget;
        if (config.stagnation_window && generation + 1 > config.stagnation_min_generations &&
            best_history.size() > config.stagnation_window)
        {
            const double then = best_history[best_history.size() - 1 - config.stagnation_window];
            if (std::abs(then - best) < 1e-9)
                return StopReason::Stagnation;
        }
        if (generation + 1 >= config.max_generations)
            return StopReason::MaxGenerations;
        return std::nullopt;
    };

    while (true)
    {
        if (auto reason = should_stop())
        {
            result.reason = *reason;
            break;
        }
        ++generation;
        const Ranking ranking = detail::ranking_of(result.population);
        std::vector<std::size_t> pool(config.population_size);
        for (auto &slot : pool)
            slot = tournament_select(ranking, config.tournament_size, rng);
        std::vector<Genome> children;
        children.reserve(config.population_size);
        for (std::size_t i = 0; i + 1 < pool.size(); i += 2)
        {
            auto [a, b] = ops.crossover(result.population[pool[i]].genome, result.population[pool[i + 1]].genome, rng);
            children.push_back(ops.mutate(std::move(a), rng));
            children.push_back(ops.mutate(std::move(b), rng));
        }
        GenerationSummary s;
        s.generation = generation;
        auto offspring = evaluate_batch(children, s);

        std::vector<Individual<Genome>> merged = std::move(result.population);
        for (auto &o : offspring)
            merged.push_back(std::move(o));
        detail::assign_ranking(merged);
        const Ranking mr = detail::ranking_of(merged);
        std::vector<std::size_t> order(merged.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return crowded_better(mr, a, b); });
        std::vector<Individual<Genome>> next;
        next.reserve(config.population_size);
        for (std::size_t k = 0; k < config.population_size; ++k)
            next.push_back(std::move(merged[order[k]]));
        result.population = std::move(next);
        // Ranks and crowding recomputed within the survivors.
        detail::assign_ranking(result.population);
        finish_generation(s);
    }
    result.selected = config.selection_tiebreak
                          ? select_within(result.population, config.metric_index, config.selection_tolerance,
                                          *config.selection_tiebreak)
                          : select_final(result.population, config.metric_index);
    return result;
}

// Generation 0 for architecture search: seeds first, then post-processed random chromosomes.
inline std::vector<Chromosome> architecture_population(const std::vector<Chromosome> &seeds, std::size_t size,
                                                       const ComponentCatalog &catalog, const Scaffold &scaffold,
                                                       std::size_t max_components, Rng &rng)
{
    if (seeds.size() > size)
        throw ConfigError("more seed designs than population slots");
    std::vector<Chromosome> pop(seeds.begin(), seeds.end());
    while (pop.size() < size)
        pop.push_back(postprocess(random_chromosome(catalog, scaffold.max_nodes, max_components, rng.next_u64()), scaffold));
    return pop;
}

// Generation 0 for component selection: the first `size` Sobol points scaled into `box`.
inline std::vector<std::vector<double>> component_population(const Box &box, std::size_t size)
{
    SobolState s(box.size());
    std::vector<std::vector<double>> pop;
    for (std::size_t i = 0; i < size; ++i)
        pop.push_back(scale_to_box(s.next(), box));
    return pop;
}

} // namespace dispatch

#endif
