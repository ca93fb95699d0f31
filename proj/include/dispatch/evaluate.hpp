#ifndef DISPATCH_EVALUATE_HPP
#define DISPATCH_EVALUATE_HPP

#include "dispatch/netlist.hpp"
#include "dispatch/sampling.hpp"
#include "dispatch/simulator.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

struct ObjectiveVector
{
    std::vector<double> values;
    bool valid = true;

    static ObjectiveVector sentinel(std::size_t n) { return {std::vector<double>(n, big_objective), false}; }

    friend bool operator==(const ObjectiveVector &, const ObjectiveVector &) = default;
};

struct ObjectiveTerm
{
    enum class Type
    {
        MagnitudeDeviation,
        PhaseDeviation,
        ActiveCount,
        PenalizedRatio,
        Metric,
    };

    Type type = Type::MagnitudeDeviation;
    bool scale_by_seed = false;
    // PenalizedRatio / Metric only.
    std::string metric;
    double reference = 1.0;
    double alpha = 0.0;
    PenaltyDirection direction = PenaltyDirection::AboveIsBad;
    double sign = 1.0;
};

// How a simulated response turns into a minimisation vector. The deviation channels compare
// against a first-order low-pass with the given cutoff.
struct ObjectiveRecipe
{
    std::vector<ObjectiveTerm> terms;
    double cutoff_hz = 1000.0;
    double passband_edge_hz = 1000.0;
    double w_pass = 40.0;
    double w_stop = 1.0;
};

// Fixed topology whose listed components take their values from an input vector.
struct ParametricCircuit
{
    Netlist base;
    std::vector<std::size_t> tunable;
    Box limits;

    std::size_t dims() const noexcept { return tunable.size(); }

    std::vector<double> nominal() const
    {
        std::vector<double> v;
        v.reserve(tunable.size());
        for (auto i : tunable)
            v.push_back(base.components.at(i).value);
        return v;
    }

    Netlist instantiate(std::span<const double> values) const
    {
        require(values.size() == tunable.size(), "parametric circuit: value count mismatch");
        Netlist n = base;
        for (std::size_t k = 0; k < tunable.size(); ++k)
            n.components.at(tunable[k]).value = values[k];
        return n;
    }

    // Display names such as R1, C2 in netlist ordinal order.
    std::vector<std::string> names() const
    {
        std::vector<std::string> all;
        std::array<int, 4> ordinal{};
        for (const auto &c : base.components)
            all.push_back(std::string(1, kind_letter(c.kind)) + std::to_string(++ordinal[static_cast<std::size_t>(c.kind)]));
        std::vector<std::string> out;
        for (auto i : tunable)
            out.push_back(all.at(i));
        return out;
    }

    // Every component tunable, limits taken from the catalog's continuous range per kind.
    static ParametricCircuit all_components(const Netlist &n, const ComponentCatalog &catalog)
    {
        ParametricCircuit pc;
        pc.base = n;
        std::vector<Interval> dims;
        for (std::size_t i = 0; i < n.components.size(); ++i)
        {
            const auto &entry = catalog.entry(n.components[i].kind);
            pc.tunable.push_back(i);
            dims.push_back({entry.range_low, entry.range_high});
        }
        pc.limits = Box(std::move(dims));
        return pc;
    }
};

struct DesignProblem
{
    FrequencySweep sweep;
    ObjectiveRecipe recipe;
    ComponentCatalog catalog;
    Scaffold scaffold;
    std::optional<ParametricCircuit> circuit;
    // Per-term divisor (1 for unscaled terms), filled by calibrate().
    std::vector<double> scale;
    ResponseCurve ideal;

    void prepare() { ideal = first_order_lowpass(sweep, recipe.cutoff_hz); scale.assign(recipe.terms.size(), 1.0); }
};

struct Evaluation
{
    ObjectiveVector objectives;
    std::optional<Metrics> metrics;
    std::size_t active_components = 0;
};

namespace detail
{

inline std::vector<double> raw_objectives(const ResponseCurve &curve, const Metrics &m, std::size_t active,
                                          const DesignProblem &p)
{
    std::vector<double> out;
    out.reserve(p.recipe.terms.size());
    for (const auto &t : p.recipe.terms)
    {
        switch (t.type)
        {
        case ObjectiveTerm::Type::MagnitudeDeviation:
            out.push_back(weighted_deviation(curve, p.ideal, p.recipe.passband_edge_hz, p.recipe.w_pass,
                                             p.recipe.w_stop, DeviationChannel::Magnitude));
            break;
        case ObjectiveTerm::Type::PhaseDeviation:
            out.push_back(weighted_deviation(curve, p.ideal, p.recipe.passband_edge_hz, p.recipe.w_pass,
                                             p.recipe.w_stop, DeviationChannel::Phase));
            break;
        case ObjectiveTerm::Type::ActiveCount:
            out.push_back(static_cast<double>(active));
            break;
        case ObjectiveTerm::Type::PenalizedRatio:
            out.push_back(penalized_ratio(m.value(t.metric), t.reference, t.alpha, t.direction));
            break;
        case ObjectiveTerm::Type::Metric:
            out.push_back(t.sign * m.value(t.metric));
            break;
        }
    }
    return out;
}

} // namespace detail

inline Evaluation evaluate_netlist(const Netlist &netlist, std::size_t active, const DesignProblem &p)
{
    Evaluation e;
    e.active_components = active;
    try
    {
        const auto curve = simulate(netlist, p.sweep);
        Metrics m(curve, netlist.components.size());
        auto raw = detail::raw_objectives(curve, m, active, p);
        for (std::size_t i = 0; i < raw.size(); ++i)
        {
            raw[i] /= p.scale.empty() ? 1.0 : p.scale[i];
            if (!std::isfinite(raw[i]))
                return {ObjectiveVector::sentinel(p.recipe.terms.size()), std::nullopt, active};
        }
        e.objectives = {std::move(raw), true};
        e.metrics = std::move(m);
    }
    catch (const InvalidCircuit &)
    {
        e.objectives = ObjectiveVector::sentinel(p.recipe.terms.size());
    }
    return e;
}

inline Evaluation evaluate(const Chromosome &c, const DesignProblem &p)
{
    return evaluate_netlist(decode(c, p.catalog, p.scaffold), active_count(c), p);
}

inline Evaluation evaluate(std::span<const double> values, const DesignProblem &p)
{
    require(p.circuit.has_value(), "evaluate: problem has no parametric circuit");
    const auto n = p.circuit->instantiate(values);
    return evaluate_netlist(n, n.components.size(), p);
}

// Sets the divisor of every scale_by_seed term to the seed's raw objective value.
inline void calibrate(DesignProblem &p, const Netlist &seed, std::size_t seed_active)
{
    p.scale.assign(p.recipe.terms.size(), 1.0);
    const auto e = evaluate_netlist(seed, seed_active, p);
    if (!e.objectives.valid)
        throw ConfigError("seed design cannot be simulated");
    for (std::size_t i = 0; i < p.recipe.terms.size(); ++i)
        if (p.recipe.terms[i].scale_by_seed && e.objectives.values[i] > 0.0)
            p.scale[i] = e.objectives.values[i];
}

} // namespace dispatch

#endif
