#ifndef DISPATCH_BENCHMARKS_HPP
#define DISPATCH_BENCHMARKS_HPP

#include "dispatch/evaluate.hpp"
#include "dispatch/finetune.hpp"
#include "dispatch/netlist.hpp"
#include "dispatch/simulator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dispatch
{

// Self-contained problem definition: everything a run needs besides its settings.
struct BenchmarkProblem
{
    std::string name;
    Scaffold scaffold;
    ComponentCatalog catalog;
    FrequencySweep sweep;
    ObjectiveRecipe recipe;
    DesignSpecification spec;
    std::vector<std::string> outputs;
    std::vector<Netlist> seeds;
    std::size_t chromosome_length = 10;
    // Fixed topology for fine-tuning alone.
    std::optional<ParametricCircuit> circuit;
};

inline ComponentCatalog lowpass_catalog()
{
    return ComponentCatalog(std::vector<KindCatalog>{
        {ComponentKind::Resistor, {1.0, 10.0, 600.0, 1200.0}, 400.0, 800.0},
        {ComponentKind::Capacitor, {1e-12, 119.37e-9, 155.12e-9, 1e-5}, 1e-8, 1e-6},
        {ComponentKind::Inductor, {1e-6, 15.24e-3, 61.86e-3, 1e-2}, 1e-6, 1e-1},
    });
}

// Third-order Butterworth ladder: series R, shunt C, series L, shunt C at the output.
inline Netlist butterworth_seed()
{
    Netlist n;
    n.components = {
        {ComponentKind::Resistor, 1, 3, 600.0},
        {ComponentKind::Capacitor, 3, 0, 119.37e-9},
        {ComponentKind::Inductor, 3, 2, 15.24e-3},
        {ComponentKind::Capacitor, 2, 0, 155.12e-9},
    };
    return n;
}

inline Netlist rc_lowpass(double r, double c)
{
    Netlist n;
    n.components = {{ComponentKind::Resistor, 1, 2, r}, {ComponentKind::Capacitor, 2, 0, c}};
    return n;
}

inline FrequencySweep lowpass_sweep() { return FrequencySweep::log_spaced(10.0, 1e6, 200); }

inline ObjectiveRecipe lowpass_recipe()
{
    auto term = [](ObjectiveTerm::Type type, bool scaled) {
        ObjectiveTerm t;
        t.type = type;
        t.scale_by_seed = scaled;
        return t;
    };
    ObjectiveRecipe r;
    r.terms = {
        term(ObjectiveTerm::Type::MagnitudeDeviation, true),
        term(ObjectiveTerm::Type::PhaseDeviation, true),
        term(ObjectiveTerm::Type::ActiveCount, false),
    };
    r.cutoff_hz = 1000.0;
    r.passband_edge_hz = 1000.0;
    r.w_pass = 40.0;
    r.w_stop = 1.0;
    return r;
}

inline DesignSpecification lowpass_spec()
{
    DesignSpecification s;
    s.constraints = {
        OutputConstraint::within("dc_gain_db", -0.92, 0.83),
        OutputConstraint::within("bandwidth_hz", 990.0, 1010.0),
    };
    return s;
}

inline std::vector<std::string> lowpass_outputs()
{
    return {"dc_gain_db", "bandwidth_hz", "mag_db@200", "mag_db@500", "mag_db@2000"};
}

// Single-pole RC with the continuous ranges R in [400, 800] ohm and C in [0.01, 1] uF.
inline ParametricCircuit lowpass_tune_circuit(double r = 660.0, double c = 0.25e-6)
{
    ParametricCircuit pc;
    pc.base = rc_lowpass(r, c);
    pc.tunable = {0, 1};
    pc.limits = Box({{400.0, 800.0}, {1e-8, 1e-6}});
    return pc;
}

inline BenchmarkProblem lowpass_benchmark(std::string name)
{
    BenchmarkProblem b;
    b.name = std::move(name);
    b.catalog = lowpass_catalog();
    b.sweep = lowpass_sweep();
    b.recipe = lowpass_recipe();
    b.spec = lowpass_spec();
    b.outputs = lowpass_outputs();
    b.seeds = {butterworth_seed()};
    return b;
}

// Lookup by name: lowpass-arch, lowpass-tune, rc-sanity.
inline std::optional<BenchmarkProblem> find_benchmark(const std::string &name)
{
    if (name == "lowpass-arch")
        return lowpass_benchmark(name);
    if (name == "lowpass-tune")
    {
        auto b = lowpass_benchmark(name);
        b.circuit = lowpass_tune_circuit();
        return b;
    }
    if (name == "rc-sanity")
    {
        auto b = lowpass_benchmark(name);
        b.circuit = lowpass_tune_circuit(600.0, 265.258e-9);
        return b;
    }
    return std::nullopt;
}

inline std::vector<std::string> benchmark_names() { return {"lowpass-arch", "lowpass-tune", "rc-sanity"}; }

inline DesignProblem design_problem(const BenchmarkProblem &b)
{
    DesignProblem p;
    p.sweep = b.sweep;
    p.recipe = b.recipe;
    p.catalog = b.catalog;
    p.scaffold = b.scaffold;
    p.circuit = b.circuit;
    p.prepare();
    if (!b.seeds.empty())
        calibrate(p, b.seeds.front(), b.seeds.front().components.size());
    return p;
}

// Fine-tuning view of a fixed topology: component values in, named metrics out.
inline FinetuneProblem circuit_problem(const ParametricCircuit &circuit, const FrequencySweep &sweep,
                                       const std::vector<std::string> &outputs)
{
    for (const auto &o : outputs)
        if (!Metrics::known_metric(o))
            throw ConfigError("unknown output metric '" + o + "'");
    FinetuneProblem p;
    p.input_names = circuit.names();
    p.limits = circuit.limits;
    p.output_names = outputs;
    p.simulate = [circuit, sweep, outputs](std::span<const double> x) -> std::optional<std::vector<double>> {
        try
        {
            const Netlist n = circuit.instantiate(x);
            const Metrics m(simulate(n, sweep), n.components.size());
            std::vector<double> y;
            for (const auto &o : outputs)
                y.push_back(m.value(o));
            return y;
        }
        catch (const InvalidCircuit &)
        {
            return std::nullopt;
        }
    };
    return p;
}

} // namespace dispatch

#endif
