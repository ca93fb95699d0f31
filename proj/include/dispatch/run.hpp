#ifndef DISPATCH_RUN_HPP
#define DISPATCH_RUN_HPP

#include "dispatch/benchmarks.hpp"
#include "dispatch/config.hpp"
#include "dispatch/evaluate.hpp"
#include "dispatch/finetune.hpp"
#include "dispatch/log.hpp"
#include "dispatch/moo.hpp"
#include "dispatch/surrogate.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dispatch
{

inline std::string fmt(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// ---- report ---------------------------------------------------------------------

struct Report
{
    std::size_t simulations = 0;
    std::size_t skipped = 0;
    std::map<std::string, std::size_t> by_phase;
    std::size_t invalid = 0;
    std::size_t meeting_spec = 0;
    std::size_t trials = 0;
    std::optional<std::size_t> best_deviation;
    std::optional<std::size_t> first_success;
    // Lowest value per objective index.
    std::vector<std::size_t> best_objective;
    // (seq, deviation, running minimum) for every record that carries a deviation.
    struct Point
    {
        std::size_t seq;
        double deviation;
        double best;
    };
    std::vector<Point> trajectory;

    std::size_t phase(const std::string &p) const
    {
        const auto it = by_phase.find(p);
        return it == by_phase.end() ? 0 : it->second;
    }
    std::size_t post_init() const { return phase("milp_proposed") + phase("random_fallback"); }
};

// Recomputes every summary figure from the records alone.
inline Report build_report(const std::vector<SimulationRecord> &records, std::size_t skipped = 0)
{
    Report r;
    r.simulations = records.size();
    r.skipped = skipped;
    double running = infinity;
    for (std::size_t i = 0; i < records.size(); ++i)
    {
        const auto &rec = records[i];
        ++r.by_phase[rec.phase];
        r.invalid += !rec.valid;
        r.trials = std::max(r.trials, rec.trial);
        if (rec.meets_spec)
        {
            ++r.meeting_spec;
            if (!r.first_success)
                r.first_success = i;
        }
        if (rec.valid && rec.deviation)
        {
            if (!r.best_deviation || *rec.deviation < *records[*r.best_deviation].deviation)
                r.best_deviation = i;
            running = std::min(running, *rec.deviation);
            r.trajectory.push_back({rec.seq, *rec.deviation, running});
        }
        if (rec.valid)
            for (std::size_t j = 0; j < rec.objectives.size(); ++j)
            {
                if (r.best_objective.size() <= j)
                    r.best_objective.resize(j + 1, i);
                if (rec.objectives[j] < records[r.best_objective[j]].objectives[j] ||
                    !records[r.best_objective[j]].valid)
                    r.best_objective[j] = i;
            }
    }
    return r;
}

inline std::string describe(const SimulationRecord &r)
{
    std::ostringstream os;
    os << "seq=" << r.seq << " phase=" << r.phase << " trial=" << r.trial;
    if (r.generation)
        os << " generation=" << *r.generation;
    os << " source=" << r.source;
    for (const auto &[n, v] : r.input)
        os << ' ' << n << '=' << fmt(v);
    if (!r.genome.empty())
        os << " genome=" << r.genome;
    if (!r.valid)
        os << " invalid";
    for (const auto &[n, v] : r.outputs)
        os << ' ' << n << '=' << fmt(v);
    if (r.deviation)
        os << " deviation=" << fmt(*r.deviation);
    os << " meets_spec=" << (r.meets_spec ? "yes" : "no");
    return os.str();
}

inline std::string report_text(const Report &rep, const std::vector<SimulationRecord> &records)
{
    std::ostringstream os;
    os << "simulations: " << rep.simulations << '\n';
    if (rep.skipped)
        os << "skipped_lines: " << rep.skipped << '\n';
    for (const char *p : {"ga", "init", "milp_proposed", "random_fallback"})
        os << "phase " << p << ": " << rep.phase(p) << '\n';
    for (const auto &[p, n] : rep.by_phase)
        if (p != "ga" && p != "init" && p != "milp_proposed" && p != "random_fallback")
            os << "phase " << p << ": " << n << '\n';
    os << "post_init: " << rep.post_init() << '\n';
    os << "trials: " << rep.trials << '\n';
    os << "invalid: " << rep.invalid << '\n';
    os << "meeting_spec: " << rep.meeting_spec << '\n';
    if (rep.first_success)
        os << "first_success: " << describe(records[*rep.first_success]) << '\n';
    if (rep.best_deviation)
        os << "best_deviation: " << describe(records[*rep.best_deviation]) << '\n';
    for (std::size_t j = 0; j < rep.best_objective.size(); ++j)
        if (records[rep.best_objective[j]].valid)
            os << "best_objective[" << j << "]: " << fmt(records[rep.best_objective[j]].objectives[j]) << " at seq "
               << records[rep.best_objective[j]].seq << '\n';
    return os.str();
}

inline void write_trajectory_csv(std::ostream &os, const Report &rep)
{
    os << "seq,deviation,best_deviation\n";
    for (const auto &p : rep.trajectory)
        os << p.seq << ',' << fmt(p.deviation) << ',' << fmt(p.best) << '\n';
}

// Per-iteration fine-tuning data: simulated vs predicted vs requirement.
inline void write_finetune_csv(std::ostream &os, const std::vector<SimulationRecord> &records,
                               const std::vector<std::string> &outputs, const DesignSpecification &spec)
{
    std::vector<std::string> inputs;
    for (const auto &r : records)
        if (r.phase != "ga" || r.source == "coarse")
        {
            for (const auto &[n, _] : r.input)
                inputs.push_back(n);
            break;
        }
    os << "seq,trial,phase,source";
    for (const auto &n : inputs)
        os << ',' << n;
    for (const auto &o : outputs)
        os << ',' << o << ',' << o << "_predicted";
    for (const auto &c : spec.constraints)
        os << ',' << c.name << "_low," << c.name << "_high";
    os << ",deviation,meets_spec\n";
    for (const auto &r : records)
    {
        if (r.phase == "ga" && r.source != "coarse")
            continue;
        os << r.seq << ',' << r.trial << ',' << r.phase << ',' << r.source;
        for (const auto &[_, v] : r.input)
            os << ',' << fmt(v);
        for (const auto &o : outputs)
        {
            os << ',';
            if (const auto v = r.output(o))
                os << fmt(*v);
            os << ',';
            for (const auto &[n, v] : r.predicted)
                if (n == o)
                    os << fmt(v);
        }
        for (const auto &c : spec.constraints)
        {
            Interval iv = c.interval();
            for (const auto &[n, req] : r.requirements)
                if (n == c.name)
                    iv = req;
            os << ',' << fmt(iv.low) << ',' << fmt(iv.high);
        }
        os << ',' << (r.deviation ? fmt(*r.deviation) : std::string()) << ',' << (r.meets_spec ? 1 : 0) << '\n';
    }
}

// ---- run ------------------------------------------------------------------------

inline std::string objective_label(const ObjectiveTerm &t)
{
    switch (t.type)
    {
    case ObjectiveTerm::Type::MagnitudeDeviation:
        return "magnitude";
    case ObjectiveTerm::Type::PhaseDeviation:
        return "phase";
    case ObjectiveTerm::Type::ActiveCount:
        return "active_components";
    case ObjectiveTerm::Type::PenalizedRatio:
        return "ratio:" + t.metric;
    case ObjectiveTerm::Type::Metric:
        return "metric:" + t.metric;
    }
    return "?";
}

inline void write_generations_csv(std::ostream &os, const std::vector<GenerationSummary> &log, const ObjectiveRecipe &recipe)
{
    os << "generation,new_simulations,cache_hits,front0_size";
    for (const auto &t : recipe.terms)
        os << ",mean_" << objective_label(t);
    for (const auto &t : recipe.terms)
        os << ",best_" << objective_label(t);
    os << '\n';
    for (const auto &g : log)
    {
        os << g.generation << ',' << g.new_simulations << ',' << g.cache_hits << ',' << g.front0_size;
        for (double v : g.mean)
            os << ',' << fmt(v);
        for (double v : g.best)
            os << ',' << fmt(v);
        os << '\n';
    }
}

struct RunResult
{
    int exit_code = 0;
    std::string outcome;
    std::optional<SimulationRecord> final_record;
    std::optional<Netlist> final_design;
    std::size_t simulations = 0;
    std::size_t cache_hits = 0;
    double wall_seconds = 0.0;
    std::filesystem::path output_dir;
};

namespace detail
{

inline SimulationRecord ga_record(const Evaluation &e, const BenchmarkProblem &b, std::size_t generation)
{
    SimulationRecord r;
    r.phase = "ga";
    r.trial = 0;
    r.generation = generation;
    r.valid = e.objectives.valid && e.metrics.has_value();
    r.objectives = e.objectives.values;
    for (const auto &c : b.spec.constraints)
        r.requirements.emplace_back(c.name, c.interval());
    if (r.valid)
    {
        for (const auto &o : b.outputs)
            r.outputs.emplace_back(o, e.metrics->value(o));
        std::vector<double> obs;
        for (const auto &c : b.spec.constraints)
            obs.push_back(e.metrics->value(c.name));
        r.deviation = fractional_deviation(obs, b.spec);
        r.meets_spec = b.spec.satisfied(obs);
    }
    return r;
}

inline std::ofstream open_out(const std::filesystem::path &p)
{
    std::ofstream os(p, std::ios::binary);
    if (!os)
        throw ConfigError("cannot write '" + p.string() + "'");
    return os;
}

} // namespace detail

// Executes one configured run and writes its artifacts into `out_dir`:
// simulations.jsonl, generations.csv, finetune.csv, final_design.net, summary.txt,
// run_info.json and, after fine-tuning, surrogate.json. Exit code 0 on Success (and after
// a completed genetic search), 2 on BestEffort.
inline RunResult run(const RunConfig &config, const std::filesystem::path &out_dir)
{
    namespace fs = std::filesystem;
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    auto log_file = detail::open_out(out_dir / "simulations.jsonl");
    SimulationLog log(log_file);
    RunResult result;
    result.output_dir = out_dir;
    const auto &b = config.problem;
    DesignProblem problem = design_problem(b);
    Rng rng(Rng::derive(config.seed, 0x6a));

    std::optional<ParametricCircuit> tune_circuit;
    std::optional<std::vector<double>> tune_start;
    std::vector<GenerationSummary> generations;

    GaConfig ga = config.ga;
    if (config.mode == RunMode::ArchitectureSearch || config.mode == RunMode::Full)
    {
        std::vector<Chromosome> seeds;
        for (const auto &n : b.seeds)
            seeds.push_back(encode_netlist(n, b.catalog, config.max_components));
        GenomeOps<Chromosome> ops;
        ops.crossover = [&](const Chromosome &x, const Chromosome &y, Rng &r) {
            return crossover(x, y, ga.crossover_probability, r);
        };
        ops.mutate = [&](Chromosome c, Rng &r) {
            return mutate(std::move(c), ga.mutation_rate, b.catalog, b.scaffold.max_nodes, r);
        };
        ops.repair = [&](Chromosome c) { return postprocess(std::move(c), b.scaffold); };
        ops.key = [](const Chromosome &c) { return genome_key(c); };
        ops.evaluate = [&problem](const Chromosome &c) { return evaluate(c, problem); };
        ops.on_simulation = [&](const Chromosome &c, const Evaluation &e, std::size_t g) {
            auto rec = detail::ga_record(e, b, g);
            rec.genome = genome_key(c);
            rec.source = origin_name(c.origin);
            log.append(std::move(rec));
        };
        const auto initial =
            architecture_population(seeds, ga.population_size, b.catalog, b.scaffold, config.max_components, rng);
        const auto evo = evolve(ga, initial, ops, rng);
        generations = evo.log;
        result.cache_hits = evo.cache_hits;
        const auto &chosen = evo.population[evo.selected];
        const Netlist coarse = decode(chosen.genome, b.catalog, b.scaffold);
        result.final_design = coarse;
        const auto key = genome_key(chosen.genome);
        for (const auto &r : log.records())
            if (r.genome == key)
                result.final_record = r;
        result.outcome = "coarse_design";
        if (config.mode == RunMode::Full)
        {
            tune_circuit = ParametricCircuit::all_components(coarse, b.catalog);
            auto start = tune_circuit->nominal();
            for (std::size_t i = 0; i < start.size(); ++i)
                start[i] = std::clamp(start[i], tune_circuit->limits[i].low, tune_circuit->limits[i].high);
            tune_start = start;
        }
    }
    else if (config.mode == RunMode::ComponentSelection)
    {
        const auto &pc = *b.circuit;
        const auto candidates = sobol_catalog(pc.limits, config.catalog_points);
        const auto names = pc.names();
        GenomeOps<std::vector<double>> ops;
        ops.crossover = [&](const std::vector<double> &x, const std::vector<double> &y, Rng &r) {
            return crossover(x, y, ga.crossover_probability, r);
        };
        ops.mutate = [&](std::vector<double> v, Rng &r) { return mutate(std::move(v), ga.mutation_rate, candidates, r); };
        ops.key = [](const std::vector<double> &v) { return genome_key(v); };
        ops.evaluate = [&problem](const std::vector<double> &v) { return evaluate(std::span<const double>(v), problem); };
        ops.on_simulation = [&](const std::vector<double> &v, const Evaluation &e, std::size_t g) {
            auto rec = detail::ga_record(e, b, g);
            for (std::size_t i = 0; i < v.size(); ++i)
                rec.input.emplace_back(names[i], v[i]);
            rec.source = g == 0 ? "sobol" : "child";
            log.append(std::move(rec));
        };
        const auto evo = evolve(ga, component_population(pc.limits, ga.population_size), ops, rng);
        generations = evo.log;
        result.cache_hits = evo.cache_hits;
        const auto &chosen = evo.population[evo.selected].genome;
        result.final_design = pc.instantiate(chosen);
        for (const auto &r : log.records())
            if (r.input_values() == chosen)
            {
                result.final_record = r;
                break;
            }
        result.outcome = "coarse_design";
    }
    else
    {
        tune_circuit = *b.circuit;
        tune_start = config.start ? *config.start : b.circuit->nominal();
    }

    std::optional<FinetuneResult> tuned;
    if (tune_circuit)
    {
        const auto fp = circuit_problem(*tune_circuit, b.sweep, b.outputs);
        FinetuneConfig fc = config.finetune;
        fc.seed = Rng::derive(config.seed, 0xf7).next_u64();
        tuned = run_finetune(fp, *tune_start, b.spec, fc, log);
        result.final_record = tuned->record;
        result.final_design = tune_circuit->instantiate(tuned->record.input_values());
        result.outcome = outcome_name(tuned->outcome);
        result.exit_code = tuned->outcome == FinetuneOutcome::Success ? 0 : 2;
        if (tuned->model)
        {
            auto os = detail::open_out(out_dir / "surrogate.json");
            checkpoint::write(os, *tuned->model);
        }
    }
    log_file.flush();
    result.simulations = log.size();

    {
        auto os = detail::open_out(out_dir / "generations.csv");
        write_generations_csv(os, generations, b.recipe);
    }
    {
        auto os = detail::open_out(out_dir / "finetune.csv");
        write_finetune_csv(os, log.records(), b.outputs, tuned ? tuned->final_spec : b.spec);
    }
    if (result.final_design)
    {
        auto os = detail::open_out(out_dir / "final_design.net");
        os << to_text(*result.final_design);
    }
    const Report rep = build_report(log.records());
    {
        auto os = detail::open_out(out_dir / "summary.txt");
        os << "problem: " << b.name << '\n' << "mode: " << mode_name(config.mode) << '\n'
           << "seed: " << config.seed << '\n' << "outcome: " << result.outcome << '\n'
           << "ga_cache_hits: " << result.cache_hits << '\n';
        os << report_text(rep, log.records());
        if (result.final_record)
        {
            os << "final: " << describe(*result.final_record) << '\n';
            const auto &spec = tuned ? tuned->final_spec : b.spec;
            for (const auto &c : spec.constraints)
            {
                const auto iv = c.interval();
                const auto v = result.final_record->output(c.name);
                os << "spec " << c.name << " in [" << fmt(iv.low) << ", " << fmt(iv.high) << "]: "
                   << (v ? fmt(*v) : std::string("n/a")) << ' ' << (v && c.satisfied(*v) ? "ok" : "violated")
                   << '\n';
            }
        }
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        nlohmann::ordered_json info;
        info["problem"] = b.name;
        info["mode"] = mode_name(config.mode);
        info["seed"] = config.seed;
        info["workers"] = config.ga.workers;
        info["outcome"] = result.outcome;
        info["exit_code"] = result.exit_code;
        info["simulations"] = result.simulations;
        info["wall_seconds"] = result.wall_seconds;
        auto os = detail::open_out(out_dir / "run_info.json");
        os << info.dump(2) << '\n';
    }
    return result;
}

} // namespace dispatch

#endif
