#ifndef DISPATCH_CONFIG_HPP
#define DISPATCH_CONFIG_HPP

#include "dispatch/benchmarks.hpp"
#include "dispatch/error.hpp"
#include "dispatch/finetune.hpp"
#include "dispatch/moo.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dispatch
{

enum class RunMode
{
    ArchitectureSearch,
    ComponentSelection,
    FinetuneOnly,
    Full,
};

inline const char *mode_name(RunMode m)
{
    switch (m)
    {
    case RunMode::ArchitectureSearch:
        return "architecture_search";
    case RunMode::ComponentSelection:
        return "component_selection";
    case RunMode::FinetuneOnly:
        return "finetune_only";
    case RunMode::Full:
        return "full";
    }
    return "?";
}

inline std::optional<RunMode> parse_mode(const std::string &s)
{
    for (auto m : {RunMode::ArchitectureSearch, RunMode::ComponentSelection, RunMode::FinetuneOnly, RunMode::Full})
        if (s == mode_name(m))
            return m;
    return std::nullopt;
}

struct RunConfig
{
    BenchmarkProblem problem;
    RunMode mode = RunMode::ArchitectureSearch;
    GaConfig ga;
    std::size_t max_components = 10;
    // Sobol-discretised candidate values per parameter in component selection.
    std::size_t catalog_points = 64;
    FinetuneConfig finetune;
    // Fine-tuning start point; defaults to the circuit's nominal values.
    std::optional<std::vector<double>> start;
    std::uint64_t seed = 0;
    std::string output_dir;

    void validate() const
    {
        ga.validate();
        finetune.validate();
        problem.catalog.validate();
        problem.scaffold.validate();
        problem.spec.validate();
        if (max_components == 0)
            throw ConfigError("ga.max_components must be >= 1");
        if (catalog_points == 0)
            throw ConfigError("ga.catalog_points must be >= 1");
        if (problem.outputs.empty())
            throw ConfigError("outputs must name at least one metric");
        for (const auto &o : problem.outputs)
            if (!Metrics::known_metric(o))
                throw ConfigError("unknown output metric '" + o + "'");
        for (const auto &c : problem.spec.constraints)
            if (std::find(problem.outputs.begin(), problem.outputs.end(), c.name) == problem.outputs.end())
                throw ConfigError("spec constraint '" + c.name + "' is not among the outputs");
        const bool needs_circuit = mode == RunMode::ComponentSelection || mode == RunMode::FinetuneOnly;
        if (needs_circuit && !problem.circuit)
            throw ConfigError(std::string("mode ") + mode_name(mode) + " needs a circuit");
        if (problem.circuit)
        {
            if (problem.circuit->limits.size() != problem.circuit->tunable.size())
                throw ConfigError("circuit limits must list one interval per tunable component");
            for (const auto &iv : problem.circuit->limits.dims())
                if (!(iv.low < iv.high))
                    throw ConfigError("circuit limit intervals need low < high");
            if (start)
            {
                if (start->size() != problem.circuit->tunable.size())
                    throw ConfigError("circuit.start must list one value per tunable component");
                if (!problem.circuit->limits.contains(*start))
                    throw ConfigError("circuit.start lies outside the circuit limits");
            }
            else if (!problem.circuit->limits.contains(problem.circuit->nominal()))
                throw ConfigError("circuit nominal values lie outside the circuit limits");
        }
        if (mode == RunMode::ArchitectureSearch || mode == RunMode::Full)
        {
            if (problem.seeds.size() > ga.population_size)
                throw ConfigError("more seed netlists than population slots");
            for (const auto &s : problem.seeds)
                if (s.components.size() > problem.chromosome_length)
                    throw ConfigError("seed netlist has more components than ga.max_components");
        }
        if (ga.metric_index >= problem.recipe.terms.size())
            throw ConfigError("ga.metric_index exceeds the objective count");
        if (ga.selection_tiebreak && *ga.selection_tiebreak >= problem.recipe.terms.size())
            throw ConfigError("ga.selection_tiebreak exceeds the objective count");
    }
};

// Built-in defaults for a bundled benchmark.
inline RunConfig default_config(const std::string &problem)
{
    auto b = find_benchmark(problem);
    if (!b)
        throw ConfigError("unknown problem '" + problem + "'");
    RunConfig c;
    c.problem = std::move(*b);
    c.mode = c.problem.circuit ? RunMode::FinetuneOnly : RunMode::ArchitectureSearch;
    c.ga.tournament_size = 10;
    c.ga.mutation_rate = 0.1;
    c.ga.crossover_probability = 0.9;
    c.ga.selection_tolerance = 0.01;
    c.ga.selection_tiebreak = 2;
    c.finetune.init_samples = 10;
    return c;
}

namespace detail
{

using ojson = nlohmann::ordered_json;

inline std::size_t line_at(const std::string &text, std::size_t byte)
{
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

// Position of `"key"` followed by ':' at or after `from`.
inline std::size_t find_key(const std::string &text, const std::string &key, std::size_t from)
{
    const std::string quoted = '"' + key + '"';
    for (auto pos = text.find(quoted, from); pos != std::string::npos; pos = text.find(quoted, pos + 1))
    {
        auto after = text.find_first_not_of(" \t\r\n", pos + quoted.size());
        if (after != std::string::npos && text[after] == ':')
            return pos;
    }
    return std::string::npos;
}

// Checked access to one JSON object; remembers which keys were read so leftovers can be
// reported as unknown, with the source line of the offending key.
class ObjectReader
{
public:
    ObjectReader(const ojson &obj, std::string path, const std::string &text, std::size_t from)
        : obj_(obj)
        , path_(std::move(path))
        , text_(text)
        , from_(from)
    {
        if (!obj_.is_object())
            fail("expected an object", from_);
    }

    [[noreturn]] void fail(const std::string &what, std::size_t pos = std::string::npos) const
    {
        const std::size_t line = pos == std::string::npos ? 0 : line_at(text_, pos);
        throw ParseError((path_.empty() ? "" : path_ + ": ") + what, line);
    }

    std::size_t pos(const std::string &key) const
    {
        const auto p = find_key(text_, key, from_);
        return p == std::string::npos ? from_ : p;
    }

    bool has(const std::string &key)
    {
        seen_.insert(key);
        return obj_.contains(key);
    }

    const ojson &raw(const std::string &key)
    {
        seen_.insert(key);
        if (!obj_.contains(key))
            fail("'" + key + "' is required", from_);
        return obj_.at(key);
    }

    ObjectReader child(const std::string &key)
    {
        raw(key);
        return ObjectReader(obj_.at(key), qualified(key), text_, pos(key));
    }

    const std::string &text() const noexcept { return text_; }

    std::string qualified(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

    template <typename T>
    void read(const std::string &key, T &out)
    {
        if (!has(key))
            return;
        const auto &v = obj_.at(key);
        try
        {
            if constexpr (std::is_same_v<T, bool>)
            {
                if (!v.is_boolean())
                    throw std::invalid_argument("expected true or false");
                out = v.get<bool>();
            }
            else if constexpr (std::is_integral_v<T>)
            {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
                    throw std::invalid_argument("expected a non-negative integer");
                out = v.get<T>();
            }
            else if constexpr (std::is_floating_point_v<T>)
            {
                if (!v.is_number())
                    throw std::invalid_argument("expected a number");
                out = v.get<T>();
            }
            else if constexpr (std::is_same_v<T, std::string>)
            {
                if (!v.is_string())
                    throw std::invalid_argument("expected a string");
                out = v.get<std::string>();
            }
            else
                out = v.get<T>();
        }
        catch (const std::exception &e)
        {
            fail("'" + key + "': " + e.what(), pos(key));
        }
    }

    std::vector<double> numbers(const std::string &key)
    {
        const auto &v = raw(key);
        if (!v.is_array())
            fail("'" + key + "': expected an array of numbers", pos(key));
        std::vector<double> out;
        for (const auto &x : v)
        {
            if (!x.is_number())
                fail("'" + key + "': expected an array of numbers", pos(key));
            out.push_back(x.get<double>());
        }
        return out;
    }

    Interval interval(const std::string &key)
    {
        const auto v = numbers(key);
        if (v.size() != 2)
            fail("'" + key + "': expected [low, high]", pos(key));
        return {v[0], v[1]};
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key()))
                fail("unknown key '" + it.key() + "'", pos(it.key()));
    }

private:
    const ojson &obj_;
    std::string path_;
    const std::string &text_;
    std::size_t from_;
    std::set<std::string> seen_;
};

inline ojson parse_json_text(const std::string &text)
{
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw ParseError("empty configuration", 1);
    try
    {
        return ojson::parse(text);
    }
    catch (const nlohmann::json::parse_error &e)
    {
        const std::string msg = e.what();
        const auto colon = msg.find(": ", msg.find("parse error"));
        throw ParseError("malformed JSON" + (colon == std::string::npos ? std::string() : msg.substr(colon)),
                         line_at(text, e.byte == 0 ? 0 : e.byte - 1));
    }
}

inline DesignSpecification read_spec(ObjectReader r, const std::vector<std::string> &outputs)
{
    DesignSpecification spec;
    const auto &list = r.raw("constraints");
    if (!list.is_array() || list.empty())
        r.fail("'constraints' must be a non-empty array", r.pos("constraints"));
    std::size_t cursor = r.pos("constraints");
    for (std::size_t i = 0; i < list.size(); ++i)
    {
        const auto found = find_key(r.text(), "output", cursor);
        const std::size_t item_pos = found == std::string::npos ? cursor : found;
        ObjectReader c(list[i], r.qualified("constraints[" + std::to_string(i) + "]"), r.text(), item_pos);
        OutputConstraint oc;
        c.read("output", oc.name);
        if (oc.name.empty())
            c.fail("'output' is required", item_pos);
        if (!outputs.empty() && std::find(outputs.begin(), outputs.end(), oc.name) == outputs.end())
            c.fail("output '" + oc.name + "' is not among the outputs", c.pos("output"));
        const int kinds = c.has("at_least") + c.has("at_most") + c.has("within");
        if (kinds != 1)
            c.fail("give exactly one of 'at_least', 'at_most', 'within'", c.pos("output"));
        if (c.has("at_least"))
        {
            oc.bound = Bound::AtLeast;
            c.read("at_least", oc.low);
        }
        else if (c.has("at_most"))
        {
            oc.bound = Bound::AtMost;
            c.read("at_most", oc.high);
        }
        else
        {
            oc.bound = Bound::Within;
            const auto iv = c.interval("within");
            oc.low = iv.low;
            oc.high = iv.high;
        }
        c.read("hard", oc.hard);
        c.finish();
        spec.constraints.push_back(oc);
        cursor = item_pos + 1;
    }
    if (r.has("target"))
    {
        auto t = r.child("target");
        TighteningTarget target;
        std::string name;
        t.read("output", name);
        bool found = false;
        for (std::size_t i = 0; i < spec.constraints.size(); ++i)
            if (spec.constraints[i].name == name)
            {
                target.constraint = i;
                found = true;
                break;
            }
        if (!found)
            t.fail("target output '" + name + "' has no constraint", t.pos("output"));
        t.read("step", target.step);
        t.finish();
        spec.target = target;
    }
    r.finish();
    try
    {
        spec.validate();
    }
    catch (const ConfigError &e)
    {
        r.fail(e.what(), r.pos("constraints"));
    }
    return spec;
}

inline ComponentKind kind_from_name(const ObjectReader &r, const std::string &name)
{
    if (name == "resistor")
        return ComponentKind::Resistor;
    if (name == "capacitor")
        return ComponentKind::Capacitor;
    if (name == "inductor")
        return ComponentKind::Inductor;
    r.fail("unknown component kind '" + name + "' (resistor, capacitor, inductor)", r.pos(name));
}

inline Netlist read_netlist_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open netlist '" + path.string() + "'");
    try
    {
        return parse_netlist(in);
    }
    catch (const ParseError &e)
    {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void read_ga(ObjectReader r, RunConfig &c)
{
    r.read("population_size", c.ga.population_size);
    r.read("max_generations", c.ga.max_generations);
    r.read("tournament_size", c.ga.tournament_size);
    r.read("mutation_rate", c.ga.mutation_rate);
    r.read("crossover_probability", c.ga.crossover_probability);
    r.read("metric_index", c.ga.metric_index);
    if (r.has("objective_threshold") && !r.raw("objective_threshold").is_null())
    {
        double v = 0.0;
        r.read("objective_threshold", v);
        c.ga.objective_threshold = v;
    }
    r.read("stagnation_window", c.ga.stagnation_window);
    r.read("stagnation_min_generations", c.ga.stagnation_min_generations);
    r.read("simulation_budget", c.ga.simulation_budget);
    r.read("max_components", c.max_components);
    r.read("catalog_points", c.catalog_points);
    r.read("selection_tolerance", c.ga.selection_tolerance);
    if (r.has("selection_tiebreak"))
    {
        if (r.raw("selection_tiebreak").is_null())
            c.ga.selection_tiebreak.reset();
        else
        {
            std::size_t v = 0;
            r.read("selection_tiebreak", v);
            c.ga.selection_tiebreak = v;
        }
    }
    r.finish();
    try
    {
        c.ga.validate();
    }
    catch (const ConfigError &e)
    {
        r.fail(e.what(), r.pos("population_size"));
    }
}

inline void read_finetune(ObjectReader r, FinetuneConfig &f)
{
    r.read("max_trials", f.max_trials);
    r.read("first_trial_budget", f.first_trial_budget);
    r.read("later_trial_budget", f.later_trial_budget);
    r.read("init_samples", f.init_samples);
    r.read("later_init_samples", f.later_init_samples);
    r.read("box_fraction", f.box_fraction);
    r.read("time_limit_seconds", f.time_limit_seconds);
    if (r.has("hidden"))
    {
        f.hidden.clear();
        for (double h : r.numbers("hidden"))
        {
            if (!(h >= 1.0) || h != std::floor(h))
                r.fail("'hidden': widths must be positive integers", r.pos("hidden"));
            f.hidden.push_back(static_cast<std::size_t>(h));
        }
    }
    r.read("learning_rate", f.initial_training.learning_rate);
    r.read("max_iterations", f.initial_training.max_iterations);
    r.read("patience", f.initial_training.patience);
    f.retraining.learning_rate = f.initial_training.learning_rate;
    f.retraining.max_iterations = f.initial_training.max_iterations;
    f.retraining.patience = f.initial_training.patience;
    r.read("retrain_learning_rate", f.retraining.learning_rate);
    r.read("retrain_max_iterations", f.retraining.max_iterations);
    r.read("node_limit", f.solver.node_limit);
    r.read("solver_time_limit_seconds", f.solver.time_limit_seconds);
    r.read("interval_shrink", f.interval_shrink);
    r.read("one_sided_margin", f.one_sided_margin);
    r.finish();
    try
    {
        f.validate();
    }
    catch (const ConfigError &e)
    {
        r.fail(e.what());
    }
}

inline ComponentCatalog read_catalog(ObjectReader r, const ComponentCatalog &base)
{
    std::vector<KindCatalog> kinds = base.kinds();
    for (const std::string name : {"resistor", "capacitor", "inductor"})
    {
        if (!r.has(name))
            continue;
        const auto kind = kind_from_name(r, name);
        auto e = r.child(name);
        KindCatalog kc{kind, {}, 0.0, 0.0};
        kc.values = e.numbers("values");
        const auto range = e.interval("range");
        kc.range_low = range.low;
        kc.range_high = range.high;
        e.finish();
        auto it = std::find_if(kinds.begin(), kinds.end(), [&](const KindCatalog &x) { return x.kind == kind; });
        if (it == kinds.end())
            kinds.push_back(kc);
        else
            *it = kc;
    }
    r.finish();
    try
    {
        ComponentCatalog cat(kinds);
        cat.validate();
        return cat;
    }
    catch (const ConfigError &e)
    {
        r.fail(e.what());
    }
}

} // namespace detail

// Parses a configuration document. Relative file references resolve against `base_dir`.
inline RunConfig parse_config(const std::string &text, const std::filesystem::path &base_dir = {})
{
    using detail::ObjectReader;
    const auto doc = detail::parse_json_text(text);
    ObjectReader r(doc, "", text, 0);
    std::string problem;
    r.read("problem", problem);
    if (problem.empty())
        r.fail("'problem' is required (one of lowpass-arch, lowpass-tune, rc-sanity)", 0);
    RunConfig c;
    try
    {
        c = default_config(problem);
    }
    catch (const ConfigError &e)
    {
        r.fail(e.what(), r.pos("problem"));
    }
    if (r.has("mode"))
    {
        std::string m;
        r.read("mode", m);
        const auto mode = parse_mode(m);
        if (!mode)
            r.fail("unknown mode '" + m + "'", r.pos("mode"));
        c.mode = *mode;
    }
    r.read("seed", c.seed);
    r.read("workers", c.ga.workers);
    r.read("output_dir", c.output_dir);
    if (r.has("ga"))
        detail::read_ga(r.child("ga"), c);
    if (r.has("finetune"))
        detail::read_finetune(r.child("finetune"), c.finetune);
    if (r.has("catalog"))
        c.problem.catalog = detail::read_catalog(r.child("catalog"), c.problem.catalog);
    if (r.has("sweep"))
    {
        auto s = r.child("sweep");
        double lo = c.problem.sweep.f_min(), hi = c.problem.sweep.f_max();
        std::size_t n = c.problem.sweep.size();
        s.read("f_min", lo);
        s.read("f_max", hi);
        s.read("points", n);
        s.finish();
        try
        {
            c.problem.sweep = FrequencySweep::log_spaced(lo, hi, n);
        }
        catch (const ConfigError &e)
        {
            s.fail(e.what(), s.pos("f_min"));
        }
    }
    if (r.has("outputs"))
    {
        const auto &o = r.raw("outputs");
        if (!o.is_array() || o.empty())
            r.fail("'outputs' must be a non-empty array of metric names", r.pos("outputs"));
        c.problem.outputs.clear();
        for (const auto &x : o)
        {
            if (!x.is_string() || !Metrics::known_metric(x.get<std::string>()))
                r.fail("'outputs': unknown metric " + x.dump(), r.pos("outputs"));
            c.problem.outputs.push_back(x.get<std::string>());
        }
    }
    if (r.has("spec"))
        c.problem.spec = detail::read_spec(r.child("spec"), c.problem.outputs);
    if (r.has("seed_netlists"))
    {
        const auto &list = r.raw("seed_netlists");
        if (!list.is_array())
            r.fail("'seed_netlists' must be an array of paths", r.pos("seed_netlists"));
        c.problem.seeds.clear();
        for (const auto &x : list)
        {
            if (!x.is_string())
                r.fail("'seed_netlists' must be an array of paths", r.pos("seed_netlists"));
            try
            {
                c.problem.seeds.push_back(detail::read_netlist_file(base_dir / x.get<std::string>()));
            }
            catch (const Error &e)
            {
                r.fail(e.what(), r.pos("seed_netlists"));
            }
        }
    }
    if (r.has("circuit"))
    {
        auto cr = r.child("circuit");
        ParametricCircuit pc;
        try
        {
            pc.base = detail::read_netlist_file(base_dir / cr.raw("netlist").get<std::string>());
        }
        catch (const Error &e)
        {
            cr.fail(e.what(), cr.pos("netlist"));
        }
        catch (const nlohmann::json::exception &)
        {
            cr.fail("'netlist' must be a path", cr.pos("netlist"));
        }
        for (std::size_t i = 0; i < pc.base.components.size(); ++i)
            pc.tunable.push_back(i);
        if (cr.has("limits"))
        {
            const auto &lim = cr.raw("limits");
            std::vector<Interval> dims;
            if (!lim.is_array())
                cr.fail("'limits' must be an array of [low, high] pairs", cr.pos("limits"));
            for (const auto &iv : lim)
            {
                if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
                    cr.fail("'limits' must be an array of [low, high] pairs", cr.pos("limits"));
                dims.push_back({iv[0].get<double>(), iv[1].get<double>()});
            }
            pc.limits = Box(std::move(dims));
        }
        else
            pc.limits = ParametricCircuit::all_components(pc.base, c.problem.catalog).limits;
        if (cr.has("start"))
            c.start = cr.numbers("start");
        cr.finish();
        c.problem.circuit = std::move(pc);
    }
    r.finish();
    c.problem.chromosome_length = c.max_components;
    try
    {
        c.validate();
    }
    catch (const ParseError &)
    {
        throw;
    }
    catch (const ConfigError &e)
    {
        throw ParseError(e.what());
    }
    return c;
}

// A bundled benchmark name or a path to a JSON file.
inline RunConfig load_config(const std::string &name_or_path)
{
    namespace fs = std::filesystem;
    if (!fs::exists(name_or_path) && find_benchmark(name_or_path))
    {
        auto c = default_config(name_or_path);
        c.validate();
        return c;
    }
    std::ifstream in(name_or_path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open config '" + name_or_path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try
    {
        return parse_config(ss.str(), fs::path(name_or_path).parent_path());
    }
    catch (const ParseError &e)
    {
        throw e.in_file(name_or_path);
    }
}

// A standalone specification document: {"constraints": [...], "target": {...}}.
inline DesignSpecification parse_spec(const std::string &text, const std::vector<std::string> &outputs = {})
{
    const auto doc = detail::parse_json_text(text);
    return detail::read_spec(detail::ObjectReader(doc, "", text, 0), outputs);
}

} // namespace dispatch

#endif
