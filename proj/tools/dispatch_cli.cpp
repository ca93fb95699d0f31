#include "dispatch/config.hpp"
#include "dispatch/milp.hpp"
#include "dispatch/netlist.hpp"
#include "dispatch/run.hpp"
#include "dispatch/simulator.hpp"
#include "dispatch/surrogate.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace
{

using namespace dispatch;

std::string read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

FrequencySweep parse_sweep(const std::string &s)
{
    std::istringstream in(s);
    std::string a, b, c;
    if (!std::getline(in, a, ',') || !std::getline(in, b, ',') || !std::getline(in, c) || c.find(',') != std::string::npos)
        throw ConfigError("--sweep expects fmin,fmax,n");
    try
    {
        std::size_t used = 0;
        const double lo = std::stod(a), hi = std::stod(b);
        const long n = std::stol(c, &used);
        if (used != c.size() || n <= 0)
            throw ConfigError("--sweep point count must be a positive integer");
        return FrequencySweep::log_spaced(lo, hi, static_cast<std::size_t>(n));
    }
    catch (const std::logic_error &)
    {
        throw ConfigError("--sweep expects fmin,fmax,n");
    }
}

int cmd_run(const std::string &config_path, std::optional<std::size_t> workers, std::optional<std::uint64_t> seed,
            std::string out)
{
    auto config = load_config(config_path);
    if (workers)
        config.ga.workers = *workers;
    if (seed)
        config.seed = *seed;
    if (out.empty())
        if (const char *env = std::getenv("DISPATCH_OUT"); env && *env)
            out = env;
    if (out.empty())
        out = config.output_dir.empty() ? "dispatch-out" : config.output_dir;
    const auto r = run(config, out);
    std::cout << "outcome: " << r.outcome << '\n' << "simulations: " << r.simulations << '\n';
    if (r.final_record)
        std::cout << "final: " << describe(*r.final_record) << '\n';
    std::cout << "artifacts: " << r.output_dir.string() << '\n';
    return r.exit_code;
}

int cmd_simulate(const std::string &netlist_path, const std::string &sweep)
{
    std::ifstream in(netlist_path);
    if (!in)
        throw ConfigError("cannot open netlist '" + netlist_path + "'");
    const auto netlist = parse_netlist(in);
    simulate(netlist, parse_sweep(sweep)).write_csv(std::cout);
    return 0;
}

int cmd_report(const std::string &log_path, const std::string &csv)
{
    std::ifstream in(log_path);
    if (!in)
        throw ConfigError("cannot open log '" + log_path + "'");
    const auto log = read_log(in);
    const auto rep = build_report(log.records, log.skipped);
    std::cout << report_text(rep, log.records);
    if (log.skipped)
        std::cerr << "warning: skipped " << log.skipped << " malformed log line(s)\n";
    if (!csv.empty())
    {
        std::ofstream os(csv);
        if (!os)
            throw ConfigError("cannot write '" + csv + "'");
        write_trajectory_csv(os, rep);
    }
    return 0;
}

int cmd_export_lp(const std::string &model_path, const std::string &spec_path, const std::string &out)
{
    std::ifstream in(model_path);
    if (!in)
        throw ConfigError("cannot open model '" + model_path + "'");
    const auto model = checkpoint::read(in);
    const auto spec = parse_spec(read_file(spec_path), model.output_names);
    std::vector<Interval> intervals(model.spec.output_dim, {-infinity, infinity});
    for (const auto &c : spec.constraints)
    {
        const auto it = std::find(model.output_names.begin(), model.output_names.end(), c.name);
        const auto j = static_cast<std::size_t>(it - model.output_names.begin());
        const auto iv = c.interval();
        intervals[j].low = std::max(intervals[j].low, std::isfinite(iv.low) ? model.output.normalize(j, iv.low) : -infinity);
        intervals[j].high = std::min(intervals[j].high, std::isfinite(iv.high) ? model.output.normalize(j, iv.high) : infinity);
    }
    const auto program = encode(model.params, Box(std::vector<Interval>(model.spec.input_dim, {0.0, 1.0})), intervals);
    if (out.empty())
        write_lp(std::cout, program);
    else
    {
        std::ofstream os(out);
        if (!os)
            throw ConfigError("cannot write '" + out + "'");
        write_lp(os, program);
    }
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"dispatch: genetic architecture search and surrogate-guided fine-tuning"};
    app.require_subcommand(1);

    std::string config_path, out, netlist, sweep, log_path, csv, model, spec, lp_out;
    std::optional<std::size_t> workers;
    std::optional<std::uint64_t> seed;

    auto *run_cmd = app.add_subcommand("run", "run a configured problem (file or bundled name)");
    run_cmd->add_option("--config", config_path, "config file or one of lowpass-arch, lowpass-tune, rc-sanity")->required();
    run_cmd->add_option("--workers", workers, "parallel evaluation workers")->check(CLI::PositiveNumber);
    run_cmd->add_option("--seed", seed, "master random seed");
    run_cmd->add_option("--out", out, "output directory (default $DISPATCH_OUT)");

    auto *sim_cmd = app.add_subcommand("simulate", "AC sweep of a netlist as CSV");
    sim_cmd->add_option("--netlist", netlist, "netlist file")->required();
    sim_cmd->add_option("--sweep", sweep, "fmin,fmax,n (log spaced)")->required();

    auto *rep_cmd = app.add_subcommand("report", "summarise a simulation log");
    rep_cmd->add_option("--log", log_path, "simulations.jsonl")->required();
    rep_cmd->add_option("--csv", csv, "write the deviation trajectory here");

    auto *lp_cmd = app.add_subcommand("export-lp", "write the surrogate feasibility program in LP format");
    lp_cmd->add_option("--model", model, "surrogate checkpoint")->required();
    lp_cmd->add_option("--spec", spec, "specification JSON")->required();
    lp_cmd->add_option("--out", lp_out, "output file (default stdout)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try
    {
        if (*run_cmd)
            return cmd_run(config_path, workers, seed, out);
        if (*sim_cmd)
            return cmd_simulate(netlist, sweep);
        if (*rep_cmd)
            return cmd_report(log_path, csv);
        if (*lp_cmd)
            return cmd_export_lp(model, spec, lp_out);
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
