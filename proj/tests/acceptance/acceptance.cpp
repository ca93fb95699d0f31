#include "dispatch/benchmarks.hpp"
#include "dispatch/config.hpp"
#include "dispatch/milp.hpp"
#include "dispatch/moo.hpp"
#include "dispatch/run.hpp"
#include "dispatch/simulator.hpp"
#include "dispatch/surrogate.hpp"
#include "../oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

using namespace dispatch;
namespace fs = std::filesystem;

namespace
{

struct Verdict
{
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string &name, const Verdict &v)
{
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << id << "  " << name << ": " << v.detail << std::endl;
    if (!v.pass)
        ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

fs::path scratch_dir(const std::string &tag)
{
    const auto d = fs::temp_directory_path() / ("dispatch-acceptance-" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict finetune_reproduction()
{
    const auto b = *find_benchmark("lowpass-tune");
    std::vector<std::size_t> post;
    std::size_t successes = 0;
    bool intervals_ok = true;
    double slowest = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
    {
        auto config = load_config("lowpass-tune");
        config.seed = seed;
        const auto t = std::chrono::steady_clock::now();
        const auto r = run(config, scratch_dir("tune"));
        slowest = std::max(slowest, seconds_since(t));
        std::ifstream in(r.output_dir / "simulations.jsonl");
        const auto log = read_log(in);
        std::size_t n = 0;
        for (const auto &rec : log.records)
            if (rec.phase != "ga" && rec.phase != "init")
                ++n;
        post.push_back(n);
        if (r.outcome == "success")
            ++successes;
        for (const auto &rec : log.records)
            if (rec.meets_spec)
            {
                std::vector<double> obs;
                for (const auto &c : b.spec.constraints)
                    obs.push_back(rec.output(c.name).value_or(std::nan("")));
                intervals_ok = intervals_ok && rec.valid && b.spec.satisfied(obs);
            }
    }
    auto sorted = post;
    std::sort(sorted.begin(), sorted.end());
    const double median = (static_cast<double>(sorted[4]) + static_cast<double>(sorted[5])) / 2.0;
    std::ostringstream d;
    d << "median post-init simulations " << median << " (";
    for (std::size_t i = 0; i < post.size(); ++i)
        d << (i ? "," : "") << post[i];
    d << "), " << successes << "/10 succeeded, success records in spec " << (intervals_ok ? "yes" : "no")
      << ", slowest seed " << fmt(slowest) << " s";
    return {median <= 100.0 && successes == 10 && intervals_ok && slowest < 300.0, d.str()};
}

Verdict architecture_search()
{
    std::size_t good = 0;
    double slowest = 0.0;
    std::ostringstream d;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
    {
        auto config = load_config("lowpass-arch");
        config.seed = seed;
        const auto t = std::chrono::steady_clock::now();
        const auto r = run(config, scratch_dir("arch"));
        slowest = std::max(slowest, seconds_since(t));
        if (!r.final_record || !r.final_design || !r.final_record->valid)
        {
            d << " seed " << seed << ": invalid;";
            continue;
        }
        const double gain = *r.final_record->output("dc_gain_db");
        const double bw = *r.final_record->output("bandwidth_hz");
        const std::size_t active = r.final_design->components.size();
        const bool ok = std::abs(gain) <= 1.0 && bw >= 800.0 && bw <= 1200.0 && active <= 5;
        good += ok;
        d << " seed " << seed << ": " << fmt(bw) << " Hz/" << active << (ok ? "" : " x") << ";";
    }
    std::ostringstream head;
    head << good << "/10 selected designs meet gain, bandwidth and size, slowest run " << fmt(slowest) << " s;"
         << d.str();
    return {good >= 7 && slowest < 600.0, head.str()};
}

Verdict milp_oracle()
{
    Rng rng(20240601);
    std::size_t compared = 0, agree = 0, feasible = 0, verified = 0;
    while (compared < 200)
    {
        const auto inst = oracle::random_milp_instance(rng);
        const auto verdict = oracle::pattern_oracle(inst.params, inst.box, inst.intervals);
        if (verdict == oracle::PatternVerdict::Ambiguous)
            continue;
        ++compared;
        const auto r = solve(encode(inst.params, inst.box, inst.intervals));
        const bool want = verdict == oracle::PatternVerdict::Feasible;
        if (want ? r.status == SolveStatus::Feasible : r.status == SolveStatus::Infeasible)
            ++agree;
        if (r.status == SolveStatus::Feasible)
        {
            ++feasible;
            verified += inst.box.contains(r.point, 0.0) && verify_feasible(inst.params, r.point, inst.intervals, 1e-6);
        }
    }
    std::ostringstream d;
    d << agree << "/200 statuses match the pattern oracle, " << verified << "/" << feasible << " feasible points verified";
    return {agree == 200 && verified == feasible, d.str()};
}

Verdict sort_oracle()
{
    Rng rng(4242);
    std::size_t same = 0;
    for (int i = 0; i < 500; ++i)
    {
        const std::size_t n = 1 + rng.index(200), m = 1 + rng.index(4);
        const bool coarse = rng.bernoulli(0.5);
        std::vector<std::vector<double>> pts(n, std::vector<double>(m));
        for (auto &p : pts)
            for (auto &v : p)
                v = coarse ? static_cast<double>(rng.below(4)) : rng.uniform();
        same += fast_nondominated_sort(pts) == oracle::peel_fronts(pts);
    }
    return {same == 500, std::to_string(same) + "/500 instances give identical fronts"};
}

Verdict simulator_oracle()
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const auto sweep = FrequencySweep::log_spaced(10.0, 1e6, 200);
    const double r = 600.0, c = 265.258e-9, l = 15e-3;
    Netlist rc, rl, rlc;
    rc.components = {{ComponentKind::Resistor, 1, 2, r}, {ComponentKind::Capacitor, 2, 0, c}};
    rl.components = {{ComponentKind::Resistor, 1, 2, r}, {ComponentKind::Inductor, 2, 0, l}};
    rlc.components = {{ComponentKind::Resistor, 1, 3, r},
                      {ComponentKind::Inductor, 3, 2, l},
                      {ComponentKind::Capacitor, 2, 0, c}};
    const auto h_rc = simulate(rc, sweep), h_rl = simulate(rl, sweep), h_rlc = simulate(rlc, sweep);
    double worst = 0.0;
    auto err = [&](complex a, complex b) { worst = std::max(worst, std::abs(a - b) / std::abs(b)); };
    for (std::size_t i = 0; i < sweep.size(); ++i)
    {
        const complex jw(0.0, two_pi * sweep[i]);
        err(h_rc.gain()[i], 1.0 / (1.0 + jw * r * c));
        err(h_rl.gain()[i], jw * l / (r + jw * l));
        err(h_rlc.gain()[i], 1.0 / (1.0 + jw * r * c + jw * jw * l * c));
    }

    Netlist ladder;
    ladder.components = {{ComponentKind::Resistor, 1, 3, 600.0},  {ComponentKind::Capacitor, 3, 0, 119.37e-9},
                         {ComponentKind::Inductor, 3, 2, 15.24e-3}, {ComponentKind::Capacitor, 2, 0, 155.12e-9},
                         {ComponentKind::Resistor, 2, 0, 5000.0}};
    double kcl = 0.0;
    for (double f : sweep.points())
    {
        const auto sol = solve_nodal(ladder, f);
        std::vector<complex> net(4);
        for (const auto &comp : ladder.components)
        {
            const complex i = detail::admittance(comp, f) * (sol.at(comp.node_a, 0) - sol.at(comp.node_b, 0));
            net[comp.node_a] += i;
            net[comp.node_b] -= i;
        }
        // The source supplies node 1; every other non-ground node must balance.
        net[1] -= sol.source_current;
        for (std::size_t node = 1; node < net.size(); ++node)
            kcl = std::max(kcl, std::abs(net[node]) / std::abs(sol.source_current));
    }
    std::ostringstream d;
    d << "max relative error " << worst << ", max KCL residual " << kcl;
    return {worst < 1e-9 && kcl < 1e-9, d.str()};
}

Verdict gradient_oracle()
{
    Rng rng(77);
    double worst = 0.0;
    for (int net = 0; net < 20; ++net)
    {
        const MlpSpec spec{1 + rng.index(3), {1 + rng.index(6), 1 + rng.index(4)}, 1 + rng.index(3)};
        auto p = init_params(spec, rng.next_u64());
        for (auto &b : p.biases)
            for (Eigen::Index i = 0; i < b.size(); ++i)
                b(i) = rng.uniform(-0.1, 0.1);
        std::vector<std::vector<double>> x(8, std::vector<double>(spec.input_dim)),
            y(8, std::vector<double>(spec.output_dim));
        for (auto &row : x)
            for (auto &v : row)
                v = rng.uniform();
        for (auto &row : y)
            for (auto &v : row)
                v = rng.uniform();
        worst = std::max(worst, oracle::gradient_check(p, Dataset::from_rows(x, y)));
    }
    std::ostringstream d;
    d << "max relative gradient error " << worst << " over 20 nets";
    return {worst < 1e-4, d.str()};
}

Verdict deviation_cases()
{
    DesignSpecification one{{OutputConstraint::at_least("bandwidth_hz", 990.0)}, std::nullopt};
    DesignSpecification two{{OutputConstraint::at_least("bandwidth_hz", 990.0), OutputConstraint::at_least("dc_gain_db", -0.92)},
                            std::nullopt};
    const double a = fractional_deviation(std::vector<double>{950.0}, one);
    const double b = fractional_deviation(std::vector<double>{950.0, -1.0}, two);
    const double c = fractional_deviation(std::vector<double>{0.0, 1000.0}, lowpass_spec());
    const bool ok = std::abs(a - 40.0 / 990.0) < 1e-9 && std::abs(a - 0.040404) < 1e-6 &&
                    std::abs(b - (40.0 / 990.0 + 0.08 / 0.92)) < 1e-9 && std::abs(b - 0.127361) < 1e-6 && c == 0.0;
    std::ostringstream d;
    d.precision(9);
    d << "single " << a << ", composite " << b << ", satisfied " << c;
    return {ok, d.str()};
}

Verdict determinism()
{
    const auto dir = scratch_dir("determinism");
    const std::string cli = DISPATCH_CLI_PATH;
    for (const char *tag : {"a", "b"})
    {
        const std::string cmd = "\"" + cli + "\" run --config lowpass-arch --seed 7 --out \"" + (dir / tag).string() +
                                "\" > \"" + (dir / (std::string(tag) + ".out")).string() + "\" 2>&1";
        if (std::system(cmd.c_str()) != 0)
            return {false, std::string("run ") + tag + " did not exit 0"};
    }
    const auto a = slurp(dir / "a" / "simulations.jsonl"), b = slurp(dir / "b" / "simulations.jsonl");
    std::ostringstream d;
    d << "simulation logs " << (a == b ? "identical" : "differ") << ", " << a.size() << " bytes";
    return {!a.empty() && a == b, d.str()};
}

} // namespace

int main()
{
    report(1, "fine-tuning reproduction", finetune_reproduction());
    report(2, "architecture search", architecture_search());
    report(3, "MILP soundness and completeness", milp_oracle());
    report(4, "non-dominated sort oracle", sort_oracle());
    report(5, "simulator oracle", simulator_oracle());
    report(6, "surrogate gradient check", gradient_oracle());
    report(7, "fractional deviation", deviation_cases());
    report(8, "determinism", determinism());
    std::cout << (failures ? "FAILED " : "ALL PASSED ") << 8 - failures << "/8" << std::endl;
    return failures ? 1 : 0;
}
