#ifndef DISPATCH_MILP_HPP
#define DISPATCH_MILP_HPP

#include "dispatch/error.hpp"
#include "dispatch/sampling.hpp"
#include "dispatch/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

inline constexpr double infinity = std::numeric_limits<double>::infinity();

// ---- bound propagation -------------------------------------------------------

enum class NeuronState : std::uint8_t
{
    Unstable,
    StableActive,
    StableInactive,
};

struct NetworkBounds
{
    // pre[l][j]: pre-activation interval of neuron j in layer l (last layer = outputs).
    std::vector<std::vector<Interval>> pre;
    // big_m[l][j] for hidden layers only.
    std::vector<std::vector<double>> big_m;
    std::vector<std::vector<NeuronState>> state;
};

inline constexpr double big_m_margin = 1e-3;

// Interval arithmetic through the network over `box` (normalised input space).
inline NetworkBounds propagate_bounds(const MlpParams &params, const Box &box, double margin = big_m_margin)
{
    require(!params.weights.empty(), "propagate_bounds: empty network");
    require(static_cast<std::size_t>(params.weights.front().cols()) == box.size(), "propagate_bounds: box dimension mismatch");
    NetworkBounds nb;
    std::vector<Interval> post = box.dims();
    const std::size_t layers = params.layer_count();
    for (std::size_t l = 0; l < layers; ++l)
    {
        const auto &w = params.weights[l];
        const auto &b = params.biases[l];
        std::vector<Interval> pre(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index j = 0; j < w.rows(); ++j)
        {
            double lo = b(j), hi = b(j);
            for (Eigen::Index k = 0; k < w.cols(); ++k)
            {
                const double c = w(j, k);
                const auto &in = post[static_cast<std::size_t>(k)];
                if (c >= 0.0)
                {
                    lo += c * in.low;
                    hi += c * in.high;
                }
                else
                {
                    lo += c * in.high;
                    hi += c * in.low;
                }
            }
            pre[static_cast<std::size_t>(j)] = {lo, hi};
        }
        if (l + 1 < layers)
        {
            std::vector<double> q(pre.size());
            std::vector<NeuronState> st(pre.size());
            post.assign(pre.size(), {});
            for (std::size_t j = 0; j < pre.size(); ++j)
            {
                q[j] = std::max(std::abs(pre[j].low), std::abs(pre[j].high)) * (1.0 + margin);
                st[j] = pre[j].low >= 0.0 ? NeuronState::StableActive
                        : pre[j].high <= 0.0 ? NeuronState::StableInactive
                                             : NeuronState::Unstable;
                post[j] = {std::max(0.0, pre[j].low), std::max(0.0, pre[j].high)};
            }
            nb.big_m.push_back(std::move(q));
            nb.state.push_back(std::move(st));
        }
        nb.pre.push_back(std::move(pre));
    }
    return nb;
}

// ---- program -----------------------------------------------------------------

struct LpVariable
{
    std::string name;
    double low = 0.0;
    double high = 0.0;
    bool binary = false;
};

// low <= sum(coef * var) <= high; either side may be infinite.
struct LpRow
{
    std::string name;
    std::vector<std::pair<std::size_t, double>> terms;
    double low = -infinity;
    double high = infinity;
};

// Mixed-integer feasibility program for a ReLU network. Pre-activations z and
// post-activations a get separate variables; for an unstable neuron with big-M Q:
//   a >= z,  a <= z + Q*delta,  a >= 0,  a <= Q*(1 - delta)
// with delta = 1 meaning the neuron is off.
struct FeasibilityProgram
{
    std::vector<LpVariable> variables;
    std::vector<LpRow> rows;
    std::vector<std::size_t> input_vars;
    std::vector<std::size_t> output_vars;
    std::vector<std::size_t> binaries;
    Box input_box;
    std::vector<Interval> output_intervals;
    NetworkBounds bounds;
    MlpParams params;

    std::size_t binary_count() const noexcept { return binaries.size(); }
};

inline FeasibilityProgram encode(const MlpParams &params, const Box &input_box, const std::vector<Interval> &output_intervals,
                                 double margin = big_m_margin)
{
    require(output_intervals.size() == static_cast<std::size_t>(params.weights.back().rows()),
            "encode: one output interval per network output is required");
    FeasibilityProgram p;
    p.params = params;
    p.input_box = input_box;
    p.output_intervals = output_intervals;
    p.bounds = propagate_bounds(params, input_box, margin);

    auto add_var = [&](std::string name, double lo, double hi, bool binary = false) {
        p.variables.push_back({std::move(name), lo, hi, binary});
        return p.variables.size() - 1;
    };
    auto pad = [](const Interval &iv) {
        const double slack = 1e-9 * (1.0 + std::max(std::abs(iv.low), std::abs(iv.high)));
        return Interval{iv.low - slack, iv.high + slack};
    };

    // Previous layer outputs as (variable index or none for constant zero).
    std::vector<std::optional<std::size_t>> prev;
    for (std::size_t k = 0; k < input_box.size(); ++k)
    {
        p.input_vars.push_back(add_var("x" + std::to_string(k), input_box[k].low, input_box[k].high));
        prev.push_back(p.input_vars.back());
    }
    const std::size_t layers = params.layer_count();
    for (std::size_t l = 0; l < layers; ++l)
    {
        const auto &w = params.weights[l];
        const auto &b = params.biases[l];
        const bool hidden = l + 1 < layers;
        std::vector<std::optional<std::size_t>> next(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index j = 0; j < w.rows(); ++j)
        {
            const auto ju = static_cast<std::size_t>(j);
            const std::string tag = std::to_string(l + 1) + "_" + std::to_string(ju);
            const Interval range = p.bounds.pre[l][ju];
            const NeuronState st = hidden ? p.bounds.state[l][ju] : NeuronState::StableActive;
            if (st == NeuronState::StableInactive)
                continue;
            const Interval zr = pad(range);
            const std::size_t z = add_var(hidden ? "z" + tag : "y" + std::to_string(ju), zr.low, zr.high);
            LpRow def;
            def.name = "def_" + p.variables[z].name;
            def.terms.push_back({z, 1.0});
            for (Eigen::Index k = 0; k < w.cols(); ++k)
                if (prev[static_cast<std::size_t>(k)] && w(j, k) != 0.0)
                    def.terms.push_back({*prev[static_cast<std::size_t>(k)], -w(j, k)});
            def.low = def.high = b(j);
            p.rows.push_back(std::move(def));
            if (!hidden)
            {
                p.output_vars.push_back(z);
                const auto &iv = output_intervals[ju];
                p.rows.push_back({"out_" + std::to_string(ju), {{z, 1.0}}, iv.low, iv.high});
                continue;
            }
            if (st == NeuronState::StableActive)
            {
                next[ju] = z;
                continue;
            }
            const double q = p.bounds.big_m[l][ju];
            const std::size_t a = add_var("a" + tag, 0.0, std::max(0.0, zr.high));
            const std::size_t d = add_var("d" + tag, 0.0, 1.0, true);
            p.binaries.push_back(d);
            p.rows.push_back({"lo_" + tag, {{a, 1.0}, {z, -1.0}}, 0.0, infinity});
            p.rows.push_back({"up_" + tag, {{a, 1.0}, {z, -1.0}, {d, -q}}, -infinity, 0.0});
            p.rows.push_back({"off_" + tag, {{a, 1.0}, {d, q}}, -infinity, q});
            next[ju] = a;
        }
        prev = std::move(next);
    }
    return p;
}

// CPLEX-style LP text: objective, Subject To, Bounds, Binaries, End.
inline void write_lp(std::ostream &os, const FeasibilityProgram &p)
{
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto expr = [&](const LpRow &r) {
        std::string s;
        for (const auto &[var, c] : r.terms)
        {
            s += c < 0 ? " - " : (s.empty() ? " " : " + ");
            s += num(std::abs(c)) + " " + p.variables[var].name;
        }
        return s.empty() ? std::string(" 0 ") + p.variables.front().name : s;
    };
    os << "\\* dispatch ReLU feasibility program: " << p.variables.size() << " variables, " << p.binaries.size()
       << " binaries *\\\n";
    os << "Minimize\n obj: 0 " << p.variables.front().name << "\n";
    os << "Subject To\n";
    for (const auto &r : p.rows)
    {
        if (r.low == r.high)
            os << ' ' << r.name << ':' << expr(r) << " = " << num(r.low) << '\n';
        else
        {
            if (std::isfinite(r.low))
                os << ' ' << r.name << (std::isfinite(r.high) ? "_lo" : "") << ':' << expr(r) << " >= " << num(r.low) << '\n';
            if (std::isfinite(r.high))
                os << ' ' << r.name << (std::isfinite(r.low) ? "_hi" : "") << ':' << expr(r) << " <= " << num(r.high) << '\n';
        }
    }
    os << "Bounds\n";
    for (const auto &v : p.variables)
        if (!v.binary)
            os << ' ' << num(v.low) << " <= " << v.name << " <= " << num(v.high) << '\n';
    os << "Binaries\n";
    for (auto b : p.binaries)
        os << ' ' << p.variables[b].name << '\n';
    os << "End\n";
}

// ---- LP ----------------------------------------------------------------------

enum class LpStatus
{
    Feasible,
    Infeasible,
    NumericalFailure,
};

struct LpOptions
{
    double pivot_tolerance = 1e-9;
    double feasibility_tolerance = 1e-9;
    double optimality_tolerance = 1e-9;
    // Consecutive degenerate pivots before switching to Bland's rule.
    std::size_t degenerate_limit = 50;
};

struct LpSolution
{
    LpStatus status = LpStatus::NumericalFailure;
    std::vector<double> values;
    std::size_t iterations = 0;
};

// Dense bounded-variable primal simplex. Each row becomes a·x - s = 0 with the slack s
// carrying the row bounds; rows whose initial activity violates its bounds get an
// artificial variable. Phase 1 minimises the artificials, phase 2 the given costs.
class LpTableau
{
public:
    LpTableau(std::span<const LpVariable> vars, std::span<const LpRow> rows, LpOptions options = {})
        : n_(vars.size())
        , m_(rows.size())
        , cols_(n_ + 2 * m_)
        , opt_(options)
        , rows_(rows.begin(), rows.end())
    {
        low_.resize(cols_);
        high_.resize(cols_);
        value_.assign(cols_, 0.0);
        for (std::size_t j = 0; j < n_; ++j)
        {
            low_[j] = vars[j].low;
            high_[j] = vars[j].high;
            value_[j] = std::isfinite(low_[j]) ? low_[j] : (std::isfinite(high_[j]) ? high_[j] : 0.0);
        }
        table_.assign(m_ * cols_, 0.0);
        basis_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i)
        {
            const std::size_t s = n_ + i, t = n_ + m_ + i;
            low_[s] = rows[i].low;
            high_[s] = rows[i].high;
            double activity = 0.0;
            for (const auto &[var, c] : rows[i].terms)
            {
                table_[i * cols_ + var] += c;
                activity += c * value_[var];
            }
            table_[i * cols_ + s] = -1.0;
            low_[t] = 0.0;
            const double tol = opt_.feasibility_tolerance * (1.0 + std::abs(activity));
            if (activity >= rows[i].low - tol && activity <= rows[i].high + tol)
            {
                high_[t] = 0.0;
                value_[s] = activity;
                scale_row(i, -1.0);
                basis_[i] = s;
            }
            else
            {
                const double bound = activity < rows[i].low ? rows[i].low : rows[i].high;
                value_[s] = bound;
                const double residual = activity - bound;
                const double sigma = residual > 0 ? -1.0 : 1.0;
                table_[i * cols_ + t] = sigma;
                high_[t] = infinity;
                value_[t] = std::abs(residual);
                scale_row(i, 1.0 / sigma);
                basis_[i] = t;
            }
        }
    }

    std::size_t rows() const noexcept { return m_; }
    std::size_t variables() const noexcept { return n_; }

    LpSolution solve(std::span<const double> costs = {})
    {
        LpSolution out;
        std::vector<double> c(cols_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            c[n_ + m_ + i] = 1.0;
        if (!run(c, out.iterations))
            return out;
        double infeasibility = 0.0, scale = 1.0;
        for (std::size_t i = 0; i < m_; ++i)
        {
            infeasibility += value_[n_ + m_ + i];
            if (std::isfinite(rows_[i].low))
                scale = std::max(scale, std::abs(rows_[i].low));
            if (std::isfinite(rows_[i].high))
                scale = std::max(scale, std::abs(rows_[i].high));
        }
        if (infeasibility > 1e-7 * scale)
        {
            out.status = LpStatus::Infeasible;
            return out;
        }
        for (std::size_t i = 0; i < m_; ++i)
        {
            high_[n_ + m_ + i] = 0.0;
            value_[n_ + m_ + i] = std::clamp(value_[n_ + m_ + i], 0.0, 0.0);
        }
        std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t j = 0; j < costs.size() && j < n_; ++j)
            c[j] = costs[j];
        if (!costs.empty() && !run(c, out.iterations))
            return out;
        out.values.assign(value_.begin(), value_.begin() + static_cast<std::ptrdiff_t>(n_));
        if (!residual_ok(out.values))
        {
            out.values.clear();
            return out;
        }
        out.status = LpStatus::Feasible;
        return out;
    }

private:
    void scale_row(std::size_t i, double f)
    {
        double *r = &table_[i * cols_];
        for (std::size_t j = 0; j < cols_; ++j)
            r[j] *= f;
    }

    bool residual_ok(const std::vector<double> &x) const
    {
        const double tol = 1e-7;
        for (std::size_t j = 0; j < n_; ++j)
            if (x[j] < low_[j] - tol * (1 + std::abs(low_[j])) || x[j] > high_[j] + tol * (1 + std::abs(high_[j])))
                return false;
        for (const auto &r : rows_)
        {
            double a = 0.0, mag = 1.0;
            for (const auto &[var, c] : r.terms)
            {
                a += c * x[var];
                mag = std::max(mag, std::abs(c * x[var]));
            }
            if (a < r.low - tol * mag || a > r.high + tol * mag)
                return false;
        }
        return true;
    }

    // Primal simplex on the current basis with costs c. False on numerical trouble.
    bool run(const std::vector<double> &c, std::size_t &iterations)
    {
        std::vector<double> d(cols_);
        for (std::size_t j = 0; j < cols_; ++j)
        {
            double s = c[j];
            for (std::size_t i = 0; i < m_; ++i)
                s -= c[basis_[i]] * table_[i * cols_ + j];
            d[j] = s;
        }
        std::vector<char> is_basic(cols_, 0);
        for (auto b : basis_)
            is_basic[b] = 1;

        bool bland = false;
        std::size_t degenerate = 0;
        const std::size_t cap = 50 * (m_ + cols_) + 1000;
        for (std::size_t iter = 0;; ++iter)
        {
            if (iter > cap)
                return false;
            // Entering column.
            std::size_t q = cols_;
            double dir = 0.0, best = 0.0;
            for (std::size_t j = 0; j < cols_; ++j)
            {
                if (is_basic[j] || low_[j] == high_[j])
                    continue;
                const bool can_up = value_[j] < high_[j];
                const bool can_down = value_[j] > low_[j];
                double score = 0.0, sdir = 0.0;
                if (d[j] < -opt_.optimality_tolerance && can_up)
                {
                    score = -d[j];
                    sdir = 1.0;
                }
                else if (d[j] > opt_.optimality_tolerance && can_down)
                {
                    score = d[j];
                    sdir = -1.0;
                }
                if (sdir == 0.0)
                    continue;
                if (bland)
                {
                    q = j;
                    dir = sdir;
                    break;
                }
                if (score > best)
                {
                    best = score;
                    q = j;
                    dir = sdir;
                }
            }
            if (q == cols_)
                return true;
            ++iterations;

            // Ratio test.
            double theta = high_[q] - low_[q];
            std::size_t leave = m_;
            double leave_alpha = 0.0;
            for (std::size_t i = 0; i < m_; ++i)
            {
                const double alpha = -table_[i * cols_ + q] * dir;
                if (std::abs(alpha) <= opt_.pivot_tolerance)
                    continue;
                const std::size_t b = basis_[i];
                double limit;
                if (alpha > 0)
                {
                    if (!std::isfinite(high_[b]))
                        continue;
                    limit = (high_[b] - value_[b]) / alpha;
                }
                else
                {
                    if (!std::isfinite(low_[b]))
                        continue;
                    limit = (low_[b] - value_[b]) / alpha;
                }
                limit = std::max(limit, 0.0);
                if (limit < theta - 1e-12)
                {
                    theta = limit;
                    leave = i;
                    leave_alpha = alpha;
                }
                else if (limit <= theta + 1e-12 && leave != m_ &&
                         (bland ? basis_[i] < basis_[leave] : std::abs(alpha) > std::abs(leave_alpha)))
                {
                    leave = i;
                    leave_alpha = alpha;
                }
            }
            if (!std::isfinite(theta))
                return false;

            value_[q] += dir * theta;
            for (std::size_t i = 0; i < m_; ++i)
                value_[basis_[i]] -= table_[i * cols_ + q] * dir * theta;

            if (theta < 1e-12)
            {
                if (++degenerate > opt_.degenerate_limit)
                    bland = true;
            }
            else
                degenerate = 0;

            if (leave == m_)
            {
                // Bound flip.
                value_[q] = dir > 0 ? high_[q] : low_[q];
                continue;
            }
            const std::size_t out = basis_[leave];
            const double alpha = -table_[leave * cols_ + q] * dir;
            value_[out] = alpha > 0 ? high_[out] : low_[out];
            pivot(leave, q, d);
            is_basic[out] = 0;
            is_basic[q] = 1;
            basis_[leave] = q;
        }
    }

    void pivot(std::size_t r, std::size_t q, std::vector<double> &d)
    {
        double *pr = &table_[r * cols_];
        const double inv = 1.0 / pr[q];
        for (std::size_t j = 0; j < cols_; ++j)
            pr[j] *= inv;
        pr[q] = 1.0;
        for (std::size_t i = 0; i < m_; ++i)
        {
            if (i == r)
                continue;
            double *row = &table_[i * cols_];
            const double f = row[q];
            if (f == 0.0)
                continue;
            for (std::size_t j = 0; j < cols_; ++j)
                row[j] -= f * pr[j];
            row[q] = 0.0;
        }
        const double f = d[q];
        if (f != 0.0)
        {
            for (std::size_t j = 0; j < cols_; ++j)
                d[j] -= f * pr[j];
            d[q] = 0.0;
        }
    }

    std::size_t n_, m_, cols_;
    LpOptions opt_;
    std::vector<LpRow> rows_;
    std::vector<double> low_, high_, value_;
    std::vector<double> table_;
    std::vector<std::size_t> basis_;
};

// ---- branch and bound ----------------------------------------------------------

inline constexpr double default_feasibility_epsilon = 1e-6;

// Exact forward pass; true iff every output lies within its interval widened by eps.
inline bool verify_feasible(const MlpParams &params, std::span<const double> point, const std::vector<Interval> &intervals,
                            double eps = default_feasibility_epsilon)
{
    const auto y = forward(params, point);
    require(y.size() == intervals.size(), "verify_feasible: interval count mismatch");
    for (std::size_t i = 0; i < y.size(); ++i)
        if (!(y[i] >= intervals[i].low - eps && y[i] <= intervals[i].high + eps))
            return false;
    return true;
}

enum class SolveStatus
{
    Feasible,
    Infeasible,
    BudgetExceeded,
};

inline const char *solve_status_name(SolveStatus s)
{
    switch (s)
    {
    case SolveStatus::Feasible:
        return "feasible";
    case SolveStatus::Infeasible:
        return "infeasible";
    case SolveStatus::BudgetExceeded:
        return "budget_exceeded";
    }
    return "?";
}

struct SolveBudget
{
    std::size_t node_limit = 2000;
    double time_limit_seconds = 60.0;
    bool region_heuristic = true;
};

struct SolveResult
{
    SolveStatus status = SolveStatus::BudgetExceeded;
    // Normalised input point when Feasible.
    std::vector<double> point;
    std::size_t nodes = 0;
    std::size_t lp_iterations = 0;
    double elapsed_seconds = 0.0;
};

// Depth-first branch and bound over the neuron binaries, branching on the most
// fractional one. The child matching the neuron's true activation at the LP point's
// inputs is explored first (delta = 1 switches a neuron off). The first node whose LP
// point survives an exact forward-pass check is returned.
inline SolveResult solve(const FeasibilityProgram &program, const SolveBudget &budget = {}, const LpOptions &lp = {})
{
    const auto start = std::chrono::steady_clock::now();
    SolveResult result;
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    struct Node
    {
        std::vector<std::pair<std::size_t, double>> fixings;
    };
    std::vector<Node> stack{Node{}};
    bool failures = false;
    const double check_eps = 1e-9;
    const bool region_heuristic = budget.region_heuristic;

    auto point_ok = [&](const std::vector<double> &x) {
        std::vector<double> in(program.input_vars.size());
        for (std::size_t k = 0; k < in.size(); ++k)
            in[k] = std::clamp(x[program.input_vars[k]], program.input_box[k].low, program.input_box[k].high);
        if (!verify_feasible(program.params, in, program.output_intervals, check_eps))
            return std::optional<std::vector<double>>{};
        return std::optional<std::vector<double>>{std::move(in)};
    };

    // Hidden pre-activation variable behind each binary, to read the true activation
    // of the LP point's inputs.
    std::vector<std::pair<std::size_t, std::size_t>> neuron_of(program.variables.size());
    {
        std::size_t next = 0;
        for (std::size_t l = 0; l + 1 < program.params.weights.size(); ++l)
            for (std::size_t j = 0; j < program.bounds.state[l].size(); ++j)
                if (program.bounds.state[l][j] == NeuronState::Unstable)
                    neuron_of[program.binaries[next++]] = {l, j};
    }
    auto active_at = [&](const std::vector<double> &x, std::size_t binary) {
        Eigen::VectorXd h(static_cast<Eigen::Index>(program.input_vars.size()));
        for (std::size_t k = 0; k < program.input_vars.size(); ++k)
            h(static_cast<Eigen::Index>(k)) =
                std::clamp(x[program.input_vars[k]], program.input_box[k].low, program.input_box[k].high);
        const auto [layer, j] = neuron_of[binary];
        for (std::size_t l = 0;; ++l)
        {
            Eigen::VectorXd z = program.params.weights[l] * h + program.params.biases[l];
            if (l == layer)
                return z(static_cast<Eigen::Index>(j)) > 0.0;
            h = z.cwiseMax(0.0);
        }
    };

    while (!stack.empty())
    {
        if (result.nodes >= budget.node_limit || elapsed() > budget.time_limit_seconds)
        {
            result.status = SolveStatus::BudgetExceeded;
            result.elapsed_seconds = elapsed();
            return result;
        }
        Node node = std::move(stack.back());
        stack.pop_back();
        ++result.nodes;

        std::vector<LpVariable> vars = program.variables;
        for (const auto &[v, val] : node.fixings)
            vars[v].low = vars[v].high = val;
        LpTableau tableau(vars, program.rows, lp);
        const auto sol = tableau.solve();
        result.lp_iterations += sol.iterations;
        if (sol.status == LpStatus::Infeasible)
            continue;
        if (sol.status == LpStatus::NumericalFailure)
        {
            failures = true;
            continue;
        }
        if (auto x = point_ok(sol.values))
        {
            result.status = SolveStatus::Feasible;
            result.point = std::move(*x);
            result.elapsed_seconds = elapsed();
            return result;
        }
        // The linear region of the LP point's inputs is an exact LP; a point in it that
        // meets the intervals is feasible.
        if (region_heuristic)
        {
            std::vector<LpVariable> fixed = program.variables;
            for (auto b : program.binaries)
                fixed[b].low = fixed[b].high = active_at(sol.values, b) ? 0.0 : 1.0;
            LpTableau region(fixed, program.rows, lp);
            const auto rs = region.solve();
            result.lp_iterations += rs.iterations;
            if (rs.status == LpStatus::Feasible)
                if (auto x = point_ok(rs.values))
                {
                    result.status = SolveStatus::Feasible;
                    result.point = std::move(*x);
                    result.elapsed_seconds = elapsed();
                    return result;
                }
        }
        // Most fractional free binary; none means the LP point is already integral.
        std::optional<std::size_t> branch;
        double frac_best = 1e-9;
        for (auto b : program.binaries)
        {
            if (vars[b].low == vars[b].high)
                continue;
            const double v = sol.values[b];
            const double frac = std::min(v, 1.0 - v);
            if (frac > frac_best)
            {
                frac_best = frac;
                branch = b;
            }
        }
        // An integral LP point that fails the exact check still has free binaries to split on.
        if (!branch)
            for (auto b : program.binaries)
                if (vars[b].low != vars[b].high)
                {
                    branch = b;
                    break;
                }
        if (!branch)
        {
            std::vector<double> in(program.input_vars.size());
            for (std::size_t k = 0; k < in.size(); ++k)
                in[k] = std::clamp(sol.values[program.input_vars[k]], program.input_box[k].low, program.input_box[k].high);
            if (verify_feasible(program.params, in, program.output_intervals))
            {
                result.status = SolveStatus::Feasible;
                result.point = std::move(in);
                result.elapsed_seconds = elapsed();
                return result;
            }
            failures = true;
            continue;
        }
        Node one = node, zero = std::move(node);
        one.fixings.push_back({*branch, 1.0});
        zero.fixings.push_back({*branch, 0.0});
        if (active_at(sol.values, *branch))
        {
            stack.push_back(std::move(one));
            stack.push_back(std::move(zero));
        }
        else
        {
            stack.push_back(std::move(zero));
            stack.push_back(std::move(one));
        }
    }
    result.status = failures ? SolveStatus::BudgetExceeded : SolveStatus::Infeasible;
    result.elapsed_seconds = elapsed();
    return result;
}

} // namespace dispatch

#endif
