// Independent reference implementations used only by the test suites.
#ifndef DISPATCH_TESTS_ORACLES_HPP
#define DISPATCH_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <cstddef>
#include <vector>

namespace oracle
{

inline bool dominates(const std::vector<double> &a, const std::vector<double> &b)
{
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        if (a[i] > b[i])
            return false;
        strict = strict || a[i] < b[i];
    }
    return strict;
}

// Peels non-dominated layers by checking every remaining pair each round.
inline std::vector<std::vector<std::size_t>> peel_fronts(const std::vector<std::vector<double>> &pts)
{
    std::vector<std::size_t> left(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        left[i] = i;
    std::vector<std::vector<std::size_t>> fronts;
    while (!left.empty())
    {
        std::vector<std::size_t> front, rest;
        for (auto p : left)
        {
            bool beaten = false;
            for (auto q : left)
                if (q != p && dominates(pts[q], pts[p]))
                    beaten = true;
            (beaten ? rest : front).push_back(p);
        }
        fronts.push_back(front);
        left = rest;
    }
    return fronts;
}

} // namespace oracle

#ifdef DISPATCH_SURROGATE_HPP
namespace oracle
{

// Largest relative gap between backprop and central differences over every weight and bias.
// Gradients of magnitude below `floor` are compared absolutely against it.
inline double gradient_check(dispatch::MlpParams p, const dispatch::Dataset &d, double h = 1e-5, double floor = 1e-6)
{
    dispatch::MlpParams g;
    dispatch::mse_gradient(p, d, g);
    double worst = 0.0;
    auto probe = [&](double &slot, double analytic) {
        const double keep = slot;
        slot = keep + h;
        const double up = dispatch::mse(p, d);
        slot = keep - h;
        const double down = dispatch::mse(p, d);
        slot = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic - numeric) / scale);
    };
    for (std::size_t l = 0; l < p.layer_count(); ++l)
    {
        for (Eigen::Index i = 0; i < p.weights[l].size(); ++i)
            probe(p.weights[l].data()[i], g.weights[l].data()[i]);
        for (Eigen::Index i = 0; i < p.biases[l].size(); ++i)
            probe(p.biases[l].data()[i], g.biases[l].data()[i]);
    }
    return worst;
}

// a.x <= b over a low-dimensional x.
struct HalfSpace
{
    std::vector<double> a;
    double b = 0.0;
};

// Solves the d x d system by Gaussian elimination; false when singular.
inline bool solve_small(std::vector<std::vector<double>> m, std::vector<double> r, std::vector<double> &x)
{
    const std::size_t d = r.size();
    for (std::size_t k = 0; k < d; ++k)
    {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < d; ++i)
            if (std::abs(m[i][k]) > std::abs(m[piv][k]))
                piv = i;
        if (std::abs(m[piv][k]) < 1e-12)
            return false;
        std::swap(m[k], m[piv]);
        std::swap(r[k], r[piv]);
        for (std::size_t i = k + 1; i < d; ++i)
        {
            const double f = m[i][k] / m[k][k];
            for (std::size_t j = k; j < d; ++j)
                m[i][j] -= f * m[k][j];
            r[i] -= f * r[k];
        }
    }
    x.assign(d, 0.0);
    for (std::size_t k = d; k-- > 0;)
    {
        double s = r[k];
        for (std::size_t j = k + 1; j < d; ++j)
            s -= m[k][j] * x[j];
        x[k] = s / m[k][k];
    }
    return true;
}

// A bounded polyhedron is non-empty iff one of its vertices exists, so try every
// d-subset of constraints as equalities. Only practical for d <= 2.
inline bool polytope_nonempty(const std::vector<HalfSpace> &hs, std::size_t d, double shift, double tol = 1e-12)
{
    const std::size_t n = hs.size();
    std::vector<std::size_t> pick(d);
    std::vector<double> x;
    auto check = [&]() {
        std::vector<std::vector<double>> m;
        std::vector<double> r;
        for (auto i : pick)
        {
            m.push_back(hs[i].a);
            r.push_back(hs[i].b + shift);
        }
        if (!solve_small(m, r, x))
            return false;
        for (const auto &h : hs)
        {
            double v = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                v += h.a[k] * x[k];
            if (v > h.b + shift + tol * (1.0 + std::abs(h.b)))
                return false;
        }
        return true;
    };
    if (d == 1)
    {
        for (pick[0] = 0; pick[0] < n; ++pick[0])
            if (check())
                return true;
        return false;
    }
    for (pick[0] = 0; pick[0] < n; ++pick[0])
        for (pick[1] = pick[0] + 1; pick[1] < n; ++pick[1])
            if (check())
                return true;
    return false;
}

enum class PatternVerdict
{
    Feasible,
    Infeasible,
    Ambiguous,
};

// Exhaustive activation-pattern search: each on/off assignment makes the network affine,
// leaving a polyhedral feasibility question. Patterns are explored neuron by neuron and
// pruned as soon as the partial constraints become empty. Instances whose answer flips
// when every constraint is moved by `margin` are reported as ambiguous.
inline PatternVerdict pattern_oracle(const dispatch::MlpParams &p, const dispatch::Box &box,
                                     const std::vector<dispatch::Interval> &out, double margin = 1e-7)
{
    const std::size_t d = box.size();
    struct Affine
    {
        std::vector<double> c;
        double k = 0.0;
    };
    std::vector<HalfSpace> base;
    for (std::size_t i = 0; i < d; ++i)
    {
        HalfSpace up{std::vector<double>(d, 0.0), box[i].high}, dn{std::vector<double>(d, 0.0), -box[i].low};
        up.a[i] = 1.0;
        dn.a[i] = -1.0;
        base.push_back(up);
        base.push_back(dn);
    }
    auto search = [&](double shift) {
        bool found = false;
        std::vector<HalfSpace> cons = base;
        std::function<void(std::size_t, std::size_t, const std::vector<Affine> &, std::vector<Affine> &)> rec;
        rec = [&](std::size_t layer, std::size_t j, const std::vector<Affine> &in, std::vector<Affine> &acc) {
            if (found)
                return;
            const auto &w = p.weights[layer];
            const auto &b = p.biases[layer];
            auto affine_of = [&](Eigen::Index row) {
                Affine z{std::vector<double>(d, 0.0), b(row)};
                for (Eigen::Index k = 0; k < w.cols(); ++k)
                {
                    const auto &a = in[static_cast<std::size_t>(k)];
                    for (std::size_t t = 0; t < d; ++t)
                        z.c[t] += w(row, k) * a.c[t];
                    z.k += w(row, k) * a.k;
                }
                return z;
            };
            if (layer + 1 == p.layer_count())
            {
                const std::size_t keep = cons.size();
                for (Eigen::Index r = 0; r < w.rows(); ++r)
                {
                    const auto y = affine_of(r);
                    const auto &iv = out[static_cast<std::size_t>(r)];
                    HalfSpace hi{y.c, iv.high - y.k}, lo{y.c, y.k - iv.low};
                    for (auto &v : lo.a)
                        v = -v;
                    if (std::isfinite(iv.high))
                        cons.push_back(hi);
                    if (std::isfinite(iv.low))
                        cons.push_back(lo);
                }
                found = polytope_nonempty(cons, d, shift);
                cons.resize(keep);
                return;
            }
            if (j == static_cast<std::size_t>(w.rows()))
            {
                std::vector<Affine> next;
                rec(layer + 1, 0, acc, next);
                return;
            }
            const auto z = affine_of(static_cast<Eigen::Index>(j));
            for (int on = 0; on < 2 && !found; ++on)
            {
                HalfSpace h{z.c, z.k};
                if (on)
                {
                    for (auto &v : h.a)
                        v = -v;
                    h.b = z.k;
                }
                else
                    h.b = -z.k;
                cons.push_back(h);
                if (polytope_nonempty(cons, d, shift))
                {
                    acc.push_back(on ? z : Affine{std::vector<double>(d, 0.0), 0.0});
                    rec(layer, j + 1, in, acc);
                    acc.pop_back();
                }
                cons.pop_back();
            }
        };
        std::vector<Affine> input;
        for (std::size_t i = 0; i < d; ++i)
        {
            Affine a{std::vector<double>(d, 0.0), 0.0};
            a.c[i] = 1.0;
            input.push_back(a);
        }
        std::vector<Affine> acc;
        rec(0, 0, input, acc);
        return found;
    };
    const bool loose = search(margin), tight = search(-margin);
    if (loose != tight)
        return PatternVerdict::Ambiguous;
    return loose ? PatternVerdict::Feasible : PatternVerdict::Infeasible;
}

struct MilpInstance
{
    dispatch::MlpParams params;
    dispatch::Box box;
    std::vector<dispatch::Interval> intervals;
};

// Small random ReLU nets (<= 12 hidden neurons, 1-2 inputs) with output intervals that are
// sometimes reachable by construction and sometimes arbitrary.
inline MilpInstance random_milp_instance(dispatch::Rng &rng)
{
    MilpInstance m;
    dispatch::MlpSpec spec;
    spec.input_dim = 1 + rng.index(2);
    const std::size_t budget = 1 + rng.index(12);
    if (budget >= 4 && rng.bernoulli(0.5))
    {
        const std::size_t first = 1 + rng.index(budget - 1);
        spec.hidden = {first, budget - first};
    }
    else
        spec.hidden = {budget};
    spec.output_dim = 1 + rng.index(2);
    m.params = dispatch::init_params(spec, rng.next_u64());
    for (auto &b : m.params.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i)
            b(i) = rng.uniform(-0.5, 0.5);
    std::vector<dispatch::Interval> dims;
    for (std::size_t i = 0; i < spec.input_dim; ++i)
    {
        const double lo = rng.uniform(0.0, 0.4);
        dims.push_back({lo, lo + rng.uniform(0.1, 0.6)});
    }
    m.box = dispatch::Box(dims);
    std::vector<double> probe;
    for (const auto &iv : dims)
        probe.push_back(rng.uniform(iv.low, iv.high));
    const auto y = dispatch::forward(m.params, probe);
    for (std::size_t j = 0; j < spec.output_dim; ++j)
    {
        const double w = rng.uniform(0.0, 0.2);
        switch (rng.index(3))
        {
        case 0:
            m.intervals.push_back({y[j] - w, y[j] + w});
            break;
        case 1: {
            const double c = y[j] + rng.uniform(-1.0, 1.0);
            m.intervals.push_back({c - w, c + w});
            break;
        }
        default:
            if (rng.bernoulli(0.5))
                m.intervals.push_back({y[j] + rng.uniform(-0.5, 0.5), std::numeric_limits<double>::infinity()});
            else
                m.intervals.push_back({-std::numeric_limits<double>::infinity(), y[j] + rng.uniform(-0.5, 0.5)});
        }
    }
    return m;
}

} // namespace oracle
#endif

#endif
