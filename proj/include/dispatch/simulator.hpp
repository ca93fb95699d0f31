#ifndef DISPATCH_SIMULATOR_HPP
#define DISPATCH_SIMULATOR_HPP

#include "dispatch/error.hpp"
#include "dispatch/netlist.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

using complex = std::complex<double>;

// Sentinel objective for designs that cannot be simulated.
inline constexpr double big_objective = 1e12;

// Half-power drop, 20*log10(sqrt(2)).
inline constexpr double half_power_db = 3.010299956639812;

class FrequencySweep
{
public:
    FrequencySweep() = default;

    explicit FrequencySweep(std::vector<double> points) : points_(std::move(points)) { validate(); }

    static FrequencySweep log_spaced(double f_min, double f_max, std::size_t count)
    {
        if (!(f_min > 0.0) || !(f_max >= f_min) || count == 0 || (count == 1 && f_max != f_min) ||
            (count > 1 && f_max == f_min))
            throw ConfigError("sweep needs 0 < f_min < f_max and count >= 2 (or count 1 with f_min == f_max)");
        std::vector<double> pts(count);
        const double lo = std::log10(f_min), hi = std::log10(f_max);
        for (std::size_t i = 0; i < count; ++i)
            pts[i] = count == 1 ? f_min : std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
        pts.front() = f_min;
        pts.back() = f_max;
        return FrequencySweep(std::move(pts));
    }

    const std::vector<double> &points() const noexcept { return points_; }
    std::size_t size() const noexcept { return points_.size(); }
    double f_min() const { return points_.front(); }
    double f_max() const { return points_.back(); }
    double operator[](std::size_t i) const { return points_[i]; }

    friend bool operator==(const FrequencySweep &, const FrequencySweep &) = default;

private:
    void validate() const
    {
        if (points_.empty())
            throw ConfigError("sweep is empty");
        if (!(points_.front() > 0.0))
            throw ConfigError("sweep frequencies must be positive");
        for (std::size_t i = 1; i < points_.size(); ++i)
            if (!(points_[i] > points_[i - 1]))
                throw ConfigError("sweep must be strictly increasing");
    }

    std::vector<double> points_;
};

class ResponseCurve
{
public:
    ResponseCurve() = default;

    ResponseCurve(FrequencySweep sweep, std::vector<complex> gain) : sweep_(std::move(sweep)), gain_(std::move(gain))
    {
        require(sweep_.size() == gain_.size(), "response curve length must match its sweep");
        magnitude_db_.resize(gain_.size());
        phase_deg_.resize(gain_.size());
        double offset = 0.0;
        for (std::size_t i = 0; i < gain_.size(); ++i)
        {
            magnitude_db_[i] = 20.0 * std::log10(std::abs(gain_[i]));
            double p = std::arg(gain_[i]) * 180.0 / std::numbers::pi + offset;
            if (i > 0)
            {
                while (p - phase_deg_[i - 1] > 180.0)
                {
                    p -= 360.0;
                    offset -= 360.0;
                }
                while (p - phase_deg_[i - 1] < -180.0)
                {
                    p += 360.0;
                    offset += 360.0;
                }
            }
            phase_deg_[i] = p;
        }
    }

    const FrequencySweep &sweep() const noexcept { return sweep_; }
    const std::vector<complex> &gain() const noexcept { return gain_; }
    const std::vector<double> &magnitude_db() const noexcept { return magnitude_db_; }
    const std::vector<double> &phase_deg() const noexcept { return phase_deg_; }
    std::size_t size() const noexcept { return gain_.size(); }

    // CSV rows `frequency_hz,mag_db,phase_deg` with a header line.
    void write_csv(std::ostream &os) const
    {
        os << "frequency_hz,mag_db,phase_deg\n";
        char buf[96];
        for (std::size_t i = 0; i < size(); ++i)
        {
            std::snprintf(buf, sizeof buf, "%.10g,%.6f,%.6f\n", sweep_[i], magnitude_db_[i], phase_deg_[i]);
            os << buf;
        }
    }

private:
    FrequencySweep sweep_;
    std::vector<complex> gain_;
    std::vector<double> magnitude_db_;
    std::vector<double> phase_deg_;
};

namespace detail
{

// In-place LU solve with partial pivoting. Returns false when a pivot falls below
// `rel_tol` times the largest matrix entry.
inline bool lu_solve(std::vector<complex> &a, std::vector<complex> &b, std::size_t n, double rel_tol = 1e-14)
{
    double scale = 0.0;
    for (const auto &v : a)
        scale = std::max(scale, std::abs(v));
    if (scale == 0.0)
        return false;
    const double tol = rel_tol * scale;
    for (std::size_t k = 0; k < n; ++k)
    {
        std::size_t piv = k;
        double best = std::abs(a[k * n + k]);
        for (std::size_t r = k + 1; r < n; ++r)
            if (std::abs(a[r * n + k]) > best)
            {
                best = std::abs(a[r * n + k]);
                piv = r;
            }
        if (!(best > tol))
            return false;
        if (piv != k)
        {
            for (std::size_t c = 0; c < n; ++c)
                std::swap(a[k * n + c], a[piv * n + c]);
            std::swap(b[k], b[piv]);
        }
        for (std::size_t r = k + 1; r < n; ++r)
        {
            const complex f = a[r * n + k] / a[k * n + k];
            if (f == complex{})
                continue;
            for (std::size_t c = k; c < n; ++c)
                a[r * n + c] -= f * a[k * n + c];
            b[r] -= f * b[k];
        }
    }
    for (std::size_t k = n; k-- > 0;)
    {
        complex s = b[k];
        for (std::size_t c = k + 1; c < n; ++c)
            s -= a[k * n + c] * b[c];
        b[k] = s / a[k * n + k];
    }
    return true;
}

inline complex admittance(const Component &c, double frequency)
{
    const double omega = 2.0 * std::numbers::pi * frequency;
    switch (c.kind)
    {
    case ComponentKind::Resistor:
        return {1.0 / c.value, 0.0};
    case ComponentKind::Capacitor:
        return {0.0, omega * c.value};
    case ComponentKind::Inductor:
        return complex{0.0, -1.0 / (omega * c.value)};
    case ComponentKind::VoltageSource:
        break;
    }
    throw ContractViolation("admittance of a voltage source");
}

} // namespace detail

// Phasor solution at one frequency: voltages of every referenced node plus the current
// delivered by the source (flowing out of its positive terminal into the circuit).
struct NodalSolution
{
    double frequency = 0.0;
    std::map<std::uint32_t, complex> voltage;
    complex source_current;

    complex at(std::uint32_t node, std::uint32_t ground) const
    {
        if (node == ground)
            return {};
        return voltage.at(node);
    }
};

// Modified nodal analysis. Only nodes referenced by a component or by the scaffold enter
// the system; unused node indices are not floating nodes.
inline NodalSolution solve_nodal(const Netlist &netlist, double frequency)
{
    netlist.validate();
    std::vector<std::uint32_t> nodes;
    auto note = [&](std::uint32_t v) {
        if (v != netlist.ground_node && std::find(nodes.begin(), nodes.end(), v) == nodes.end())
            nodes.push_back(v);
    };
    note(netlist.source_node);
    note(netlist.output_node);
    for (const auto &c : netlist.components)
    {
        note(c.node_a);
        note(c.node_b);
    }
    std::sort(nodes.begin(), nodes.end());
    auto slot = [&](std::uint32_t v) -> std::ptrdiff_t {
        if (v == netlist.ground_node)
            return -1;
        return std::lower_bound(nodes.begin(), nodes.end(), v) - nodes.begin();
    };

    const std::size_t n = nodes.size() + 1;
    std::vector<complex> a(n * n), b(n);
    for (const auto &c : netlist.components)
    {
        const complex y = detail::admittance(c, frequency);
        const auto i = slot(c.node_a), j = slot(c.node_b);
        if (i >= 0)
            a[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(i)] += y;
        if (j >= 0)
            a[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(j)] += y;
        if (i >= 0 && j >= 0)
        {
            a[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] -= y;
            a[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] -= y;
        }
    }
    // Source branch: unknown current I (into the source's + terminal from the circuit side is -I).
    const auto s = static_cast<std::size_t>(slot(netlist.source_node));
    const std::size_t row = n - 1;
    a[s * n + row] += 1.0;
    a[row * n + s] += 1.0;
    b[row] = netlist.source_amplitude;

    if (!detail::lu_solve(a, b, n))
        throw InvalidCircuit("singular nodal system at " + format_double(frequency) + " Hz");

    NodalSolution sol;
    sol.frequency = frequency;
    for (std::size_t k = 0; k < nodes.size(); ++k)
    {
        if (!std::isfinite(b[k].real()) || !std::isfinite(b[k].imag()))
            throw InvalidCircuit("non-finite node voltage at " + format_double(frequency) + " Hz");
        sol.voltage[nodes[k]] = b[k];
    }
    // KCL at the source node: the branch unknown is the current entering the circuit
    // through the source row with a minus sign.
    sol.source_current = -b[row];
    return sol;
}

inline ResponseCurve simulate(const Netlist &netlist, const FrequencySweep &sweep)
{
    std::vector<complex> h(sweep.size());
    for (std::size_t i = 0; i < sweep.size(); ++i)
    {
        const auto sol = solve_nodal(netlist, sweep[i]);
        h[i] = sol.at(netlist.output_node, netlist.ground_node) / netlist.source_amplitude;
    }
    return ResponseCurve(sweep, std::move(h));
}

// Scalar figures of merit extracted from a response curve.
class Metrics
{
public:
    Metrics() = default;

    explicit Metrics(const ResponseCurve &curve, std::size_t component_count = 0)
        : freq_(curve.sweep().points())
        , mag_(curve.magnitude_db())
        , phase_(curve.phase_deg())
        , component_count_(component_count)
    {
        require(!freq_.empty(), "metrics on an empty curve");
        dc_gain_db_ = mag_.front();
        const double threshold = dc_gain_db_ - half_power_db;
        bandwidth_hz_ = freq_.back();
        for (std::size_t i = 1; i < mag_.size(); ++i)
        {
            if (mag_[i] < threshold)
            {
                const double t = (threshold - mag_[i - 1]) / (mag_[i] - mag_[i - 1]);
                const double lf = std::log(freq_[i - 1]) + t * (std::log(freq_[i]) - std::log(freq_[i - 1]));
                bandwidth_hz_ = std::exp(lf);
                bandwidth_found_ = true;
                break;
            }
        }
    }

    double dc_gain_db() const noexcept { return dc_gain_db_; }
    // -3 dB point relative to dc_gain; equals f_max when not found.
    double bandwidth_hz() const noexcept { return bandwidth_hz_; }
    bool bandwidth_found() const noexcept { return bandwidth_found_; }
    std::size_t component_count() const noexcept { return component_count_; }

    double response_at(double f) const { return interpolate(mag_, f); }
    double phase_at(double f) const { return interpolate(phase_, f); }

    // Named scalar lookup: dc_gain_db, bandwidth_hz, components, mag_db@<hz>, phase_deg@<hz>.
    double value(const std::string &name) const
    {
        if (name == "dc_gain_db" || name == "gain_db")
            return dc_gain_db_;
        if (name == "bandwidth_hz")
            return bandwidth_hz_;
        if (name == "components")
            return static_cast<double>(component_count_);
        const auto at = name.find('@');
        if (at != std::string::npos)
        {
            const std::string head = name.substr(0, at);
            double f = 0.0;
            try
            {
                f = std::stod(name.substr(at + 1));
            }
            catch (const std::exception &)
            {
                throw ConfigError("bad frequency in metric name '" + name + "'");
            }
            if (head == "mag_db")
                return response_at(f);
            if (head == "phase_deg")
                return phase_at(f);
        }
        throw ConfigError("unknown metric '" + name + "'");
    }

    static bool known_metric(const std::string &name)
    {
        if (name == "dc_gain_db" || name == "gain_db" || name == "bandwidth_hz" || name == "components")
            return true;
        const auto at = name.find('@');
        if (at == std::string::npos)
            return false;
        const std::string head = name.substr(0, at);
        if (head != "mag_db" && head != "phase_deg")
            return false;
        try
        {
            std::size_t used = 0;
            const double f = std::stod(name.substr(at + 1), &used);
            return used == name.size() - at - 1 && f > 0.0;
        }
        catch (const std::exception &)
        {
            return false;
        }
    }

private:
    // Linear in log-frequency; clamps outside the sweep.
    double interpolate(const std::vector<double> &y, double f) const
    {
        if (f <= freq_.front())
            return y.front();
        if (f >= freq_.back())
            return y.back();
        const auto it = std::upper_bound(freq_.begin(), freq_.end(), f);
        const std::size_t i = static_cast<std::size_t>(it - freq_.begin());
        const double t = (std::log(f) - std::log(freq_[i - 1])) / (std::log(freq_[i]) - std::log(freq_[i - 1]));
        return y[i - 1] + t * (y[i] - y[i - 1]);
    }

    std::vector<double> freq_;
    std::vector<double> mag_;
    std::vector<double> phase_;
    double dc_gain_db_ = 0.0;
    double bandwidth_hz_ = 0.0;
    bool bandwidth_found_ = false;
    std::size_t component_count_ = 0;
};

inline Metrics metrics(const ResponseCurve &curve, std::size_t component_count = 0)
{
    return Metrics(curve, component_count);
}

// First-order low-pass reference H(f) = 1 / (1 + j f/fc).
inline ResponseCurve first_order_lowpass(const FrequencySweep &sweep, double cutoff_hz)
{
    if (!(cutoff_hz > 0.0))
        throw ConfigError("cutoff must be positive");
    std::vector<complex> h(sweep.size());
    for (std::size_t i = 0; i < sweep.size(); ++i)
        h[i] = 1.0 / complex(1.0, sweep[i] / cutoff_hz);
    return ResponseCurve(sweep, std::move(h));
}

enum class DeviationChannel
{
    Magnitude,
    Phase,
};

// Sum over the sweep of w(f) * |obs(f) - ideal(f)|, w = w_pass up to the passband edge and
// w_stop above it.
inline double weighted_deviation(const ResponseCurve &curve, const ResponseCurve &ideal, double passband_edge,
                                 double w_pass, double w_stop, DeviationChannel channel)
{
    if (!(curve.sweep() == ideal.sweep()))
        throw ContractViolation("weighted_deviation: curves must share a sweep");
    const auto &obs = channel == DeviationChannel::Magnitude ? curve.magnitude_db() : curve.phase_deg();
    const auto &ref = channel == DeviationChannel::Magnitude ? ideal.magnitude_db() : ideal.phase_deg();
    double total = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i)
    {
        const double w = curve.sweep()[i] <= passband_edge ? w_pass : w_stop;
        total += w * std::abs(obs[i] - ref[i]);
    }
    return total;
}

enum class PenaltyDirection
{
    AboveIsBad,
    BelowIsBad,
};

// measured/reference plus alpha times the fractional deviation |measured - reference| / reference
// when measured lies on the bad side of reference.
inline double penalized_ratio(double measured, double reference, double alpha, PenaltyDirection direction)
{
    if (!(reference > 0.0))
        throw ConfigError("penalized_ratio: reference must be positive");
    if (!(alpha >= 0.0))
        throw ConfigError("penalized_ratio: alpha must be non-negative");
    const bool violated = direction == PenaltyDirection::AboveIsBad ? measured > reference : measured < reference;
    const double ratio = measured / reference;
    return violated ? ratio + alpha * (std::abs(measured - reference) / reference) : ratio;
}

} // namespace dispatch

#endif
