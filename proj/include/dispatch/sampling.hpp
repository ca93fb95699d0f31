#ifndef DISPATCH_SAMPLING_HPP
#define DISPATCH_SAMPLING_HPP

#include "dispatch/error.hpp"
#include "dispatch/rng.hpp"
#include "dispatch/sobol_table.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dispatch
{

struct Interval
{
    double low = 0.0;
    double high = 0.0;

    double width() const noexcept { return high - low; }
    bool contains(double v) const noexcept { return v >= low && v <= high; }
};

// Axis-aligned box in native units.
class Box
{
public:
    Box() = default;
    explicit Box(std::vector<Interval> dims) : dims_(std::move(dims)) { validate(); }

    std::size_t size() const noexcept { return dims_.size(); }
    const Interval &operator[](std::size_t i) const { return dims_[i]; }
    const std::vector<Interval> &dims() const noexcept { return dims_; }

    bool contains(std::span<const double> point, double tol = 0.0) const
    {
        if (point.size() != dims_.size())
            return false;
        for (std::size_t i = 0; i < dims_.size(); ++i)
            if (point[i] < dims_[i].low - tol || point[i] > dims_[i].high + tol)
                return false;
        return true;
    }

    bool contains(const Box &inner) const
    {
        if (inner.size() != size())
            return false;
        for (std::size_t i = 0; i < size(); ++i)
            if (inner[i].low < dims_[i].low || inner[i].high > dims_[i].high)
                return false;
        return true;
    }

private:
    void validate() const
    {
        if (dims_.empty())
            throw ConfigError("box needs at least one dimension");
        for (const auto &d : dims_)
            if (!(d.low <= d.high))
                throw ConfigError("box dimension has low > high");
    }

    std::vector<Interval> dims_;
};

// Direction-number record, one per dimension: degree s, coefficient word a, initial m_1..m_s.
struct DirectionEntry
{
    unsigned degree = 0;
    std::uint32_t coefficients = 0;
    std::vector<std::uint32_t> initial;
};

// Parses the `d s a m_1 ... m_s` text format. A non-numeric first line is a header.
inline std::vector<DirectionEntry> parse_direction_numbers(std::istream &in)
{
    std::vector<DirectionEntry> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos)
            continue;
        if (line_no == 1 && !std::isdigit(static_cast<unsigned char>(line[first])))
            continue;
        std::istringstream row(line);
        unsigned long d = 0, s = 0, a = 0;
        if (!(row >> d >> s >> a) || s == 0 || s > 31)
            throw ParseError("malformed direction-number row", line_no);
        if (d != table.size() + 2)
            throw ParseError("direction-number rows must start at d=2 and be consecutive", line_no);
        DirectionEntry e;
        e.degree = static_cast<unsigned>(s);
        e.coefficients = static_cast<std::uint32_t>(a);
        for (unsigned k = 0; k < s; ++k)
        {
            unsigned long m = 0;
            if (!(row >> m))
                throw ParseError("missing m_i value", line_no);
            if (m % 2 == 0 || m >= (1UL << (k + 1)))
                throw ParseError("m_i must be odd and below 2^i", line_no);
            e.initial.push_back(static_cast<std::uint32_t>(m));
        }
        table.push_back(std::move(e));
    }
    return table;
}

inline const std::vector<DirectionEntry> &builtin_direction_numbers()
{
    static const std::vector<DirectionEntry> table = [] {
        std::istringstream in(detail::joe_kuo_table);
        return parse_direction_numbers(in);
    }();
    return table;
}

// Gray-code Sobol generator. The all-zero point at index 0 is never emitted:
// a fresh state's first call returns index 1.
class SobolState
{
public:
    static constexpr unsigned bits = 32;

    explicit SobolState(std::size_t dims, std::uint64_t start_index = 0)
        : SobolState(dims, builtin_direction_numbers(), start_index)
    {
    }

    SobolState(std::size_t dims, const std::vector<DirectionEntry> &table, std::uint64_t start_index = 0)
        : dims_(dims)
    {
        if (dims == 0)
            throw ConfigError("sobol dimension must be >= 1");
        if (dims > table.size() + 1)
            throw ConfigError("sobol dimension " + std::to_string(dims) + " exceeds direction-number table");
        directions_.assign(dims * bits, 0);
        for (unsigned k = 0; k < bits; ++k)
            directions_[k] = std::uint32_t{1} << (bits - 1 - k);
        for (std::size_t j = 1; j < dims; ++j)
        {
            const auto &e = table[j - 1];
            const unsigned s = e.degree;
            std::uint32_t *v = &directions_[j * bits];
            for (unsigned k = 0; k < std::min(s, bits); ++k)
                v[k] = e.initial[k] << (bits - 1 - k);
            for (unsigned k = s; k < bits; ++k)
            {
                std::uint32_t value = v[k - s] ^ (v[k - s] >> s);
                for (unsigned l = 1; l < s; ++l)
                    if ((e.coefficients >> (s - 1 - l)) & 1U)
                        value ^= v[k - l];
                v[k] = value;
            }
        }
        seek(start_index);
    }

    std::size_t dims() const noexcept { return dims_; }

    // Index of the most recently emitted point (0 before the first call).
    std::uint64_t index() const noexcept { return index_; }

    // Positions the state so that the next call to next() returns point `index + 1`.
    void seek(std::uint64_t index)
    {
        if (index >= (std::uint64_t{1} << bits) - 1)
            throw ConfigError("sobol index beyond 2^32 - 1");
        index_ = index;
        const std::uint64_t gray = index ^ (index >> 1);
        current_.assign(dims_, 0);
        for (unsigned k = 0; k < bits; ++k)
            if ((gray >> k) & 1U)
                for (std::size_t j = 0; j < dims_; ++j)
                    current_[j] ^= directions_[j * bits + k];
    }

    std::vector<double> next()
    {
        if (index_ + 1 >= (std::uint64_t{1} << bits))
            throw ConfigError("sobol sequence exhausted");
        // Gray-code step: flip the direction at the lowest zero bit of the previous index.
        unsigned c = 0;
        for (std::uint64_t v = index_; v & 1U; v >>= 1)
            ++c;
        ++index_;
        std::vector<double> point(dims_);
        for (std::size_t j = 0; j < dims_; ++j)
        {
            current_[j] ^= directions_[j * bits + c];
            point[j] = static_cast<double>(current_[j]) * 0x1.0p-32;
        }
        return point;
    }

private:
    std::size_t dims_;
    std::uint64_t index_ = 0;
    std::vector<std::uint32_t> directions_;
    std::vector<std::uint32_t> current_;
};

inline std::vector<double> sobol_next(SobolState &state) { return state.next(); }

inline std::vector<double> scale_to_box(std::span<const double> unit, const Box &box)
{
    require(unit.size() == box.size(), "scale_to_box: dimension mismatch");
    std::vector<double> out(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i)
        out[i] = box[i].low + unit[i] * (box[i].high - box[i].low);
    return out;
}

// Inverse of scale_to_box; degenerate dimensions map to 0.
inline std::vector<double> unscale_from_box(std::span<const double> native, const Box &box)
{
    require(native.size() == box.size(), "unscale_from_box: dimension mismatch");
    std::vector<double> out(native.size());
    for (std::size_t i = 0; i < native.size(); ++i)
    {
        const double w = box[i].high - box[i].low;
        out[i] = w > 0.0 ? (native[i] - box[i].low) / w : 0.0;
    }
    return out;
}

// [nominal*(1-fraction), nominal*(1+fraction)] per dimension, intersected with limits.
inline Box perturbation_box(std::span<const double> nominal, double fraction, const Box &limits)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ContractViolation("perturbation_box: fraction must lie in (0, 1]");
    require(nominal.size() == limits.size(), "perturbation_box: dimension mismatch");
    if (!limits.contains(nominal))
        throw ContractViolation("perturbation_box: nominal outside limits");
    std::vector<Interval> dims(nominal.size());
    for (std::size_t i = 0; i < nominal.size(); ++i)
    {
        const double a = nominal[i] * (1.0 - fraction);
        const double b = nominal[i] * (1.0 + fraction);
        dims[i].low = std::max(std::min(a, b), limits[i].low);
        dims[i].high = std::min(std::max(a, b), limits[i].high);
    }
    return Box(std::move(dims));
}

inline std::vector<double> random_point(const Box &box, Rng &rng)
{
    std::vector<double> out(box.size());
    for (std::size_t i = 0; i < box.size(); ++i)
        out[i] = box[i].low == box[i].high ? box[i].low : rng.uniform(box[i].low, box[i].high);
    return out;
}

} // namespace dispatch

#endif
