#ifndef DISPATCH_NETLIST_HPP
#define DISPATCH_NETLIST_HPP

#include "dispatch/error.hpp"
#include "dispatch/rng.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dispatch
{

enum class ComponentKind : std::uint8_t
{
    Resistor,
    Capacitor,
    Inductor,
    VoltageSource,
};

inline char kind_letter(ComponentKind k)
{
    switch (k)
    {
    case ComponentKind::Resistor:
        return 'R';
    case ComponentKind::Capacitor:
        return 'C';
    case ComponentKind::Inductor:
        return 'L';
    case ComponentKind::VoltageSource:
        return 'V';
    }
    return '?';
}

inline std::optional<ComponentKind> kind_from_letter(char c)
{
    switch (std::toupper(static_cast<unsigned char>(c)))
    {
    case 'R':
        return ComponentKind::Resistor;
    case 'C':
        return ComponentKind::Capacitor;
    case 'L':
        return ComponentKind::Inductor;
    case 'V':
        return ComponentKind::VoltageSource;
    default:
        return std::nullopt;
    }
}

// Shortest round-trip decimal form of a double.
inline std::string format_double(double v)
{
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    std::string s(buf.data(), end);
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

// Values offered for one evolvable kind: a discrete list for the genetic search and a
// continuous range for fine-tuning. The two are independent.
struct KindCatalog
{
    ComponentKind kind = ComponentKind::Resistor;
    std::vector<double> values;
    double range_low = 0.0;
    double range_high = 0.0;
};

class ComponentCatalog
{
public:
    ComponentCatalog() = default;

    explicit ComponentCatalog(std::vector<KindCatalog> kinds) : kinds_(std::move(kinds))
    {
        validate();
    }

    const std::vector<KindCatalog> &kinds() const noexcept { return kinds_; }
    std::size_t kind_count() const noexcept { return kinds_.size(); }

    const KindCatalog &entry(ComponentKind k) const
    {
        for (const auto &e : kinds_)
            if (e.kind == k)
                return e;
        throw ConfigError(std::string("catalog has no entry for kind ") + kind_letter(k));
    }

    bool offers(ComponentKind k) const noexcept
    {
        return std::any_of(kinds_.begin(), kinds_.end(), [k](const auto &e) { return e.kind == k; });
    }

    double value(ComponentKind k, std::size_t index) const
    {
        const auto &e = entry(k);
        if (index >= e.values.size())
            throw ContractViolation("catalog value index out of range");
        return e.values[index];
    }

    // Index of the catalog value matching `v` to a relative 1e-9, if any.
    std::optional<std::size_t> find(ComponentKind k, double v) const
    {
        const auto &e = entry(k);
        for (std::size_t i = 0; i < e.values.size(); ++i)
            if (std::abs(e.values[i] - v) <= 1e-9 * std::abs(v))
                return i;
        return std::nullopt;
    }

    void validate() const
    {
        if (kinds_.empty())
            throw ConfigError("catalog offers no component kinds");
        for (std::size_t i = 0; i < kinds_.size(); ++i)
        {
            const auto &e = kinds_[i];
            if (e.kind == ComponentKind::VoltageSource)
                throw ConfigError("voltage sources cannot be evolved");
            if (e.values.empty())
                throw ConfigError(std::string("catalog list for ") + kind_letter(e.kind) + " is empty");
            for (double v : e.values)
                if (!(v > 0.0) || !std::isfinite(v))
                    throw ConfigError(std::string("catalog values for ") + kind_letter(e.kind) + " must be positive");
            if (!(e.range_low < e.range_high) || !(e.range_low > 0.0))
                throw ConfigError(std::string("catalog range for ") + kind_letter(e.kind) + " needs 0 < low < high");
            for (std::size_t j = 0; j < i; ++j)
                if (kinds_[j].kind == e.kind)
                    throw ConfigError("catalog lists a kind twice");
        }
    }

private:
    std::vector<KindCatalog> kinds_;
};

struct Gene
{
    ComponentKind kind = ComponentKind::Resistor;
    std::uint32_t node_a = 0;
    std::uint32_t node_b = 0;
    std::uint32_t value_index = 0;
    bool active = false;

    bool self_loop() const noexcept { return node_a == node_b; }
    bool live() const noexcept { return active && !self_loop(); }
    bool touches(std::uint32_t node) const noexcept { return node_a == node || node_b == node; }

    friend bool operator==(const Gene &, const Gene &) = default;
};

enum class Origin : std::uint8_t
{
    Seed,
    Random,
    Child,
};

inline const char *origin_name(Origin o)
{
    switch (o)
    {
    case Origin::Seed:
        return "seed";
    case Origin::Random:
        return "random";
    case Origin::Child:
        return "child";
    }
    return "?";
}

struct Chromosome
{
    std::vector<Gene> genes;
    Origin origin = Origin::Random;

    // Genome identity ignores the origin tag.
    friend bool operator==(const Chromosome &a, const Chromosome &b) { return a.genes == b.genes; }
};

// Fixed terminals that every decoded circuit shares.
struct Scaffold
{
    std::uint32_t ground_node = 0;
    std::uint32_t source_node = 1;
    std::uint32_t output_node = 2;
    std::uint32_t max_nodes = 5;
    double source_amplitude = 1.0;

    std::array<std::uint32_t, 3> terminals() const noexcept { return {source_node, output_node, ground_node}; }

    bool is_terminal(std::uint32_t n) const noexcept
    {
        return n == ground_node || n == source_node || n == output_node;
    }

    void validate() const
    {
        if (max_nodes < 3)
            throw ConfigError("scaffold needs max_nodes >= 3");
        if (ground_node == source_node || ground_node == output_node || source_node == output_node)
            throw ConfigError("scaffold terminals must be distinct");
        if (ground_node >= max_nodes || source_node >= max_nodes || output_node >= max_nodes)
            throw ConfigError("scaffold terminal beyond max_nodes");
    }
};

struct Component
{
    ComponentKind kind = ComponentKind::Resistor;
    std::uint32_t node_a = 0;
    std::uint32_t node_b = 0;
    double value = 0.0;

    friend bool operator==(const Component &, const Component &) = default;
};

// Passive components plus the AC source between source_node and ground_node.
struct Netlist
{
    std::vector<Component> components;
    std::uint32_t ground_node = 0;
    std::uint32_t source_node = 1;
    std::uint32_t output_node = 2;
    double source_amplitude = 1.0;

    // Number of entries the fixed scaffold contributes to the text form.
    static constexpr std::size_t scaffold_size = 1;

    void validate() const
    {
        for (const auto &c : components)
        {
            if (c.kind == ComponentKind::VoltageSource)
                throw ConfigError("netlist components may not include extra voltage sources");
            if (!(c.value > 0.0) || !std::isfinite(c.value))
                throw ConfigError("netlist component value must be positive and finite");
            if (c.node_a == c.node_b)
                throw ConfigError("netlist component is a self-loop");
        }
        if (source_node == ground_node)
            throw ConfigError("netlist source is shorted to ground");
    }
};

inline Chromosome random_chromosome(const ComponentCatalog &catalog, std::uint32_t max_nodes,
                                    std::size_t max_components, std::uint64_t seed)
{
    catalog.validate();
    if (max_nodes < 2)
        throw ConfigError("random_chromosome: max_nodes must be >= 2");
    if (max_components < 1)
        throw ConfigError("random_chromosome: max_components must be >= 1");
    Rng rng(seed);
    Chromosome c;
    c.origin = Origin::Random;
    c.genes.resize(max_components);
    for (auto &g : c.genes)
    {
        const auto &entry = catalog.kinds()[rng.index(catalog.kind_count())];
        g.kind = entry.kind;
        g.node_a = static_cast<std::uint32_t>(rng.below(max_nodes));
        g.node_b = static_cast<std::uint32_t>(rng.below(max_nodes));
        g.value_index = static_cast<std::uint32_t>(rng.index(entry.values.size()));
        g.active = rng.bernoulli(0.5);
    }
    return c;
}

inline std::size_t active_count(const Chromosome &c)
{
    return static_cast<std::size_t>(std::count_if(c.genes.begin(), c.genes.end(),
                                                  [](const Gene &g) { return g.live(); }));
}

// True when every fixed terminal has at least one live gene incident on it.
inline bool terminals_connected(const Chromosome &c, const Scaffold &scaffold)
{
    for (auto t : scaffold.terminals())
        if (std::none_of(c.genes.begin(), c.genes.end(), [t](const Gene &g) { return g.live() && g.touches(t); }))
            return false;
    return true;
}

// Repairs terminal connectivity. Genes are scanned in index order; for each missing
// terminal the first live gene not touching any terminal gets its node_a rewired. If none
// exists, the first gene whose rewiring keeps every already-covered terminal covered is used.
inline Chromosome postprocess(Chromosome c, const Scaffold &scaffold)
{
    scaffold.validate();
    if (c.genes.empty())
        throw ContractViolation("postprocess: chromosome has no genes");

    const auto terminals = scaffold.terminals();
    const std::size_t needed = std::min<std::size_t>(terminals.size(), c.genes.size());
    auto active_genes = [&] {
        return static_cast<std::size_t>(std::count_if(c.genes.begin(), c.genes.end(), [](const Gene &g) { return g.active; }));
    };
    for (std::size_t i = 0; i < c.genes.size() && active_genes() < needed; ++i)
        c.genes[i].active = true;

    auto covered = [&](const Chromosome &x, std::uint32_t t) {
        return std::any_of(x.genes.begin(), x.genes.end(), [t](const Gene &g) { return g.live() && g.touches(t); });
    };

    for (auto t : terminals)
    {
        if (covered(c, t))
            continue;
        bool fixed = false;
        for (auto &g : c.genes)
        {
            if (!g.active || scaffold.is_terminal(g.node_a) || scaffold.is_terminal(g.node_b) || g.node_b == t)
                continue;
            g.node_a = t;
            fixed = true;
            break;
        }
        // Fallback: any single-end rewiring that keeps every covered terminal covered.
        for (std::size_t i = 0; i < c.genes.size() && !fixed; ++i)
        {
            if (!c.genes[i].active)
                continue;
            for (int end = 0; end < 2 && !fixed; ++end)
            {
                Chromosome trial = c;
                (end == 0 ? trial.genes[i].node_a : trial.genes[i].node_b) = t;
                if (!trial.genes[i].live())
                    continue;
                bool keeps = true;
                for (auto other : terminals)
                    if (covered(c, other) && !covered(trial, other))
                        keeps = false;
                if (keeps)
                {
                    c = std::move(trial);
                    fixed = true;
                }
            }
        }
    }
    return c;
}

inline Netlist decode(const Chromosome &c, const ComponentCatalog &catalog, const Scaffold &scaffold)
{
    Netlist n;
    n.ground_node = scaffold.ground_node;
    n.source_node = scaffold.source_node;
    n.output_node = scaffold.output_node;
    n.source_amplitude = scaffold.source_amplitude;
    for (const auto &g : c.genes)
        if (g.live())
            n.components.push_back({g.kind, g.node_a, g.node_b, catalog.value(g.kind, g.value_index)});
    return n;
}

// Encodes a netlist whose values all appear in the catalog, padding with inert genes
// (inactive self-loops on ground) up to `length`.
inline Chromosome encode_netlist(const Netlist &n, const ComponentCatalog &catalog, std::size_t length)
{
    if (n.components.size() > length)
        throw ConfigError("seed netlist has more components than the chromosome length");
    Chromosome c;
    c.origin = Origin::Seed;
    for (const auto &comp : n.components)
    {
        const auto idx = catalog.find(comp.kind, comp.value);
        if (!idx)
            throw ConfigError(std::string("seed component value ") + format_double(comp.value) + " for kind " +
                              kind_letter(comp.kind) + " is not in the catalog");
        c.genes.push_back({comp.kind, comp.node_a, comp.node_b, static_cast<std::uint32_t>(*idx), true});
    }
    const ComponentKind pad_kind = catalog.kinds().front().kind;
    while (c.genes.size() < length)
        c.genes.push_back({pad_kind, n.ground_node, n.ground_node, 0, false});
    return c;
}

// ---- text forms ------------------------------------------------------------

// One component per line: `<KIND><ordinal> <node_a> <node_b> <value>`, then the source line
// `V1 <src> <gnd> AC <amplitude>` and an `.out <node>` directive.
inline std::string to_text(const Netlist &n)
{
    std::ostringstream os;
    std::array<int, 4> ordinal{};
    for (const auto &c : n.components)
    {
        const auto k = static_cast<std::size_t>(c.kind);
        os << kind_letter(c.kind) << ++ordinal[k] << ' ' << c.node_a << ' ' << c.node_b << ' '
           << format_double(c.value) << '\n';
    }
    os << "V1 " << n.source_node << ' ' << n.ground_node << " AC " << format_double(n.source_amplitude) << '\n';
    os << ".out " << n.output_node << '\n';
    return os.str();
}

// Parses the netlist text form. Lines starting with `*` are comments; `.out <node>`
// names the output node (default: highest non-ground node seen).
inline Netlist parse_netlist(std::istream &in)
{
    Netlist n;
    bool have_source = false;
    std::optional<std::uint32_t> output;
    std::uint32_t highest = 0;
    std::string line;
    std::size_t line_no = 0;
    auto parse_value = [&](const std::string &tok) {
        double v = 0.0;
        std::size_t used = 0;
        try
        {
            v = std::stod(tok, &used);
        }
        catch (const std::exception &)
        {
            throw ParseError("bad numeric value '" + tok + "'", line_no);
        }
        if (used != tok.size())
            throw ParseError("bad numeric value '" + tok + "'", line_no);
        return v;
    };
    while (std::getline(in, line))
    {
        ++line_no;
        std::istringstream row(line);
        std::string name;
        if (!(row >> name) || name[0] == '*')
            continue;
        if (name == ".out")
        {
            long node = -1;
            if (!(row >> node) || node < 0)
                throw ParseError(".out needs a node index", line_no);
            output = static_cast<std::uint32_t>(node);
            continue;
        }
        if (name == ".end")
            break;
        const auto kind = kind_from_letter(name[0]);
        if (!kind)
            throw ParseError("unknown component '" + name + "'", line_no);
        long a = -1, b = -1;
        if (!(row >> a >> b) || a < 0 || b < 0)
            throw ParseError("component needs two non-negative node indices", line_no);
        std::string tok;
        if (!(row >> tok))
            throw ParseError("component is missing its value", line_no);
        highest = std::max({highest, static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
        if (*kind == ComponentKind::VoltageSource)
        {
            if (have_source)
                throw ParseError("only one voltage source is supported", line_no);
            if (tok == "AC" || tok == "ac")
                if (!(row >> tok))
                    throw ParseError("AC source is missing its amplitude", line_no);
            n.source_node = static_cast<std::uint32_t>(a);
            n.ground_node = static_cast<std::uint32_t>(b);
            n.source_amplitude = parse_value(tok);
            have_source = true;
            continue;
        }
        const double v = parse_value(tok);
        if (!(v > 0.0))
            throw ParseError("component value must be positive", line_no);
        if (a == b)
            throw ParseError("component '" + name + "' is a self-loop", line_no);
        n.components.push_back({*kind, static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), v});
    }
    if (!have_source)
        throw ParseError("netlist has no voltage source");
    n.output_node = output.value_or(highest);
    return n;
}

inline Netlist parse_netlist(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return parse_netlist(in);
}

// Two-row record: top row `kind node_a node_b value_index` per gene, bottom row active bits.
inline std::string to_text(const Chromosome &c)
{
    std::ostringstream os;
    os << "chromosome v1 origin=" << origin_name(c.origin) << " genes=" << c.genes.size() << '\n';
    for (std::size_t i = 0; i < c.genes.size(); ++i)
    {
        const auto &g = c.genes[i];
        os << (i ? " | " : "") << kind_letter(g.kind) << ' ' << g.node_a << ' ' << g.node_b << ' ' << g.value_index;
    }
    os << '\n';
    for (std::size_t i = 0; i < c.genes.size(); ++i)
        os << (i ? " " : "") << (c.genes[i].active ? 1 : 0);
    os << '\n';
    return os.str();
}

inline Chromosome parse_chromosome(std::string_view text)
{
    std::istringstream in{std::string(text)};
    std::string header, top, bottom;
    if (!std::getline(in, header) || header.rfind("chromosome v1", 0) != 0)
        throw ParseError("missing chromosome v1 header", 1);
    Chromosome c;
    if (header.find("origin=seed") != std::string::npos)
        c.origin = Origin::Seed;
    else if (header.find("origin=child") != std::string::npos)
        c.origin = Origin::Child;
    std::getline(in, top);
    std::getline(in, bottom);
    std::istringstream genes(top);
    std::string field;
    while (genes >> field)
    {
        if (field == "|")
            continue;
        const auto kind = kind_from_letter(field[0]);
        if (!kind || field.size() != 1 || *kind == ComponentKind::VoltageSource)
            throw ParseError("bad gene kind '" + field + "'", 2);
        Gene g;
        g.kind = *kind;
        if (!(genes >> g.node_a >> g.node_b >> g.value_index))
            throw ParseError("truncated gene", 2);
        c.genes.push_back(g);
    }
    std::istringstream bits(bottom);
    for (auto &g : c.genes)
    {
        int b = -1;
        if (!(bits >> b) || (b != 0 && b != 1))
            throw ParseError("active row must hold one 0/1 per gene", 3);
        g.active = b == 1;
    }
    return c;
}

} // namespace dispatch

#endif
