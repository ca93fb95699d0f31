#ifndef DISPATCH_LOG_HPP
#define DISPATCH_LOG_HPP

#include "dispatch/error.hpp"
#include "dispatch/sampling.hpp"

#include "json.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace dispatch
{

inline constexpr const char *simulation_log_schema = "dispatch.simulation/1";

using NamedValues = std::vector<std::pair<std::string, double>>;

// One simulator invocation. `seq` doubles as the logical timestamp: the position of the
// call in the run, which keeps logs identical between runs with the same seed.
struct SimulationRecord
{
    std::size_t seq = 0;
    std::string phase;
    std::size_t trial = 0;
    std::optional<std::size_t> generation;
    NamedValues input;
    std::string genome;
    bool valid = true;
    NamedValues outputs;
    std::vector<double> objectives;
    std::optional<double> deviation;
    bool meets_spec = false;
    std::string source;
    NamedValues predicted;
    // Requirement interval per constrained output at the time of the call.
    std::vector<std::pair<std::string, Interval>> requirements;

    std::vector<double> input_values() const
    {
        std::vector<double> v;
        for (const auto &[_, x] : input)
            v.push_back(x);
        return v;
    }

    std::optional<double> output(const std::string &name) const
    {
        for (const auto &[n, v] : outputs)
            if (n == name)
                return v;
        return std::nullopt;
    }
};

namespace detail
{

inline nlohmann::ordered_json number_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json named(const NamedValues &v)
{
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto &[k, x] : v)
        o[k] = number_or_null(x);
    return o;
}

inline NamedValues named_from(const nlohmann::ordered_json &o)
{
    NamedValues v;
    if (o.is_null())
        return v;
    for (auto it = o.begin(); it != o.end(); ++it)
        v.emplace_back(it.key(), it.value().is_null() ? std::numeric_limits<double>::quiet_NaN() : it.value().get<double>());
    return v;
}

} // namespace detail

inline nlohmann::ordered_json to_json(const SimulationRecord &r)
{
    using json = nlohmann::ordered_json;
    json j;
    j["schema"] = simulation_log_schema;
    j["seq"] = r.seq;
    j["phase"] = r.phase;
    j["trial"] = r.trial;
    if (r.generation)
        j["generation"] = *r.generation;
    if (!r.input.empty())
        j["input"] = detail::named(r.input);
    if (!r.genome.empty())
        j["genome"] = r.genome;
    j["valid"] = r.valid;
    j["outputs"] = r.valid ? detail::named(r.outputs) : json(nullptr);
    json objs = json::array();
    for (double v : r.objectives)
        objs.push_back(detail::number_or_null(v));
    j["objectives"] = objs;
    j["deviation"] = r.deviation ? detail::number_or_null(*r.deviation) : json(nullptr);
    j["meets_spec"] = r.meets_spec;
    j["source"] = r.source;
    if (!r.predicted.empty())
        j["predicted"] = detail::named(r.predicted);
    if (!r.requirements.empty())
    {
        json req = json::object();
        for (const auto &[name, iv] : r.requirements)
            req[name] = json::array({detail::number_or_null(iv.low), detail::number_or_null(iv.high)});
        j["requirements"] = req;
    }
    return j;
}

inline SimulationRecord record_from_json(const nlohmann::ordered_json &j)
{
    if (!j.is_object() || j.value("schema", "") != simulation_log_schema)
        throw ParseError("record has no recognised schema tag");
    try
    {
        SimulationRecord r;
        r.seq = j.at("seq").get<std::size_t>();
        r.phase = j.at("phase").get<std::string>();
        r.trial = j.at("trial").get<std::size_t>();
        if (j.contains("generation"))
            r.generation = j.at("generation").get<std::size_t>();
        if (j.contains("input"))
            r.input = detail::named_from(j.at("input"));
        r.genome = j.value("genome", "");
        r.valid = j.at("valid").get<bool>();
        r.outputs = detail::named_from(j.at("outputs"));
        for (const auto &v : j.at("objectives"))
            r.objectives.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
        if (!j.at("deviation").is_null())
            r.deviation = j.at("deviation").get<double>();
        r.meets_spec = j.at("meets_spec").get<bool>();
        r.source = j.at("source").get<std::string>();
        if (j.contains("predicted"))
            r.predicted = detail::named_from(j.at("predicted"));
        if (j.contains("requirements"))
            for (auto it = j.at("requirements").begin(); it != j.at("requirements").end(); ++it)
            {
                const auto &a = it.value();
                const double inf = std::numeric_limits<double>::infinity();
                r.requirements.push_back(
                    {it.key(), {a.at(0).is_null() ? -inf : a.at(0).get<double>(), a.at(1).is_null() ? inf : a.at(1).get<double>()}});
            }
        return r;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(std::string("malformed record: ") + e.what());
    }
}

// Append-only run log. Records are kept in memory and, when a sink is attached,
// written as one JSON line each at the moment they are appended.
class SimulationLog
{
public:
    SimulationLog() = default;
    explicit SimulationLog(std::ostream &sink) : sink_(&sink) {}

    const SimulationRecord &append(SimulationRecord r)
    {
        r.seq = records_.size();
        if (sink_)
        {
            *sink_ << to_json(r).dump() << '\n';
            sink_->flush();
        }
        records_.push_back(std::move(r));
        return records_.back();
    }

    const std::vector<SimulationRecord> &records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

private:
    std::ostream *sink_ = nullptr;
    std::vector<SimulationRecord> records_;
};

struct LogReadResult
{
    std::vector<SimulationRecord> records;
    std::size_t skipped = 0;
};

// Reads a JSON-lines log; lines that fail to parse are skipped and counted.
inline LogReadResult read_log(std::istream &in)
{
    LogReadResult out;
    std::string line;
    while (std::getline(in, line))
    {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try
        {
            out.records.push_back(record_from_json(nlohmann::ordered_json::parse(line)));
        }
        catch (const std::exception &)
        {
            ++out.skipped;
        }
    }
    return out;
}

} // namespace dispatch

#endif
