#ifndef DISPATCH_FINETUNE_HPP
#define DISPATCH_FINETUNE_HPP

#include "dispatch/error.hpp"
#include "dispatch/log.hpp"
#include "dispatch/milp.hpp"
#include "dispatch/rng.hpp"
#include "dispatch/sampling.hpp"
#include "dispatch/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

// ---- specification -----------------------------------------------------------

enum class Bound
{
    AtLeast,
    AtMost,
    Within,
};

struct OutputConstraint
{
    std::string name;
    Bound bound = Bound::Within;
    // AtLeast reads `low`, AtMost reads `high`, Within reads both.
    double low = -infinity;
    double high = infinity;
    bool hard = true;

    Interval interval() const
    {
        switch (bound)
        {
        case Bound::AtLeast:
            return {low, infinity};
        case Bound::AtMost:
            return {-infinity, high};
        case Bound::Within:
            break;
        }
        return {low, high};
    }

    bool satisfied(double v) const
    {
        const auto iv = interval();
        return v >= iv.low && v <= iv.high;
    }

    static OutputConstraint at_least(std::string name, double v, bool hard = true)
    {
        return {std::move(name), Bound::AtLeast, v, infinity, hard};
    }
    static OutputConstraint at_most(std::string name, double v, bool hard = true)
    {
        return {std::move(name), Bound::AtMost, -infinity, v, hard};
    }
    static OutputConstraint within(std::string name, double lo, double hi, bool hard = true)
    {
        return {std::move(name), Bound::Within, lo, hi, hard};
    }
};

// Target constraint tightened by a relative step each time it is met.
struct TighteningTarget
{
    std::size_t constraint = 0;
    double step = 0.005;
};

struct DesignSpecification
{
    std::vector<OutputConstraint> constraints;
    std::optional<TighteningTarget> target;

    void validate() const
    {
        if (constraints.empty())
            throw ConfigError("specification needs at least one constraint");
        for (const auto &c : constraints)
        {
            if (c.name.empty())
                throw ConfigError("specification constraint needs an output name");
            const auto iv = c.interval();
            if (std::isnan(iv.low) || std::isnan(iv.high) || !(iv.low <= iv.high))
                throw ConfigError("specification constraint '" + c.name + "' has an empty interval");
            if (c.bound != Bound::AtMost && !std::isfinite(c.low))
                throw ConfigError("specification constraint '" + c.name + "' needs a finite lower value");
            if (c.bound != Bound::AtLeast && !std::isfinite(c.high))
                throw ConfigError("specification constraint '" + c.name + "' needs a finite upper value");
        }
        if (target)
        {
            if (target->constraint >= constraints.size())
                throw ConfigError("tightening target refers to a missing constraint");
            if (!(target->step >= 0.0))
                throw ConfigError("tightening step must be >= 0");
            if (constraints[target->constraint].bound == Bound::Within)
                throw ConfigError("tightening target must be a one-sided constraint");
        }
    }

    // `outputs` is aligned with `constraints`.
    bool satisfied(std::span<const double> outputs) const
    {
        require(outputs.size() == constraints.size(), "specification: output count mismatch");
        for (std::size_t i = 0; i < constraints.size(); ++i)
            if (!constraints[i].satisfied(outputs[i]))
                return false;
        return true;
    }

    bool hard_satisfied(std::span<const double> outputs) const
    {
        require(outputs.size() == constraints.size(), "specification: output count mismatch");
        for (std::size_t i = 0; i < constraints.size(); ++i)
            if (constraints[i].hard && (!target || target->constraint != i) && !constraints[i].satisfied(outputs[i]))
                return false;
        return true;
    }
};

// Sum of |obs - spec| / |spec| over violated constraints, where spec is the violated
// endpoint. A zero endpoint contributes the absolute deviation instead.
inline double fractional_deviation(std::span<const double> outputs, const DesignSpecification &spec)
{
    require(outputs.size() == spec.constraints.size(), "fractional_deviation: output count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
    {
        const auto iv = spec.constraints[i].interval();
        const double v = outputs[i];
        double ref;
        if (v < iv.low)
            ref = iv.low;
        else if (v > iv.high)
            ref = iv.high;
        else
            continue;
        const double gap = std::abs(v - ref);
        total += ref == 0.0 ? gap : gap / std::abs(ref);
    }
    return total;
}

inline DesignSpecification tighten_goal(DesignSpecification spec, double step)
{
    require(step >= 0.0, "tighten_goal: step must be >= 0");
    if (!spec.target)
        return spec;
    auto &c = spec.constraints.at(spec.target->constraint);
    if (c.bound == Bound::AtLeast)
        c.low += step * std::abs(c.low);
    else if (c.bound == Bound::AtMost)
        c.high -= step * std::abs(c.high);
    return spec;
}

// Index of the smallest deviation; the earliest wins ties.
inline std::size_t least_deviation(std::span<const double> deviations)
{
    require(!deviations.empty(), "least_deviation: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < deviations.size(); ++i)
        if (deviations[i] < deviations[best])
            best = i;
    return best;
}

// ---- problem and configuration ---------------------------------------------------

// The simulator as seen by fine-tuning: a native input point in, named outputs out
// (nullopt for a design that cannot be simulated).
struct FinetuneProblem
{
    std::vector<std::string> input_names;
    Box limits;
    std::vector<std::string> output_names;
    std::function<std::optional<std::vector<double>>(std::span<const double>)> simulate;
};

struct FinetuneConfig
{
    std::size_t max_trials = 20;
    std::size_t first_trial_budget = 200;
    std::size_t later_trial_budget = 500;
    std::size_t init_samples = 10;
    std::size_t later_init_samples = 1;
    double box_fraction = 0.7;
    // The MILP aims inside each requirement: interval constraints lose this fraction of
    // their width on both sides, one-sided ones move inward by this fraction of |bound|.
    double interval_shrink = 0.25;
    double one_sided_margin = 1e-3;
    double time_limit_seconds = 144.0 * 3600.0;
    std::vector<std::size_t> hidden{100};
    TrainConfig initial_training;
    TrainConfig retraining;
    SolveBudget solver;
    std::uint64_t seed = 0;

    FinetuneConfig()
    {
        initial_training.learning_rate = 1e-4;
        retraining = initial_training;
    }

    void validate() const
    {
        if (max_trials == 0)
            throw ConfigError("finetune needs max_trials >= 1");
        if (!(box_fraction > 0.0 && box_fraction <= 1.0))
            throw ConfigError("finetune box_fraction must lie in (0, 1]");
        if (!(interval_shrink >= 0.0 && interval_shrink < 0.5) || !(one_sided_margin >= 0.0))
            throw ConfigError("finetune target margins must satisfy 0 <= shrink < 0.5 and margin >= 0");
        if (!(time_limit_seconds > 0.0))
            throw ConfigError("finetune time limit must be positive");
        for (auto h : hidden)
            if (h == 0)
                throw ConfigError("finetune hidden widths must be >= 1");
        initial_training.validate();
        retraining.validate();
    }
};

enum class FinetuneOutcome
{
    Success,
    BestEffort,
};

inline const char *outcome_name(FinetuneOutcome o) { return o == FinetuneOutcome::Success ? "success" : "best_effort"; }

struct FinetuneResult
{
    FinetuneOutcome outcome = FinetuneOutcome::BestEffort;
    SimulationRecord record;
    std::size_t trials = 0;
    std::size_t simulations = 0;
    DesignSpecification final_spec;
    std::optional<SurrogateModel> model;
};

// Mutable state of the trial loop.
struct TrialState
{
    std::size_t trial = 0;
    std::size_t budget = 0;
    std::vector<double> incumbent;
    // Log index of the record behind the incumbent.
    std::size_t incumbent_record = 0;
    Box box;
    // Log indices of every record produced by fine-tuning (the training archive).
    std::vector<std::size_t> archive;
    // Log indices of simulated MILP-feasible proposals.
    std::vector<std::size_t> retained;
    std::vector<std::size_t> successes;
    bool met = false;
};

namespace detail
{

// Re-expresses a network trained under one normalisation so it computes the same native
// function under another (exact for affine normalisers).
inline void renormalize(MlpParams &p, const Normalizer &old_in, const Normalizer &new_in, const Normalizer &old_out,
                        const Normalizer &new_out)
{
    auto &w0 = p.weights.front();
    auto &b0 = p.biases.front();
    for (Eigen::Index k = 0; k < w0.cols(); ++k)
    {
        const auto &o = old_in.ranges()[static_cast<std::size_t>(k)];
        const auto &n = new_in.ranges()[static_cast<std::size_t>(k)];
        const double scale = (n.high - n.low) / (o.high - o.low);
        const double shift = (n.low - o.low) / (o.high - o.low);
        b0 += w0.col(k) * shift;
        w0.col(k) *= scale;
    }
    auto &wl = p.weights.back();
    auto &bl = p.biases.back();
    for (Eigen::Index j = 0; j < wl.rows(); ++j)
    {
        const auto &o = old_out.ranges()[static_cast<std::size_t>(j)];
        const auto &n = new_out.ranges()[static_cast<std::size_t>(j)];
        const double scale = (o.high - o.low) / (n.high - n.low);
        const double shift = (o.low - n.low) / (n.high - n.low);
        wl.row(j) *= scale;
        bl(j) = bl(j) * scale + shift;
    }
}

} // namespace detail

// Fine-tuning driver. Every simulator call goes through `simulate_and_log`, so the log
// holds exactly one record per invocation.
class FineTuner
{
public:
    FineTuner(FinetuneProblem problem, DesignSpecification spec, FinetuneConfig config, SimulationLog &log)
        : problem_(std::move(problem))
        , spec_(std::move(spec))
        , config_(std::move(config))
        , log_(log)
        , sobol_(problem_.limits.size())
        , rng_(Rng::derive(config_.seed, 0xf1e7))
        , start_(std::chrono::steady_clock::now())
    {
        config_.validate();
        spec_.validate();
        require(problem_.limits.size() == problem_.input_names.size(), "finetune: input names must match the limits");
        require(static_cast<bool>(problem_.simulate), "finetune: problem has no simulator");
        for (const auto &c : spec_.constraints)
        {
            std::optional<std::size_t> idx;
            for (std::size_t j = 0; j < problem_.output_names.size(); ++j)
                if (problem_.output_names[j] == c.name)
                    idx = j;
            if (!idx)
                throw ConfigError("specification names output '" + c.name + "' that the problem does not produce");
            constraint_output_.push_back(*idx);
        }
    }

    const DesignSpecification &spec() const noexcept { return spec_; }
    const TrialState &state() const noexcept { return state_; }
    const std::optional<SurrogateModel> &model() const noexcept { return model_; }

    double elapsed() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    bool out_of_time() const { return elapsed() > config_.time_limit_seconds; }

    // Simulates the coarse design; it becomes the first incumbent.
    const SimulationRecord &start(std::span<const double> coarse)
    {
        require(coarse.size() == problem_.limits.size(), "finetune: coarse design dimension mismatch");
        if (!problem_.limits.contains(coarse))
            throw ContractViolation("finetune: coarse design lies outside the component limits");
        state_.trial = 1;
        state_.incumbent.assign(coarse.begin(), coarse.end());
        const auto &r = simulate_and_log(state_.incumbent, "ga", "coarse", {});
        if (!r.valid)
            throw ConfigError("coarse design cannot be simulated");
        state_.incumbent_record = r.seq;
        return r;
    }

    std::vector<double> constrained_outputs(const SimulationRecord &r) const
    {
        std::vector<double> v;
        for (const auto &c : spec_.constraints)
            v.push_back(r.output(c.name).value_or(std::numeric_limits<double>::quiet_NaN()));
        return v;
    }

    // Deviation under the current (possibly tightened) specification.
    double deviation_of(const SimulationRecord &r) const
    {
        return r.valid ? fractional_deviation(constrained_outputs(r), spec_) : infinity;
    }

    // One trial: initial samples around the incumbent, then up to `budget` proposals.
    // Returns true when a simulated point met the specification.
    bool run_trial()
    {
        state_.budget = state_.trial == 1 ? config_.first_trial_budget : config_.later_trial_budget;
        state_.box = perturbation_box(state_.incumbent, config_.box_fraction, problem_.limits);
        trial_records_.clear();
        state_.met = false;

        const std::size_t init = state_.trial == 1 ? config_.init_samples : config_.later_init_samples;
        for (std::size_t k = 0; k < init && !out_of_time(); ++k)
        {
            const auto x = scale_to_box(sobol_.next(), state_.box);
            if (const auto &r = simulate_and_log(x, "init", "sobol", {}); r.meets_spec)
                return finish_success(r);
        }
        for (std::size_t n = 0; n < state_.budget && !out_of_time(); ++n)
        {
            retrain();
            const auto proposal = propose();
            if (const auto &r = simulate_and_log(proposal.point, proposal.phase, proposal.source, proposal.predicted);
                r.meets_spec)
                return finish_success(r);
            else if (proposal.phase == "milp_proposed")
                state_.retained.push_back(r.seq);
        }
        return false;
    }

    // The minimal-deviation record among the incumbent and this trial's records becomes
    // the incumbent; earlier records win ties.
    void replace_incumbent()
    {
        std::vector<std::size_t> candidates{state_.incumbent_record};
        for (auto i : trial_records_)
            if (i > state_.incumbent_record)
                candidates.push_back(i);
        std::sort(candidates.begin(), candidates.end());
        std::vector<double> devs;
        for (auto i : candidates)
            devs.push_back(deviation_of(log_.records()[i]));
        const std::size_t best = candidates[least_deviation(devs)];
        state_.incumbent_record = best;
        state_.incumbent = log_.records()[best].input_values();
    }

    FinetuneResult run(std::span<const double> coarse)
    {
        const auto &first = start(coarse);
        FinetuneResult result;
        bool goal_met = first.meets_spec;
        if (goal_met)
        {
            state_.successes.push_back(first.seq);
            if (!spec_.target)
                return finish(result, FinetuneOutcome::Success);
            tighten();
        }
        while (state_.trial <= config_.max_trials && !out_of_time())
        {
            const bool met = run_trial();
            ++result.trials;
            if (met && !spec_.target)
                return finish(result, FinetuneOutcome::Success);
            if (met)
                tighten();
            else
                replace_incumbent();
            ++state_.trial;
        }
        return finish(result, state_.successes.empty() ? FinetuneOutcome::BestEffort : FinetuneOutcome::Success);
    }

private:
    struct Proposal
    {
        std::vector<double> point;
        std::string phase;
        std::string source;
        NamedValues predicted;
    };

    const SimulationRecord &simulate_and_log(const std::vector<double> &x, const std::string &phase,
                                             const std::string &source, NamedValues predicted)
    {
        SimulationRecord r;
        r.phase = phase;
        r.trial = state_.trial;
        r.source = source;
        r.predicted = std::move(predicted);
        for (std::size_t i = 0; i < x.size(); ++i)
            r.input.emplace_back(problem_.input_names[i], x[i]);
        for (const auto &c : spec_.constraints)
            r.requirements.emplace_back(c.name, c.interval());
        const auto out = problem_.simulate(x);
        r.valid = out.has_value() && out->size() == problem_.output_names.size();
        if (r.valid)
            for (double v : *out)
                r.valid = r.valid && std::isfinite(v);
        if (r.valid)
        {
            for (std::size_t j = 0; j < out->size(); ++j)
                r.outputs.emplace_back(problem_.output_names[j], (*out)[j]);
            const auto obs = constrained_outputs(r);
            r.deviation = fractional_deviation(obs, spec_);
            r.objectives = {*r.deviation};
            r.meets_spec = spec_.satisfied(obs);
        }
        const auto &stored = log_.append(std::move(r));
        state_.archive.push_back(stored.seq);
        trial_records_.push_back(stored.seq);
        return stored;
    }

    bool finish_success(const SimulationRecord &r)
    {
        state_.met = true;
        state_.successes.push_back(r.seq);
        state_.incumbent_record = r.seq;
        state_.incumbent = r.input_values();
        return true;
    }

    void tighten() { spec_ = tighten_goal(spec_, spec_.target->step); }

    // Best target value among successes when goal tightening is active, the latest
    // success otherwise; on failure the best hard-feasible record by target value, else
    // the minimal-deviation record.
    FinetuneResult &finish(FinetuneResult &result, FinetuneOutcome outcome)
    {
        const auto &recs = log_.records();
        auto target_value = [&](std::size_t i) {
            const auto &c = spec_.constraints[spec_.target->constraint];
            const double v = recs[i].output(c.name).value_or(std::numeric_limits<double>::quiet_NaN());
            return c.bound == Bound::AtLeast ? v : -v;
        };
        std::optional<std::size_t> pick;
        if (outcome == FinetuneOutcome::Success)
        {
            pick = state_.successes.back();
            if (spec_.target)
                for (auto i : state_.successes)
                    if (target_value(i) > target_value(*pick))
                        pick = i;
        }
        else
        {
            if (spec_.target)
                for (auto i : state_.archive)
                {
                    if (!recs[i].valid || !spec_.hard_satisfied(constrained_outputs(recs[i])))
                        continue;
                    if (!pick || target_value(i) > target_value(*pick))
                        pick = i;
                }
            if (!pick)
                for (auto i : state_.archive)
                    if (!pick || deviation_of(recs[i]) < deviation_of(recs[*pick]))
                        pick = i;
        }
        result.outcome = outcome;
        result.record = recs.at(*pick);
        result.simulations = state_.archive.size();
        result.final_spec = spec_;
        result.model = model_;
        return result;
    }

    std::vector<std::vector<double>> training_rows(std::vector<std::vector<double>> &targets) const
    {
        std::vector<std::vector<double>> x;
        targets.clear();
        for (auto i : state_.archive)
        {
            const auto &r = log_.records()[i];
            if (!r.valid)
                continue;
            x.push_back(r.input_values());
            std::vector<double> y;
            for (const auto &[_, v] : r.outputs)
                y.push_back(v);
            targets.push_back(std::move(y));
        }
        return x;
    }

    // Warm-start retraining on every valid archived record. The input normaliser follows
    // the trial box and the output normaliser the running output range.
    void retrain()
    {
        std::vector<std::vector<double>> y;
        const auto x = training_rows(y);
        if (x.empty())
            return;
        const auto in = Normalizer::from_box(state_.box);
        const auto out = Normalizer::from_data(y);
        std::vector<std::vector<double>> xn, yn;
        for (std::size_t k = 0; k < x.size(); ++k)
        {
            xn.push_back(in.normalize(x[k]));
            yn.push_back(out.normalize(y[k]));
        }
        const auto data = Dataset::from_rows(xn, yn);
        const MlpSpec spec{problem_.limits.size(), config_.hidden, problem_.output_names.size()};
        MlpParams start;
        const TrainConfig *cfg = &config_.retraining;
        if (model_)
        {
            start = model_->params;
            detail::renormalize(start, model_->input, in, model_->output, out);
        }
        else
        {
            start = init_params(spec, Rng::derive(config_.seed, 0x5eed).next_u64());
            cfg = &config_.initial_training;
        }
        TrainResult trained;
        try
        {
            trained = train(std::move(start), data, *cfg);
        }
        catch (const TrainingError &)
        {
            trained = train(init_params(spec, rng_.next_u64()), data, config_.initial_training);
        }
        model_ = SurrogateModel{spec, std::move(trained.params), in, out, problem_.input_names, problem_.output_names};
    }

    Interval aim(const OutputConstraint &c) const
    {
        auto iv = c.interval();
        if (c.bound == Bound::Within)
        {
            const double w = iv.high - iv.low;
            return {iv.low + config_.interval_shrink * w, iv.high - config_.interval_shrink * w};
        }
        if (c.bound == Bound::AtLeast)
            iv.low += config_.one_sided_margin * (iv.low == 0.0 ? 1.0 : std::abs(iv.low));
        else
            iv.high -= config_.one_sided_margin * (iv.high == 0.0 ? 1.0 : std::abs(iv.high));
        return iv;
    }

    Proposal propose()
    {
        Proposal p;
        if (model_)
        {
            std::vector<Interval> intervals(problem_.output_names.size(), {-infinity, infinity});
            for (std::size_t i = 0; i < spec_.constraints.size(); ++i)
            {
                const std::size_t j = constraint_output_[i];
                const auto iv = aim(spec_.constraints[i]);
                const double lo = model_->output.normalize(j, iv.low), hi = model_->output.normalize(j, iv.high);
                intervals[j].low = std::max(intervals[j].low, std::isfinite(iv.low) ? lo : -infinity);
                intervals[j].high = std::min(intervals[j].high, std::isfinite(iv.high) ? hi : infinity);
            }
            std::vector<Interval> unit(problem_.limits.size(), {0.0, 1.0});
            const auto program = encode(model_->params, Box(unit), intervals);
            const auto solved = solve(program, config_.solver);
            if (solved.status == SolveStatus::Feasible)
            {
                p.point = model_->input.denormalize(solved.point);
                for (std::size_t i = 0; i < p.point.size(); ++i)
                    p.point[i] = std::clamp(p.point[i], state_.box[i].low, state_.box[i].high);
                p.phase = "milp_proposed";
                p.source = "milp";
            }
            else
                p.source = std::string("random:") + solve_status_name(solved.status);
        }
        else
            p.source = "random:no_model";
        if (p.point.empty())
        {
            p.point = random_point(state_.box, rng_);
            p.phase = "random_fallback";
        }
        if (model_)
        {
            const auto pred = model_->predict(p.point);
            for (std::size_t j = 0; j < pred.size(); ++j)
                p.predicted.emplace_back(problem_.output_names[j], pred[j]);
        }
        return p;
    }

    FinetuneProblem problem_;
    DesignSpecification spec_;
    FinetuneConfig config_;
    SimulationLog &log_;
    SobolState sobol_;
    Rng rng_;
    std::chrono::steady_clock::time_point start_;
    TrialState state_;
    std::vector<std::size_t> trial_records_;
    std::vector<std::size_t> constraint_output_;
    std::optional<SurrogateModel> model_;
};

inline FinetuneResult run_finetune(const FinetuneProblem &problem, std::span<const double> coarse,
                                   const DesignSpecification &spec, const FinetuneConfig &config, SimulationLog &log)
{
    FineTuner tuner(problem, spec, config, log);
    return tuner.run(coarse);
}

} // namespace dispatch

#endif
