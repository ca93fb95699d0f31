#include "dispatch/benchmarks.hpp"
#include "dispatch/finetune.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace dispatch;

namespace
{

// y = x on [0, 1]; `invalid_above` makes larger inputs unsimulatable.
FinetuneProblem identity_problem(double invalid_above = 2.0)
{
    FinetuneProblem p;
    p.input_names = {"x"};
    p.limits = Box({{0.0, 1.0}});
    p.output_names = {"y"};
    p.simulate = [invalid_above](std::span<const double> x) -> std::optional<std::vector<double>> {
        if (x[0] > invalid_above)
            return std::nullopt;
        return std::vector<double>{x[0]};
    };
    return p;
}

FinetuneConfig small_config(std::uint64_t seed = 1)
{
    FinetuneConfig c;
    c.max_trials = 2;
    c.first_trial_budget = 6;
    c.later_trial_budget = 6;
    c.init_samples = 4;
    c.hidden = {6};
    c.initial_training.learning_rate = 1e-2;
    c.initial_training.max_iterations = 300;
    c.retraining = c.initial_training;
    c.retraining.max_iterations = 50;
    c.seed = seed;
    return c;
}

DesignSpecification spec_of(std::vector<OutputConstraint> cs)
{
    DesignSpecification s;
    s.constraints = std::move(cs);
    return s;
}

std::size_t count_phase(const SimulationLog &log, const std::string &phase)
{
    std::size_t n = 0;
    for (const auto &r : log.records())
        n += r.phase == phase;
    return n;
}

} // namespace

TEST(FractionalDeviation, SatisfiedIsZero)
{
    const auto s = lowpass_spec();
    const std::vector<double> obs{0.0, 1000.0};
    EXPECT_EQ(fractional_deviation(obs, s), 0.0);
}

TEST(FractionalDeviation, SingleViolation)
{
    const auto s = spec_of({OutputConstraint::at_least("bw", 990.0)});
    const std::vector<double> obs{950.0};
    EXPECT_NEAR(fractional_deviation(obs, s), 40.0 / 990.0, 1e-12);
    EXPECT_NEAR(fractional_deviation(obs, s), 0.040404, 1e-6);
}

TEST(FractionalDeviation, Composite)
{
    const auto s = spec_of({OutputConstraint::at_least("bw", 990.0), OutputConstraint::at_least("gain", -0.92)});
    const std::vector<double> obs{950.0, -1.0};
    EXPECT_NEAR(fractional_deviation(obs, s), 40.0 / 990.0 + 0.08 / 0.92, 1e-12);
    EXPECT_NEAR(fractional_deviation(obs, s), 0.127361, 1e-6);
}

TEST(FractionalDeviation, IntervalUsesViolatedEndpoint)
{
    const auto s = lowpass_spec();
    EXPECT_NEAR(fractional_deviation(std::vector<double>{1.0, 1000.0}, s), 0.17 / 0.83, 1e-12);
    EXPECT_NEAR(fractional_deviation(std::vector<double>{-1.0, 1000.0}, s), 0.08 / 0.92, 1e-12);
    EXPECT_NEAR(fractional_deviation(std::vector<double>{0.0, 1030.0}, s), 20.0 / 1010.0, 1e-12);
}

TEST(FractionalDeviation, ZeroSpecUsesAbsoluteGap)
{
    const auto s = spec_of({OutputConstraint::at_most("v", 0.0)});
    EXPECT_DOUBLE_EQ(fractional_deviation(std::vector<double>{0.25}, s), 0.25);
}

TEST(FractionalDeviation, NegativeSpecUsesMagnitude)
{
    const auto s = spec_of({OutputConstraint::at_most("v", -2.0)});
    EXPECT_DOUBLE_EQ(fractional_deviation(std::vector<double>{-1.0}, s), 0.5);
}

TEST(FractionalDeviation, SizeMismatchThrows)
{
    EXPECT_THROW(fractional_deviation(std::vector<double>{1.0}, lowpass_spec()), ContractViolation);
}

TEST(TightenGoal, RaisesLowerTarget)
{
    auto s = spec_of({OutputConstraint::at_least("bw", 6e9), OutputConstraint::at_most("area", 100.0)});
    s.target = TighteningTarget{0, 0.005};
    const auto t = tighten_goal(s, 0.005);
    EXPECT_NEAR(t.constraints[0].low, 6.03e9, 1e-3);
    EXPECT_EQ(t.constraints[1].high, 100.0);
}

TEST(TightenGoal, LowersUpperTarget)
{
    auto s = spec_of({OutputConstraint::at_most("area", 80.0)});
    s.target = TighteningTarget{0, 0.05};
    EXPECT_NEAR(tighten_goal(s, 0.05).constraints[0].high, 76.0, 1e-12);
}

TEST(TightenGoal, ZeroStepAndNoTargetAreIdentity)
{
    auto s = spec_of({OutputConstraint::at_most("area", 80.0)});
    EXPECT_EQ(tighten_goal(s, 0.05).constraints[0].high, 80.0);
    s.target = TighteningTarget{0, 0.0};
    EXPECT_EQ(tighten_goal(s, 0.0).constraints[0].high, 80.0);
}

TEST(Specification, Validation)
{
    EXPECT_THROW(DesignSpecification{}.validate(), ConfigError);
    EXPECT_THROW(spec_of({OutputConstraint::within("y", 2.0, 1.0)}).validate(), ConfigError);
    auto s = spec_of({OutputConstraint::within("y", 0.0, 1.0)});
    s.target = TighteningTarget{0, 0.01};
    EXPECT_THROW(s.validate(), ConfigError);
    s.target = TighteningTarget{3, 0.01};
    EXPECT_THROW(s.validate(), ConfigError);
    auto n = spec_of({OutputConstraint::at_least("y", 0.5)});
    n.target = TighteningTarget{0, -0.1};
    EXPECT_THROW(n.validate(), ConfigError);
}

TEST(Specification, UnknownOutputRejected)
{
    SimulationLog log;
    EXPECT_THROW(FineTuner(identity_problem(), spec_of({OutputConstraint::at_least("nope", 0.5)}), small_config(), log),
                 ConfigError);
}

TEST(LeastDeviation, PicksSmallestEarliestOnTies)
{
    EXPECT_EQ(least_deviation(std::vector<double>{0.12, 0.04}), 1u);
    EXPECT_EQ(least_deviation(std::vector<double>{0.04, 0.04, 0.5}), 0u);
    EXPECT_EQ(least_deviation(std::vector<double>{infinity, 0.3, 0.3}), 1u);
}

TEST(Finetune, CoarseDesignAlreadyMeetsSpec)
{
    SimulationLog log;
    const std::vector<double> coarse{0.7};
    const auto r = run_finetune(identity_problem(), coarse, spec_of({OutputConstraint::at_least("y", 0.5)}),
                                small_config(), log);
    EXPECT_EQ(r.outcome, FinetuneOutcome::Success);
    EXPECT_EQ(log.size(), 1u);
    EXPECT_EQ(r.record.phase, "ga");
    EXPECT_EQ(r.record.seq, 0u);
}

TEST(Finetune, InitialisationCanSucceed)
{
    auto cfg = small_config();
    cfg.max_trials = 1;
    cfg.first_trial_budget = 0;
    cfg.init_samples = 10;
    SimulationLog log;
    const std::vector<double> coarse{0.4};
    const auto r = run_finetune(identity_problem(), coarse, spec_of({OutputConstraint::at_least("y", 0.5)}), cfg, log);
    EXPECT_EQ(r.outcome, FinetuneOutcome::Success);
    EXPECT_EQ(r.record.phase, "init");
    EXPECT_GE(r.record.output("y").value(), 0.5);
    EXPECT_EQ(count_phase(log, "milp_proposed") + count_phase(log, "random_fallback"), 0u);
}

TEST(Finetune, ContradictorySpecFallsBackAndReturnsBestEffort)
{
    auto cfg = small_config();
    cfg.max_trials = 1;
    SimulationLog log;
    const std::vector<double> coarse{0.5};
    const auto spec = spec_of({OutputConstraint::at_least("y", 0.8), OutputConstraint::at_most("y", 0.2)});
    const auto r = run_finetune(identity_problem(), coarse, spec, cfg, log);
    EXPECT_EQ(r.outcome, FinetuneOutcome::BestEffort);
    EXPECT_EQ(count_phase(log, "random_fallback"), cfg.first_trial_budget);
    EXPECT_EQ(count_phase(log, "milp_proposed"), 0u);
    EXPECT_EQ(log.size(), 1 + cfg.init_samples + cfg.first_trial_budget);
    for (const auto &rec : log.records())
        EXPECT_FALSE(rec.meets_spec);
}

TEST(Finetune, UnsatisfiableReturnsMinimalDeviationRecord)
{
    SimulationLog log;
    const std::vector<double> coarse{0.5};
    const auto spec = spec_of({OutputConstraint::at_least("y", 2.0)});
    const auto r = run_finetune(identity_problem(), coarse, spec, small_config(), log);
    EXPECT_EQ(r.outcome, FinetuneOutcome::BestEffort);
    double best = infinity;
    for (const auto &rec : log.records())
        best = std::min(best, *rec.deviation);
    EXPECT_EQ(*r.record.deviation, best);
    EXPECT_EQ(r.simulations, log.size());
}

TEST(Finetune, SuccessSatisfiesIntervalsExactly)
{
    SimulationLog log;
    const std::vector<double> coarse{0.2};
    const auto spec = spec_of({OutputConstraint::within("y", 0.30, 0.32)});
    auto cfg = small_config();
    cfg.first_trial_budget = 30;
    const auto r = run_finetune(identity_problem(), coarse, spec, cfg, log);
    ASSERT_EQ(r.outcome, FinetuneOutcome::Success);
    const double y = r.record.output("y").value();
    EXPECT_GE(y, 0.30);
    EXPECT_LE(y, 0.32);
    EXPECT_TRUE(r.record.meets_spec);
}

TEST(Finetune, LogCoversEverySimulation)
{
    std::size_t calls = 0;
    auto p = identity_problem();
    auto inner = p.simulate;
    p.simulate = [&calls, inner](std::span<const double> x) {
        ++calls;
        return inner(x);
    };
    SimulationLog log;
    const std::vector<double> coarse{0.5};
    run_finetune(p, coarse, spec_of({OutputConstraint::at_least("y", 2.0)}), small_config(), log);
    EXPECT_EQ(log.size(), calls);
    for (std::size_t i = 0; i < log.size(); ++i)
        EXPECT_EQ(log.records()[i].seq, i);
}

TEST(Finetune, InvalidSimulationsAreLoggedNotTrained)
{
    SimulationLog log;
    const std::vector<double> coarse{0.5};
    const auto r = run_finetune(identity_problem(0.6), coarse, spec_of({OutputConstraint::at_least("y", 0.9)}),
                                small_config(), log);
    EXPECT_EQ(r.outcome, FinetuneOutcome::BestEffort);
    std::size_t invalid = 0;
    for (const auto &rec : log.records())
        if (!rec.valid)
        {
            ++invalid;
            EXPECT_TRUE(rec.outputs.empty());
            EXPECT_FALSE(rec.deviation.has_value());
        }
    EXPECT_GT(invalid, 0u);
    EXPECT_TRUE(r.record.valid);
}

TEST(Finetune, TrialInvariants)
{
    const auto problem = identity_problem();
    const auto spec = spec_of({OutputConstraint::at_least("y", 2.0)});
    auto cfg = small_config();
    cfg.max_trials = 3;
    SimulationLog log;
    FineTuner tuner(problem, spec, cfg, log);
    const std::vector<double> coarse{0.2};
    tuner.start(coarse);
    double previous = tuner.deviation_of(log.records()[tuner.state().incumbent_record]);
    for (std::size_t t = 1; t <= cfg.max_trials; ++t)
    {
        const std::size_t before = log.size();
        EXPECT_FALSE(tuner.run_trial());
        const Box box = tuner.state().box;
        std::size_t proposals = 0;
        for (std::size_t i = before; i < log.size(); ++i)
        {
            const auto &rec = log.records()[i];
            EXPECT_EQ(rec.trial, t);
            if (rec.phase == "milp_proposed" || rec.phase == "random_fallback")
            {
                ++proposals;
                EXPECT_TRUE(box.contains(rec.input_values(), 1e-12));
            }
        }
        EXPECT_EQ(proposals, t == 1 ? cfg.first_trial_budget : cfg.later_trial_budget);
        tuner.replace_incumbent();
        const double now = tuner.deviation_of(log.records()[tuner.state().incumbent_record]);
        EXPECT_LE(now, previous);
        previous = now;
        const_cast<TrialState &>(tuner.state()).trial = t + 1;
    }
}

TEST(Finetune, LaterTrialsUseOneSobolSample)
{
    auto cfg = small_config();
    cfg.max_trials = 3;
    SimulationLog log;
    const std::vector<double> coarse{0.5};
    run_finetune(identity_problem(), coarse, spec_of({OutputConstraint::at_least("y", 2.0)}), cfg, log);
    std::array<std::size_t, 4> init{};
    for (const auto &rec : log.records())
        if (rec.phase == "init")
            ++init.at(rec.trial);
    EXPECT_EQ(init[1], cfg.init_samples);
    EXPECT_EQ(init[2], 1u);
    EXPECT_EQ(init[3], 1u);
}

TEST(Finetune, GoalTighteningKeepsBestTarget)
{
    auto spec = spec_of({OutputConstraint::at_least("y", 0.3)});
    spec.target = TighteningTarget{0, 0.2};
    auto cfg = small_config();
    cfg.max_trials = 4;
    cfg.first_trial_budget = 10;
    cfg.later_trial_budget = 10;
    SimulationLog log;
    const std::vector<double> coarse{0.25};
    const auto r = run_finetune(identity_problem(), coarse, spec, cfg, log);
    ASSERT_EQ(r.outcome, FinetuneOutcome::Success);
    EXPECT_GT(r.final_spec.constraints[0].low, 0.3);
    double best = -infinity;
    for (const auto &rec : log.records())
        if (rec.meets_spec)
            best = std::max(best, rec.output("y").value());
    EXPECT_EQ(r.record.output("y").value(), best);
}

TEST(Finetune, Deterministic)
{
    auto run = [] {
        std::ostringstream os;
        SimulationLog log(os);
        const std::vector<double> coarse{0.1};
        run_finetune(identity_problem(), coarse, spec_of({OutputConstraint::within("y", 0.30, 0.32)}),
                     small_config(9), log);
        return os.str();
    };
    const auto a = run();
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, run());
}

TEST(Finetune, CoarseOutsideLimitsRejected)
{
    SimulationLog log;
    const std::vector<double> coarse{1.5};
    EXPECT_THROW(run_finetune(identity_problem(), coarse, spec_of({OutputConstraint::at_least("y", 0.5)}),
                              small_config(), log),
                 ContractViolation);
}

TEST(Renormalize, PreservesNativeFunction)
{
    const MlpSpec spec{2, {5, 4}, 3};
    auto params = init_params(spec, 3);
    const Normalizer in_a(std::vector<Interval>{{0.0, 1.0}, {-2.0, 2.0}});
    const Normalizer in_b(std::vector<Interval>{{0.2, 0.5}, {-1.0, 3.0}});
    const Normalizer out_a(std::vector<Interval>{{0.0, 1.0}, {10.0, 20.0}, {-5.0, 5.0}});
    const Normalizer out_b(std::vector<Interval>{{-1.0, 4.0}, {12.0, 13.0}, {0.0, 1.0}});
    const SurrogateModel a{spec, params, in_a, out_a, {}, {}};
    detail::renormalize(params, in_a, in_b, out_a, out_b);
    const SurrogateModel b{spec, params, in_b, out_b, {}, {}};
    Rng rng(4);
    for (int k = 0; k < 50; ++k)
    {
        const std::vector<double> x{rng.uniform(-1.0, 2.0), rng.uniform(-3.0, 3.0)};
        const auto ya = a.predict(x), yb = b.predict(x);
        for (std::size_t j = 0; j < ya.size(); ++j)
            EXPECT_NEAR(ya[j], yb[j], 1e-9 * std::max(1.0, std::abs(ya[j])));
    }
}

TEST(Finetune, LowpassCircuitProblem)
{
    const auto b = *find_benchmark("lowpass-tune");
    const auto p = circuit_problem(*b.circuit, b.sweep, b.outputs);
    EXPECT_EQ(p.input_names, (std::vector<std::string>{"R1", "C1"}));
    const auto y = p.simulate(b.circuit->nominal());
    ASSERT_TRUE(y.has_value());
    EXPECT_NEAR((*y)[1], 1.0 / (2.0 * std::numbers::pi * 660.0 * 0.25e-6), 2.0);
    EXPECT_NEAR((*y)[0], 0.0, 1e-2);
    EXPECT_THROW(circuit_problem(*b.circuit, b.sweep, {"bogus"}), ConfigError);
}
