#ifndef DISPATCH_SURROGATE_HPP
#define DISPATCH_SURROGATE_HPP

#include "dispatch/error.hpp"
#include "dispatch/rng.hpp"
#include "dispatch/sampling.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dispatch
{

// ReLU hidden layers, identity output layer.
struct MlpSpec
{
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 1;

    std::size_t layer_count() const noexcept { return hidden.size() + 1; }

    std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : hidden.at(layer - 1); }
    std::size_t fan_out(std::size_t layer) const { return layer == hidden.size() ? output_dim : hidden.at(layer); }

    void validate() const
    {
        if (input_dim < 1 || output_dim < 1)
            throw ConfigError("mlp dimensions must be >= 1");
        for (auto h : hidden)
            if (h < 1)
                throw ConfigError("mlp hidden widths must be >= 1");
    }

    friend bool operator==(const MlpSpec &, const MlpSpec &) = default;
};

// weights[i] is fan_out x fan_in; layer i maps the previous layer's output to layer i.
struct MlpParams
{
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    std::size_t layer_count() const noexcept { return weights.size(); }

    bool all_finite() const
    {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (!weights[i].allFinite() || !biases[i].allFinite())
                return false;
        return true;
    }

    friend bool operator==(const MlpParams &a, const MlpParams &b)
    {
        if (a.weights.size() != b.weights.size())
            return false;
        for (std::size_t i = 0; i < a.weights.size(); ++i)
            if (a.weights[i] != b.weights[i] || a.biases[i] != b.biases[i])
                return false;
        return true;
    }
};

inline MlpParams zero_params(const MlpSpec &spec)
{
    spec.validate();
    MlpParams p;
    for (std::size_t l = 0; l < spec.layer_count(); ++l)
    {
        p.weights.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.fan_out(l)),
                                                  static_cast<Eigen::Index>(spec.fan_in(l))));
        p.biases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.fan_out(l))));
    }
    return p;
}

// He-normal weights (variance 2/fan_in), zero biases.
inline MlpParams init_params(const MlpSpec &spec, std::uint64_t seed)
{
    MlpParams p = zero_params(spec);
    Rng rng(seed);
    for (std::size_t l = 0; l < p.layer_count(); ++l)
    {
        const double sd = std::sqrt(2.0 / static_cast<double>(spec.fan_in(l)));
        auto &w = p.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                w(r, c) = sd * rng.normal();
    }
    return p;
}

inline Eigen::VectorXd forward(const MlpParams &p, const Eigen::VectorXd &x)
{
    require(!p.weights.empty() && x.size() == p.weights.front().cols(), "forward: input dimension mismatch");
    Eigen::VectorXd a = x;
    for (std::size_t l = 0; l < p.layer_count(); ++l)
    {
        Eigen::VectorXd z = p.weights[l] * a + p.biases[l];
        a = l + 1 < p.layer_count() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
    }
    return a;
}

inline std::vector<double> forward(const MlpParams &p, std::span<const double> x)
{
    const Eigen::VectorXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd out = forward(p, in);
    return {out.data(), out.data() + out.size()};
}

// Column-per-sample training set in normalised units.
struct Dataset
{
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;

    std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.cols()); }

    static Dataset from_rows(const std::vector<std::vector<double>> &x, const std::vector<std::vector<double>> &y)
    {
        require(x.size() == y.size() && !x.empty(), "dataset: need matching, non-empty input and target rows");
        Dataset d;
        d.inputs.resize(static_cast<Eigen::Index>(x.front().size()), static_cast<Eigen::Index>(x.size()));
        d.targets.resize(static_cast<Eigen::Index>(y.front().size()), static_cast<Eigen::Index>(y.size()));
        for (std::size_t n = 0; n < x.size(); ++n)
        {
            require(x[n].size() == x.front().size() && y[n].size() == y.front().size(), "dataset: ragged rows");
            for (std::size_t i = 0; i < x[n].size(); ++i)
                d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = x[n][i];
            for (std::size_t i = 0; i < y[n].size(); ++i)
                d.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = y[n][i];
        }
        return d;
    }
};

// Mean over samples and outputs of the squared error.
inline double mse(const MlpParams &p, const Dataset &d)
{
    Eigen::MatrixXd a = d.inputs;
    for (std::size_t l = 0; l < p.layer_count(); ++l)
    {
        Eigen::MatrixXd z = (p.weights[l] * a).colwise() + p.biases[l];
        a = l + 1 < p.layer_count() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return (a - d.targets).squaredNorm() / static_cast<double>(a.size());
}

// Loss and its gradient by backpropagation.
inline double mse_gradient(const MlpParams &p, const Dataset &d, MlpParams &grad)
{
    const std::size_t layers = p.layer_count();
    std::vector<Eigen::MatrixXd> acts(layers + 1), pre(layers);
    acts[0] = d.inputs;
    for (std::size_t l = 0; l < layers; ++l)
    {
        pre[l] = (p.weights[l] * acts[l]).colwise() + p.biases[l];
        acts[l + 1] = l + 1 < layers ? Eigen::MatrixXd(pre[l].cwiseMax(0.0)) : pre[l];
    }
    const Eigen::MatrixXd diff = acts[layers] - d.targets;
    const double count = static_cast<double>(diff.size());
    Eigen::MatrixXd delta = (2.0 / count) * diff;
    grad.weights.resize(layers);
    grad.biases.resize(layers);
    for (std::size_t l = layers; l-- > 0;)
    {
        grad.weights[l] = delta * acts[l].transpose();
        grad.biases[l] = delta.rowwise().sum();
        if (l > 0)
            delta = (p.weights[l].transpose() * delta).cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    return diff.squaredNorm() / count;
}

struct TrainConfig
{
    double learning_rate = 1e-4;
    std::size_t max_iterations = 100000;
    // A step "improves" when it lowers the best loss by more than this.
    double tolerance = 1e-10;
    // Steps without improvement before the rate is halved.
    std::size_t patience = 200;
    // Halvings allowed before training stops on a plateau.
    std::size_t max_rate_reductions = 6;
    // Stop outright once the loss falls below this.
    double target_loss = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (!(learning_rate > 0.0) || max_iterations == 0 || !(tolerance >= 0.0) || patience == 0)
            throw ConfigError("train config needs positive rate, iteration budget, and patience");
    }
};

struct TrainResult
{
    MlpParams params;
    double loss = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
};

// Full-batch Adam on MSE. Returns the best-loss parameters seen.
inline TrainResult train(MlpParams params, const Dataset &data, const TrainConfig &config)
{
    config.validate();
    require(data.size() >= 1, "train: empty dataset");
    const std::size_t layers = params.layer_count();
    MlpParams m = params, v = params, grad;
    for (std::size_t l = 0; l < layers; ++l)
    {
        m.weights[l].setZero();
        m.biases[l].setZero();
        v.weights[l].setZero();
        v.biases[l].setZero();
    }
    TrainResult best;
    best.params = params;
    double rate = config.learning_rate;
    std::size_t stall = 0, reductions = 0;
    double b1t = 1.0, b2t = 1.0;
    std::size_t it = 0;
    for (; it < config.max_iterations; ++it)
    {
        const double loss = mse_gradient(params, data, grad);
        if (!std::isfinite(loss))
            throw TrainingError("training loss became non-finite");
        if (loss < best.loss - config.tolerance)
            stall = 0;
        else
            ++stall;
        if (loss < best.loss)
        {
            best.loss = loss;
            best.params = params;
        }
        if (best.loss <= config.target_loss)
            break;
        if (stall >= config.patience)
        {
            if (reductions >= config.max_rate_reductions)
                break;
            rate *= 0.5;
            ++reductions;
            stall = 0;
        }
        b1t *= config.beta1;
        b2t *= config.beta2;
        const double step = rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
        for (std::size_t l = 0; l < layers; ++l)
        {
            m.weights[l] = config.beta1 * m.weights[l] + (1.0 - config.beta1) * grad.weights[l];
            v.weights[l] = config.beta2 * v.weights[l] + (1.0 - config.beta2) * grad.weights[l].cwiseAbs2();
            params.weights[l].array() -= step * m.weights[l].array() / (v.weights[l].array().sqrt() + config.epsilon);
            m.biases[l] = config.beta1 * m.biases[l] + (1.0 - config.beta1) * grad.biases[l];
            v.biases[l] = config.beta2 * v.biases[l] + (1.0 - config.beta2) * grad.biases[l].cwiseAbs2();
            params.biases[l].array() -= step * m.biases[l].array() / (v.biases[l].array().sqrt() + config.epsilon);
        }
    }
    if (it == config.max_iterations)
    {
        const double loss = mse(params, data);
        if (!std::isfinite(loss))
            throw TrainingError("training loss became non-finite");
        if (loss < best.loss)
        {
            best.loss = loss;
            best.params = params;
        }
    }
    best.iterations = it;
    return best;
}

// Affine per-dimension map native <-> [0, 1]. No clamping.
class Normalizer
{
public:
    Normalizer() = default;

    explicit Normalizer(std::vector<Interval> ranges) : ranges_(std::move(ranges))
    {
        for (const auto &r : ranges_)
            if (!(r.high > r.low))
                throw ConfigError("normalizer range is degenerate (high <= low)");
    }

    static Normalizer from_box(const Box &box) { return Normalizer(box.dims()); }

    // Running min/max per column. A column with a single distinct value is widened to
    // [v - 0.5, v + 0.5] scaled by max(1, |v|).
    static Normalizer from_data(const std::vector<std::vector<double>> &rows)
    {
        require(!rows.empty(), "normalizer: no data");
        std::vector<Interval> r(rows.front().size(), {std::numeric_limits<double>::infinity(),
                                                      -std::numeric_limits<double>::infinity()});
        for (const auto &row : rows)
            for (std::size_t i = 0; i < r.size(); ++i)
            {
                r[i].low = std::min(r[i].low, row[i]);
                r[i].high = std::max(r[i].high, row[i]);
            }
        for (auto &x : r)
            if (!(x.high > x.low))
            {
                const double pad = 0.5 * std::max(1.0, std::abs(x.low));
                x.low -= pad;
                x.high += pad;
            }
        return Normalizer(std::move(r));
    }

    std::size_t size() const noexcept { return ranges_.size(); }
    const std::vector<Interval> &ranges() const noexcept { return ranges_; }

    double normalize(std::size_t i, double v) const { return (v - ranges_[i].low) / (ranges_[i].high - ranges_[i].low); }
    double denormalize(std::size_t i, double u) const { return ranges_[i].low + u * (ranges_[i].high - ranges_[i].low); }

    std::vector<double> normalize(std::span<const double> v) const
    {
        require(v.size() == ranges_.size(), "normalize: dimension mismatch");
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = normalize(i, v[i]);
        return out;
    }

    std::vector<double> denormalize(std::span<const double> u) const
    {
        require(u.size() == ranges_.size(), "denormalize: dimension mismatch");
        std::vector<double> out(u.size());
        for (std::size_t i = 0; i < u.size(); ++i)
            out[i] = denormalize(i, u[i]);
        return out;
    }

    friend bool operator==(const Normalizer &a, const Normalizer &b)
    {
        if (a.ranges_.size() != b.ranges_.size())
            return false;
        for (std::size_t i = 0; i < a.ranges_.size(); ++i)
            if (a.ranges_[i].low != b.ranges_[i].low || a.ranges_[i].high != b.ranges_[i].high)
                return false;
        return true;
    }

private:
    std::vector<Interval> ranges_;
};

// Trained forward model in native units.
struct SurrogateModel
{
    MlpSpec spec;
    MlpParams params;
    Normalizer input;
    Normalizer output;
    std::vector<std::string> input_names;
    std::vector<std::string> output_names;

    std::vector<double> predict(std::span<const double> native) const
    {
        return output.denormalize(forward(params, input.normalize(native)));
    }
};

namespace checkpoint
{

inline constexpr int version = 1;

inline nlohmann::ordered_json to_json(const SurrogateModel &m)
{
    using json = nlohmann::ordered_json;
    json j;
    j["format"] = "dispatch-mlp";
    j["version"] = version;
    j["spec"] = {{"input_dim", m.spec.input_dim}, {"hidden", m.spec.hidden}, {"output_dim", m.spec.output_dim}};
    auto ranges = [](const Normalizer &n) {
        json a = json::array();
        for (const auto &r : n.ranges())
            a.push_back({r.low, r.high});
        return a;
    };
    j["input_ranges"] = ranges(m.input);
    j["output_ranges"] = ranges(m.output);
    j["input_names"] = m.input_names;
    j["output_names"] = m.output_names;
    json layers = json::array();
    for (std::size_t l = 0; l < m.params.layer_count(); ++l)
    {
        const auto &w = m.params.weights[l];
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(w.size()));
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                flat.push_back(w(r, c));
        const auto &b = m.params.biases[l];
        layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weights", flat},
                          {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
    }
    j["layers"] = layers;
    return j;
}

inline SurrogateModel from_json(const nlohmann::ordered_json &j)
{
    try
    {
        if (j.at("format") != "dispatch-mlp")
            throw ParseError("not a dispatch-mlp checkpoint");
        if (j.at("version").get<int>() != version)
            throw ParseError("unsupported checkpoint version");
        SurrogateModel m;
        m.spec.input_dim = j.at("spec").at("input_dim").get<std::size_t>();
        m.spec.hidden = j.at("spec").at("hidden").get<std::vector<std::size_t>>();
        m.spec.output_dim = j.at("spec").at("output_dim").get<std::size_t>();
        m.spec.validate();
        auto ranges = [](const nlohmann::ordered_json &a) {
            std::vector<Interval> r;
            for (const auto &e : a)
                r.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
            return Normalizer(std::move(r));
        };
        m.input = ranges(j.at("input_ranges"));
        m.output = ranges(j.at("output_ranges"));
        m.input_names = j.value("input_names", std::vector<std::string>{});
        m.output_names = j.value("output_names", std::vector<std::string>{});
        m.params = zero_params(m.spec);
        const auto &layers = j.at("layers");
        if (layers.size() != m.spec.layer_count())
            throw ParseError("checkpoint layer count does not match spec");
        for (std::size_t l = 0; l < layers.size(); ++l)
        {
            auto &w = m.params.weights[l];
            const auto flat = layers[l].at("weights").get<std::vector<double>>();
            const auto bias = layers[l].at("bias").get<std::vector<double>>();
            if (layers[l].at("rows").get<Eigen::Index>() != w.rows() || layers[l].at("cols").get<Eigen::Index>() != w.cols() ||
                flat.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(w.rows()))
                throw ParseError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c)
                    w(r, c) = flat[static_cast<std::size_t>(r * w.cols() + c)];
            for (std::size_t r = 0; r < bias.size(); ++r)
                m.params.biases[l](static_cast<Eigen::Index>(r)) = bias[r];
        }
        if (m.input.size() != m.spec.input_dim || m.output.size() != m.spec.output_dim)
            throw ParseError("checkpoint normalizer sizes do not match spec");
        return m;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

inline void write(std::ostream &os, const SurrogateModel &m) { os << to_json(m).dump(1) << '\n'; }

inline SurrogateModel read(std::istream &is)
{
    nlohmann::ordered_json j;
    try
    {
        j = nlohmann::ordered_json::parse(is);
    }
    catch (const nlohmann::json::parse_error &e)
    {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return from_json(j);
}

} // namespace checkpoint

} // namespace dispatch

#endif
