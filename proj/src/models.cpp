#include "psfa/models.hpp"

#include <random>
#include <string>

#include "psfa/errors.hpp"
#include "psfa/sfa.hpp"

namespace psfa {

std::uint64_t expanded_dim(std::uint64_t e)
{
    return e + e * (e + 1) / 2;
}

Vector quadratic_expand(const Eigen::Ref<const Vector>& x)
{
    const Index e = x.size();
    Vector out(static_cast<Index>(expanded_dim(static_cast<std::uint64_t>(e))));
    out.head(e) = x;
    Index k = e;
    for (Index i = 0; i < e; ++i)
        for (Index j = i; j < e; ++j)
            out(k++) = x(i) * x(j);
    const double norm = out.norm();
    if (norm > 0.0)
        out /= norm;
    return out;
}

// ---------------------------------------------------------------------------
// specs

void NetworkSpec::validate() const
{
    if (input_dim < 1)
        throw ConfigError("network input dimension must be positive");
    Index dim = input_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
        if (l.in_dim != dim)
            throw ConfigError(where + " expects " + std::to_string(l.in_dim) + " inputs, chain provides " +
                              std::to_string(dim));
        switch (l.kind) {
        case LayerKind::linear:
            if (l.out_dim < 1)
                throw ConfigError(where + " needs a positive output dimension");
            break;
        case LayerKind::quadratic:
            if (static_cast<std::uint64_t>(l.out_dim) != expanded_dim(static_cast<std::uint64_t>(l.in_dim)))
                throw ConfigError(where + " must output " + std::to_string(expanded_dim(l.in_dim)) + " features");
            break;
        case LayerKind::whiten:
        case LayerKind::standardize:
            if (i + 1 != layers.size())
                throw ConfigError(where + " must be the last layer");
            [[fallthrough]];
        case LayerKind::tanh:
            if (l.out_dim != l.in_dim)
                throw ConfigError(where + " must preserve dimension");
            break;
        }
        if (l.init == InitKind::closed_form && l.kind != LayerKind::linear)
            throw ConfigError(where + " cannot use closed-form initialization");
        dim = l.out_dim;
    }
}

NetworkSpec& NetworkSpec::linear(Index out_dim)
{
    layers.push_back({LayerKind::linear, output_dim(), out_dim, InitKind::uniform, {}});
    return *this;
}

NetworkSpec& NetworkSpec::tanh()
{
    layers.push_back({LayerKind::tanh, output_dim(), output_dim(), InitKind::uniform, {}});
    return *this;
}

NetworkSpec& NetworkSpec::quadratic()
{
    const Index d = output_dim();
    layers.push_back({LayerKind::quadratic, d, static_cast<Index>(expanded_dim(static_cast<std::uint64_t>(d))),
                      InitKind::uniform, {}});
    return *this;
}

NetworkSpec& NetworkSpec::whiten(WhitenOptions options)
{
    layers.push_back({LayerKind::whiten, output_dim(), output_dim(), InitKind::uniform, options});
    return *this;
}

NetworkSpec& NetworkSpec::standardize()
{
    layers.push_back({LayerKind::standardize, output_dim(), output_dim(), InitKind::uniform, {}});
    return *this;
}

NetworkSpec quadratic_preset(Index input_dim, Index output_dim)
{
    NetworkSpec spec{input_dim, {}};
    for (int block = 0; block < 3; ++block)
        spec.linear(33).quadratic();
    spec.linear(output_dim);
    return spec;
}

NetworkSpec tanh_preset(Index input_dim, Index output_dim)
{
    NetworkSpec spec{input_dim, {}};
    for (int block = 0; block < 3; ++block)
        spec.linear(500).tanh();
    spec.linear(output_dim);
    return spec;
}

NetworkSpec linear_preset(Index input_dim, Index output_dim)
{
    NetworkSpec spec{input_dim, {}};
    spec.linear(output_dim);
    return spec;
}

NetworkSpec preset(std::string_view name, Index input_dim, Index output_dim)
{
    if (name == "quadratic-594")
        return quadratic_preset(input_dim, output_dim);
    if (name == "tanh-500")
        return tanh_preset(input_dim, output_dim);
    if (name == "linear")
        return linear_preset(input_dim, output_dim);
    throw ConfigError("unknown network preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// construction

namespace {

std::unique_ptr<Layer> make_layer(const LayerSpec& l, std::mt19937_64& rng)
{
    switch (l.kind) {
    case LayerKind::linear: {
        auto layer = std::make_unique<LinearLayer>(l.in_dim, l.out_dim);
        layer->init_uniform(rng);
        return layer;
    }
    case LayerKind::tanh:
        return std::make_unique<TanhLayer>(l.in_dim);
    case LayerKind::quadratic:
        return std::make_unique<QuadraticLayer>(l.in_dim);
    case LayerKind::whiten: {
        WhitenOptions opts = l.whiten;
        if (opts.seed == 0)
            opts.seed = rng();
        return std::make_unique<WhitenLayer>(l.in_dim, opts);
    }
    case LayerKind::standardize:
        return std::make_unique<StandardizeLayer>(l.in_dim);
    }
    throw ConfigError("unhandled layer kind");
}

} // namespace

Tape build_network(const NetworkSpec& spec, std::uint64_t seed)
{
    spec.validate();
    if (spec.layers.empty())
        throw ConfigError("network has no layers");
    std::mt19937_64 rng(seed);
    std::vector<std::unique_ptr<Layer>> layers;
    layers.reserve(spec.layers.size());
    for (const auto& l : spec.layers)
        layers.push_back(make_layer(l, rng));
    return Tape(std::move(layers));
}

Tape greedy_layerwise_init(const NetworkSpec& spec, const Matrix& x, std::uint64_t seed)
{
    Tape tape = build_network(spec, seed);
    if (x.rows() != spec.input_dim)
        throw DimensionError("greedy_layerwise_init: data has " + std::to_string(x.rows()) + " rows, network expects " +
                             std::to_string(spec.input_dim));
    Matrix h = x;
    for (std::size_t i = 0; i < tape.size(); ++i) {
        Layer& layer = tape.layer(i);
        if (layer.kind() == LayerKind::linear && layer.out_dim() <= layer.in_dim()) {
            SfaSolution sol;
            try {
                sol = closed_form_sfa(h, layer.out_dim());
            } catch (const ConditioningError& err) {
                throw ConditioningError("greedy_layerwise_init: layer " + std::to_string(i) + ": " + err.what());
            }
            auto& linear = static_cast<LinearLayer&>(layer);
            linear.set(sol.projection, -(sol.projection * sol.mean));
        }
        if (layer.kind() == LayerKind::whiten || layer.kind() == LayerKind::standardize)
            break;
        h = layer.apply(h);
    }
    tape.invalidate();
    return tape;
}

// ---------------------------------------------------------------------------
// json

nlohmann::json to_json(const NetworkSpec& spec)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json j{{"kind", std::string(to_string(l.kind))}};
        if (l.kind == LayerKind::linear) {
            j["out_dim"] = l.out_dim;
            if (l.init == InitKind::closed_form)
                j["init"] = "closed-form";
        }
        if (l.kind == LayerKind::whiten) {
            j["iterations"] = l.whiten.iterations;
            j["eps"] = l.whiten.eps;
            j["gamma"] = l.whiten.gamma;
            j["seed"] = l.whiten.seed;
        }
        layers.push_back(std::move(j));
    }
    return {{"input_dim", spec.input_dim}, {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j)
{
    try {
        if (j.contains("preset")) {
            return preset(j.at("preset").get<std::string>(), j.at("input_dim").get<Index>(),
                          j.value("output_dim", Index{6}));
        }
        NetworkSpec spec;
        spec.input_dim = j.at("input_dim").get<Index>();
        for (const auto& l : j.at("layers")) {
            const auto kind = layer_kind_from_string(l.at("kind").get<std::string>());
            switch (kind) {
            case LayerKind::linear:
                spec.linear(l.at("out_dim").get<Index>());
                if (l.value("init", std::string("uniform")) == "closed-form")
                    spec.layers.back().init = InitKind::closed_form;
                break;
            case LayerKind::tanh: spec.tanh(); break;
            case LayerKind::quadratic: spec.quadratic(); break;
            case LayerKind::standardize: spec.standardize(); break;
            case LayerKind::whiten: {
                WhitenOptions opts;
                opts.iterations = l.value("iterations", opts.iterations);
                opts.eps = l.value("eps", opts.eps);
                opts.gamma = l.value("gamma", opts.gamma);
                opts.seed = l.value("seed", opts.seed);
                spec.whiten(opts);
                break;
            }
            }
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("network spec: ") + err.what());
    }
}

} // namespace psfa
