#include "psfa/diff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psfa/errors.hpp"
#include "psfa/models.hpp"

namespace psfa {

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::tanh: return "tanh";
    case LayerKind::quadratic: return "quadratic";
    case LayerKind::whiten: return "whiten";
    case LayerKind::standardize: return "standardize";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name)
{
    if (name == "linear") return LayerKind::linear;
    if (name == "tanh") return LayerKind::tanh;
    if (name == "quadratic") return LayerKind::quadratic;
    if (name == "whiten") return LayerKind::whiten;
    if (name == "standardize") return LayerKind::standardize;
    throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

namespace {

void require_rows(const Matrix& x, Index rows, std::string_view who)
{
    if (x.rows() != rows)
        throw DimensionError(std::string(who) + ": expected " + std::to_string(rows) + " input rows, got " +
                             std::to_string(x.rows()));
}

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view who)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(who) + ": gradient shape " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " does not match output " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()));
}

} // namespace

// ---------------------------------------------------------------------------
// linear

LinearLayer::LinearLayer(Index in_dim, Index out_dim)
    : weight_(Matrix::Zero(out_dim, in_dim)), bias_(Matrix::Zero(out_dim, 1))
{
    if (in_dim < 1 || out_dim < 1)
        throw DimensionError("linear layer dimensions must be positive");
}

LinearLayer::LinearLayer(Matrix weight, Vector bias)
{
    set(std::move(weight), std::move(bias));
}

void LinearLayer::set(Matrix weight, Vector bias)
{
    if (weight.rows() != bias.size())
        throw DimensionError("linear layer: bias length does not match weight rows");
    if (weight_.size() != 0 && (weight.rows() != weight_.rows() || weight.cols() != weight_.cols()))
        throw DimensionError("linear layer: replacement weight has a different shape");
    weight_ = std::move(weight);
    bias_ = bias;
}

void LinearLayer::init_uniform(std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(weight_.rows() + weight_.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index j = 0; j < weight_.cols(); ++j)
        for (Index i = 0; i < weight_.rows(); ++i)
            weight_(i, j) = dist(rng);
    bias_.setZero();
}

Matrix LinearLayer::forward(const Matrix& x)
{
    require_rows(x, in_dim(), "linear");
    input_ = x;
    return apply(x);
}

Matrix LinearLayer::apply(const Matrix& x) const
{
    require_rows(x, in_dim(), "linear");
    Matrix y = weight_ * x;
    y.colwise() += bias_.col(0);
    return y;
}

Matrix LinearLayer::backward(const Matrix& dy, bool input_grad)
{
    if (dy.rows() != out_dim() || dy.cols() != input_.cols())
        throw DimensionError("linear backward: gradient shape mismatch");
    weight_grad_.noalias() = dy * input_.transpose();
    bias_grad_ = dy.rowwise().sum();
    if (!input_grad)
        return {};
    return weight_.transpose() * dy;
}

std::vector<ParamRef> LinearLayer::parameters()
{
    if (weight_grad_.size() == 0) {
        weight_grad_ = Matrix::Zero(weight_.rows(), weight_.cols());
        bias_grad_ = Matrix::Zero(bias_.rows(), 1);
    }
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

// ---------------------------------------------------------------------------
// tanh

Matrix TanhLayer::forward(const Matrix& x)
{
    output_ = apply(x);
    return output_;
}

Matrix TanhLayer::apply(const Matrix& x) const
{
    require_rows(x, dim_, "tanh");
    return x.array().tanh().matrix();
}

Matrix TanhLayer::backward(const Matrix& dy, bool input_grad)
{
    require_same_shape(dy, output_, "tanh backward");
    if (!input_grad)
        return {};
    return (dy.array() * (1.0 - output_.array().square())).matrix();
}

// ---------------------------------------------------------------------------
// quadratic expansion

QuadraticLayer::QuadraticLayer(Index dim) : dim_(dim)
{
    if (dim < 1)
        throw DimensionError("quadratic layer dimension must be positive");
}

Index QuadraticLayer::out_dim() const
{
    return static_cast<Index>(expanded_dim(static_cast<std::uint64_t>(dim_)));
}

Matrix QuadraticLayer::apply(const Matrix& x) const
{
    require_rows(x, dim_, "quadratic");
    Matrix y(out_dim(), x.cols());
    for (Index t = 0; t < x.cols(); ++t)
        y.col(t) = quadratic_expand(x.col(t));
    return y;
}

Matrix QuadraticLayer::forward(const Matrix& x)
{
    require_rows(x, dim_, "quadratic");
    input_ = x;
    const Index n = x.cols();
    output_.resize(out_dim(), n);
    norms_.resize(n);
    for (Index t = 0; t < n; ++t) {
        auto raw = output_.col(t);
        raw.head(dim_) = x.col(t);
        Index k = dim_;
        for (Index i = 0; i < dim_; ++i)
            for (Index j = i; j < dim_; ++j)
                raw(k++) = x(i, t) * x(j, t);
        const double norm = raw.norm();
        norms_(t) = norm;
        if (norm > 0.0)
            raw /= norm;
    }
    return output_;
}

Matrix QuadraticLayer::backward(const Matrix& dy, bool input_grad)
{
    require_same_shape(dy, output_, "quadratic backward");
    if (!input_grad)
        return {};
    Matrix dx = Matrix::Zero(dim_, dy.cols());
    Vector draw(out_dim());
    for (Index t = 0; t < dy.cols(); ++t) {
        const double norm = norms_(t);
        if (norm == 0.0)
            continue;
        const auto y = output_.col(t);
        draw = (dy.col(t) - y * y.dot(dy.col(t))) / norm;
        auto g = dx.col(t);
        g = draw.head(dim_);
        Index k = dim_;
        for (Index i = 0; i < dim_; ++i) {
            const double xi = input_(i, t);
            for (Index j = i; j < dim_; ++j) {
                const double d = draw(k++);
                if (i == j) {
                    g(i) += 2.0 * d * xi;
                } else {
                    g(i) += d * input_(j, t);
                    g(j) += d * xi;
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// whitening

WhitenLayer::WhitenLayer(Index dim, WhitenOptions options) : dim_(dim), options_(options), rng_(options.seed)
{
    if (dim < 1)
        throw DimensionError("whiten layer dimension must be positive");
    if (options.iterations < 1)
        throw ConfigError("whiten layer needs at least one power iteration");
    if (!(options.eps >= 0.0))
        throw ConfigError("whiten layer eps must be non-negative");
    if (!(options.gamma >= 0.0 && options.gamma < 1.0))
        throw ConfigError("whiten layer gamma must lie in [0, 1)");
}

void WhitenLayer::draw_starts()
{
    starts_.clear();
    for (Index j = 0; j < dim_; ++j)
        starts_.push_back(random_unit_vector(dim_, rng_));
}

const WhiteningState& WhitenLayer::state() const
{
    if (!has_state_)
        throw ContractError("whiten layer has not run a forward pass");
    return state_;
}

Matrix WhitenLayer::forward(const Matrix& x)
{
    require_rows(x, dim_, "whiten");
    const Index n = x.cols();
    if (n < dim_)
        throw DimensionError("whiten: batch of " + std::to_string(n) + " samples is too small; at least " +
                             std::to_string(dim_) + " are required for a full-rank covariance");

    state_.mean = row_means(x);
    centered_ = x.colwise() - state_.mean;
    Matrix cov = (centered_ * centered_.transpose()) / static_cast<double>(n);
    mixed_ = options_.gamma > 0.0 && previous_cov_.has_value();
    if (mixed_)
        cov = covariance_ema(cov, *previous_cov_, options_.gamma);

    if (!hold_ || static_cast<Index>(starts_.size()) != dim_)
        draw_starts();

    state_.eigenpairs = eigendecompose(cov, options_.iterations, starts_, &traces_);
    deflated_.clear();
    deflated_.reserve(state_.eigenpairs.size());
    deflated_.push_back(cov);
    for (std::size_t j = 0; j + 1 < state_.eigenpairs.size(); ++j)
        deflated_.push_back(deflate(deflated_.back(), state_.eigenpairs[j]));

    state_.whitening = whitening_matrix(state_.eigenpairs, options_.eps);
    state_.num_iterations = options_.iterations;
    state_.eps = options_.eps;
    has_state_ = true;

    if (!hold_ && options_.gamma > 0.0)
        previous_cov_ = cov;

    return state_.whitening * centered_;
}

Matrix WhitenLayer::apply(const Matrix& x) const
{
    require_rows(x, dim_, "whiten");
    const auto& s = state();
    return s.whitening * (x.colwise() - s.mean);
}

Matrix WhitenLayer::backward(const Matrix& dy, bool input_grad)
{
    if (!has_state_)
        throw ContractError("whiten backward without forward");
    require_same_shape(dy, centered_, "whiten backward");
    const Index n = centered_.cols();
    const auto& pairs = state_.eigenpairs;
    const std::size_t k = pairs.size();

    const Matrix d_w = dy * centered_.transpose();
    Matrix d_centered = state_.whitening.transpose() * dy;

    // W = sum_j f(l_j) u_j u_j^T with f(l) = (max(l, 0) + eps)^(-1/2)
    std::vector<double> d_value(k, 0.0);
    std::vector<Vector> d_vector(k);
    const Matrix d_w_sym = d_w + d_w.transpose();
    for (std::size_t j = 0; j < k; ++j) {
        const auto& u = pairs[j].vector;
        const double l = pairs[j].value;
        const double shifted = std::max(l, 0.0) + options_.eps;
        const double f = 1.0 / std::sqrt(shifted);
        if (l > 0.0)
            d_value[j] = -0.5 * f / shifted * u.dot(d_w * u);
        d_vector[j] = f * (d_w_sym * u);
    }

    // Reverse through deflation (A_{j+1} = A_j - l_j u_j u_j^T) and the power steps on each A_j.
    Matrix d_next = Matrix::Zero(dim_, dim_);
    for (std::size_t jj = k; jj-- > 0;) {
        const auto& u = pairs[jj].vector;
        if (jj + 1 < k) {
            d_value[jj] -= u.dot(d_next * u);
            d_vector[jj] -= pairs[jj].value * ((d_next + d_next.transpose()) * u);
        }
        Matrix d_a = d_next;
        const Matrix& a = deflated_[jj];
        const auto& trace = traces_[jj];
        const std::size_t steps = trace.norms.size();
        Vector g_u = d_vector[jj];
        // A degenerate run returns value 0 regardless of A, so only the vector path remains.
        const double g_value = trace.degenerate_step >= 0 ? 0.0 : d_value[jj];
        for (std::size_t i = steps; i-- > 0;) {
            const Vector& u_next = trace.iterates[i + 1];
            const Vector& u_prev = trace.iterates[i];
            Vector dv = (g_u - u_next * u_next.dot(g_u)) / trace.norms[i];
            if (i + 1 == steps)
                dv += g_value * u_next;
            d_a.noalias() += dv * u_prev.transpose();
            if (i > 0)
                g_u = a.transpose() * dv;
        }
        d_next = std::move(d_a);
    }

    Matrix d_cov = std::move(d_next);
    if (mixed_)
        d_cov *= (1.0 - options_.gamma);

    // cov = Xc Xc^T / n
    d_centered.noalias() += ((d_cov + d_cov.transpose()) * centered_) / static_cast<double>(n);
    if (!input_grad)
        return {};
    // Xc = X - mean(X)
    return d_centered.colwise() - d_centered.rowwise().mean();
}

// ---------------------------------------------------------------------------
// standardize

Matrix StandardizeLayer::forward(const Matrix& x)
{
    require_rows(x, dim_, "standardize");
    const auto n = static_cast<double>(x.cols());
    mean_ = row_means(x);
    const Matrix xc = x.colwise() - mean_;
    scale_ = ((xc.array().square().rowwise().sum() / n) + eps_).sqrt().inverse().matrix();
    output_ = scale_.asDiagonal() * xc;
    return output_;
}

Matrix StandardizeLayer::apply(const Matrix& x) const
{
    require_rows(x, dim_, "standardize");
    if (mean_.size() != dim_)
        throw ContractError("standardize layer has not run a forward pass");
    return scale_.asDiagonal() * (x.colwise() - mean_);
}

Matrix StandardizeLayer::backward(const Matrix& dy, bool input_grad)
{
    require_same_shape(dy, output_, "standardize backward");
    if (!input_grad)
        return {};
    const Vector mean_dy = dy.rowwise().mean();
    const Vector mean_dy_y = dy.cwiseProduct(output_).rowwise().mean();
    Matrix dx = dy.colwise() - mean_dy;
    dx -= mean_dy_y.asDiagonal() * output_;
    return scale_.asDiagonal() * dx;
}

// ---------------------------------------------------------------------------
// tape

const Matrix& GradientSet::at(std::string_view name) const
{
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name)
            return grads[i];
    throw ConfigError("no gradient for parameter '" + std::string(name) + "'");
}

bool GradientSet::all_finite() const
{
    return std::all_of(grads.begin(), grads.end(), [](const Matrix& g) { return g.allFinite(); });
}

Tape::Tape(std::vector<std::unique_ptr<Layer>> layers) : layers_(std::move(layers))
{
    validate();
}

Tape::Tape(const Tape& other) : cache_valid_(false)
{
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_)
        layers_.push_back(l->clone());
}

Tape& Tape::operator=(const Tape& other)
{
    if (this != &other) {
        Tape copy(other);
        *this = std::move(copy);
    }
    return *this;
}

void Tape::validate() const
{
    if (layers_.empty())
        throw DimensionError("tape has no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i])
            throw DimensionError("tape contains a null layer");
        if (i > 0 && layers_[i - 1]->out_dim() != layers_[i]->in_dim())
            throw DimensionError("tape layer " + std::to_string(i) + " expects " +
                                 std::to_string(layers_[i]->in_dim()) + " inputs but layer " +
                                 std::to_string(i - 1) + " produces " + std::to_string(layers_[i - 1]->out_dim()));
        const auto kind = layers_[i]->kind();
        if ((kind == LayerKind::whiten || kind == LayerKind::standardize) && i + 1 != layers_.size())
            throw DimensionError("a normalization node must be the last layer of a tape");
    }
}

Index Tape::input_dim() const
{
    return layers_.empty() ? 0 : layers_.front()->in_dim();
}

Index Tape::output_dim() const
{
    return layers_.empty() ? 0 : layers_.back()->out_dim();
}

Matrix Tape::forward(const Matrix& x)
{
    if (x.rows() != input_dim())
        throw DimensionError("tape input has " + std::to_string(x.rows()) + " rows, expected " +
                             std::to_string(input_dim()));
    if (!x.allFinite())
        throw RangeError("tape input contains non-finite values");
    cache_valid_ = false;
    if (layers_.empty()) {
        cache_valid_ = true;
        return x;
    }
    Matrix h = layers_.front()->forward(x);
    for (std::size_t i = 1; i < layers_.size(); ++i)
        h = layers_[i]->forward(h);
    cache_valid_ = true;
    return h;
}

GradientSet Tape::backward(const Matrix& dy)
{
    if (!cache_valid_)
        throw ContractError("backward called without a forward pass on the current parameters");
    Matrix g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;)
        g = layers_[i]->backward(g, i > 0);

    GradientSet out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (auto& p : layers_[i]->parameters()) {
            out.names.push_back("layer" + std::to_string(i) + "." + p.name);
            out.grads.push_back(*p.grad);
        }
    }
    return out;
}

Matrix Tape::apply(const Matrix& x) const
{
    if (x.rows() != input_dim())
        throw DimensionError("tape input has " + std::to_string(x.rows()) + " rows, expected " +
                             std::to_string(input_dim()));
    Matrix h = x;
    for (const auto& l : layers_)
        h = l->apply(h);
    return h;
}

Tape Tape::prefix(std::size_t count) const
{
    if (count > layers_.size())
        throw DimensionError("prefix longer than the tape");
    std::vector<std::unique_ptr<Layer>> copy;
    for (std::size_t i = 0; i < count; ++i)
        copy.push_back(layers_[i]->clone());
    return Tape(std::move(copy));
}

std::vector<ConstParamRef> Tape::parameters() const
{
    std::vector<ConstParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (auto& p : layers_[i]->parameters())
            out.push_back({"layer" + std::to_string(i) + "." + p.name, p.value});
    return out;
}

std::vector<ParamRef> Tape::mutable_parameters()
{
    cache_valid_ = false;
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (auto& p : layers_[i]->parameters())
            out.push_back({"layer" + std::to_string(i) + "." + p.name, p.value, p.grad});
    return out;
}

std::size_t Tape::parameter_count() const
{
    std::size_t count = 0;
    for (const auto& p : parameters())
        count += static_cast<std::size_t>(p.value->size());
    return count;
}

WhitenLayer* Tape::whiten_layer()
{
    if (layers_.empty() || layers_.back()->kind() != LayerKind::whiten)
        return nullptr;
    return static_cast<WhitenLayer*>(layers_.back().get());
}

const WhitenLayer* Tape::whiten_layer() const
{
    if (layers_.empty() || layers_.back()->kind() != LayerKind::whiten)
        return nullptr;
    return static_cast<const WhitenLayer*>(layers_.back().get());
}

bool Tape::has_normalization() const
{
    if (layers_.empty())
        return false;
    const auto kind = layers_.back()->kind();
    return kind == LayerKind::whiten || kind == LayerKind::standardize;
}

void Tape::set_hold(bool hold)
{
    if (auto* w = whiten_layer())
        w->set_hold(hold);
}

std::vector<Matrix> Tape::snapshot() const
{
    std::vector<Matrix> out;
    for (const auto& p : parameters())
        out.push_back(*p.value);
    return out;
}

void Tape::restore(const std::vector<Matrix>& values)
{
    auto params = mutable_parameters();
    if (params.size() != values.size())
        throw DimensionError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value->rows() != values[i].rows() || params[i].value->cols() != values[i].cols())
            throw DimensionError("restore: shape mismatch for " + params[i].name);
        *params[i].value = values[i];
    }
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckReport grad_check(Tape& tape, const Matrix& x, const LossFn& loss, double step, double tol,
                           double abs_floor)
{
    if (tape.parameter_count() > kGradCheckMaxParams)
        throw ConfigError("grad_check: " + std::to_string(tape.parameter_count()) +
                          " parameters exceed the exhaustive-check limit of " + std::to_string(kGradCheckMaxParams));

    const bool was_held = tape.whiten_layer() ? tape.whiten_layer()->hold() : false;
    tape.set_hold(true);

    Matrix dy;
    loss(tape.forward(x), &dy);
    const GradientSet analytic = tape.backward(dy);

    GradCheckReport report;
    report.tolerance = tol;
    auto params = tape.mutable_parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        ParamCheck check;
        check.name = params[p].name;
        Matrix& value = *params[p].value;
        const Matrix& grad = analytic.grads[p];
        for (Index i = 0; i < value.size(); ++i) {
            const double saved = value.data()[i];
            value.data()[i] = saved + step;
            const double plus = loss(tape.forward(x), nullptr);
            value.data()[i] = saved - step;
            const double minus = loss(tape.forward(x), nullptr);
            value.data()[i] = saved;

            const double numeric = (plus - minus) / (2.0 * step);
            const double a = grad.data()[i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
            check.max_abs_error = std::max(check.max_abs_error, abs_err);
            check.max_rel_error = std::max(check.max_rel_error, rel_err);
            ++check.count;
        }
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.params.push_back(std::move(check));
    }
    tape.invalidate();
    tape.set_hold(was_held);
    report.passed = report.max_rel_error < tol;
    return report;
}

} // namespace psfa
