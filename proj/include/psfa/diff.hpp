#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "psfa/linalg.hpp"

namespace psfa {

enum class LayerKind { linear, tanh, quadratic, whiten, standardize };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Mutable view of one trainable tensor and its gradient slot.
struct ParamRef {
    std::string name;
    Matrix* value = nullptr;
    Matrix* grad = nullptr;
};

struct ConstParamRef {
    std::string name;
    const Matrix* value = nullptr;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual Index in_dim() const = 0;
    virtual Index out_dim() const = 0;

    /// Maps a features x samples batch and caches what backward needs.
    virtual Matrix forward(const Matrix& x) = 0;

    /// Accumulates parameter gradients into the grad slots (overwriting them) and
    /// returns dL/dx when `input_grad` is set (an empty matrix otherwise).
    virtual Matrix backward(const Matrix& dy, bool input_grad) = 0;

    /// Stateless re-application with the current parameters; touches no cache.
    virtual Matrix apply(const Matrix& x) const = 0;

    virtual std::vector<ParamRef> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

class LinearLayer final : public Layer {
public:
    LinearLayer(Index in_dim, Index out_dim);
    LinearLayer(Matrix weight, Vector bias);

    LayerKind kind() const override { return LayerKind::linear; }
    Index in_dim() const override { return weight_.cols(); }
    Index out_dim() const override { return weight_.rows(); }
    Matrix forward(const Matrix& x) override;
    Matrix backward(const Matrix& dy, bool input_grad) override;
    Matrix apply(const Matrix& x) const override;
    std::vector<ParamRef> parameters() override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LinearLayer>(*this); }

    const Matrix& weight() const { return weight_; }
    const Matrix& bias() const { return bias_; }
    void set(Matrix weight, Vector bias);

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)); zero bias.
    void init_uniform(std::mt19937_64& rng);

private:
    Matrix weight_;
    Matrix bias_; // out x 1
    Matrix weight_grad_;
    Matrix bias_grad_;
    Matrix input_;
};

class TanhLayer final : public Layer {
public:
    explicit TanhLayer(Index dim) : dim_(dim) {}

    LayerKind kind() const override { return LayerKind::tanh; }
    Index in_dim() const override { return dim_; }
    Index out_dim() const override { return dim_; }
    Matrix forward(const Matrix& x) override;
    Matrix backward(const Matrix& dy, bool input_grad) override;
    Matrix apply(const Matrix& x) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<TanhLayer>(*this); }

private:
    Index dim_;
    Matrix output_;
};

/// Degree-two monomial expansion followed by per-sample unit-norm scaling.
class QuadraticLayer final : public Layer {
public:
    explicit QuadraticLayer(Index dim);

    LayerKind kind() const override { return LayerKind::quadratic; }
    Index in_dim() const override { return dim_; }
    Index out_dim() const override;
    Matrix forward(const Matrix& x) override;
    Matrix backward(const Matrix& dy, bool input_grad) override;
    Matrix apply(const Matrix& x) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QuadraticLayer>(*this); }

private:
    Index dim_;
    Matrix input_;
    Matrix output_;
    Vector norms_;
};

struct WhitenOptions {
    int iterations = 100;
    double eps = kDefaultWhiteningEps;
    double gamma = 0.0; // covariance EMA weight on the previous batch
    std::uint64_t seed = 0;
};

/// Batch whitening: mean removal, covariance, power-iteration eigendecomposition with
/// deflation, and W = U (D + eps)^(-1/2) U^T. The backward pass runs in reverse through
/// every recorded power step and deflation; start vectors are constants.
class WhitenLayer final : public Layer {
public:
    WhitenLayer(Index dim, WhitenOptions options);

    LayerKind kind() const override { return LayerKind::whiten; }
    Index in_dim() const override { return dim_; }
    Index out_dim() const override { return dim_; }
    Matrix forward(const Matrix& x) override;
    Matrix backward(const Matrix& dy, bool input_grad) override;

    /// Applies the whitening state captured by the most recent forward pass.
    Matrix apply(const Matrix& x) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<WhitenLayer>(*this); }

    const WhitenOptions& options() const { return options_; }

    /// When held, forward reuses the previous start vectors and leaves the EMA memory alone.
    void set_hold(bool hold) { hold_ = hold; }
    bool hold() const { return hold_; }

    void set_previous_covariance(std::optional<Matrix> previous) { previous_cov_ = std::move(previous); }
    const std::optional<Matrix>& previous_covariance() const { return previous_cov_; }

    /// State of the most recent forward pass.
    const WhiteningState& state() const;

private:
    void draw_starts();

    Index dim_;
    WhitenOptions options_;
    std::mt19937_64 rng_;
    bool hold_ = false;
    std::vector<Vector> starts_;
    std::optional<Matrix> previous_cov_;

    bool has_state_ = false;
    bool mixed_ = false;
    WhiteningState state_;
    Matrix centered_;
    std::vector<Matrix> deflated_; // A_0 = mixed covariance, A_{j+1} = A_j - l_j u_j u_j^T
    std::vector<PowerIterationTrace> traces_;
};

/// Per-feature centering and variance normalization, no decorrelation.
class StandardizeLayer final : public Layer {
public:
    StandardizeLayer(Index dim, double eps = kDefaultWhiteningEps) : dim_(dim), eps_(eps) {}

    LayerKind kind() const override { return LayerKind::standardize; }
    Index in_dim() const override { return dim_; }
    Index out_dim() const override { return dim_; }
    Matrix forward(const Matrix& x) override;
    Matrix backward(const Matrix& dy, bool input_grad) override;
    Matrix apply(const Matrix& x) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<StandardizeLayer>(*this); }

private:
    Index dim_;
    double eps_;
    Vector mean_;
    Vector scale_; // 1 / sigma
    Matrix output_;
};

/// dL/dtheta for every parameter of a tape, in tape order.
struct GradientSet {
    std::vector<std::string> names;
    std::vector<Matrix> grads;

    const Matrix& at(std::string_view name) const;
    bool all_finite() const;
};

/// An ordered chain of layers. At most one normalization node (whiten or standardize),
/// and it must be last.
class Tape {
public:
    Tape() = default;
    explicit Tape(std::vector<std::unique_ptr<Layer>> layers);
    Tape(const Tape& other);
    Tape& operator=(const Tape& other);
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    Index input_dim() const;
    Index output_dim() const;
    std::size_t size() const { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }

    Matrix forward(const Matrix& x);
    GradientSet backward(const Matrix& dy);

    /// Applies the layers without caching; a whiten node uses its last captured state.
    Matrix apply(const Matrix& x) const;

    /// Copy of the first `count` layers.
    Tape prefix(std::size_t count) const;

    std::vector<ConstParamRef> parameters() const;
    /// Handing out mutable parameters marks the forward cache stale.
    std::vector<ParamRef> mutable_parameters();
    std::size_t parameter_count() const;

    bool cache_valid() const { return cache_valid_; }
    void invalidate() { cache_valid_ = false; }

    /// The trailing whiten node, or null.
    WhitenLayer* whiten_layer();
    const WhitenLayer* whiten_layer() const;
    bool has_normalization() const;

    /// Hold the whiten node's random starts and EMA memory fixed (no-op without one).
    void set_hold(bool hold);

    /// Copy of all parameters, and restore from such a copy.
    std::vector<Matrix> snapshot() const;
    void restore(const std::vector<Matrix>& values);

private:
    void validate() const;

    std::vector<std::unique_ptr<Layer>> layers_;
    bool cache_valid_ = false;
};

/// Loss on a network output; writes dL/dY into `grad` when non-null.
using LossFn = std::function<double(const Matrix& y, Matrix* grad)>;

struct ParamCheck {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Largest parameter count grad_check will accept.
inline constexpr std::size_t kGradCheckMaxParams = 10000;

/// Compares backward() against central finite differences for every parameter entry.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport grad_check(Tape& tape, const Matrix& x, const LossFn& loss, double step = 1e-4,
                           double tol = 1e-4, double abs_floor = 1e-6);

} // namespace psfa
