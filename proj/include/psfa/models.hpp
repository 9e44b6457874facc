#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psfa/diff.hpp"
#include "psfa/linalg.hpp"

namespace psfa {

/// Number of linear plus degree-two monomials of an e-dimensional input: e + e(e+1)/2.
std::uint64_t expanded_dim(std::uint64_t e);

/// Linear terms, then x_i x_j for i <= j in row-major order, scaled to unit norm.
/// The zero vector maps to the zero vector.
Vector quadratic_expand(const Eigen::Ref<const Vector>& x);

enum class InitKind { uniform, closed_form };

struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    Index in_dim = 0;
    Index out_dim = 0;
    InitKind init = InitKind::uniform;
    WhitenOptions whiten; // only used by whiten nodes
};

struct NetworkSpec {
    Index input_dim = 0;
    std::vector<LayerSpec> layers;

    Index output_dim() const { return layers.empty() ? input_dim : layers.back().out_dim; }

    /// Throws ConfigError when the dimension chain is inconsistent.
    void validate() const;

    /// Builder helpers; each derives in_dim from the current chain end.
    NetworkSpec& linear(Index out_dim);
    NetworkSpec& tanh();
    NetworkSpec& quadratic();
    NetworkSpec& whiten(WhitenOptions options = {});
    NetworkSpec& standardize();
};

/// "quadratic-594": in -> 33 -> 594 -> 33 -> 594 -> 33 -> 594 -> e
NetworkSpec quadratic_preset(Index input_dim = 500, Index output_dim = 6);
/// "tanh-500": in -> 500 -> tanh -> 500 -> tanh -> 500 -> tanh -> e
NetworkSpec tanh_preset(Index input_dim = 500, Index output_dim = 6);
NetworkSpec linear_preset(Index input_dim, Index output_dim);

/// Looks up "quadratic-594", "tanh-500" or "linear".
NetworkSpec preset(std::string_view name, Index input_dim, Index output_dim);

/// Tape with fan-scaled uniform weights drawn from `seed`; whiten nodes get seeds from the same stream.
Tape build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Builds the network, then solves closed-form linear SFA for each dimension-reducing linear
/// layer on its input as produced by the already initialized layers below it. Linear layers
/// that widen their input keep their random weights and act as a fixed expansion.
Tape greedy_layerwise_init(const NetworkSpec& spec, const Matrix& x, std::uint64_t seed);

nlohmann::json to_json(const NetworkSpec& spec);

/// Accepts either {"input_dim", "layers": [...]} or {"preset", "input_dim", "output_dim"}.
NetworkSpec network_spec_from_json(const nlohmann::json& j);

} // namespace psfa
