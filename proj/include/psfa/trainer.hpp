#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "psfa/diff.hpp"
#include "psfa/models.hpp"
#include "psfa/optimizer.hpp"
#include "psfa/similarity.hpp"

namespace psfa {

/// Output normalization appended to the network for training.
enum class Normalization { whiten, standardize, none };

enum class InitMode { random, greedy };

struct EarlyStop {
    bool enabled = true;
    int window = 50;
    double min_rel_improvement = 1e-3;
};

struct RunConfig {
    NetworkSpec network;
    /// "chain" for temporal similarity, "graph" for a graph supplied by the caller.
    std::string loss = "chain";
    std::string graph_file; // used by the CLI when loss == "graph"
    /// Edges per mini-batch; 0 trains on the full batch.
    std::size_t batch_edges = 0;
    int epochs = 500;
    EarlyStop early_stop;
    Normalization normalization = Normalization::whiten;
    int power_iterations = 100; // 0 disables whitening
    double eps = kDefaultWhiteningEps;
    double gamma = 0.0;
    NadamConfig optimizer;
    std::uint64_t seed = 1;
    InitMode init = InitMode::random;
    /// Restore the parameters of the lowest-loss epoch at the end.
    bool select_best = true;

    /// The network with the configured normalization node appended (if any).
    NetworkSpec training_network() const;
    bool whitening_active() const;
    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Output statistics of a features x samples matrix.
struct OutputMetrics {
    Vector delta;         // per feature, in output order
    Vector ordered_delta; // ascending, after the slowness-ordering rotation
    Vector variance;
    double max_abs_mean = 0.0;
    double max_cov_error = 0.0;       // max |cov - I|
    double mean_abs_offdiag_cov = 0.0;
    double mean_abs_offdiag_corr = 0.0;
    bool approximately_white = false;
};

OutputMetrics output_metrics(const Matrix& y);

struct TrainReport {
    std::vector<double> epoch_loss;
    int epochs_run = 0;
    int best_epoch = -1;
    bool diverged = false;
    int last_good_epoch = -1;
    std::string divergence_message;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    OutputMetrics initial;
    OutputMetrics final;
    double seconds = 0.0;
    nlohmann::json config;
};

struct TrainResult {
    Tape tape;
    TrainReport report;
    Matrix final_output; // output of the final full-data pass
};

/// Called after each epoch's forward pass with the epoch index, the batch output and its loss.
using EpochObserver = std::function<void(int epoch, const Matrix& y, double loss)>;

/// Builds the network (random or greedy closed-form init) and trains it.
TrainResult train(const RunConfig& cfg, const Matrix& x, const SimilarityGraph& graph,
                  const EpochObserver& observer = {});

/// Trains an already initialized tape (which must match cfg.training_network()).
TrainResult train_from(Tape tape, const RunConfig& cfg, const Matrix& x, const SimilarityGraph& graph,
                       const EpochObserver& observer = {});

/// Trained body with the whitening replaced by a fixed affine map: W (g(x) - mean).
class FrozenEmbedder {
public:
    FrozenEmbedder(Tape body, WhiteningState whitening);

    Matrix embed(const Matrix& x) const;
    const Tape& body() const { return body_; }
    const WhiteningState& whitening() const { return whitening_; }

private:
    Tape body_;
    WhiteningState whitening_;
};

struct FreezeResult {
    FrozenEmbedder embedder;
    Matrix training_output; // output of the full-data pass whose whitening was captured
};

/// Runs one full pass over x_train and captures its mean and whitening matrix.
FreezeResult freeze(Tape& tape, const Matrix& x_train);

/// Model file: JSON with the network spec, every parameter, and optionally a frozen whitening state.
nlohmann::json model_to_json(const Tape& tape, const NetworkSpec& spec, const WhiteningState* frozen);
void save_model(const std::string& path, const Tape& tape, const NetworkSpec& spec, const WhiteningState* frozen);

struct LoadedModel {
    NetworkSpec spec;
    Tape tape;
    bool has_frozen = false;
    WhiteningState frozen;
};
LoadedModel load_model(const std::string& path);
LoadedModel model_from_json(const nlohmann::json& j);

/// Runs fn(0..count-1) on up to `jobs` threads; results must be written by index.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

/// True when the means of consecutive windows of `window` epochs never increase.
bool decreases_over_plateaus(const std::vector<double>& loss, std::size_t window);

} // namespace psfa
