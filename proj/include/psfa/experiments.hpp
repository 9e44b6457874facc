#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "psfa/data.hpp"
#include "psfa/trainer.hpp"

namespace psfa {

// ---------------------------------------------------------------------------
// greedy closed-form vs gradient training

struct ComparisonConfig {
    TrigConfig data{50, 20, 2000, 2.0 * 3.14159265358979323846 / 2000.0, 0.01, 1};
    bool distorted = true;
    Index output_dim = 5;
    int runs = 5;
    std::vector<std::string> architectures{"quadratic-594", "tanh-500"};
    /// Training settings; the network is replaced per architecture.
    RunConfig train;
    int jobs = 1;

    void validate() const;
};

nlohmann::json to_json(const ComparisonConfig& cfg);
ComparisonConfig comparison_config_from_json(const nlohmann::json& j);

struct ComparisonRun {
    std::string architecture;
    int run = 0;
    std::uint64_t data_seed = 0;
    std::uint64_t model_seed = 0;
    double greedy_sum = 0.0;
    double greedy_mean = 0.0;
    double gradient_sum = 0.0;
    double gradient_mean = 0.0;
    int epochs = 0;
    bool diverged = false;
    double seconds = 0.0;
};

struct ComparisonRow {
    std::string architecture;
    int runs = 0;
    double greedy_sum_mean = 0.0, greedy_sum_std = 0.0;
    double greedy_mean_mean = 0.0, greedy_mean_std = 0.0;
    double gradient_sum_mean = 0.0, gradient_sum_std = 0.0;
    double gradient_mean_mean = 0.0, gradient_mean_std = 0.0;
    int improved_runs = 0; // gradient_sum < greedy_sum
    int diverged_runs = 0;
};

struct ComparisonTable {
    std::vector<ComparisonRun> runs;
    std::vector<ComparisonRow> rows;
};

ComparisonTable compare_greedy_vs_gradient(const ComparisonConfig& cfg);

void write_comparison_text(std::ostream& out, const ComparisonTable& table);
void write_comparison_csv(std::ostream& out, const ComparisonTable& table);
void write_comparison_runs_csv(std::ostream& out, const ComparisonTable& table);

// ---------------------------------------------------------------------------
// power iteration sweep

struct SweepConfig {
    TrigConfig data{50, 20, 2000, 2.0 * 3.14159265358979323846 / 2000.0, 0.01, 1};
    bool distorted = false;
    Index output_dim = 6;
    std::vector<int> iterations{0, 1, 2, 5, 10, 20, 50, 100};
    int trials = 10;
    /// Iteration count whose mean summed delta is the instability baseline.
    int baseline_iterations = 50;
    RunConfig train; // network replaced by a linear map
    int jobs = 1;

    void validate() const;
};

nlohmann::json to_json(const SweepConfig& cfg);
SweepConfig sweep_config_from_json(const nlohmann::json& j);

struct SweepCell {
    int iterations = 0;
    int trial = 0;
    bool diverged = false;
    Vector delta; // per feature, ascending
    double mean_abs_offdiag_cov = 0.0;
    double mean_abs_offdiag_corr = 0.0;
    double min_variance = 0.0;
    double final_loss = 0.0;
    int epochs = 0;
    bool unstable = false; // diverged, or summed delta above twice the baseline
};

struct SweepRow {
    int iterations = 0;
    int trials = 0;
    int diverged = 0;
    int unstable = 0;
    Vector delta; // mean over non-diverged trials
    double delta_sum = 0.0;
    double mean_abs_offdiag_cov = 0.0;
    double mean_abs_offdiag_corr = 0.0;
};

struct SweepTable {
    std::vector<SweepCell> cells;
    std::vector<SweepRow> rows;
    double baseline_delta_sum = 0.0;
};

SweepTable sweep_power_iterations(const SweepConfig& cfg);

void write_sweep_text(std::ostream& out, const SweepTable& table);
void write_sweep_csv(std::ostream& out, const SweepTable& table);
void write_sweep_trials_csv(std::ostream& out, const SweepTable& table);

// ---------------------------------------------------------------------------
// lattice graph embedding with held-out nodes

struct CylinderConfig {
    Index azimuths = 18;
    Index elevations = 9;
    Index lightings = 6;
    bool wrap_azimuth = true;
    bool across_lighting = false;
    Index train_size = 660;
    /// Per-node nuisance coordinates appended to the lattice coordinates.
    Index nuisance_dims = 4;
    double nuisance_std = 0.3;
    /// Width of the fixed random tanh feature lift applied to the coordinates.
    Index lift_dim = 100;
    std::vector<Index> hidden{64, 64};
    Index output_dim = 3;
    RunConfig train; // network replaced by the tanh MLP above
    std::size_t plateau_window = 50;
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::json to_json(const CylinderConfig& cfg);
CylinderConfig cylinder_config_from_json(const nlohmann::json& j);

struct CylinderInputs {
    Matrix features;               // lift_dim x nodes
    Matrix coordinates;            // 3 x nodes: azimuth, elevation, lighting indices
    std::vector<Index> train_nodes; // sorted
    std::vector<Index> test_nodes;  // sorted
    SimilarityGraph graph;          // full lattice
};

CylinderInputs make_cylinder_inputs(const CylinderConfig& cfg);

struct NeighborStats {
    double neighbor_distance = 0.0;
    double non_neighbor_distance = 0.0;
    double ratio = 0.0;
    Index nodes = 0;
};

/// For each node in `nodes`: mean embedding distance to its graph neighbors and to an equal
/// number of random non-neighbors, averaged over nodes.
NeighborStats neighbor_distance_stats(const Matrix& embedding, const SimilarityGraph& graph,
                                      const std::vector<Index>& nodes, std::uint64_t seed);

struct CylinderResult {
    CylinderInputs inputs;
    TrainReport report;
    Matrix train_embedding; // output x train nodes (frozen map)
    Matrix test_embedding;
    double frozen_error = 0.0; // max |frozen(train) - final training pass|
    bool loss_decreases = false;
    NeighborStats test_stats;
    NeighborStats train_stats;
    Tape tape;
    WhiteningState frozen;
    NetworkSpec network;
};

CylinderResult run_cylinder(const CylinderConfig& cfg);

/// Columns: node azimuth elevation lighting y1..ye
void write_embedding_csv(std::ostream& out, const Matrix& embedding, const Matrix& coordinates,
                         const std::vector<Index>& nodes);
void write_cylinder_text(std::ostream& out, const CylinderResult& result);

// ---------------------------------------------------------------------------

/// Per-epoch loss as "epoch,loss" rows.
void write_loss_csv(std::ostream& out, const std::vector<double>& loss);
void write_report_text(std::ostream& out, const TrainReport& report);
nlohmann::json report_to_json(const TrainReport& report);

} // namespace psfa
