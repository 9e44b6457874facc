#include "psfa/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "psfa/errors.hpp"
#include "psfa/io.hpp"
#include "psfa/sfa.hpp"

namespace psfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

// sample standard deviation; a single value has std 0
MeanStd mean_std(const std::vector<double>& v)
{
    MeanStd r;
    if (v.empty())
        return r;
    r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v)
            ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

std::string fmt(double v)
{
    return format_double(v);
}

std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4e", v);
    return buf;
}

Dataset make_trig(const TrigConfig& cfg, bool distorted)
{
    Dataset ds = gen_trig(cfg);
    return distorted ? distort(ds) : ds;
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback)
{
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

TrigConfig data_from_json(const nlohmann::json& j, const TrigConfig& defaults)
{
    nlohmann::json merged = to_json(defaults);
    merged.update(j);
    if (!j.contains("step"))
        merged["step"] = 2.0 * kPi / static_cast<double>(merged.at("length").get<Index>());
    return trig_config_from_json(merged);
}

RunConfig train_from_json(const nlohmann::json& j, const RunConfig& defaults)
{
    nlohmann::json merged = to_json(defaults);
    merged.erase("network");
    merged.update(j);
    return run_config_from_json(merged);
}

nlohmann::json train_to_json(const RunConfig& cfg)
{
    nlohmann::json j = to_json(cfg);
    j.erase("network");
    return j;
}

RunConfig comparison_train_defaults()
{
    RunConfig r;
    r.epochs = 300;
    r.init = InitMode::greedy;
    return r;
}

RunConfig sweep_train_defaults()
{
    RunConfig r;
    r.epochs = 500;
    r.optimizer.lr = 5e-3;
    return r;
}

RunConfig cylinder_train_defaults()
{
    RunConfig r;
    r.loss = "graph";
    r.epochs = 1000;
    r.early_stop.enabled = false;
    r.optimizer.lr = 2e-3;
    return r;
}

} // namespace

// ---------------------------------------------------------------------------
// comparison

void ComparisonConfig::validate() const
{
    data.validate();
    if (runs < 1)
        throw ConfigError("comparison: runs must be at least 1");
    if (output_dim < 1)
        throw ConfigError("comparison: output_dim must be at least 1");
    if (architectures.empty())
        throw ConfigError("comparison: no architectures given");
    for (const auto& a : architectures)
        preset(a, data.dim, output_dim);
}

nlohmann::json to_json(const ComparisonConfig& cfg)
{
    return {{"experiment", "table1"},  {"data", to_json(cfg.data)},       {"distorted", cfg.distorted},
            {"output_dim", cfg.output_dim}, {"runs", cfg.runs},         {"architectures", cfg.architectures},
            {"train", train_to_json(cfg.train)}, {"jobs", cfg.jobs}};
}

ComparisonConfig comparison_config_from_json(const nlohmann::json& j)
{
    ComparisonConfig cfg;
    cfg.train = comparison_train_defaults();
    try {
        if (j.contains("data"))
            cfg.data = data_from_json(j.at("data"), cfg.data);
        cfg.distorted = get_or(j, "distorted", cfg.distorted);
        cfg.output_dim = get_or(j, "output_dim", cfg.output_dim);
        cfg.runs = get_or(j, "runs", cfg.runs);
        cfg.architectures = get_or(j, "architectures", cfg.architectures);
        if (j.contains("train"))
            cfg.train = train_from_json(j.at("train"), cfg.train);
        cfg.jobs = get_or(j, "jobs", cfg.jobs);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("table1 config: ") + err.what());
    }
    cfg.validate();
    return cfg;
}

ComparisonTable compare_greedy_vs_gradient(const ComparisonConfig& cfg)
{
    cfg.validate();
    const std::size_t n_arch = cfg.architectures.size();
    const auto n_runs = static_cast<std::size_t>(cfg.runs);

    std::vector<Dataset> datasets(n_runs);
    for (std::size_t r = 0; r < n_runs; ++r) {
        TrigConfig dc = cfg.data;
        dc.seed = cfg.data.seed + r;
        datasets[r] = make_trig(dc, cfg.distorted);
    }

    ComparisonTable table;
    table.runs.resize(n_arch * n_runs);
    parallel_for(table.runs.size(), cfg.jobs, [&](std::size_t k) {
        const std::size_t a = k / n_runs;
        const std::size_t r = k % n_runs;
        const Matrix& x = datasets[r].data;

        ComparisonRun& run = table.runs[k];
        run.architecture = cfg.architectures[a];
        run.run = static_cast<int>(r);
        run.data_seed = cfg.data.seed + r;
        run.model_seed = cfg.train.seed + r;

        RunConfig rc = cfg.train;
        rc.network = preset(run.architecture, x.rows(), cfg.output_dim);
        rc.normalization = Normalization::whiten;
        rc.seed = run.model_seed;
        if (rc.power_iterations < 1)
            throw ConfigError("comparison: gradient training needs whitening (power_iterations >= 1)");

        Tape tape = greedy_layerwise_init(rc.training_network(), x, rc.seed);
        const Vector greedy_delta = delta_values(tape.prefix(tape.size() - 1).apply(x));
        run.greedy_sum = greedy_delta.sum();
        run.greedy_mean = greedy_delta.mean();

        const TrainResult result = train_from(std::move(tape), rc, x, temporal_chain(x.cols()));
        run.epochs = result.report.epochs_run;
        run.diverged = result.report.diverged;
        run.seconds = result.report.seconds;
        if (!run.diverged) {
            run.gradient_sum = result.report.final.ordered_delta.sum();
            run.gradient_mean = result.report.final.ordered_delta.mean();
        } else {
            run.gradient_sum = run.gradient_mean = std::numeric_limits<double>::quiet_NaN();
        }
    });

    for (std::size_t a = 0; a < n_arch; ++a) {
        ComparisonRow row;
        row.architecture = cfg.architectures[a];
        std::vector<double> gs, gm, ts, tm;
        for (std::size_t r = 0; r < n_runs; ++r) {
            const auto& run = table.runs[a * n_runs + r];
            ++row.runs;
            gs.push_back(run.greedy_sum);
            gm.push_back(run.greedy_mean);
            if (run.diverged) {
                ++row.diverged_runs;
                continue;
            }
            ts.push_back(run.gradient_sum);
            tm.push_back(run.gradient_mean);
            if (run.gradient_sum < run.greedy_sum)
                ++row.improved_runs;
        }
        auto s = mean_std(gs);
        row.greedy_sum_mean = s.mean;
        row.greedy_sum_std = s.std;
        s = mean_std(gm);
        row.greedy_mean_mean = s.mean;
        row.greedy_mean_std = s.std;
        s = mean_std(ts);
        row.gradient_sum_mean = s.mean;
        row.gradient_sum_std = s.std;
        s = mean_std(tm);
        row.gradient_mean_mean = s.mean;
        row.gradient_mean_std = s.std;
        table.rows.push_back(row);
    }
    return table;
}

void write_comparison_text(std::ostream& out, const ComparisonTable& table)
{
    out << "slowness (delta) of the output features, mean +- std over runs\n";
    out << "architecture      runs  greedy sum              gradient sum            greedy mean             "
           "gradient mean           improved  diverged\n";
    for (const auto& r : table.rows) {
        char line[512];
        std::snprintf(line, sizeof line, "%-16s  %4d  %.4e +- %.2e   %.4e +- %.2e   %.4e +- %.2e   %.4e +- %.2e   %4d/%-4d %d\n",
                      r.architecture.c_str(), r.runs, r.greedy_sum_mean, r.greedy_sum_std, r.gradient_sum_mean,
                      r.gradient_sum_std, r.greedy_mean_mean, r.greedy_mean_std, r.gradient_mean_mean,
                      r.gradient_mean_std, r.improved_runs, r.runs, r.diverged_runs);
        out << line;
    }
}

void write_comparison_csv(std::ostream& out, const ComparisonTable& table)
{
    out << "# delta = mean squared one-step difference of a unit-variance feature (dimensionless)\n";
    out << "architecture,runs,greedy_sum_mean,greedy_sum_std,gradient_sum_mean,gradient_sum_std,"
           "greedy_mean_mean,greedy_mean_std,gradient_mean_mean,gradient_mean_std,improved_runs,diverged_runs\n";
    for (const auto& r : table.rows) {
        out << r.architecture << ',' << r.runs << ',' << fmt(r.greedy_sum_mean) << ',' << fmt(r.greedy_sum_std) << ','
            << fmt(r.gradient_sum_mean) << ',' << fmt(r.gradient_sum_std) << ',' << fmt(r.greedy_mean_mean) << ','
            << fmt(r.greedy_mean_std) << ',' << fmt(r.gradient_mean_mean) << ',' << fmt(r.gradient_mean_std) << ','
            << r.improved_runs << ',' << r.diverged_runs << '\n';
    }
}

void write_comparison_runs_csv(std::ostream& out, const ComparisonTable& table)
{
    out << "# one row per (architecture, run); seconds = wall-clock of the gradient training\n";
    out << "architecture,run,data_seed,model_seed,greedy_sum,greedy_mean,gradient_sum,gradient_mean,epochs,diverged,"
           "seconds\n";
    for (const auto& r : table.runs) {
        out << r.architecture << ',' << r.run << ',' << r.data_seed << ',' << r.model_seed << ',' << fmt(r.greedy_sum)
            << ',' << fmt(r.greedy_mean) << ',' << fmt(r.gradient_sum) << ',' << fmt(r.gradient_mean) << ','
            << r.epochs << ',' << (r.diverged ? 1 : 0) << ',' << fmt(r.seconds) << '\n';
    }
}

// ---------------------------------------------------------------------------
// sweep

void SweepConfig::validate() const
{
    data.validate();
    if (iterations.empty())
        throw ConfigError("sweep: iteration list is empty");
    for (int it : iterations)
        if (it < 0)
            throw ConfigError("sweep: iteration counts must be non-negative");
    if (trials < 1)
        throw ConfigError("sweep: trials must be at least 1");
    if (std::find(iterations.begin(), iterations.end(), baseline_iterations) == iterations.end())
        throw ConfigError("sweep: baseline_iterations must be one of the swept counts");
    if (output_dim < 1 || output_dim > data.dim)
        throw ConfigError("sweep: output_dim must lie in [1, data dim]");
}

nlohmann::json to_json(const SweepConfig& cfg)
{
    return {{"experiment", "sweep-iters"},
            {"data", to_json(cfg.data)},
            {"distorted", cfg.distorted},
            {"output_dim", cfg.output_dim},
            {"iterations", cfg.iterations},
            {"trials", cfg.trials},
            {"baseline_iterations", cfg.baseline_iterations},
            {"train", train_to_json(cfg.train)},
            {"jobs", cfg.jobs}};
}

SweepConfig sweep_config_from_json(const nlohmann::json& j)
{
    SweepConfig cfg;
    cfg.train = sweep_train_defaults();
    try {
        if (j.contains("data"))
            cfg.data = data_from_json(j.at("data"), cfg.data);
        cfg.distorted = get_or(j, "distorted", cfg.distorted);
        cfg.output_dim = get_or(j, "output_dim", cfg.output_dim);
        cfg.iterations = get_or(j, "iterations", cfg.iterations);
        cfg.trials = get_or(j, "trials", cfg.trials);
        cfg.baseline_iterations = get_or(j, "baseline_iterations", cfg.baseline_iterations);
        if (j.contains("train"))
            cfg.train = train_from_json(j.at("train"), cfg.train);
        cfg.jobs = get_or(j, "jobs", cfg.jobs);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("sweep config: ") + err.what());
    }
    cfg.validate();
    return cfg;
}

SweepTable sweep_power_iterations(const SweepConfig& cfg)
{
    cfg.validate();
    const auto n_iters = cfg.iterations.size();
    const auto n_trials = static_cast<std::size_t>(cfg.trials);

    std::vector<Dataset> datasets(n_trials);
    for (std::size_t t = 0; t < n_trials; ++t) {
        TrigConfig dc = cfg.data;
        dc.seed = cfg.data.seed + t;
        datasets[t] = make_trig(dc, cfg.distorted);
    }

    SweepTable table;
    table.cells.resize(n_iters * n_trials);
    parallel_for(table.cells.size(), cfg.jobs, [&](std::size_t k) {
        const std::size_t i = k / n_trials;
        const std::size_t t = k % n_trials;
        const Matrix& x = datasets[t].data;
        SweepCell& cell = table.cells[k];
        cell.iterations = cfg.iterations[i];
        cell.trial = static_cast<int>(t);

        RunConfig rc = cfg.train;
        rc.network = linear_preset(x.rows(), cfg.output_dim);
        rc.init = InitMode::random;
        rc.power_iterations = cell.iterations;
        rc.normalization = cell.iterations > 0 ? Normalization::whiten : Normalization::none;
        // same starting weights for every iteration count within a trial
        rc.seed = cfg.train.seed + t;

        const TrainResult result = train(rc, x, temporal_chain(x.cols()));
        cell.diverged = result.report.diverged;
        cell.epochs = result.report.epochs_run;
        if (cell.diverged)
            return;
        const auto& m = result.report.final;
        cell.delta = m.delta;
        std::sort(cell.delta.begin(), cell.delta.end());
        cell.mean_abs_offdiag_cov = m.mean_abs_offdiag_cov;
        cell.mean_abs_offdiag_corr = m.mean_abs_offdiag_corr;
        cell.min_variance = m.variance.minCoeff();
        cell.final_loss = result.report.final_loss;
    });

    // baseline: mean summed delta at the baseline iteration count
    std::vector<double> base;
    for (const auto& c : table.cells)
        if (c.iterations == cfg.baseline_iterations && !c.diverged)
            base.push_back(c.delta.sum());
    table.baseline_delta_sum = base.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_std(base).mean;

    for (auto& c : table.cells)
        c.unstable = c.diverged || (std::isfinite(table.baseline_delta_sum) && c.delta.sum() > 2.0 * table.baseline_delta_sum);

    for (std::size_t i = 0; i < n_iters; ++i) {
        SweepRow row;
        row.iterations = cfg.iterations[i];
        row.delta = Vector::Zero(cfg.output_dim);
        int ok = 0;
        for (std::size_t t = 0; t < n_trials; ++t) {
            const auto& c = table.cells[i * n_trials + t];
            ++row.trials;
            if (c.unstable)
                ++row.unstable;
            if (c.diverged) {
                ++row.diverged;
                continue;
            }
            ++ok;
            row.delta += c.delta;
            row.mean_abs_offdiag_cov += c.mean_abs_offdiag_cov;
            row.mean_abs_offdiag_corr += c.mean_abs_offdiag_corr;
        }
        if (ok > 0) {
            row.delta /= ok;
            row.mean_abs_offdiag_cov /= ok;
            row.mean_abs_offdiag_corr /= ok;
            row.delta_sum = row.delta.sum();
        } else {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            row.delta.setConstant(nan);
            row.delta_sum = row.mean_abs_offdiag_cov = row.mean_abs_offdiag_corr = nan;
        }
        table.rows.push_back(row);
    }
    return table;
}

void write_sweep_text(std::ostream& out, const SweepTable& table)
{
    out << "power iterations vs. output slowness and decorrelation (means over non-diverged trials)\n";
    out << "baseline summed delta: " << sci(table.baseline_delta_sum) << "\n";
    out << "iters  trials  diverged  unstable  delta_sum    |offdiag cov|  |offdiag corr|  delta per feature\n";
    for (const auto& r : table.rows) {
        char line[256];
        std::snprintf(line, sizeof line, "%5d  %6d  %8d  %8d  %.4e   %.4e     %.4e     ", r.iterations, r.trials,
                      r.diverged, r.unstable, r.delta_sum, r.mean_abs_offdiag_cov, r.mean_abs_offdiag_corr);
        out << line;
        for (Index k = 0; k < r.delta.size(); ++k)
            out << (k ? " " : "") << sci(r.delta(k));
        out << '\n';
    }
}

void write_sweep_csv(std::ostream& out, const SweepTable& table)
{
    const Index e = table.rows.empty() ? 0 : table.rows.front().delta.size();
    out << "# delta_k = mean squared one-step difference of feature k, sorted ascending, averaged over trials\n";
    out << "# offdiag_cov = mean |covariance| between distinct features; offdiag_corr = same for correlations\n";
    out << "iterations,trials,diverged,unstable,delta_sum,offdiag_cov,offdiag_corr";
    for (Index k = 0; k < e; ++k)
        out << ",delta_" << (k + 1);
    out << '\n';
    for (const auto& r : table.rows) {
        out << r.iterations << ',' << r.trials << ',' << r.diverged << ',' << r.unstable << ',' << fmt(r.delta_sum)
            << ',' << fmt(r.mean_abs_offdiag_cov) << ',' << fmt(r.mean_abs_offdiag_corr);
        for (Index k = 0; k < r.delta.size(); ++k)
            out << ',' << fmt(r.delta(k));
        out << '\n';
    }
}

void write_sweep_trials_csv(std::ostream& out, const SweepTable& table)
{
    out << "# one row per (iterations, trial); metrics empty for diverged trials\n";
    out << "iterations,trial,diverged,unstable,epochs,delta_sum,offdiag_cov,offdiag_corr,min_variance,final_loss\n";
    for (const auto& c : table.cells) {
        out << c.iterations << ',' << c.trial << ',' << (c.diverged ? 1 : 0) << ',' << (c.unstable ? 1 : 0) << ','
            << c.epochs << ',';
        if (c.diverged)
            out << ",,,,\n";
        else
            out << fmt(c.delta.sum()) << ',' << fmt(c.mean_abs_offdiag_cov) << ',' << fmt(c.mean_abs_offdiag_corr)
                << ',' << fmt(c.min_variance) << ',' << fmt(c.final_loss) << '\n';
    }
}

// ---------------------------------------------------------------------------
// cylinder

void CylinderConfig::validate() const
{
    if (azimuths < 1 || elevations < 1 || lightings < 1)
        throw ConfigError("cylinder: lattice sizes must be positive");
    const Index nodes = azimuths * elevations * lightings;
    if (train_size < output_dim + 1 || train_size >= nodes)
        throw ConfigError("cylinder: train_size must leave at least one test node");
    if (nuisance_dims < 0 || !(nuisance_std >= 0.0))
        throw ConfigError("cylinder: nuisance settings out of range");
    if (lift_dim < 1 || output_dim < 1)
        throw ConfigError("cylinder: lift_dim and output_dim must be positive");
    for (Index h : hidden)
        if (h < 1)
            throw ConfigError("cylinder: hidden widths must be positive");
    if (plateau_window < 1)
        throw ConfigError("cylinder: plateau_window must be positive");
}

nlohmann::json to_json(const CylinderConfig& cfg)
{
    return {{"experiment", "cylinder"},
            {"azimuths", cfg.azimuths},
            {"elevations", cfg.elevations},
            {"lightings", cfg.lightings},
            {"wrap_azimuth", cfg.wrap_azimuth},
            {"across_lighting", cfg.across_lighting},
            {"train_size", cfg.train_size},
            {"nuisance_dims", cfg.nuisance_dims},
            {"nuisance_std", cfg.nuisance_std},
            {"lift_dim", cfg.lift_dim},
            {"hidden", cfg.hidden},
            {"output_dim", cfg.output_dim},
            {"train", train_to_json(cfg.train)},
            {"plateau_window", cfg.plateau_window},
            {"seed", cfg.seed}};
}

CylinderConfig cylinder_config_from_json(const nlohmann::json& j)
{
    CylinderConfig cfg;
    cfg.train = cylinder_train_defaults();
    try {
        cfg.azimuths = get_or(j, "azimuths", cfg.azimuths);
        cfg.elevations = get_or(j, "elevations", cfg.elevations);
        cfg.lightings = get_or(j, "lightings", cfg.lightings);
        cfg.wrap_azimuth = get_or(j, "wrap_azimuth", cfg.wrap_azimuth);
        cfg.across_lighting = get_or(j, "across_lighting", cfg.across_lighting);
        cfg.train_size = get_or(j, "train_size", cfg.train_size);
        cfg.nuisance_dims = get_or(j, "nuisance_dims", cfg.nuisance_dims);
        cfg.nuisance_std = get_or(j, "nuisance_std", cfg.nuisance_std);
        cfg.lift_dim = get_or(j, "lift_dim", cfg.lift_dim);
        cfg.hidden = get_or(j, "hidden", cfg.hidden);
        cfg.output_dim = get_or(j, "output_dim", cfg.output_dim);
        if (j.contains("train"))
            cfg.train = train_from_json(j.at("train"), cfg.train);
        cfg.plateau_window = get_or(j, "plateau_window", cfg.plateau_window);
        cfg.seed = get_or(j, "seed", cfg.seed);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("cylinder config: ") + err.what());
    }
    cfg.validate();
    return cfg;
}

CylinderInputs make_cylinder_inputs(const CylinderConfig& cfg)
{
    cfg.validate();
    const Index nodes = cfg.azimuths * cfg.elevations * cfg.lightings;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    CylinderInputs in;
    in.coordinates.resize(3, nodes);
    const Index raw_dim = 4 + cfg.nuisance_dims;
    Matrix raw(raw_dim, nodes);
    auto unit = [](Index k, Index n) { return n > 1 ? 2.0 * static_cast<double>(k) / static_cast<double>(n - 1) - 1.0 : 0.0; };
    for (Index a = 0; a < cfg.azimuths; ++a) {
        for (Index e = 0; e < cfg.elevations; ++e) {
            for (Index l = 0; l < cfg.lightings; ++l) {
                const Index k = grid_index(a, e, l, cfg.elevations, cfg.lightings);
                in.coordinates.col(k) << static_cast<double>(a), static_cast<double>(e), static_cast<double>(l);
                const double angle = 2.0 * kPi * static_cast<double>(a) / static_cast<double>(cfg.azimuths);
                raw(0, k) = std::cos(angle);
                raw(1, k) = std::sin(angle);
                raw(2, k) = unit(e, cfg.elevations);
                raw(3, k) = unit(l, cfg.lightings);
            }
        }
    }
    for (Index k = 0; k < nodes; ++k)
        for (Index i = 4; i < raw_dim; ++i)
            raw(i, k) = cfg.nuisance_std * normal(rng);

    Matrix projection(cfg.lift_dim, raw_dim);
    for (Index i = 0; i < projection.size(); ++i)
        projection.data()[i] = normal(rng) / std::sqrt(static_cast<double>(raw_dim));
    Vector offset(cfg.lift_dim);
    for (Index i = 0; i < offset.size(); ++i)
        offset(i) = 0.5 * normal(rng);
    in.features = ((projection * raw).colwise() + offset).array().tanh().matrix();

    std::vector<Index> order(static_cast<std::size_t>(nodes));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    in.train_nodes.assign(order.begin(), order.begin() + cfg.train_size);
    in.test_nodes.assign(order.begin() + cfg.train_size, order.end());
    std::sort(in.train_nodes.begin(), in.train_nodes.end());
    std::sort(in.test_nodes.begin(), in.test_nodes.end());

    in.graph = grid_graph(cfg.azimuths, cfg.elevations, cfg.lightings, cfg.wrap_azimuth, cfg.across_lighting);
    return in;
}

NeighborStats neighbor_distance_stats(const Matrix& embedding, const SimilarityGraph& graph,
                                      const std::vector<Index>& nodes, std::uint64_t seed)
{
    if (embedding.cols() != graph.num_nodes())
        throw DimensionError("neighbor stats: embedding has " + std::to_string(embedding.cols()) + " columns for " +
                             std::to_string(graph.num_nodes()) + " graph nodes");
    const auto adj = graph.adjacency();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, graph.num_nodes() - 1);
    NeighborStats s;
    double sum_nb = 0.0, sum_non = 0.0;
    for (Index v : nodes) {
        const auto& nb = adj[static_cast<std::size_t>(v)];
        if (nb.empty() || static_cast<Index>(nb.size()) + 1 >= graph.num_nodes())
            continue;
        double d_nb = 0.0;
        for (Index u : nb)
            d_nb += (embedding.col(v) - embedding.col(u)).norm();
        double d_non = 0.0;
        std::size_t drawn = 0;
        while (drawn < nb.size()) {
            const Index u = pick(rng);
            if (u == v || std::find(nb.begin(), nb.end(), u) != nb.end())
                continue;
            d_non += (embedding.col(v) - embedding.col(u)).norm();
            ++drawn;
        }
        sum_nb += d_nb / static_cast<double>(nb.size());
        sum_non += d_non / static_cast<double>(nb.size());
        ++s.nodes;
    }
    if (s.nodes > 0) {
        s.neighbor_distance = sum_nb / static_cast<double>(s.nodes);
        s.non_neighbor_distance = sum_non / static_cast<double>(s.nodes);
        s.ratio = s.neighbor_distance / s.non_neighbor_distance;
    }
    return s;
}

CylinderResult run_cylinder(const CylinderConfig& cfg)
{
    cfg.validate();
    CylinderResult result;
    result.inputs = make_cylinder_inputs(cfg);
    const auto& in = result.inputs;

    Matrix x_train(in.features.rows(), static_cast<Index>(in.train_nodes.size()));
    for (std::size_t k = 0; k < in.train_nodes.size(); ++k)
        x_train.col(static_cast<Index>(k)) = in.features.col(in.train_nodes[k]);
    const SimilarityGraph train_graph = in.graph.induced(in.train_nodes);

    NetworkSpec net;
    net.input_dim = in.features.rows();
    for (Index h : cfg.hidden)
        net.linear(h).tanh();
    net.linear(cfg.output_dim);
    RunConfig rc = cfg.train;
    rc.network = net;
    rc.normalization = Normalization::whiten;
    if (rc.power_iterations < 1)
        throw ConfigError("cylinder: the embedding needs whitening (power_iterations >= 1)");
    result.network = rc.training_network();

    TrainResult trained = train(rc, x_train, train_graph);
    result.report = trained.report;
    if (trained.report.diverged)
        throw DivergenceError("cylinder training diverged: " + trained.report.divergence_message);

    FreezeResult frozen = freeze(trained.tape, x_train);
    result.frozen = frozen.embedder.whitening();
    result.train_embedding = frozen.embedder.embed(x_train);
    result.frozen_error = max_abs_diff(result.train_embedding, frozen.training_output);

    Matrix all = frozen.embedder.embed(in.features);
    result.test_embedding.resize(all.rows(), static_cast<Index>(in.test_nodes.size()));
    for (std::size_t k = 0; k < in.test_nodes.size(); ++k)
        result.test_embedding.col(static_cast<Index>(k)) = all.col(in.test_nodes[k]);
    // training columns of `all` come from the frozen map too, so distances mix both splits consistently
    result.test_stats = neighbor_distance_stats(all, in.graph, in.test_nodes, cfg.seed + 1);
    result.train_stats = neighbor_distance_stats(all, in.graph, in.train_nodes, cfg.seed + 2);
    result.loss_decreases = decreases_over_plateaus(result.report.epoch_loss, cfg.plateau_window);
    result.tape = std::move(trained.tape);
    return result;
}

void write_embedding_csv(std::ostream& out, const Matrix& embedding, const Matrix& coordinates,
                         const std::vector<Index>& nodes)
{
    if (embedding.cols() != static_cast<Index>(nodes.size()))
        throw DimensionError("embedding columns do not match the node list");
    out << "# lattice indices (azimuth, elevation, lighting) and whitened embedding coordinates (unit variance)\n";
    out << "node,azimuth,elevation,lighting";
    for (Index k = 0; k < embedding.rows(); ++k)
        out << ",y" << (k + 1);
    out << '\n';
    for (std::size_t c = 0; c < nodes.size(); ++c) {
        const Index v = nodes[c];
        out << v << ',' << coordinates(0, v) << ',' << coordinates(1, v) << ',' << coordinates(2, v);
        for (Index k = 0; k < embedding.rows(); ++k)
            out << ',' << fmt(embedding(k, static_cast<Index>(c)));
        out << '\n';
    }
}

void write_cylinder_text(std::ostream& out, const CylinderResult& r)
{
    out << "lattice nodes: " << r.inputs.graph.num_nodes() << " (train " << r.inputs.train_nodes.size() << ", test "
        << r.inputs.test_nodes.size() << "), edges " << r.inputs.graph.edges().size() << '\n';
    out << "epochs: " << r.report.epochs_run << ", loss " << sci(r.report.initial_loss) << " -> "
        << sci(r.report.final_loss) << '\n';
    out << "loss decreases over plateaus: " << (r.loss_decreases ? "yes" : "no") << '\n';
    out << "frozen map error on training points: " << sci(r.frozen_error) << '\n';
    out << "test nodes:  neighbor distance " << sci(r.test_stats.neighbor_distance) << ", non-neighbor distance "
        << sci(r.test_stats.non_neighbor_distance) << ", ratio " << sci(r.test_stats.ratio) << '\n';
    out << "train nodes: neighbor distance " << sci(r.train_stats.neighbor_distance) << ", non-neighbor distance "
        << sci(r.train_stats.non_neighbor_distance) << ", ratio " << sci(r.train_stats.ratio) << '\n';
}

// ---------------------------------------------------------------------------

void write_loss_csv(std::ostream& out, const std::vector<double>& loss)
{
    out << "# slowness loss of each training epoch (before that epoch's update)\n";
    out << "epoch,loss\n";
    for (std::size_t k = 0; k < loss.size(); ++k)
        out << k << ',' << fmt(loss[k]) << '\n';
}

namespace {

nlohmann::json metrics_json(const OutputMetrics& m)
{
    auto vec = [](const Vector& v) { return std::vector<double>(v.begin(), v.end()); };
    return {{"delta", vec(m.delta)},
            {"ordered_delta", vec(m.ordered_delta)},
            {"delta_sum", m.ordered_delta.size() ? m.ordered_delta.sum() : 0.0},
            {"variance", vec(m.variance)},
            {"max_abs_mean", m.max_abs_mean},
            {"max_cov_error", m.max_cov_error},
            {"mean_abs_offdiag_cov", m.mean_abs_offdiag_cov},
            {"mean_abs_offdiag_corr", m.mean_abs_offdiag_corr},
            {"approximately_white", m.approximately_white}};
}

} // namespace

nlohmann::json report_to_json(const TrainReport& r)
{
    nlohmann::json j;
    j["epochs_run"] = r.epochs_run;
    j["best_epoch"] = r.best_epoch;
    j["diverged"] = r.diverged;
    j["last_good_epoch"] = r.last_good_epoch;
    if (r.diverged)
        j["divergence"] = r.divergence_message;
    j["initial_loss"] = r.initial_loss;
    j["final_loss"] = r.final_loss;
    j["initial"] = metrics_json(r.initial);
    if (!r.diverged || r.final.delta.size())
        j["final"] = metrics_json(r.final);
    j["seconds"] = r.seconds;
    j["config"] = r.config;
    return j;
}

void write_report_text(std::ostream& out, const TrainReport& r)
{
    out << "epochs run: " << r.epochs_run << " (best " << r.best_epoch << ")\n";
    if (r.diverged)
        out << "DIVERGED: " << r.divergence_message << " (last good epoch " << r.last_good_epoch << ")\n";
    out << "loss: " << sci(r.initial_loss) << " -> " << sci(r.final_loss) << '\n';
    const auto& m = r.final.delta.size() ? r.final : r.initial;
    out << "delta (ordered):";
    for (Index k = 0; k < m.ordered_delta.size(); ++k)
        out << ' ' << sci(m.ordered_delta(k));
    out << "\ndelta sum: " << sci(m.ordered_delta.size() ? m.ordered_delta.sum() : 0.0) << '\n';
    out << "max |mean|: " << sci(m.max_abs_mean) << ", max |cov - I|: " << sci(m.max_cov_error)
        << ", mean |offdiag cov|: " << sci(m.mean_abs_offdiag_cov) << ", mean |offdiag corr|: "
        << sci(m.mean_abs_offdiag_corr) << '\n';
    out << "wall-clock: " << r.seconds << " s\n";
}

} // namespace psfa
