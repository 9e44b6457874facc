#include "psfa/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "psfa/errors.hpp"
#include "psfa/sfa.hpp"

namespace psfa {

// ---------------------------------------------------------------------------
// config

NetworkSpec RunConfig::training_network() const
{
    NetworkSpec spec = network;
    if (!spec.layers.empty()) {
        const auto last = spec.layers.back().kind;
        if (last == LayerKind::whiten || last == LayerKind::standardize)
            return spec;
    }
    switch (normalization) {
    case Normalization::whiten:
        if (power_iterations > 0)
            spec.whiten({power_iterations, eps, gamma, 0});
        break;
    case Normalization::standardize:
        spec.standardize();
        break;
    case Normalization::none:
        break;
    }
    return spec;
}

bool RunConfig::whitening_active() const
{
    const auto spec = training_network();
    return !spec.layers.empty() && spec.layers.back().kind == LayerKind::whiten;
}

void RunConfig::validate() const
{
    training_network().validate();
    if (epochs < 0)
        throw ConfigError("epochs must be non-negative");
    if (power_iterations < 0)
        throw ConfigError("power_iterations must be non-negative");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("gamma must lie in [0, 1)");
    if (!(eps >= 0.0))
        throw ConfigError("eps must be non-negative");
    if (!(optimizer.lr > 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.eps >= 0.0) || !(optimizer.clip >= 0.0))
        throw ConfigError("optimizer hyperparameters out of range");
    if (early_stop.enabled && (early_stop.window < 1 || !(early_stop.min_rel_improvement >= 0.0)))
        throw ConfigError("early stop window must be positive");
    if (loss != "chain" && loss != "graph")
        throw ConfigError("loss must be 'chain' or 'graph'");
    if (whitening_active() && batch_edges > 0 && batch_edges < static_cast<std::size_t>(network.output_dim()))
        throw ConfigError("mini-batch of " + std::to_string(batch_edges) + " edges cannot cover the " +
                          std::to_string(network.output_dim()) + " samples whitening needs");
}

namespace {

std::string to_string(Normalization n)
{
    switch (n) {
    case Normalization::whiten: return "whiten";
    case Normalization::standardize: return "standardize";
    case Normalization::none: return "none";
    }
    return "none";
}

Normalization normalization_from_string(const std::string& s)
{
    if (s == "whiten") return Normalization::whiten;
    if (s == "standardize") return Normalization::standardize;
    if (s == "none") return Normalization::none;
    throw ConfigError("normalization must be whiten, standardize or none; got '" + s + "'");
}

} // namespace

nlohmann::json to_json(const RunConfig& cfg)
{
    nlohmann::json j;
    j["network"] = to_json(cfg.network);
    j["loss"] = cfg.loss;
    if (!cfg.graph_file.empty())
        j["graph_file"] = cfg.graph_file;
    if (cfg.batch_edges == 0)
        j["batch"] = "full";
    else
        j["batch"] = cfg.batch_edges;
    j["epochs"] = cfg.epochs;
    j["early_stop"] = {{"enabled", cfg.early_stop.enabled},
                       {"window", cfg.early_stop.window},
                       {"min_rel_improvement", cfg.early_stop.min_rel_improvement}};
    j["normalization"] = to_string(cfg.normalization);
    j["power_iterations"] = cfg.power_iterations;
    j["eps"] = cfg.eps;
    j["gamma"] = cfg.gamma;
    j["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"clip", cfg.optimizer.clip}};
    j["seed"] = cfg.seed;
    j["init"] = cfg.init == InitMode::greedy ? "greedy" : "random";
    j["select_best"] = cfg.select_best;
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig cfg;
    try {
        if (j.contains("network"))
            cfg.network = network_spec_from_json(j.at("network"));
        cfg.loss = j.value("loss", cfg.loss);
        cfg.graph_file = j.value("graph_file", cfg.graph_file);
        if (j.contains("batch")) {
            const auto& b = j.at("batch");
            if (b.is_string()) {
                if (b.get<std::string>() != "full")
                    throw ConfigError("batch must be \"full\" or an edge count");
                cfg.batch_edges = 0;
            } else {
                cfg.batch_edges = b.get<std::size_t>();
            }
        }
        cfg.epochs = j.value("epochs", cfg.epochs);
        if (j.contains("early_stop")) {
            const auto& e = j.at("early_stop");
            cfg.early_stop.enabled = e.value("enabled", cfg.early_stop.enabled);
            cfg.early_stop.window = e.value("window", cfg.early_stop.window);
            cfg.early_stop.min_rel_improvement = e.value("min_rel_improvement", cfg.early_stop.min_rel_improvement);
        }
        cfg.normalization = normalization_from_string(j.value("normalization", std::string("whiten")));
        cfg.power_iterations = j.value("power_iterations", cfg.power_iterations);
        cfg.eps = j.value("eps", cfg.eps);
        cfg.gamma = j.value("gamma", cfg.gamma);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
            cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
            cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
            cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
            cfg.optimizer.clip = o.value("clip", cfg.optimizer.clip);
        }
        cfg.seed = j.value("seed", cfg.seed);
        const auto init = j.value("init", std::string("random"));
        if (init != "random" && init != "greedy")
            throw ConfigError("init must be 'random' or 'greedy'");
        cfg.init = init == "greedy" ? InitMode::greedy : InitMode::random;
        cfg.select_best = j.value("select_best", cfg.select_best);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("run config: ") + err.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// metrics

OutputMetrics output_metrics(const Matrix& y)
{
    OutputMetrics m;
    const Index e = y.rows();
    m.delta = delta_values(y);
    const Matrix cov = covariance(y);
    m.variance = cov.diagonal();
    m.max_abs_mean = y.rowwise().mean().cwiseAbs().maxCoeff();
    m.max_cov_error = max_abs_diff(cov, Matrix::Identity(e, e));
    if (e > 1) {
        double sum_cov = 0.0, sum_corr = 0.0;
        for (Index i = 0; i < e; ++i) {
            for (Index j = 0; j < e; ++j) {
                if (i == j)
                    continue;
                sum_cov += std::abs(cov(i, j));
                const double denom = std::sqrt(cov(i, i) * cov(j, j));
                sum_corr += denom > 0.0 ? std::abs(cov(i, j)) / denom : 0.0;
            }
        }
        const double pairs = static_cast<double>(e * (e - 1));
        m.mean_abs_offdiag_cov = sum_cov / pairs;
        m.mean_abs_offdiag_corr = sum_corr / pairs;
    }
    const auto ordering = order_by_slowness(y);
    m.ordered_delta = ordering.delta_values;
    m.approximately_white = ordering.approximately_white;
    return m;
}

// ---------------------------------------------------------------------------
// training

namespace {

Matrix gather_columns(const Matrix& x, const std::vector<Index>& cols)
{
    Matrix out(x.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.col(static_cast<Index>(k)) = x.col(cols[k]);
    return out;
}

// Full-data pass whitened with this data's own covariance; the EMA history is
// left as it was.
struct HistoryGuard {
    WhitenLayer* layer;
    bool had = false;
    Matrix saved;

    explicit HistoryGuard(WhitenLayer* w) : layer(w)
    {
        if (layer && layer->previous_covariance()) {
            had = true;
            saved = *layer->previous_covariance();
        }
        if (layer)
            layer->set_previous_covariance(std::nullopt);
    }
    ~HistoryGuard()
    {
        if (layer && had)
            layer->set_previous_covariance(std::move(saved));
    }
};

Matrix evaluation_pass(Tape& tape, const Matrix& x)
{
    HistoryGuard guard(tape.whiten_layer());
    return tape.forward(x);
}

} // namespace

TrainResult train(const RunConfig& cfg, const Matrix& x, const SimilarityGraph& graph, const EpochObserver& observer)
{
    cfg.validate();
    const NetworkSpec spec = cfg.training_network();
    Tape tape = cfg.init == InitMode::greedy ? greedy_layerwise_init(spec, x, cfg.seed) : build_network(spec, cfg.seed);
    return train_from(std::move(tape), cfg, x, graph, observer);
}

TrainResult train_from(Tape tape, const RunConfig& cfg, const Matrix& x, const SimilarityGraph& graph,
                       const EpochObserver& observer)
{
    cfg.validate();
    const auto start_time = std::chrono::steady_clock::now();
    if (graph.num_nodes() != x.cols())
        throw GraphError("similarity graph has " + std::to_string(graph.num_nodes()) + " nodes for " +
                         std::to_string(x.cols()) + " samples");
    if (tape.input_dim() != x.rows())
        throw DimensionError("network expects " + std::to_string(tape.input_dim()) + " input features, data has " +
                             std::to_string(x.rows()));

    TrainResult result;
    TrainReport& report = result.report;
    report.config = to_json(cfg);

    {
        const Matrix y0 = evaluation_pass(tape, x);
        report.initial_loss = slowness_loss(y0, graph);
        report.initial = output_metrics(y0);
    }

    std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    OptimState opt;
    opt.hyper = cfg.optimizer;
    std::vector<Matrix> best = tape.snapshot();
    double best_loss = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = 0.0;
        try {
            Matrix y, dy;
            if (cfg.batch_edges == 0) {
                y = tape.forward(x);
                loss = slowness_loss(y, graph);
                dy = loss_gradient(y, graph);
            } else {
                const EdgeBatch batch = sample_edge_batch(graph, cfg.batch_edges, batch_rng);
                y = tape.forward(gather_columns(x, batch.nodes));
                loss = slowness_loss(y, batch.graph);
                dy = loss_gradient(y, batch.graph);
            }
            if (!std::isfinite(loss) || !y.allFinite())
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
            if (observer)
                observer(epoch, y, loss);
            if (loss < best_loss) {
                best_loss = loss;
                best = tape.snapshot();
                report.best_epoch = epoch;
            }
            const GradientSet grads = tape.backward(dy);
            if (!grads.all_finite())
                throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch));
            const auto params = tape.mutable_parameters();
            nadam_step(params, opt);
        } catch (const DivergenceError& err) {
            report.diverged = true;
            report.divergence_message = err.what();
            report.last_good_epoch = epoch - 1;
            break;
        }
        report.epoch_loss.push_back(loss);
        report.epochs_run = epoch + 1;
        report.last_good_epoch = epoch;

        const auto& es = cfg.early_stop;
        const auto k = report.epoch_loss.size();
        if (es.enabled && k > static_cast<std::size_t>(es.window)) {
            const double before = report.epoch_loss[k - 1 - static_cast<std::size_t>(es.window)];
            const double recent = *std::min_element(report.epoch_loss.end() - es.window, report.epoch_loss.end());
            if (before - recent < es.min_rel_improvement * std::abs(before))
                break;
        }
    }

    if ((cfg.select_best || report.diverged) && report.best_epoch >= 0)
        tape.restore(best);

    try {
        result.final_output = evaluation_pass(tape, x);
        report.final_loss = slowness_loss(result.final_output, graph);
        if (!std::isfinite(report.final_loss) || !result.final_output.allFinite())
            throw DivergenceError("non-finite output in the final pass");
        report.final = output_metrics(result.final_output);
    } catch (const DivergenceError& err) {
        report.diverged = true;
        if (report.divergence_message.empty())
            report.divergence_message = err.what();
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    result.tape = std::move(tape);
    return result;
}

// ---------------------------------------------------------------------------
// frozen embedding

FrozenEmbedder::FrozenEmbedder(Tape body, WhiteningState whitening)
    : body_(std::move(body)), whitening_(std::move(whitening))
{
    if (whitening_.whitening.rows() != body_.output_dim() || whitening_.mean.size() != body_.output_dim())
        throw DimensionError("frozen whitening does not match the network output dimension");
}

Matrix FrozenEmbedder::embed(const Matrix& x) const
{
    return whitening_.whitening * (body_.apply(x).colwise() - whitening_.mean);
}

FreezeResult freeze(Tape& tape, const Matrix& x_train)
{
    if (!tape.whiten_layer())
        throw ContractError("freeze: the tape has no whiten node");
    Matrix out = evaluation_pass(tape, x_train);
    WhiteningState state = tape.whiten_layer()->state();
    return {FrozenEmbedder(tape.prefix(tape.size() - 1), std::move(state)), std::move(out)};
}

// ---------------------------------------------------------------------------
// model files

namespace {

nlohmann::json matrix_json(const Matrix& m)
{
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
        throw ConfigError("matrix record has inconsistent size");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index k = 0; k < cols; ++k)
            m(i, k) = data[static_cast<std::size_t>(i * cols + k)];
    return m;
}

} // namespace

nlohmann::json model_to_json(const Tape& tape, const NetworkSpec& spec, const WhiteningState* frozen)
{
    nlohmann::json j;
    j["format"] = "psfa-model-1";
    j["network"] = to_json(spec);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& p : tape.parameters())
        params[p.name] = matrix_json(*p.value);
    j["parameters"] = std::move(params);
    if (frozen) {
        nlohmann::json w;
        w["mean"] = matrix_json(frozen->mean);
        w["whitening"] = matrix_json(frozen->whitening);
        std::vector<double> values;
        Matrix vectors(frozen->whitening.rows(), static_cast<Index>(frozen->eigenpairs.size()));
        for (std::size_t k = 0; k < frozen->eigenpairs.size(); ++k) {
            values.push_back(frozen->eigenpairs[k].value);
            vectors.col(static_cast<Index>(k)) = frozen->eigenpairs[k].vector;
        }
        w["eigenvalues"] = values;
        w["eigenvectors"] = matrix_json(vectors);
        w["num_iterations"] = frozen->num_iterations;
        w["eps"] = frozen->eps;
        j["frozen_whitening"] = std::move(w);
    }
    return j;
}

void save_model(const std::string& path, const Tape& tape, const NetworkSpec& spec, const WhiteningState* frozen)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    out << model_to_json(tape, spec, frozen).dump(1) << '\n';
    if (!out)
        throw IoError("failed writing '" + path + "'");
}

LoadedModel model_from_json(const nlohmann::json& j)
{
    try {
        LoadedModel m;
        m.spec = network_spec_from_json(j.at("network"));
        m.tape = build_network(m.spec, 0);
        const auto& params = j.at("parameters");
        for (auto& p : m.tape.mutable_parameters()) {
            Matrix v = matrix_from_json(params.at(p.name));
            if (v.rows() != p.value->rows() || v.cols() != p.value->cols())
                throw ConfigError("parameter " + p.name + " has the wrong shape");
            *p.value = std::move(v);
        }
        if (j.contains("frozen_whitening")) {
            const auto& w = j.at("frozen_whitening");
            m.has_frozen = true;
            m.frozen.mean = matrix_from_json(w.at("mean"));
            m.frozen.whitening = matrix_from_json(w.at("whitening"));
            const auto values = w.at("eigenvalues").get<std::vector<double>>();
            const Matrix vectors = matrix_from_json(w.at("eigenvectors"));
            for (std::size_t k = 0; k < values.size(); ++k)
                m.frozen.eigenpairs.push_back({values[k], vectors.col(static_cast<Index>(k))});
            m.frozen.num_iterations = w.at("num_iterations").get<int>();
            m.frozen.eps = w.at("eps").get<double>();
        }
        return m;
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("model file: ") + err.what());
    }
}

LoadedModel load_model(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& err) {
        throw IoError("model file '" + path + "' is not valid JSON: " + err.what());
    }
    return model_from_json(j);
}

// ---------------------------------------------------------------------------
// helpers

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn)
{
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

bool decreases_over_plateaus(const std::vector<double>& loss, std::size_t window)
{
    if (window == 0)
        throw ConfigError("plateau window must be positive");
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t start = 0; start + window <= loss.size(); start += window) {
        double sum = 0.0;
        for (std::size_t k = start; k < start + window; ++k)
            sum += loss[k];
        const double mean = sum / static_cast<double>(window);
        if (mean > previous)
            return false;
        previous = mean;
    }
    return true;
}

} // namespace psfa
