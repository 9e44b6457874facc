#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "psfa/data.hpp"
#include "psfa/errors.hpp"
#include "psfa/experiments.hpp"
#include "psfa/io.hpp"
#include "psfa/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace psfa::cli {

namespace {

constexpr const char* kVersion = "0.1.0";

json versions()
{
    return {{"psfa", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__},
            {"cxx", static_cast<long>(__cplusplus)}};
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& err) {
        throw ConfigError("'" + path + "' is not valid JSON: " + err.what());
    }
}

// A manifest from an earlier run can stand in for the config it echoes.
json load_config(const std::string& path)
{
    if (path.empty())
        return json::object();
    json j = read_json_file(path);
    if (j.is_object() && j.contains("command") && j.contains("config"))
        return j.at("config");
    if (!j.is_object())
        throw ConfigError("config '" + path + "' must hold a JSON object");
    return j;
}

std::string absolute(const std::string& path)
{
    return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

// Writes into a hidden sibling directory and renames it into place on commit.
class OutputDir {
public:
    OutputDir(const std::string& path, bool force) : final_(fs::absolute(path).lexically_normal()), force_(force)
    {
        if (final_.filename().empty())
            final_ = final_.parent_path();
        if (fs::exists(final_) && !force_)
            throw IoError("output directory '" + final_.string() + "' exists (use --force to replace it)");
        const auto parent = final_.parent_path();
        std::error_code ec;
        fs::create_directories(parent, ec);
        std::random_device rd;
        staging_ = parent / ("." + final_.filename().string() + ".tmp-" + std::to_string(rd()));
        if (!fs::create_directory(staging_, ec))
            throw IoError("cannot create '" + staging_.string() + "': " + ec.message());
    }

    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    ~OutputDir()
    {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    std::string file(const std::string& name)
    {
        outputs_.push_back(name);
        return (staging_ / name).string();
    }

    std::ofstream open(const std::string& name)
    {
        std::ofstream f(file(name));
        if (!f)
            throw IoError("cannot write '" + name + "' in the output directory");
        return f;
    }

    const std::vector<std::string>& outputs() const { return outputs_; }
    std::string path() const { return final_.string(); }

    void commit()
    {
        std::error_code ec;
        if (fs::exists(final_)) {
            fs::remove_all(final_, ec);
            if (ec)
                throw IoError("cannot replace '" + final_.string() + "': " + ec.message());
        }
        fs::rename(staging_, final_, ec);
        if (ec)
            throw IoError("cannot move outputs into '" + final_.string() + "': " + ec.message());
        committed_ = true;
    }

private:
    fs::path final_;
    fs::path staging_;
    bool force_;
    bool committed_ = false;
    std::vector<std::string> outputs_;
};

void write_json(OutputDir& dir, const std::string& name, const json& j)
{
    auto f = dir.open(name);
    f << j.dump(2) << '\n';
    if (!f)
        throw IoError("failed writing '" + name + "'");
}

struct Context {
    std::string command;
    std::string config_path;
    std::string out;
    bool force = false;
    std::ostream* out_stream = nullptr;
    std::ostream* err_stream = nullptr;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

void finish(OutputDir& dir, const Context& ctx, const json& config, std::uint64_t seed, json extra = json::object())
{
    json m;
    m["command"] = ctx.command;
    m["config"] = config;
    m["seed"] = seed;
    m["versions"] = versions();
    m["started"] = utc_now();
    m["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
    m["outputs"] = dir.outputs();
    for (auto& [k, v] : extra.items())
        m[k] = v;
    write_json(dir, "manifest.json", m);
    dir.commit();
    *ctx.out_stream << "wrote " << dir.path() << '\n';
}

// ---------------------------------------------------------------------------

int cmd_generate(const Context& ctx)
{
    json cfg = load_config(ctx.config_path);
    const std::string kind = cfg.value("kind", std::string("trig"));
    OutputDir dir(ctx.out, ctx.force);
    std::uint64_t seed = 0;
    if (kind == "trig") {
        json data_cfg = cfg;
        for (const char* k : {"kind", "distort", "binary", "chain_graph"})
            data_cfg.erase(k);
        const TrigConfig tc = trig_config_from_json(data_cfg);
        Dataset ds = gen_trig(tc);
        if (cfg.value("distort", false))
            ds = distort(ds);
        const bool binary = cfg.value("binary", false);
        save_dataset(dir.file(binary ? "dataset.bin" : "dataset.txt"), ds, binary);
        if (cfg.value("chain_graph", false))
            save_graph(dir.file("graph.txt"), temporal_chain(ds.length()));
        seed = tc.seed;
        json echo = to_json(tc);
        echo["kind"] = "trig";
        echo["distort"] = cfg.value("distort", false);
        echo["binary"] = binary;
        echo["chain_graph"] = cfg.value("chain_graph", false);
        cfg = echo;
    } else if (kind == "grid") {
        const auto az = cfg.value("azimuths", Index{18});
        const auto el = cfg.value("elevations", Index{9});
        const auto li = cfg.value("lightings", Index{6});
        const bool wrap = cfg.value("wrap_azimuth", true);
        const bool across = cfg.value("across_lighting", false);
        save_graph(dir.file("graph.txt"), grid_graph(az, el, li, wrap, across));
        cfg = {{"kind", "grid"}, {"azimuths", az}, {"elevations", el}, {"lightings", li},
               {"wrap_azimuth", wrap}, {"across_lighting", across}};
    } else {
        throw ConfigError("generate: kind must be 'trig' or 'grid'");
    }
    finish(dir, ctx, cfg, seed);
    return kOk;
}

int cmd_train(const Context& ctx, const std::string& data_override, const std::string& graph_override)
{
    json cfg = load_config(ctx.config_path);
    if (!data_override.empty())
        cfg["data"] = data_override;
    if (!graph_override.empty()) {
        cfg["graph_file"] = graph_override;
        cfg["loss"] = "graph";
    }
    if (!cfg.contains("data"))
        throw ConfigError("train: no dataset given (config key 'data' or --data)");
    cfg["data"] = absolute(cfg.at("data").get<std::string>());
    if (cfg.contains("graph_file"))
        cfg["graph_file"] = absolute(cfg.at("graph_file").get<std::string>());

    RunConfig rc = run_config_from_json(cfg);
    const Dataset ds = load_dataset(cfg.at("data").get<std::string>());
    if (rc.network.input_dim == 0)
        throw ConfigError("train: config needs a 'network'");
    SimilarityGraph graph;
    if (rc.loss == "graph") {
        if (rc.graph_file.empty())
            throw ConfigError("train: loss 'graph' needs 'graph_file'");
        graph = load_graph(rc.graph_file);
    } else {
        graph = temporal_chain(ds.length());
    }

    OutputDir dir(ctx.out, ctx.force);
    TrainResult result = train(rc, ds.data, graph);
    const NetworkSpec spec = rc.training_network();
    if (result.report.diverged) {
        write_json(dir, "report.json", report_to_json(result.report));
        finish(dir, ctx, cfg, rc.seed);
        throw DivergenceError(result.report.divergence_message);
    }
    if (rc.whitening_active()) {
        FreezeResult fr = freeze(result.tape, ds.data);
        save_model(dir.file("model.json"), result.tape, spec, &fr.embedder.whitening());
    } else {
        save_model(dir.file("model.json"), result.tape, spec, nullptr);
    }
    json echo = to_json(rc);
    echo["data"] = cfg.at("data");
    write_json(dir, "report.json", report_to_json(result.report));
    {
        auto f = dir.open("report.txt");
        write_report_text(f, result.report);
    }
    {
        auto f = dir.open("loss.csv");
        write_loss_csv(f, result.report.epoch_loss);
    }
    write_report_text(*ctx.out_stream, result.report);
    if (rc.whitening_active() && !result.report.final.approximately_white)
        *ctx.err_stream << "warning: final output is not white (max |cov - I| "
                        << result.report.final.max_cov_error
                        << "); the network has shrunk below the whitening eps, try a smaller gamma or eps\n";
    finish(dir, ctx, echo, rc.seed);
    return kOk;
}

Matrix model_output(LoadedModel& model, const Matrix& x, bool batch_whitening)
{
    if (model.has_frozen && !batch_whitening) {
        const FrozenEmbedder emb(model.tape.prefix(model.tape.size() - 1), model.frozen);
        return emb.embed(x);
    }
    return model.tape.forward(x);
}

int cmd_evaluate(const Context& ctx, const std::string& model_path, const std::string& data_path,
                 const std::string& graph_path, bool batch_whitening)
{
    LoadedModel model = load_model(model_path);
    const Dataset ds = load_dataset(data_path);
    const SimilarityGraph graph = graph_path.empty() ? temporal_chain(ds.length()) : load_graph(graph_path);
    const Matrix y = model_output(model, ds.data, batch_whitening);
    const OutputMetrics m = output_metrics(y);
    TrainReport r;
    r.initial = m;
    r.final = m;
    r.initial_loss = r.final_loss = slowness_loss(y, graph);
    json j = report_to_json(r);
    j.erase("initial");
    j.erase("initial_loss");
    j.erase("config");
    j.erase("epochs_run");
    j.erase("best_epoch");
    j.erase("last_good_epoch");
    j.erase("seconds");
    j.erase("diverged");
    j["loss"] = j.at("final_loss");
    j.erase("final_loss");
    j["whitening"] = model.has_frozen && !batch_whitening ? "frozen" : "batch";
    *ctx.out_stream << j.dump(2) << '\n';
    if (!ctx.out.empty()) {
        OutputDir dir(ctx.out, ctx.force);
        write_json(dir, "metrics.json", j);
        const json cfg = {{"model", absolute(model_path)},
                          {"data", absolute(data_path)},
                          {"graph", absolute(graph_path)},
                          {"batch_whitening", batch_whitening}};
        finish(dir, ctx, cfg, 0);
    }
    return kOk;
}

int cmd_embed(const Context& ctx, const std::string& model_path, const std::string& data_path)
{
    LoadedModel model = load_model(model_path);
    if (model.tape.whiten_layer() && !model.has_frozen)
        throw ConfigError("embed: model has a whiten node but no frozen whitening state");
    const Dataset ds = load_dataset(data_path);
    Matrix y;
    if (model.has_frozen)
        y = FrozenEmbedder(model.tape.prefix(model.tape.size() - 1), model.frozen).embed(ds.data);
    else
        y = model.tape.apply(ds.data);
    OutputDir dir(ctx.out, ctx.force);
    {
        auto f = dir.open("embedding.csv");
        f << "# one row per input sample; y_k = output feature k\n";
        f << "sample";
        for (Index k = 0; k < y.rows(); ++k)
            f << ",y" << (k + 1);
        f << '\n';
        for (Index c = 0; c < y.cols(); ++c) {
            f << c;
            for (Index k = 0; k < y.rows(); ++k)
                f << ',' << format_double(y(k, c));
            f << '\n';
        }
    }
    finish(dir, ctx, {{"model", absolute(model_path)}, {"data", absolute(data_path)}}, 0);
    return kOk;
}

int cmd_sweep(const Context& ctx, int jobs)
{
    json raw = load_config(ctx.config_path);
    if (jobs > 0)
        raw["jobs"] = jobs;
    const SweepConfig cfg = sweep_config_from_json(raw);
    OutputDir dir(ctx.out, ctx.force);
    const SweepTable table = sweep_power_iterations(cfg);
    {
        auto f = dir.open("sweep.txt");
        write_sweep_text(f, table);
    }
    {
        auto f = dir.open("sweep.csv");
        write_sweep_csv(f, table);
    }
    {
        auto f = dir.open("sweep_trials.csv");
        write_sweep_trials_csv(f, table);
    }
    write_sweep_text(*ctx.out_stream, table);
    finish(dir, ctx, to_json(cfg), cfg.train.seed);
    return kOk;
}

int cmd_table1(const Context& ctx, int jobs)
{
    json raw = load_config(ctx.config_path);
    if (jobs > 0)
        raw["jobs"] = jobs;
    const ComparisonConfig cfg = comparison_config_from_json(raw);
    OutputDir dir(ctx.out, ctx.force);
    const ComparisonTable table = compare_greedy_vs_gradient(cfg);
    {
        auto f = dir.open("table1.txt");
        write_comparison_text(f, table);
    }
    {
        auto f = dir.open("table1.csv");
        write_comparison_csv(f, table);
    }
    {
        auto f = dir.open("table1_runs.csv");
        write_comparison_runs_csv(f, table);
    }
    write_comparison_text(*ctx.out_stream, table);
    finish(dir, ctx, to_json(cfg), cfg.train.seed);
    return kOk;
}

int cmd_cylinder(const Context& ctx)
{
    const CylinderConfig cfg = cylinder_config_from_json(load_config(ctx.config_path));
    OutputDir dir(ctx.out, ctx.force);
    const CylinderResult r = run_cylinder(cfg);
    {
        auto f = dir.open("embedding_train.csv");
        write_embedding_csv(f, r.train_embedding, r.inputs.coordinates, r.inputs.train_nodes);
    }
    {
        auto f = dir.open("embedding_test.csv");
        write_embedding_csv(f, r.test_embedding, r.inputs.coordinates, r.inputs.test_nodes);
    }
    {
        auto f = dir.open("loss.csv");
        write_loss_csv(f, r.report.epoch_loss);
    }
    {
        auto f = dir.open("cylinder.txt");
        write_cylinder_text(f, r);
    }
    save_graph(dir.file("graph.txt"), r.inputs.graph);
    save_model(dir.file("model.json"), r.tape, r.network, &r.frozen);
    const json stats = {{"test", {{"neighbor_distance", r.test_stats.neighbor_distance},
                                  {"non_neighbor_distance", r.test_stats.non_neighbor_distance},
                                  {"ratio", r.test_stats.ratio},
                                  {"nodes", r.test_stats.nodes}}},
                        {"train", {{"neighbor_distance", r.train_stats.neighbor_distance},
                                   {"non_neighbor_distance", r.train_stats.non_neighbor_distance},
                                   {"ratio", r.train_stats.ratio},
                                   {"nodes", r.train_stats.nodes}}},
                        {"frozen_error", r.frozen_error},
                        {"loss_decreases", r.loss_decreases},
                        {"report", report_to_json(r.report)}};
    write_json(dir, "stats.json", stats);
    write_cylinder_text(*ctx.out_stream, r);
    finish(dir, ctx, to_json(cfg), cfg.seed);
    return kOk;
}

int cmd_gradcheck(const Context& ctx)
{
    const json cfg = load_config(ctx.config_path);
    NetworkSpec spec;
    if (cfg.contains("network")) {
        spec = network_spec_from_json(cfg.at("network"));
    } else {
        spec.input_dim = 5;
        spec.linear(5).tanh().whiten({30, kDefaultWhiteningEps, 0.0, 0});
    }
    const auto samples = cfg.value("samples", Index{40});
    const auto seed = cfg.value("seed", std::uint64_t{1});
    const double step = cfg.value("step", 1e-4);
    const double tol = cfg.value("tolerance", 1e-4);
    const double floor = cfg.value("abs_floor", 1e-6);
    if (samples < 2)
        throw ConfigError("gradcheck: samples must be at least 2");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(spec.input_dim, samples);
    for (Index i = 0; i < x.size(); ++i)
        x.data()[i] = normal(rng);
    Tape tape = build_network(spec, seed + 1);
    const SimilarityGraph graph = temporal_chain(samples);
    const GradCheckReport rep = grad_check(tape, x, make_slowness_loss(graph), step, tol, floor);

    json j;
    j["passed"] = rep.passed;
    j["max_rel_error"] = rep.max_rel_error;
    j["tolerance"] = rep.tolerance;
    for (const auto& p : rep.params)
        j["params"].push_back(
            {{"name", p.name}, {"entries", p.count}, {"max_rel_error", p.max_rel_error}, {"max_abs_error", p.max_abs_error}});
    for (const auto& p : rep.params)
        *ctx.out_stream << p.name << ": " << p.count << " entries, max rel error " << p.max_rel_error << '\n';
    *ctx.out_stream << (rep.passed ? "PASS" : "FAIL") << " max rel error " << rep.max_rel_error << " (tolerance "
                    << rep.tolerance << ")\n";
    if (!ctx.out.empty()) {
        OutputDir dir(ctx.out, ctx.force);
        write_json(dir, "gradcheck.json", j);
        const json echo = {{"network", to_json(spec)}, {"samples", samples}, {"seed", seed},
                           {"step", step}, {"tolerance", tol}, {"abs_floor", floor}};
        finish(dir, ctx, echo, seed);
    }
    return rep.passed ? kOk : kNumericError;
}

} // namespace

int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Slow feature analysis with differentiable power-iteration whitening"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Context ctx;
    ctx.out_stream = &out;
    ctx.err_stream = &err;
    int jobs = 0;
    std::string model_path, data_path, graph_path;
    bool batch_whitening = false;

    auto add_common = [&](CLI::App* sub, bool config_required, bool out_required) {
        auto* c = sub->add_option("-c,--config", ctx.config_path, "JSON config file (or a manifest.json)");
        if (config_required)
            c->required();
        auto* o = sub->add_option("-o,--out", ctx.out, "output directory (created atomically)");
        if (out_required)
            o->required();
        sub->add_flag("-f,--force", ctx.force, "replace an existing output directory");
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic dataset or a lattice graph");
    add_common(generate, true, true);

    auto* train_cmd = app.add_subcommand("train", "train a network and write model, report and loss curve");
    add_common(train_cmd, true, true);
    train_cmd->add_option("--data", data_path, "dataset file (overrides the config)");
    train_cmd->add_option("--graph", graph_path, "similarity graph file (overrides the config)");

    auto* evaluate = app.add_subcommand("evaluate", "slowness and covariance metrics of a saved model");
    evaluate->add_option("-m,--model", model_path, "model.json")->required();
    evaluate->add_option("--data", data_path, "dataset file")->required();
    evaluate->add_option("--graph", graph_path, "similarity graph (temporal chain if omitted)");
    evaluate->add_flag("--batch-whitening", batch_whitening, "whiten on this dataset instead of the frozen state");
    evaluate->add_option("-o,--out", ctx.out, "also write metrics.json here");
    evaluate->add_flag("-f,--force", ctx.force, "replace an existing output directory");

    auto* embed = app.add_subcommand("embed", "embed a dataset with a frozen model");
    embed->add_option("-m,--model", model_path, "model.json")->required();
    embed->add_option("--data", data_path, "dataset file")->required();
    embed->add_option("-o,--out", ctx.out, "output directory")->required();
    embed->add_flag("-f,--force", ctx.force, "replace an existing output directory");

    auto* sweep = app.add_subcommand("sweep-iters", "power-iteration count sweep");
    add_common(sweep, false, true);
    sweep->add_option("-j,--jobs", jobs, "parallel trials");

    auto* table1 = app.add_subcommand("experiment-table1", "greedy closed-form vs. gradient training");
    add_common(table1, false, true);
    table1->add_option("-j,--jobs", jobs, "parallel runs");

    auto* cylinder = app.add_subcommand("experiment-cylinder", "lattice graph embedding with held-out nodes");
    add_common(cylinder, false, true);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kConfigError;
    }

    try {
        if (*generate) {
            ctx.command = "generate";
            return cmd_generate(ctx);
        }
        if (*train_cmd) {
            ctx.command = "train";
            return cmd_train(ctx, data_path, graph_path);
        }
        if (*evaluate) {
            ctx.command = "evaluate";
            return cmd_evaluate(ctx, model_path, data_path, graph_path, batch_whitening);
        }
        if (*embed) {
            ctx.command = "embed";
            return cmd_embed(ctx, model_path, data_path);
        }
        if (*sweep) {
            ctx.command = "sweep-iters";
            return cmd_sweep(ctx, jobs);
        }
        if (*table1) {
            ctx.command = "experiment-table1";
            return cmd_table1(ctx, jobs);
        }
        if (*cylinder) {
            ctx.command = "experiment-cylinder";
            return cmd_cylinder(ctx);
        }
        if (*gradcheck) {
            ctx.command = "gradcheck";
            return cmd_gradcheck(ctx);
        }
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoError;
    } catch (const ConditioningError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const DivergenceError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const RangeError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoError;
    }
    return kConfigError;
}

} // namespace psfa::cli
