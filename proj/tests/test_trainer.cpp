#include <doctest.h>

#include <atomic>
#include <filesystem>

#include "oracle.hpp"
#include "psfa/data.hpp"
#include "psfa/errors.hpp"
#include "psfa/sfa.hpp"
#include "psfa/trainer.hpp"

using namespace psfa;

namespace {

constexpr double kPi = 3.14159265358979323846;

Matrix small_trig(Index dim, Index n, std::uint64_t seed, double noise = 0.01)
{
    return gen_trig({dim, 6, n, 2.0 * kPi / static_cast<double>(n), noise, seed}).data;
}

RunConfig linear_run(Index d, Index e, int epochs)
{
    RunConfig cfg;
    cfg.network = linear_preset(d, e);
    cfg.epochs = epochs;
    cfg.early_stop.enabled = false;
    cfg.optimizer.lr = 1e-2;
    return cfg;
}

} // namespace

TEST_CASE("output metrics")
{
    std::mt19937_64 rng(1);
    const Matrix y = oracle::randn(3, 2000, rng);
    const OutputMetrics m = output_metrics(y);
    CHECK(max_abs_diff(m.delta, oracle::delta(y)) < 1e-13);
    CHECK(max_abs_diff(m.variance, oracle::cov(y).diagonal()) < 1e-13);
    const Matrix c = oracle::cov(y);
    CHECK(m.max_cov_error == doctest::Approx(max_abs_diff(c, Matrix::Identity(3, 3))).epsilon(1e-12));
    double off = 0.0;
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j)
            if (i != j)
                off += std::abs(c(i, j)) / std::sqrt(c(i, i) * c(j, j));
    CHECK(m.mean_abs_offdiag_corr == doctest::Approx(off / 6.0).epsilon(1e-10));
    CHECK(std::abs(m.ordered_delta.sum() - m.delta.sum()) < 1e-8);

    Matrix flat = y;
    flat.row(1).setConstant(2.0);
    CHECK(std::isfinite(output_metrics(flat).mean_abs_offdiag_corr));
}

TEST_CASE("zero epochs reports the initial state")
{
    const Matrix x = small_trig(5, 400, 2);
    RunConfig cfg = linear_run(5, 2, 0);
    const TrainResult r = train(cfg, x, temporal_chain(400));
    CHECK(r.report.epochs_run == 0);
    CHECK(r.report.epoch_loss.empty());
    CHECK(r.report.final_loss == r.report.initial_loss);
    CHECK(max_abs_diff(r.report.final.delta, r.report.initial.delta) < 1e-12);
}

TEST_CASE("linear training approaches closed-form SFA")
{
    const Matrix x = small_trig(8, 1500, 3);
    RunConfig cfg = linear_run(8, 3, 1500);
    const TrainResult r = train(cfg, x, temporal_chain(1500));
    const oracle::Sfa ref = oracle::sfa(x, 3);
    CHECK_FALSE(r.report.diverged);
    CHECK(r.report.final.ordered_delta.sum() < 1.05 * ref.delta.sum());
    CHECK(r.report.final.ordered_delta.sum() >= 0.999 * ref.delta.sum());
    CHECK(r.report.final.max_cov_error < 1e-2);
}

TEST_CASE("without normalization the output collapses")
{
    const Matrix x = small_trig(5, 500, 4);
    RunConfig cfg = linear_run(5, 2, 400);
    cfg.normalization = Normalization::none;
    const TrainResult r = train(cfg, x, temporal_chain(500));
    CHECK(r.report.final.delta.maxCoeff() < 1e-4);
    CHECK(r.report.final.variance.maxCoeff() < 1e-3);
}

TEST_CASE("every epoch's whitened output is white")
{
    const Matrix x = small_trig(6, 800, 5);
    RunConfig cfg;
    cfg.network = NetworkSpec{6, {}}.linear(6).tanh().linear(3);
    cfg.epochs = 60;
    cfg.power_iterations = 100;
    int seen = 0;
    double worst_mean = 0.0, worst_cov = 0.0;
    train(cfg, x, temporal_chain(800), [&](int, const Matrix& y, double) {
        ++seen;
        worst_mean = std::max(worst_mean, row_means(y).cwiseAbs().maxCoeff());
        worst_cov = std::max(worst_cov, max_abs_diff(oracle::cov(y), Matrix::Identity(3, 3)));
    });
    CHECK(seen == 60);
    CHECK(worst_mean < 1e-6);
    CHECK(worst_cov < 1e-2);
}

TEST_CASE("training is bit reproducible")
{
    const Matrix x = small_trig(6, 300, 6);
    RunConfig cfg;
    cfg.network = NetworkSpec{6, {}}.linear(5).tanh().linear(2);
    cfg.epochs = 30;
    const TrainResult a = train(cfg, x, temporal_chain(300));
    const TrainResult b = train(cfg, x, temporal_chain(300));
    CHECK(a.report.epoch_loss == b.report.epoch_loss);
    CHECK(a.final_output == b.final_output);
    const auto pa = a.tape.snapshot(), pb = b.tape.snapshot();
    for (std::size_t k = 0; k < pa.size(); ++k)
        CHECK(pa[k] == pb[k]);
}

TEST_CASE("greedy init then training never ends worse than the init")
{
    const Matrix x = distort(gen_trig({10, 5, 1200, 2.0 * kPi / 1200.0, 0.01, 2})).data;
    RunConfig cfg;
    cfg.network = quadratic_preset(10, 2);
    cfg.init = InitMode::greedy;
    cfg.epochs = 40;
    const TrainResult r = train(cfg, x, temporal_chain(1200));
    CHECK(r.report.final_loss <= r.report.initial_loss * (1.0 + 1e-6));
}

TEST_CASE("freezing the whitening")
{
    const Matrix x = small_trig(5, 600, 7);
    RunConfig cfg;
    cfg.network = NetworkSpec{5, {}}.linear(5).tanh().linear(2);
    cfg.epochs = 20;
    TrainResult r = train(cfg, x, temporal_chain(600));
    const FreezeResult f = freeze(r.tape, x);
    CHECK(max_abs_diff(f.embedder.embed(x), f.training_output) < 1e-8);

    // frozen map is affine in the body output
    std::mt19937_64 rng(1);
    const Matrix fresh = oracle::randn(5, 10, rng);
    const Matrix g = f.embedder.body().apply(fresh);
    const Matrix expect = f.embedder.whitening().whitening * (g.colwise() - f.embedder.whitening().mean);
    CHECK(max_abs_diff(f.embedder.embed(fresh), expect) < 1e-12);
    // single samples embed the same as in a batch
    CHECK(max_abs_diff(f.embedder.embed(fresh.col(3)), f.embedder.embed(fresh).col(3)) < 1e-12);

    RunConfig plain = cfg;
    plain.normalization = Normalization::none;
    plain.epochs = 1;
    TrainResult p = train(plain, x, temporal_chain(600));
    CHECK_THROWS_AS(freeze(p.tape, x), ContractError);
}

TEST_CASE("divergence restores the best parameters")
{
    const Matrix x = small_trig(4, 200, 8) * 1e200;
    RunConfig cfg;
    cfg.network = linear_preset(4, 2);
    cfg.normalization = Normalization::none;
    cfg.epochs = 10;
    const TrainResult r = train(cfg, x, temporal_chain(200));
    CHECK(r.report.diverged);
    CHECK(r.report.last_good_epoch == -1);
    CHECK_FALSE(r.report.divergence_message.empty());
}

TEST_CASE("run config JSON and validation")
{
    RunConfig cfg;
    cfg.network = tanh_preset(10, 3);
    cfg.batch_edges = 64;
    cfg.epochs = 12;
    cfg.normalization = Normalization::standardize;
    cfg.optimizer.lr = 0.03;
    cfg.init = InitMode::greedy;
    cfg.early_stop = {false, 7, 0.01};
    const RunConfig back = run_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.batch_edges == 64);
    CHECK(back.init == InitMode::greedy);

    CHECK(run_config_from_json({{"batch", "full"}}).batch_edges == 0);
    CHECK_THROWS_AS(run_config_from_json({{"batch", "half"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"normalization", "pca"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"epochs", "ten"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"init", "magic"}}), ConfigError);

    RunConfig bad;
    bad.network = linear_preset(3, 2);
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = RunConfig{};
    bad.network = linear_preset(3, 2);
    bad.loss = "triplet";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = RunConfig{};
    bad.network = linear_preset(3, 2);
    bad.batch_edges = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = RunConfig{};
    bad.network = linear_preset(3, 2);
    bad.power_iterations = 0;
    CHECK_FALSE(bad.whitening_active());
    CHECK(bad.training_network().layers.size() == 1);
}

TEST_CASE("mini-batch training over sampled edges")
{
    const Index n = 500;
    const Matrix x = small_trig(5, n, 9);
    RunConfig cfg = linear_run(5, 2, 200);
    cfg.batch_edges = 100;
    const TrainResult r = train(cfg, x, temporal_chain(n));
    CHECK_FALSE(r.report.diverged);
    CHECK(r.report.final_loss < r.report.initial_loss);
    CHECK(r.final_output.cols() == n);
}

TEST_CASE("EMA covariance training still reports and freezes white output")
{
    const Matrix x = small_trig(5, 500, 10);
    RunConfig cfg;
    cfg.network = NetworkSpec{5, {}}.linear(8).tanh().linear(2);
    cfg.epochs = 200;
    cfg.early_stop.enabled = false;
    cfg.gamma = 0.5;
    cfg.batch_edges = 200;
    TrainResult r = train(cfg, x, temporal_chain(500));
    CHECK_FALSE(r.report.diverged);
    CHECK(r.final_output.allFinite());
    CHECK(r.report.final.max_cov_error < 1e-2);
    const FreezeResult f = freeze(r.tape, x);
    CHECK(max_abs_diff(oracle::cov(f.training_output), Matrix::Identity(2, 2)) < 1e-2);
    CHECK(max_abs_diff(f.embedder.embed(x), f.training_output) < 1e-8);
}

TEST_CASE("model files round trip")
{
    const Matrix x = small_trig(5, 300, 11);
    RunConfig cfg;
    cfg.network = NetworkSpec{5, {}}.linear(4).tanh().linear(2);
    cfg.epochs = 10;
    TrainResult r = train(cfg, x, temporal_chain(300));
    const FreezeResult f = freeze(r.tape, x);
    const auto path = std::filesystem::temp_directory_path() / "psfa_model_roundtrip.json";
    save_model(path.string(), r.tape, cfg.training_network(), &f.embedder.whitening());
    const LoadedModel m = load_model(path.string());
    std::filesystem::remove(path);
    REQUIRE(m.has_frozen);
    const FrozenEmbedder e(m.tape.prefix(m.tape.size() - 1), m.frozen);
    CHECK(max_abs_diff(e.embed(x), f.embedder.embed(x)) == 0.0);
    CHECK_THROWS_AS(load_model("/nonexistent/model.json"), IoError);
    CHECK_THROWS_AS(model_from_json({{"format", "psfa-model-1"}}), ConfigError);
}

TEST_CASE("parallel_for covers every index and rethrows")
{
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    std::atomic<int> count{0};
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [&](std::size_t i) {
                                     ++count;
                                     if (i == 4)
                                         throw RangeError("boom");
                                 }),
                    RangeError);
}

TEST_CASE("plateau decrease check")
{
    CHECK(decreases_over_plateaus({5, 4, 3, 2, 1, 0}, 2));
    CHECK(decreases_over_plateaus({5, 4, 4.5, 3, 2, 2.5}, 3));
    CHECK_FALSE(decreases_over_plateaus({1, 1, 2, 2}, 2));
    CHECK_THROWS_AS(decreases_over_plateaus({1, 2}, 0), ConfigError);
}
