#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    args.insert(args.begin(), "psfa");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = psfa::cli::run_command(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

// Fresh scratch directory per test case.
struct Scratch {
    fs::path root;

    explicit Scratch(const std::string& name)
        : root(fs::temp_directory_path() / ("psfa_cli_" + name))
    {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Scratch() { fs::remove_all(root); }

    std::string operator/(const std::string& leaf) const { return (root / leaf).string(); }
};

const char* kTrig = R"({"kind": "trig", "dim": 5, "degree": 4, "length": 400, "noise_variance": 0.01, "seed": 3})";

} // namespace

TEST_CASE("bad command lines exit with a config error and print usage")
{
    const Result a = run({"train", "--bogus"});
    CHECK(a.code == 1);
    CHECK(a.err.find("Usage") != std::string::npos);
    CHECK(run({}).code == 1);
    CHECK(run({"fly"}).code == 1);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("generate writes the dataset and a manifest")
{
    Scratch s("generate");
    write_file(s / "gen.json", kTrig);
    const Result r = run({"generate", "-c", s / "gen.json", "-o", s / "data"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(s / "data/dataset.txt"));
    const json m = json::parse(slurp(s / "data/manifest.json"));
    CHECK(m.at("command") == "generate");
    CHECK(m.at("seed") == 3);
    CHECK(m.at("config").at("dim") == 5);
    CHECK(m.contains("versions"));
    CHECK(m.at("outputs").size() == 1);

    // existing target is refused and left alone, --force replaces it
    const std::string before = slurp(s / "data/dataset.txt");
    CHECK(run({"generate", "-c", s / "gen.json", "-o", s / "data"}).code == 3);
    CHECK(slurp(s / "data/dataset.txt") == before);
    CHECK(run({"generate", "-c", s / "gen.json", "-o", s / "data", "--force"}).code == 0);

    // the manifest reproduces the dataset byte for byte
    CHECK(run({"generate", "-c", s / "data/manifest.json", "-o", s / "again"}).code == 0);
    CHECK(slurp(s / "again/dataset.txt") == before);

    write_file(s / "grid.json", R"({"kind": "grid", "azimuths": 4, "elevations": 3, "lightings": 2})");
    CHECK(run({"generate", "-c", s / "grid.json", "-o", s / "grid"}).code == 0);
    CHECK(slurp(s / "grid/graph.txt").rfind("nodes=24\n", 0) == 0);

    // no stray staging directories
    for (const auto& e : fs::directory_iterator(s.root))
        CHECK(e.path().filename().string().front() != '.');
}

TEST_CASE("config and I/O failures map to exit codes")
{
    Scratch s("errors");
    CHECK(run({"generate", "-c", s / "missing.json", "-o", s / "x"}).code == 3);
    write_file(s / "bad.json", "{ not json");
    CHECK(run({"generate", "-c", s / "bad.json", "-o", s / "x"}).code == 1);
    write_file(s / "kind.json", R"({"kind": "spiral"})");
    CHECK(run({"generate", "-c", s / "kind.json", "-o", s / "x"}).code == 1);
    write_file(s / "neg.json", R"({"kind": "trig", "noise_variance": -1})");
    CHECK(run({"generate", "-c", s / "neg.json", "-o", s / "x"}).code == 1);
    CHECK_FALSE(fs::exists(s / "x"));
    write_file(s / "train.json", R"({"network": {"preset": "linear", "input_dim": 5, "output_dim": 2}})");
    CHECK(run({"train", "-c", s / "train.json", "-o", s / "t", "--data", s / "nope.txt"}).code == 3);
}

TEST_CASE("train, evaluate and embed")
{
    Scratch s("train");
    write_file(s / "gen.json", kTrig);
    REQUIRE(run({"generate", "-c", s / "gen.json", "-o", s / "data"}).code == 0);
    write_file(s / "train.json", R"({
        "network": {"input_dim": 5, "layers": [{"kind": "linear", "out_dim": 4}, {"kind": "tanh"},
                                               {"kind": "linear", "out_dim": 2}]},
        "epochs": 25, "seed": 4})");
    const Result t = run({"train", "-c", s / "train.json", "--data", s / "data/dataset.txt", "-o", s / "run"});
    REQUIRE(t.code == 0);
    for (const char* f : {"model.json", "report.json", "report.txt", "loss.csv", "manifest.json"})
        CHECK(fs::exists(s.root / "run" / f));
    const json report = json::parse(slurp(s / "run/report.json"));
    CHECK(report.at("epochs_run") == 25);

    // rerunning from the manifest gives identical outputs
    REQUIRE(run({"train", "-c", s / "run/manifest.json", "-o", s / "rerun"}).code == 0);
    CHECK(slurp(s / "rerun/model.json") == slurp(s / "run/model.json"));
    CHECK(slurp(s / "rerun/loss.csv") == slurp(s / "run/loss.csv"));

    const Result e = run({"evaluate", "-m", s / "run/model.json", "--data", s / "data/dataset.txt"});
    REQUIRE(e.code == 0);
    const json metrics = json::parse(e.out);
    CHECK(metrics.at("whitening") == "frozen");
    CHECK(metrics.at("final").at("max_cov_error").get<double>() < 1e-6);

    REQUIRE(run({"embed", "-m", s / "run/model.json", "--data", s / "data/dataset.txt", "-o", s / "emb"}).code == 0);
    const std::string emb = slurp(s / "emb/embedding.csv");
    CHECK(std::count(emb.begin(), emb.end(), '\n') >= 400);

    write_file(s / "wide.json", R"({"kind": "trig", "dim": 7, "degree": 2, "length": 50})");
    REQUIRE(run({"generate", "-c", s / "wide.json", "-o", s / "wide"}).code == 0);
    CHECK(run({"evaluate", "-m", s / "run/model.json", "--data", s / "wide/dataset.txt"}).code == 1);
}

TEST_CASE("gradcheck command")
{
    const Result r = run({"gradcheck"});
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
}
