#include "psfa/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "psfa/errors.hpp"
#include "psfa/io.hpp"

namespace psfa {

static_assert(std::endian::native == std::endian::little, "binary dataset I/O assumes a little-endian host");

void TrigConfig::validate() const
{
    if (dim < 1 || degree < 1 || length < 1)
        throw ConfigError("trig data: dim, degree and length must be at least 1");
    if (!(step > 0.0))
        throw ConfigError("trig data: step must be positive");
    if (!(noise_variance >= 0.0))
        throw ConfigError("trig data: noise variance must be non-negative");
}

nlohmann::json to_json(const TrigConfig& cfg)
{
    return {{"dim", cfg.dim},   {"degree", cfg.degree}, {"length", cfg.length},
            {"step", cfg.step}, {"noise_variance", cfg.noise_variance}, {"seed", cfg.seed}};
}

TrigConfig trig_config_from_json(const nlohmann::json& j)
{
    TrigConfig cfg;
    try {
        cfg.dim = j.value("dim", cfg.dim);
        cfg.degree = j.value("degree", cfg.degree);
        cfg.length = j.value("length", cfg.length);
        // A step of 0 in the file means "one full period over the series".
        cfg.step = j.value("step", 0.0);
        if (cfg.step == 0.0)
            cfg.step = 2.0 * 3.14159265358979323846 / static_cast<double>(cfg.length);
        cfg.noise_variance = j.value("noise_variance", cfg.noise_variance);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError(std::string("trig config: ") + err.what());
    }
    cfg.validate();
    return cfg;
}

Dataset gen_trig(const TrigConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix alpha(cfg.dim, cfg.degree);
    for (Index m = 0; m < cfg.degree; ++m)
        for (Index i = 0; i < cfg.dim; ++i)
            alpha(i, m) = normal(rng);

    Matrix harmonics(cfg.degree, cfg.length);
    for (Index k = 0; k < cfg.length; ++k) {
        const double t = static_cast<double>(k) * cfg.step;
        for (Index m = 0; m < cfg.degree; ++m)
            harmonics(m, k) = std::cos(static_cast<double>(m + 1) * t);
    }

    Dataset ds;
    ds.data = alpha * harmonics;
    if (cfg.noise_variance > 0.0) {
        const double sigma = std::sqrt(cfg.noise_variance);
        for (Index k = 0; k < cfg.length; ++k)
            for (Index i = 0; i < cfg.dim; ++i)
                ds.data(i, k) += sigma * normal(rng);
    }
    ds.meta = {{"generator", "trig"}, {"config", to_json(cfg)}};
    return ds;
}

Dataset distort(const Dataset& x)
{
    if (!x.data.allFinite())
        throw RangeError("distort: input contains non-finite values");
    if (x.data.size() > 0 && x.data.cwiseAbs().maxCoeff() > kDistortLimit)
        throw RangeError("distort: |x| exceeds " + std::to_string(kDistortLimit) + ", exp() would overflow");
    Dataset out;
    out.data = x.data.array().exp().cos().matrix();
    out.meta = x.meta;
    out.meta["distortion"] = "cos(exp(x))";
    return out;
}

// ---------------------------------------------------------------------------
// text format

void write_dataset(std::ostream& out, const Dataset& ds)
{
    out << "dims=" << ds.dim() << " n=" << ds.length() << '\n';
    out << "# meta " << ds.meta.dump() << '\n';
    std::string row;
    for (Index k = 0; k < ds.length(); ++k) {
        row.clear();
        for (Index i = 0; i < ds.dim(); ++i) {
            if (i)
                row += ' ';
            row += format_double(ds.data(i, k));
        }
        row += '\n';
        out << row;
    }
}

Dataset read_dataset(std::istream& in)
{
    LineReader reader(in, false);
    std::string line;
    if (!reader.next(line))
        throw ParseError("empty dataset file", 1);
    long dims = -1, n = -1;
    {
        std::istringstream header(line);
        std::string a, b, extra;
        header >> a >> b;
        if (a.rfind("dims=", 0) != 0 || b.rfind("n=", 0) != 0 || (header >> extra))
            throw ParseError("expected header 'dims=d n=N'", reader.line_number());
        try {
            dims = std::stol(a.substr(5));
            n = std::stol(b.substr(2));
        } catch (const std::exception&) {
            throw ParseError("bad numbers in header", reader.line_number());
        }
        if (dims < 1 || n < 0)
            throw ParseError("header dimensions out of range", reader.line_number());
    }

    Dataset ds;
    ds.data.resize(dims, n);
    long k = 0;
    std::string tok;
    while (reader.next(line)) {
        const auto first = line.find_first_not_of(" \t");
        if (line[first] == '#') {
            const std::string_view body(line.c_str() + first);
            if (body.rfind("# meta ", 0) == 0) {
                try {
                    ds.meta = nlohmann::json::parse(body.substr(7));
                } catch (const nlohmann::json::exception&) {
                    throw ParseError("malformed meta record", reader.line_number());
                }
            }
            continue;
        }
        if (k >= n)
            throw ParseError("more rows than the header's n=" + std::to_string(n), reader.line_number());
        std::istringstream row(line);
        long i = 0;
        while (row >> tok) {
            if (i >= dims)
                throw ParseError("row has more than dims=" + std::to_string(dims) + " values", reader.line_number());
            ds.data(i++, k) = parse_double(tok, reader.line_number());
        }
        if (i != dims)
            throw ParseError("row has " + std::to_string(i) + " values, header says dims=" + std::to_string(dims),
                             reader.line_number());
        ++k;
    }
    if (k != n)
        throw ParseError("file truncated: " + std::to_string(k) + " of " + std::to_string(n) + " rows present",
                         reader.line_number() + 1);
    return ds;
}

// ---------------------------------------------------------------------------
// binary format

namespace {

constexpr char kMagic[8] = {'P', 'S', 'F', 'A', 'D', 'S', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in)
{
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IoError("binary dataset truncated in header");
    return v;
}

} // namespace

void write_dataset_binary(std::ostream& out, const Dataset& ds)
{
    const std::string meta = ds.meta.dump();
    out.write(kMagic, sizeof kMagic);
    write_u64(out, static_cast<std::uint64_t>(ds.dim()));
    write_u64(out, static_cast<std::uint64_t>(ds.length()));
    write_u64(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    out.write(reinterpret_cast<const char*>(ds.data.data()),
              static_cast<std::streamsize>(ds.data.size() * static_cast<Index>(sizeof(double))));
}

Dataset read_dataset_binary(std::istream& in)
{
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw IoError("not a binary dataset (bad magic)");
    const auto dims = read_u64(in);
    const auto n = read_u64(in);
    const auto meta_len = read_u64(in);
    if (dims == 0 || dims > (1u << 30) || n > (std::uint64_t{1} << 40) || meta_len > (1u << 26))
        throw IoError("binary dataset header out of range");
    std::string meta(meta_len, '\0');
    if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len)))
        throw IoError("binary dataset truncated in meta record");
    Dataset ds;
    try {
        ds.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception&) {
        throw IoError("binary dataset has a malformed meta record");
    }
    ds.data.resize(static_cast<Index>(dims), static_cast<Index>(n));
    if (!in.read(reinterpret_cast<char*>(ds.data.data()),
                 static_cast<std::streamsize>(ds.data.size() * static_cast<Index>(sizeof(double)))))
        throw IoError("binary dataset truncated in body");
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds, bool binary)
{
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    if (binary)
        write_dataset_binary(out, ds);
    else
        write_dataset(out, ds);
    if (!out)
        throw IoError("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    char magic[sizeof kMagic] = {};
    in.read(magic, sizeof magic);
    const bool binary = in.gcount() == sizeof magic && std::memcmp(magic, kMagic, sizeof kMagic) == 0;
    in.clear();
    in.seekg(0);
    return binary ? read_dataset_binary(in) : read_dataset(in);
}

} // namespace psfa
