#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "psfa/linalg.hpp"

namespace psfa {

/// x(t) = eps_t + sum_{m=1..degree} alpha_m cos(m t), t_k = k * step, alpha_m ~ N(0, I_dim).
struct TrigConfig {
    Index dim = 500;
    Index degree = 100;
    Index length = 10000;
    double step = 2.0 * 3.14159265358979323846 / 10000.0;
    double noise_variance = 0.01; // per-entry variance of eps_t
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::json to_json(const TrigConfig& cfg);
TrigConfig trig_config_from_json(const nlohmann::json& j);

struct Dataset {
    Matrix data; // dim x length, one sample per column
    nlohmann::json meta = nlohmann::json::object();

    Index dim() const { return data.rows(); }
    Index length() const { return data.cols(); }
};

Dataset gen_trig(const TrigConfig& cfg);

/// Largest |x| accepted by distort before exp() overflows.
inline constexpr double kDistortLimit = 700.0;

/// Entry-wise cos(exp(x)).
Dataset distort(const Dataset& x);

/// Text: "dims=d n=N", "# meta <json>" provenance line, then one row of d values per sample.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);

/// Binary: "PSFADS01", u64 dims, u64 n, u64 meta bytes, meta json, little-endian doubles sample by sample.
void write_dataset_binary(std::ostream& out, const Dataset& ds);
Dataset read_dataset_binary(std::istream& in);

/// Chooses the format from the file contents (binary magic or text header).
void save_dataset(const std::string& path, const Dataset& ds, bool binary = false);
Dataset load_dataset(const std::string& path);

} // namespace psfa
