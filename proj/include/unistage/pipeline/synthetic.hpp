#pragma once

// Deterministic synthetic tables for the combined workloads.
//
//   fact.csv  id,key[,cat],x0..x{F-1},y
//   dim.csv   key,z0..z{D-1}          (written when dim_rows > 0)
//
// dim keys are a seeded permutation of 0..dim_rows-1. A fact row joins
// with probability match_rate; otherwise its key is >= dim_rows. The target
// y is a smooth function of the row's features and its matched dim row,
// plus Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "unistage/core/error.hpp"

namespace unistage::pipeline {

struct SyntheticConfig {
    uint64_t seed = 42;
    std::string out_dir = ".";
    int64_t fact_rows = 1000;
    int64_t features = 4;
    int64_t dim_rows = 100;
    int64_t dim_features = 2;
    double match_rate = 1.0;
    int64_t categories = 0;  // 0: no cat column
    double noise = 0.05;

    void validate() const {
        if (fact_rows < 0) throw ValidationError("fact_rows", "must not be negative");
        if (features < 1) throw ValidationError("features", "must be at least 1");
        if (dim_rows < 0) throw ValidationError("dim_rows", "must not be negative");
        if (dim_rows > 0 && dim_features < 1) throw ValidationError("dim_features", "must be at least 1");
        if (!(match_rate >= 0.0 && match_rate <= 1.0)) throw ValidationError("match_rate", "must lie in [0, 1]");
        if (categories < 0) throw ValidationError("categories", "must not be negative");
        if (!(noise >= 0.0)) throw ValidationError("noise", "must not be negative");
    }
};

struct SyntheticFiles {
    std::string fact;
    std::string dim;  // empty when dim_rows == 0
};

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    if (!j.is_object()) throw ValidationError("config", "expected an object");
    auto get = [&](const char* k, auto& dst) {
        if (!j.contains(k)) return;
        try {
            j.at(k).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(k, "has the wrong type");
        }
    };
    get("seed", c.seed);
    get("out_dir", c.out_dir);
    get("fact_rows", c.fact_rows);
    get("features", c.features);
    get("dim_rows", c.dim_rows);
    get("dim_features", c.dim_features);
    get("match_rate", c.match_rate);
    get("categories", c.categories);
    get("noise", c.noise);
    c.validate();
    return c;
}

// Coefficients of the target function; fixed so datasets with different
// seeds share one learnable relationship.
inline double synthetic_target(const std::vector<double>& x, const std::vector<double>& z) {
    double y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) y += (i % 2 ? -0.6 : 0.8) * x[i] / std::sqrt(1.0 + static_cast<double>(i));
    for (std::size_t j = 0; j < z.size(); ++j) y += (j % 2 ? 0.4 : -0.5) * z[j];
    y += 0.7 * std::fabs(x[0]);
    if (!z.empty()) y += 0.5 * x[0] * z[0];
    return y;
}

namespace detail {

struct CsvFile {
    std::FILE* f = nullptr;
    explicit CsvFile(const std::string& path) : f(std::fopen(path.c_str(), "wb")) {
        if (!f) throw EnvironmentError("cannot write '" + path + "'");
        std::setvbuf(f, nullptr, _IOFBF, 1 << 20);
    }
    ~CsvFile() {
        if (f) std::fclose(f);
    }
    CsvFile(const CsvFile&) = delete;
    CsvFile& operator=(const CsvFile&) = delete;
};

}  // namespace detail

inline SyntheticFiles gen_synthetic(const SyntheticConfig& c) {
    c.validate();
    std::filesystem::create_directories(c.out_dir);
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticFiles files;
    files.fact = (std::filesystem::path(c.out_dir) / "fact.csv").string();

    // Dimension table.
    std::vector<std::vector<double>> zrows(static_cast<std::size_t>(c.dim_rows));
    if (c.dim_rows > 0) {
        files.dim = (std::filesystem::path(c.out_dir) / "dim.csv").string();
        std::vector<int64_t> keys(static_cast<std::size_t>(c.dim_rows));
        for (int64_t k = 0; k < c.dim_rows; ++k) keys[static_cast<std::size_t>(k)] = k;
        std::shuffle(keys.begin(), keys.end(), rng);
        detail::CsvFile out(files.dim);
        std::fputs("key", out.f);
        for (int64_t j = 0; j < c.dim_features; ++j) std::fprintf(out.f, ",z%lld", static_cast<long long>(j));
        std::fputc('\n', out.f);
        for (int64_t key : keys) {
            auto& z = zrows[static_cast<std::size_t>(key)];
            std::fprintf(out.f, "%lld", static_cast<long long>(key));
            for (int64_t j = 0; j < c.dim_features; ++j) {
                // Rounded first so the generator's target uses the written values.
                double v = std::round(unit(rng) * 1e6) / 1e6;
                z.push_back(v);
                std::fprintf(out.f, ",%.6f", v);
            }
            std::fputc('\n', out.f);
        }
    }

    detail::CsvFile out(files.fact);
    std::fputs("id,key", out.f);
    if (c.categories > 0) std::fputs(",cat", out.f);
    for (int64_t i = 0; i < c.features; ++i) std::fprintf(out.f, ",x%lld", static_cast<long long>(i));
    std::fputs(",y\n", out.f);
    std::vector<double> x(static_cast<std::size_t>(c.features));
    const std::vector<double> none;
    for (int64_t r = 0; r < c.fact_rows; ++r) {
        bool match = c.dim_rows > 0 && coin(rng) < c.match_rate;
        int64_t key = 0;
        if (c.dim_rows > 0) {
            std::uniform_int_distribution<int64_t> pick(0, c.dim_rows - 1);
            key = match ? pick(rng) : c.dim_rows + pick(rng);
        }
        std::fprintf(out.f, "%lld,%lld", static_cast<long long>(r), static_cast<long long>(key));
        if (c.categories > 0) {
            std::uniform_int_distribution<int64_t> cat(0, c.categories - 1);
            std::fprintf(out.f, ",c%lld", static_cast<long long>(cat(rng)));
        }
        for (auto& v : x) {
            v = std::round(unit(rng) * 1e6) / 1e6;
            std::fprintf(out.f, ",%.6f", v);
        }
        double y = synthetic_target(x, match ? zrows[static_cast<std::size_t>(key)] : none) + c.noise * gauss(rng);
        std::fprintf(out.f, ",%.6f\n", y);
    }
    return files;
}

}  // namespace unistage::pipeline
