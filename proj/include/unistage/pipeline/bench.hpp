#pragma once

// Benchmark matrices: one pipeline spec measured under several cells
// (UDF mode x batch size x workers x baseline x backend). Every cell is
// staged and compiled once and executed `runs` times; reported timings are
// trimmed means that drop the smallest and largest sample.
// The matrix and report formats are documented in README.md.

#include <limits>

#include "unistage/pipeline/run.hpp"

namespace unistage::pipeline {

struct BenchCell {
    std::string name;
    std::optional<boundary::UdfMode> mode;  // applied to every UDF of the spec
    std::optional<int64_t> batch_size;
    std::optional<int64_t> workers;
    std::optional<int64_t> queue_capacity;
    std::optional<Baseline> baseline;
    std::optional<Backend> backend;
};

struct BenchMatrix {
    std::string spec;  // path, relative to the matrix file
    int64_t runs = 5;
    std::string baseline_cell;  // speedups are relative to this cell
    std::vector<BenchCell> cells;
    std::filesystem::path base_dir;
};

struct BenchReport {
    std::string cell;
    bool ok = true;
    std::string error;
    std::string backend, baseline, mode;
    int64_t batch_size = 0, workers = 0, queue_capacity = 0;
    int64_t runs = 0;
    int64_t rows = 0;
    std::map<std::string, double> timings;                // trimmed means
    std::map<std::string, std::vector<double>> samples;   // per run, in order
    std::map<std::string, int64_t> counters;              // from the last run
    int64_t alloc_bytes = 0;                              // arena bytes of the last run
    double compile_seconds = 0.0;
    double speedup = 0.0;  // baseline total / this total; 0 when unavailable

    friend bool operator==(const BenchReport&, const BenchReport&) = default;
};

struct BenchResult {
    std::string spec;
    std::string baseline_cell;
    int64_t runs = 0;
    std::vector<BenchReport> cells;

    const BenchReport& cell(const std::string& name) const {
        for (auto& c : cells)
            if (c.cell == name) return c;
        throw ValidationError("cells", "no cell named '" + name + "'");
    }
    friend bool operator==(const BenchResult&, const BenchResult&) = default;
};

// Mean after removing one minimum and one maximum (plain mean below 3 samples).
inline double trimmed_mean(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t lo = v.size() >= 3 ? 1 : 0, hi = v.size() >= 3 ? v.size() - 1 : v.size();
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += v[i];
    return s / static_cast<double>(hi - lo);
}

// ---- matrix files ----------------------------------------------------------------

inline BenchMatrix matrix_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    detail::Reader r{j, "matrix"};
    BenchMatrix m;
    m.base_dir = base_dir;
    m.spec = r.str("spec");
    m.runs = r.int_or("runs", 5);
    if (m.runs < 5) throw ValidationError("matrix.runs", "at least 5 runs are required");
    detail::Reader list = r.at("cells");
    if (list.size() == 0) throw ValidationError("matrix.cells", "at least one cell is required");
    for (std::size_t i = 0; i < list.size(); ++i) {
        detail::Reader c = list.at(i);
        BenchCell cell;
        cell.name = c.str("name");
        for (auto& prev : m.cells)
            if (prev.name == cell.name) throw ValidationError(c.path + ".name", "duplicate cell '" + cell.name + "'");
        if (c.has("mode")) {
            try {
                cell.mode = boundary::parse_udf_mode(c.str("mode"));
            } catch (const StagingError& e) {
                throw ValidationError(c.path + ".mode", e.what());
            }
        }
        if (c.has("batch_size")) cell.batch_size = c.int_or("batch_size", 0);
        if (c.has("workers")) cell.workers = c.int_or("workers", 0);
        if (c.has("queue_capacity")) cell.queue_capacity = c.int_or("queue_capacity", 0);
        if (c.has("baseline")) cell.baseline = parse_baseline(c.str("baseline"), c.path + ".baseline");
        if (c.has("backend")) cell.backend = parse_backend(c.str("backend"), c.path + ".backend");
        m.cells.push_back(std::move(cell));
    }
    m.baseline_cell = r.str_or("baseline", m.cells.front().name);
    bool found = false;
    for (auto& c : m.cells) found = found || c.name == m.baseline_cell;
    if (!found) throw ValidationError("matrix.baseline", "no cell named '" + m.baseline_cell + "'");
    return m;
}

inline BenchMatrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EnvironmentError("cannot read matrix '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("matrix", std::string("malformed JSON: ") + e.what());
    }
    return matrix_from_json(j, std::filesystem::path(path).parent_path());
}

// ---- report serialization --------------------------------------------------------

inline json report_to_json(const BenchReport& r) {
    json j{{"cell", r.cell}, {"ok", r.ok}};
    if (!r.ok) j["error"] = r.error;
    j["backend"] = r.backend;
    j["baseline"] = r.baseline;
    j["mode"] = r.mode;
    j["batch_size"] = r.batch_size;
    j["workers"] = r.workers;
    j["queue_capacity"] = r.queue_capacity;
    j["runs"] = r.runs;
    j["rows"] = r.rows;
    j["timings"] = r.timings;
    j["samples"] = r.samples;
    j["counters"] = r.counters;
    j["alloc_bytes"] = r.alloc_bytes;
    j["compile_seconds"] = r.compile_seconds;
    j["speedup"] = r.speedup;
    return j;
}

inline BenchReport report_from_json(const json& j) {
    BenchReport r;
    try {
        r.cell = j.at("cell").get<std::string>();
        r.ok = j.at("ok").get<bool>();
        r.error = j.value("error", std::string());
        r.backend = j.at("backend").get<std::string>();
        r.baseline = j.at("baseline").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.batch_size = j.at("batch_size").get<int64_t>();
        r.workers = j.at("workers").get<int64_t>();
        r.queue_capacity = j.at("queue_capacity").get<int64_t>();
        r.runs = j.at("runs").get<int64_t>();
        r.rows = j.at("rows").get<int64_t>();
        r.timings = j.at("timings").get<std::map<std::string, double>>();
        r.samples = j.at("samples").get<std::map<std::string, std::vector<double>>>();
        r.counters = j.at("counters").get<std::map<std::string, int64_t>>();
        r.alloc_bytes = j.at("alloc_bytes").get<int64_t>();
        r.compile_seconds = j.at("compile_seconds").get<double>();
        r.speedup = j.at("speedup").get<double>();
    } catch (const json::exception& e) {
        throw ValidationError("report", e.what());
    }
    return r;
}

inline json bench_to_json(const BenchResult& b) {
    json cells = json::array();
    for (auto& c : b.cells) cells.push_back(report_to_json(c));
    return {{"spec", b.spec}, {"baseline", b.baseline_cell}, {"runs", b.runs}, {"cells", cells}};
}

inline BenchResult bench_from_json(const json& j) {
    BenchResult b;
    try {
        b.spec = j.at("spec").get<std::string>();
        b.baseline_cell = j.at("baseline").get<std::string>();
        b.runs = j.at("runs").get<int64_t>();
        for (auto& c : j.at("cells")) b.cells.push_back(report_from_json(c));
    } catch (const json::exception& e) {
        throw ValidationError("report", e.what());
    }
    return b;
}

inline std::string serialize_bench(const BenchResult& b) { return bench_to_json(b).dump(2) + "\n"; }
inline BenchResult parse_bench(const std::string& text) {
    try {
        return bench_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ValidationError("report", std::string("malformed JSON: ") + e.what());
    }
}

// ---- execution -----------------------------------------------------------------

inline PipelineSpec apply_cell(PipelineSpec s, const BenchCell& c) {
    for (auto& u : s.udfs) {
        if (c.mode) u.mode = *c.mode;
        if (c.batch_size) u.batch.batch_size = *c.batch_size;
        if (c.workers) u.batch.pool_workers = *c.workers;
        if (c.queue_capacity) u.batch.queue_capacity = *c.queue_capacity;
        else if (u.batch.pool_workers > 0) u.batch.queue_capacity = std::max(u.batch.queue_capacity, 2 * u.batch.pool_workers);
    }
    if (c.baseline) s.baseline = *c.baseline;
    if (c.backend) s.backend = *c.backend;
    return s;
}

// Measures one cell. Failures are captured in the report.
inline BenchReport bench_cell(const PipelineSpec& base, const BenchCell& cell, int64_t runs, const RunOptions& opts = {}) {
    BenchReport r;
    r.cell = cell.name;
    r.runs = runs;
    try {
        PipelineSpec s = apply_cell(base, cell);
        RunOptions o = opts;
        o.backend = s.backend;
        o.baseline = s.baseline;
        r.backend = backend_name(s.backend);
        r.baseline = baseline_name(s.baseline);
        if (!s.udfs.empty()) {
            r.mode = boundary::udf_mode_name(s.udfs.front().mode);
            r.batch_size = s.udfs.front().batch.batch_size;
            r.workers = s.udfs.front().batch.pool_workers;
            r.queue_capacity = s.udfs.front().batch.queue_capacity;
        } else {
            r.mode = "none";
        }
        for (std::size_t i = 0; i < s.udfs.size(); ++i) {
            try {
                s.udfs[i].batch.validate();
            } catch (const StagingError& e) {
                throw ValidationError("udfs[" + std::to_string(i) + "].batch", e.what());
            }
        }
        PreparedPipeline p(s, o);
        r.compile_seconds = p.compile_seconds();
        for (int64_t k = 0; k < runs; ++k) {
            PipelineResult res = p.execute();
            for (const char* ph : {"load", "export", "import", "process", "total"})
                r.samples[ph].push_back(res.result.timing(ph));
            r.counters = res.result.counters;
            r.alloc_bytes = res.result.alloc_bytes;
            r.rows = static_cast<int64_t>(res.result.lines.size());
        }
        for (auto& [ph, v] : r.samples) r.timings[ph] = trimmed_mean(v);
    } catch (const Error& e) {
        r.ok = false;
        r.error = e.what();
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

// Cells run one at a time, so compiled-backend timings never overlap.
inline BenchResult bench(const BenchMatrix& m, const RunOptions& opts = {}) {
    std::string spec_path = m.spec;
    if (!m.base_dir.empty() && !std::filesystem::path(spec_path).is_absolute()) spec_path = (m.base_dir / spec_path).string();
    PipelineSpec spec = load_spec(spec_path);
    BenchResult b;
    b.spec = m.spec;
    b.baseline_cell = m.baseline_cell;
    b.runs = m.runs;
    for (auto& c : m.cells) b.cells.push_back(bench_cell(spec, c, m.runs, opts));
    const BenchReport* base = nullptr;
    for (auto& c : b.cells)
        if (c.cell == m.baseline_cell) base = &c;
    for (auto& c : b.cells) {
        double t = c.timings.count("total") ? c.timings.at("total") : 0.0;
        if (base && base->ok && c.ok && t > 0.0) c.speedup = base->timings.at("total") / t;
    }
    return b;
}

}  // namespace unistage::pipeline
