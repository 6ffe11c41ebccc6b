// unistage: run, benchmark, generate data for, or emit a pipeline spec.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "unistage/pipeline/bench.hpp"
#include "unistage/pipeline/synthetic.hpp"

using namespace unistage;
using namespace unistage::pipeline;

namespace {

struct Common {
    std::string backend, baseline, out;
    int64_t seed = -1;
    int64_t threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--backend", c.backend, "interpret or compile (overrides the file)")
        ->check(CLI::IsMember({"interpret", "compile"}));
    cmd->add_option("--baseline", c.baseline, "fused or csv-boundary (overrides the file)")
        ->check(CLI::IsMember({"fused", "csv-boundary"}));
    cmd->add_option("--seed", c.seed, "seed for model initialization or data generation")->check(CLI::NonNegativeNumber);
    cmd->add_option("--threads", c.threads, "worker threads for pooled UDFs")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", c.out, "output directory");
}

RunOptions run_options(const Common& c) {
    RunOptions o;
    if (!c.backend.empty()) o.backend = parse_backend(c.backend);
    if (!c.baseline.empty()) o.baseline = parse_baseline(c.baseline);
    o.threads = c.threads;
    if (!c.out.empty()) o.work_dir = c.out;
    return o;
}

void apply_seed(PipelineSpec& s, int64_t seed) {
    if (seed < 0) return;
    for (auto& u : s.udfs)
        if (u.checkpoint.empty()) u.seed = static_cast<uint64_t>(seed);
    if (s.training) s.training->seed = static_cast<uint64_t>(seed);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw EnvironmentError("cannot write '" + p.string() + "'");
    f << text;
}

json phase_json(const PipelineResult& r, const PreparedPipeline& p) {
    json j{{"backend", backend_name(p.backend())}, {"baseline", baseline_name(p.baseline())}};
    j["rows"] = r.report.rows;
    j["timings"] = r.report.timings;
    j["counters"] = r.report.counters;
    j["alloc_bytes"] = r.report.alloc_bytes;
    if (!r.epoch_losses.empty()) j["epoch_losses"] = r.epoch_losses;
    return j;
}

int cmd_run(const std::string& spec_path, const Common& c) {
    PipelineSpec spec = load_spec(spec_path);
    apply_seed(spec, c.seed);
    PreparedPipeline p(spec, run_options(c));
    PipelineResult r = p.execute();
    std::string rows = pipeline::detail::join_lines(r.result.lines);
    json report = phase_json(r, p);
    if (c.out.empty()) {
        std::fwrite(rows.data(), 1, rows.size(), stdout);
        std::cerr << report.dump() << "\n";
        return 0;
    }
    std::filesystem::path dir(c.out);
    write_text(dir / "rows.csv", rows);
    write_text(dir / "report.json", report.dump(2) + "\n");
    if (!r.trained.empty()) write_text(dir / "model.ckpt", tensor::format_checkpoint(r.trained));
    std::cerr << "wrote " << (dir / "rows.csv").string() << " and " << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_bench(const std::string& matrix_path, const Common& c) {
    BenchMatrix m = load_matrix(matrix_path);
    RunOptions o;
    o.threads = c.threads;
    if (!c.out.empty()) o.work_dir = c.out;
    BenchResult b = bench(m, o);
    std::string text = serialize_bench(b);
    if (c.out.empty()) {
        std::cout << text;
    } else {
        write_text(std::filesystem::path(c.out) / "bench.json", text);
    }
    for (auto& cell : b.cells) {
        if (cell.ok)
            std::fprintf(stderr, "%-20s total %.6fs  speedup %.2fx\n", cell.cell.c_str(), cell.timings.at("total"),
                         cell.speedup);
        else
            std::fprintf(stderr, "%-20s FAILED: %s\n", cell.cell.c_str(), cell.error.c_str());
    }
    return 0;
}

int cmd_gen(const std::string& config_path, const Common& c) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw EnvironmentError("cannot read config '" + config_path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config", std::string("malformed JSON: ") + e.what());
    }
    SyntheticConfig cfg = synthetic_config_from_json(j);
    std::filesystem::path base = std::filesystem::path(config_path).parent_path();
    if (!c.out.empty()) cfg.out_dir = c.out;
    else if (std::filesystem::path(cfg.out_dir).is_relative()) cfg.out_dir = (base / cfg.out_dir).string();
    if (c.seed >= 0) cfg.seed = static_cast<uint64_t>(c.seed);
    SyntheticFiles f = gen_synthetic(cfg);
    std::cerr << "wrote " << f.fact << (f.dim.empty() ? "" : " and " + f.dim) << "\n";
    return 0;
}

int cmd_emit(const std::string& spec_path, const Common& c) {
    PipelineSpec spec = load_spec(spec_path);
    apply_seed(spec, c.seed);
    GeneratedProgram prog = emit_pipeline(spec, run_options(c));
    if (c.out.empty()) std::cout << prog.source;
    else write_text(std::filesystem::path(c.out) / "program.c", prog.source);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unistage: staged compiler for combined query and model pipelines"};
    app.require_subcommand(1);
    Common common;
    std::string path;

    auto* run = app.add_subcommand("run", "stage and run a pipeline spec");
    run->add_option("spec", path, "pipeline spec (JSON)")->required();
    add_common(run, common);
    auto* bench_cmd = app.add_subcommand("bench", "run a benchmark matrix");
    bench_cmd->add_option("matrix", path, "benchmark matrix (JSON)")->required();
    add_common(bench_cmd, common);
    auto* gen = app.add_subcommand("gen", "generate synthetic CSV tables");
    gen->add_option("config", path, "generator config (JSON)")->required();
    add_common(gen, common);
    auto* emit_cmd = app.add_subcommand("emit", "write the generated C source without running it");
    emit_cmd->add_option("spec", path, "pipeline spec (JSON)")->required();
    add_common(emit_cmd, common);

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed()) return cmd_run(path, common);
        if (bench_cmd->parsed()) return cmd_bench(path, common);
        if (gen->parsed()) return cmd_gen(path, common);
        if (emit_cmd->parsed()) return cmd_emit(path, common);
    } catch (const CompileError& e) {
        std::cerr << "error: " << e.what() << "\n" << e.diagnostics() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
