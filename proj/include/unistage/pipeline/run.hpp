#pragma once

// Staging and execution of a PipelineSpec.
//
// Fused mode stages the whole job into one graph and runs it as one
// program. CSV-boundary mode splits the job into a relational program whose
// rows are written to a CSV file and a second program that rescans that file
// and runs the model part.
//
// Timing phases (seconds):
//   load     input CSV parsing inside the programs
//   export   host time writing the boundary file (0 when fused)
//   import   boundary-file parsing in the second program (0 when fused)
//   process  total - load - export - import
//   total    sum of program totals plus export
//   compile  C compilation, reported separately and never part of total

#include <chrono>
#include <memory>

#include "unistage/backend/interpreter.hpp"
#include "unistage/backend/toolchain.hpp"
#include "unistage/core/optimize.hpp"
#include "unistage/pipeline/spec.hpp"
#include "unistage/tensor/ops.hpp"

namespace unistage::pipeline {

struct RunOptions {
    std::optional<Backend> backend;    // overrides spec.backend
    std::optional<Baseline> baseline;  // overrides spec.baseline
    int64_t threads = 0;               // > 0: worker count for pooled UDFs
    ToolchainConfig toolchain;
    std::string work_dir;  // boundary files; empty: system temp directory
};

// Per-pipeline measurements of one execution.
struct PhaseReport {
    std::map<std::string, double> timings;
    std::map<std::string, int64_t> counters;
    int64_t alloc_bytes = 0;
    int64_t rows = 0;
};

struct PipelineResult {
    RunResult result;  // rows of the final program; timings per the phases above
    PhaseReport report;
    std::vector<double> epoch_losses;          // training specs
    std::vector<tensor::NamedValues> trained;  // training specs
};

namespace detail {

inline boundary::UdfRegistry build_registry(const PipelineSpec& s) {
    boundary::UdfRegistry reg;
    for (auto& u : s.udfs) {
        if (u.model == ModelKind::DotProduct) {
            reg.add(boundary::dot_product_udf(u.name, u.weights, u.bias));
            continue;
        }
        tensor::Mlp3Weights w = u.checkpoint.empty()
                                    ? tensor::init_mlp3(u.dims, u.seed)
                                    : tensor::mlp3_from_values(u.dims, tensor::read_checkpoint(s.resolve(u.checkpoint)));
        reg.add(boundary::mlp3_udf(u.name, w, u.model == ModelKind::Mlp3Classify ? tensor::Head::Classify
                                                                                   : tensor::Head::Regress));
    }
    return reg;
}

inline boundary::BatchConfig effective_batch(const UdfSpec& u, int64_t threads) {
    boundary::BatchConfig b = u.batch;
    if (threads > 0 && u.mode == boundary::UdfMode::Pooled) {
        b.pool_workers = threads;
        b.queue_capacity = std::max(b.queue_capacity, 2 * threads);
    }
    return b;
}

inline rel::PlanContext plan_context(const PipelineSpec& s, const boundary::UdfRegistry& reg, int64_t threads) {
    rel::PlanContext ctx;
    for (auto in : s.inputs) {
        in.path = s.resolve(in.path);
        ctx.inputs.push_back(std::move(in));
    }
    ctx.udf = [&s, &reg, threads](rel::OpPtr child, const rel::PlanNode& n) -> rel::OpPtr {
        const UdfSpec* u = s.find_udf(n.udf);
        if (!u) throw ValidationError("plan", "UDF '" + n.udf + "' is not declared in udfs");
        return std::make_shared<boundary::UdfApply>(std::move(child), reg.get(n.udf), n.args, n.output, u->mode,
                                                    effective_batch(*u, threads));
    };
    return ctx;
}

inline void check_inputs_exist(const PipelineSpec& s) {
    for (std::size_t i = 0; i < s.inputs.size(); ++i) {
        std::string p = s.resolve(s.inputs[i].path);
        if (!std::filesystem::is_regular_file(p))
            throw ValidationError("inputs[" + std::to_string(i) + "].path", "input file '" + p + "' does not exist");
    }
}

// Stages the epoch loop over the rows produced by `op`. Params are staged at
// the program root and dumped to the side channel after the last epoch.
inline std::shared_ptr<tensor::Mlp3> stage_training(IrGraph& g, rel::Operator& op, const TrainingSpec& t) {
    const rel::RelSchema& in = op.schema();
    std::vector<rel::NamedExpr> exprs;
    for (std::size_t i = 0; i < t.features.size(); ++i) {
        const std::string& f = t.features[i];
        if (!in.contains(f))
            throw ValidationError("training.features[" + std::to_string(i) + "]", "plan output has no column '" + f + "'");
        rel::FieldType ft = in[in.index_of(f)].type;
        if (ft == rel::FieldType::StringDict)
            throw ValidationError("training.features[" + std::to_string(i) + "]", "feature '" + f + "' is not numeric");
        rel::ExprPtr e = rel::col(f);
        exprs.push_back({f, ft == rel::FieldType::Float64 ? e : rel::call("float", {e})});
    }
    rel::ExprPtr target = rel::parse_expr(t.target);
    std::vector<std::string> refs;
    rel::referenced_columns(*target, refs);
    for (auto& r : refs)
        if (!in.contains(r)) throw ValidationError("training.target", "plan output has no column '" + r + "'");
    if (!rel::numeric(rel::infer_type(*target, in)))
        throw ValidationError("training.target", "target expression is not numeric");
    exprs.push_back({"__y", rel::call("float", {target})});

    auto proj = std::make_shared<rel::Project>(std::shared_ptr<rel::Operator>(&op, [](rel::Operator*) {}), exprs);
    rel::MaterializeOptions mo;
    mo.packed_groups = {t.features};
    rel::ColumnBuffer buf = rel::materialize(g, *proj, mo);
    boundary::ConversionReport conv;
    tensor::Tensor x = boundary::buffer_to_tensor(g, buf, t.features, &conv);
    tensor::Tensor y = boundary::buffer_to_tensor(g, buf, {"__y"}, &conv);

    auto model = std::make_shared<tensor::Mlp3>(tensor::stage_mlp3(g, tensor::init_mlp3(t.dims, t.seed), tensor::Head::Regress));
    StagedValue rows = buf.rows;
    StagedValue bs = g.i64(t.batch_size);
    StagedValue batches = g.div(g.add(rows, g.i64(t.batch_size - 1)), bs);
    g.staged_loop(g.i64(t.epochs), [&](StagedValue epoch) {
        StagedValue acc = g.var_new(g.f64(0.0));
        g.staged_loop(batches, [&](StagedValue b) {
            StagedValue start = g.mul(b, bs);
            StagedValue n = g.min(bs, g.sub(rows, start));
            tensor::Tensor xb = tensor::row_slice(g, x, start, n);
            tensor::Tensor yb = tensor::row_slice(g, y, start, n);
            StagedValue batch_loss;
            {
                tensor::Tape tape;
                tensor::GradScope scope(g, tape);
                tensor::Tensor pred = tensor::mlp3_forward(g, xb, *model);
                tensor::Tensor loss = tensor::mse_loss(g, pred, yb);
                batch_loss = tensor::scalar_value(g, loss);
                tensor::backward(g, loss);
            }
            tensor::sgd_step(g, model->parameters(), t.lr);
            g.var_write(acc, g.add(g.var_read(acc), g.mul(batch_loss, g.to_f64(n))));
        });
        g.print_row({g.add(epoch, g.i64(1)), g.div(g.var_read(acc), g.to_f64(rows))});
    });
    tensor::dump_parameters(g, model->parameters());
    return model;
}

// One generated program, ready to run repeatedly.
class Program {
public:
    Program(IrGraph g, Backend backend, bool blas, const ToolchainConfig& tc)
        : graph_(optimize(g)), sched_(schedule(graph_)), backend_(backend), tc_(tc) {
        if (backend_ == Backend::Compile) {
            EmitOptions eo;
            eo.use_cblas = blas;
            source_ = emit(graph_, sched_, eo);
            bin_ = compile_program(source_, tc_);
        }
    }
    ~Program() {
        if (bin_ && !tc_.keep_files) remove_compiled(*bin_);
    }
    Program(const Program&) = delete;
    Program& operator=(const Program&) = delete;

    RunResult run(const std::map<int64_t, std::string>& paths = {}) const {
        if (backend_ == Backend::Interpret) {
            InterpretOptions io;
            io.input_paths = paths;
            return interpret(graph_, sched_, io);
        }
        RunInputs ri;
        int64_t n = paths.empty() ? 0 : paths.rbegin()->first + 1;
        for (int64_t i = 0; i < n; ++i) {
            auto it = paths.find(i);
            ri.paths.push_back(it == paths.end() ? std::string() : it->second);
        }
        return run_compiled(*bin_, ri);
    }

    const IrGraph& graph() const { return graph_; }
    double compile_seconds() const { return bin_ ? bin_->compile_seconds : 0.0; }

private:
    IrGraph graph_;
    Schedule sched_;
    Backend backend_;
    ToolchainConfig tc_;
    GeneratedProgram source_;
    std::optional<CompiledProgram> bin_;
};

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string s;
    std::size_t n = 0;
    for (auto& l : lines) n += l.size() + 1;
    s.reserve(n);
    for (auto& l : lines) {
        s += l;
        s += '\n';
    }
    return s;
}

inline void merge_counters(std::map<std::string, int64_t>& dst, const std::map<std::string, int64_t>& src) {
    for (auto& [k, v] : src) dst[k] += v;
}

inline std::atomic<uint64_t>& boundary_counter() {
    static std::atomic<uint64_t> c{0};
    return c;
}

}  // namespace detail

// A staged (and, for the compiled backend, compiled) pipeline. execute()
// may be called repeatedly; each call is one complete run.
class PreparedPipeline {
public:
    PreparedPipeline(PipelineSpec spec, const RunOptions& opts) : spec_(std::move(spec)), opts_(opts) {
        backend_ = opts.backend.value_or(spec_.backend);
        baseline_ = opts.baseline.value_or(spec_.baseline);
        validate(spec_);
        detail::check_inputs_exist(spec_);
        registry_ = detail::build_registry(spec_);
        if (baseline_ == Baseline::Fused) prepare_fused();
        else prepare_boundary();
    }
    ~PreparedPipeline() {
        if (!boundary_file_.empty()) {
            std::error_code ec;
            std::filesystem::remove(boundary_file_, ec);
        }
    }
    PreparedPipeline(const PreparedPipeline&) = delete;
    PreparedPipeline& operator=(const PreparedPipeline&) = delete;

    Backend backend() const { return backend_; }
    Baseline baseline() const { return baseline_; }
    const PipelineSpec& spec() const { return spec_; }
    double compile_seconds() const {
        return (main_ ? main_->compile_seconds() : 0.0) + (part1_ ? part1_->compile_seconds() : 0.0);
    }
    // Graph of the final (or only) program, after optimization.
    const IrGraph& graph() const { return main_->graph(); }

    PipelineResult execute() {
        PipelineResult out;
        if (baseline_ == Baseline::Fused) {
            out.result = main_->run();
            out.result.timings["import"] = 0.0;
            out.result.timings["export"] = 0.0;
        } else {
            RunResult p1 = cached_part1_ ? std::move(*cached_part1_) : part1_->run();
            double exp = cached_part1_ ? cached_export_ : write_boundary(p1);
            cached_part1_.reset();
            RunResult p2 = main_->run({{boundary_index_, boundary_file_}});
            RunResult r = p2;
            r.timings.clear();
            r.timings["load"] = p1.timing("load");
            r.timings["import"] = p2.timing("load");
            r.timings["export"] = exp;
            r.timings["total"] = p1.timing("total") + exp + p2.timing("total");
            r.timings["process"] = std::max(0.0, r.timings["total"] - r.timings["load"] - exp - r.timings["import"]);
            r.counters.clear();
            detail::merge_counters(r.counters, p1.counters);
            detail::merge_counters(r.counters, p2.counters);
            r.alloc_bytes = p1.alloc_bytes + p2.alloc_bytes;
            out.result = std::move(r);
        }
        if (backend_ == Backend::Compile) out.result.timings["compile"] = compile_seconds();
        finish(out);
        return out;
    }

private:
    PipelineSpec spec_;
    RunOptions opts_;
    Backend backend_ = Backend::Interpret;
    Baseline baseline_ = Baseline::Fused;
    boundary::UdfRegistry registry_;
    std::unique_ptr<detail::Program> main_, part1_;
    std::shared_ptr<tensor::Mlp3> model_;
    std::string boundary_file_;
    int64_t boundary_index_ = 0;
    std::optional<RunResult> cached_part1_;
    double cached_export_ = 0.0;

    void stage_tail(IrGraph& g, rel::PlanContext& ctx, const rel::PlanPtr& plan) {
        tensor::MatmulFormScope mm(spec_.matmul);
        rel::OpPtr op = rel::compile_plan(plan, ctx);
        if (spec_.training) model_ = detail::stage_training(g, *op, *spec_.training);
        else rel::print_rows(g, *op);
    }

    void prepare_fused() {
        IrGraph g;
        rel::PlanContext ctx = detail::plan_context(spec_, registry_, opts_.threads);
        stage_tail(g, ctx, spec_.plan);
        main_ = std::make_unique<detail::Program>(std::move(g), backend_, spec_.blas, opts_.toolchain);
    }

    // Splits below the lowest UDF node, or after the whole plan for training.
    void prepare_boundary() {
        rel::PlanPtr first, rest;
        std::vector<rel::PlanPtr> udfs;
        rel::plan_collect(spec_.plan, rel::PlanKind::Udf, udfs);
        if (spec_.training) {
            first = spec_.plan;
            rest = rel::plan_scan("__boundary");
        } else if (!udfs.empty()) {
            first = udfs.front()->child();
            rest = rel::plan_replace(spec_.plan, first.get(), rel::plan_scan("__boundary"));
        } else {
            throw ValidationError("baseline", "csv-boundary needs a UDF or a training section to split at");
        }

        IrGraph g1;
        rel::PlanContext ctx1 = detail::plan_context(spec_, registry_, opts_.threads);
        rel::OpPtr op1 = rel::compile_plan(first, ctx1);
        rel::RelSchema boundary_schema = op1->schema();
        rel::print_rows(g1, *op1);
        part1_ = std::make_unique<detail::Program>(std::move(g1), backend_, false, opts_.toolchain);

        std::filesystem::path dir = opts_.work_dir.empty() ? std::filesystem::temp_directory_path() / "unistage-boundary"
                                                           : std::filesystem::path(opts_.work_dir);
        std::filesystem::create_directories(dir);
        boundary_file_ = (dir / ("b" + std::to_string(::getpid()) + "-" + std::to_string(detail::boundary_counter()++) +
                                 ".csv"))
                             .string();
        // The second program is staged against real boundary data, since a
        // scan builds its string dictionary while staging.
        cached_part1_ = part1_->run();
        cached_export_ = write_boundary(*cached_part1_);

        PipelineSpec s2 = spec_;
        s2.inputs.push_back({"__boundary", boundary_file_, boundary_schema, false});
        boundary_index_ = static_cast<int64_t>(s2.inputs.size() - 1);
        IrGraph g2;
        rel::PlanContext ctx2 = detail::plan_context(s2, registry_, opts_.threads);
        stage_tail(g2, ctx2, rest);
        main_ = std::make_unique<detail::Program>(std::move(g2), backend_, spec_.blas, opts_.toolchain);
    }

    double write_boundary(const RunResult& p1) const {
        auto t0 = std::chrono::steady_clock::now();
        {
            std::ofstream f(boundary_file_, std::ios::binary | std::ios::trunc);
            if (!f) throw EnvironmentError("cannot write boundary file '" + boundary_file_ + "'");
            std::string text = detail::join_lines(p1.lines);
            f.write(text.data(), static_cast<std::streamsize>(text.size()));
            if (!f) throw EnvironmentError("cannot write boundary file '" + boundary_file_ + "'");
        }
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    void finish(PipelineResult& out) {
        out.report.timings = out.result.timings;
        out.report.counters = out.result.counters;
        out.report.alloc_bytes = out.result.alloc_bytes;
        out.report.rows = static_cast<int64_t>(out.result.lines.size());
        if (!spec_.training) return;
        for (auto& row : out.result.rows()) {
            if (row.size() != 2) throw RunError("training program printed a malformed epoch row");
            out.epoch_losses.push_back(std::strtod(row[1].c_str(), nullptr));
        }
        out.trained = tensor::parameters_from_aux(out.result.aux, model_->parameters());
        if (!spec_.training->checkpoint_out.empty())
            tensor::write_checkpoint(spec_.resolve(spec_.training->checkpoint_out), out.trained);
    }
};

inline PipelineResult run_pipeline(const PipelineSpec& spec, const RunOptions& opts = {}) {
    PreparedPipeline p(spec, opts);
    return p.execute();
}

inline PipelineResult run_pipeline(const std::string& spec_path, const RunOptions& opts = {}) {
    return run_pipeline(load_spec(spec_path), opts);
}

inline PipelineResult run_baseline_csv_boundary(const PipelineSpec& spec, RunOptions opts = {}) {
    opts.baseline = Baseline::CsvBoundary;
    return run_pipeline(spec, opts);
}

inline PipelineResult run_baseline_csv_boundary(const std::string& spec_path, RunOptions opts = {}) {
    return run_baseline_csv_boundary(load_spec(spec_path), std::move(opts));
}

// Generated C source of the fused program.
inline GeneratedProgram emit_pipeline(const PipelineSpec& spec, const RunOptions& opts = {}) {
    validate(spec);
    detail::check_inputs_exist(spec);
    boundary::UdfRegistry reg = detail::build_registry(spec);
    IrGraph g;
    rel::PlanContext ctx = detail::plan_context(spec, reg, opts.threads);
    {
        tensor::MatmulFormScope mm(spec.matmul);
        rel::OpPtr op = rel::compile_plan(spec.plan, ctx);
        if (spec.training) detail::stage_training(g, *op, *spec.training);
        else rel::print_rows(g, *op);
    }
    IrGraph opt = optimize(g);
    EmitOptions eo;
    eo.use_cblas = spec.blas;
    return emit(opt, eo);
}

}  // namespace unistage::pipeline
