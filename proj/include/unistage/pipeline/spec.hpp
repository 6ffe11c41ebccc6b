#pragma once

// PipelineSpec: the JSON description of a combined query + model job.
// The schema is documented in README.md ("Pipeline spec format").

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "unistage/boundary/udf.hpp"
#include "unistage/relational/plan.hpp"

namespace unistage::pipeline {

using json = nlohmann::ordered_json;

enum class Backend { Interpret, Compile };
enum class Baseline { Fused, CsvBoundary };

inline const char* backend_name(Backend b) { return b == Backend::Interpret ? "interpret" : "compile"; }
inline const char* baseline_name(Baseline b) { return b == Baseline::Fused ? "fused" : "csv-boundary"; }

inline Backend parse_backend(const std::string& s, const std::string& field = "backend") {
    if (s == "interpret") return Backend::Interpret;
    if (s == "compile") return Backend::Compile;
    throw ValidationError(field, "expected 'interpret' or 'compile', got '" + s + "'");
}

inline Baseline parse_baseline(const std::string& s, const std::string& field = "baseline") {
    if (s == "fused") return Baseline::Fused;
    if (s == "csv-boundary") return Baseline::CsvBoundary;
    throw ValidationError(field, "expected 'fused' or 'csv-boundary', got '" + s + "'");
}

enum class ModelKind { Mlp3Regress, Mlp3Classify, DotProduct };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Mlp3Regress: return "mlp3-regress";
        case ModelKind::Mlp3Classify: return "mlp3-classify";
        case ModelKind::DotProduct: return "dot-product";
    }
    return "?";
}

struct UdfSpec {
    std::string name;
    ModelKind model = ModelKind::Mlp3Classify;
    std::vector<int64_t> dims;     // mlp3: in, hidden1, hidden2, 1
    uint64_t seed = 0;             // weight initialization when no checkpoint
    std::string checkpoint;        // optional; relative to the spec file
    std::vector<double> weights;   // dot-product
    double bias = 0.0;             // dot-product
    boundary::UdfMode mode = boundary::UdfMode::Scalar;
    boundary::BatchConfig batch;
};

struct TrainingSpec {
    std::vector<std::string> features;  // float64 plan output columns
    std::string target;                 // expression over plan output columns
    std::vector<int64_t> dims;          // in must equal |features|, out must be 1
    int64_t epochs = 1;
    int64_t batch_size = 64;
    double lr = 0.01;
    uint64_t seed = 0;
    std::string checkpoint_out;  // optional; trained parameters are written here
};

struct PipelineSpec {
    std::vector<rel::InputDecl> inputs;
    rel::PlanPtr plan;
    std::vector<UdfSpec> udfs;
    std::optional<TrainingSpec> training;
    Backend backend = Backend::Interpret;
    Baseline baseline = Baseline::Fused;
    tensor::MatmulForm matmul = tensor::MatmulForm::Loop;
    bool blas = false;  // bind kernel-matmul to cblas in emitted code
    std::filesystem::path base_dir;  // relative paths resolve here; not serialized

    const UdfSpec* find_udf(const std::string& n) const {
        for (auto& u : udfs)
            if (u.name == n) return &u;
        return nullptr;
    }
    std::string resolve(const std::string& p) const {
        if (p.empty() || std::filesystem::path(p).is_absolute() || base_dir.empty()) return p;
        return (base_dir / p).string();
    }
};

// ---- reading -------------------------------------------------------------------

namespace detail {

struct Reader {
    const json& j;
    std::string path;

    const json& need(const char* key) const {
        if (!j.is_object()) throw ValidationError(path, "expected an object");
        auto it = j.find(key);
        if (it == j.end()) throw ValidationError(path + "." + key, "required field is missing");
        return *it;
    }
    bool has(const char* key) const { return j.is_object() && j.contains(key); }
    Reader at(const char* key) const { return {need(key), path + "." + key}; }
    Reader at(std::size_t i) const { return {j.at(i), path + "[" + std::to_string(i) + "]"}; }

    template <typename T>
    T as(const char* what) const {
        try {
            return j.get<T>();
        } catch (const json::exception&) {
            throw ValidationError(path, std::string("expected ") + what);
        }
    }
    std::string str(const char* key) const { return at(key).as<std::string>("a string"); }
    std::string str_or(const char* key, std::string d) const { return has(key) ? str(key) : d; }
    int64_t int_or(const char* key, int64_t d) const { return has(key) ? at(key).as<int64_t>("an integer") : d; }
    double num_or(const char* key, double d) const { return has(key) ? at(key).as<double>("a number") : d; }
    bool bool_or(const char* key, bool d) const { return has(key) ? at(key).as<bool>("a boolean") : d; }
    std::vector<std::string> strs(const char* key) const { return at(key).as<std::vector<std::string>>("a list of strings"); }
    std::vector<int64_t> ints(const char* key) const { return at(key).as<std::vector<int64_t>>("a list of integers"); }
    std::size_t size() const {
        if (!j.is_array()) throw ValidationError(path, "expected a list");
        return j.size();
    }
};

inline rel::ExprPtr read_expr(const Reader& r) {
    try {
        return rel::parse_expr(r.as<std::string>("an expression string"));
    } catch (const StagingError& e) {
        throw ValidationError(r.path, e.what());
    }
}

inline rel::PlanPtr read_plan(const Reader& r) {
    std::string op = r.str("op");
    rel::PlanPtr p;
    if (op == "scan") {
        p = rel::plan_scan(r.str("input"));
    } else if (op == "filter") {
        p = rel::plan_filter(read_plan(r.at("child")), read_expr(r.at("pred")));
    } else if (op == "project") {
        std::vector<rel::NamedExpr> exprs;
        Reader list = r.at("exprs");
        for (std::size_t i = 0; i < list.size(); ++i) {
            Reader e = list.at(i);
            exprs.push_back({e.str("name"), read_expr(e.at("expr"))});
        }
        p = rel::plan_project(read_plan(r.at("child")), std::move(exprs));
    } else if (op == "join") {
        p = rel::plan_join(read_plan(r.at("left")), read_plan(r.at("right")), r.strs("left_keys"), r.strs("right_keys"));
    } else if (op == "group_by") {
        std::vector<rel::Aggregate> aggs;
        if (r.has("aggs")) {
            Reader list = r.at("aggs");
            for (std::size_t i = 0; i < list.size(); ++i) {
                Reader a = list.at(i);
                rel::Aggregate ag;
                try {
                    ag.fn = rel::parse_agg(a.str("fn"));
                } catch (const StagingError& e) {
                    throw ValidationError(a.path + ".fn", e.what());
                }
                if (a.has("expr")) ag.expr = read_expr(a.at("expr"));
                ag.name = a.str("name");
                aggs.push_back(std::move(ag));
            }
        }
        p = rel::plan_group_by(read_plan(r.at("child")), r.has("keys") ? r.strs("keys") : std::vector<std::string>{},
                               std::move(aggs));
    } else if (op == "udf") {
        p = rel::plan_udf(read_plan(r.at("child")), r.str("name"), r.strs("args"), r.str("output"));
    } else {
        throw ValidationError(r.path + ".op", "unknown plan operator '" + op + "'");
    }
    return p;
}

inline boundary::BatchConfig read_batch(const Reader& r) {
    boundary::BatchConfig b;
    b.batch_size = r.int_or("batch_size", b.batch_size);
    b.pool_workers = r.int_or("pool_workers", b.pool_workers);
    b.queue_capacity = r.int_or("queue_capacity", std::max<int64_t>(b.queue_capacity, 2 * b.pool_workers));
    try {
        b.validate();
    } catch (const StagingError& e) {
        throw ValidationError(r.path, e.what());
    }
    return b;
}

inline void plan_names(const rel::PlanPtr& p, std::vector<std::string>& scans, std::vector<std::pair<std::string, int>>& udfs) {
    if (p->kind == rel::PlanKind::Scan) scans.push_back(p->input);
    if (p->kind == rel::PlanKind::Udf) udfs.push_back({p->udf, 0});
    for (auto& c : p->children) plan_names(c, scans, udfs);
}

}  // namespace detail

// Checks cross references that do not need the input files.
inline void validate(const PipelineSpec& s) {
    if (s.inputs.empty()) throw ValidationError("inputs", "at least one input is required");
    for (std::size_t i = 0; i < s.inputs.size(); ++i)
        for (std::size_t k = 0; k < i; ++k)
            if (s.inputs[i].name == s.inputs[k].name)
                throw ValidationError("inputs[" + std::to_string(i) + "].name", "duplicate input '" + s.inputs[i].name + "'");
    if (!s.plan) throw ValidationError("plan", "required field is missing");
    std::vector<std::string> scans;
    std::vector<std::pair<std::string, int>> udfs;
    detail::plan_names(s.plan, scans, udfs);
    for (auto& n : scans) {
        bool ok = false;
        for (auto& in : s.inputs) ok = ok || in.name == n;
        if (!ok) throw ValidationError("plan", "scan of undeclared input '" + n + "'");
    }
    for (auto& [n, _] : udfs)
        if (!s.find_udf(n)) throw ValidationError("plan", "UDF '" + n + "' is not declared in udfs");
    for (std::size_t i = 0; i < s.udfs.size(); ++i) {
        const UdfSpec& u = s.udfs[i];
        std::string f = "udfs[" + std::to_string(i) + "]";
        for (std::size_t k = 0; k < i; ++k)
            if (s.udfs[k].name == u.name) throw ValidationError(f + ".name", "duplicate UDF '" + u.name + "'");
        if (u.model == ModelKind::DotProduct) {
            if (u.weights.empty()) throw ValidationError(f + ".weights", "dot-product needs at least one weight");
        } else {
            if (u.dims.size() != 4) throw ValidationError(f + ".dims", "mlp3 needs 4 layer dimensions");
            for (int64_t d : u.dims)
                if (d < 1) throw ValidationError(f + ".dims", "layer dimensions must be positive");
            if (u.dims[3] != 1) throw ValidationError(f + ".dims", "a UDF model must have exactly one output");
        }
        if (u.mode == boundary::UdfMode::Pooled && u.batch.pool_workers < 1)
            throw ValidationError(f + ".batch.pool_workers", "pooled mode needs at least one worker");
    }
    if (s.training) {
        const TrainingSpec& t = *s.training;
        if (!udfs.empty()) throw ValidationError("training", "training inside a query with UDFs is not supported");
        if (t.features.empty()) throw ValidationError("training.features", "at least one feature is required");
        if (t.target.empty()) throw ValidationError("training.target", "required field is missing");
        if (t.dims.size() != 4) throw ValidationError("training.dims", "mlp3 needs 4 layer dimensions");
        if (t.dims[0] != static_cast<int64_t>(t.features.size()))
            throw ValidationError("training.dims", "input width must equal the number of features");
        if (t.dims[3] != 1) throw ValidationError("training.dims", "the regression head must have one output");
        for (int64_t d : t.dims)
            if (d < 1) throw ValidationError("training.dims", "layer dimensions must be positive");
        if (t.epochs < 1) throw ValidationError("training.epochs", "must be at least 1");
        if (t.batch_size < 1) throw ValidationError("training.batch_size", "must be at least 1");
    }
}

inline PipelineSpec spec_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    detail::Reader r{j, "spec"};
    PipelineSpec s;
    s.base_dir = base_dir;
    {
        detail::Reader list = r.at("inputs");
        for (std::size_t i = 0; i < list.size(); ++i) {
            detail::Reader in = list.at(i);
            rel::InputDecl d;
            d.name = in.str("name");
            d.path = in.str("path");
            d.header = in.bool_or("header", true);
            detail::Reader fields = in.at("schema");
            for (std::size_t k = 0; k < fields.size(); ++k) {
                detail::Reader f = fields.at(k);
                try {
                    d.schema.add(f.str("name"), rel::parse_field_type(f.str("type")));
                } catch (const StagingError& e) {
                    throw ValidationError(f.path, e.what());
                }
            }
            if (d.schema.empty()) throw ValidationError(fields.path, "schema has no fields");
            s.inputs.push_back(std::move(d));
        }
    }
    s.plan = detail::read_plan(r.at("plan"));
    if (r.has("udfs")) {
        detail::Reader list = r.at("udfs");
        for (std::size_t i = 0; i < list.size(); ++i) {
            detail::Reader u = list.at(i);
            UdfSpec us;
            us.name = u.str("name");
            std::string model = u.str("model");
            if (model == "mlp3-regress") us.model = ModelKind::Mlp3Regress;
            else if (model == "mlp3-classify") us.model = ModelKind::Mlp3Classify;
            else if (model == "dot-product") us.model = ModelKind::DotProduct;
            else throw ValidationError(u.path + ".model", "unknown model kind '" + model + "'");
            if (u.has("dims")) us.dims = u.ints("dims");
            us.seed = static_cast<uint64_t>(u.int_or("seed", 0));
            us.checkpoint = u.str_or("checkpoint", "");
            if (u.has("weights")) us.weights = u.at("weights").as<std::vector<double>>("a list of numbers");
            us.bias = u.num_or("bias", 0.0);
            try {
                us.mode = boundary::parse_udf_mode(u.str_or("mode", "scalar"));
            } catch (const StagingError& e) {
                throw ValidationError(u.path + ".mode", e.what());
            }
            if (u.has("batch")) us.batch = detail::read_batch(u.at("batch"));
            s.udfs.push_back(std::move(us));
        }
    }
    if (r.has("training")) {
        detail::Reader t = r.at("training");
        TrainingSpec ts;
        ts.features = t.strs("features");
        ts.target = t.str("target");
        ts.dims = t.ints("dims");
        ts.epochs = t.int_or("epochs", ts.epochs);
        ts.batch_size = t.int_or("batch_size", ts.batch_size);
        ts.lr = t.num_or("lr", ts.lr);
        ts.seed = static_cast<uint64_t>(t.int_or("seed", 0));
        ts.checkpoint_out = t.str_or("checkpoint_out", "");
        try {
            rel::parse_expr(ts.target);
        } catch (const StagingError& e) {
            throw ValidationError(t.path + ".target", e.what());
        }
        s.training = std::move(ts);
    }
    s.backend = parse_backend(r.str_or("backend", "interpret"), "spec.backend");
    s.baseline = parse_baseline(r.str_or("baseline", "fused"), "spec.baseline");
    std::string mm = r.str_or("matmul", "loop");
    if (mm == "loop") s.matmul = tensor::MatmulForm::Loop;
    else if (mm == "kernel") s.matmul = tensor::MatmulForm::Kernel;
    else throw ValidationError("spec.matmul", "expected 'loop' or 'kernel', got '" + mm + "'");
    s.blas = r.bool_or("blas", false);
    validate(s);
    return s;
}

inline PipelineSpec parse_spec(const std::string& text, const std::filesystem::path& base_dir = {}) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError("spec", std::string("malformed JSON: ") + e.what());
    }
    return spec_from_json(j, base_dir);
}

inline PipelineSpec load_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EnvironmentError("cannot read spec '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str(), std::filesystem::path(path).parent_path());
}

// ---- writing -------------------------------------------------------------------

inline json plan_to_json(const rel::PlanPtr& p) {
    json j;
    j["op"] = rel::plan_kind_name(p->kind);
    switch (p->kind) {
        case rel::PlanKind::Scan: j["input"] = p->input; break;
        case rel::PlanKind::Filter:
            j["pred"] = rel::to_string(*p->pred);
            j["child"] = plan_to_json(p->child());
            break;
        case rel::PlanKind::Project: {
            json list = json::array();
            for (auto& e : p->exprs) list.push_back({{"name", e.name}, {"expr", rel::to_string(*e.expr)}});
            j["exprs"] = list;
            j["child"] = plan_to_json(p->child());
            break;
        }
        case rel::PlanKind::Join:
            j["left_keys"] = p->left_keys;
            j["right_keys"] = p->right_keys;
            j["left"] = plan_to_json(p->child(0));
            j["right"] = plan_to_json(p->child(1));
            break;
        case rel::PlanKind::GroupBy: {
            j["keys"] = p->keys;
            json list = json::array();
            for (auto& a : p->aggs) {
                json aj{{"fn", rel::agg_name(a.fn)}, {"name", a.name}};
                if (a.expr) aj["expr"] = rel::to_string(*a.expr);
                list.push_back(aj);
            }
            j["aggs"] = list;
            j["child"] = plan_to_json(p->child());
            break;
        }
        case rel::PlanKind::Udf:
            j["name"] = p->udf;
            j["args"] = p->args;
            j["output"] = p->output;
            j["child"] = plan_to_json(p->child());
            break;
    }
    return j;
}

inline json spec_to_json(const PipelineSpec& s) {
    json j;
    json inputs = json::array();
    for (auto& in : s.inputs) {
        json fields = json::array();
        for (auto& f : in.schema.fields()) fields.push_back({{"name", f.name}, {"type", rel::field_type_name(f.type)}});
        inputs.push_back({{"name", in.name}, {"path", in.path}, {"header", in.header}, {"schema", fields}});
    }
    j["inputs"] = inputs;
    j["plan"] = plan_to_json(s.plan);
    json udfs = json::array();
    for (auto& u : s.udfs) {
        json uj{{"name", u.name}, {"model", model_kind_name(u.model)}};
        if (!u.dims.empty()) uj["dims"] = u.dims;
        uj["seed"] = u.seed;
        if (!u.checkpoint.empty()) uj["checkpoint"] = u.checkpoint;
        if (!u.weights.empty()) uj["weights"] = u.weights;
        if (u.model == ModelKind::DotProduct) uj["bias"] = u.bias;
        uj["mode"] = boundary::udf_mode_name(u.mode);
        uj["batch"] = {{"batch_size", u.batch.batch_size},
                       {"pool_workers", u.batch.pool_workers},
                       {"queue_capacity", u.batch.queue_capacity}};
        udfs.push_back(uj);
    }
    j["udfs"] = udfs;
    if (s.training) {
        const TrainingSpec& t = *s.training;
        json tj{{"features", t.features}, {"target", t.target}, {"dims", t.dims}, {"epochs", t.epochs},
                {"batch_size", t.batch_size}, {"lr", t.lr}, {"seed", t.seed}};
        if (!t.checkpoint_out.empty()) tj["checkpoint_out"] = t.checkpoint_out;
        j["training"] = tj;
    }
    j["backend"] = backend_name(s.backend);
    j["baseline"] = baseline_name(s.baseline);
    j["matmul"] = s.matmul == tensor::MatmulForm::Loop ? "loop" : "kernel";
    j["blas"] = s.blas;
    return j;
}

inline std::string serialize_spec(const PipelineSpec& s) { return spec_to_json(s).dump(2) + "\n"; }

}  // namespace unistage::pipeline
