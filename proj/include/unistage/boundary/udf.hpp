#pragma once

// UDF registry and the three UDF execution operators. Each operator appends
// one float64 column holding the UDF result to every record of its child.
//
//  scalar      model staged inline in the per-record callback
//  vectorized  records accumulate into a batch; the model runs once per
//              full batch and once for the final partial batch
//  pooled      full batches go through a bounded queue to worker threads;
//              results are merged back in batch order after the input ends

#include <cctype>
#include <map>

#include "unistage/boundary/convert.hpp"
#include "unistage/relational/operators.hpp"
#include "unistage/tensor/mlp.hpp"

namespace unistage::boundary {

// Runs the model on a Tensor[batch, arity] and returns a Tensor[batch, 1].
using UdfKernel = std::function<Tensor(IrGraph&, const Tensor&)>;
// Stages the model's constants (at the program root) and returns its kernel.
using UdfBuilder = std::function<UdfKernel(IrGraph&)>;

enum class UdfMode { Scalar, Vectorized, Pooled };

inline const char* udf_mode_name(UdfMode m) {
    switch (m) {
        case UdfMode::Scalar: return "scalar";
        case UdfMode::Vectorized: return "vectorized";
        case UdfMode::Pooled: return "pooled";
    }
    return "?";
}

inline UdfMode parse_udf_mode(const std::string& s) {
    if (s == "scalar") return UdfMode::Scalar;
    if (s == "vectorized") return UdfMode::Vectorized;
    if (s == "pooled") return UdfMode::Pooled;
    throw StagingError("unknown UDF mode '" + s + "'");
}

struct UdfDef {
    std::string name;
    int64_t arity = 1;  // numeric argument columns
    UdfBuilder builder;
    UdfMode mode_hint = UdfMode::Scalar;
};

class UdfRegistry {
public:
    void add(UdfDef def) {
        if (def.name.empty()) throw StagingError("UDF name must not be empty");
        if (def.arity < 1) throw StagingError("UDF '" + def.name + "' must take at least one argument");
        if (!def.builder) throw StagingError("UDF '" + def.name + "' has no builder");
        if (defs_.count(def.name)) throw StagingError("UDF '" + def.name + "' is already registered");
        std::string n = def.name;
        defs_.emplace(std::move(n), std::move(def));
    }
    bool contains(const std::string& name) const { return defs_.count(name) != 0; }
    const UdfDef& get(const std::string& name) const {
        auto it = defs_.find(name);
        if (it == defs_.end()) throw StagingError("UDF '" + name + "' is not registered");
        return it->second;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> v;
        for (auto& [k, _] : defs_) v.push_back(k);
        return v;
    }

private:
    std::map<std::string, UdfDef> defs_;
};

struct BatchConfig {
    int64_t batch_size = 1024;
    int64_t pool_workers = 0;  // 0: no pool
    int64_t queue_capacity = 4;

    void validate() const {
        if (batch_size < 1) throw StagingError("batch-size must be at least 1");
        if (pool_workers < 0) throw StagingError("pool-workers must not be negative");
        if (queue_capacity < 1) throw StagingError("queue-capacity must be positive");
        if (pool_workers > 0 && queue_capacity < 2 * pool_workers)
            throw StagingError("queue-capacity must be at least 2 x pool-workers");
    }
};

inline constexpr const char* kUdfCallCounter = "udf_kernel_calls";

// ---- model UDFs -----------------------------------------------------------------

inline UdfDef mlp3_udf(const std::string& name, const tensor::Mlp3Weights& w, tensor::Head head) {
    UdfDef d;
    d.name = name;
    d.arity = w.dims.at(0);
    if (w.dims.at(3) != 1) throw StagingError("UDF '" + name + "': the model must produce one output");
    d.builder = [w, head](IrGraph& g) -> UdfKernel {
        auto model = std::make_shared<tensor::Mlp3>(tensor::stage_mlp3(g, w, head));
        return [model](IrGraph& g, const Tensor& x) { return tensor::mlp3_forward(g, x, *model); };
    };
    return d;
}

// y = x . w + bias
inline UdfDef dot_product_udf(const std::string& name, std::vector<double> weights, double bias = 0.0) {
    UdfDef d;
    d.name = name;
    d.arity = static_cast<int64_t>(weights.size());
    d.builder = [weights, bias](IrGraph& g) -> UdfKernel {
        auto w = std::make_shared<Tensor>(
            g.at_root([&] { return tensor::from_literals(g, {static_cast<int64_t>(weights.size()), 1}, weights); }));
        auto b = std::make_shared<Tensor>(g.at_root([&] { return tensor::from_literals(g, {1}, {bias}); }));
        return [w, b](IrGraph& g, const Tensor& x) { return tensor::add_bias(g, tensor::matmul(g, x, *w), *b); };
    };
    return d;
}

// Returns its single argument column.
inline UdfDef identity_udf(const std::string& name) {
    UdfDef d;
    d.name = name;
    d.arity = 1;
    d.builder = [](IrGraph&) -> UdfKernel { return [](IrGraph&, const Tensor& x) { return x; }; };
    return d;
}

// ---- operator ----------------------------------------------------------------------

class UdfApply : public rel::Operator {
public:
    UdfApply(rel::OpPtr child, const UdfDef& def, std::vector<std::string> args, std::string out, UdfMode mode,
             BatchConfig cfg = {})
        : child_(std::move(child)), def_(def), args_(std::move(args)), mode_(mode), cfg_(cfg) {
        cfg_.validate();
        if (mode_ == UdfMode::Pooled && cfg_.pool_workers < 1)
            throw StagingError("pooled UDF '" + def_.name + "' needs pool-workers >= 1");
        if (static_cast<int64_t>(args_.size()) != def_.arity)
            throw StagingError("UDF '" + def_.name + "' takes " + std::to_string(def_.arity) + " arguments, got " +
                               std::to_string(args_.size()));
        const rel::RelSchema& cs = child_->schema();
        for (auto& a : args_) {
            FieldType t = cs[cs.index_of(a)].type;
            if (t == FieldType::StringDict)
                throw StagingError("UDF '" + def_.name + "': argument '" + a + "' is not numeric");
            arg_idx_.push_back(cs.index_of(a));
        }
        schema_ = cs;
        schema_.add(out, FieldType::Float64);
    }

    const rel::RelSchema& schema() const override { return schema_; }
    std::string name() const override { return std::string("udf-") + udf_mode_name(mode_); }
    UdfMode mode() const { return mode_; }

    void exec(IrGraph& g, const rel::Callback& cb) override {
        UdfKernel kernel = def_.builder(g);
        switch (mode_) {
            case UdfMode::Scalar: exec_scalar(g, cb, kernel); break;
            case UdfMode::Vectorized: exec_vectorized(g, cb, kernel); break;
            case UdfMode::Pooled: exec_pooled(g, cb, kernel); break;
        }
    }

private:
    rel::OpPtr child_;
    UdfDef def_;
    std::vector<std::string> args_;
    std::vector<std::size_t> arg_idx_;
    UdfMode mode_;
    BatchConfig cfg_;
    rel::RelSchema schema_;

    StagedValue arg_value(IrGraph& g, const rel::Record& r, std::size_t a) const {
        StagedValue v = r.value(arg_idx_[a]);
        return v.type == SType::f64() ? v : g.to_f64(v);
    }

    void emit(IrGraph& g, const rel::Callback& cb, std::vector<StagedValue> vals, std::vector<StagedValue> dicts,
              StagedValue result) const {
        vals.push_back(result);
        dicts.push_back(StagedValue::unit());
        cb(rel::Record(g, schema_, std::move(vals), std::move(dicts)));
    }

    static Tensor checked(const UdfDef& d, const Tensor& y) {
        if (y.rank() != 2 || y.shape[1] != 1)
            throw StagingError("UDF '" + d.name + "' must return a [batch,1] tensor, got " + y.shape_str());
        return y;
    }

    void exec_scalar(IrGraph& g, const rel::Callback& cb, const UdfKernel& kernel) {
        const int64_t arity = def_.arity;
        child_->exec(g, [&](const rel::Record& r) {
            Tensor x = tensor::alloc(g, {1, arity});
            for (int64_t a = 0; a < arity; ++a) g.store(x.data, g.i64(a), arg_value(g, r, static_cast<std::size_t>(a)));
            Tensor y = checked(def_, kernel(g, x));
            g.counter_inc(kUdfCallCounter);
            emit(g, cb, r.values(), r.dicts(), tensor_to_value(g, y));
        });
    }

    // Companion storage keeps every incoming field of the buffered records.
    struct Companions {
        std::vector<StagedValue> cols;
        std::vector<StagedValue> dicts;
    };

    void exec_vectorized(IrGraph& g, const rel::Callback& cb, const UdfKernel& kernel) {
        const int64_t arity = def_.arity, bs = cfg_.batch_size;
        const rel::RelSchema& cs = child_->schema();
        StagedValue batch = g.array_new(Kind::Float64, g.i64(bs * arity));
        Companions comp;
        for (auto& f : cs.fields()) comp.cols.push_back(g.array_new(rel::detail::elem_kind(f.type), g.i64(bs)));
        comp.dicts.assign(cs.size(), StagedValue::unit());
        StagedValue fill = g.var_new(g.i64(0));

        auto flush = [&](StagedValue n) {
            Tensor x = tensor::view(g, batch, {tensor::kDynamic, arity}, {arity, 1}, 0, n);
            Tensor y = checked(def_, kernel(g, x));
            g.counter_inc(kUdfCallCounter);
            g.kernel_loop(n, [&](StagedValue i) {
                std::vector<StagedValue> vals;
                for (std::size_t f = 0; f < cs.size(); ++f) vals.push_back(g.load(comp.cols[f], i));
                emit(g, cb, vals, comp.dicts, tensor_to_value(g, y, i));
            });
            g.var_write(fill, g.i64(0));
        };

        child_->exec(g, [&](const rel::Record& r) {
            StagedValue k = g.var_read(fill);
            for (int64_t a = 0; a < arity; ++a)
                g.store(batch, g.add(g.mul(k, g.i64(arity)), g.i64(a)), arg_value(g, r, static_cast<std::size_t>(a)));
            for (std::size_t f = 0; f < cs.size(); ++f) {
                g.store(comp.cols[f], k, r.value(f));
                comp.dicts[f] = r.dict(f);
            }
            StagedValue k1 = g.add(k, g.i64(1));
            g.var_write(fill, k1);
            g.kernel_if(
                g.eq(k1, g.i64(bs)),
                [&] {
                    flush(k1);
                    return StagedValue::unit();
                },
                rel::detail::unit_branch);
        });
        StagedValue rest = g.var_read(fill);
        g.kernel_if(
            g.gt(rest, g.i64(0)),
            [&] {
                flush(rest);
                return StagedValue::unit();
            },
            rel::detail::unit_branch);
    }

    void exec_pooled(IrGraph& g, const rel::Callback& cb, const UdfKernel& kernel) {
        const int64_t arity = def_.arity, bs = cfg_.batch_size;
        const rel::RelSchema& cs = child_->schema();
        std::string base = "udf_" + def_.name + "_batch";
        for (char& c : base)
            if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
        std::string fname = base;
        for (int k = 1; g.has_func(fname); ++k) fname = base + "_" + std::to_string(k);
        FuncHandle fn = g.staged_func(fname, {SType::array(Kind::Float64), SType::i64()}, [&](const std::vector<StagedValue>& p) {
            Tensor x = tensor::view(g, p[0], {tensor::kDynamic, arity}, {arity, 1}, 0, p[1]);
            Tensor y = checked(def_, kernel(g, x));
            g.counter_inc(kUdfCallCounter);
            if (y.contiguous() && y.data.type == SType::array(Kind::Float64)) return y.data;
            Tensor c = tensor::alloc(g, {tensor::kDynamic, 1}, p[1]);
            g.kernel_loop(p[1], [&](StagedValue i) { g.store(c.data, i, tensor_to_value(g, y, i)); });
            return c.data;
        });
        StagedValue pool = g.reflect(Op::PoolNew, SType::pool(), {fn.def}, {cfg_.pool_workers, cfg_.queue_capacity, arity});
        StagedValue batch = g.array_new(Kind::Float64, g.i64(bs * arity));
        Companions comp;
        for (auto& f : cs.fields()) comp.cols.push_back(g.vec_new(rel::detail::elem_kind(f.type)));
        comp.dicts.assign(cs.size(), StagedValue::unit());
        StagedValue fill = g.var_new(g.i64(0));

        auto submit = [&](StagedValue n) {
            g.reflect(Op::PoolSubmit, SType::unit(), {pool.node, batch.node, n.node});
            g.var_write(fill, g.i64(0));
        };

        child_->exec(g, [&](const rel::Record& r) {
            StagedValue k = g.var_read(fill);
            for (int64_t a = 0; a < arity; ++a)
                g.store(batch, g.add(g.mul(k, g.i64(arity)), g.i64(a)), arg_value(g, r, static_cast<std::size_t>(a)));
            for (std::size_t f = 0; f < cs.size(); ++f) {
                g.push(comp.cols[f], r.value(f));
                comp.dicts[f] = r.dict(f);
            }
            StagedValue k1 = g.add(k, g.i64(1));
            g.var_write(fill, k1);
            g.kernel_if(
                g.eq(k1, g.i64(bs)),
                [&] {
                    submit(k1);
                    return StagedValue::unit();
                },
                rel::detail::unit_branch);
        });
        StagedValue rest = g.var_read(fill);
        g.kernel_if(
            g.gt(rest, g.i64(0)),
            [&] {
                submit(rest);
                return StagedValue::unit();
            },
            rel::detail::unit_branch);
        StagedValue batches = g.reflect(Op::PoolFinish, SType::i64(), {pool.node});

        // deterministic merge in submission order
        StagedValue row = g.var_new(g.i64(0));
        g.kernel_loop(batches, [&](StagedValue s) {
            StagedValue res = g.reflect(Op::PoolResult, SType::array(Kind::Float64), {pool.node, s.node});
            StagedValue n = g.reflect(Op::PoolRows, SType::i64(), {pool.node, s.node});
            g.kernel_loop(n, [&](StagedValue i) {
                StagedValue at = g.var_read(row);
                std::vector<StagedValue> vals;
                for (std::size_t f = 0; f < cs.size(); ++f) vals.push_back(g.load(comp.cols[f], at));
                emit(g, cb, vals, comp.dicts, g.load(res, i));
                g.var_write(row, g.add(at, g.i64(1)));
            });
        });
    }
};

inline rel::OpPtr apply_udf_scalar(rel::OpPtr child, const UdfRegistry& reg, const std::string& name,
                                   std::vector<std::string> args, std::string out) {
    return std::make_shared<UdfApply>(std::move(child), reg.get(name), std::move(args), std::move(out), UdfMode::Scalar);
}

inline rel::OpPtr apply_udf_vectorized(rel::OpPtr child, const UdfRegistry& reg, const std::string& name,
                                       std::vector<std::string> args, std::string out, BatchConfig cfg) {
    return std::make_shared<UdfApply>(std::move(child), reg.get(name), std::move(args), std::move(out),
                                      UdfMode::Vectorized, cfg);
}

inline rel::OpPtr apply_udf_pooled(rel::OpPtr child, const UdfRegistry& reg, const std::string& name,
                                   std::vector<std::string> args, std::string out, BatchConfig cfg) {
    return std::make_shared<UdfApply>(std::move(child), reg.get(name), std::move(args), std::move(out), UdfMode::Pooled,
                                      cfg);
}

}  // namespace unistage::boundary
