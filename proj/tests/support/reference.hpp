#pragma once

// Direct reference evaluator for logical plans: tables are vectors of rows,
// joins are nested loops, groups are found by linear search. It shares only
// the plan and expression data structures with the library.
//
// Also: random tables and random plans for the property suites.

#include <cinttypes>
#include <cstring>
#include <random>
#include <variant>

#include "unistage/relational/plan.hpp"

namespace testsupport {

using unistage::rel::Expr;
using unistage::rel::FieldType;

using Value = std::variant<int64_t, double, std::string>;

struct RefTable {
    std::vector<std::string> names;
    std::vector<FieldType> types;
    std::vector<std::vector<Value>> rows;

    std::size_t index(const std::string& n) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return i;
        throw std::runtime_error("reference: no column " + n);
    }
};

inline std::string fmt_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

inline std::string fmt_value(const Value& v) {
    if (auto* i = std::get_if<int64_t>(&v)) return std::to_string(*i);
    if (auto* d = std::get_if<double>(&v)) return fmt_double(*d);
    return std::get<std::string>(v);
}

inline std::vector<std::string> fmt_rows(const RefTable& t) {
    std::vector<std::string> out;
    for (auto& r : t.rows) {
        std::string line;
        for (std::size_t i = 0; i < r.size(); ++i) line += (i ? "," : "") + fmt_value(r[i]);
        out.push_back(line);
    }
    return out;
}

inline std::string to_csv(const RefTable& t) {
    std::string s;
    for (std::size_t i = 0; i < t.names.size(); ++i) s += (i ? "," : "") + t.names[i];
    s += "\n";
    for (auto& l : fmt_rows(t)) s += l + "\n";
    return s;
}

// Keys compare by bit pattern, as in the hash tables of the generated code.
inline bool key_equal(const Value& a, const Value& b) {
    if (a.index() != b.index()) return false;
    if (auto* x = std::get_if<double>(&a)) {
        double y = std::get<double>(b);
        return std::memcmp(x, &y, sizeof y) == 0;
    }
    return a == b;
}

// ---- expressions ---------------------------------------------------------------

struct EV {
    enum class T { I, F, B, S } t = T::I;
    int64_t i = 0;
    double f = 0;
    bool b = false;
    std::string s;
};

inline int64_t wrap_add(int64_t a, int64_t b) { return static_cast<int64_t>(static_cast<uint64_t>(a) + static_cast<uint64_t>(b)); }
inline int64_t wrap_sub(int64_t a, int64_t b) { return static_cast<int64_t>(static_cast<uint64_t>(a) - static_cast<uint64_t>(b)); }
inline int64_t wrap_mul(int64_t a, int64_t b) { return static_cast<int64_t>(static_cast<uint64_t>(a) * static_cast<uint64_t>(b)); }

inline double as_f(const EV& v) { return v.t == EV::T::F ? v.f : static_cast<double>(v.i); }

inline EV ref_eval(const Expr& e, const RefTable& t, const std::vector<Value>& row) {
    using K = Expr::Kind;
    EV out;
    switch (e.kind) {
        case K::Column: {
            const Value& v = row[t.index(e.name)];
            if (auto* i = std::get_if<int64_t>(&v)) out.t = EV::T::I, out.i = *i;
            else if (auto* d = std::get_if<double>(&v)) out.t = EV::T::F, out.f = *d;
            else out.t = EV::T::S, out.s = std::get<std::string>(v);
            return out;
        }
        case K::Int: out.t = EV::T::I; out.i = e.i; return out;
        case K::Float: out.t = EV::T::F; out.f = e.f; return out;
        case K::Bool: out.t = EV::T::B; out.b = e.b; return out;
        case K::String: out.t = EV::T::S; out.s = e.name; return out;
        case K::Unary: {
            EV a = ref_eval(*e.args[0], t, row);
            if (e.name == "not") return EV{EV::T::B, 0, 0, !a.b, {}};
            if (a.t == EV::T::F) return EV{EV::T::F, 0, -a.f, false, {}};
            return EV{EV::T::I, wrap_sub(0, a.i), 0, false, {}};
        }
        case K::Binary: {
            EV a = ref_eval(*e.args[0], t, row), b = ref_eval(*e.args[1], t, row);
            const std::string& op = e.name;
            auto B = [](bool v) { return EV{EV::T::B, 0, 0, v, {}}; };
            if (op == "and") return B(a.b && b.b);
            if (op == "or") return B(a.b || b.b);
            if (a.t == EV::T::S) return B(op == "==" ? a.s == b.s : a.s != b.s);
            if (a.t == EV::T::B) return B(op == "==" ? a.b == b.b : a.b != b.b);
            bool fl = a.t == EV::T::F || b.t == EV::T::F;
            if (fl) {
                double x = as_f(a), y = as_f(b);
                if (op == "+") return EV{EV::T::F, 0, x + y, false, {}};
                if (op == "-") return EV{EV::T::F, 0, x - y, false, {}};
                if (op == "*") return EV{EV::T::F, 0, x * y, false, {}};
                if (op == "/") return EV{EV::T::F, 0, x / y, false, {}};
                if (op == "<") return B(x < y);
                if (op == "<=") return B(x <= y);
                if (op == ">") return B(x > y);
                if (op == ">=") return B(x >= y);
                if (op == "==") return B(x == y);
                if (op == "!=") return B(x != y);
            } else {
                int64_t x = a.i, y = b.i;
                if (op == "+") return EV{EV::T::I, wrap_add(x, y), 0, false, {}};
                if (op == "-") return EV{EV::T::I, wrap_sub(x, y), 0, false, {}};
                if (op == "*") return EV{EV::T::I, wrap_mul(x, y), 0, false, {}};
                if (op == "<") return B(x < y);
                if (op == "<=") return B(x <= y);
                if (op == ">") return B(x > y);
                if (op == ">=") return B(x >= y);
                if (op == "==") return B(x == y);
                if (op == "!=") return B(x != y);
            }
            throw std::runtime_error("reference: unsupported operator " + op);
        }
        case K::Call: {
            std::vector<EV> a;
            for (auto& x : e.args) a.push_back(ref_eval(*x, t, row));
            if (e.name == "float") return EV{EV::T::F, 0, as_f(a[0]), false, {}};
            if (e.name == "abs") {
                if (a[0].t == EV::T::F) return EV{EV::T::F, 0, std::fabs(a[0].f), false, {}};
                return EV{EV::T::I, a[0].i < 0 ? wrap_sub(0, a[0].i) : a[0].i, 0, false, {}};
            }
            throw std::runtime_error("reference: unsupported function " + e.name);
        }
    }
    return out;
}

inline Value to_value(const EV& v) {
    switch (v.t) {
        case EV::T::I: return v.i;
        case EV::T::F: return v.f;
        case EV::T::B: return static_cast<int64_t>(v.b ? 1 : 0);
        case EV::T::S: return v.s;
    }
    return int64_t{0};
}

inline FieldType ev_field_type(const EV& v) {
    switch (v.t) {
        case EV::T::F: return FieldType::Float64;
        case EV::T::S: return FieldType::StringDict;
        default: return FieldType::Int64;
    }
}

// ---- plans ---------------------------------------------------------------------

// Named tables for scans; dot-product UDFs by name (weights then bias).
struct RefContext {
    std::map<std::string, RefTable> tables;
    std::map<std::string, std::pair<std::vector<double>, double>> dot_udfs;
};

inline RefTable ref_run(const unistage::rel::PlanPtr& p, const RefContext& ctx);

inline RefTable ref_filter(const RefTable& in, const Expr& pred) {
    RefTable out = in;
    out.rows.clear();
    for (auto& r : in.rows)
        if (ref_eval(pred, in, r).b) out.rows.push_back(r);
    return out;
}

inline RefTable ref_project(const RefTable& in, const std::vector<unistage::rel::NamedExpr>& exprs,
                            const unistage::rel::RelSchema& child_schema) {
    RefTable out;
    for (auto& ne : exprs) {
        out.names.push_back(ne.name);
        auto t = unistage::rel::infer_type(*ne.expr, child_schema);
        out.types.push_back(t == unistage::rel::ExprType::Float64  ? FieldType::Float64
                            : t == unistage::rel::ExprType::Dict   ? FieldType::StringDict
                                                                   : FieldType::Int64);
    }
    for (auto& r : in.rows) {
        std::vector<Value> row;
        for (auto& ne : exprs) row.push_back(to_value(ref_eval(*ne.expr, in, r)));
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline unistage::rel::RelSchema schema_of(const RefTable& t) {
    unistage::rel::RelSchema s;
    for (std::size_t i = 0; i < t.names.size(); ++i) s.add(t.names[i], t.types[i]);
    return s;
}

inline RefTable ref_join(const RefTable& l, const RefTable& r, const std::vector<std::string>& lk,
                         const std::vector<std::string>& rk) {
    RefTable out;
    out.names = l.names;
    out.types = l.types;
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        std::string n = r.names[i];
        while (std::find(out.names.begin(), out.names.end(), n) != out.names.end()) n += "_r";
        out.names.push_back(n);
        out.types.push_back(r.types[i]);
    }
    for (auto& rr : r.rows)
        for (auto& lr : l.rows) {
            bool ok = true;
            for (std::size_t k = 0; k < lk.size(); ++k) ok = ok && key_equal(lr[l.index(lk[k])], rr[r.index(rk[k])]);
            if (!ok) continue;
            std::vector<Value> row = lr;
            row.insert(row.end(), rr.begin(), rr.end());
            out.rows.push_back(std::move(row));
        }
    return out;
}

inline RefTable ref_group(const RefTable& in, const std::vector<std::string>& keys,
                          const std::vector<unistage::rel::Aggregate>& aggs) {
    using unistage::rel::AggFn;
    RefTable out;
    for (auto& k : keys) {
        out.names.push_back(k);
        out.types.push_back(in.types[in.index(k)]);
    }
    unistage::rel::RelSchema cs = schema_of(in);
    std::vector<bool> is_float;
    for (auto& a : aggs) {
        bool f = a.fn != AggFn::Count && unistage::rel::infer_type(*a.expr, cs) == unistage::rel::ExprType::Float64;
        is_float.push_back(f);
        out.names.push_back(a.name);
        out.types.push_back(a.fn == AggFn::Count ? FieldType::Int64
                            : a.fn == AggFn::Avg ? FieldType::Float64
                                                 : (f ? FieldType::Float64 : FieldType::Int64));
    }
    struct Group {
        std::vector<Value> key;
        std::vector<Value> acc;
        std::vector<int64_t> count;
    };
    std::vector<Group> groups;
    for (auto& r : in.rows) {
        std::vector<Value> key;
        for (auto& k : keys) key.push_back(r[in.index(k)]);
        Group* g = nullptr;
        for (auto& cand : groups) {
            bool eq = true;
            for (std::size_t i = 0; i < key.size(); ++i) eq = eq && key_equal(cand.key[i], key[i]);
            if (eq) {
                g = &cand;
                break;
            }
        }
        if (!g) {
            Group ng;
            ng.key = key;
            for (std::size_t a = 0; a < aggs.size(); ++a) {
                bool f = aggs[a].fn == AggFn::Avg || is_float[a];
                switch (aggs[a].fn) {
                    case AggFn::Min:
                        ng.acc.push_back(f ? Value(std::numeric_limits<double>::infinity())
                                           : Value(std::numeric_limits<int64_t>::max()));
                        break;
                    case AggFn::Max:
                        ng.acc.push_back(f ? Value(-std::numeric_limits<double>::infinity())
                                           : Value(std::numeric_limits<int64_t>::min()));
                        break;
                    default: ng.acc.push_back(f ? Value(0.0) : Value(int64_t{0}));
                }
                ng.count.push_back(0);
            }
            groups.push_back(std::move(ng));
            g = &groups.back();
        }
        for (std::size_t a = 0; a < aggs.size(); ++a) {
            const auto& ag = aggs[a];
            Value& acc = g->acc[a];
            g->count[a]++;
            if (ag.fn == AggFn::Count) {
                acc = wrap_add(std::get<int64_t>(acc), 1);
                continue;
            }
            EV x = ref_eval(*ag.expr, in, r);
            if (std::holds_alternative<double>(acc)) {
                double c = std::get<double>(acc), v = as_f(x);
                if (ag.fn == AggFn::Min) acc = c < v ? c : v;
                else if (ag.fn == AggFn::Max) acc = c > v ? c : v;
                else acc = c + v;
            } else {
                int64_t c = std::get<int64_t>(acc), v = x.i;
                if (ag.fn == AggFn::Min) acc = c < v ? c : v;
                else if (ag.fn == AggFn::Max) acc = c > v ? c : v;
                else acc = wrap_add(c, v);
            }
        }
    }
    for (auto& g : groups) {
        std::vector<Value> row = g.key;
        for (std::size_t a = 0; a < aggs.size(); ++a) {
            if (aggs[a].fn == AggFn::Avg) row.push_back(std::get<double>(g.acc[a]) / static_cast<double>(g.count[a]));
            else row.push_back(g.acc[a]);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

// y = sum_k x_k w_k accumulated left to right from 0.0, then + bias.
inline RefTable ref_udf(const RefTable& in, const std::vector<std::string>& args, const std::string& output,
                        const std::vector<double>& w, double bias) {
    RefTable out = in;
    out.names.push_back(output);
    out.types.push_back(FieldType::Float64);
    for (auto& r : out.rows) {
        double acc = 0.0;
        for (std::size_t k = 0; k < args.size(); ++k) {
            const Value& v = r[in.index(args[k])];
            double x = std::holds_alternative<double>(v) ? std::get<double>(v) : static_cast<double>(std::get<int64_t>(v));
            acc = acc + x * w[k];
        }
        r.push_back(acc + bias);
    }
    return out;
}

inline RefTable ref_run(const unistage::rel::PlanPtr& p, const RefContext& ctx) {
    using unistage::rel::PlanKind;
    switch (p->kind) {
        case PlanKind::Scan: return ctx.tables.at(p->input);
        case PlanKind::Filter: return ref_filter(ref_run(p->child(), ctx), *p->pred);
        case PlanKind::Project: {
            RefTable in = ref_run(p->child(), ctx);
            return ref_project(in, p->exprs, schema_of(in));
        }
        case PlanKind::Join: return ref_join(ref_run(p->child(0), ctx), ref_run(p->child(1), ctx), p->left_keys, p->right_keys);
        case PlanKind::GroupBy: return ref_group(ref_run(p->child(), ctx), p->keys, p->aggs);
        case PlanKind::Udf: {
            auto& [w, b] = ctx.dot_udfs.at(p->udf);
            return ref_udf(ref_run(p->child(), ctx), p->args, p->output, w, b);
        }
    }
    throw std::runtime_error("reference: bad plan");
}

// Output schema of a plan, computed the reference way.
inline RefTable ref_shape(const unistage::rel::PlanPtr& p, const RefContext& ctx) {
    RefContext empty = ctx;
    for (auto& [n, t] : empty.tables) t.rows.clear();
    return ref_run(p, empty);
}

// ---- random generation -------------------------------------------------------------

struct RandomPlan {
    unistage::rel::PlanPtr plan;
    RefContext ctx;
    std::vector<std::string> table_order;  // scan inputs in declaration order
};

class PlanGen {
public:
    explicit PlanGen(uint64_t seed, bool allow_udf = true) : rng_(seed), allow_udf_(allow_udf) {}

    RandomPlan generate(int max_depth) {
        RandomPlan rp;
        ctx_ = &rp.ctx;
        order_ = &rp.table_order;
        udf_used_ = false;
        rp.plan = gen(1 + pick(max_depth));
        return rp;
    }

private:
    std::mt19937_64 rng_;
    bool allow_udf_;
    bool udf_used_ = false;
    RefContext* ctx_ = nullptr;
    std::vector<std::string>* order_ = nullptr;
    int col_serial_ = 0;

    int pick(int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng_)); }
    bool coin(double p = 0.5) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }

    RefTable random_table() {
        RefTable t;
        int ncols = 1 + pick(4);
        for (int c = 0; c < ncols; ++c) {
            t.names.push_back("c" + std::to_string(c));
            int k = pick(5);
            t.types.push_back(k < 2 ? FieldType::Int64 : k < 4 ? FieldType::Float64 : FieldType::StringDict);
        }
        int nrows = coin(0.1) ? 0 : pick(65);
        int card = 1 + pick(8);  // key cardinality; small values make joins and groups collide
        static const char* words[] = {"a", "b", "cc", "d", "e7", "ff", "g", "h"};
        for (int r = 0; r < nrows; ++r) {
            std::vector<Value> row;
            for (int c = 0; c < ncols; ++c) {
                switch (t.types[static_cast<std::size_t>(c)]) {
                    case FieldType::Int64: row.push_back(static_cast<int64_t>(pick(card * 2 + 1) - card)); break;
                    case FieldType::Float64:
                        row.push_back(coin(0.5) ? static_cast<double>(pick(card) - card / 2) * 0.5
                                                : std::uniform_real_distribution<double>(-10, 10)(rng_));
                        break;
                    case FieldType::StringDict: row.push_back(std::string(words[pick(std::min(card, 8))])); break;
                }
            }
            t.rows.push_back(std::move(row));
        }
        return t;
    }

    std::vector<std::size_t> cols_of(const RefTable& t, std::initializer_list<FieldType> types) {
        std::vector<std::size_t> v;
        for (std::size_t i = 0; i < t.types.size(); ++i)
            if (std::find(types.begin(), types.end(), t.types[i]) != types.end()) v.push_back(i);
        return v;
    }

    unistage::rel::ExprPtr num_leaf(const RefTable& t) {
        using namespace unistage::rel;
        auto nums = cols_of(t, {FieldType::Int64, FieldType::Float64});
        if (!nums.empty() && coin(0.75)) return col(t.names[nums[static_cast<std::size_t>(pick(static_cast<int>(nums.size())))]]);
        if (coin()) return lit_i(pick(7) - 3);
        return lit_f(static_cast<double>(pick(9) - 4) * 0.25);
    }

    unistage::rel::ExprPtr num_expr(const RefTable& t, int depth) {
        using namespace unistage::rel;
        if (depth <= 0 || coin(0.4)) return num_leaf(t);
        static const char* ops[] = {"+", "-", "*"};
        int k = pick(5);
        if (k == 3) return call("abs", {num_expr(t, depth - 1)});
        if (k == 4) return unary("-", num_expr(t, depth - 1));
        return binary(ops[k], num_expr(t, depth - 1), num_expr(t, depth - 1));
    }

    unistage::rel::ExprPtr pred_expr(const RefTable& t, int depth) {
        using namespace unistage::rel;
        auto strs = cols_of(t, {FieldType::StringDict});
        if (depth > 0 && coin(0.3)) {
            int k = pick(3);
            if (k == 0) return unary("not", pred_expr(t, depth - 1));
            return binary(k == 1 ? "and" : "or", pred_expr(t, depth - 1), pred_expr(t, depth - 1));
        }
        if (!strs.empty() && coin(0.3)) {
            static const char* words[] = {"a", "b", "cc", "zz"};
            return binary(coin() ? "==" : "!=", col(t.names[strs[static_cast<std::size_t>(pick(static_cast<int>(strs.size())))]]),
                          lit_s(words[pick(4)]));
        }
        static const char* cmps[] = {"<", "<=", ">", ">=", "==", "!="};
        return binary(cmps[pick(6)], num_expr(t, 1), num_expr(t, 1));
    }

    unistage::rel::PlanPtr scan() {
        std::string name = "t" + std::to_string(order_->size());
        ctx_->tables[name] = random_table();
        order_->push_back(name);
        return unistage::rel::plan_scan(name);
    }

    unistage::rel::PlanPtr gen(int depth) {
        using namespace unistage::rel;
        if (depth <= 1) return scan();
        int k = pick(allow_udf_ && !udf_used_ ? 5 : 4);
        if (k == 0) {
            PlanPtr c = gen(depth - 1);
            return plan_filter(c, pred_expr(ref_shape(c, *ctx_), 2));
        }
        if (k == 1) {
            PlanPtr c = gen(depth - 1);
            RefTable s = ref_shape(c, *ctx_);
            std::vector<NamedExpr> ex;
            int n = 1 + pick(4);
            for (int i = 0; i < n; ++i) {
                std::string nm = "p" + std::to_string(col_serial_++);
                int kind = pick(6);
                auto strs = cols_of(s, {FieldType::StringDict});
                if (kind == 0 && !strs.empty())
                    ex.push_back({nm, col(s.names[strs[static_cast<std::size_t>(pick(static_cast<int>(strs.size())))]])});
                else if (kind == 1)
                    ex.push_back({nm, pred_expr(s, 1)});
                else
                    ex.push_back({nm, num_expr(s, 2)});
            }
            return plan_project(c, ex);
        }
        if (k == 2) {
            PlanPtr l = gen(depth - 1), r = gen(1 + pick(depth - 1));
            RefTable ls = ref_shape(l, *ctx_), rs = ref_shape(r, *ctx_);
            std::vector<std::pair<std::size_t, std::size_t>> pairs;
            for (std::size_t i = 0; i < ls.types.size(); ++i)
                for (std::size_t j = 0; j < rs.types.size(); ++j)
                    if (ls.types[i] == rs.types[j] && ls.types[i] != FieldType::Float64) pairs.push_back({i, j});
            if (pairs.empty()) return plan_filter(l, pred_expr(ls, 1));
            auto [i, j] = pairs[static_cast<std::size_t>(pick(static_cast<int>(pairs.size())))];
            std::vector<std::string> lk{ls.names[i]}, rk{rs.names[j]};
            if (pairs.size() > 1 && coin(0.25)) {
                auto [i2, j2] = pairs[static_cast<std::size_t>(pick(static_cast<int>(pairs.size())))];
                if (i2 != i && j2 != j) {
                    lk.push_back(ls.names[i2]);
                    rk.push_back(rs.names[j2]);
                }
            }
            return plan_join(l, r, lk, rk);
        }
        if (k == 3) {
            PlanPtr c = gen(depth - 1);
            RefTable s = ref_shape(c, *ctx_);
            std::vector<std::string> keys;
            int nk = pick(3);
            for (int i = 0; i < nk; ++i) {
                const std::string& n = s.names[static_cast<std::size_t>(pick(static_cast<int>(s.names.size())))];
                if (std::find(keys.begin(), keys.end(), n) == keys.end()) keys.push_back(n);
            }
            std::vector<Aggregate> aggs;
            int na = 1 + pick(3);
            for (int i = 0; i < na; ++i) {
                AggFn fn = static_cast<AggFn>(pick(5));
                Aggregate a{fn, fn == AggFn::Count ? nullptr : num_expr(s, 1), "g" + std::to_string(col_serial_++)};
                aggs.push_back(std::move(a));
            }
            return plan_group_by(c, keys, aggs);
        }
        PlanPtr c = gen(depth - 1);
        RefTable s = ref_shape(c, *ctx_);
        auto nums = cols_of(s, {FieldType::Int64, FieldType::Float64});
        if (nums.empty()) return c;
        std::vector<std::string> args;
        std::vector<double> w;
        int n = 1 + pick(std::min<int>(3, static_cast<int>(nums.size())));
        for (int i = 0; i < n; ++i) {
            args.push_back(s.names[nums[static_cast<std::size_t>(i)]]);
            w.push_back(std::uniform_real_distribution<double>(-2, 2)(rng_));
        }
        std::string uname = "dot" + std::to_string(col_serial_++);
        ctx_->dot_udfs[uname] = {w, std::uniform_real_distribution<double>(-1, 1)(rng_)};
        udf_used_ = true;
        return plan_udf(c, uname, args, "u" + std::to_string(col_serial_++));
    }
};

}  // namespace testsupport
