#pragma once

// Push-style relational operators. `exec` stages the operator's loops into
// the graph and invokes the downstream callback once per produced record,
// so a whole pipeline fuses into the loops of its leaves.

#include <memory>
#include <string>
#include <vector>

#include "unistage/backend/runtime.hpp"
#include "unistage/relational/expr.hpp"

namespace unistage::rel {

class Operator {
public:
    virtual ~Operator() = default;
    virtual const RelSchema& schema() const = 0;
    virtual void exec(IrGraph& g, const Callback& cb) = 0;
    virtual std::string name() const = 0;
};

using OpPtr = std::shared_ptr<Operator>;

namespace detail {

inline Kind elem_kind(FieldType t) { return t == FieldType::Float64 ? Kind::Float64 : Kind::Int64; }

inline StagedValue unit_branch() { return StagedValue::unit(); }

// Stores a typed expression result as a field value; bools become 0/1 codes.
inline StagedValue field_value(IrGraph& g, const TypedValue& t) {
    if (t.type == ExprType::Bool) return g.select(t.v, g.i64(1), g.i64(0));
    return t.v;
}

inline FieldType field_type_of(ExprType t, const std::string& what) {
    switch (t) {
        case ExprType::Int64:
        case ExprType::Bool: return FieldType::Int64;
        case ExprType::Float64: return FieldType::Float64;
        case ExprType::Dict: return FieldType::StringDict;
        case ExprType::String: throw StagingError(what + ": a string literal cannot be a column");
    }
    return FieldType::Int64;
}

}  // namespace detail

// ---- scan ---------------------------------------------------------------

// Loads a CSV file into one growable column per field, then pushes each row.
// String columns are dictionary coded against `dict`, which is filled from
// the file at construction (staging) time.
class Scan : public Operator {
public:
    Scan(std::string path, RelSchema schema, bool header = true, int64_t input_index = 0,
         std::shared_ptr<StringDictionary> dict = nullptr)
        : path_(std::move(path)), schema_(std::move(schema)), header_(header), input_(input_index),
          dict_(dict ? std::move(dict) : std::make_shared<StringDictionary>()) {
        if (schema_.empty()) throw StagingError("scan of '" + path_ + "': schema has no fields");
        collect_strings();
    }

    const RelSchema& schema() const override { return schema_; }
    std::string name() const override { return "scan"; }
    const std::string& path() const { return path_; }
    int64_t input_index() const { return input_; }

    void exec(IrGraph& g, const Callback& cb) override {
        ColumnBuffer buf = load(g);
        g.staged_loop(buf.rows, [&](StagedValue row) {
            std::vector<StagedValue> vals;
            for (std::size_t f = 0; f < schema_.size(); ++f) vals.push_back(buf.load(g, f, row));
            cb(Record(g, schema_, vals, buf.dicts));
        });
    }

    // Stages only the loader; the columns are the scan's storage.
    ColumnBuffer load(IrGraph& g) const {
        ColumnBuffer buf;
        buf.schema = schema_;
        std::vector<NodeId> ops;
        std::vector<Literal> imm{path_, header_, input_, static_cast<int64_t>(schema_.size())};
        bool any_dict = false;
        for (auto& f : schema_.fields()) any_dict = any_dict || f.type == FieldType::StringDict;
        StagedValue dict = any_dict ? dict_->node(g) : StagedValue::unit();
        for (std::size_t f = 0; f < schema_.size(); ++f) {
            StagedValue v = g.vec_new(detail::elem_kind(schema_[f].type));
            buf.columns.push_back({v, 0, 1, -1});
            buf.dicts.push_back(schema_[f].type == FieldType::StringDict ? dict : StagedValue::unit());
            ops.push_back(v.node);
        }
        int64_t dict_op = -1;
        if (any_dict) {
            dict_op = static_cast<int64_t>(ops.size());
            ops.push_back(dict.node);
        }
        for (std::size_t f = 0; f < schema_.size(); ++f) {
            const char* kind = schema_[f].type == FieldType::Int64     ? "i64"
                               : schema_[f].type == FieldType::Float64 ? "f64"
                                                                       : "dict";
            imm.emplace_back(std::string(kind));
            imm.emplace_back(static_cast<int64_t>(f));
            imm.emplace_back(schema_[f].type == FieldType::StringDict ? dict_op : int64_t{-1});
        }
        buf.rows = g.reflect(Op::CsvLoad, SType::i64(), ops, imm);
        return buf;
    }

private:
    std::string path_;
    RelSchema schema_;
    bool header_;
    int64_t input_;
    std::shared_ptr<StringDictionary> dict_;

    void collect_strings() {
        std::vector<std::size_t> cols;
        for (std::size_t f = 0; f < schema_.size(); ++f)
            if (schema_[f].type == FieldType::StringDict) cols.push_back(f);
        if (cols.empty()) return;
        std::string text;
        try {
            text = runtime::read_file(path_);
        } catch (const RunError& e) {
            throw StagingError(std::string("scan: ") + e.what());
        }
        runtime::for_each_csv_row(text, header_, [&](const std::vector<std::string_view>& cells, int64_t) {
            if (cells.size() != schema_.size()) return;  // reported by the loader at run time
            for (std::size_t c : cols) dict_->add(std::string(cells[c]));
        });
    }
};

// Pushes the rows of an already materialized buffer.
class BufferScan : public Operator {
public:
    explicit BufferScan(ColumnBuffer buf) : buf_(std::move(buf)) {}
    const RelSchema& schema() const override { return buf_.schema; }
    std::string name() const override { return "buffer-scan"; }
    void exec(IrGraph& g, const Callback& cb) override {
        g.staged_loop(buf_.rows, [&](StagedValue row) {
            std::vector<StagedValue> vals;
            for (std::size_t f = 0; f < buf_.schema.size(); ++f) vals.push_back(buf_.load(g, f, row));
            cb(Record(g, buf_.schema, vals, buf_.dicts));
        });
    }

private:
    ColumnBuffer buf_;
};

// ---- filter / project ----------------------------------------------------

class Filter : public Operator {
public:
    Filter(OpPtr child, ExprPtr pred) : child_(std::move(child)), pred_(std::move(pred)) {
        if (infer_type(*pred_, child_->schema()) != ExprType::Bool)
            throw StagingError("filter predicate " + to_string(*pred_) + " is not bool");
    }
    const RelSchema& schema() const override { return child_->schema(); }
    std::string name() const override { return "filter"; }
    void exec(IrGraph& g, const Callback& cb) override {
        child_->exec(g, [&](const Record& r) {
            TypedValue c = eval(g, *pred_, r);
            g.staged_if(
                c.v,
                [&] {
                    cb(r);
                    return StagedValue::unit();
                },
                detail::unit_branch);
        });
    }

private:
    OpPtr child_;
    ExprPtr pred_;
};

struct NamedExpr {
    std::string name;
    ExprPtr expr;
};

class Project : public Operator {
public:
    Project(OpPtr child, std::vector<NamedExpr> exprs) : child_(std::move(child)), exprs_(std::move(exprs)) {
        if (exprs_.empty()) throw StagingError("project: at least one expression is required");
        for (auto& ne : exprs_) {
            ExprType t = infer_type(*ne.expr, child_->schema());
            if (schema_.contains(ne.name)) throw StagingError("project: duplicate output name '" + ne.name + "'");
            schema_.add(ne.name, detail::field_type_of(t, "project"));
        }
    }
    const RelSchema& schema() const override { return schema_; }
    std::string name() const override { return "project"; }
    void exec(IrGraph& g, const Callback& cb) override {
        child_->exec(g, [&](const Record& r) {
            std::vector<StagedValue> vals, dicts;
            for (auto& ne : exprs_) {
                TypedValue t = eval(g, *ne.expr, r);
                vals.push_back(detail::field_value(g, t));
                dicts.push_back(t.dict);
            }
            cb(Record(g, schema_, vals, dicts));
        });
    }

private:
    OpPtr child_;
    std::vector<NamedExpr> exprs_;
    RelSchema schema_;
};

// ---- hash join ---------------------------------------------------------------

// Equi-join on all listed keys. The left input is built into a multimap
// (hash map to dense key groups plus a counting sort of left rows by group);
// the right input probes. Output order: right rows in order, and for each
// right row its matches in left insertion order. Right fields whose names
// collide with left fields get an "_r" suffix.
class HashJoin : public Operator {
public:
    HashJoin(OpPtr left, OpPtr right, std::vector<std::string> lkeys, std::vector<std::string> rkeys)
        : left_(std::move(left)), right_(std::move(right)), lkeys_(std::move(lkeys)), rkeys_(std::move(rkeys)) {
        if (lkeys_.empty() || lkeys_.size() != rkeys_.size())
            throw StagingError("hash join: key lists must be non-empty and of equal length");
        const RelSchema& ls = left_->schema();
        const RelSchema& rs = right_->schema();
        for (std::size_t k = 0; k < lkeys_.size(); ++k) {
            FieldType lt = ls[ls.index_of(lkeys_[k])].type, rt = rs[rs.index_of(rkeys_[k])].type;
            if (lt != rt)
                throw StagingError("hash join: key type mismatch (" + lkeys_[k] + ":" + field_type_name(lt) + " vs " +
                                   rkeys_[k] + ":" + field_type_name(rt) + ")");
        }
        for (auto& f : ls.fields()) schema_.add(f.name, f.type);
        for (auto& f : rs.fields()) {
            std::string n = f.name;
            while (schema_.contains(n)) n += "_r";
            schema_.add(n, f.type);
        }
    }
    const RelSchema& schema() const override { return schema_; }
    std::string name() const override { return "hash-join"; }

    void exec(IrGraph& g, const Callback& cb) override {
        const RelSchema& ls = left_->schema();
        const RelSchema& rs = right_->schema();
        std::vector<Kind> kinds;
        for (auto& k : lkeys_) kinds.push_back(ls[ls.index_of(k)].type == FieldType::Float64 ? Kind::Float64 : Kind::Int64);
        StagedValue map = g.map_new(kinds);
        std::vector<StagedValue> cols;
        for (auto& f : ls.fields()) cols.push_back(g.vec_new(detail::elem_kind(f.type)));
        StagedValue gids = g.vec_new(Kind::Int64);
        std::vector<StagedValue> ldicts(ls.size(), StagedValue::unit());

        // build
        left_->exec(g, [&](const Record& r) {
            std::vector<StagedValue> keys;
            for (auto& k : lkeys_) keys.push_back(r.value(k));
            StagedValue gid = g.map_insert(map, keys);
            for (std::size_t f = 0; f < ls.size(); ++f) {
                g.push(cols[f], r.value(f));
                ldicts[f] = r.dict(f);
            }
            g.push(gids, gid);
        });

        // counting sort of left rows by group: order[offsets[g] .. offsets[g+1])
        StagedValue nl = g.len(gids);
        StagedValue ng = g.map_size(map);
        StagedValue offsets = g.array_new(Kind::Int64, g.add(ng, g.i64(1)));
        g.staged_loop(nl, [&](StagedValue i) {
            StagedValue slot = g.add(g.load(gids, i), g.i64(1));
            g.store(offsets, slot, g.add(g.load(offsets, slot), g.i64(1)));
        });
        g.staged_loop(ng, [&](StagedValue i) {
            StagedValue next = g.add(i, g.i64(1));
            g.store(offsets, next, g.add(g.load(offsets, next), g.load(offsets, i)));
        });
        StagedValue cursor = g.array_new(Kind::Int64, ng);
        g.staged_loop(ng, [&](StagedValue i) { g.store(cursor, i, g.load(offsets, i)); });
        StagedValue order = g.array_new(Kind::Int64, nl);
        g.staged_loop(nl, [&](StagedValue i) {
            StagedValue grp = g.load(gids, i);
            StagedValue pos = g.load(cursor, grp);
            g.store(order, pos, i);
            g.store(cursor, grp, g.add(pos, g.i64(1)));
        });

        // probe
        right_->exec(g, [&](const Record& r) {
            std::vector<StagedValue> keys;
            for (std::size_t k = 0; k < rkeys_.size(); ++k) {
                std::size_t ri = rs.index_of(rkeys_[k]);
                std::size_t li = ls.index_of(lkeys_[k]);
                if (rs[ri].type == FieldType::StringDict && r.dict(ri).node != ldicts[li].node)
                    throw StagingError("hash join: string keys must share one dictionary");
                keys.push_back(r.value(ri));
            }
            StagedValue grp = g.map_lookup(map, keys);
            g.staged_if(
                g.ge(grp, g.i64(0)),
                [&] {
                    StagedValue start = g.load(offsets, grp);
                    StagedValue end = g.load(offsets, g.add(grp, g.i64(1)));
                    g.staged_loop(g.sub(end, start), [&](StagedValue j) {
                        StagedValue li = g.load(order, g.add(start, j));
                        std::vector<StagedValue> vals, dicts;
                        for (std::size_t f = 0; f < ls.size(); ++f) {
                            vals.push_back(g.load(cols[f], li));
                            dicts.push_back(ldicts[f]);
                        }
                        for (std::size_t f = 0; f < rs.size(); ++f) {
                            vals.push_back(r.value(f));
                            dicts.push_back(r.dict(f));
                        }
                        cb(Record(g, schema_, vals, dicts));
                    });
                    return StagedValue::unit();
                },
                detail::unit_branch);
        });
    }

private:
    OpPtr left_, right_;
    std::vector<std::string> lkeys_, rkeys_;
    RelSchema schema_;
};

// ---- group by / aggregate ----------------------------------------------------

enum class AggFn { Sum, Count, Avg, Min, Max };

inline const char* agg_name(AggFn f) {
    switch (f) {
        case AggFn::Sum: return "sum";
        case AggFn::Count: return "count";
        case AggFn::Avg: return "avg";
        case AggFn::Min: return "min";
        case AggFn::Max: return "max";
    }
    return "?";
}

inline AggFn parse_agg(const std::string& s) {
    if (s == "sum") return AggFn::Sum;
    if (s == "count") return AggFn::Count;
    if (s == "avg") return AggFn::Avg;
    if (s == "min") return AggFn::Min;
    if (s == "max") return AggFn::Max;
    throw StagingError("unknown aggregate '" + s + "'");
}

struct Aggregate {
    AggFn fn = AggFn::Count;
    ExprPtr expr;  // ignored by count; may be null there
    std::string name;
};

// Hash aggregation. Groups are emitted in first-seen key order after the
// input is exhausted; an empty input yields no rows, even without keys.
class GroupByAgg : public Operator {
public:
    GroupByAgg(OpPtr child, std::vector<std::string> keys, std::vector<Aggregate> aggs)
        : child_(std::move(child)), keys_(std::move(keys)), aggs_(std::move(aggs)) {
        const RelSchema& cs = child_->schema();
        if (aggs_.empty() && keys_.empty()) throw StagingError("group-by: keys or aggregates required");
        for (auto& k : keys_) schema_.add(k, cs[cs.index_of(k)].type);
        for (auto& a : aggs_) {
            ExprType t = ExprType::Int64;
            if (a.fn != AggFn::Count) {
                if (!a.expr) throw StagingError(std::string("group-by: ") + agg_name(a.fn) + " needs an input expression");
                t = infer_type(*a.expr, cs);
                if (!numeric(t))
                    throw StagingError(std::string("group-by: cannot ") + agg_name(a.fn) + " a " + expr_type_name(t) +
                                       " expression " + to_string(*a.expr));
            }
            types_.push_back(t);
            FieldType out = a.fn == AggFn::Count ? FieldType::Int64
                            : a.fn == AggFn::Avg ? FieldType::Float64
                                                 : (t == ExprType::Float64 ? FieldType::Float64 : FieldType::Int64);
            if (schema_.contains(a.name)) throw StagingError("group-by: duplicate output name '" + a.name + "'");
            schema_.add(a.name, out);
        }
    }
    const RelSchema& schema() const override { return schema_; }
    std::string name() const override { return "group-by"; }

    void exec(IrGraph& g, const Callback& cb) override {
        const RelSchema& cs = child_->schema();
        std::vector<Kind> kinds;
        for (auto& k : keys_) kinds.push_back(cs[cs.index_of(k)].type == FieldType::Float64 ? Kind::Float64 : Kind::Int64);
        if (kinds.empty()) kinds.push_back(Kind::Int64);  // single global group
        StagedValue map = g.map_new(kinds);
        // accumulator vecs: primary per aggregate, plus a count vec for avg
        struct Acc {
            StagedValue primary;
            StagedValue count = StagedValue::unit();
            SType elem;
        };
        std::vector<Acc> accs;
        for (std::size_t a = 0; a < aggs_.size(); ++a) {
            Acc acc;
            AggFn fn = aggs_[a].fn;
            acc.elem = fn == AggFn::Count ? SType::i64()
                       : fn == AggFn::Avg ? SType::f64()
                                          : (types_[a] == ExprType::Float64 ? SType::f64() : SType::i64());
            acc.primary = g.vec_new(acc.elem.kind);
            if (fn == AggFn::Avg) acc.count = g.vec_new(Kind::Int64);
            accs.push_back(acc);
        }
        StagedValue seen = g.vec_new(Kind::Int64);  // one entry per group
        std::vector<StagedValue> kdicts(keys_.size(), StagedValue::unit());

        child_->exec(g, [&](const Record& r) {
            std::vector<StagedValue> keys;
            for (std::size_t k = 0; k < keys_.size(); ++k) {
                std::size_t i = cs.index_of(keys_[k]);
                keys.push_back(r.value(i));
                kdicts[k] = r.dict(i);
            }
            if (keys.empty()) keys.push_back(g.i64(0));
            StagedValue grp = g.map_insert(map, keys);
            g.staged_if(
                g.eq(grp, g.len(seen)),
                [&] {
                    g.push(seen, grp);
                    for (std::size_t a = 0; a < aggs_.size(); ++a) {
                        g.push(accs[a].primary, identity(g, aggs_[a].fn, accs[a].elem));
                        if (!accs[a].count.is_unit()) g.push(accs[a].count, g.i64(0));
                    }
                    return StagedValue::unit();
                },
                detail::unit_branch);
            for (std::size_t a = 0; a < aggs_.size(); ++a) {
                const Aggregate& ag = aggs_[a];
                Acc& acc = accs[a];
                StagedValue cur = g.load(acc.primary, grp);
                StagedValue next;
                if (ag.fn == AggFn::Count) {
                    next = g.add(cur, g.i64(1));
                } else {
                    TypedValue v = eval(g, *ag.expr, r);
                    StagedValue x = acc.elem == SType::f64() && v.type == ExprType::Int64 ? g.to_f64(v.v) : v.v;
                    switch (ag.fn) {
                        case AggFn::Sum:
                        case AggFn::Avg: next = g.add(cur, x); break;
                        case AggFn::Min: next = g.min(cur, x); break;
                        case AggFn::Max: next = g.max(cur, x); break;
                        default: break;
                    }
                }
                g.store(acc.primary, grp, next);
                if (!acc.count.is_unit()) g.store(acc.count, grp, g.add(g.load(acc.count, grp), g.i64(1)));
            }
        });

        g.staged_loop(g.map_size(map), [&](StagedValue grp) {
            std::vector<StagedValue> vals, dicts;
            for (std::size_t k = 0; k < keys_.size(); ++k) {
                vals.push_back(g.map_key(map, grp, k));
                dicts.push_back(kdicts[k]);
            }
            for (std::size_t a = 0; a < aggs_.size(); ++a) {
                StagedValue v = g.load(accs[a].primary, grp);
                if (aggs_[a].fn == AggFn::Avg) v = g.div(v, g.to_f64(g.load(accs[a].count, grp)));
                vals.push_back(v);
                dicts.push_back(StagedValue::unit());
            }
            cb(Record(g, schema_, vals, dicts));
        });
    }

private:
    OpPtr child_;
    std::vector<std::string> keys_;
    std::vector<Aggregate> aggs_;
    std::vector<ExprType> types_;
    RelSchema schema_;

    static StagedValue identity(IrGraph& g, AggFn fn, SType elem) {
        bool f = elem == SType::f64();
        switch (fn) {
            case AggFn::Min:
                return f ? g.f64(std::numeric_limits<double>::infinity()) : g.i64(std::numeric_limits<int64_t>::max());
            case AggFn::Max:
                return f ? g.f64(-std::numeric_limits<double>::infinity()) : g.i64(std::numeric_limits<int64_t>::min());
            default:
                return f ? g.f64(0.0) : g.i64(0);
        }
    }
};

// ---- sinks -------------------------------------------------------------------

// Packed float groups: listed float columns are stored interleaved row-major
// in one buffer so a tensor can alias them without copying.
struct MaterializeOptions {
    std::vector<std::vector<std::string>> packed_groups;
};

// Appends every produced record to growable columns and returns them.
inline ColumnBuffer materialize(IrGraph& g, Operator& op, const MaterializeOptions& opts = {}) {
    const RelSchema& s = op.schema();
    ColumnBuffer buf;
    buf.schema = s;
    buf.groups = opts.packed_groups;
    buf.columns.resize(s.size());
    buf.dicts.assign(s.size(), StagedValue::unit());
    std::vector<bool> placed(s.size(), false);
    for (std::size_t gi = 0; gi < opts.packed_groups.size(); ++gi) {
        const auto& grp = opts.packed_groups[gi];
        if (grp.empty()) throw StagingError("materialize: empty packed group");
        StagedValue data = g.vec_new(Kind::Float64);
        for (std::size_t p = 0; p < grp.size(); ++p) {
            std::size_t f = s.index_of(grp[p]);
            if (s[f].type != FieldType::Float64)
                throw StagingError("materialize: packed column '" + grp[p] + "' is not float64");
            if (placed[f]) throw StagingError("materialize: column '" + grp[p] + "' packed twice");
            placed[f] = true;
            buf.columns[f] = {data, static_cast<int64_t>(p), static_cast<int64_t>(grp.size()), static_cast<int>(gi)};
        }
    }
    for (std::size_t f = 0; f < s.size(); ++f)
        if (!placed[f]) buf.columns[f] = {g.vec_new(detail::elem_kind(s[f].type)), 0, 1, -1};
    StagedValue count = g.var_new(g.i64(0));
    op.exec(g, [&](const Record& r) {
        // packed columns are appended in group order, standalone ones directly
        for (std::size_t gi = 0; gi < opts.packed_groups.size(); ++gi)
            for (auto& name : opts.packed_groups[gi]) {
                std::size_t f = s.index_of(name);
                g.push(buf.columns[f].data, r.value(f));
            }
        for (std::size_t f = 0; f < s.size(); ++f) {
            if (buf.columns[f].group < 0) g.push(buf.columns[f].data, r.value(f));
            buf.dicts[f] = r.dict(f);
        }
        g.var_write(count, g.add(g.var_read(count), g.i64(1)));
    });
    buf.rows = g.var_read(count);
    return buf;
}

// Prints every produced record as one comma-separated output line.
inline void print_rows(IrGraph& g, Operator& op) {
    op.exec(g, [&](const Record& r) { g.print_row(r.values(), r.dicts()); });
}

}  // namespace unistage::rel
