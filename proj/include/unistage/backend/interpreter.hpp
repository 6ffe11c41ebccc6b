#pragma once

// Reference interpreter over a scheduled IrGraph. Its semantics are the
// definition the C emitter has to reproduce exactly.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <variant>

#include "unistage/backend/run_result.hpp"
#include "unistage/backend/runtime.hpp"
#include "unistage/core/graph.hpp"
#include "unistage/core/schedule.hpp"

namespace unistage {

struct InterpretOptions {
    // Replaces the embedded path of csv-load input `index`.
    std::map<int64_t, std::string> input_paths;
};

namespace interp {

struct Array {
    Kind elem = Kind::Float64;
    bool growable = false;
    std::vector<double> f;
    std::vector<int64_t> i;

    int64_t size() const { return static_cast<int64_t>(elem == Kind::Float64 ? f.size() : i.size()); }
};

using Scalar = std::variant<int64_t, double, bool>;

struct Cell {
    Scalar v;
};

struct Ref {
    NodeId id;
};

struct Pool;

using Value = std::variant<std::monostate, int64_t, double, bool, std::shared_ptr<Array>, std::shared_ptr<Cell>,
                           std::shared_ptr<runtime::GroupHashMap>, std::shared_ptr<Pool>, Ref>;

class Machine;

struct PoolTask {
    int64_t seq;
    std::shared_ptr<Array> data;
    int64_t rows;
};

// Worker pool: one bounded queue, N workers, results indexed by batch
// sequence number so the consumer can restore input order.
struct Pool {
    NodeId func;
    int64_t width;
    runtime::BoundedQueue<PoolTask> queue;
    std::vector<std::thread> workers;
    std::mutex m;
    std::vector<std::shared_ptr<Array>> results;
    std::vector<int64_t> rows;
    int64_t submitted = 0;
    bool finished = false;
    std::exception_ptr error;

    Pool(NodeId f, int64_t w, std::size_t qcap) : func(f), width(w), queue(qcap) {}
    ~Pool() {
        if (!finished) {
            queue.close();
            for (auto& t : workers)
                if (t.joinable()) t.join();
        }
    }
};

class Machine {
public:
    Machine(const IrGraph& g, const Schedule& s, const InterpretOptions& opts)
        : g_(g), s_(s), opts_(opts), globals_(g.size()), local_(g.size(), 0) {
        for (NodeId id = 1; id < g.size(); ++id) {
            const Node& n = g.node(id);
            if (n.op == Op::Const) {
                globals_[id] = from_literal(n.imm.at(0));
                continue;
            }
            local_[id] = g.enclosing_function(n.scope) != kNoNode ? 1 : 0;
        }
    }

    RunResult run() {
        auto t0 = clock::now();
        Frame root{nullptr, 0};
        run_block(0, root);
        double total = seconds_since(t0);
        result_.timings["load"] = load_time_;
        result_.timings["export"] = timer_total("export");
        for (auto& [name, v] : timers_) result_.timings[name] = v;
        result_.timings["total"] = total;
        result_.timings["process"] = std::max(0.0, total - load_time_ - timer_total("export"));
        result_.alloc_bytes = alloc_bytes_.load();
        return std::move(result_);
    }

    Value call(NodeId def_id, const std::vector<Value>& args) {
        const Node& def = g_.node(def_id);
        NodeId blk = def.operands[0];
        std::vector<Value> locals(def_id - blk);
        Frame f{&locals, blk};
        for (NodeId c : g_.children(blk)) {
            const Node& p = g_.node(c);
            if (p.op == Op::Param) slot(c, f) = args.at(static_cast<std::size_t>(std::get<int64_t>(p.imm[0])));
        }
        run_block(blk, f);
        return get(def.operands[1], f);
    }

private:
    using clock = std::chrono::steady_clock;
    // Function-local values live in [base, def) of the body's id range.
    struct Frame {
        std::vector<Value>* locals;
        NodeId base;
    };

    const IrGraph& g_;
    const Schedule& s_;
    const InterpretOptions& opts_;
    std::vector<Value> globals_;
    std::vector<char> local_;
    RunResult result_;
    std::mutex out_m_;
    double load_time_ = 0;
    std::map<std::string, double> timers_;
    std::map<std::string, clock::time_point> timer_open_;
    std::atomic<int64_t> alloc_bytes_{0};

    static double seconds_since(clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    }
    double timer_total(const std::string& name) const {
        auto it = timers_.find(name);
        return it == timers_.end() ? 0.0 : it->second;
    }

    static Value from_literal(const Literal& l) {
        if (auto* p = std::get_if<int64_t>(&l)) return *p;
        if (auto* p = std::get_if<double>(&l)) return *p;
        if (auto* p = std::get_if<bool>(&l)) return *p;
        throw InternalError("string literal used as a value");
    }

    Value& slot(NodeId id, Frame& f) { return (local_[id] && f.locals) ? (*f.locals)[id - f.base] : globals_[id]; }
    const Value& get(NodeId id, Frame& f) { return slot(id, f); }

    int64_t geti(NodeId id, Frame& f) { return std::get<int64_t>(get(id, f)); }
    double getf(NodeId id, Frame& f) { return std::get<double>(get(id, f)); }
    bool getb(NodeId id, Frame& f) { return std::get<bool>(get(id, f)); }
    std::shared_ptr<Array> geta(NodeId id, Frame& f) { return std::get<std::shared_ptr<Array>>(get(id, f)); }

    [[noreturn]] static void fail(NodeId id, const std::string& msg) {
        throw RunError("node " + std::to_string(id) + ": " + msg);
    }

    void run_block(NodeId b, Frame& f) {
        for (NodeId id : s_.statements(b)) step(id, f);
    }

    std::string format_scalar(const Value& v, const std::string& kind, const Node* dict) {
        if (kind == "d") {
            int64_t code = std::get<int64_t>(v);
            if (code < 0 || code >= static_cast<int64_t>(dict->imm.size())) return "?";
            return std::get<std::string>(dict->imm[static_cast<std::size_t>(code)]);
        }
        if (auto* p = std::get_if<int64_t>(&v)) return std::to_string(*p);
        if (auto* p = std::get_if<double>(&v)) return format_f64(*p);
        if (auto* p = std::get_if<bool>(&v)) return *p ? "1" : "0";
        throw InternalError("print of non-scalar");
    }

    std::vector<std::string> format_row(const Node& n, std::size_t kind_offset, Frame& f) {
        std::size_t ncols = n.imm.size() - kind_offset;
        std::vector<std::string> cells;
        std::size_t dict_op = ncols;
        for (std::size_t c = 0; c < ncols; ++c) {
            const std::string& kind = std::get<std::string>(n.imm[kind_offset + c]);
            const Node* dict = nullptr;
            if (kind == "d") dict = &g_.node(n.operands[dict_op++]);
            cells.push_back(format_scalar(get(n.operands[c], f), kind, dict));
        }
        return cells;
    }

    void check_index(NodeId id, const Array& a, int64_t i) {
        if (i < 0 || i >= a.size())
            fail(id, "index " + std::to_string(i) + " out of bounds (length " + std::to_string(a.size()) + ")");
    }

    static uint64_t key_bits(const Value& v) {
        if (auto* p = std::get_if<int64_t>(&v)) return static_cast<uint64_t>(*p);
        return runtime::f64_bits(std::get<double>(v));
    }

    void step(NodeId id, Frame& f) {
        const Node& n = g_.node(id);
        const auto& o = n.operands;
        Value& out = slot(id, f);
        switch (n.op) {
            case Op::Const:
                break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Mod:
            case Op::Max:
            case Op::Min:
            case Op::Lt:
            case Op::Le:
            case Op::Gt:
            case Op::Ge:
            case Op::Eq:
            case Op::Ne: {
                const Value& a = get(o[0], f);
                const Value& b = get(o[1], f);
                if (auto* pa = std::get_if<int64_t>(&a)) {
                    int64_t x = *pa, y = std::get<int64_t>(b);
                    uint64_t ux = static_cast<uint64_t>(x), uy = static_cast<uint64_t>(y);
                    switch (n.op) {
                        case Op::Add: out = static_cast<int64_t>(ux + uy); break;
                        case Op::Sub: out = static_cast<int64_t>(ux - uy); break;
                        case Op::Mul: out = static_cast<int64_t>(ux * uy); break;
                        case Op::Div:
                        case Op::Mod:
                            if (y == 0) fail(id, "division by zero");
                            if (x == std::numeric_limits<int64_t>::min() && y == -1) fail(id, "integer overflow");
                            out = n.op == Op::Div ? x / y : x % y;
                            break;
                        case Op::Max: out = x > y ? x : y; break;
                        case Op::Min: out = x < y ? x : y; break;
                        case Op::Lt: out = x < y; break;
                        case Op::Le: out = x <= y; break;
                        case Op::Gt: out = x > y; break;
                        case Op::Ge: out = x >= y; break;
                        case Op::Eq: out = x == y; break;
                        case Op::Ne: out = x != y; break;
                        default: break;
                    }
                } else if (auto* pd = std::get_if<double>(&a)) {
                    double x = *pd, y = std::get<double>(b);
                    switch (n.op) {
                        case Op::Add: out = x + y; break;
                        case Op::Sub: out = x - y; break;
                        case Op::Mul: out = x * y; break;
                        case Op::Div: out = x / y; break;
                        case Op::Max: out = x > y ? x : y; break;
                        case Op::Min: out = x < y ? x : y; break;
                        case Op::Lt: out = x < y; break;
                        case Op::Le: out = x <= y; break;
                        case Op::Gt: out = x > y; break;
                        case Op::Ge: out = x >= y; break;
                        case Op::Eq: out = x == y; break;
                        case Op::Ne: out = x != y; break;
                        default: fail(id, "bad f64 op");
                    }
                } else {
                    bool x = std::get<bool>(a), y = std::get<bool>(b);
                    out = n.op == Op::Eq ? (x == y) : (x != y);
                }
                break;
            }
            case Op::Neg: {
                const Value& a = get(o[0], f);
                if (auto* p = std::get_if<int64_t>(&a)) out = static_cast<int64_t>(0ull - static_cast<uint64_t>(*p));
                else out = -std::get<double>(a);
                break;
            }
            case Op::And: out = getb(o[0], f) && getb(o[1], f); break;
            case Op::Or: out = getb(o[0], f) || getb(o[1], f); break;
            case Op::Not: out = !getb(o[0], f); break;
            case Op::Select: out = getb(o[0], f) ? get(o[1], f) : get(o[2], f); break;
            case Op::ToFloat: out = static_cast<double>(geti(o[0], f)); break;
            case Op::ToInt: {
                double d = getf(o[0], f);
                if (!(d > -9.2e18 && d < 9.2e18)) fail(id, "float to int conversion out of range");
                out = static_cast<int64_t>(d);
                break;
            }
            case Op::Exp: out = std::exp(getf(o[0], f)); break;
            case Op::Log: out = std::log(getf(o[0], f)); break;

            case Op::VarNew: {
                auto c = std::make_shared<Cell>();
                const Value& init = get(o[0], f);
                if (auto* p = std::get_if<int64_t>(&init)) c->v = *p;
                else if (auto* p = std::get_if<double>(&init)) c->v = *p;
                else c->v = std::get<bool>(init);
                out = c;
                break;
            }
            case Op::VarRead: {
                auto& c = std::get<std::shared_ptr<Cell>>(get(o[0], f));
                out = std::visit([](auto x) -> Value { return x; }, c->v);
                break;
            }
            case Op::VarWrite: {
                auto& c = std::get<std::shared_ptr<Cell>>(get(o[0], f));
                const Value& v = get(o[1], f);
                if (auto* p = std::get_if<int64_t>(&v)) c->v = *p;
                else if (auto* p = std::get_if<double>(&v)) c->v = *p;
                else c->v = std::get<bool>(v);
                break;
            }

            case Op::ArrayNew: {
                int64_t len = geti(o[0], f);
                if (len < 0) fail(id, "negative array length");
                auto a = std::make_shared<Array>();
                a->elem = n.type.elem;
                if (a->elem == Kind::Float64) a->f.assign(static_cast<std::size_t>(len), 0.0);
                else a->i.assign(static_cast<std::size_t>(len), 0);
                alloc_bytes_ += len * 8;
                out = a;
                break;
            }
            case Op::ArrayLit: {
                auto a = std::make_shared<Array>();
                a->elem = n.type.elem;
                for (auto& l : n.imm) {
                    if (a->elem == Kind::Float64) a->f.push_back(std::get<double>(l));
                    else a->i.push_back(std::get<int64_t>(l));
                }
                alloc_bytes_ += static_cast<int64_t>(n.imm.size()) * 8;
                out = a;
                break;
            }
            case Op::VecNew: {
                auto a = std::make_shared<Array>();
                a->elem = n.type.elem;
                a->growable = true;
                out = a;
                break;
            }
            case Op::Load: {
                auto& a = std::get<std::shared_ptr<Array>>(get(o[0], f));
                int64_t i = geti(o[1], f);
                check_index(id, *a, i);
                if (a->elem == Kind::Float64) out = a->f[static_cast<std::size_t>(i)];
                else out = a->i[static_cast<std::size_t>(i)];
                break;
            }
            case Op::Store: {
                auto& a = std::get<std::shared_ptr<Array>>(get(o[0], f));
                int64_t i = geti(o[1], f);
                check_index(id, *a, i);
                if (a->elem == Kind::Float64) a->f[static_cast<std::size_t>(i)] = getf(o[2], f);
                else a->i[static_cast<std::size_t>(i)] = geti(o[2], f);
                break;
            }
            case Op::Len: out = std::get<std::shared_ptr<Array>>(get(o[0], f))->size(); break;
            case Op::Push: {
                auto& a = std::get<std::shared_ptr<Array>>(get(o[0], f));
                if (a->elem == Kind::Float64) a->f.push_back(getf(o[1], f));
                else a->i.push_back(geti(o[1], f));
                alloc_bytes_ += 8;
                break;
            }

            case Op::MapNew: out = std::make_shared<runtime::GroupHashMap>(n.imm.size()); break;
            case Op::MapInsert:
            case Op::MapLookup: {
                auto& m = std::get<std::shared_ptr<runtime::GroupHashMap>>(get(o[0], f));
                uint64_t key[16];
                if (o.size() - 1 > 16) fail(id, "too many hash keys");
                for (std::size_t k = 1; k < o.size(); ++k) key[k - 1] = key_bits(get(o[k], f));
                out = n.op == Op::MapInsert ? m->insert(key) : m->find(key);
                break;
            }
            case Op::MapSize: out = std::get<std::shared_ptr<runtime::GroupHashMap>>(get(o[0], f))->size(); break;
            case Op::MapKey: {
                auto& m = std::get<std::shared_ptr<runtime::GroupHashMap>>(get(o[0], f));
                int64_t grp = geti(o[1], f);
                if (grp < 0 || grp >= m->size()) fail(id, "group index out of range");
                uint64_t bits = m->key(grp, static_cast<std::size_t>(std::get<int64_t>(n.imm[0])));
                if (n.type == SType::f64()) out = runtime::bits_f64(bits);
                else out = static_cast<int64_t>(bits);
                break;
            }
            case Op::DictNew:
            case Op::FuncDef:
                out = Ref{id};
                break;

            case Op::Loop: {
                int64_t count = geti(o[0], f);
                NodeId body = o[1];
                for (int64_t i = 0; i < count; ++i) {
                    slot(o[2], f) = i;
                    run_block(body, f);
                }
                break;
            }
            case Op::If: {
                bool c = getb(o[0], f);
                if (o.size() == 5) {
                    run_block(c ? o[1] : o[3], f);
                    out = get(c ? o[2] : o[4], f);
                } else {
                    run_block(c ? o[1] : o[2], f);
                }
                break;
            }
            case Op::Call: {
                std::vector<Value> args;
                for (std::size_t k = 1; k < o.size(); ++k) args.push_back(get(o[k], f));
                out = call(o[0], args);
                break;
            }

            case Op::Print: {
                std::string line = format_scalar(get(o[0], f), "", nullptr);
                std::lock_guard lk(out_m_);
                result_.lines.push_back(std::move(line));
                break;
            }
            case Op::PrintRow: {
                auto cells = format_row(n, 0, f);
                std::string line;
                for (std::size_t c = 0; c < cells.size(); ++c) {
                    if (c) line += ',';
                    line += cells[c];
                }
                std::lock_guard lk(out_m_);
                result_.lines.push_back(std::move(line));
                break;
            }
            case Op::PrintAux: {
                auto cells = format_row(n, 1, f);
                std::string line = std::get<std::string>(n.imm[0]);
                for (auto& c : cells) line += ' ' + c;
                std::lock_guard lk(out_m_);
                result_.aux.push_back(std::move(line));
                break;
            }
            case Op::CsvLoad: out = csv_load(n, f); break;

            case Op::KernelMatmul: {
                auto a = geta(o[0], f);
                auto b = geta(o[2], f);
                auto c = geta(o[4], f);
                int64_t aoff = geti(o[1], f), boff = geti(o[3], f);
                int64_t m = geti(o[5], f), k = geti(o[6], f), nn = geti(o[7], f);
                int64_t ars = std::get<int64_t>(n.imm[0]), acs = std::get<int64_t>(n.imm[1]);
                int64_t brs = std::get<int64_t>(n.imm[2]), bcs = std::get<int64_t>(n.imm[3]);
                bool acc = std::get<bool>(n.imm[4]);
                if (m > 0 && nn > 0) {
                    if (k > 0) {
                        check_index(id, *a, aoff + (m - 1) * ars + (k - 1) * acs);
                        check_index(id, *a, aoff);
                        check_index(id, *b, boff + (k - 1) * brs + (nn - 1) * bcs);
                        check_index(id, *b, boff);
                    }
                    check_index(id, *c, m * nn - 1);
                }
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < nn; ++j) {
                        double s = 0.0;
                        for (int64_t p = 0; p < k; ++p)
                            s += a->f[static_cast<std::size_t>(aoff + i * ars + p * acs)] *
                                 b->f[static_cast<std::size_t>(boff + p * brs + j * bcs)];
                        double& dst = c->f[static_cast<std::size_t>(i * nn + j)];
                        dst = acc ? dst + s : s;
                    }
                break;
            }

            case Op::PoolNew: {
                int64_t workers = std::get<int64_t>(n.imm[0]);
                int64_t qcap = std::get<int64_t>(n.imm[1]);
                auto pool = std::make_shared<Pool>(o[0], std::get<int64_t>(n.imm[2]), static_cast<std::size_t>(qcap));
                Pool* p = pool.get();
                for (int64_t w = 0; w < workers; ++w)
                    pool->workers.emplace_back([this, p] { worker_loop(*p); });
                out = pool;
                break;
            }
            case Op::PoolSubmit: {
                auto& pool = std::get<std::shared_ptr<Pool>>(get(o[0], f));
                if (pool->finished) fail(id, "queue closed early: submit after finish");
                auto src = geta(o[1], f);
                int64_t rows = geti(o[2], f);
                auto data = std::make_shared<Array>();
                data->elem = Kind::Float64;
                int64_t cnt = rows * pool->width;
                if (cnt > src->size()) fail(id, "batch larger than its buffer");
                data->f.assign(src->f.begin(), src->f.begin() + cnt);
                alloc_bytes_ += cnt * 8;
                int64_t seq;
                {
                    std::lock_guard lk(pool->m);
                    seq = pool->submitted++;
                    pool->results.emplace_back();
                    pool->rows.push_back(rows);
                }
                pool->queue.push(PoolTask{seq, std::move(data), rows});
                break;
            }
            case Op::PoolFinish: {
                auto& pool = std::get<std::shared_ptr<Pool>>(get(o[0], f));
                if (pool->finished) fail(id, "pool finished twice");
                pool->queue.close();
                for (auto& t : pool->workers) t.join();
                pool->finished = true;
                if (pool->error) std::rethrow_exception(pool->error);
                out = pool->submitted;
                break;
            }
            case Op::PoolResult: {
                auto& pool = std::get<std::shared_ptr<Pool>>(get(o[0], f));
                int64_t seq = geti(o[1], f);
                if (!pool->finished) fail(id, "pool result read before finish");
                if (seq < 0 || seq >= pool->submitted) fail(id, "batch sequence out of range");
                out = pool->results[static_cast<std::size_t>(seq)];
                break;
            }
            case Op::PoolRows: {
                auto& pool = std::get<std::shared_ptr<Pool>>(get(o[0], f));
                int64_t seq = geti(o[1], f);
                if (seq < 0 || seq >= pool->submitted) fail(id, "batch sequence out of range");
                out = pool->rows[static_cast<std::size_t>(seq)];
                break;
            }

            case Op::CounterInc: {
                std::lock_guard lk(out_m_);
                ++result_.counters[std::get<std::string>(n.imm[0])];
                break;
            }
            case Op::TimerStart: {
                std::lock_guard lk(out_m_);
                timer_open_[std::get<std::string>(n.imm[0])] = clock::now();
                break;
            }
            case Op::TimerStop: {
                std::lock_guard lk(out_m_);
                const auto& name = std::get<std::string>(n.imm[0]);
                auto it = timer_open_.find(name);
                if (it != timer_open_.end()) timers_[name] += seconds_since(it->second);
                break;
            }
            default:
                fail(id, std::string("cannot interpret ") + op_name(n.op));
        }
    }

    void worker_loop(Pool& pool) {
        while (auto task = pool.queue.pop()) {
            try {
                Value r = call(pool.func, {task->data, task->rows});
                auto arr = std::get<std::shared_ptr<Array>>(r);
                std::lock_guard lk(pool.m);
                pool.results[static_cast<std::size_t>(task->seq)] = arr;
            } catch (...) {
                std::lock_guard lk(pool.m);
                if (!pool.error) pool.error = std::current_exception();
            }
        }
    }

    Value csv_load(const Node& n, Frame& f) {
        auto t0 = clock::now();
        std::string path = std::get<std::string>(n.imm[0]);
        bool header = std::get<bool>(n.imm[1]);
        int64_t input = std::get<int64_t>(n.imm[2]);
        if (auto it = opts_.input_paths.find(input); it != opts_.input_paths.end()) path = it->second;
        std::size_t nfields = static_cast<std::size_t>(std::get<int64_t>(n.imm[3]));
        struct Field {
            std::string kind;
            std::shared_ptr<Array> store;
            std::unordered_map<std::string, int64_t> dict;
        };
        std::vector<Field> fields(nfields);
        for (std::size_t j = 0; j < nfields; ++j) {
            fields[j].kind = std::get<std::string>(n.imm[4 + 3 * j]);
            auto so = static_cast<std::size_t>(std::get<int64_t>(n.imm[5 + 3 * j]));
            fields[j].store = geta(n.operands[so], f);
            int64_t dop = std::get<int64_t>(n.imm[6 + 3 * j]);
            if (dop >= 0) {
                const Node& d = g_.node(n.operands[static_cast<std::size_t>(dop)]);
                for (std::size_t c = 0; c < d.imm.size(); ++c)
                    fields[j].dict.emplace(std::get<std::string>(d.imm[c]), static_cast<int64_t>(c));
            }
        }
        std::string text = runtime::read_file(path);
        int64_t rows = 0;
        runtime::for_each_csv_row(text, header, [&](const std::vector<std::string_view>& cells, int64_t rowno) {
            if (cells.size() != nfields)
                throw RunError("row " + std::to_string(rowno) + ": expected " + std::to_string(nfields) +
                               " fields, got " + std::to_string(cells.size()));
            for (std::size_t j = 0; j < nfields; ++j) {
                Field& fd = fields[j];
                if (fd.kind == "f64") {
                    fd.store->f.push_back(runtime::parse_f64(cells[j], rowno, j));
                } else if (fd.kind == "i64") {
                    fd.store->i.push_back(runtime::parse_i64(cells[j], rowno, j));
                } else {
                    auto it = fd.dict.find(std::string(cells[j]));
                    if (it == fd.dict.end()) throw RunError(runtime::csv_error(rowno, j, "unknown string", cells[j]));
                    fd.store->i.push_back(it->second);
                }
            }
            ++rows;
        });
        alloc_bytes_ += rows * static_cast<int64_t>(nfields) * 8;
        load_time_ += seconds_since(t0);
        return rows;
    }
};

}  // namespace interp

// Runs a scheduled graph. Throws RunError on run-time failures.
inline RunResult interpret(const IrGraph& g, const Schedule& s, const InterpretOptions& opts = {}) {
    interp::Machine m(g, s, opts);
    return m.run();
}

inline RunResult interpret(const IrGraph& g, const InterpretOptions& opts = {}) {
    Schedule s = schedule(g);
    return interpret(g, s, opts);
}

}  // namespace unistage
