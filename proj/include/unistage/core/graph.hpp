#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unistage/core/error.hpp"
#include "unistage/core/types.hpp"

namespace unistage {

enum class Op : uint8_t {
    Block,
    Const,
    Param,
    LoopIndex,
    // pure scalar arithmetic
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Neg,
    Max,
    Min,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Not,
    Select,
    ToFloat,
    ToInt,
    Exp,
    Log,
    // mutable cells
    VarNew,
    VarRead,
    VarWrite,
    // flat buffers; Array is fixed-size, Vec grows by Push
    ArrayNew,
    ArrayLit,
    VecNew,
    Load,
    Store,
    Len,
    Push,
    // key -> dense group index, assigned in first-seen order
    MapNew,
    MapInsert,
    MapLookup,
    MapSize,
    MapKey,
    DictNew,
    // structured control
    Loop,
    If,
    FuncDef,
    Call,
    // observable output
    Print,
    PrintRow,
    PrintAux,
    CsvLoad,
    KernelMatmul,
    // batched worker pool
    PoolNew,
    PoolSubmit,
    PoolFinish,
    PoolResult,
    PoolRows,
    CounterInc,
    TimerStart,
    TimerStop,
};

inline constexpr Op kAllOps[] = {
    Op::Block,    Op::Const,      Op::Param,    Op::LoopIndex,  Op::Add,        Op::Sub,
    Op::Mul,      Op::Div,        Op::Mod,      Op::Neg,        Op::Max,        Op::Min,
    Op::Lt,       Op::Le,         Op::Gt,       Op::Ge,         Op::Eq,         Op::Ne,
    Op::And,      Op::Or,         Op::Not,      Op::Select,     Op::ToFloat,    Op::ToInt,
    Op::Exp,      Op::Log,        Op::VarNew,   Op::VarRead,    Op::VarWrite,   Op::ArrayNew,
    Op::ArrayLit, Op::VecNew,     Op::Load,     Op::Store,      Op::Len,        Op::Push,
    Op::MapNew,   Op::MapInsert,  Op::MapLookup, Op::MapSize,   Op::MapKey,     Op::DictNew,
    Op::Loop,     Op::If,         Op::FuncDef,  Op::Call,       Op::Print,      Op::PrintRow,
    Op::PrintAux, Op::CsvLoad,    Op::KernelMatmul, Op::PoolNew, Op::PoolSubmit, Op::PoolFinish,
    Op::PoolResult, Op::PoolRows, Op::CounterInc, Op::TimerStart, Op::TimerStop,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Block: return "block";
        case Op::Const: return "const";
        case Op::Param: return "param";
        case Op::LoopIndex: return "loop-index";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Mod: return "mod";
        case Op::Neg: return "neg";
        case Op::Max: return "max";
        case Op::Min: return "min";
        case Op::Lt: return "lt";
        case Op::Le: return "le";
        case Op::Gt: return "gt";
        case Op::Ge: return "ge";
        case Op::Eq: return "eq";
        case Op::Ne: return "ne";
        case Op::And: return "and";
        case Op::Or: return "or";
        case Op::Not: return "not";
        case Op::Select: return "select";
        case Op::ToFloat: return "to-float";
        case Op::ToInt: return "to-int";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::VarNew: return "var-new";
        case Op::VarRead: return "var-read";
        case Op::VarWrite: return "var-write";
        case Op::ArrayNew: return "array-alloc";
        case Op::ArrayLit: return "array-lit";
        case Op::VecNew: return "vec-new";
        case Op::Load: return "array-read";
        case Op::Store: return "array-write";
        case Op::Len: return "array-len";
        case Op::Push: return "array-push";
        case Op::MapNew: return "hashmap-new";
        case Op::MapInsert: return "hashmap-insert";
        case Op::MapLookup: return "hashmap-lookup";
        case Op::MapSize: return "hashmap-size";
        case Op::MapKey: return "hashmap-key";
        case Op::DictNew: return "dict";
        case Op::Loop: return "loop";
        case Op::If: return "if";
        case Op::FuncDef: return "func-def";
        case Op::Call: return "func-call";
        case Op::Print: return "print";
        case Op::PrintRow: return "print-row";
        case Op::PrintAux: return "print-aux";
        case Op::CsvLoad: return "csv-load";
        case Op::KernelMatmul: return "kernel-matmul";
        case Op::PoolNew: return "pool-new";
        case Op::PoolSubmit: return "pool-submit";
        case Op::PoolFinish: return "pool-finish";
        case Op::PoolResult: return "pool-result";
        case Op::PoolRows: return "pool-rows";
        case Op::CounterInc: return "counter-inc";
        case Op::TimerStart: return "timer-start";
        case Op::TimerStop: return "timer-stop";
    }
    return "?";
}

inline Op op_from_name(std::string_view s) {
    for (Op op : kAllOps)
        if (s == op_name(op)) return op;
    throw Error("unknown op '" + std::string(s) + "'");
}

inline bool is_compound(Op op) { return op == Op::Loop || op == Op::If || op == Op::FuncDef; }

enum class BlockKind : int64_t { Root = 0, LoopBody = 1, Branch = 2, FuncBody = 3 };

enum class EffectKind : uint8_t { Pure, Read, Write, Global };

// Per-allocation effect regions: a region is the NodeId that produced the
// buffer, cell or map. Reads and writes name the regions they touch.
struct Effect {
    bool global = false;
    std::vector<NodeId> reads;
    std::vector<NodeId> writes;

    EffectKind kind() const {
        if (global) return EffectKind::Global;
        if (!writes.empty()) return EffectKind::Write;
        if (!reads.empty()) return EffectKind::Read;
        return EffectKind::Pure;
    }
    bool observable() const { return global || !writes.empty(); }

    static void insert_sorted(std::vector<NodeId>& v, NodeId r) {
        auto it = std::lower_bound(v.begin(), v.end(), r);
        if (it == v.end() || *it != r) v.insert(it, r);
    }
    void add_read(NodeId r) { insert_sorted(reads, r); }
    void add_write(NodeId r) { insert_sorted(writes, r); }

    friend bool operator==(const Effect&, const Effect&) = default;
};

struct Node {
    NodeId id = 0;
    Op op = Op::Block;
    SType type;
    std::vector<NodeId> operands;
    std::vector<Literal> imm;
    Effect effect;
    NodeId scope = 0;
};

// Handle to a next-stage value; the node computes it in the generated program.
struct StagedValue {
    NodeId node = kNoNode;
    SType type;

    static StagedValue unit() { return {kNoNode, SType::unit()}; }
    bool is_unit() const { return node == kNoNode; }
    friend bool operator==(const StagedValue&, const StagedValue&) = default;
};

struct FuncHandle {
    NodeId def = kNoNode;
    std::string name;
    std::vector<SType> params;
    SType result;
};

class IrGraph {
public:
    using BodyFn = std::function<void(StagedValue)>;
    using BranchFn = std::function<StagedValue()>;
    using FuncBodyFn = std::function<StagedValue(const std::vector<StagedValue>&)>;

    // Function bodies at or below this node count are inlined by optimize.
    std::size_t inline_threshold = 32;

    IrGraph() {
        Node root;
        root.id = 0;
        root.op = Op::Block;
        root.imm = {static_cast<int64_t>(BlockKind::Root)};
        root.scope = 0;
        nodes_.push_back(root);
        children_.emplace_back();
        scope_stack_.push_back(0);
    }

    // ---- inspection -------------------------------------------------------

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const {
        if (id >= nodes_.size()) throw InternalError("dangling node id " + std::to_string(id));
        return nodes_[id];
    }
    const std::vector<Node>& nodes() const { return nodes_; }
    NodeId root() const { return 0; }
    NodeId current_scope() const { return scope_stack_.back(); }
    const std::vector<NodeId>& children(NodeId block) const { return children_.at(block); }
    const std::map<std::string, NodeId>& functions() const { return functions_; }

    BlockKind block_kind(NodeId block) const {
        const Node& b = node(block);
        if (b.op != Op::Block) throw InternalError("node " + std::to_string(block) + " is not a block");
        return static_cast<BlockKind>(std::get<int64_t>(b.imm.at(0)));
    }

    // True when `scope` equals `ancestor` or is nested inside it.
    bool scope_within(NodeId scope, NodeId ancestor) const {
        while (true) {
            if (scope == ancestor) return true;
            if (scope == 0) return false;
            scope = nodes_[scope].scope;
        }
    }

    int scope_depth(NodeId scope) const {
        int d = 0;
        while (scope != 0) {
            scope = nodes_[scope].scope;
            ++d;
        }
        return d;
    }

    // Innermost enclosing function body, or kNoNode.
    NodeId enclosing_function(NodeId scope) const {
        while (scope != 0) {
            if (block_kind(scope) == BlockKind::FuncBody) return scope;
            scope = nodes_[scope].scope;
        }
        return kNoNode;
    }

    // Nodes inside a function body (its whole block subtree, excluding the block).
    std::size_t body_size(NodeId block) const {
        std::size_t n = 0;
        for (NodeId c : children_.at(block)) {
            ++n;
            if (nodes_[c].op == Op::Block) n += body_size(c);
        }
        return n;
    }

    FuncHandle func_handle(NodeId def) const {
        const Node& d = node(def);
        if (d.op != Op::FuncDef) throw StagingError("node " + std::to_string(def) + " is not a function");
        FuncHandle h;
        h.def = def;
        h.name = std::get<std::string>(d.imm.at(0));
        for (NodeId p : children_.at(d.operands[0]))
            if (nodes_[p].op == Op::Param) h.params.push_back(nodes_[p].type);
        h.result = nodes_[d.operands[1]].type;
        return h;
    }

    bool has_func(const std::string& name) const { return functions_.count(name) || defining_.count(name); }

    FuncHandle lookup_func(const std::string& name) const {
        if (defining_.count(name))
            throw StagingError("recursive staged function '" + name + "' is not supported");
        auto it = functions_.find(name);
        if (it == functions_.end()) throw StagingError("unknown staged function '" + name + "'");
        return func_handle(it->second);
    }

    // ---- scope control ----------------------------------------------------

    NodeId make_block(BlockKind kind) {
        Node b;
        b.id = next_id();
        b.op = Op::Block;
        b.imm = {static_cast<int64_t>(kind)};
        b.scope = current_scope();
        return append(std::move(b));
    }

    template <class F>
    auto in_block(NodeId block, F&& f) {
        scope_stack_.push_back(block);
        struct Pop {
            std::vector<NodeId>& s;
            ~Pop() { s.pop_back(); }
        } pop{scope_stack_};
        return f();
    }

    // Builds nodes at the program root regardless of the current scope
    // (function definitions, lazily staged model weights).
    template <class F>
    auto at_root(F&& f) {
        return in_block(0, std::forward<F>(f));
    }

    // Used by graph rewriters that replay nodes into explicit scopes.
    void set_scope(NodeId scope) {
        scope_stack_.clear();
        scope_stack_.push_back(scope);
    }

    // Regions under an active tape; staged control flow is rejected there.
    void enter_grad_region() { ++grad_depth_; }
    void leave_grad_region() {
        if (grad_depth_ > 0) --grad_depth_;
    }
    int grad_depth() const { return grad_depth_; }

    // ---- generic construction --------------------------------------------

    // Appends a node after constant folding, visibility checks, effect
    // inference and CSE. Every smart constructor funnels through here.
    StagedValue make(Op op, SType type, std::vector<NodeId> operands, std::vector<Literal> imm = {}) {
        if (op == Op::Block) throw InternalError("blocks are created with make_block");
        check_operands(op, operands);
        if (auto folded = fold(op, type, operands)) return *folded;

        Node n;
        n.id = next_id();
        n.op = op;
        n.type = type;
        n.operands = std::move(operands);
        n.imm = std::move(imm);
        n.scope = current_scope();
        n.effect = infer_effect(n);

        std::string key;
        if (cse_eligible(n)) {
            key = cse_key(n);
            if (auto it = cse_.find(key); it != cse_.end()) return {it->second, nodes_[it->second].type};
        }
        NodeId id = append(std::move(n));
        if (!key.empty()) cse_.emplace(std::move(key), id);
        return {id, nodes_[id].type};
    }

    // ---- constants and pure primitives ------------------------------------

    StagedValue constant(const Literal& value, SType type) {
        bool ok = (type == SType::i64() && std::holds_alternative<int64_t>(value)) ||
                  (type == SType::f64() && std::holds_alternative<double>(value)) ||
                  (type == SType::boolean() && std::holds_alternative<bool>(value));
        if (!ok) throw StagingError("literal " + format_literal(value) + " does not match type " + type.str());
        return make(Op::Const, type, {}, {value});
    }
    StagedValue i64(int64_t v) { return constant(v, SType::i64()); }
    StagedValue f64(double v) { return constant(v, SType::f64()); }
    StagedValue boolean(bool v) { return constant(v, SType::boolean()); }

    bool is_const(StagedValue v) const { return !v.is_unit() && nodes_[v.node].op == Op::Const; }
    const Literal& const_value(StagedValue v) const { return nodes_[v.node].imm.at(0); }

    // Pure operation with operand type checking.
    StagedValue prim(Op op, const std::vector<StagedValue>& args) {
        auto need = [&](std::size_t n) {
            if (args.size() != n)
                throw StagingError(std::string(op_name(op)) + " expects " + std::to_string(n) + " operands, got " +
                                   std::to_string(args.size()));
        };
        auto ids = [&] {
            std::vector<NodeId> v;
            for (auto& a : args) {
                if (a.is_unit()) throw StagingError(std::string(op_name(op)) + ": unit operand");
                v.push_back(a.node);
            }
            return v;
        };
        auto same_numeric = [&] {
            need(2);
            if (!args[0].type.is_numeric() || args[0].type != args[1].type)
                throw StagingError(std::string(op_name(op)) + ": operand type mismatch (" + args[0].type.str() +
                                   ", " + args[1].type.str() + ")");
        };
        switch (op) {
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Max:
            case Op::Min:
                same_numeric();
                return make(op, args[0].type, ids());
            case Op::Mod:
                same_numeric();
                if (args[0].type != SType::i64()) throw StagingError("mod: operands must be i64");
                return make(op, args[0].type, ids());
            case Op::Neg:
                need(1);
                if (!args[0].type.is_numeric()) throw StagingError("neg: numeric operand required");
                return make(op, args[0].type, ids());
            case Op::Lt:
            case Op::Le:
            case Op::Gt:
            case Op::Ge:
                same_numeric();
                return make(op, SType::boolean(), ids());
            case Op::Eq:
            case Op::Ne:
                need(2);
                if (!args[0].type.is_scalar() || args[0].type != args[1].type)
                    throw StagingError(std::string(op_name(op)) + ": operand type mismatch (" + args[0].type.str() +
                                       ", " + args[1].type.str() + ")");
                return make(op, SType::boolean(), ids());
            case Op::And:
            case Op::Or:
                need(2);
                if (args[0].type != SType::boolean() || args[1].type != SType::boolean())
                    throw StagingError(std::string(op_name(op)) + ": bool operands required");
                return make(op, SType::boolean(), ids());
            case Op::Not:
                need(1);
                if (args[0].type != SType::boolean()) throw StagingError("not: bool operand required");
                return make(op, SType::boolean(), ids());
            case Op::Select:
                need(3);
                if (args[0].type != SType::boolean()) throw StagingError("select: bool condition required");
                if (!args[1].type.is_scalar() || args[1].type != args[2].type)
                    throw StagingError("select: branch type mismatch");
                return make(op, args[1].type, ids());
            case Op::ToFloat:
                need(1);
                if (args[0].type != SType::i64()) throw StagingError("to-float: i64 operand required");
                return make(op, SType::f64(), ids());
            case Op::ToInt:
                need(1);
                if (args[0].type != SType::f64()) throw StagingError("to-int: f64 operand required");
                return make(op, SType::i64(), ids());
            case Op::Exp:
            case Op::Log:
                need(1);
                if (args[0].type != SType::f64()) throw StagingError(std::string(op_name(op)) + ": f64 operand required");
                return make(op, SType::f64(), ids());
            default:
                throw StagingError(std::string(op_name(op)) + " is not a pure primitive");
        }
    }

    StagedValue add(StagedValue a, StagedValue b) { return prim(Op::Add, {a, b}); }
    StagedValue sub(StagedValue a, StagedValue b) { return prim(Op::Sub, {a, b}); }
    StagedValue mul(StagedValue a, StagedValue b) { return prim(Op::Mul, {a, b}); }
    StagedValue div(StagedValue a, StagedValue b) { return prim(Op::Div, {a, b}); }
    StagedValue mod(StagedValue a, StagedValue b) { return prim(Op::Mod, {a, b}); }
    StagedValue neg(StagedValue a) { return prim(Op::Neg, {a}); }
    StagedValue max(StagedValue a, StagedValue b) { return prim(Op::Max, {a, b}); }
    StagedValue min(StagedValue a, StagedValue b) { return prim(Op::Min, {a, b}); }
    StagedValue lt(StagedValue a, StagedValue b) { return prim(Op::Lt, {a, b}); }
    StagedValue le(StagedValue a, StagedValue b) { return prim(Op::Le, {a, b}); }
    StagedValue gt(StagedValue a, StagedValue b) { return prim(Op::Gt, {a, b}); }
    StagedValue ge(StagedValue a, StagedValue b) { return prim(Op::Ge, {a, b}); }
    StagedValue eq(StagedValue a, StagedValue b) { return prim(Op::Eq, {a, b}); }
    StagedValue ne(StagedValue a, StagedValue b) { return prim(Op::Ne, {a, b}); }
    StagedValue land(StagedValue a, StagedValue b) { return prim(Op::And, {a, b}); }
    StagedValue lor(StagedValue a, StagedValue b) { return prim(Op::Or, {a, b}); }
    StagedValue lnot(StagedValue a) { return prim(Op::Not, {a}); }
    StagedValue select(StagedValue c, StagedValue a, StagedValue b) { return prim(Op::Select, {c, a, b}); }
    StagedValue to_f64(StagedValue a) { return prim(Op::ToFloat, {a}); }
    StagedValue to_i64(StagedValue a) { return prim(Op::ToInt, {a}); }
    StagedValue exp(StagedValue a) { return prim(Op::Exp, {a}); }
    StagedValue log(StagedValue a) { return prim(Op::Log, {a}); }

    // ---- effectful construction -------------------------------------------

    // Effectful node; never merged with another node. Effects derive from op.
    StagedValue reflect(Op op, SType type, std::vector<NodeId> operands, std::vector<Literal> imm = {}) {
        if (pure_op(op)) throw StagingError(std::string("reflect: ") + op_name(op) + " is pure");
        return make(op, type, std::move(operands), std::move(imm));
    }

    StagedValue var_new(StagedValue init) {
        if (!init.type.is_scalar()) throw StagingError("var-new: scalar initial value required");
        return make(Op::VarNew, SType::var(init.type.kind), {init.node});
    }
    StagedValue var_read(StagedValue var) {
        expect_kind(var, Kind::Var, "var-read");
        return make(Op::VarRead, var.type.element(), {var.node});
    }
    void var_write(StagedValue var, StagedValue v) {
        expect_kind(var, Kind::Var, "var-write");
        if (v.type != var.type.element()) throw StagingError("var-write: value type mismatch");
        make(Op::VarWrite, SType::unit(), {var.node, v.node});
    }

    StagedValue array_new(Kind elem, StagedValue len) {
        check_elem(elem, "array-alloc");
        if (len.type != SType::i64()) throw StagingError("array-alloc: i64 length required");
        return make(Op::ArrayNew, SType::array(elem), {len.node});
    }
    StagedValue array_lit(Kind elem, const std::vector<Literal>& values) {
        check_elem(elem, "array-lit");
        for (auto& v : values) {
            bool ok = elem == Kind::Float64 ? std::holds_alternative<double>(v) : std::holds_alternative<int64_t>(v);
            if (!ok) throw StagingError("array-lit: literal type mismatch");
        }
        return make(Op::ArrayLit, SType::array(elem), {}, values);
    }
    StagedValue vec_new(Kind elem) {
        check_elem(elem, "vec-new");
        return make(Op::VecNew, SType::vec(elem), {});
    }
    StagedValue load(StagedValue buf, StagedValue index) {
        expect_buffer(buf, "array-read");
        if (index.type != SType::i64()) throw StagingError("array-read: i64 index required");
        return make(Op::Load, buf.type.element(), {buf.node, index.node});
    }
    void store(StagedValue buf, StagedValue index, StagedValue v) {
        expect_buffer(buf, "array-write");
        if (index.type != SType::i64()) throw StagingError("array-write: i64 index required");
        if (v.type != buf.type.element()) throw StagingError("array-write: value type mismatch");
        make(Op::Store, SType::unit(), {buf.node, index.node, v.node});
    }
    StagedValue len(StagedValue buf) {
        expect_buffer(buf, "array-len");
        return make(Op::Len, SType::i64(), {buf.node});
    }
    void push(StagedValue vec, StagedValue v) {
        expect_kind(vec, Kind::Vec, "array-push");
        if (v.type != vec.type.element()) throw StagingError("array-push: value type mismatch");
        make(Op::Push, SType::unit(), {vec.node, v.node});
    }

    // Keys are i64 or f64; `key_kinds` fixes the key tuple layout.
    StagedValue map_new(const std::vector<Kind>& key_kinds) {
        if (key_kinds.empty()) throw StagingError("hashmap-new: at least one key required");
        std::vector<Literal> imm;
        for (Kind k : key_kinds) {
            if (k != Kind::Int64 && k != Kind::Float64) throw StagingError("hashmap-new: keys must be i64 or f64");
            imm.emplace_back(std::string(kind_name(k)));
        }
        return make(Op::MapNew, SType::map(), {}, std::move(imm));
    }
    StagedValue map_insert(StagedValue map, const std::vector<StagedValue>& keys) {
        return make(Op::MapInsert, SType::i64(), map_operands(map, keys, "hashmap-insert"));
    }
    StagedValue map_lookup(StagedValue map, const std::vector<StagedValue>& keys) {
        return make(Op::MapLookup, SType::i64(), map_operands(map, keys, "hashmap-lookup"));
    }
    StagedValue map_size(StagedValue map) {
        expect_kind(map, Kind::Map, "hashmap-size");
        return make(Op::MapSize, SType::i64(), {map.node});
    }
    StagedValue map_key(StagedValue map, StagedValue group, std::size_t j) {
        expect_kind(map, Kind::Map, "hashmap-key");
        auto kinds = map_key_kinds(map.node);
        if (j >= kinds.size()) throw StagingError("hashmap-key: key index out of range");
        return make(Op::MapKey, SType{kinds[j], Kind::Unit}, {map.node, group.node}, {static_cast<int64_t>(j)});
    }
    std::vector<Kind> map_key_kinds(NodeId map) const {
        std::vector<Kind> kinds;
        for (auto& l : node(map).imm) kinds.push_back(SType::parse(std::get<std::string>(l)).kind);
        return kinds;
    }

    StagedValue dict_new(const std::vector<std::string>& entries) {
        std::vector<Literal> imm(entries.begin(), entries.end());
        return at_root([&] { return make(Op::DictNew, SType::dict(), {}, std::move(imm)); });
    }

    void print(StagedValue v) {
        if (!v.type.is_scalar()) throw StagingError("print: scalar value required");
        make(Op::Print, SType::unit(), {v.node});
    }

    // One comma-separated output line. `dicts[i]` (optional) decodes column i.
    void print_row(const std::vector<StagedValue>& values, const std::vector<StagedValue>& dicts = {}) {
        make(Op::PrintRow, SType::unit(), row_operands(values, dicts, "print-row"), row_imm(values, dicts));
    }
    // Side-channel line (diagnostics, checkpoints), prefixed by `tag`.
    void print_aux(const std::string& tag, const std::vector<StagedValue>& values) {
        auto imm = row_imm(values, {});
        imm.insert(imm.begin(), tag);
        make(Op::PrintAux, SType::unit(), row_operands(values, {}, "print-aux"), std::move(imm));
    }

    void counter_inc(const std::string& name) { make(Op::CounterInc, SType::unit(), {}, {name}); }
    void timer_start(const std::string& name) { make(Op::TimerStart, SType::unit(), {}, {name}); }
    void timer_stop(const std::string& name) { make(Op::TimerStop, SType::unit(), {}, {name}); }

    // ---- control flow -----------------------------------------------------

    StagedValue staged_if(StagedValue cond, const BranchFn& then_fn, const BranchFn& else_fn) {
        if (grad_depth_ > 0) throw StagingError("staged if is not allowed inside a differentiated region");
        return kernel_if(cond, then_fn, else_fn);
    }

    void staged_loop(StagedValue count, const BodyFn& body) {
        if (grad_depth_ > 0) throw StagingError("staged loop is not allowed inside a differentiated region");
        kernel_loop(count, body);
    }

    // Control flow used by library kernels (tensor loops, operators); exempt
    // from the differentiated-region restriction.
    StagedValue kernel_if(StagedValue cond, const BranchFn& then_fn, const BranchFn& else_fn) {
        if (cond.type != SType::boolean()) throw StagingError("if: condition must be bool");
        if (is_const(cond)) return std::get<bool>(const_value(cond)) ? then_fn() : else_fn();
        NodeId tb = make_block(BlockKind::Branch);
        StagedValue tr = in_block(tb, then_fn);
        NodeId eb = make_block(BlockKind::Branch);
        StagedValue er = in_block(eb, else_fn);
        if (tr.type != er.type)
            throw StagingError("if: branch type mismatch (" + tr.type.str() + " vs " + er.type.str() + ")");
        if (tr.type != SType::unit() && !tr.type.is_scalar()) throw StagingError("if: branch results must be scalar");
        if (tr.type == SType::unit()) return make(Op::If, SType::unit(), {cond.node, tb, eb}, {false});
        return make(Op::If, tr.type, {cond.node, tb, tr.node, eb, er.node}, {true});
    }

    void kernel_loop(StagedValue count, const BodyFn& body) {
        if (count.type != SType::i64()) throw StagingError("loop: count must be i64");
        NodeId blk = make_block(BlockKind::LoopBody);
        StagedValue idx = in_block(blk, [&] { return make(Op::LoopIndex, SType::i64(), {}); });
        in_block(blk, [&] { body(idx); });
        make(Op::Loop, SType::unit(), {count.node, blk, idx.node});
    }

    FuncHandle staged_func(const std::string& name, const std::vector<SType>& params, const FuncBodyFn& body) {
        if (functions_.count(name) || defining_.count(name))
            throw StagingError("staged function '" + name + "' already defined");
        for (auto& p : params)
            if (!p.is_scalar() && !p.is_buffer()) throw StagingError("function parameters must be scalars or buffers");
        defining_.insert(name);
        struct Done {
            std::set<std::string>& s;
            const std::string& n;
            ~Done() { s.erase(n); }
        } done{defining_, name};
        return at_root([&] {
            NodeId blk = make_block(BlockKind::FuncBody);
            StagedValue result = in_block(blk, [&] {
                std::vector<StagedValue> args;
                for (std::size_t i = 0; i < params.size(); ++i)
                    args.push_back(make(Op::Param, params[i], {}, {static_cast<int64_t>(i)}));
                return body(args);
            });
            if (result.is_unit()) throw StagingError("staged function '" + name + "' must return a value");
            StagedValue def = make(Op::FuncDef, SType::func(), {blk, result.node},
                                   {name, static_cast<int64_t>(params.size())});
            functions_[name] = def.node;
            return func_handle(def.node);
        });
    }

    StagedValue call(const FuncHandle& f, const std::vector<StagedValue>& args) {
        if (defining_.count(f.name))
            throw StagingError("recursive staged function '" + f.name + "' is not supported");
        if (args.size() != f.params.size())
            throw StagingError("call to '" + f.name + "': expected " + std::to_string(f.params.size()) +
                               " arguments, got " + std::to_string(args.size()));
        std::vector<NodeId> ops{f.def};
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i].type != f.params[i])
                throw StagingError("call to '" + f.name + "': argument " + std::to_string(i) + " has type " +
                                   args[i].type.str() + ", expected " + f.params[i].str());
            ops.push_back(args[i].node);
        }
        return make(Op::Call, f.result, std::move(ops));
    }

    // ---- deserialization support -----------------------------------------

    // Appends a fully specified node (no folding or CSE) and indexes it as
    // `make` would have. Used when reading serialized graphs.
    void append_raw(Node n) {
        if (n.id != nodes_.size()) throw Error("node ids must be dense and ascending");
        for (NodeId o : n.operands)
            if (o >= n.id) throw Error("node " + std::to_string(n.id) + " references a later node");
        if (n.scope >= n.id && n.id != 0) throw Error("node " + std::to_string(n.id) + " has a later scope");
        if (n.id == 0) {
            nodes_[0] = n;
            return;
        }
        set_scope(n.scope);
        std::string key;
        if (cse_eligible(n)) key = cse_key(n);
        NodeId id = append(std::move(n));
        if (!key.empty()) cse_.emplace(std::move(key), id);
        set_scope(0);
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<NodeId>> children_;
    std::vector<NodeId> scope_stack_;
    std::unordered_map<std::string, NodeId> cse_;
    // (scope, region) -> last node in that scope that wrote the region
    std::map<std::pair<NodeId, NodeId>, NodeId> last_write_;
    std::map<std::string, NodeId> functions_;
    std::set<std::string> defining_;
    int grad_depth_ = 0;

    NodeId next_id() const { return static_cast<NodeId>(nodes_.size()); }

    NodeId append(Node n) {
        NodeId id = n.id;
        for (NodeId r : n.effect.writes) last_write_[{n.scope, r}] = id;
        children_[n.scope].push_back(id);
        if (n.op == Op::FuncDef) functions_[std::get<std::string>(n.imm.at(0))] = id;
        nodes_.push_back(std::move(n));
        children_.emplace_back();
        return id;
    }

    static bool pure_op(Op op) {
        switch (op) {
            case Op::Const:
            case Op::Param:
            case Op::LoopIndex:
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Mod:
            case Op::Neg:
            case Op::Max:
            case Op::Min:
            case Op::Lt:
            case Op::Le:
            case Op::Gt:
            case Op::Ge:
            case Op::Eq:
            case Op::Ne:
            case Op::And:
            case Op::Or:
            case Op::Not:
            case Op::Select:
            case Op::ToFloat:
            case Op::ToInt:
            case Op::Exp:
            case Op::Log:
            case Op::DictNew:
            case Op::FuncDef:
                return true;
            default:
                return false;
        }
    }

    static bool simple_read_op(Op op) {
        switch (op) {
            case Op::VarRead:
            case Op::Load:
            case Op::Len:
            case Op::MapLookup:
            case Op::MapSize:
            case Op::MapKey:
                return true;
            default:
                return false;
        }
    }

    bool cse_eligible(const Node& n) const {
        if (n.op == Op::Block || n.op == Op::FuncDef || n.op == Op::Param || n.op == Op::LoopIndex) return false;
        EffectKind k = n.effect.kind();
        if (k == EffectKind::Pure) return !is_compound(n.op) && n.op != Op::Call;
        return k == EffectKind::Read && simple_read_op(n.op);
    }

    std::string cse_key(const Node& n) const {
        std::string key = std::to_string(n.scope);
        key += '|';
        key += op_name(n.op);
        key += '|';
        key += n.type.str();
        for (NodeId o : n.operands) {
            key += ',';
            key += std::to_string(o);
        }
        key += '|';
        for (auto& l : n.imm) {
            key += format_literal(l);
            key += ';';
        }
        if (n.effect.kind() == EffectKind::Read) {
            // Reads merge only when no write to the region intervened in this scope.
            for (NodeId r : n.effect.reads) {
                auto it = last_write_.find({n.scope, r});
                key += "|t" + std::to_string(it == last_write_.end() ? 0 : it->second);
            }
        }
        return key;
    }

    void check_operands(Op op, const std::vector<NodeId>& operands) const {
        NodeId cur = current_scope();
        NodeId fn = enclosing_function(cur);
        std::vector<bool> skip(operands.size(), false);
        if (op == Op::Loop) skip = {false, true, true};
        if (op == Op::If) skip.assign(operands.size(), true), skip[0] = false;
        if (op == Op::FuncDef) skip.assign(operands.size(), true);
        for (std::size_t i = 0; i < operands.size(); ++i) {
            NodeId o = operands[i];
            if (o >= nodes_.size()) throw InternalError("operand " + std::to_string(o) + " does not exist");
            if (skip[i]) continue;
            const Node& on = nodes_[o];
            if (on.op == Op::Block) throw InternalError("block used as a value");
            if (on.type == SType::unit()) throw StagingError(std::string(op_name(op)) + ": unit value used as operand");
            if (!scope_within(cur, on.scope))
                throw StagingError(std::string(op_name(op)) + ": operand " + std::to_string(o) +
                                   " is not visible in the current scope");
            if (fn != kNoNode && !scope_within(on.scope, fn)) {
                bool global_ok = on.op == Op::Const || ((on.op == Op::ArrayLit || on.op == Op::DictNew ||
                                                         on.op == Op::FuncDef) && on.scope == 0);
                if (!global_ok)
                    throw StagingError("staged function body captures non-constant value " + std::to_string(o));
            }
        }
    }

    // Union of the direct children's effects; regions allocated inside the
    // blocks are private and dropped.
    Effect summarize(const std::vector<NodeId>& blocks) const {
        Effect e;
        auto local = [&](NodeId r) {
            for (NodeId b : blocks)
                if (scope_within(nodes_[r].scope, b)) return true;
            return false;
        };
        for (NodeId b : blocks)
            for (NodeId c : children_[b]) {
                const Effect& ce = nodes_[c].effect;
                e.global = e.global || ce.global;
                for (NodeId r : ce.reads)
                    if (!local(r)) e.add_read(r);
                for (NodeId r : ce.writes)
                    if (!local(r)) e.add_write(r);
            }
        return e;
    }

    Effect infer_effect(const Node& n) const {
        Effect e;
        const auto& o = n.operands;
        switch (n.op) {
            case Op::VarNew:
            case Op::ArrayNew:
            case Op::ArrayLit:
            case Op::VecNew:
            case Op::MapNew:
                e.add_write(n.id);
                break;
            case Op::VarRead:
            case Op::Load:
            case Op::Len:
            case Op::MapLookup:
            case Op::MapSize:
            case Op::MapKey:
            case Op::PoolResult:
            case Op::PoolRows:
                e.add_read(o[0]);
                break;
            case Op::VarWrite:
            case Op::Store:
            case Op::Push:
            case Op::MapInsert:
                e.add_write(o[0]);
                break;
            case Op::KernelMatmul:
                e.add_read(o[0]);
                e.add_read(o[2]);
                e.add_write(o[4]);
                break;
            case Op::CsvLoad:
                e.global = true;
                for (NodeId s : o)
                    if (nodes_[s].type.kind == Kind::Vec) e.add_write(s);
                break;
            case Op::Print:
            case Op::PrintRow:
            case Op::PrintAux:
            case Op::CounterInc:
            case Op::TimerStart:
            case Op::TimerStop:
                e.global = true;
                break;
            case Op::PoolNew:
                e.global = true;
                e.add_write(n.id);
                break;
            case Op::PoolSubmit:
                e.global = true;
                e.add_write(o[0]);
                e.add_read(o[1]);
                break;
            case Op::PoolFinish:
                e.global = true;
                e.add_write(o[0]);
                break;
            case Op::Loop:
                e = summarize({o[1]});
                break;
            case Op::If:
                e = summarize(o.size() == 5 ? std::vector<NodeId>{o[1], o[3]} : std::vector<NodeId>{o[1], o[2]});
                break;
            case Op::Call: {
                const Node& def = nodes_[o[0]];
                Effect body = summarize({def.operands[0]});
                e.global = body.global;
                auto map_region = [&](NodeId r) -> NodeId {
                    const Node& rn = nodes_[r];
                    if (rn.op == Op::Param) return o[1 + std::get<int64_t>(rn.imm.at(0))];
                    return r;
                };
                for (NodeId r : body.reads) e.add_read(map_region(r));
                for (NodeId r : body.writes) e.add_write(map_region(r));
                if (n.type.is_buffer()) e.add_write(n.id);
                break;
            }
            default:
                break;
        }
        NodeId fn = enclosing_function(n.scope);
        if (fn != kNoNode)
            for (NodeId r : e.writes)
                if (r != n.id && nodes_[r].op == Op::Param)
                    throw StagingError("staged function writes to its parameter " + std::to_string(r));
        return e;
    }

    void expect_kind(StagedValue v, Kind k, const char* what) const {
        if (v.type.kind != k) throw StagingError(std::string(what) + ": expected " + kind_name(k) + ", got " + v.type.str());
    }
    void expect_buffer(StagedValue v, const char* what) const {
        if (!v.type.is_buffer()) throw StagingError(std::string(what) + ": buffer operand required, got " + v.type.str());
    }
    static void check_elem(Kind elem, const char* what) {
        if (elem != Kind::Int64 && elem != Kind::Float64)
            throw StagingError(std::string(what) + ": element kind must be i64 or f64");
    }

    std::vector<NodeId> map_operands(StagedValue map, const std::vector<StagedValue>& keys, const char* what) const {
        expect_kind(map, Kind::Map, what);
        auto kinds = map_key_kinds(map.node);
        if (keys.size() != kinds.size()) throw StagingError(std::string(what) + ": key arity mismatch");
        std::vector<NodeId> ops{map.node};
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (keys[i].type.kind != kinds[i]) throw StagingError(std::string(what) + ": key type mismatch");
            ops.push_back(keys[i].node);
        }
        return ops;
    }

    std::vector<NodeId> row_operands(const std::vector<StagedValue>& values, const std::vector<StagedValue>& dicts,
                                     const char* what) const {
        std::vector<NodeId> ops;
        for (auto& v : values) {
            if (!v.type.is_scalar()) throw StagingError(std::string(what) + ": scalar columns required");
            ops.push_back(v.node);
        }
        for (std::size_t i = 0; i < dicts.size(); ++i)
            if (!dicts[i].is_unit()) {
                if (values[i].type != SType::i64()) throw StagingError(std::string(what) + ": dictionary column must be i64");
                ops.push_back(dicts[i].node);
            }
        return ops;
    }

    // imm: one entry per column, "d" for dictionary-decoded columns.
    static std::vector<Literal> row_imm(const std::vector<StagedValue>& values, const std::vector<StagedValue>& dicts) {
        std::vector<Literal> imm;
        for (std::size_t i = 0; i < values.size(); ++i)
            imm.emplace_back(std::string(i < dicts.size() && !dicts[i].is_unit() ? "d" : kind_name(values[i].type.kind)));
        return imm;
    }

    // ---- folding ------------------------------------------------------------

    std::optional<StagedValue> fold(Op op, SType type, const std::vector<NodeId>& ops) {
        auto is_c = [&](NodeId id) { return nodes_[id].op == Op::Const; };
        auto lit = [&](NodeId id) -> const Literal& { return nodes_[id].imm[0]; };
        auto val = [&](NodeId id) { return StagedValue{id, nodes_[id].type}; };
        switch (op) {
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
                NodeId a = ops[0], b = ops[1];
                if (is_c(a) && is_c(b)) {
                    if (auto r = fold_binary(op, lit(a), lit(b))) return constant(*r, type);
                    return std::nullopt;
                }
                // Identity elements only; no re-association.
                auto is_lit = [&](NodeId id, int64_t iv, double dv) {
                    if (!is_c(id)) return false;
                    const Literal& l = lit(id);
                    if (auto* p = std::get_if<int64_t>(&l)) return *p == iv;
                    if (auto* p = std::get_if<double>(&l)) return literal_equal(Literal{*p}, Literal{dv});
                    return false;
                };
                bool is_int = type == SType::i64();
                if (op == Op::Mul) {
                    if (is_lit(b, 1, 1.0)) return val(a);
                    if (is_lit(a, 1, 1.0)) return val(b);
                }
                if (is_int && op == Op::Add) {
                    if (is_lit(b, 0, 0.0)) return val(a);
                    if (is_lit(a, 0, 0.0)) return val(b);
                }
                if (is_int && op == Op::Sub && is_lit(b, 0, 0.0)) return val(a);
                return std::nullopt;
            }
            case Op::And:
            case Op::Or: {
                bool is_and = op == Op::And;
                for (int side = 0; side < 2; ++side) {
                    NodeId c = ops[side], other = ops[1 - side];
                    if (!is_c(c)) continue;
                    bool v = std::get<bool>(lit(c));
                    if (v == is_and) return val(other);
                    return boolean(v);
                }
                return std::nullopt;
            }
            case Op::Not:
                if (is_c(ops[0])) return boolean(!std::get<bool>(lit(ops[0])));
                return std::nullopt;
            case Op::Neg:
                if (!is_c(ops[0])) return std::nullopt;
                if (auto* p = std::get_if<int64_t>(&lit(ops[0])))
                    return i64(static_cast<int64_t>(0ull - static_cast<uint64_t>(*p)));
                return f64(-std::get<double>(lit(ops[0])));
            case Op::Select:
                if (is_c(ops[0])) return val(std::get<bool>(lit(ops[0])) ? ops[1] : ops[2]);
                if (ops[1] == ops[2]) return val(ops[1]);
                return std::nullopt;
            case Op::ToFloat:
                if (is_c(ops[0])) return f64(static_cast<double>(std::get<int64_t>(lit(ops[0]))));
                return std::nullopt;
            case Op::ToInt:
                if (is_c(ops[0])) {
                    double d = std::get<double>(lit(ops[0]));
                    if (std::isfinite(d) && d > -9.2e18 && d < 9.2e18) return i64(static_cast<int64_t>(d));
                }
                return std::nullopt;
            case Op::Exp:
                if (is_c(ops[0])) return f64(std::exp(std::get<double>(lit(ops[0]))));
                return std::nullopt;
            case Op::Log:
                if (is_c(ops[0])) return f64(std::log(std::get<double>(lit(ops[0]))));
                return std::nullopt;
            default:
                return std::nullopt;
        }
    }

public:
    // Shared with the interpreter so folding and run-time evaluation agree.
    static std::optional<Literal> fold_binary(Op op, const Literal& a, const Literal& b) {
        if (auto* pa = std::get_if<int64_t>(&a)) {
            int64_t x = *pa, y = std::get<int64_t>(b);
            uint64_t ux = static_cast<uint64_t>(x), uy = static_cast<uint64_t>(y);
            switch (op) {
                case Op::Add: return Literal{static_cast<int64_t>(ux + uy)};
                case Op::Sub: return Literal{static_cast<int64_t>(ux - uy)};
                case Op::Mul: return Literal{static_cast<int64_t>(ux * uy)};
                case Op::Div:
                    if (y == 0 || (x == std::numeric_limits<int64_t>::min() && y == -1)) return std::nullopt;
                    return Literal{x / y};
                case Op::Mod:
                    if (y == 0 || (x == std::numeric_limits<int64_t>::min() && y == -1)) return std::nullopt;
                    return Literal{x % y};
                case Op::Max: return Literal{x > y ? x : y};
                case Op::Min: return Literal{x < y ? x : y};
                case Op::Lt: return Literal{x < y};
                case Op::Le: return Literal{x <= y};
                case Op::Gt: return Literal{x > y};
                case Op::Ge: return Literal{x >= y};
                case Op::Eq: return Literal{x == y};
                case Op::Ne: return Literal{x != y};
                default: return std::nullopt;
            }
        }
        if (auto* pa = std::get_if<double>(&a)) {
            double x = *pa, y = std::get<double>(b);
            switch (op) {
                case Op::Add: return Literal{x + y};
                case Op::Sub: return Literal{x - y};
                case Op::Mul: return Literal{x * y};
                case Op::Div: return Literal{x / y};
                case Op::Max: return Literal{x > y ? x : y};
                case Op::Min: return Literal{x < y ? x : y};
                case Op::Lt: return Literal{x < y};
                case Op::Le: return Literal{x <= y};
                case Op::Gt: return Literal{x > y};
                case Op::Ge: return Literal{x >= y};
                case Op::Eq: return Literal{x == y};
                case Op::Ne: return Literal{x != y};
                default: return std::nullopt;
            }
        }
        if (auto* pa = std::get_if<bool>(&a)) {
            bool x = *pa, y = std::get<bool>(b);
            switch (op) {
                case Op::Eq: return Literal{x == y};
                case Op::Ne: return Literal{x != y};
                default: return std::nullopt;
            }
        }
        return std::nullopt;
    }
};

}  // namespace unistage
