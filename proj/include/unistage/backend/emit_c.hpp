#pragma once

// Lowers a scheduled IrGraph to one C99 translation unit. Every staged value
// becomes a local `x<id>`; buffers become flat `af64`/`ai64` arrays; staged
// functions become file-scope C functions.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unistage/backend/c_prelude.hpp"
#include "unistage/core/graph.hpp"
#include "unistage/core/schedule.hpp"

namespace unistage {

struct InputSpec {
    int64_t index = 0;
    std::string path;
    bool header = false;
    std::vector<std::string> field_kinds;  // "i64", "f64" or "dict"
};

struct GeneratedProgram {
    std::string source;
    std::string entry = "main";
    std::vector<InputSpec> input_manifest;
    std::vector<std::string> output_contract;  // result columns, in print order
    bool uses_threads = false;
    bool uses_cblas = false;
};

struct EmitOptions {
    // Lower kernel-matmul nodes to cblas_dgemm instead of the naive loop.
    bool use_cblas = false;
};

namespace cgen {

inline std::string c_string(const std::string& s) {
    std::string out = "\"";
    for (unsigned char c : s) {
        bool plain = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == ' ' ||
                     c == '_' || c == '.' || c == ',' || c == '/' || c == ':' || c == '-' || c == '+';
        if (plain) {
            out += static_cast<char>(c);
        } else {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\%03o", c);
            out += buf;
        }
    }
    return out + "\"";
}

inline std::string c_f64(double d) {
    if (std::isnan(d)) return std::signbit(d) ? "(-NAN)" : "NAN";
    if (std::isinf(d)) return d > 0 ? "HUGE_VAL" : "(-HUGE_VAL)";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", d);
    std::string s = buf;
    return s[0] == '-' ? "(" + s + ")" : s;
}

inline std::string c_i64(int64_t v) {
    if (v == std::numeric_limits<int64_t>::min()) return "INT64_MIN";
    std::string s = std::to_string(v) + "LL";
    return v < 0 ? "(" + s + ")" : s;
}

inline std::string c_type(SType t) {
    switch (t.kind) {
        case Kind::Bool: return "int";
        case Kind::Int64: return "int64_t";
        case Kind::Float64: return "double";
        case Kind::Array:
        case Kind::Vec: return t.elem == Kind::Float64 ? "af64*" : "ai64*";
        case Kind::Var: return c_type(t.element());
        case Kind::Map: return "us_map*";
        case Kind::Pool: return "us_pool*";
        default: return "";
    }
}

class Emitter {
public:
    Emitter(const IrGraph& g, const Schedule& s, const EmitOptions& opts) : g_(g), s_(s), opts_(opts) {}

    GeneratedProgram run() {
        GeneratedProgram p;
        for (const Node& n : g_.nodes()) {
            if (s_.position.size() > n.id && s_.position[n.id] < 0 && n.op != Op::Param && n.op != Op::LoopIndex &&
                n.op != Op::Block && n.op != Op::Const)
                continue;
            if (n.op == Op::PoolNew) p.uses_threads = true;
            if (n.op == Op::KernelMatmul) has_matmul_ = true;
            if (n.op == Op::CounterInc) counter_id(std::get<std::string>(n.imm[0]));
            if (n.op == Op::TimerStart || n.op == Op::TimerStop) timer_id(std::get<std::string>(n.imm[0]));
            if (n.op == Op::CsvLoad) p.input_manifest.push_back(manifest_entry(n));
            if (n.op == Op::PrintRow && p.output_contract.empty())
                for (auto& l : n.imm) p.output_contract.push_back(std::get<std::string>(l));
        }
        p.uses_cblas = has_matmul_ && opts_.use_cblas;

        std::ostringstream out;
        out << "/* generated program: single translation unit */\n";
        out << kPreludeHead << kPreludeCore;
        if (has_matmul_) out << kPreludeMatmul << (p.uses_cblas ? kPreludeMatmulBlas : kPreludeMatmulNaive);
        if (p.uses_threads) out << kPreludePool;
        out << "\n";
        emit_instrumentation(out);
        emit_statics(out);
        emit_functions(out);

        out << "int main(int argc, char** argv) {\n";
        out << "    double us_t0 = us_now();\n";
        out << "    us_argc = argc;\n    us_argv = argv;\n";
        emit_block(out, 0, 1);
        out << "    us_finish(us_t0);\n";
        out << "    return 0;\n}\n";
        p.source = out.str();
        return p;
    }

private:
    const IrGraph& g_;
    const Schedule& s_;
    const EmitOptions& opts_;
    bool has_matmul_ = false;
    std::map<std::string, int> counters_, timers_;

    int counter_id(const std::string& n) { return counters_.emplace(n, static_cast<int>(counters_.size())).first->second; }
    int timer_id(const std::string& n) { return timers_.emplace(n, static_cast<int>(timers_.size())).first->second; }

    static InputSpec manifest_entry(const Node& n) {
        InputSpec in;
        in.path = std::get<std::string>(n.imm[0]);
        in.header = std::get<bool>(n.imm[1]);
        in.index = std::get<int64_t>(n.imm[2]);
        auto nf = static_cast<std::size_t>(std::get<int64_t>(n.imm[3]));
        for (std::size_t j = 0; j < nf; ++j) in.field_kinds.push_back(std::get<std::string>(n.imm[4 + 3 * j]));
        return in;
    }

    [[noreturn]] void unsupported(const Node& n, const std::string& why) const {
        throw EmitError("cannot emit node " + std::to_string(n.id) + " (" + op_name(n.op) + "): " + why);
    }

    bool is_root_static(const Node& n) const {
        return (n.op == Op::ArrayLit && n.scope == 0) || n.op == Op::DictNew;
    }

    std::string ref(NodeId id) const {
        const Node& n = g_.node(id);
        if (n.op == Op::Const) {
            const Literal& l = n.imm.at(0);
            if (auto* p = std::get_if<int64_t>(&l)) return c_i64(*p);
            if (auto* p = std::get_if<double>(&l)) return c_f64(*p);
            if (auto* p = std::get_if<bool>(&l)) return *p ? "1" : "0";
            unsupported(n, "string constant");
        }
        if (n.op == Op::ArrayLit && n.scope == 0) return "(&x" + std::to_string(id) + ")";
        return "x" + std::to_string(id);
    }

    void emit_instrumentation(std::ostringstream& out) const {
        out << "static int64_t us_counters[" << std::max<std::size_t>(1, counters_.size()) << "];\n";
        out << "static double us_timer_total[" << std::max<std::size_t>(1, timers_.size()) << "];\n";
        out << "static double us_timer_open[" << std::max<std::size_t>(1, timers_.size()) << "];\n";
        out << "static void us_finish(double t0) {\n";
        out << "    double total;\n";
        out << "    us_flush();\n    fflush(stdout);\n";
        out << "    total = us_now() - t0;\n";
        for (auto& [name, id] : counters_)
            out << "    if (us_counters[" << id << "]) fprintf(stderr, \"#counter %s %lld\\n\", " << c_string(name)
                << ", (long long)us_counters[" << id << "]);\n";
        for (auto& [name, id] : timers_) {
            out << "    fprintf(stderr, \"#timer %s \", " << c_string(name) << ");\n";
            out << "    us_fmt_f64(stderr, us_timer_total[" << id << "]);\n    fputc('\\n', stderr);\n";
        }
        out << "    fprintf(stderr, \"#timer load \");\n    us_fmt_f64(stderr, us_t_load);\n    fputc('\\n', stderr);\n";
        out << "    fprintf(stderr, \"#timer total \");\n    us_fmt_f64(stderr, total);\n    fputc('\\n', stderr);\n";
        out << "    fprintf(stderr, \"#alloc %lld\\n\", (long long)us_alloc_bytes);\n";
        out << "}\n\n";
    }

    void emit_statics(std::ostringstream& out) const {
        for (const Node& n : g_.nodes()) {
            if (n.id == 0 || !is_root_static(n) || s_.position[n.id] < 0) continue;
            std::string x = "x" + std::to_string(n.id);
            if (n.op == Op::DictNew) {
                out << "static const char* const " << x << "[] = {";
                for (std::size_t i = 0; i < n.imm.size(); ++i)
                    out << (i ? ", " : "") << c_string(std::get<std::string>(n.imm[i]));
                if (n.imm.empty()) out << "\"\"";
                out << "};\n";
                continue;
            }
            bool f = n.type.elem == Kind::Float64;
            out << "static " << (f ? "double " : "int64_t ") << x << "_d[] = {";
            for (std::size_t i = 0; i < n.imm.size(); ++i) {
                out << (i ? ", " : "");
                out << (f ? c_f64(std::get<double>(n.imm[i])) : c_i64(std::get<int64_t>(n.imm[i])));
            }
            if (n.imm.empty()) out << "0";
            out << "};\n";
            out << "static " << (f ? "af64 " : "ai64 ") << x << " = {" << x << "_d, " << n.imm.size() << ", "
                << n.imm.size() << "};\n";
        }
        out << "\n";
    }

    std::vector<NodeId> params_of(NodeId blk) const {
        std::vector<NodeId> ps;
        for (NodeId c : g_.children(blk))
            if (g_.node(c).op == Op::Param) ps.push_back(c);
        std::sort(ps.begin(), ps.end(), [&](NodeId a, NodeId b) {
            return std::get<int64_t>(g_.node(a).imm[0]) < std::get<int64_t>(g_.node(b).imm[0]);
        });
        return ps;
    }

    std::string signature(const Node& def) const {
        std::string s = "static " + c_type(g_.node(def.operands[1]).type) + " f" + std::to_string(def.id) + "(";
        auto ps = params_of(def.operands[0]);
        if (ps.empty()) s += "void";
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (i) s += ", ";
            s += c_type(g_.node(ps[i]).type) + " x" + std::to_string(ps[i]);
        }
        return s + ")";
    }

    void emit_functions(std::ostringstream& out) {
        std::vector<NodeId> defs;
        for (const Node& n : g_.nodes())
            if (n.op == Op::FuncDef && s_.position[n.id] >= 0) defs.push_back(n.id);
        for (NodeId d : defs) out << signature(g_.node(d)) << ";\n";
        for (NodeId d : defs) {
            const Node& def = g_.node(d);
            out << signature(def) << " {\n";
            emit_block(out, def.operands[0], 1);
            out << "    return " << ref(def.operands[1]) << ";\n}\n\n";
        }
    }

    static std::string pad(int depth) { return std::string(static_cast<std::size_t>(depth) * 4, ' '); }

    // True if the block subtree allocates from the arena.
    bool allocates(NodeId blk) const {
        for (NodeId id : s_.statements(blk)) {
            const Node& n = g_.node(id);
            if (n.op == Op::ArrayNew || n.op == Op::ArrayLit) return true;
            if (n.op == Op::Call && n.type.is_buffer()) return true;
            if (n.op == Op::If) {
                if (allocates(n.operands[1]) || allocates(n.operands[n.operands.size() == 5 ? 3 : 2])) return true;
            }
        }
        return false;
    }

    void emit_block(std::ostringstream& out, NodeId blk, int depth) {
        for (NodeId id : s_.statements(blk)) emit_stmt(out, g_.node(id), depth);
    }

    std::string decl(const Node& n) const { return c_type(n.type) + " x" + std::to_string(n.id) + " = "; }

    void emit_stmt(std::ostringstream& out, const Node& n, int depth) {
        const std::string p = pad(depth);
        const auto& o = n.operands;
        auto r = [&](std::size_t i) { return ref(o.at(i)); };
        const std::string nid = std::to_string(n.id) + "u";
        bool is_int = n.type == SType::i64();
        auto bin = [&](const char* sym) {
            std::string a = r(0), b = r(1);
            if (g_.node(o[0]).type == SType::i64() && (n.op == Op::Add || n.op == Op::Sub || n.op == Op::Mul))
                return "(int64_t)((uint64_t)" + a + " " + sym + " (uint64_t)" + b + ")";
            return a + " " + sym + " " + b;
        };
        switch (n.op) {
            case Op::Const:
            case Op::DictNew:
            case Op::FuncDef:
                return;
            case Op::ArrayLit:
                if (n.scope == 0) return;
                {
                    bool f = n.type.elem == Kind::Float64;
                    out << p << "static const " << (f ? "double" : "int64_t") << " x" << n.id << "_d[] = {";
                    for (std::size_t i = 0; i < n.imm.size(); ++i)
                        out << (i ? ", " : "")
                            << (f ? c_f64(std::get<double>(n.imm[i])) : c_i64(std::get<int64_t>(n.imm[i])));
                    if (n.imm.empty()) out << "0";
                    out << "};\n";
                    out << p << decl(n) << (f ? "us_af64_lit(" : "us_ai64_lit(") << "x" << n.id << "_d, "
                        << n.imm.size() << ");\n";
                }
                return;
            case Op::Add: out << p << decl(n) << bin("+") << ";\n"; return;
            case Op::Sub: out << p << decl(n) << bin("-") << ";\n"; return;
            case Op::Mul: out << p << decl(n) << bin("*") << ";\n"; return;
            case Op::Div:
                if (is_int) out << p << decl(n) << "us_idiv(" << r(0) << ", " << r(1) << ", " << nid << ");\n";
                else out << p << decl(n) << r(0) << " / " << r(1) << ";\n";
                return;
            case Op::Mod: out << p << decl(n) << "us_imod(" << r(0) << ", " << r(1) << ", " << nid << ");\n"; return;
            case Op::Neg:
                if (is_int) out << p << decl(n) << "(int64_t)(0ULL - (uint64_t)" << r(0) << ");\n";
                else out << p << decl(n) << "-" << r(0) << ";\n";
                return;
            case Op::Max: out << p << decl(n) << r(0) << " > " << r(1) << " ? " << r(0) << " : " << r(1) << ";\n"; return;
            case Op::Min: out << p << decl(n) << r(0) << " < " << r(1) << " ? " << r(0) << " : " << r(1) << ";\n"; return;
            case Op::Lt: out << p << decl(n) << r(0) << " < " << r(1) << ";\n"; return;
            case Op::Le: out << p << decl(n) << r(0) << " <= " << r(1) << ";\n"; return;
            case Op::Gt: out << p << decl(n) << r(0) << " > " << r(1) << ";\n"; return;
            case Op::Ge: out << p << decl(n) << r(0) << " >= " << r(1) << ";\n"; return;
            case Op::Eq: out << p << decl(n) << r(0) << " == " << r(1) << ";\n"; return;
            case Op::Ne: out << p << decl(n) << r(0) << " != " << r(1) << ";\n"; return;
            case Op::And: out << p << decl(n) << r(0) << " && " << r(1) << ";\n"; return;
            case Op::Or: out << p << decl(n) << r(0) << " || " << r(1) << ";\n"; return;
            case Op::Not: out << p << decl(n) << "!" << r(0) << ";\n"; return;
            case Op::Select: out << p << decl(n) << r(0) << " ? " << r(1) << " : " << r(2) << ";\n"; return;
            case Op::ToFloat: out << p << decl(n) << "(double)" << r(0) << ";\n"; return;
            case Op::ToInt: out << p << decl(n) << "us_toint(" << r(0) << ", " << nid << ");\n"; return;
            case Op::Exp: out << p << decl(n) << "exp(" << r(0) << ");\n"; return;
            case Op::Log: out << p << decl(n) << "log(" << r(0) << ");\n"; return;

            case Op::VarNew: out << p << decl(n) << r(0) << ";\n"; return;
            case Op::VarRead: out << p << decl(n) << r(0) << ";\n"; return;
            case Op::VarWrite: out << p << r(0) << " = " << r(1) << ";\n"; return;

            case Op::ArrayNew:
                out << p << decl(n) << (n.type.elem == Kind::Float64 ? "us_af64_new(" : "us_ai64_new(") << r(0) << ", "
                    << nid << ");\n";
                return;
            case Op::VecNew:
                out << p << decl(n) << (n.type.elem == Kind::Float64 ? "us_vf64_new();\n" : "us_vi64_new();\n");
                return;
            case Op::Load:
                out << p << decl(n) << r(0) << "->d[us_idx(" << r(1) << ", " << r(0) << "->n, " << nid << ")];\n";
                return;
            case Op::Store:
                out << p << r(0) << "->d[us_idx(" << r(1) << ", " << r(0) << "->n, " << nid << ")] = " << r(2) << ";\n";
                return;
            case Op::Len: out << p << decl(n) << r(0) << "->n;\n"; return;
            case Op::Push:
                out << p << (g_.node(o[0]).type.elem == Kind::Float64 ? "us_push_f64(" : "us_push_i64(") << r(0) << ", "
                    << r(1) << ");\n";
                return;

            case Op::MapNew: out << p << decl(n) << "us_map_new(" << n.imm.size() << ");\n"; return;
            case Op::MapInsert:
            case Op::MapLookup: {
                std::string k = "k" + std::to_string(n.id);
                out << p << "uint64_t " << k << "[" << (o.size() - 1) << "];\n";
                for (std::size_t i = 1; i < o.size(); ++i) {
                    bool f = g_.node(o[i]).type == SType::f64();
                    out << p << k << "[" << (i - 1) << "] = " << (f ? "us_f64_bits(" + r(i) + ")" : "(uint64_t)" + r(i))
                        << ";\n";
                }
                out << p << decl(n) << (n.op == Op::MapInsert ? "us_map_insert(" : "us_map_find(") << r(0) << ", " << k
                    << ");\n";
                return;
            }
            case Op::MapSize: out << p << decl(n) << r(0) << "->size;\n"; return;
            case Op::MapKey: {
                std::string bits = "us_map_key(" + r(0) + ", " + r(1) + ", " +
                                   std::to_string(std::get<int64_t>(n.imm[0])) + ", " + nid + ")";
                out << p << decl(n) << (n.type == SType::f64() ? "us_bits_f64(" + bits + ")" : "(int64_t)" + bits)
                    << ";\n";
                return;
            }

            case Op::Loop: {
                std::string cnt = "n" + std::to_string(n.id);
                std::string i = ref(o[2]);
                NodeId body = o[1];
                bool arena = allocates(body);
                out << p << "{\n";
                out << p << "    int64_t " << cnt << " = " << r(0) << ";\n";
                out << p << "    int64_t " << i << ";\n";
                out << p << "    for (" << i << " = 0; " << i << " < " << cnt << "; ++" << i << ") {\n";
                if (arena) out << p << "        us_mark m" << n.id << " = us_arena_mark();\n";
                emit_block(out, body, depth + 2);
                for (NodeId c : s_.statements(body)) {
                    const Node& cn = g_.node(c);
                    if (cn.op == Op::VecNew)
                        out << p << "        " << (cn.type.elem == Kind::Float64 ? "us_vf64_free(" : "us_vi64_free(")
                            << ref(c) << ");\n";
                }
                if (arena) out << p << "        us_arena_release(m" << n.id << ");\n";
                out << p << "    }\n" << p << "}\n";
                return;
            }
            case Op::If: {
                bool has_result = o.size() == 5;
                if (has_result) out << p << c_type(n.type) << " x" << n.id << ";\n";
                out << p << "if (" << r(0) << ") {\n";
                emit_block(out, o[1], depth + 1);
                if (has_result) out << p << "    x" << n.id << " = " << r(2) << ";\n";
                out << p << "} else {\n";
                emit_block(out, has_result ? o[3] : o[2], depth + 1);
                if (has_result) out << p << "    x" << n.id << " = " << r(4) << ";\n";
                out << p << "}\n";
                return;
            }
            case Op::Call: {
                out << p << decl(n) << "f" << o[0] << "(";
                for (std::size_t i = 1; i < o.size(); ++i) out << (i > 1 ? ", " : "") << r(i);
                out << ");\n";
                return;
            }

            case Op::Print: {
                SType t = g_.node(o[0]).type;
                out << p << (t == SType::f64() ? "us_out_f64(" : t == SType::i64() ? "us_out_i64(" : "us_out_bool(")
                    << r(0) << ");\n";
                out << p << "us_out_ch('\\n');\n";
                return;
            }
            case Op::PrintRow: {
                std::size_t ncols = n.imm.size();
                std::size_t dict_op = ncols;
                for (std::size_t c = 0; c < ncols; ++c) {
                    if (c) out << p << "us_out_ch(',');\n";
                    const std::string& kind = std::get<std::string>(n.imm[c]);
                    if (kind == "d") {
                        NodeId d = o[dict_op++];
                        out << p << "us_out_dict(" << ref(d) << ", " << g_.node(d).imm.size() << ", " << r(c) << ");\n";
                    } else {
                        out << p << scalar_out(kind) << r(c) << ");\n";
                    }
                }
                out << p << "us_out_ch('\\n');\n";
                return;
            }
            case Op::PrintAux: {
                // Side-channel lines go to standard error with a tag prefix.
                out << p << "us_flush();\n";
                out << p << "fprintf(stderr, \"#aux %s\", " << c_string(std::get<std::string>(n.imm[0])) << ");\n";
                for (std::size_t c = 0; c + 1 < n.imm.size(); ++c) {
                    const std::string& kind = std::get<std::string>(n.imm[c + 1]);
                    out << p << "fputc(' ', stderr);\n";
                    if (kind == "f64") out << p << "us_fmt_f64(stderr, " << r(c) << ");\n";
                    else if (kind == "i64") out << p << "fprintf(stderr, \"%lld\", (long long)" << r(c) << ");\n";
                    else out << p << "fputc(" << r(c) << " ? '1' : '0', stderr);\n";
                }
                out << p << "fputc('\\n', stderr);\n";
                return;
            }
            case Op::CsvLoad: {
                std::size_t nf = static_cast<std::size_t>(std::get<int64_t>(n.imm[3]));
                std::string fl = "fl" + std::to_string(n.id);
                out << p << "us_field " << fl << "[" << std::max<std::size_t>(1, nf) << "];\n";
                out << p << "memset(" << fl << ", 0, sizeof " << fl << ");\n";
                for (std::size_t j = 0; j < nf; ++j) {
                    const std::string& kind = std::get<std::string>(n.imm[4 + 3 * j]);
                    auto so = static_cast<std::size_t>(std::get<int64_t>(n.imm[5 + 3 * j]));
                    int64_t dop = std::get<int64_t>(n.imm[6 + 3 * j]);
                    std::string f = fl + "[" + std::to_string(j) + "]";
                    out << p << f << ".kind = " << (kind == "i64" ? 0 : kind == "f64" ? 1 : 2) << ";\n";
                    out << p << f << ".store = " << r(so) << ";\n";
                    if (dop >= 0) {
                        NodeId d = o[static_cast<std::size_t>(dop)];
                        out << p << f << ".dict = " << ref(d) << ";\n";
                        out << p << f << ".ndict = " << g_.node(d).imm.size() << ";\n";
                    }
                }
                out << p << decl(n) << "us_csv_load(us_input(" << std::get<int64_t>(n.imm[2]) << ", "
                    << c_string(std::get<std::string>(n.imm[0])) << "), " << (std::get<bool>(n.imm[1]) ? 1 : 0) << ", "
                    << fl << ", " << nf << ");\n";
                return;
            }
            case Op::KernelMatmul: {
                out << p << "us_matmul(" << r(0) << ", " << r(1) << ", " << r(2) << ", " << r(3) << ", " << r(4) << ", "
                    << r(5) << ", " << r(6) << ", " << r(7);
                for (int k = 0; k < 4; ++k) out << ", " << c_i64(std::get<int64_t>(n.imm[static_cast<std::size_t>(k)]));
                out << ", " << (std::get<bool>(n.imm[4]) ? 1 : 0) << ", " << nid << ");\n";
                return;
            }

            case Op::PoolNew: {
                const Node& def = g_.node(o[0]);
                auto ps = params_of(def.operands[0]);
                if (ps.size() != 2 || g_.node(ps[0]).type != SType::array(Kind::Float64) ||
                    g_.node(ps[1]).type != SType::i64() || g_.node(def.operands[1]).type != SType::array(Kind::Float64))
                    unsupported(n, "pool function must map (arr<f64>, i64) to arr<f64>");
                out << p << decl(n) << "us_pool_new(f" << o[0] << ", " << std::get<int64_t>(n.imm[0]) << ", "
                    << std::get<int64_t>(n.imm[1]) << ", " << std::get<int64_t>(n.imm[2]) << ");\n";
                return;
            }
            case Op::PoolSubmit:
                out << p << "us_pool_submit(" << r(0) << ", " << r(1) << ", " << r(2) << ", " << nid << ");\n";
                return;
            case Op::PoolFinish: out << p << decl(n) << "us_pool_finish(" << r(0) << ", " << nid << ");\n"; return;
            case Op::PoolResult:
                out << p << decl(n) << "us_pool_result(" << r(0) << ", " << r(1) << ", " << nid << ");\n";
                return;
            case Op::PoolRows:
                out << p << decl(n) << "us_pool_rows(" << r(0) << ", " << r(1) << ", " << nid << ");\n";
                return;

            case Op::CounterInc:
                out << p << "__sync_fetch_and_add(&us_counters[" << counters_.at(std::get<std::string>(n.imm[0]))
                    << "], 1);\n";
                return;
            case Op::TimerStart:
                out << p << "us_timer_open[" << timers_.at(std::get<std::string>(n.imm[0])) << "] = us_now();\n";
                return;
            case Op::TimerStop: {
                int t = timers_.at(std::get<std::string>(n.imm[0]));
                out << p << "us_timer_total[" << t << "] += us_now() - us_timer_open[" << t << "];\n";
                return;
            }
            default:
                unsupported(n, "no C lowering");
        }
    }

    static std::string scalar_out(const std::string& kind) {
        if (kind == "f64") return "us_out_f64(";
        if (kind == "i64") return "us_out_i64(";
        return "us_out_bool(";
    }
};

}  // namespace cgen

// Emits the program for a scheduled graph. Deterministic: equal schedules
// produce byte-identical sources.
inline GeneratedProgram emit(const IrGraph& g, const Schedule& s, const EmitOptions& opts = {}) {
    return cgen::Emitter(g, s, opts).run();
}

inline GeneratedProgram emit(const IrGraph& g, const EmitOptions& opts = {}) {
    Schedule s = schedule(g);
    return emit(g, s, opts);
}

}  // namespace unistage
