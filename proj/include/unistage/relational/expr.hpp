#pragma once

// Scalar expressions over records: AST, text syntax, type inference and
// staging. Syntax (lowest to highest precedence):
//   or | and | not | comparisons (< <= > >= == !=) | + - | * / % | unary -
// Primaries: integers, decimals, 'strings', true/false, field names,
// function calls exp log float int abs min max if, parenthesized groups.

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "unistage/relational/record.hpp"

namespace unistage::rel {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { Column, Int, Float, Bool, String, Unary, Binary, Call };
    Kind kind = Kind::Int;
    std::string name;  // column name, operator symbol or function name
    int64_t i = 0;
    double f = 0.0;
    bool b = false;
    std::vector<ExprPtr> args;

    friend bool operator==(const Expr& a, const Expr& b) {
        if (a.kind != b.kind || a.name != b.name || a.i != b.i || a.b != b.b || a.args.size() != b.args.size())
            return false;
        if (std::memcmp(&a.f, &b.f, sizeof a.f) != 0) return false;
        for (std::size_t k = 0; k < a.args.size(); ++k)
            if (!(*a.args[k] == *b.args[k])) return false;
        return true;
    }
};

inline ExprPtr col(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Column;
    e->name = std::move(name);
    return e;
}
inline ExprPtr lit_i(int64_t v) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Int;
    e->i = v;
    return e;
}
inline ExprPtr lit_f(double v) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Float;
    e->f = v;
    return e;
}
inline ExprPtr lit_b(bool v) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Bool;
    e->b = v;
    return e;
}
inline ExprPtr lit_s(std::string v) {
    if (v.find('\'') != std::string::npos) throw StagingError("string literals cannot contain quotes");
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::String;
    e->name = std::move(v);
    return e;
}
inline ExprPtr unary(std::string op, ExprPtr a) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Unary;
    e->name = std::move(op);
    e->args = {std::move(a)};
    return e;
}
inline ExprPtr binary(std::string op, ExprPtr a, ExprPtr b) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Binary;
    e->name = std::move(op);
    e->args = {std::move(a), std::move(b)};
    return e;
}
inline ExprPtr call(std::string fn, std::vector<ExprPtr> args) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Call;
    e->name = std::move(fn);
    e->args = std::move(args);
    return e;
}

// ---- printing -------------------------------------------------------------

inline std::string to_string(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::Column: return e.name;
        case Expr::Kind::Int:
            return e.i < 0 ? "(-" + std::to_string(static_cast<uint64_t>(0) - static_cast<uint64_t>(e.i)) + ")"
                           : std::to_string(e.i);
        case Expr::Kind::Float: {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", e.f < 0 ? -e.f : e.f);
            std::string s = buf;
            if (s.find_first_of(".en") == std::string::npos) s += ".0";
            return std::signbit(e.f) ? "(-" + s + ")" : s;
        }
        case Expr::Kind::Bool: return e.b ? "true" : "false";
        case Expr::Kind::String: return "'" + e.name + "'";
        case Expr::Kind::Unary:
            return e.name == "not" ? "(not " + to_string(*e.args[0]) + ")" : "(-" + to_string(*e.args[0]) + ")";
        case Expr::Kind::Binary:
            return "(" + to_string(*e.args[0]) + " " + e.name + " " + to_string(*e.args[1]) + ")";
        case Expr::Kind::Call: {
            std::string s = e.name + "(";
            for (std::size_t k = 0; k < e.args.size(); ++k) s += (k ? ", " : "") + to_string(*e.args[k]);
            return s + ")";
        }
    }
    return "?";
}

// Column names referenced anywhere in the expression, first-seen order.
inline void referenced_columns(const Expr& e, std::vector<std::string>& out) {
    if (e.kind == Expr::Kind::Column && std::find(out.begin(), out.end(), e.name) == out.end()) out.push_back(e.name);
    for (auto& a : e.args) referenced_columns(*a, out);
}

// ---- parsing --------------------------------------------------------------

namespace detail {

class ExprParser {
public:
    explicit ExprParser(std::string_view s) : s_(s) {}

    ExprPtr parse() {
        ExprPtr e = expr(0);
        skip_ws();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(s_.substr(pos_, 1)) + "'");
        return e;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw StagingError("expression '" + std::string(s_) + "': " + msg + " at offset " + std::to_string(pos_));
    }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool word_at(std::string_view w) {
        skip_ws();
        if (s_.substr(pos_, w.size()) != w) return false;
        std::size_t end = pos_ + w.size();
        return end >= s_.size() || !(std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '_');
    }

    // Binary operator at the cursor with its precedence; empty when none.
    std::pair<std::string, int> peek_op() {
        skip_ws();
        if (word_at("or")) return {"or", 1};
        if (word_at("and")) return {"and", 2};
        static const std::pair<const char*, int> ops[] = {{"<=", 4}, {">=", 4}, {"==", 4}, {"!=", 4}, {"<", 4},
                                                          {">", 4},  {"+", 5},  {"-", 5},  {"*", 6},  {"/", 6},
                                                          {"%", 6}};
        for (auto& [sym, prec] : ops)
            if (s_.substr(pos_, std::strlen(sym)) == sym) return {sym, prec};
        return {"", 0};
    }

    ExprPtr expr(int min_prec) {
        ExprPtr lhs = prefix();
        while (true) {
            auto [op, prec] = peek_op();
            if (op.empty() || prec <= min_prec) break;
            pos_ += op.size();
            ExprPtr rhs = expr(prec);
            lhs = binary(op, lhs, rhs);
        }
        return lhs;
    }

    ExprPtr prefix() {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        if (word_at("not")) {
            pos_ += 3;
            return unary("not", expr(3));
        }
        if (s_[pos_] == '-') {
            ++pos_;
            skip_ws();
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) return number(true);
            return unary("-", expr(6));
        }
        return primary();
    }

    ExprPtr number(bool negative) {
        std::size_t start = pos_;
        bool is_float = false;
        while (pos_ < s_.size()) {
            char c = s_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == '.' || c == 'e' || c == 'E') {
                is_float = true;
                ++pos_;
                if ((c == 'e' || c == 'E') && pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) ++pos_;
            } else {
                break;
            }
        }
        std::string text(s_.substr(start, pos_ - start));
        if (negative) text = "-" + text;
        char* end = nullptr;
        errno = 0;
        if (is_float) {
            double v = std::strtod(text.c_str(), &end);
            if (*end != '\0') fail("bad number '" + text + "'");
            return lit_f(v);
        }
        long long v = std::strtoll(text.c_str(), &end, 10);
        if (*end != '\0' || errno == ERANGE) fail("bad integer '" + text + "'");
        return lit_i(v);
    }

    ExprPtr primary() {
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = expr(0);
            skip_ws();
            if (pos_ >= s_.size() || s_[pos_] != ')') fail("expected ')'");
            ++pos_;
            return e;
        }
        if (c == '\'') {
            std::size_t end = s_.find('\'', pos_ + 1);
            if (end == std::string_view::npos) fail("unterminated string");
            std::string v(s_.substr(pos_ + 1, end - pos_ - 1));
            pos_ = end + 1;
            return lit_s(v);
        }
        if (std::isdigit(static_cast<unsigned char>(c))) return number(false);
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                        s_[pos_] == '.'))
                ++pos_;
            std::string id(s_.substr(start, pos_ - start));
            if (id == "true") return lit_b(true);
            if (id == "false") return lit_b(false);
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == '(') {
                ++pos_;
                std::vector<ExprPtr> args;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ')') {
                    ++pos_;
                    return call(id, args);
                }
                while (true) {
                    args.push_back(expr(0));
                    skip_ws();
                    if (pos_ < s_.size() && s_[pos_] == ',') {
                        ++pos_;
                        continue;
                    }
                    if (pos_ < s_.size() && s_[pos_] == ')') {
                        ++pos_;
                        break;
                    }
                    fail("expected ',' or ')'");
                }
                return call(id, args);
            }
            return col(id);
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }
};

}  // namespace detail

inline ExprPtr parse_expr(std::string_view text) { return detail::ExprParser(text).parse(); }

// ---- typing and staging ------------------------------------------------

enum class ExprType { Int64, Float64, Bool, Dict, String };

inline const char* expr_type_name(ExprType t) {
    switch (t) {
        case ExprType::Int64: return "int64";
        case ExprType::Float64: return "float64";
        case ExprType::Bool: return "bool";
        case ExprType::Dict: return "string";
        case ExprType::String: return "string literal";
    }
    return "?";
}

inline ExprType expr_type_of(FieldType t) {
    switch (t) {
        case FieldType::Int64: return ExprType::Int64;
        case FieldType::Float64: return ExprType::Float64;
        case FieldType::StringDict: return ExprType::Dict;
    }
    return ExprType::Int64;
}

inline bool numeric(ExprType t) { return t == ExprType::Int64 || t == ExprType::Float64; }

namespace detail {

inline bool is_compare(const std::string& op) {
    return op == "<" || op == "<=" || op == ">" || op == ">=" || op == "==" || op == "!=";
}

[[noreturn]] inline void type_fail(const Expr& e, const std::string& msg) {
    throw StagingError("expression " + to_string(e) + ": " + msg);
}

}  // namespace detail

inline ExprType infer_type(const Expr& e, const RelSchema& s) {
    using K = Expr::Kind;
    switch (e.kind) {
        case K::Column: return expr_type_of(s[s.index_of(e.name)].type);
        case K::Int: return ExprType::Int64;
        case K::Float: return ExprType::Float64;
        case K::Bool: return ExprType::Bool;
        case K::String: return ExprType::String;
        case K::Unary: {
            ExprType a = infer_type(*e.args[0], s);
            if (e.name == "not") {
                if (a != ExprType::Bool) detail::type_fail(e, "'not' needs a bool operand");
                return ExprType::Bool;
            }
            if (!numeric(a)) detail::type_fail(e, "negation needs a numeric operand");
            return a;
        }
        case K::Binary: {
            ExprType a = infer_type(*e.args[0], s), b = infer_type(*e.args[1], s);
            const std::string& op = e.name;
            if (op == "and" || op == "or") {
                if (a != ExprType::Bool || b != ExprType::Bool) detail::type_fail(e, "'" + op + "' needs bool operands");
                return ExprType::Bool;
            }
            if (detail::is_compare(op)) {
                bool strings = (a == ExprType::Dict || a == ExprType::String) && (b == ExprType::Dict || b == ExprType::String);
                if (strings) {
                    if (op != "==" && op != "!=") detail::type_fail(e, "strings support only == and !=");
                    if (a == ExprType::String && b == ExprType::String) detail::type_fail(e, "comparison of two literals");
                    return ExprType::Bool;
                }
                if (a == ExprType::Bool && b == ExprType::Bool && (op == "==" || op == "!=")) return ExprType::Bool;
                if (!numeric(a) || !numeric(b)) detail::type_fail(e, "comparison needs numeric operands");
                return ExprType::Bool;
            }
            if (!numeric(a) || !numeric(b)) detail::type_fail(e, "'" + op + "' needs numeric operands");
            if (op == "%" && (a != ExprType::Int64 || b != ExprType::Int64)) detail::type_fail(e, "'%' needs int64 operands");
            return a == ExprType::Float64 || b == ExprType::Float64 ? ExprType::Float64 : ExprType::Int64;
        }
        case K::Call: {
            std::vector<ExprType> at;
            for (auto& a : e.args) at.push_back(infer_type(*a, s));
            auto arity = [&](std::size_t n) {
                if (at.size() != n) detail::type_fail(e, e.name + " expects " + std::to_string(n) + " arguments");
            };
            if (e.name == "exp" || e.name == "log") {
                arity(1);
                if (!numeric(at[0])) detail::type_fail(e, e.name + " needs a numeric argument");
                return ExprType::Float64;
            }
            if (e.name == "float") {
                arity(1);
                if (!numeric(at[0])) detail::type_fail(e, "float needs a numeric argument");
                return ExprType::Float64;
            }
            if (e.name == "int") {
                arity(1);
                if (!numeric(at[0]) && at[0] != ExprType::Bool) detail::type_fail(e, "int needs a numeric argument");
                return ExprType::Int64;
            }
            if (e.name == "abs") {
                arity(1);
                if (!numeric(at[0])) detail::type_fail(e, "abs needs a numeric argument");
                return at[0];
            }
            if (e.name == "min" || e.name == "max") {
                arity(2);
                if (!numeric(at[0]) || !numeric(at[1])) detail::type_fail(e, e.name + " needs numeric arguments");
                return at[0] == ExprType::Float64 || at[1] == ExprType::Float64 ? ExprType::Float64 : ExprType::Int64;
            }
            if (e.name == "if") {
                arity(3);
                if (at[0] != ExprType::Bool) detail::type_fail(e, "if needs a bool condition");
                if (numeric(at[1]) && numeric(at[2]))
                    return at[1] == ExprType::Float64 || at[2] == ExprType::Float64 ? ExprType::Float64 : ExprType::Int64;
                if (at[1] != at[2] || at[1] == ExprType::String || at[1] == ExprType::Dict)
                    detail::type_fail(e, "if branches must have matching scalar types");
                return at[1];
            }
            detail::type_fail(e, "unknown function '" + e.name + "'");
        }
    }
    return ExprType::Int64;
}

// Staged value of an expression; `dict` is set for string-column results.
struct TypedValue {
    StagedValue v;
    ExprType type = ExprType::Int64;
    StagedValue dict = StagedValue::unit();
    std::string text;  // string literal payload
};

namespace detail {

inline TypedValue as_f64(IrGraph& g, TypedValue t) {
    if (t.type == ExprType::Int64) return {g.to_f64(t.v), ExprType::Float64, StagedValue::unit(), {}};
    return t;
}

// Dictionary code of literal `s`, or -1 when the string never occurs.
inline StagedValue literal_code(IrGraph& g, StagedValue dict, const std::string& s) {
    const Node& d = g.node(dict.node);
    for (std::size_t k = 0; k < d.imm.size(); ++k)
        if (std::get<std::string>(d.imm[k]) == s) return g.i64(static_cast<int64_t>(k));
    return g.i64(-1);
}

}  // namespace detail

inline TypedValue eval(IrGraph& g, const Expr& e, const Record& r) {
    using K = Expr::Kind;
    switch (e.kind) {
        case K::Column: {
            std::size_t i = r.schema().index_of(e.name);
            return {r.value(i), expr_type_of(r.type(i)), r.dict(i), {}};
        }
        case K::Int: return {g.i64(e.i), ExprType::Int64, StagedValue::unit(), {}};
        case K::Float: return {g.f64(e.f), ExprType::Float64, StagedValue::unit(), {}};
        case K::Bool: return {g.boolean(e.b), ExprType::Bool, StagedValue::unit(), {}};
        case K::String: return {StagedValue::unit(), ExprType::String, StagedValue::unit(), e.name};
        case K::Unary: {
            TypedValue a = eval(g, *e.args[0], r);
            if (e.name == "not") {
                if (a.type != ExprType::Bool) detail::type_fail(e, "'not' needs a bool operand");
                return {g.lnot(a.v), ExprType::Bool, StagedValue::unit(), {}};
            }
            if (!numeric(a.type)) detail::type_fail(e, "negation needs a numeric operand");
            return {g.neg(a.v), a.type, StagedValue::unit(), {}};
        }
        case K::Binary: {
            TypedValue a = eval(g, *e.args[0], r), b = eval(g, *e.args[1], r);
            const std::string& op = e.name;
            auto boolean = [&](StagedValue v) { return TypedValue{v, ExprType::Bool, StagedValue::unit(), {}}; };
            if (op == "and" || op == "or") {
                if (a.type != ExprType::Bool || b.type != ExprType::Bool) detail::type_fail(e, "'" + op + "' needs bool operands");
                return boolean(op == "and" ? g.land(a.v, b.v) : g.lor(a.v, b.v));
            }
            bool sa = a.type == ExprType::Dict || a.type == ExprType::String;
            bool sb = b.type == ExprType::Dict || b.type == ExprType::String;
            if (sa || sb) {
                if (!(sa && sb) || (op != "==" && op != "!=")) detail::type_fail(e, "strings support only == and !=");
                StagedValue ca, cb;
                if (a.type == ExprType::Dict && b.type == ExprType::Dict) {
                    if (a.dict.node != b.dict.node) detail::type_fail(e, "string columns use different dictionaries");
                    ca = a.v;
                    cb = b.v;
                } else if (a.type == ExprType::Dict && b.type == ExprType::String) {
                    ca = a.v;
                    cb = detail::literal_code(g, a.dict, b.text);
                } else if (a.type == ExprType::String && b.type == ExprType::Dict) {
                    ca = detail::literal_code(g, b.dict, a.text);
                    cb = b.v;
                } else {
                    detail::type_fail(e, "comparison of two literals");
                }
                return boolean(op == "==" ? g.eq(ca, cb) : g.ne(ca, cb));
            }
            if (detail::is_compare(op) && a.type == ExprType::Bool && b.type == ExprType::Bool &&
                (op == "==" || op == "!="))
                return boolean(op == "==" ? g.eq(a.v, b.v) : g.ne(a.v, b.v));
            if (!numeric(a.type) || !numeric(b.type)) detail::type_fail(e, "'" + op + "' needs numeric operands");
            if (a.type != b.type) {
                a = detail::as_f64(g, a);
                b = detail::as_f64(g, b);
            }
            ExprType t = a.type;
            auto num = [&](StagedValue v) { return TypedValue{v, t, StagedValue::unit(), {}}; };
            if (op == "+") return num(g.add(a.v, b.v));
            if (op == "-") return num(g.sub(a.v, b.v));
            if (op == "*") return num(g.mul(a.v, b.v));
            if (op == "/") return num(g.div(a.v, b.v));
            if (op == "%") {
                if (t != ExprType::Int64) detail::type_fail(e, "'%' needs int64 operands");
                return num(g.mod(a.v, b.v));
            }
            if (op == "<") return boolean(g.lt(a.v, b.v));
            if (op == "<=") return boolean(g.le(a.v, b.v));
            if (op == ">") return boolean(g.gt(a.v, b.v));
            if (op == ">=") return boolean(g.ge(a.v, b.v));
            if (op == "==") return boolean(g.eq(a.v, b.v));
            if (op == "!=") return boolean(g.ne(a.v, b.v));
            detail::type_fail(e, "unknown operator '" + op + "'");
        }
        case K::Call: {
            std::vector<TypedValue> a;
            for (auto& x : e.args) a.push_back(eval(g, *x, r));
            auto arity = [&](std::size_t n) {
                if (a.size() != n) detail::type_fail(e, e.name + " expects " + std::to_string(n) + " arguments");
            };
            auto need_num = [&](const TypedValue& t) {
                if (!numeric(t.type)) detail::type_fail(e, e.name + " needs numeric arguments");
            };
            auto f64v = [&](StagedValue v) { return TypedValue{v, ExprType::Float64, StagedValue::unit(), {}}; };
            if (e.name == "exp" || e.name == "log") {
                arity(1);
                need_num(a[0]);
                StagedValue x = detail::as_f64(g, a[0]).v;
                return f64v(e.name == "exp" ? g.exp(x) : g.log(x));
            }
            if (e.name == "float") {
                arity(1);
                need_num(a[0]);
                return detail::as_f64(g, a[0]);
            }
            if (e.name == "int") {
                arity(1);
                if (a[0].type == ExprType::Bool)
                    return {g.select(a[0].v, g.i64(1), g.i64(0)), ExprType::Int64, StagedValue::unit(), {}};
                need_num(a[0]);
                if (a[0].type == ExprType::Int64) return a[0];
                return {g.to_i64(a[0].v), ExprType::Int64, StagedValue::unit(), {}};
            }
            if (e.name == "abs") {
                arity(1);
                need_num(a[0]);
                StagedValue zero = a[0].type == ExprType::Int64 ? g.i64(0) : g.f64(0.0);
                StagedValue r = g.select(g.lt(a[0].v, zero), g.neg(a[0].v), a[0].v);
                // abs(-0.0) is +0.0
                if (a[0].type == ExprType::Float64) r = g.add(r, zero);
                return {r, a[0].type, StagedValue::unit(), {}};
            }
            if (e.name == "min" || e.name == "max" || e.name == "if") {
                std::size_t first = e.name == "if" ? 1 : 0;
                arity(first + 2);
                TypedValue x = a[first], y = a[first + 1];
                if (numeric(x.type) && numeric(y.type) && x.type != y.type) {
                    x = detail::as_f64(g, x);
                    y = detail::as_f64(g, y);
                }
                if (e.name == "if") {
                    if (a[0].type != ExprType::Bool) detail::type_fail(e, "if needs a bool condition");
                    if (x.type != y.type || x.type == ExprType::String || x.type == ExprType::Dict)
                        detail::type_fail(e, "if branches must have matching scalar types");
                    return {g.select(a[0].v, x.v, y.v), x.type, StagedValue::unit(), {}};
                }
                need_num(x);
                need_num(y);
                return {e.name == "min" ? g.min(x.v, y.v) : g.max(x.v, y.v), x.type, StagedValue::unit(), {}};
            }
            detail::type_fail(e, "unknown function '" + e.name + "'");
        }
    }
    throw InternalError("unhandled expression kind");
}

}  // namespace unistage::rel
