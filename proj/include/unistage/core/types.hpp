#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <string_view>
#include <variant>

#include "unistage/core/error.hpp"

namespace unistage {

using NodeId = uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Kind : uint8_t { Unit, Bool, Int64, Float64, Array, Vec, Var, Map, Dict, Func, Pool };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Unit: return "unit";
        case Kind::Bool: return "bool";
        case Kind::Int64: return "i64";
        case Kind::Float64: return "f64";
        case Kind::Array: return "arr";
        case Kind::Vec: return "vec";
        case Kind::Var: return "var";
        case Kind::Map: return "map";
        case Kind::Dict: return "dict";
        case Kind::Func: return "func";
        case Kind::Pool: return "pool";
    }
    return "?";
}

// Semantic type of a next-stage value. Containers (array, vec, var) carry a
// scalar element kind; everything else ignores `elem`.
struct SType {
    Kind kind = Kind::Unit;
    Kind elem = Kind::Unit;

    static constexpr SType unit() { return {Kind::Unit, Kind::Unit}; }
    static constexpr SType boolean() { return {Kind::Bool, Kind::Unit}; }
    static constexpr SType i64() { return {Kind::Int64, Kind::Unit}; }
    static constexpr SType f64() { return {Kind::Float64, Kind::Unit}; }
    static constexpr SType array(Kind e) { return {Kind::Array, e}; }
    static constexpr SType vec(Kind e) { return {Kind::Vec, e}; }
    static constexpr SType var(Kind e) { return {Kind::Var, e}; }
    static constexpr SType map() { return {Kind::Map, Kind::Unit}; }
    static constexpr SType dict() { return {Kind::Dict, Kind::Unit}; }
    static constexpr SType func() { return {Kind::Func, Kind::Unit}; }
    static constexpr SType pool() { return {Kind::Pool, Kind::Unit}; }

    constexpr bool is_scalar() const {
        return kind == Kind::Bool || kind == Kind::Int64 || kind == Kind::Float64;
    }
    constexpr bool is_numeric() const { return kind == Kind::Int64 || kind == Kind::Float64; }
    constexpr bool is_buffer() const { return kind == Kind::Array || kind == Kind::Vec; }
    constexpr SType element() const { return {elem, Kind::Unit}; }

    friend constexpr bool operator==(const SType&, const SType&) = default;

    std::string str() const {
        std::string s = kind_name(kind);
        if (kind == Kind::Array || kind == Kind::Vec || kind == Kind::Var) {
            s += '<';
            s += kind_name(elem);
            s += '>';
        }
        return s;
    }

    static SType parse(std::string_view s) {
        auto scalar = [](std::string_view k) -> Kind {
            for (Kind c : {Kind::Unit, Kind::Bool, Kind::Int64, Kind::Float64, Kind::Array, Kind::Vec,
                           Kind::Var, Kind::Map, Kind::Dict, Kind::Func, Kind::Pool})
                if (k == kind_name(c)) return c;
            throw Error("unknown type '" + std::string(k) + "'");
        };
        auto lt = s.find('<');
        if (lt == std::string_view::npos) return {scalar(s), Kind::Unit};
        if (s.back() != '>') throw Error("malformed type '" + std::string(s) + "'");
        return {scalar(s.substr(0, lt)), scalar(s.substr(lt + 1, s.size() - lt - 2))};
    }
};

// Current-stage payload attached to nodes (constant values, shapes, names).
using Literal = std::variant<int64_t, double, bool, std::string>;

inline bool literal_equal(const Literal& a, const Literal& b) {
    if (a.index() != b.index()) return false;
    if (auto* da = std::get_if<double>(&a)) {
        double db = std::get<double>(b);
        return std::memcmp(da, &db, sizeof(double)) == 0;
    }
    return a == b;
}

// 17 significant digits: the shortest width that round-trips every double.
inline std::string format_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_literal(const Literal& l) {
    struct V {
        std::string operator()(int64_t v) const { return "i:" + std::to_string(v); }
        std::string operator()(double v) const { return "f:" + format_f64(v); }
        std::string operator()(bool v) const { return v ? "b:1" : "b:0"; }
        std::string operator()(const std::string& v) const {
            std::string out = "s:\"";
            for (char c : v) {
                if (c == '"' || c == '\\') {
                    out += '\\';
                    out += c;
                } else if (c == '\n') {
                    out += "\\n";
                } else {
                    out += c;
                }
            }
            out += '"';
            return out;
        }
    };
    return std::visit(V{}, l);
}

}  // namespace unistage
