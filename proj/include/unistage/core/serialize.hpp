#pragma once

#include <cstdlib>
#include <sstream>
#include <string>
#include <string_view>

#include "unistage/core/graph.hpp"

namespace unistage {

// Line-oriented text form, one node per line in id order:
//   id op [operand-ids] {immediates} effect scope type
// where effect is pure | read(r:..) | write(r:..;w:..) | global(..).
namespace detail {

inline std::string effect_token(const Effect& e) {
    static const char* names[] = {"pure", "read", "write", "global"};
    std::string s = names[static_cast<int>(e.kind())];
    if (e.reads.empty() && e.writes.empty()) return s;
    s += '(';
    auto list = [&](char tag, const std::vector<NodeId>& v) {
        s += tag;
        s += ':';
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(v[i]);
        }
    };
    if (!e.reads.empty()) list('r', e.reads);
    if (!e.writes.empty()) {
        if (!e.reads.empty()) s += ';';
        list('w', e.writes);
    }
    s += ')';
    return s;
}

inline std::vector<NodeId> parse_ids(std::string_view s) {
    std::vector<NodeId> out;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = s.find(',', i);
        if (j == std::string_view::npos) j = s.size();
        if (j > i) out.push_back(static_cast<NodeId>(std::stoul(std::string(s.substr(i, j - i)))));
        i = j + 1;
    }
    return out;
}

inline Effect parse_effect(std::string_view tok) {
    Effect e;
    std::size_t paren = tok.find('(');
    std::string_view kind = tok.substr(0, paren);
    if (kind == "global") e.global = true;
    else if (kind != "pure" && kind != "read" && kind != "write") throw Error("bad effect '" + std::string(tok) + "'");
    if (paren == std::string_view::npos) return e;
    std::string_view body = tok.substr(paren + 1, tok.size() - paren - 2);
    while (!body.empty()) {
        std::size_t semi = body.find(';');
        std::string_view part = body.substr(0, semi);
        if (part.size() < 2 || part[1] != ':') throw Error("bad effect list '" + std::string(tok) + "'");
        auto ids = parse_ids(part.substr(2));
        (part[0] == 'r' ? e.reads : e.writes) = ids;
        if (semi == std::string_view::npos) break;
        body = body.substr(semi + 1);
    }
    return e;
}

inline Literal parse_literal(std::string_view s) {
    if (s.size() < 2 || s[1] != ':') throw Error("bad literal '" + std::string(s) + "'");
    std::string body(s.substr(2));
    switch (s[0]) {
        case 'i': return Literal{static_cast<int64_t>(std::stoll(body))};
        case 'f': return Literal{std::strtod(body.c_str(), nullptr)};
        case 'b': return Literal{body == "1"};
        case 's': {
            std::string out;
            for (std::size_t i = 1; i + 1 < body.size(); ++i) {
                if (body[i] == '\\' && i + 2 < body.size()) {
                    ++i;
                    out += body[i] == 'n' ? '\n' : body[i];
                } else {
                    out += body[i];
                }
            }
            return Literal{out};
        }
        default: throw Error("bad literal '" + std::string(s) + "'");
    }
}

// Splits "{a,b,"x,y"}" contents at top-level commas, honouring quotes.
inline std::vector<std::string> split_imm(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (quoted) {
            cur += c;
            if (c == '\\' && i + 1 < s.size()) cur += s[++i];
            else if (c == '"') quoted = false;
        } else if (c == '"') {
            quoted = true;
            cur += c;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace detail

inline std::string serialize_node(const Node& n) {
    std::string s = std::to_string(n.id);
    s += ' ';
    s += op_name(n.op);
    s += " [";
    for (std::size_t i = 0; i < n.operands.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(n.operands[i]);
    }
    s += "] {";
    for (std::size_t i = 0; i < n.imm.size(); ++i) {
        if (i) s += ',';
        s += format_literal(n.imm[i]);
    }
    s += "} ";
    s += detail::effect_token(n.effect);
    s += ' ';
    s += std::to_string(n.scope);
    s += ' ';
    s += n.type.str();
    return s;
}

inline std::string serialize(const IrGraph& g) {
    std::string out;
    for (const Node& n : g.nodes()) {
        out += serialize_node(n);
        out += '\n';
    }
    return out;
}

inline IrGraph deserialize(std::string_view text) {
    IrGraph g;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            Node n;
            std::size_t sp = line.find(' ');
            n.id = static_cast<NodeId>(std::stoul(std::string(line.substr(0, sp))));
            std::size_t sp2 = line.find(' ', sp + 1);
            n.op = op_from_name(line.substr(sp + 1, sp2 - sp - 1));
            std::size_t lb = line.find('[', sp2), rb = line.find(']', lb);
            n.operands = detail::parse_ids(line.substr(lb + 1, rb - lb - 1));
            std::size_t lc = line.find('{', rb);
            // closing brace: last '}' before the effect token
            std::size_t rc = line.rfind('}');
            for (auto& part : detail::split_imm(line.substr(lc + 1, rc - lc - 1)))
                n.imm.push_back(detail::parse_literal(part));
            std::istringstream rest{std::string(line.substr(rc + 1))};
            std::string eff, type;
            NodeId scope = 0;
            rest >> eff >> scope >> type;
            n.effect = detail::parse_effect(eff);
            n.scope = scope;
            n.type = SType::parse(type);
            if (n.id == 0) {
                // the root block already exists in every graph
                if (n.op != Op::Block || n.scope != 0 || !n.operands.empty())
                    throw Error("node 0 must be the root block");
                continue;
            }
            g.append_raw(std::move(n));
        } catch (const std::exception& e) {
            throw Error("graph line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return g;
}

}  // namespace unistage
