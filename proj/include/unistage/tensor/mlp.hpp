#pragma once

// Three-layer fully connected network (matmul, bias, relu twice, then a
// linear regression head or a sigmoid classifier head) and its parameter
// checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "unistage/tensor/ops.hpp"

namespace unistage::tensor {

enum class Head { Regress, Classify };

// Current-stage parameter values.
struct NamedValues {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> values;
    friend bool operator==(const NamedValues&, const NamedValues&) = default;
};

struct Mlp3Weights {
    std::vector<int64_t> dims;  // in, hidden1, hidden2, out
    std::vector<NamedValues> params;  // w1 b1 w2 b2 w3 b3

    const NamedValues& get(const std::string& name) const {
        for (auto& p : params)
            if (p.name == name) return p;
        throw StagingError("model has no parameter '" + name + "'");
    }
};

inline void check_mlp3_dims(const std::vector<int64_t>& dims) {
    if (dims.size() != 4) throw StagingError("mlp3: expected 4 layer dimensions (in, hidden1, hidden2, out)");
    for (int64_t d : dims)
        if (d < 1) throw StagingError("mlp3: layer dimensions must be positive");
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases.
inline Mlp3Weights init_mlp3(const std::vector<int64_t>& dims, uint64_t seed) {
    check_mlp3_dims(dims);
    std::mt19937_64 rng(seed);
    Mlp3Weights w;
    w.dims = dims;
    for (int layer = 0; layer < 3; ++layer) {
        int64_t fi = dims[layer], fo = dims[layer + 1];
        double a = std::sqrt(6.0 / static_cast<double>(fi + fo));
        std::uniform_real_distribution<double> u(-a, a);
        NamedValues wt{"w" + std::to_string(layer + 1), {fi, fo}, {}};
        for (int64_t i = 0; i < fi * fo; ++i) wt.values.push_back(u(rng));
        NamedValues b{"b" + std::to_string(layer + 1), {fo}, std::vector<double>(static_cast<std::size_t>(fo), 0.0)};
        w.params.push_back(std::move(wt));
        w.params.push_back(std::move(b));
    }
    return w;
}

// Validates a checkpoint against layer dimensions.
inline Mlp3Weights mlp3_from_values(const std::vector<int64_t>& dims, const std::vector<NamedValues>& values) {
    check_mlp3_dims(dims);
    Mlp3Weights w;
    w.dims = dims;
    for (int layer = 0; layer < 3; ++layer) {
        int64_t fi = dims[layer], fo = dims[layer + 1];
        for (auto [name, shape] : {std::pair{"w" + std::to_string(layer + 1), std::vector<int64_t>{fi, fo}},
                                   std::pair{"b" + std::to_string(layer + 1), std::vector<int64_t>{fo}}}) {
            auto it = std::find_if(values.begin(), values.end(), [&](const NamedValues& v) { return v.name == name; });
            if (it == values.end()) throw StagingError("checkpoint lacks parameter '" + name + "'");
            if (it->shape != shape) throw StagingError("checkpoint parameter '" + name + "' has the wrong shape");
            w.params.push_back(*it);
        }
    }
    return w;
}

struct Mlp3 {
    std::vector<int64_t> dims;
    Head head = Head::Regress;
    std::vector<Parameter> params;  // w1 b1 w2 b2 w3 b3

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> v;
        for (auto& p : params) v.push_back(&p);
        return v;
    }
};

inline Mlp3 stage_mlp3(IrGraph& g, const Mlp3Weights& w, Head head) {
    check_mlp3_dims(w.dims);
    Mlp3 m;
    m.dims = w.dims;
    m.head = head;
    m.params.reserve(w.params.size());
    for (auto& p : w.params) m.params.push_back(make_parameter(g, p.name, p.shape, p.values));
    return m;
}

inline Tensor mlp3_forward(IrGraph& g, const Tensor& x, Mlp3& m) {
    if (x.rank() != 2 || x.shape[1] != m.dims[0])
        throw StagingError("mlp3: input " + x.shape_str() + " does not match input width " + std::to_string(m.dims[0]));
    Tensor h = x;
    for (int layer = 0; layer < 3; ++layer) {
        Tensor w = use(m.params[static_cast<std::size_t>(2 * layer)]);
        Tensor b = use(m.params[static_cast<std::size_t>(2 * layer + 1)]);
        h = add_bias(g, matmul(g, h, w), b);
        if (layer < 2) h = relu(g, h);
    }
    return m.head == Head::Classify ? sigmoid(g, h) : h;
}

// ---- checkpoints ----------------------------------------------------------

// One line per parameter: `name shape values...`; shape is `AxB` (or `A`,
// or `scalar` for rank 0); values use 17 significant digits.
inline std::string format_checkpoint(const std::vector<NamedValues>& params) {
    std::string out;
    char buf[40];
    for (auto& p : params) {
        out += p.name + " ";
        if (p.shape.empty()) out += "scalar";
        for (std::size_t i = 0; i < p.shape.size(); ++i) out += (i ? "x" : "") + std::to_string(p.shape[i]);
        for (double v : p.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out += " ";
            out += buf;
        }
        out += "\n";
    }
    return out;
}

inline std::vector<NamedValues> parse_checkpoint(const std::string& text) {
    std::vector<NamedValues> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        NamedValues p;
        std::string shape;
        if (!(ls >> p.name >> shape)) throw Error("checkpoint line " + std::to_string(lineno) + ": missing shape");
        if (shape != "scalar") {
            std::size_t pos = 0;
            while (pos <= shape.size()) {
                std::size_t x = shape.find('x', pos);
                std::string part = shape.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
                try {
                    p.shape.push_back(std::stoll(part));
                } catch (const std::exception&) {
                    throw Error("checkpoint line " + std::to_string(lineno) + ": bad shape '" + shape + "'");
                }
                if (x == std::string::npos) break;
                pos = x + 1;
            }
        }
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end) throw Error("checkpoint line " + std::to_string(lineno) + ": bad value '" + tok + "'");
            p.values.push_back(v);
        }
        int64_t n = 1;
        for (int64_t d : p.shape) n *= d;
        if (n != static_cast<int64_t>(p.values.size()))
            throw Error("checkpoint line " + std::to_string(lineno) + ": expected " + std::to_string(n) + " values for '" +
                        p.name + "'");
        out.push_back(std::move(p));
    }
    return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<NamedValues>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    out << format_checkpoint(params);
}

inline std::vector<NamedValues> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

// Stages side-channel output of every parameter value, tagged `ckpt:<name>`.
inline void dump_parameters(IrGraph& g, const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        std::vector<StagedValue> vals;
        int64_t n = p->value.static_numel();
        for (int64_t i = 0; i < n; ++i) vals.push_back(g.load(p->value.data, g.i64(i)));
        g.print_aux("ckpt:" + p->name, vals);
    }
}

// Recovers parameter values from a program's side-channel output.
inline std::vector<NamedValues> parameters_from_aux(const std::vector<std::string>& aux,
                                                    const std::vector<Parameter*>& params) {
    std::vector<NamedValues> out;
    for (Parameter* p : params) {
        std::string tag = "ckpt:" + p->name;
        NamedValues nv{p->name, p->value.shape, {}};
        for (auto& line : aux) {
            if (line.rfind(tag + " ", 0) != 0 && line != tag) continue;
            nv.values.clear();  // the last dump wins
            std::istringstream ls(line.substr(tag.size()));
            std::string tok;
            while (ls >> tok) nv.values.push_back(std::strtod(tok.c_str(), nullptr));
        }
        if (static_cast<int64_t>(nv.values.size()) != p->value.static_numel())
            throw RunError("program output lacks values for parameter '" + p->name + "'");
        out.push_back(std::move(nv));
    }
    return out;
}

}  // namespace unistage::tensor
