#pragma once

// Plain double-precision three-layer MLP and its MSE loss, used as the
// finite-difference oracle for staged gradients.

#include <cmath>
#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "unistage/backend/interpreter.hpp"
#include "unistage/core/optimize.hpp"
#include "unistage/tensor/mlp.hpp"

namespace testsupport {

struct RefMlp {
    std::vector<int64_t> dims;
    bool classify = false;
    std::vector<std::vector<double>> params;  // w1 b1 w2 b2 w3 b3, row-major [in,out]
};

// Smallest |pre-activation| of either ReLU layer; near zero, central
// differences straddle the kink.
struct RefForward {
    double loss = 0.0;
    double min_abs_preact = 1e300;
};

struct RefOutputs {
    std::vector<double> out;  // [batch, dims[3]] row-major
    double min_abs_preact = 1e300;
};

inline RefOutputs ref_mlp_forward(const RefMlp& m, const std::vector<double>& x, int64_t batch) {
    RefOutputs o;
    std::vector<double> h = x;
    int64_t width = m.dims[0];
    for (int layer = 0; layer < 3; ++layer) {
        int64_t fo = m.dims[static_cast<std::size_t>(layer + 1)];
        const auto& w = m.params[static_cast<std::size_t>(2 * layer)];
        const auto& b = m.params[static_cast<std::size_t>(2 * layer + 1)];
        std::vector<double> next(static_cast<std::size_t>(batch * fo));
        for (int64_t i = 0; i < batch; ++i)
            for (int64_t j = 0; j < fo; ++j) {
                double s = 0.0;
                for (int64_t k = 0; k < width; ++k)
                    s += h[static_cast<std::size_t>(i * width + k)] * w[static_cast<std::size_t>(k * fo + j)];
                s += b[static_cast<std::size_t>(j)];
                if (layer < 2) {
                    o.min_abs_preact = std::min(o.min_abs_preact, std::fabs(s));
                    s = s > 0.0 ? s : 0.0;
                } else if (m.classify) {
                    s = 1.0 / (1.0 + std::exp(-s));
                }
                next[static_cast<std::size_t>(i * fo + j)] = s;
            }
        h = std::move(next);
        width = fo;
    }
    o.out = std::move(h);
    return o;
}

inline RefForward ref_mlp_loss(const RefMlp& m, const std::vector<double>& x, const std::vector<double>& y,
                               int64_t batch) {
    RefOutputs o = ref_mlp_forward(m, x, batch);
    RefForward out;
    out.min_abs_preact = o.min_abs_preact;
    double total = 0.0;
    for (std::size_t i = 0; i < o.out.size(); ++i) total += (o.out[i] - y[i]) * (o.out[i] - y[i]);
    out.loss = total / static_cast<double>(o.out.size());
    return out;
}

// Central differences with a step relative to each parameter's magnitude.
inline std::vector<std::vector<double>> ref_mlp_fd_grads(RefMlp m, const std::vector<double>& x,
                                                         const std::vector<double>& y, int64_t batch,
                                                         double eps = 1e-6) {
    std::vector<std::vector<double>> grads;
    for (auto& p : m.params) {
        std::vector<double> gp(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            double orig = p[i];
            double h = eps * std::max(1.0, std::fabs(orig));
            p[i] = orig + h;
            double up = ref_mlp_loss(m, x, y, batch).loss;
            p[i] = orig - h;
            double down = ref_mlp_loss(m, x, y, batch).loss;
            p[i] = orig;
            gp[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(gp));
    }
    return grads;
}

// |a - n| / max(|a|, |n|), with gradients below `floor` in both compared absolutely.
// The floor sits above central-difference round-off: one ulp of an O(1) loss
// moves the quotient by about 5e-11 at step 1e-6.
inline double grad_rel_error(double a, double n, double floor = 1e-6) {
    double scale = std::max(std::fabs(a), std::fabs(n));
    if (scale < floor) return std::fabs(a - n) / floor;
    return std::fabs(a - n) / scale;
}

inline unistage::tensor::Mlp3Weights to_weights(const RefMlp& m) {
    unistage::tensor::Mlp3Weights w;
    w.dims = m.dims;
    const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
    for (int layer = 0; layer < 3; ++layer) {
        int64_t fi = m.dims[static_cast<std::size_t>(layer)], fo = m.dims[static_cast<std::size_t>(layer + 1)];
        w.params.push_back({names[2 * layer], {fi, fo}, m.params[static_cast<std::size_t>(2 * layer)]});
        w.params.push_back({names[2 * layer + 1], {fo}, m.params[static_cast<std::size_t>(2 * layer + 1)]});
    }
    return w;
}

inline RefMlp from_weights(const unistage::tensor::Mlp3Weights& w, bool classify) {
    RefMlp m;
    m.dims = w.dims;
    m.classify = classify;
    for (auto& p : w.params) m.params.push_back(p.values);
    return m;
}

inline RefMlp random_mlp(std::mt19937_64& rng, int64_t max_dim, bool classify) {
    std::uniform_int_distribution<int64_t> dim(1, max_dim);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RefMlp m;
    m.dims = {dim(rng), dim(rng), dim(rng), dim(rng)};
    m.classify = classify;
    for (int layer = 0; layer < 3; ++layer) {
        int64_t fi = m.dims[static_cast<std::size_t>(layer)], fo = m.dims[static_cast<std::size_t>(layer + 1)];
        std::vector<double> w(static_cast<std::size_t>(fi * fo)), b(static_cast<std::size_t>(fo));
        for (auto& v : w) v = u(rng);
        for (auto& v : b) v = 0.5 * u(rng);
        m.params.push_back(std::move(w));
        m.params.push_back(std::move(b));
    }
    return m;
}

struct StagedGrads {
    double loss = 0.0;
    std::vector<std::vector<double>> grads;  // same order as RefMlp::params
};

// Stages forward, loss and backward once; the loss is printed and every
// gradient goes to the side channel tagged "grad:<name>".
inline unistage::IrGraph stage_mlp_grads(const RefMlp& m, const std::vector<double>& x, const std::vector<double>& y,
                                         int64_t batch) {
    using namespace unistage;
    IrGraph g;
    tensor::Mlp3 model = tensor::stage_mlp3(g, to_weights(m), m.classify ? tensor::Head::Classify : tensor::Head::Regress);
    tensor::Tensor xt = tensor::from_literals(g, {batch, m.dims[0]}, x);
    tensor::Tensor yt = tensor::from_literals(g, {batch, m.dims[3]}, y);
    tensor::Tape tape;
    {
        tensor::GradScope scope(g, tape);
        tensor::Tensor loss = tensor::mse_loss(g, tensor::mlp3_forward(g, xt, model), yt);
        g.print(tensor::scalar_value(g, loss));
        tensor::backward(g, loss);
    }
    for (auto& p : model.params) {
        std::vector<StagedValue> vals;
        for (int64_t i = 0; i < p.grad.static_numel(); ++i) vals.push_back(g.load(p.grad.data, g.i64(i)));
        g.print_aux("grad:" + p.name, vals);
    }
    return g;
}

inline StagedGrads parse_grads(const unistage::RunResult& r) {
    StagedGrads out;
    out.loss = std::stod(r.lines.at(0));
    for (auto& line : r.aux) {
        std::istringstream ls(line);
        std::string tag, tok;
        ls >> tag;
        std::vector<double> v;
        while (ls >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
        out.grads.push_back(std::move(v));
    }
    return out;
}

inline StagedGrads staged_mlp_grads(const RefMlp& m, const std::vector<double>& x, const std::vector<double>& y,
                                    int64_t batch) {
    return parse_grads(unistage::interpret(unistage::optimize(stage_mlp_grads(m, x, y, batch))));
}

}  // namespace testsupport
