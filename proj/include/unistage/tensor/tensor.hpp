#pragma once

// Shape-carrying views over staged flat float64 buffers. Shapes are known
// while staging, except that dimension 0 may be a run-time extent (a batch
// or a relation's row count) carried as a staged i64.

#include <numeric>
#include <string>
#include <vector>

#include "unistage/core/graph.hpp"

namespace unistage::tensor {

inline constexpr int64_t kDynamic = -1;

struct Tensor {
    StagedValue data;              // arr<f64> or vec<f64>
    int64_t offset = 0;            // element offset of index (0, ...)
    StagedValue dyn_offset;        // run-time addend to offset; unit when none
    std::vector<int64_t> shape;    // rank 0..2; shape[0] may be kDynamic
    std::vector<int64_t> strides;  // element strides, one per dimension
    StagedValue rows;              // staged extent of dim 0 when rank >= 1
    int id = -1;                   // tape slot; -1 when not tracked

    std::size_t rank() const { return shape.size(); }
    bool dynamic() const { return !shape.empty() && shape[0] == kDynamic; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += shape[i] == kDynamic ? std::string("?") : std::to_string(shape[i]);
        }
        return s + "]";
    }

    // Element count of the trailing (static) dimensions.
    int64_t row_width() const {
        int64_t w = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) w *= shape[i];
        return w;
    }

    int64_t static_numel() const {
        if (dynamic()) throw StagingError("tensor " + shape_str() + " has a run-time extent");
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }

    bool contiguous() const {
        int64_t expect = 1;
        for (std::size_t i = shape.size(); i-- > 0;) {
            if (strides[i] != expect && !(shape[i] == 1)) return false;
            expect *= shape[i] == kDynamic ? 1 : shape[i];
        }
        return offset == 0 && dyn_offset.is_unit();
    }
};

inline std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

inline void check_shape(const std::vector<int64_t>& shape, bool allow_dynamic, const char* what) {
    if (shape.size() > 2) throw StagingError(std::string(what) + ": tensors of rank > 2 are not supported");
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == kDynamic && i == 0 && allow_dynamic) continue;
        if (shape[i] < 0) throw StagingError(std::string(what) + ": invalid extent " + std::to_string(shape[i]));
    }
}

// Staged extent of dimension d.
inline StagedValue dim(IrGraph& g, const Tensor& t, std::size_t d) {
    if (d >= t.rank()) throw StagingError("dimension " + std::to_string(d) + " out of range for " + t.shape_str());
    if (d == 0 && t.dynamic()) return t.rows;
    return g.i64(t.shape[d]);
}

inline StagedValue numel(IrGraph& g, const Tensor& t) {
    if (t.rank() == 0) return g.i64(1);
    return g.mul(dim(g, t, 0), g.i64(t.row_width()));
}

// Staged element index of (0, ...).
inline StagedValue base_index(IrGraph& g, const Tensor& t) {
    if (t.dyn_offset.is_unit()) return g.i64(t.offset);
    return g.add(t.dyn_offset, g.i64(t.offset));
}

// 2-D view used by the elementwise kernels: rank 0 is 1x1, rank 1 is nx1.
struct View2 {
    StagedValue rows, cols, base;
    int64_t rs = 0, cs = 0;
};

inline View2 view2(IrGraph& g, const Tensor& t) {
    View2 v;
    v.base = base_index(g, t);
    switch (t.rank()) {
        case 0:
            v.rows = g.i64(1);
            v.cols = g.i64(1);
            break;
        case 1:
            v.rows = dim(g, t, 0);
            v.cols = g.i64(1);
            v.rs = t.strides[0];
            break;
        default:
            v.rows = dim(g, t, 0);
            v.cols = dim(g, t, 1);
            v.rs = t.strides[0];
            v.cs = t.strides[1];
    }
    return v;
}

inline StagedValue view_index(IrGraph& g, const View2& v, StagedValue i, StagedValue j) {
    return g.add(g.add(v.base, g.mul(i, g.i64(v.rs))), g.mul(j, g.i64(v.cs)));
}

// Fresh contiguous zero-filled tensor. `rows` supplies the run-time extent
// when shape[0] is kDynamic.
inline Tensor alloc(IrGraph& g, std::vector<int64_t> shape, StagedValue rows = StagedValue::unit()) {
    check_shape(shape, true, "alloc");
    Tensor t;
    t.shape = std::move(shape);
    t.strides = row_major_strides(t.shape);
    if (t.dynamic()) {
        if (rows.is_unit() || rows.type != SType::i64())
            throw StagingError("alloc: a run-time extent needs an i64 row count");
        t.strides[0] = t.row_width();
        t.rows = rows;
    } else if (t.rank() >= 1) {
        t.rows = g.i64(t.shape[0]);
    }
    t.data = g.array_new(Kind::Float64, numel(g, t));
    return t;
}

// Array allocation is zero-initialized, so zeros is a bare allocation.
inline Tensor zeros(IrGraph& g, std::vector<int64_t> shape) {
    check_shape(shape, false, "zeros");
    return alloc(g, std::move(shape));
}

inline Tensor from_literals(IrGraph& g, std::vector<int64_t> shape, const std::vector<double>& values) {
    check_shape(shape, false, "from_literals");
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    if (n != static_cast<int64_t>(values.size())) {
        Tensor probe;
        probe.shape = shape;
        throw StagingError("from_literals: shape " + probe.shape_str() + " needs " + std::to_string(n) +
                           " values, got " + std::to_string(values.size()));
    }
    std::vector<Literal> lits(values.begin(), values.end());
    Tensor t;
    t.shape = std::move(shape);
    t.strides = row_major_strides(t.shape);
    if (t.rank() >= 1) t.rows = g.i64(t.shape[0]);
    t.data = g.array_lit(Kind::Float64, lits);
    return t;
}

// Wraps an existing buffer without copying.
inline Tensor view(IrGraph& g, StagedValue data, std::vector<int64_t> shape, std::vector<int64_t> strides,
                   int64_t offset = 0, StagedValue rows = StagedValue::unit()) {
    check_shape(shape, true, "view");
    if (data.type != SType::array(Kind::Float64) && data.type != SType::vec(Kind::Float64))
        throw StagingError("view: tensor storage must be a float64 buffer, got " + data.type.str());
    if (strides.size() != shape.size()) throw StagingError("view: one stride per dimension is required");
    Tensor t;
    t.data = data;
    t.offset = offset;
    t.shape = std::move(shape);
    t.strides = std::move(strides);
    if (t.dynamic()) {
        if (rows.is_unit()) throw StagingError("view: a run-time extent needs a row count");
        t.rows = rows;
    } else if (t.rank() >= 1) {
        t.rows = g.i64(t.shape[0]);
    }
    return t;
}

// Rows [start, start + n) of a tensor, as a view with a run-time extent.
inline Tensor row_slice(IrGraph& g, const Tensor& t, StagedValue start, StagedValue n) {
    if (t.rank() == 0) throw StagingError("row_slice: scalar tensor");
    Tensor v = t;
    v.shape[0] = kDynamic;
    v.rows = n;
    StagedValue shift = g.mul(start, g.i64(t.strides[0]));
    v.dyn_offset = t.dyn_offset.is_unit() ? shift : g.add(t.dyn_offset, shift);
    v.id = -1;
    return v;
}

// Staged read of element (i) or (i, j).
inline StagedValue at(IrGraph& g, const Tensor& t, StagedValue i, StagedValue j) {
    View2 v = view2(g, t);
    return g.load(t.data, view_index(g, v, i, j));
}
inline StagedValue at(IrGraph& g, const Tensor& t, int64_t i, int64_t j = 0) { return at(g, t, g.i64(i), g.i64(j)); }

// Prints one output row per tensor row.
inline void print_tensor(IrGraph& g, const Tensor& t) {
    View2 v = view2(g, t);
    if (t.rank() == 2) {
        int64_t cols = t.shape[1];
        g.kernel_loop(v.rows, [&](StagedValue i) {
            std::vector<StagedValue> cells;
            for (int64_t j = 0; j < cols; ++j) cells.push_back(g.load(t.data, view_index(g, v, i, g.i64(j))));
            g.print_row(cells);
        });
    } else {
        std::vector<StagedValue> cells;
        if (t.rank() == 0) {
            cells.push_back(at(g, t, 0));
        } else if (t.dynamic()) {
            g.kernel_loop(v.rows, [&](StagedValue i) { g.print_row({g.load(t.data, view_index(g, v, i, g.i64(0)))}); });
            return;
        } else {
            for (int64_t i = 0; i < t.shape[0]; ++i) cells.push_back(at(g, t, i));
        }
        g.print_row(cells);
    }
}

}  // namespace unistage::tensor
