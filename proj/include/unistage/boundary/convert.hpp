#pragma once

// Conversions between relational buffers and tensors. On an aliasable
// layout a conversion is a view over the same staged buffer: no allocation
// and no copy loop is added to the graph.

#include <string>
#include <vector>

#include "unistage/relational/schema.hpp"
#include "unistage/tensor/tensor.hpp"

namespace unistage::boundary {

using rel::ColumnBuffer;
using rel::FieldType;
using tensor::Tensor;

struct ConversionReport {
    bool aliased = true;
    std::vector<std::string> warnings;
};

// Tensor[rows, |fields|] over the listed float64 columns. Aliases when there
// is a single column, or when the columns are consecutive members of one
// packed group in the listed order; otherwise stages one gather loop.
inline Tensor buffer_to_tensor(IrGraph& g, const ColumnBuffer& b, const std::vector<std::string>& fields,
                               ConversionReport* report = nullptr) {
    if (fields.empty()) throw StagingError("buffer_to_tensor: no fields listed");
    std::vector<std::size_t> idx;
    for (auto& name : fields) {
        std::size_t i = b.schema.index_of(name);
        if (b.schema[i].type != FieldType::Float64)
            throw StagingError("buffer_to_tensor: field '" + name + "' is " + rel::field_type_name(b.schema[i].type) +
                               ", expected float64");
        idx.push_back(i);
    }
    const int64_t width = static_cast<int64_t>(fields.size());
    const rel::ColumnStorage& first = b.columns.at(idx[0]);
    bool alias = width == 1;
    if (!alias && first.group >= 0 && first.stride == width) {
        alias = true;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const rel::ColumnStorage& c = b.columns.at(idx[k]);
            if (c.group != first.group || c.data.node != first.data.node || c.offset != first.offset + static_cast<int64_t>(k))
                alias = false;
        }
    }
    if (alias) {
        if (report) report->aliased = true;
        return tensor::view(g, first.data, {tensor::kDynamic, width}, {first.stride, 1}, first.offset, b.rows);
    }
    if (report) {
        report->aliased = false;
        report->warnings.push_back("buffer_to_tensor: columns are not laid out contiguously; staging a gather copy");
    }
    Tensor out = tensor::alloc(g, {tensor::kDynamic, width}, b.rows);
    g.kernel_loop(b.rows, [&](StagedValue r) {
        for (int64_t k = 0; k < width; ++k)
            g.store(out.data, g.add(g.mul(r, g.i64(width)), g.i64(k)), b.load(g, idx[static_cast<std::size_t>(k)], r));
    });
    return out;
}

// Scalar read of a one-element tensor, or of row `row` of a [batch, 1]
// tensor inside a vectorized context. Never copies.
inline StagedValue tensor_to_value(IrGraph& g, const Tensor& t, StagedValue row = StagedValue::unit()) {
    if (t.rank() > 2) throw StagingError("tensor_to_value: rank " + std::to_string(t.rank()) + " tensor");
    if (row.is_unit()) {
        bool one = t.rank() == 0 || (!t.dynamic() && t.row_width() == 1 && t.shape[0] == 1);
        if (!one) throw StagingError("tensor_to_value: tensor " + t.shape_str() + " is not a single value");
        if (t.rank() == 0) return g.load(t.data, tensor::base_index(g, t));
        return tensor::at(g, t, 0);
    }
    if (t.rank() != 2 || t.shape[1] != 1)
        throw StagingError("tensor_to_value: batched results must have shape [batch,1], got " + t.shape_str());
    return tensor::at(g, t, row, g.i64(0));
}

}  // namespace unistage::boundary
