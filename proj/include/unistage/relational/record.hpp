#pragma once

#include <functional>
#include <memory>

#include "unistage/relational/schema.hpp"

namespace unistage::rel {

// Row accessor handed to a downstream callback. Values are staged scalars
// valid only inside the scope of the callback that produced them.
class Record {
public:
    Record(const IrGraph& g, const RelSchema& schema, std::vector<StagedValue> values, std::vector<StagedValue> dicts)
        : g_(&g), schema_(&schema), values_(std::move(values)), dicts_(std::move(dicts)), scope_(g.current_scope()) {
        if (values_.size() != schema_->size()) throw InternalError("record arity does not match its schema");
        dicts_.resize(values_.size(), StagedValue::unit());
    }

    const RelSchema& schema() const { return *schema_; }
    std::size_t size() const { return values_.size(); }

    StagedValue value(std::size_t i) const {
        check_scope();
        return values_.at(i);
    }
    StagedValue value(const std::string& name) const { return value(schema_->index_of(name)); }
    StagedValue dict(std::size_t i) const { return dicts_.at(i); }
    FieldType type(std::size_t i) const { return (*schema_)[i].type; }
    const std::vector<StagedValue>& values() const {
        check_scope();
        return values_;
    }
    const std::vector<StagedValue>& dicts() const { return dicts_; }

private:
    const IrGraph* g_;
    const RelSchema* schema_;
    std::vector<StagedValue> values_;
    std::vector<StagedValue> dicts_;
    NodeId scope_;

    void check_scope() const {
        if (!g_->scope_within(g_->current_scope(), scope_))
            throw StagingError("record used outside the callback that produced it");
    }
};

using Callback = std::function<void(const Record&)>;

}  // namespace unistage::rel
