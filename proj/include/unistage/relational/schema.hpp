#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "unistage/core/graph.hpp"

namespace unistage::rel {

enum class FieldType { Int64, Float64, StringDict };

inline const char* field_type_name(FieldType t) {
    switch (t) {
        case FieldType::Int64: return "int64";
        case FieldType::Float64: return "float64";
        case FieldType::StringDict: return "string";
    }
    return "?";
}

inline FieldType parse_field_type(const std::string& s) {
    if (s == "int64" || s == "i64") return FieldType::Int64;
    if (s == "float64" || s == "f64") return FieldType::Float64;
    if (s == "string" || s == "string-dict" || s == "dict") return FieldType::StringDict;
    throw StagingError("unknown field type '" + s + "'");
}

// Storage representation of a field value in the IR.
inline SType storage_type(FieldType t) { return t == FieldType::Float64 ? SType::f64() : SType::i64(); }

struct Field {
    std::string name;
    FieldType type = FieldType::Int64;
    friend bool operator==(const Field&, const Field&) = default;
};

// Ordered, uniquely named fields.
class RelSchema {
public:
    RelSchema() = default;
    RelSchema(std::vector<Field> fields) {  // NOLINT: implicit from brace lists
        for (auto& f : fields) add(f.name, f.type);
    }

    void add(const std::string& name, FieldType type) {
        if (name.empty()) throw StagingError("field name must not be empty");
        if (index_.count(name)) throw StagingError("duplicate field name '" + name + "'");
        index_[name] = fields_.size();
        fields_.push_back({name, type});
    }

    std::size_t size() const { return fields_.size(); }
    bool empty() const { return fields_.empty(); }
    const Field& operator[](std::size_t i) const { return fields_.at(i); }
    const std::vector<Field>& fields() const { return fields_; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw StagingError("unknown field '" + name + "'");
        return it->second;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> v;
        for (auto& f : fields_) v.push_back(f.name);
        return v;
    }

    friend bool operator==(const RelSchema& a, const RelSchema& b) { return a.fields_ == b.fields_; }

private:
    std::vector<Field> fields_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Current-stage string table shared by every string column of one program,
// so dictionary codes compare equal across inputs. Frozen once staged.
class StringDictionary {
public:
    int64_t add(const std::string& s) {
        if (auto it = index_.find(s); it != index_.end()) return it->second;
        if (node_ != kNoNode) throw InternalError("string dictionary grown after it was staged");
        int64_t code = static_cast<int64_t>(entries_.size());
        entries_.push_back(s);
        index_[s] = code;
        return code;
    }
    // Code of `s`, or -1 when absent.
    int64_t code(const std::string& s) const {
        auto it = index_.find(s);
        return it == index_.end() ? -1 : it->second;
    }
    const std::vector<std::string>& entries() const { return entries_; }

    StagedValue node(IrGraph& g) {
        if (node_ == kNoNode) node_ = g.dict_new(entries_).node;
        return {node_, SType::dict()};
    }

private:
    std::vector<std::string> entries_;
    std::unordered_map<std::string, int64_t> index_;
    NodeId node_ = kNoNode;
};

// Storage of one column: element r lives at data[offset + r * stride].
// Columns of a packed group share one row-major buffer.
struct ColumnStorage {
    StagedValue data;
    int64_t offset = 0;
    int64_t stride = 1;
    int group = -1;  // packed group index, -1 for a standalone column
};

// Materialized relation. All columns have `rows` elements; string columns
// carry the dictionary that decodes their codes.
struct ColumnBuffer {
    RelSchema schema;
    std::vector<ColumnStorage> columns;
    std::vector<StagedValue> dicts;  // unit for non-string fields
    StagedValue rows;
    int64_t capacity = 1024;  // initial growable capacity, doubles on demand
    std::vector<std::vector<std::string>> groups;

    StagedValue load(IrGraph& g, std::size_t field, StagedValue row) const {
        const ColumnStorage& c = columns.at(field);
        StagedValue idx = g.add(g.mul(row, g.i64(c.stride)), g.i64(c.offset));
        return g.load(c.data, idx);
    }
};

}  // namespace unistage::rel
