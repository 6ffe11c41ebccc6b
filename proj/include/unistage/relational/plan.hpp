#pragma once

// Logical plans: a tree description of a query that compiles to a tree of
// push operators. UDF nodes are resolved through a caller-supplied hook so
// the relational layer stays independent of the model code.

#include <filesystem>
#include <functional>

#include "unistage/relational/operators.hpp"

namespace unistage::rel {

enum class PlanKind { Scan, Filter, Project, Join, GroupBy, Udf };

inline const char* plan_kind_name(PlanKind k) {
    switch (k) {
        case PlanKind::Scan: return "scan";
        case PlanKind::Filter: return "filter";
        case PlanKind::Project: return "project";
        case PlanKind::Join: return "join";
        case PlanKind::GroupBy: return "group_by";
        case PlanKind::Udf: return "udf";
    }
    return "?";
}

struct PlanNode;
using PlanPtr = std::shared_ptr<PlanNode>;

struct PlanNode {
    PlanKind kind = PlanKind::Scan;
    std::vector<PlanPtr> children;  // join: left, right
    std::string input;              // scan
    ExprPtr pred;                   // filter
    std::vector<NamedExpr> exprs;   // project
    std::vector<std::string> left_keys, right_keys;  // join
    std::vector<std::string> keys;  // group_by
    std::vector<Aggregate> aggs;    // group_by
    std::string udf;                // udf name
    std::vector<std::string> args;  // udf argument columns
    std::string output;             // udf result column

    const PlanPtr& child(std::size_t i = 0) const {
        if (i >= children.size())
            throw StagingError(std::string(plan_kind_name(kind)) + " plan node is missing input " + std::to_string(i));
        return children[i];
    }
};

inline PlanPtr plan_scan(std::string input) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::Scan;
    p->input = std::move(input);
    return p;
}
inline PlanPtr plan_filter(PlanPtr child, ExprPtr pred) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::Filter;
    p->children = {std::move(child)};
    p->pred = std::move(pred);
    return p;
}
inline PlanPtr plan_project(PlanPtr child, std::vector<NamedExpr> exprs) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::Project;
    p->children = {std::move(child)};
    p->exprs = std::move(exprs);
    return p;
}
inline PlanPtr plan_join(PlanPtr left, PlanPtr right, std::vector<std::string> lkeys, std::vector<std::string> rkeys) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::Join;
    p->children = {std::move(left), std::move(right)};
    p->left_keys = std::move(lkeys);
    p->right_keys = std::move(rkeys);
    return p;
}
inline PlanPtr plan_group_by(PlanPtr child, std::vector<std::string> keys, std::vector<Aggregate> aggs) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::GroupBy;
    p->children = {std::move(child)};
    p->keys = std::move(keys);
    p->aggs = std::move(aggs);
    return p;
}
inline PlanPtr plan_udf(PlanPtr child, std::string name, std::vector<std::string> args, std::string output) {
    auto p = std::make_shared<PlanNode>();
    p->kind = PlanKind::Udf;
    p->children = {std::move(child)};
    p->udf = std::move(name);
    p->args = std::move(args);
    p->output = std::move(output);
    return p;
}

inline int plan_depth(const PlanPtr& p) {
    int d = 0;
    for (auto& c : p->children) d = std::max(d, plan_depth(c));
    return d + 1;
}

// Collects every node of the given kind, children before parents.
inline void plan_collect(const PlanPtr& p, PlanKind kind, std::vector<PlanPtr>& out) {
    for (auto& c : p->children) plan_collect(c, kind, out);
    if (p->kind == kind) out.push_back(p);
}

// Copy of the plan with node `target` replaced by `replacement`.
inline PlanPtr plan_replace(const PlanPtr& p, const PlanNode* target, const PlanPtr& replacement) {
    if (p.get() == target) return replacement;
    auto copy = std::make_shared<PlanNode>(*p);
    for (auto& c : copy->children) c = plan_replace(c, target, replacement);
    return copy;
}

struct InputDecl {
    std::string name;
    std::string path;
    RelSchema schema;
    bool header = true;
};

using UdfHook = std::function<OpPtr(OpPtr child, const PlanNode& node)>;

struct PlanContext {
    std::vector<InputDecl> inputs;  // position = csv-load input index
    std::shared_ptr<StringDictionary> dict = std::make_shared<StringDictionary>();
    UdfHook udf;

    std::size_t input_index(const std::string& name) const {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            if (inputs[i].name == name) return i;
        throw StagingError("plan scans undeclared input '" + name + "'");
    }
};

inline OpPtr compile_plan(const PlanPtr& p, PlanContext& ctx) {
    switch (p->kind) {
        case PlanKind::Scan: {
            std::size_t i = ctx.input_index(p->input);
            const InputDecl& in = ctx.inputs[i];
            return std::make_shared<Scan>(in.path, in.schema, in.header, static_cast<int64_t>(i), ctx.dict);
        }
        case PlanKind::Filter: {
            if (!p->pred) throw StagingError("filter plan node has no predicate");
            return std::make_shared<Filter>(compile_plan(p->child(), ctx), p->pred);
        }
        case PlanKind::Project: return std::make_shared<Project>(compile_plan(p->child(), ctx), p->exprs);
        case PlanKind::Join:
            return std::make_shared<HashJoin>(compile_plan(p->child(0), ctx), compile_plan(p->child(1), ctx),
                                              p->left_keys, p->right_keys);
        case PlanKind::GroupBy: return std::make_shared<GroupByAgg>(compile_plan(p->child(), ctx), p->keys, p->aggs);
        case PlanKind::Udf: {
            if (!ctx.udf) throw StagingError("plan uses UDF '" + p->udf + "' but no UDFs are available");
            return ctx.udf(compile_plan(p->child(), ctx), *p);
        }
    }
    throw InternalError("unknown plan kind");
}

}  // namespace unistage::rel
