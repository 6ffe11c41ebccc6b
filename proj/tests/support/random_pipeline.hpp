#pragma once

// Turns a generated RandomPlan into CSV files plus a PipelineSpec, and runs
// it through the library on either backend.

#include "support/helpers.hpp"
#include "support/reference.hpp"
#include "unistage/pipeline/run.hpp"

namespace testsupport {

inline unistage::pipeline::PipelineSpec spec_for(const RandomPlan& rp, const TempDir& dir, const std::string& prefix,
                                                  unistage::boundary::UdfMode mode = unistage::boundary::UdfMode::Scalar,
                                                  unistage::boundary::BatchConfig batch = {}) {
    using namespace unistage;
    pipeline::PipelineSpec s;
    for (auto& name : rp.table_order) {
        const RefTable& t = rp.ctx.tables.at(name);
        rel::InputDecl d;
        d.name = name;
        d.path = dir.write(prefix + name + ".csv", to_csv(t));
        for (std::size_t i = 0; i < t.names.size(); ++i) d.schema.add(t.names[i], t.types[i]);
        s.inputs.push_back(std::move(d));
    }
    s.plan = rp.plan;
    for (auto& [name, wb] : rp.ctx.dot_udfs) {
        pipeline::UdfSpec u;
        u.name = name;
        u.model = pipeline::ModelKind::DotProduct;
        u.weights = wb.first;
        u.bias = wb.second;
        u.mode = mode;
        u.batch = batch;
        s.udfs.push_back(std::move(u));
    }
    return s;
}

inline unistage::pipeline::PipelineResult run_spec(const unistage::pipeline::PipelineSpec& s,
                                                   unistage::pipeline::Backend be,
                                                   const unistage::ToolchainConfig& tc = quick_toolchain()) {
    unistage::pipeline::RunOptions o;
    o.backend = be;
    o.toolchain = tc;
    return unistage::pipeline::run_pipeline(s, o);
}

}  // namespace testsupport
