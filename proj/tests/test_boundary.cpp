#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "support/helpers.hpp"
#include "unistage/boundary/udf.hpp"

using namespace unistage;
using namespace unistage::rel;
using namespace unistage::boundary;
using testsupport::count_ops;
using testsupport::TempDir;

namespace {

using Lines = std::vector<std::string>;

std::size_t allocations(const IrGraph& g) { return count_ops(g, Op::ArrayNew) + count_ops(g, Op::VecNew); }

RelSchema float_schema(const std::vector<std::string>& names) {
    RelSchema s;
    for (auto& n : names) s.add(n, FieldType::Float64);
    return s;
}

// id,a,b,c with float a,b and int c
std::string write_rows(const TempDir& d, const std::string& name, int64_t rows, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::ostringstream o;
    o.precision(17);
    o << "id,a,b,c\n";
    for (int64_t i = 0; i < rows; ++i) o << i << "," << u(rng) << "," << u(rng) << "," << (i % 5) - 2 << "\n";
    return d.write(name, o.str());
}

RelSchema row_schema() {
    return RelSchema{{{"id", FieldType::Int64}, {"a", FieldType::Float64}, {"b", FieldType::Float64}, {"c", FieldType::Int64}}};
}

UdfRegistry mlp_registry() {
    UdfRegistry reg;
    reg.add(mlp3_udf("m", tensor::init_mlp3({3, 5, 4, 1}, 11), tensor::Head::Classify));
    return reg;
}

OpPtr with_mode(OpPtr child, const UdfRegistry& reg, UdfMode mode, BatchConfig cfg) {
    std::vector<std::string> args{"a", "b", "c"};
    switch (mode) {
        case UdfMode::Scalar: return apply_udf_scalar(child, reg, "m", args, "p");
        case UdfMode::Vectorized: return apply_udf_vectorized(child, reg, "m", args, "p", cfg);
        case UdfMode::Pooled: return apply_udf_pooled(child, reg, "m", args, "p", cfg);
    }
    return nullptr;
}

}  // namespace

TEST(Convert, PackedGroupAliasesWithoutAllocation) {
    TempDir d("conv");
    std::string p = d.write("t.csv", "x,y,z\n1,2,3\n4,5,6\n");
    IrGraph g;
    Scan scan(p, float_schema({"x", "y", "z"}));
    MaterializeOptions mo;
    mo.packed_groups = {{"x", "y"}};
    ColumnBuffer buf = materialize(g, scan, mo);
    const std::size_t before = allocations(g), loops = count_ops(g, Op::Loop);
    ConversionReport rep;
    tensor::Tensor t = buffer_to_tensor(g, buf, {"x", "y"}, &rep);
    EXPECT_TRUE(rep.aliased);
    EXPECT_TRUE(rep.warnings.empty());
    EXPECT_EQ(allocations(g), before);
    EXPECT_EQ(count_ops(g, Op::Loop), loops);
    tensor::print_tensor(g, t);
    auto res = testsupport::run_both(g);
    EXPECT_EQ(res.interp.lines, (Lines{"1,2", "4,5"}));
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
}

TEST(Convert, SingleColumnAliases) {
    TempDir d("conv");
    std::string p = d.write("t.csv", "x,y\n1,2\n4,5\n");
    IrGraph g;
    Scan scan(p, float_schema({"x", "y"}));
    ColumnBuffer buf = materialize(g, scan);
    const std::size_t before = allocations(g);
    ConversionReport rep;
    tensor::Tensor t = buffer_to_tensor(g, buf, {"y"}, &rep);
    EXPECT_TRUE(rep.aliased);
    EXPECT_EQ(allocations(g), before);
    tensor::print_tensor(g, t);
    EXPECT_EQ(testsupport::run_both(g).interp.lines, (Lines{"2", "5"}));
}

TEST(Convert, NonContiguousColumnsGatherWithAWarning) {
    TempDir d("conv");
    std::string p = d.write("t.csv", "x,y,z\n1,2,3\n4,5,6\n");
    for (bool packed : {false, true}) {
        IrGraph g;
        Scan scan(p, float_schema({"x", "y", "z"}));
        MaterializeOptions mo;
        if (packed) mo.packed_groups = {{"x", "y", "z"}};
        ColumnBuffer buf = materialize(g, scan, mo);
        const std::size_t before = allocations(g), loops = count_ops(g, Op::Loop);
        ConversionReport rep;
        // reversed order defeats aliasing even inside a packed group
        tensor::Tensor t = buffer_to_tensor(g, buf, {"z", "x"}, &rep);
        EXPECT_FALSE(rep.aliased);
        EXPECT_EQ(rep.warnings.size(), 1u);
        EXPECT_EQ(allocations(g), before + 1);
        EXPECT_EQ(count_ops(g, Op::Loop), loops + 1);
        tensor::print_tensor(g, t);
        auto res = testsupport::run_both(g);
        EXPECT_EQ(res.interp.lines, (Lines{"3,1", "6,4"}));
        if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
    }
}

TEST(Convert, NonFloatFieldsAreRejected) {
    TempDir d("conv");
    std::string p = d.write("t.csv", "x,n\n1.5,2\n");
    IrGraph g;
    Scan scan(p, RelSchema{{{"x", FieldType::Float64}, {"n", FieldType::Int64}}});
    ColumnBuffer buf = materialize(g, scan);
    EXPECT_THROW(buffer_to_tensor(g, buf, {"n"}), StagingError);
    EXPECT_THROW(buffer_to_tensor(g, buf, {}), StagingError);
    EXPECT_THROW(buffer_to_tensor(g, buf, {"missing"}), StagingError);
}

TEST(Convert, TensorToValue) {
    IrGraph g;
    g.print(tensor_to_value(g, tensor::from_literals(g, {1, 1}, {0.7})));
    EXPECT_EQ(interpret(optimize(g)).lines, Lines{"0.69999999999999996"});
    IrGraph h;
    EXPECT_THROW(tensor_to_value(h, tensor::from_literals(h, {3, 1}, {1, 2, 3})), StagingError);
    EXPECT_THROW(tensor_to_value(h, tensor::from_literals(h, {1, 2}, {1, 2}), h.i64(0)), StagingError);
}

TEST(Registry, LookupAndDuplicates) {
    UdfRegistry reg;
    reg.add(identity_udf("id"));
    EXPECT_TRUE(reg.contains("id"));
    EXPECT_THROW(reg.add(identity_udf("id")), StagingError);
    EXPECT_THROW(reg.get("nope"), StagingError);
    EXPECT_THROW(reg.add(identity_udf("")), StagingError);
    EXPECT_THROW(reg.add(mlp3_udf("wide", tensor::init_mlp3({2, 3, 3, 2}, 1), tensor::Head::Regress)), StagingError);
    EXPECT_EQ(reg.names(), Lines{"id"});
}

TEST(Udf, ConfigurationIsValidated) {
    TempDir d("udf");
    std::string p = write_rows(d, "t.csv", 3, 1);
    UdfRegistry reg = mlp_registry();
    auto scan = std::make_shared<Scan>(p, row_schema());
    BatchConfig cfg;
    cfg.batch_size = 0;
    EXPECT_THROW(apply_udf_vectorized(scan, reg, "m", {"a", "b", "c"}, "p", cfg), StagingError);
    cfg = {};
    EXPECT_THROW(apply_udf_pooled(scan, reg, "m", {"a", "b", "c"}, "p", cfg), StagingError);
    cfg.pool_workers = 3;
    cfg.queue_capacity = 5;
    EXPECT_THROW(apply_udf_pooled(scan, reg, "m", {"a", "b", "c"}, "p", cfg), StagingError);
    EXPECT_THROW(apply_udf_scalar(scan, reg, "m", {"a", "b"}, "p"), StagingError);
    EXPECT_THROW(apply_udf_scalar(scan, reg, "m", {"a", "b", "zz"}, "p"), StagingError);
}

TEST(Udf, IdentityAppendsTheArgument) {
    TempDir d("udf");
    std::string p = d.write("t.csv", "k,v\n1,0.5\n2,-1.25\n");
    UdfRegistry reg;
    reg.add(identity_udf("id"));
    for (UdfMode mode : {UdfMode::Scalar, UdfMode::Vectorized}) {
        IrGraph g;
        auto scan = std::make_shared<Scan>(p, RelSchema{{{"k", FieldType::Int64}, {"v", FieldType::Float64}}});
        BatchConfig cfg;
        cfg.batch_size = 2;
        OpPtr u = mode == UdfMode::Scalar ? apply_udf_scalar(scan, reg, "id", {"k"}, "out")
                                          : apply_udf_vectorized(scan, reg, "id", {"v"}, "out", cfg);
        EXPECT_EQ(u->schema().size(), 3u);
        print_rows(g, *u);
        EXPECT_EQ(interpret(optimize(g)).lines,
                  mode == UdfMode::Scalar ? (Lines{"1,0.5,1", "2,-1.25,2"}) : (Lines{"1,0.5,0.5", "2,-1.25,-1.25"}));
    }
}

TEST(Udf, ScalarModeIsInlined) {
    TempDir d("udf");
    std::string p = write_rows(d, "t.csv", 4, 2);
    UdfRegistry reg = mlp_registry();
    IrGraph g;
    print_rows(g, *with_mode(std::make_shared<Scan>(p, row_schema()), reg, UdfMode::Scalar, {}));
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Call), 0u);
    EXPECT_EQ(count_ops(o, Op::FuncDef), 0u);
    EXPECT_EQ(interpret(o).counter(kUdfCallCounter), 4);
}

TEST(Udf, VectorizedCallsOncePerBatch) {
    TempDir d("udf");
    for (int64_t rows : {0, 1, 4, 5}) {
        std::string p = write_rows(d, "t" + std::to_string(rows) + ".csv", rows, 3);
        UdfRegistry reg = mlp_registry();
        IrGraph g;
        BatchConfig cfg;
        cfg.batch_size = 2;
        print_rows(g, *with_mode(std::make_shared<Scan>(p, row_schema()), reg, UdfMode::Vectorized, cfg));
        auto res = testsupport::run_both(g);
        EXPECT_EQ(res.interp.counter(kUdfCallCounter), (rows + 1) / 2) << rows;
        if (res.have_compiled) {
            EXPECT_EQ(res.compiled.counter(kUdfCallCounter), (rows + 1) / 2);
            EXPECT_EQ(res.compiled.lines, res.interp.lines);
        }
    }
}

// Every batch size and worker count reproduces the scalar output in order.
TEST(Udf, AllModesAgreeInOrder) {
    TempDir d("udf");
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 3; ++trial) {
        int64_t rows = std::uniform_int_distribution<int64_t>(0, 300)(rng);
        std::string p = write_rows(d, "t" + std::to_string(trial) + ".csv", rows, rng());
        UdfRegistry reg = mlp_registry();
        auto run = [&](UdfMode mode, BatchConfig cfg) {
            IrGraph g;
            print_rows(g, *with_mode(std::make_shared<Scan>(p, row_schema()), reg, mode, cfg));
            return testsupport::run_both(g);
        };
        auto ref = run(UdfMode::Scalar, {});
        ASSERT_EQ(ref.interp.lines.size(), static_cast<std::size_t>(rows));
        if (ref.have_compiled) ASSERT_EQ(ref.compiled.lines, ref.interp.lines);
        for (int64_t bs : {1, 2, 7, 1024}) {
            BatchConfig cfg;
            cfg.batch_size = bs;
            auto r = run(UdfMode::Vectorized, cfg);
            EXPECT_EQ(r.interp.lines, ref.interp.lines) << "batch " << bs;
            if (r.have_compiled) EXPECT_EQ(r.compiled.lines, ref.interp.lines) << "batch " << bs;
        }
        for (int64_t workers : {1, 2, 4}) {
            BatchConfig cfg;
            cfg.batch_size = 16;
            cfg.pool_workers = workers;
            cfg.queue_capacity = 2 * workers;
            auto r = run(UdfMode::Pooled, cfg);
            EXPECT_EQ(r.interp.lines, ref.interp.lines) << "workers " << workers;
            if (r.have_compiled) EXPECT_EQ(r.compiled.lines, ref.interp.lines) << "workers " << workers;
        }
    }
}

TEST(Udf, PooledModeStagesOneBatchFunction) {
    TempDir d("udf");
    std::string p = write_rows(d, "t.csv", 10, 4);
    UdfRegistry reg = mlp_registry();
    IrGraph g;
    BatchConfig cfg;
    cfg.batch_size = 3;
    cfg.pool_workers = 2;
    print_rows(g, *with_mode(std::make_shared<Scan>(p, row_schema()), reg, UdfMode::Pooled, cfg));
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::FuncDef), 1u);
    EXPECT_EQ(count_ops(o, Op::PoolNew), 1u);
    EXPECT_EQ(interpret(o).counter(kUdfCallCounter), 4);
    GeneratedProgram prog = emit(o);
    EXPECT_TRUE(prog.uses_threads);
}

TEST(Queue, BackpressureBlocksProducers) {
    runtime::BoundedQueue<int> q(2);
    std::vector<int> got;
    std::thread consumer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        while (auto v = q.pop()) got.push_back(*v);
    });
    for (int i = 0; i < 50; ++i) q.push(i);
    q.close();
    consumer.join();
    ASSERT_EQ(got.size(), 50u);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(got[static_cast<std::size_t>(i)], i);
    EXPECT_GT(q.blocked_pushes(), 0u);
    EXPECT_LE(q.max_depth(), 2u);
    EXPECT_THROW(q.push(1), RunError);
    EXPECT_THROW(runtime::BoundedQueue<int>(0), Error);
}
