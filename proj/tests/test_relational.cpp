#include <gtest/gtest.h>

#include "support/random_pipeline.hpp"

using namespace unistage;
using namespace unistage::rel;
using testsupport::count_ops;
using testsupport::count_root_ops;
using testsupport::TempDir;

namespace {

RelSchema ints(std::initializer_list<const char*> names) {
    RelSchema s;
    for (auto* n : names) s.add(n, FieldType::Int64);
    return s;
}

// Stages `make(g)` with its rows printed and runs it on both backends.
template <typename F>
std::vector<std::string> rows_of(F&& make) {
    IrGraph g;
    OpPtr op = make();
    print_rows(g, *op);
    auto r = testsupport::run_both(g);
    if (r.have_compiled) EXPECT_EQ(r.compiled.lines, r.interp.lines);
    return r.interp.lines;
}

using Lines = std::vector<std::string>;

}  // namespace

TEST(Expr, ParsesAndPrints) {
    ExprPtr e = parse_expr("a + 2 * b > 3.5 and not (s == 'x')");
    EXPECT_EQ(e->kind, Expr::Kind::Binary);
    EXPECT_EQ(e->name, "and");
    ExprPtr back = parse_expr(rel::to_string(*e));
    EXPECT_TRUE(*back == *e);
    EXPECT_TRUE(*parse_expr("-x") == *unary("-", col("x")));
    EXPECT_TRUE(*parse_expr("if(a < 1, 1.0, float(b))") ==
                *call("if", {binary("<", col("a"), lit_i(1)), lit_f(1.0), call("float", {col("b")})}));
}

TEST(Expr, SyntaxErrors) {
    for (const char* bad : {"", "a +", "(a", "a b", "'unterminated", "f(,)", "1 ==", "a $ b"})
        EXPECT_THROW(parse_expr(bad), StagingError) << bad;
}

TEST(Expr, TypeInference) {
    RelSchema s{{{"i", FieldType::Int64}, {"f", FieldType::Float64}, {"s", FieldType::StringDict}}};
    EXPECT_EQ(infer_type(*parse_expr("i + 1"), s), ExprType::Int64);
    EXPECT_EQ(infer_type(*parse_expr("i + f"), s), ExprType::Float64);
    EXPECT_EQ(infer_type(*parse_expr("s == 'a'"), s), ExprType::Bool);
    EXPECT_EQ(infer_type(*parse_expr("s"), s), ExprType::Dict);
    EXPECT_THROW(infer_type(*parse_expr("f % 2"), s), StagingError);
    EXPECT_THROW(infer_type(*parse_expr("s < 'a'"), s), StagingError);
    EXPECT_THROW(infer_type(*parse_expr("i and i"), s), StagingError);
    EXPECT_THROW(infer_type(*parse_expr("missing + 1"), s), StagingError);
    EXPECT_THROW(infer_type(*parse_expr("nosuchfn(i)"), s), StagingError);
}

TEST(Scan, LoopCountIsResolvedAtRunTime) {
    TempDir d("scan");
    std::string p = d.write("t.csv", "a,b\n1,0.5\n2,1.5\n3,2.5\n");
    IrGraph g;
    Scan scan(p, RelSchema{{{"a", FieldType::Int64}, {"b", FieldType::Float64}}});
    int callbacks = 0;
    scan.exec(g, [&](const Record& r) {
        ++callbacks;
        g.print_row(r.values());
    });
    EXPECT_EQ(callbacks, 1);  // staged once, executed per row
    EXPECT_EQ(count_ops(g, Op::Loop), 1u);
    auto r = testsupport::run_both(g);
    EXPECT_EQ(r.interp.lines, (Lines{"1,0.5", "2,1.5", "3,2.5"}));
    if (r.have_compiled) EXPECT_EQ(r.compiled.lines, r.interp.lines);
}

TEST(Scan, EmptyFile) {
    TempDir d("scan");
    std::string p = d.write("t.csv", "a,b\n");
    auto lines = rows_of([&] { return std::make_shared<Scan>(p, ints({"a", "b"})); });
    EXPECT_TRUE(lines.empty());
}

TEST(Scan, ParseErrorNamesTheRow) {
    TempDir d("scan");
    std::string p = d.write("t.csv", "a,b\n");
    std::string bad = d.write("bad.csv", "a,b\n");
    IrGraph g;
    Scan scan(p, RelSchema{{{"x", FieldType::Int64}, {"y", FieldType::Float64}}}, false);
    print_rows(g, scan);
    std::ofstream(bad) << "a,b\n";
    InterpretOptions io;
    io.input_paths[0] = bad;
    try {
        interpret(optimize(g), io);
        FAIL() << "expected a parse error";
    } catch (const RunError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
}

TEST(Filter, SelectsMatchingRows) {
    TempDir d("filter");
    std::string p = d.write("t.csv", "x\n3\n7\n");
    auto lines = rows_of([&] { return std::make_shared<Filter>(std::make_shared<Scan>(p, ints({"x"})), parse_expr("x > 5")); });
    EXPECT_EQ(lines, Lines{"7"});
}

TEST(Filter, ConstantPredicateFolds) {
    TempDir d("filter");
    std::string p = d.write("t.csv", "x\n3\n7\n");
    IrGraph g;
    Filter f(std::make_shared<Scan>(p, ints({"x"})), parse_expr("1 < 2"));
    print_rows(g, f);
    EXPECT_EQ(count_ops(g, Op::If), 0u);
    EXPECT_EQ(interpret(optimize(g)).lines, (Lines{"3", "7"}));
}

TEST(Filter, MissingFieldIsAStagingError) {
    TempDir d("filter");
    std::string p = d.write("t.csv", "x\n3\n");
    EXPECT_THROW(Filter(std::make_shared<Scan>(p, ints({"x"})), parse_expr("y > 1")), StagingError);
    EXPECT_THROW(Filter(std::make_shared<Scan>(p, ints({"x"})), parse_expr("x + 1")), StagingError);
}

TEST(Join, SingleMatch) {
    TempDir d("join");
    std::string r = d.write("r.csv", "k,v\n1,a\n2,b\n");
    std::string s = d.write("s.csv", "k,w\n2,x\n3,y\n");
    auto lines = rows_of([&] {
        auto dict = std::make_shared<StringDictionary>();
        RelSchema rs{{{"k", FieldType::Int64}, {"v", FieldType::StringDict}}};
        RelSchema ss{{{"k", FieldType::Int64}, {"w", FieldType::StringDict}}};
        return std::make_shared<HashJoin>(std::make_shared<Scan>(r, rs, true, 0, dict),
                                          std::make_shared<Scan>(s, ss, true, 1, dict), std::vector<std::string>{"k"},
                                          std::vector<std::string>{"k"});
    });
    EXPECT_EQ(lines, Lines{"2,b,2,x"});
}

TEST(Join, DuplicateLeftKeysKeepInsertionOrder) {
    TempDir d("join");
    std::string r = d.write("r.csv", "k,v\n2,b\n1,z\n2,c\n");
    std::string s = d.write("s.csv", "k,w\n2,x\n");
    auto lines = rows_of([&] {
        auto dict = std::make_shared<StringDictionary>();
        RelSchema rs{{{"k", FieldType::Int64}, {"v", FieldType::StringDict}}};
        RelSchema ss{{{"k", FieldType::Int64}, {"w", FieldType::StringDict}}};
        return std::make_shared<HashJoin>(std::make_shared<Scan>(r, rs, true, 0, dict),
                                          std::make_shared<Scan>(s, ss, true, 1, dict), std::vector<std::string>{"k"},
                                          std::vector<std::string>{"k"});
    });
    EXPECT_EQ(lines, (Lines{"2,b,2,x", "2,c,2,x"}));
}

TEST(Join, EmptyLeftStillStagesTheProbe) {
    TempDir d("join");
    std::string r = d.write("r.csv", "k\n");
    std::string s = d.write("s.csv", "k\n1\n2\n");
    IrGraph g;
    HashJoin j(std::make_shared<Scan>(r, ints({"k"}), true, 0), std::make_shared<Scan>(s, ints({"k"}), true, 1), {"k"},
               {"k"});
    EXPECT_EQ(j.schema().names(), (std::vector<std::string>{"k", "k_r"}));
    print_rows(g, j);
    EXPECT_GE(count_root_ops(optimize(g), Op::Loop), 2u);
    auto res = testsupport::run_both(g);
    EXPECT_TRUE(res.interp.lines.empty());
    if (res.have_compiled) EXPECT_TRUE(res.compiled.lines.empty());
}

TEST(Join, KeyTypeMismatchIsRejected) {
    TempDir d("join");
    std::string r = d.write("r.csv", "k\n1\n");
    std::string s = d.write("s.csv", "k\n1.0\n");
    EXPECT_THROW(HashJoin(std::make_shared<Scan>(r, ints({"k"})),
                          std::make_shared<Scan>(s, RelSchema{{{"k", FieldType::Float64}}}), {"k"}, {"k"}),
                 StagingError);
}

TEST(GroupBy, SumByKey) {
    TempDir d("group");
    std::string p = d.write("t.csv", "k,v\n1,10\n1,5\n2,7\n");
    auto lines = rows_of([&] {
        return std::make_shared<GroupByAgg>(std::make_shared<Scan>(p, ints({"k", "v"})), std::vector<std::string>{"k"},
                                            std::vector<Aggregate>{{AggFn::Sum, col("v"), "s"}});
    });
    EXPECT_EQ(lines, (Lines{"1,15", "2,7"}));
}

TEST(GroupBy, EmptyInputHasNoRows) {
    TempDir d("group");
    std::string p = d.write("t.csv", "k,v\n");
    auto lines = rows_of([&] {
        return std::make_shared<GroupByAgg>(std::make_shared<Scan>(p, ints({"k", "v"})), std::vector<std::string>{},
                                            std::vector<Aggregate>{{AggFn::Count, nullptr, "n"}});
    });
    EXPECT_TRUE(lines.empty());
}

TEST(GroupBy, AllAggregates) {
    TempDir d("group");
    std::string p = d.write("t.csv", "k,v\n1,2\n1,4\n2,-3\n");
    auto lines = rows_of([&] {
        return std::make_shared<GroupByAgg>(
            std::make_shared<Scan>(p, ints({"k", "v"})), std::vector<std::string>{"k"},
            std::vector<Aggregate>{{AggFn::Avg, col("v"), "a"},
                                   {AggFn::Count, nullptr, "n"},
                                   {AggFn::Min, col("v"), "lo"},
                                   {AggFn::Max, parse_expr("v * 2"), "hi"},
                                   {AggFn::Sum, parse_expr("float(v) / 4.0"), "q"}});
    });
    EXPECT_EQ(lines, (Lines{"1,3,2,2,8,1.5", "2,-3,1,-3,-6,-0.75"}));
}

TEST(GroupBy, StringKeysDecode) {
    TempDir d("group");
    std::string p = d.write("t.csv", "s,v\nb,1\na,2\nb,3\n");
    auto lines = rows_of([&] {
        RelSchema s{{{"s", FieldType::StringDict}, {"v", FieldType::Int64}}};
        return std::make_shared<GroupByAgg>(std::make_shared<Scan>(p, s), std::vector<std::string>{"s"},
                                            std::vector<Aggregate>{{AggFn::Sum, col("v"), "t"}});
    });
    EXPECT_EQ(lines, (Lines{"b,4", "a,2"}));
}

TEST(GroupBy, NonNumericAggregateIsRejected) {
    TempDir d("group");
    std::string p = d.write("t.csv", "s\nb\n");
    RelSchema s{{{"s", FieldType::StringDict}}};
    EXPECT_THROW(GroupByAgg(std::make_shared<Scan>(p, s), {}, {{AggFn::Sum, col("s"), "t"}}), StagingError);
}

TEST(Project, Expressions) {
    TempDir d("project");
    std::string p = d.write("t.csv", "a,b\n3,4\n");
    auto lines = rows_of([&] {
        return std::make_shared<Project>(std::make_shared<Scan>(p, ints({"a", "b"})),
                                         std::vector<NamedExpr>{{"sum", parse_expr("a + b")},
                                                                {"gt", parse_expr("a > b")},
                                                                {"f", parse_expr("max(a, b) * 0.5")},
                                                                {"m", parse_expr("if(a < b, a % 2, -1)")}});
    });
    EXPECT_EQ(lines, Lines{"7,0,2,1"});
}

TEST(Project, Errors) {
    TempDir d("project");
    std::string p = d.write("t.csv", "a\n3\n");
    auto scan = std::make_shared<Scan>(p, ints({"a"}));
    EXPECT_THROW(Project(scan, {}), StagingError);
    EXPECT_THROW(Project(scan, {{"x", col("a")}, {"x", col("a")}}), StagingError);
}

TEST(Materialize, RowCounts) {
    TempDir d("mat");
    std::string p = d.write("t.csv", "a\n3\n4\n");
    for (const char* pred : {"a > 0", "a > 100"}) {
        IrGraph g;
        Filter f(std::make_shared<Scan>(p, ints({"a"})), parse_expr(pred));
        ColumnBuffer buf = materialize(g, f);
        g.print(buf.rows);
        auto res = testsupport::run_both(g);
        EXPECT_EQ(res.interp.lines, Lines{std::string(pred) == "a > 0" ? "2" : "0"});
        if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
    }
}

TEST(Materialize, ScanFilterIsOnePass) {
    TempDir d("mat");
    std::string p = d.write("t.csv", "a,b\n3,1.5\n4,2.5\n");
    IrGraph g;
    Project pr(std::make_shared<Filter>(std::make_shared<Scan>(p, RelSchema{{{"a", FieldType::Int64}, {"b", FieldType::Float64}}}),
                                        parse_expr("a > 3")),
               {{"c", parse_expr("b * 2.0")}});
    ColumnBuffer buf = materialize(g, pr);
    g.print(buf.rows);
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Loop), 1u);
    std::string src = emit(o).source;
    std::size_t main_at = src.find("int main");
    ASSERT_NE(main_at, std::string::npos);
    EXPECT_EQ(testsupport::count_substr(src.substr(main_at), "for ("), 1u);
    EXPECT_EQ(interpret(o).lines, Lines{"1"});
}

TEST(Materialize, BufferScanReplaysRows) {
    TempDir d("mat");
    std::string p = d.write("t.csv", "a,s\n3,x\n4,y\n");
    IrGraph g;
    Scan scan(p, RelSchema{{{"a", FieldType::Int64}, {"s", FieldType::StringDict}}});
    ColumnBuffer buf = materialize(g, scan);
    BufferScan bs(buf);
    print_rows(g, bs);
    auto res = testsupport::run_both(g);
    EXPECT_EQ(res.interp.lines, (Lines{"3,x", "4,y"}));
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
}

// Random plans against the nested-loop reference evaluator on both backends.
TEST(Oracle, RandomPlansMatchReference) {
    TempDir d("oracle");
    for (int i = 0; i < 120; ++i) {
        testsupport::PlanGen gen(7000 + static_cast<uint64_t>(i));
        testsupport::RandomPlan rp = gen.generate(4);
        auto spec = testsupport::spec_for(rp, d, "p" + std::to_string(i) + "_");
        auto want = testsupport::fmt_rows(testsupport::ref_run(rp.plan, rp.ctx));
        auto interp = testsupport::run_spec(spec, pipeline::Backend::Interpret);
        ASSERT_EQ(interp.result.lines, want) << "plan " << i << "\n" << pipeline::serialize_spec(spec);
        if (!testsupport::compiled_enabled()) continue;
        auto comp = testsupport::run_spec(spec, pipeline::Backend::Compile);
        ASSERT_EQ(comp.result.lines, want) << "plan " << i << "\n" << pipeline::serialize_spec(spec);
    }
}
