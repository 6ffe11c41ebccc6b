#include <gtest/gtest.h>

#include <random>

#include "support/helpers.hpp"
#include "unistage/core/power.hpp"
#include "unistage/core/serialize.hpp"

using namespace unistage;
using testsupport::count_ops;

namespace {

// A next-stage i64 the optimizer cannot fold.
StagedValue opaque(IrGraph& g, int64_t v) { return g.var_read(g.var_new(g.i64(v))); }
StagedValue opaque_f(IrGraph& g, double v) { return g.var_read(g.var_new(g.f64(v))); }

int64_t wrap_mul(int64_t a, int64_t b) {
    return static_cast<int64_t>(static_cast<uint64_t>(a) * static_cast<uint64_t>(b));
}

}  // namespace

TEST(Staging, CseMergesIdenticalPureNodes) {
    IrGraph g;
    StagedValue x = opaque(g, 4), y = opaque(g, 5);
    StagedValue a = g.add(x, y), b = g.add(x, y);
    EXPECT_EQ(a.node, b.node);
    EXPECT_NE(g.add(y, x).node, a.node);  // no commutativity
}

TEST(Staging, CseKeyIncludesScope) {
    IrGraph g;
    StagedValue x = opaque(g, 2);
    StagedValue outer = g.mul(x, x);
    NodeId inner = kNoNode;
    g.staged_loop(g.i64(3), [&](StagedValue) { inner = g.mul(x, x).node; });
    EXPECT_NE(inner, outer.node);
    EXPECT_NE(g.node(inner).scope, g.root());
}

TEST(Staging, ReadsDoNotMergeAcrossWrites) {
    IrGraph g;
    StagedValue v = g.var_new(g.i64(1));
    StagedValue r1 = g.var_read(v);
    StagedValue r2 = g.var_read(v);
    EXPECT_EQ(r1.node, r2.node);
    g.var_write(v, g.i64(7));
    StagedValue r3 = g.var_read(v);
    EXPECT_NE(r3.node, r1.node);
    g.print(g.add(r1, r3));
    EXPECT_EQ(unistage::interpret(optimize(g)).lines, std::vector<std::string>{"8"});
}

TEST(Staging, ConstantFolding) {
    IrGraph g;
    StagedValue c = g.add(g.i64(2), g.mul(g.i64(3), g.i64(4)));
    ASSERT_TRUE(g.is_const(c));
    EXPECT_EQ(std::get<int64_t>(g.const_value(c)), 14);
    StagedValue f = g.div(g.f64(1.0), g.f64(4.0));
    ASSERT_TRUE(g.is_const(f));
    EXPECT_EQ(std::get<double>(g.const_value(f)), 0.25);
    StagedValue b = g.land(g.lt(g.i64(1), g.i64(2)), g.boolean(true));
    ASSERT_TRUE(g.is_const(b));
    EXPECT_TRUE(std::get<bool>(g.const_value(b)));
}

TEST(Staging, IntegerDivisionByZeroIsNotFolded) {
    IrGraph g;
    StagedValue d = g.div(g.i64(1), g.i64(0));
    EXPECT_FALSE(g.is_const(d));
}

TEST(Staging, IdentityElements) {
    IrGraph g;
    StagedValue x = opaque(g, 9);
    EXPECT_EQ(g.mul(x, g.i64(1)).node, x.node);
    EXPECT_EQ(g.add(g.i64(0), x).node, x.node);
    StagedValue f = opaque_f(g, 1.5);
    EXPECT_EQ(g.mul(f, g.f64(1.0)).node, f.node);
    // x + 0.0 differs from x when x is -0.0
    EXPECT_NE(g.add(f, g.f64(0.0)).node, f.node);
}

TEST(Staging, TypeErrors) {
    IrGraph g;
    StagedValue i = opaque(g, 1);
    StagedValue f = opaque_f(g, 1.0);
    EXPECT_THROW(g.add(i, f), StagingError);
    EXPECT_THROW(g.mod(f, f), StagingError);
    EXPECT_THROW(g.land(i, i), StagingError);
    EXPECT_THROW(g.staged_if(i, [&] { return i; }, [&] { return i; }), StagingError);
    EXPECT_THROW(g.staged_loop(f, [](StagedValue) {}), StagingError);
}

TEST(Staging, IfWithConstantConditionStagesOneBranch) {
    IrGraph g;
    int else_calls = 0;
    StagedValue r = g.staged_if(g.boolean(true), [&] { return g.i64(1); }, [&] {
        ++else_calls;
        return g.i64(2);
    });
    EXPECT_EQ(else_calls, 0);
    ASSERT_TRUE(g.is_const(r));
    EXPECT_EQ(count_ops(g, Op::If), 0u);
}

TEST(Staging, IfBranchTypeMismatch) {
    IrGraph g;
    StagedValue c = g.lt(opaque(g, 1), g.i64(2));
    EXPECT_THROW(g.staged_if(c, [&] { return g.i64(1); }, [&] { return g.f64(1.0); }), StagingError);
}

TEST(Staging, StagedIfSelectsAtRunTime) {
    IrGraph g;
    for (int64_t v : {1, 5}) {
        StagedValue x = opaque(g, v);
        StagedValue r = g.staged_if(g.lt(x, g.i64(3)), [&] { return g.mul(x, g.i64(10)); }, [&] { return g.neg(x); });
        g.print(r);
    }
    auto res = testsupport::run_both(g);
    EXPECT_EQ(res.interp.lines, (std::vector<std::string>{"10", "-5"}));
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
}

TEST(Staging, EffectsSurviveDce) {
    IrGraph g;
    StagedValue x = opaque(g, 3);
    g.mul(x, g.i64(100));  // unobserved
    g.exp(g.to_f64(x));    // unobserved
    StagedValue buf = g.array_new(Kind::Int64, g.i64(2));
    g.store(buf, g.i64(0), x);  // writes are kept even when never read
    g.print(x);
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Mul), 0u);
    EXPECT_EQ(count_ops(o, Op::Exp), 0u);
    EXPECT_EQ(count_ops(o, Op::Store), 1u);
    EXPECT_EQ(count_ops(o, Op::Print), 1u);
    EXPECT_EQ(unistage::interpret(o).lines, std::vector<std::string>{"3"});
}

TEST(Staging, ObservedStoresAreKept) {
    IrGraph g;
    StagedValue buf = g.array_new(Kind::Int64, g.i64(2));
    g.store(buf, g.i64(1), g.i64(42));
    g.print(g.load(buf, g.i64(1)));
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Store), 1u);
    EXPECT_EQ(unistage::interpret(o).lines, std::vector<std::string>{"42"});
}

TEST(Staging, OptimizeIsIdempotent) {
    IrGraph g;
    StagedValue x = opaque(g, 2);
    StagedValue acc = g.var_new(g.i64(0));
    g.staged_loop(g.i64(10), [&](StagedValue i) {
        StagedValue inv = g.mul(x, g.i64(7));
        g.var_write(acc, g.add(g.var_read(acc), g.add(inv, i)));
    });
    g.print(g.var_read(acc));
    IrGraph o1 = optimize(g);
    IrGraph o2 = optimize(o1);
    EXPECT_EQ(serialize(o1), serialize(o2));
    EXPECT_EQ(unistage::interpret(o1).lines, unistage::interpret(g).lines);
}

TEST(Scheduling, LoopInvariantCodeIsHoisted) {
    IrGraph g;
    StagedValue x = opaque(g, 2);
    NodeId inv = kNoNode;
    g.staged_loop(g.i64(4), [&](StagedValue i) {
        StagedValue v = g.mul(x, g.i64(7));
        inv = v.node;
        g.print(g.add(v, i));
    });
    ASSERT_NE(g.node(inv).scope, g.root());
    Schedule s = schedule(g);
    EXPECT_EQ(s.placement[inv], g.root());
    EXPECT_EQ(unistage::interpret(g, s).lines, (std::vector<std::string>{"14", "15", "16", "17"}));
}

TEST(Scheduling, IntegerDivisionStaysInsideGuards) {
    IrGraph g;
    StagedValue x = opaque(g, 0);
    NodeId div = kNoNode;
    g.staged_loop(g.i64(3), [&](StagedValue) {
        StagedValue r = g.staged_if(g.ne(x, g.i64(0)), [&] {
            StagedValue d = g.div(g.i64(10), x);
            div = d.node;
            return d;
        }, [&] { return g.i64(-1); });
        g.print(r);
    });
    Schedule s = schedule(g);
    EXPECT_NE(s.placement[div], g.root());
    EXPECT_EQ(unistage::interpret(g, s).lines, (std::vector<std::string>{"-1", "-1", "-1"}));
}

TEST(Scheduling, Deterministic) {
    auto build = [] {
        IrGraph g;
        StagedValue x = opaque(g, 5);
        g.staged_loop(g.i64(3), [&](StagedValue i) { g.print(g.add(g.mul(x, x), i)); });
        return g;
    };
    IrGraph a = build(), b = build();
    EXPECT_EQ(serialize(a), serialize(b));
    EXPECT_EQ(schedule(a), schedule(b));
    EXPECT_EQ(schedule(optimize(a)), schedule(optimize(b)));
}

TEST(Functions, SmallBodiesAreInlined) {
    IrGraph g;
    FuncHandle sq = g.staged_func("sq", {SType::i64()}, [&](const std::vector<StagedValue>& a) { return g.mul(a[0], a[0]); });
    g.print(g.call(sq, {opaque(g, 6)}));
    EXPECT_EQ(count_ops(g, Op::Call), 1u);
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Call), 0u);
    EXPECT_EQ(count_ops(o, Op::FuncDef), 0u);
    EXPECT_EQ(unistage::interpret(o).lines, std::vector<std::string>{"36"});
}

TEST(Functions, LargeBodiesStayCalls) {
    IrGraph g;
    g.inline_threshold = 2;
    FuncHandle poly = g.staged_func("poly", {SType::i64()}, [&](const std::vector<StagedValue>& a) {
        StagedValue v = a[0];
        for (int k = 0; k < 6; ++k) v = g.add(g.mul(v, a[0]), g.i64(k));
        return v;
    });
    g.print(g.call(poly, {opaque(g, 2)}));
    g.print(g.call(poly, {opaque(g, 3)}));
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::FuncDef), 1u);
    EXPECT_EQ(count_ops(o, Op::Call), 2u);
    auto res = testsupport::run_both(g);
    auto ref = [](int64_t x) {
        int64_t v = x;
        for (int k = 0; k < 6; ++k) v = v * x + k;
        return std::to_string(v);
    };
    EXPECT_EQ(res.interp.lines, (std::vector<std::string>{ref(2), ref(3)}));
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
}

TEST(Functions, RecursionAndRedefinitionAreRejected) {
    IrGraph g;
    FuncHandle self;
    self.name = "f";
    self.params = {SType::i64()};
    EXPECT_THROW(g.staged_func("f", {SType::i64()}, [&](const std::vector<StagedValue>& a) { return g.call(self, a); }),
                 StagingError);
    g.staged_func("h", {SType::i64()}, [&](const std::vector<StagedValue>& a) { return a[0]; });
    EXPECT_THROW(g.staged_func("h", {SType::i64()}, [&](const std::vector<StagedValue>& a) { return a[0]; }),
                 StagingError);
}

TEST(Functions, ArgumentTypesAreChecked) {
    IrGraph g;
    FuncHandle f = g.staged_func("f", {SType::i64()}, [&](const std::vector<StagedValue>& a) { return a[0]; });
    EXPECT_THROW(g.call(f, {g.f64(1.0)}), StagingError);
    EXPECT_THROW(g.call(f, {}), StagingError);
}

TEST(Power, SevenUsesFourMultiplications) {
    IrGraph g;
    g.print(power(g, opaque(g, 3), 7));
    IrGraph o = optimize(g);
    EXPECT_EQ(count_ops(o, Op::Mul), 4u);
    auto res = testsupport::run_both(g);
    EXPECT_EQ(res.interp.lines, std::vector<std::string>{"2187"});
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, res.interp.lines);
}

TEST(Power, NegativeExponentIsRejected) {
    IrGraph g;
    EXPECT_THROW(power(g, opaque(g, 2), -1), StagingError);
}

TEST(Power, MatchesRepeatedMultiplication) {
    IrGraph g;
    std::vector<std::string> want;
    for (int64_t b = -5; b <= 5; ++b) {
        StagedValue bv = opaque(g, b);
        for (int64_t n = 0; n <= 12; ++n) {
            g.print(power(g, bv, n));
            int64_t r = 1;
            for (int64_t k = 0; k < n; ++k) r = wrap_mul(r, b);
            want.push_back(std::to_string(r));
        }
    }
    auto res = testsupport::run_both(g);
    EXPECT_EQ(res.interp.lines, want);
    if (res.have_compiled) EXPECT_EQ(res.compiled.lines, want);
}

TEST(Serialization, RoundTrip) {
    IrGraph g;
    StagedValue x = opaque_f(g, -0.0);
    StagedValue acc = g.var_new(g.f64(0.5));
    FuncHandle f = g.staged_func("f", {SType::f64()}, [&](const std::vector<StagedValue>& a) { return g.exp(a[0]); });
    g.staged_loop(g.i64(3), [&](StagedValue i) {
        StagedValue c = g.lt(i, g.i64(2));
        StagedValue v = g.staged_if(c, [&] { return g.call(f, {x}); }, [&] { return g.to_f64(i); });
        g.var_write(acc, g.add(g.var_read(acc), v));
    });
    g.print(g.var_read(acc));
    g.print_aux("tag with space", {x, g.i64(3)});
    std::string text = serialize(g);
    IrGraph back = deserialize(text);
    EXPECT_EQ(serialize(back), text);
    EXPECT_EQ(unistage::interpret(back).lines, unistage::interpret(g).lines);
    EXPECT_EQ(unistage::interpret(back).aux, unistage::interpret(g).aux);
}

TEST(Serialization, MalformedTextIsRejected) {
    EXPECT_THROW(deserialize("this is not a graph"), Error);
}

// Random straight-line and looped integer programs: the optimized graph must
// print what a direct evaluation of the same operations prints.
TEST(Optimizer, RandomProgramsKeepTheirMeaning) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        IrGraph g;
        std::vector<StagedValue> vals;
        std::vector<int64_t> cur;
        for (int i = 0; i < 3; ++i) {
            int64_t v = static_cast<int64_t>(rng() % 21) - 10;
            vals.push_back(rng() % 2 ? opaque(g, v) : g.i64(v));
            cur.push_back(v);
        }
        std::vector<std::string> want;
        int steps = 5 + static_cast<int>(rng() % 25);
        for (int s = 0; s < steps; ++s) {
            std::size_t a = rng() % vals.size(), b = rng() % vals.size();
            int op = static_cast<int>(rng() % 6);
            StagedValue r;
            int64_t x = cur[a], y = cur[b], v = 0;
            switch (op) {
                case 0: r = g.add(vals[a], vals[b]); v = static_cast<int64_t>(static_cast<uint64_t>(x) + static_cast<uint64_t>(y)); break;
                case 1: r = g.sub(vals[a], vals[b]); v = static_cast<int64_t>(static_cast<uint64_t>(x) - static_cast<uint64_t>(y)); break;
                case 2: r = g.mul(vals[a], vals[b]); v = wrap_mul(x, y); break;
                case 3: r = g.max(vals[a], vals[b]); v = x > y ? x : y; break;
                case 4: r = g.min(vals[a], vals[b]); v = x < y ? x : y; break;
                default: r = g.select(g.lt(vals[a], vals[b]), vals[a], vals[b]); v = x < y ? x : y; break;
            }
            vals.push_back(r);
            cur.push_back(v);
            if (rng() % 3 == 0) {
                g.print(r);
                want.push_back(std::to_string(v));
            }
        }
        // a loop summing a random value with the index
        std::size_t k = rng() % vals.size();
        StagedValue acc = g.var_new(g.i64(0));
        int64_t ref = 0;
        g.staged_loop(g.i64(4), [&](StagedValue i) { g.var_write(acc, g.add(g.var_read(acc), g.add(vals[k], i))); });
        for (int64_t i = 0; i < 4; ++i) ref = static_cast<int64_t>(static_cast<uint64_t>(ref) + static_cast<uint64_t>(cur[k] + i));
        g.print(g.var_read(acc));
        want.push_back(std::to_string(ref));

        IrGraph o = optimize(g);
        EXPECT_LE(o.size(), g.size());
        EXPECT_EQ(unistage::interpret(g).lines, want) << "trial " << trial;
        EXPECT_EQ(unistage::interpret(o).lines, want) << "trial " << trial;
        EXPECT_EQ(serialize(optimize(o)), serialize(o));
    }
}
