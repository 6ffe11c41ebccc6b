#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "unistage/core/graph.hpp"
#include "unistage/core/serialize.hpp"

namespace unistage {

// Nodes reachable from observable effects (writes, global effects) through
// operands and enclosing control flow. Everything else is dead.
inline std::vector<bool> live_nodes(const IrGraph& g) {
    std::vector<bool> live(g.size(), false);
    std::vector<NodeId> work;
    auto mark = [&](NodeId id) {
        if (!live[id]) {
            live[id] = true;
            work.push_back(id);
        }
    };
    mark(g.root());
    while (!work.empty()) {
        NodeId id = work.back();
        work.pop_back();
        const Node& n = g.node(id);
        if (n.op == Op::Block) {
            for (NodeId c : g.children(id)) {
                const Node& cn = g.node(c);
                if (cn.effect.observable() || cn.op == Op::Param) mark(c);
            }
        }
        for (NodeId o : n.operands) mark(o);
    }
    return live;
}

namespace detail {

// Rebuilds `src` into `dst` through IrGraph::make, so folding and CSE run
// again on the mapped operands. Dead nodes are skipped; small calls inlined.
class Replayer {
public:
    Replayer(const IrGraph& src, IrGraph& dst, const std::vector<bool>& live, std::size_t threshold)
        : src_(src), dst_(dst), live_(live), threshold_(threshold), map_(src.size(), kNoNode) {
        map_[0] = 0;
    }

    void run() {
        auto global = [this](NodeId o) { return map_.at(o); };
        for (NodeId id = 1; id < src_.size(); ++id) {
            if (!live_[id]) continue;
            const Node& n = src_.node(id);
            map_[id] = copy(n, global, map_[n.scope]);
        }
        dst_.set_scope(0);
    }

private:
    using Lookup = std::function<NodeId(NodeId)>;

    const IrGraph& src_;
    IrGraph& dst_;
    const std::vector<bool>& live_;
    std::size_t threshold_;
    std::vector<NodeId> map_;
    int inline_depth_ = 0;

    NodeId copy(const Node& n, const Lookup& lookup, NodeId scope) {
        dst_.set_scope(scope);
        if (n.op == Op::Block) return dst_.make_block(static_cast<BlockKind>(std::get<int64_t>(n.imm.at(0))));
        if (n.op == Op::Call) {
            const Node& def = src_.node(n.operands[0]);
            if (src_.body_size(def.operands[0]) <= threshold_ && inline_depth_ < 64) return inline_call(n, lookup, scope);
        }
        std::vector<NodeId> ops;
        ops.reserve(n.operands.size());
        for (NodeId o : n.operands) ops.push_back(lookup(o));
        dst_.set_scope(scope);
        StagedValue v = dst_.make(n.op, n.type, std::move(ops), n.imm);
        return v.node;
    }

    NodeId inline_call(const Node& call, const Lookup& lookup, NodeId scope) {
        ++inline_depth_;
        const Node& def = src_.node(call.operands[0]);
        NodeId blk = def.operands[0];
        std::vector<NodeId> args;
        for (std::size_t i = 1; i < call.operands.size(); ++i) args.push_back(lookup(call.operands[i]));
        std::unordered_map<NodeId, NodeId> local{{blk, scope}};
        Lookup lk = [&](NodeId o) {
            auto it = local.find(o);
            return it != local.end() ? it->second : lookup(o);
        };
        for (NodeId id = blk + 1; id < def.id; ++id) {
            const Node& b = src_.node(id);
            if (!live_[id] || !src_.scope_within(b.scope, blk)) continue;
            if (b.op == Op::Param && b.scope == blk) {
                local[id] = args.at(static_cast<std::size_t>(std::get<int64_t>(b.imm.at(0))));
                continue;
            }
            local[id] = copy(b, lk, lk(b.scope));
        }
        NodeId result = lk(def.operands[1]);
        dst_.set_scope(scope);
        --inline_depth_;
        return result;
    }
};

}  // namespace detail

// Dead-code elimination, function inlining (bodies of at most
// g.inline_threshold nodes), constant folding and CSE on the rebuilt graph.
// Iterates to a fixed point, so optimize(optimize(g)) == optimize(g).
inline IrGraph optimize(const IrGraph& g) {
    IrGraph cur = g;
    std::string cur_text = serialize(cur);
    for (int iter = 0; iter < 32; ++iter) {
        IrGraph next;
        next.inline_threshold = g.inline_threshold;
        auto live = live_nodes(cur);
        detail::Replayer(cur, next, live, g.inline_threshold).run();
        std::string next_text = serialize(next);
        if (next_text == cur_text) return next;
        cur = std::move(next);
        cur_text = std::move(next_text);
    }
    return cur;
}

}  // namespace unistage
