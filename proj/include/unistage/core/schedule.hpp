#pragma once

#include <map>
#include <vector>

#include "unistage/core/graph.hpp"

namespace unistage {

// Statement order for every block plus the block each node is emitted in.
// Within a block statements are ascending NodeId; loop-invariant pure nodes
// are placed in the nearest enclosing block outside the loop.
struct Schedule {
    std::vector<NodeId> placement;
    std::map<NodeId, std::vector<NodeId>> blocks;
    std::vector<int64_t> position;  // -1 when not emitted

    const std::vector<NodeId>& statements(NodeId block) const {
        static const std::vector<NodeId> empty;
        auto it = blocks.find(block);
        return it == blocks.end() ? empty : it->second;
    }
    friend bool operator==(const Schedule&, const Schedule&) = default;
};

namespace detail {

inline bool hoistable(const Node& n) {
    if (n.effect.kind() != EffectKind::Pure) return false;
    switch (n.op) {
        case Op::Block:
        case Op::Param:
        case Op::LoopIndex:
        case Op::FuncDef:
        case Op::Call:
        case Op::If:
        case Op::Loop:
        case Op::ToInt:
            return false;
        case Op::Div:
        case Op::Mod:
            return n.type != SType::i64();  // integer division may trap
        default:
            return true;
    }
}

}  // namespace detail

inline Schedule schedule(const IrGraph& g) {
    Schedule s;
    const std::size_t n = g.size();
    s.placement.assign(n, 0);
    s.position.assign(n, -1);
    std::vector<int> depth(n, 0);

    for (NodeId id = 1; id < n; ++id) {
        const Node& nd = g.node(id);
        for (NodeId o : nd.operands)
            if (o >= id) throw InternalError("cycle: node " + std::to_string(id) + " uses later node " + std::to_string(o));
        if (nd.scope >= id) throw InternalError("node " + std::to_string(id) + " scoped in a later block");
        NodeId place = nd.scope;
        if (detail::hoistable(nd)) {
            while (place != 0 && g.block_kind(place) == BlockKind::LoopBody) {
                NodeId parent = g.node(place).scope;
                int pd = g.scope_depth(parent);
                bool invariant = true;
                for (NodeId o : nd.operands)
                    if (g.scope_depth(s.placement[o]) > pd) invariant = false;
                if (!invariant) break;
                place = parent;
            }
        }
        s.placement[id] = place;
        if (nd.op == Op::Block) s.placement[id] = nd.scope;
    }

    for (NodeId id = 1; id < n; ++id) {
        Op op = g.node(id).op;
        if (op == Op::Block || op == Op::Param || op == Op::LoopIndex) continue;
        s.blocks[s.placement[id]].push_back(id);
    }

    int64_t counter = 0;
    std::function<void(NodeId)> emit = [&](NodeId block) {
        for (NodeId id : s.statements(block)) {
            s.position[id] = counter++;
            const Node& nd = g.node(id);
            switch (nd.op) {
                case Op::Loop: emit(nd.operands[1]); break;
                case Op::FuncDef: emit(nd.operands[0]); break;
                case Op::If:
                    emit(nd.operands[1]);
                    emit(nd.operands[nd.operands.size() == 5 ? 3 : 2]);
                    break;
                default: break;
            }
        }
    };
    emit(0);

    // Operand-before-user check (control-flow children are emitted after
    // their owner's header by construction).
    for (NodeId id = 1; id < n; ++id) {
        const Node& nd = g.node(id);
        if (s.position[id] < 0) continue;
        std::size_t checked = nd.operands.size();
        if (nd.op == Op::Loop || nd.op == Op::If) checked = 1;
        if (nd.op == Op::FuncDef) checked = 0;
        for (std::size_t i = 0; i < checked; ++i) {
            NodeId o = nd.operands[i];
            Op oop = g.node(o).op;
            if (oop == Op::Param || oop == Op::LoopIndex) continue;
            if (s.position[o] < 0 || s.position[o] > s.position[id])
                throw InternalError("schedule emits node " + std::to_string(id) + " before operand " + std::to_string(o));
        }
    }
    return s;
}

}  // namespace unistage
