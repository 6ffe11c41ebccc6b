#pragma once

// Tape-based reverse mode. Forward ops executed while a GradScope is active
// record a backward rule; backward() replays the rules in reverse, staging
// gradient accumulation into contiguous grad buffers.

#include <functional>
#include <map>
#include <optional>

#include "unistage/tensor/tensor.hpp"

namespace unistage::tensor {

struct Parameter {
    std::string name;
    Tensor value;  // contiguous, allocated at the program root
    Tensor grad;   // same shape, zero-filled at creation
};

// Parameter initialized from current-stage values; storage is mutable.
inline Parameter make_parameter(IrGraph& g, const std::string& name, std::vector<int64_t> shape,
                                const std::vector<double>& values) {
    return g.at_root([&] {
        Parameter p;
        p.name = name;
        p.value = from_literals(g, shape, values);
        p.grad = zeros(g, shape);
        return p;
    });
}

class Tape {
public:
    using Rule = std::function<void(IrGraph&, Tape&)>;

    // Registers a tensor produced under this tape and returns its slot.
    int track(Tensor& t) {
        t.id = static_cast<int>(slots_.size());
        slots_.push_back({t, std::nullopt, nullptr});
        return t.id;
    }

    // Tracked view of a parameter's value; one slot per parameter.
    Tensor use(Parameter& p) {
        if (auto it = param_slot_.find(&p); it != param_slot_.end()) return slots_[it->second].value;
        Tensor v = p.value;
        track(v);
        slots_[v.id].param = &p;
        slots_[v.id].grad = p.grad;
        param_slot_[&p] = v.id;
        return v;
    }

    void record(std::string op, std::vector<int> inputs, int output, Rule rule) {
        entries_.push_back({std::move(op), std::move(inputs), output, std::move(rule)});
        ++recorded_total_;
    }

    // Contiguous gradient buffer of a slot, zero-allocated on first use.
    Tensor grad(IrGraph& g, int id) {
        Slot& s = slots_.at(static_cast<std::size_t>(id));
        if (!s.grad) {
            std::vector<int64_t> shape = s.value.shape;
            s.grad = alloc(g, shape, s.value.dynamic() ? s.value.rows : StagedValue::unit());
        }
        return *s.grad;
    }

    const Tensor& value(int id) const { return slots_.at(static_cast<std::size_t>(id)).value; }

    std::size_t pending() const { return entries_.size(); }
    int64_t recorded_total() const { return recorded_total_; }
    int64_t rules_executed() const { return rules_executed_; }
    const std::vector<std::string> executed_ops() const { return executed_ops_; }

    // Seeds d(loss)/d(loss) = 1 and replays every recorded rule once, newest
    // first. Parameter grads accumulate; the tape is cleared afterwards.
    void backward(IrGraph& g, const Tensor& loss) {
        if (entries_.empty())
            throw StagingError("backward: the tape is empty (backward already ran for this forward pass)");
        if (loss.rank() != 0 && !(loss.rank() == 1 && loss.shape[0] == 1))
            throw StagingError("backward: loss must be a scalar, got shape " + loss.shape_str());
        if (loss.id < 0 || static_cast<std::size_t>(loss.id) >= slots_.size())
            throw StagingError("backward: loss was not produced under this tape");
        Tensor seed = grad(g, loss.id);
        g.store(seed.data, g.i64(0), g.f64(1.0));
        for (std::size_t i = entries_.size(); i-- > 0;) {
            entries_[i].rule(g, *this);
            ++rules_executed_;
            executed_ops_.push_back(entries_[i].op);
        }
        entries_.clear();
        // intermediate grads belong to this pass; parameter grads persist
        for (auto& s : slots_)
            if (!s.param) s.grad.reset();
    }

private:
    struct Slot {
        Tensor value;
        std::optional<Tensor> grad;
        Parameter* param;
    };
    struct Entry {
        std::string op;
        std::vector<int> inputs;
        int output;
        Rule rule;
    };
    std::vector<Slot> slots_;
    std::vector<Entry> entries_;
    std::map<const Parameter*, int> param_slot_;
    int64_t recorded_total_ = 0;
    int64_t rules_executed_ = 0;
    std::vector<std::string> executed_ops_;
};

namespace detail {
inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape(); }

// Activates a tape for the forward ops staged during its lifetime. The
// region rejects staged if/loop built by user code.
class GradScope {
public:
    GradScope(IrGraph& g, Tape& t) : g_(g), prev_(detail::active_tape()) {
        detail::active_tape() = &t;
        g_.enter_grad_region();
    }
    ~GradScope() {
        g_.leave_grad_region();
        detail::active_tape() = prev_;
    }
    GradScope(const GradScope&) = delete;
    GradScope& operator=(const GradScope&) = delete;

private:
    IrGraph& g_;
    Tape* prev_;
};

// Value of a parameter for use in forward ops: tracked when a tape is active.
inline Tensor use(Parameter& p) {
    if (Tape* t = active_tape()) return t->use(p);
    return p.value;
}

}  // namespace unistage::tensor
