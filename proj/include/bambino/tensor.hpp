#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bambino/errors.hpp"

namespace bambino {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;  // empty shape -> 1 (scalar)
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Shaped array of doubles with a gradient slot. Handles share storage:
// copying a DenseArray aliases the same values/grad, which is what lets
// backward() accumulate into the arrays the caller holds. Constness is
// shallow, as with a shared_ptr.
class DenseArray {
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until first needed
        bool requires_grad{false};
    };

public:
    DenseArray() = default;

    static DenseArray zeros(Shape shape, bool requires_grad = false) {
        DenseArray a;
        a.s_ = std::make_shared<Storage>();
        a.s_->values.assign(shape_numel(shape), 0.0);
        a.s_->shape = std::move(shape);
        a.s_->requires_grad = requires_grad;
        return a;
    }

    static DenseArray full(Shape shape, double v, bool requires_grad = false) {
        DenseArray a = zeros(std::move(shape), requires_grad);
        std::fill(a.s_->values.begin(), a.s_->values.end(), v);
        return a;
    }

    static DenseArray from_values(Shape shape, std::vector<double> values,
                                  bool requires_grad = false) {
        if (values.size() != shape_numel(shape)) {
            throw ShapeError("from_values: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        }
        DenseArray a;
        a.s_ = std::make_shared<Storage>();
        a.s_->shape = std::move(shape);
        a.s_->values = std::move(values);
        a.s_->requires_grad = requires_grad;
        return a;
    }

    static DenseArray scalar(double v, bool requires_grad = false) {
        return from_values({}, {v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(s_); }

    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t size() const { return s_->values.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape[i]; }

    std::vector<double>& values() const { return s_->values; }
    double value(std::size_t i = 0) const { return s_->values[i]; }
    double at(std::size_t r, std::size_t c) const { return s_->values[r * s_->shape[1] + c]; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool b) const { s_->requires_grad = b; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<double>& grad() const {
        ensure_grad();
        return s_->grad;
    }
    void ensure_grad() const {
        if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
    }
    void zero_grad() const {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
    }

    // Storage identity; used by the weight-tying checks.
    const void* storage_id() const { return s_.get(); }

    bool all_finite() const {
        for (double v : s_->values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    std::shared_ptr<Storage> s_;
};

class Tape;
namespace detail {
inline thread_local Tape* g_active_tape = nullptr;
}

// Records primitive ops in execution order; backward() replays them strictly
// in reverse, seeding the scalar loss with gradient 1 and accumulating into
// every requires_grad input. Leaf gradients are never cleared here, so
// repeated backward calls accumulate; intermediate adjoints are reset per
// call.
class Tape {
public:
    struct Node {
        const char* op;
        std::vector<DenseArray> inputs;
        DenseArray output;
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const char* op, std::vector<DenseArray> inputs, DenseArray output,
                std::function<void()> backward) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t node_count() const { return nodes_.size(); }

    static Tape* active() { return detail::g_active_tape; }

    void backward(const DenseArray& loss) {
        if (!loss.defined() || loss.rank() != 0) {
            throw ShapeError("backward: loss must be a scalar, got shape " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
        }
        bool on_tape = false;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output.storage_id() == loss.storage_id()) {
                on_tape = true;
                break;
            }
        }
        if (!on_tape) throw ShapeError("backward: loss was not produced on this tape");

        // Intermediate adjoints (node outputs) start from zero each call.
        for (auto& n : nodes_) {
            n.output.ensure_grad();
            n.output.zero_grad();
        }
        loss.grad()[0] = 1.0;

        visit_log_.clear();
        visit_log_.reserve(nodes_.size());
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            visit_log_.push_back(nodes_[i].op);
            nodes_[i].backward();
        }
    }

    // Op names in the order the last backward() visited them.
    const std::vector<const char*>& visit_log() const { return visit_log_; }

    // Op names in execution (recording) order.
    std::vector<const char*> record_log() const {
        std::vector<const char*> ops;
        ops.reserve(nodes_.size());
        for (const auto& n : nodes_) ops.push_back(n.op);
        return ops;
    }

private:
    std::vector<Node> nodes_;
    std::vector<const char*> visit_log_;
};

// Marks a tape as the active recording target for the enclosed scope.
class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(detail::g_active_tape) { detail::g_active_tape = &t; }
    ~TapeScope() { detail::g_active_tape = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

}  // namespace bambino
