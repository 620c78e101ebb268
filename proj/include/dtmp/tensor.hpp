#pragma once

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// Layout convention used across the library: network activations are ordered
// (batch, time, node, feature), stored row-major. Operations that touch a
// specific axis say so. Tensors are immutable after creation except for grad
// buffers and explicit parameter updates inside the optimizer.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace dtmp {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // allocated iff requires_grad
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_values(Shape shape, std::vector<double> values);
    /// Leaf with requires_grad set and a zeroed grad buffer.
    static Tensor param(Shape shape, std::vector<double> values);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

    const std::vector<double>& values() const { return impl_->values; }
    /// Mutable view of values. Init and optimizer steps only; anything else
    /// would invalidate gradients already recorded on a tape.
    std::vector<double>& mutable_values() { return impl_->values; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool enabled);
    const std::vector<double>& grad() const;
    std::vector<double>& grad();
    void zero_grad();

    /// Scalar payload; throws unless numel() == 1.
    double item() const;
    double at(std::initializer_list<int64_t> index) const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Wengert list of backward steps recorded during a forward pass. Nodes are
/// appended in execution order, which is a topological order of the forward
/// graph, so one reverse sweep visits each node exactly once.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
    /// into the grad buffers of every requires_grad tensor. Loss must be scalar.
    void backward(const Tensor& loss);

    void record(std::function<void()> step) { nodes_.push_back(std::move(step)); }

    /// Tape ops record onto, nullptr when no TapeScope is live on this thread.
    static Tape* active();

private:
    friend class TapeScope;
    std::vector<std::function<void()>> nodes_;
};

/// Activates a tape for the current thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Matrix product over the two trailing axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b); // trailing-aligned broadcast
Tensor sub(const Tensor& a, const Tensor& b); // trailing-aligned broadcast
Tensor hadamard(const Tensor& a, const Tensor& b); // equal shapes only
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

enum class OpKind { relu, sigmoid, tanh, add, hadamard };
OpKind parse_op_kind(const std::string& name);
Tensor elementwise(OpKind kind, const Tensor& x);
Tensor elementwise(OpKind kind, const Tensor& x, const Tensor& y);

/// Softmax along the last axis, max-stabilized. Rows sum to 1.
Tensor row_softmax(const Tensor& m);

/// Moves values `d` positions toward later time along `time_axis`; the d
/// latest positions fall off the end and the vacated earliest positions are
/// zero-filled. Gradient is the reverse shift.
Tensor temporal_shift(const Tensor& h, int64_t d, int time_axis);
/// Same, with the default axis convention: axis 1 for rank >= 2, axis 0 for vectors.
Tensor temporal_shift(const Tensor& h, int64_t d);

/// Training mode: zero entries with probability `rate`, scale survivors by
/// 1/(1-rate). Evaluation mode: identity. Mask drawn from `rng`.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Picks index `index` along `axis` and removes that axis.
Tensor select(const Tensor& x, int axis, int64_t index);
Tensor reshape(const Tensor& x, Shape shape);
Tensor swap_axes(const Tensor& x, int axis_a, int axis_b);
Tensor sum(const Tensor& x);  // scalar
Tensor mean(const Tensor& x); // scalar

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor tensor;
};
using ParamSet = std::vector<NamedTensor>;

struct AdamState {
    double learning_rate = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t step_count = 0;
    // moment tables keyed by parameter name, sized on first use
    std::vector<std::pair<std::string, std::vector<double>>> first_moment;
    std::vector<std::pair<std::string, std::vector<double>>> second_moment;

    std::vector<double>& moment(bool second, const std::string& name, size_t size);
};

/// Bias-corrected Adam update, reading each parameter's grad buffer.
/// Throws if a parameter has no gradient.
void adam_step(ParamSet& params, AdamState& state);

/// Scales all grads by clip/norm when the global L2 norm exceeds clip.
/// Returns the norm before clipping.
double clip_global_norm(ParamSet& params, double clip);

} // namespace dtmp
