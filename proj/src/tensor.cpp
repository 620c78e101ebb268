#include "dtmp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dtmp {

// ---------------------------------------------------------------------------
// Shape helpers
// ---------------------------------------------------------------------------

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    for (int64_t d : shape)
        if (d <= 0)
            throw std::invalid_argument("invalid dimension in shape " + shape_to_string(shape));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_to_string(a) + " and " + shape_to_string(b));
}

// Right-aligned broadcast of `in` against `out`; strides are 0 on broadcast axes.
std::vector<int64_t> aligned_strides(const Shape& in, const Shape& out, const char* op,
                                     const Shape& other) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t running = 1;
    int off = static_cast<int>(out.size()) - static_cast<int>(in.size());
    for (int ax = static_cast<int>(in.size()) - 1; ax >= 0; --ax) {
        int64_t d = in[static_cast<size_t>(ax)];
        int64_t od = out[static_cast<size_t>(ax + off)];
        if (d == od)
            strides[static_cast<size_t>(ax + off)] = (d == 1) ? 0 : running;
        else if (d == 1)
            strides[static_cast<size_t>(ax + off)] = 0;
        else
            shape_error(op, in, other);
        running *= d;
    }
    return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da == db || db == 1)
            out[i] = da;
        else if (da == 1)
            out[i] = db;
        else
            shape_error(op, a, b);
    }
    return out;
}

// Visits every element of `out_shape`, with rolling linear offsets into two
// broadcast inputs. f(out_index, a_index, b_index).
template <class F>
void for_each_broadcast(const Shape& out_shape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
    int64_t total = shape_numel(out_shape);
    int rank = static_cast<int>(out_shape.size());
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (int ax = rank - 1; ax >= 0; --ax) {
            size_t u = static_cast<size_t>(ax);
            ++idx[u];
            oa += sa[u];
            ob += sb[u];
            if (idx[u] < out_shape[u]) break;
            oa -= sa[u] * out_shape[u];
            ob -= sb[u] * out_shape[u];
            idx[u] = 0;
        }
    }
}

bool is_trailing_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[i + off]) return false;
    return true;
}

thread_local Tape* g_active_tape = nullptr;

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

Tensor make_output(Shape shape, std::vector<double> values, bool track) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(values));
    if (track) out.set_requires_grad(true);
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    check_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                    " values for shape " + shape_to_string(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    return Tensor(std::move(impl));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
    Tensor t = from_values(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
}

void Tensor::set_requires_grad(bool enabled) {
    impl_->requires_grad = enabled;
    if (enabled)
        impl_->grad.assign(impl_->values.size(), 0.0);
    else
        impl_->grad.clear();
}

const std::vector<double>& Tensor::grad() const {
    if (!requires_grad())
        throw std::logic_error("tensor has no grad buffer");
    return impl_->grad;
}

std::vector<double>& Tensor::grad() {
    if (!requires_grad())
        throw std::logic_error("tensor has no grad buffer");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad())
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1)
        throw std::logic_error("item(): tensor of shape " + shape_to_string(shape()) +
                               " is not scalar");
    return impl_->values[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int>(index.size()) != rank())
        throw std::logic_error("at(): index rank mismatch");
    int64_t linear = 0;
    int ax = 0;
    for (int64_t i : index) {
        linear = linear * impl_->shape[static_cast<size_t>(ax)] + i;
        ++ax;
    }
    return impl_->values[static_cast<size_t>(linear)];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar");
    if (!loss.requires_grad()) return; // loss does not depend on any tracked tensor
    loss.impl()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        (*it)();
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd_factor) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    bool track = should_record({&x});
    Tensor y = make_output(x.shape(), std::move(out), track);
    if (track) {
        auto xi = x.impl();
        auto yi = y.impl();
        g_active_tape->record([xi, yi, bwd_factor]() {
            if (!xi->requires_grad) return;
            for (size_t i = 0; i < xi->grad.size(); ++i)
                xi->grad[i] += yi->grad[i] * bwd_factor(xi->values[i], yi->values[i]);
        });
    }
    return y;
}

enum class BinKind { add, sub };

Tensor add_like(const Tensor& a, const Tensor& b, BinKind kind) {
    const char* op = kind == BinKind::add ? "add" : "sub";
    const double sb = kind == BinKind::add ? 1.0 : -1.0;
    const auto& av = a.values();
    const auto& bv = b.values();
    bool track = should_record({&a, &b});

    if (a.shape() == b.shape()) {
        std::vector<double> out(av.size());
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + sb * bv[i];
        Tensor y = make_output(a.shape(), std::move(out), track);
        if (track) {
            auto ai = a.impl(), bi = b.impl(), yi = y.impl();
            g_active_tape->record([ai, bi, yi, sb]() {
                if (ai->requires_grad)
                    for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += yi->grad[i];
                if (bi->requires_grad)
                    for (size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] += sb * yi->grad[i];
            });
        }
        return y;
    }

    if (is_trailing_suffix(b.shape(), a.shape())) {
        // broadcast bias pattern: b repeats along the leading axes of a
        size_t bs = bv.size();
        std::vector<double> out(av.size());
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + sb * bv[i % bs];
        Tensor y = make_output(a.shape(), std::move(out), track);
        if (track) {
            auto ai = a.impl(), bi = b.impl(), yi = y.impl();
            g_active_tape->record([ai, bi, yi, sb, bs]() {
                if (ai->requires_grad)
                    for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += yi->grad[i];
                if (bi->requires_grad)
                    for (size_t i = 0; i < yi->grad.size(); ++i)
                        bi->grad[i % bs] += sb * yi->grad[i];
            });
        }
        return y;
    }

    Shape out_shape = broadcast_shapes(a.shape(), b.shape(), op);
    auto sa = aligned_strides(a.shape(), out_shape, op, b.shape());
    auto sbst = aligned_strides(b.shape(), out_shape, op, a.shape());
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    for_each_broadcast(out_shape, sa, sbst, [&](int64_t i, int64_t ia, int64_t ib) {
        out[static_cast<size_t>(i)] =
            av[static_cast<size_t>(ia)] + sb * bv[static_cast<size_t>(ib)];
    });
    Tensor y = make_output(out_shape, std::move(out), track);
    if (track) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        g_active_tape->record([ai, bi, yi, sb, out_shape, sa, sbst]() {
            for_each_broadcast(out_shape, sa, sbst, [&](int64_t i, int64_t ia, int64_t ib) {
                double g = yi->grad[static_cast<size_t>(i)];
                if (ai->requires_grad) ai->grad[static_cast<size_t>(ia)] += g;
                if (bi->requires_grad) bi->grad[static_cast<size_t>(ib)] += sb * g;
            });
        });
    }
    return y;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like(a, b, BinKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_like(a, b, BinKind::sub); }

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("hadamard", a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    bool track = should_record({&a, &b});
    Tensor y = make_output(a.shape(), std::move(out), track);
    if (track) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        g_active_tape->record([ai, bi, yi]() {
            if (ai->requires_grad)
                for (size_t i = 0; i < ai->grad.size(); ++i)
                    ai->grad[i] += yi->grad[i] * bi->values[i];
            if (bi->requires_grad)
                for (size_t i = 0; i < bi->grad.size(); ++i)
                    bi->grad[i] += yi->grad[i] * ai->values[i];
        });
    }
    return y;
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double yv) { return yv * (1.0 - yv); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double yv) { return 1.0 - yv * yv; });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::fabs(v); },
        [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_op(
        x, [factor](double v) { return factor * v; },
        [factor](double, double) { return factor; });
}

OpKind parse_op_kind(const std::string& name) {
    if (name == "relu") return OpKind::relu;
    if (name == "sigmoid") return OpKind::sigmoid;
    if (name == "tanh") return OpKind::tanh;
    if (name == "add") return OpKind::add;
    if (name == "hadamard") return OpKind::hadamard;
    throw std::invalid_argument("unknown op kind '" + name + "'");
}

Tensor elementwise(OpKind kind, const Tensor& x) {
    switch (kind) {
    case OpKind::relu: return relu(x);
    case OpKind::sigmoid: return sigmoid(x);
    case OpKind::tanh: return tanh(x);
    default: throw std::invalid_argument("elementwise: op kind requires two operands");
    }
}

Tensor elementwise(OpKind kind, const Tensor& x, const Tensor& y) {
    switch (kind) {
    case OpKind::add: return add(x, y);
    case OpKind::hadamard: return hadamard(x, y);
    default: throw std::invalid_argument("elementwise: op kind takes one operand");
    }
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace {

void mm_forward(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA += dC · Bᵀ
void mm_grad_a(const double* dc, const double* b, double* da, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* dcrow = dc + i * n;
        double* darow = da + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            darow[p] += s;
        }
    }
}

// dB += Aᵀ · dC
void mm_grad_b(const double* a, const double* dc, double* db, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* dcrow = dc + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* dbrow = db + p * n;
            for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
        }
    }
}

struct MatmulPlan {
    Shape lead;                    // broadcast leading shape
    std::vector<int64_t> stride_a; // element strides per lead axis
    std::vector<int64_t> stride_b;
    int64_t m = 0, k = 0, n = 0;

    template <class F>
    void for_each_slice(F&& f) const {
        int64_t slices = shape_numel(lead);
        int rank = static_cast<int>(lead.size());
        std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
        int64_t oa = 0, ob = 0, oc = 0;
        const int64_t slice_c = m * n;
        for (int64_t s = 0; s < slices; ++s) {
            f(oa, ob, oc);
            oc += slice_c;
            for (int ax = rank - 1; ax >= 0; --ax) {
                size_t u = static_cast<size_t>(ax);
                ++idx[u];
                oa += stride_a[u];
                ob += stride_b[u];
                if (idx[u] < lead[u]) break;
                oa -= stride_a[u] * lead[u];
                ob -= stride_b[u] * lead[u];
                idx[u] = 0;
            }
        }
    }
};

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
    MatmulPlan plan;
    plan.m = a.dim(a.rank() - 2);
    plan.k = a.dim(a.rank() - 1);
    const int64_t k2 = b.dim(b.rank() - 2);
    plan.n = b.dim(b.rank() - 1);
    if (plan.k != k2) shape_error("matmul", a.shape(), b.shape());

    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    plan.lead = broadcast_shapes(lead_a, lead_b, "matmul");
    plan.stride_a = aligned_strides(lead_a, plan.lead, "matmul", lead_b);
    plan.stride_b = aligned_strides(lead_b, plan.lead, "matmul", lead_a);
    for (auto& s : plan.stride_a) s *= plan.m * plan.k;
    for (auto& s : plan.stride_b) s *= plan.k * plan.n;

    Shape out_shape = plan.lead;
    out_shape.push_back(plan.m);
    out_shape.push_back(plan.n);

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    plan.for_each_slice([&](int64_t oa, int64_t ob, int64_t oc) {
        mm_forward(av + oa, bv + ob, out.data() + oc, plan.m, plan.k, plan.n);
    });

    bool track = should_record({&a, &b});
    Tensor y = make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        g_active_tape->record([ai, bi, yi, plan]() {
            const double* avd = ai->values.data();
            const double* bvd = bi->values.data();
            const double* gy = yi->grad.data();
            plan.for_each_slice([&](int64_t oa, int64_t ob, int64_t oc) {
                if (ai->requires_grad)
                    mm_grad_a(gy + oc, bvd + ob, ai->grad.data() + oa, plan.m, plan.k, plan.n);
                if (bi->requires_grad)
                    mm_grad_b(avd + oa, gy + oc, bi->grad.data() + ob, plan.m, plan.k, plan.n);
            });
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Softmax, shift, dropout
// ---------------------------------------------------------------------------

Tensor row_softmax(const Tensor& m) {
    if (m.rank() < 1) throw std::invalid_argument("row_softmax: rank must be >= 1");
    const int64_t width = m.dim(m.rank() - 1);
    const int64_t rows = m.numel() / width;
    const auto& xv = m.values();
    std::vector<double> out(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * width;
        double* orow = out.data() + r * width;
        double hi = row[0];
        for (int64_t j = 1; j < width; ++j) hi = std::max(hi, row[j]);
        double total = 0.0;
        for (int64_t j = 0; j < width; ++j) {
            orow[j] = std::exp(row[j] - hi);
            total += orow[j];
        }
        for (int64_t j = 0; j < width; ++j) orow[j] /= total;
    }
    bool track = should_record({&m});
    Tensor y = make_output(m.shape(), std::move(out), track);
    if (track) {
        auto xi = m.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, rows, width]() {
            if (!xi->requires_grad) return;
            for (int64_t r = 0; r < rows; ++r) {
                const double* yrow = yi->values.data() + r * width;
                const double* grow = yi->grad.data() + r * width;
                double* xg = xi->grad.data() + r * width;
                double dot = 0.0;
                for (int64_t j = 0; j < width; ++j) dot += grow[j] * yrow[j];
                for (int64_t j = 0; j < width; ++j) xg[j] += yrow[j] * (grow[j] - dot);
            }
        });
    }
    return y;
}

namespace {

struct AxisSplit {
    int64_t pre = 1, len = 1, post = 1;
};

AxisSplit split_at_axis(const Shape& shape, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_to_string(shape));
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.pre *= shape[static_cast<size_t>(i)];
    s.len = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.post *= shape[i];
    return s;
}

} // namespace

Tensor temporal_shift(const Tensor& h, int64_t d, int time_axis) {
    if (d < 0) throw std::invalid_argument("temporal_shift: negative shift");
    AxisSplit ax = split_at_axis(h.shape(), time_axis, "temporal_shift");
    const auto& xv = h.values();
    std::vector<double> out(xv.size(), 0.0);
    const int64_t t_lo = std::min(d, ax.len);
    for (int64_t p = 0; p < ax.pre; ++p) {
        const double* src = xv.data() + p * ax.len * ax.post;
        double* dst = out.data() + p * ax.len * ax.post;
        for (int64_t t = t_lo; t < ax.len; ++t)
            std::memcpy(dst + t * ax.post, src + (t - d) * ax.post,
                        static_cast<size_t>(ax.post) * sizeof(double));
    }
    bool track = should_record({&h});
    Tensor y = make_output(h.shape(), std::move(out), track);
    if (track) {
        auto xi = h.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, ax, d]() {
            if (!xi->requires_grad) return;
            for (int64_t p = 0; p < ax.pre; ++p) {
                const double* gy = yi->grad.data() + p * ax.len * ax.post;
                double* gx = xi->grad.data() + p * ax.len * ax.post;
                for (int64_t t = 0; t + d < ax.len; ++t)
                    for (int64_t q = 0; q < ax.post; ++q)
                        gx[t * ax.post + q] += gy[(t + d) * ax.post + q];
            }
        });
    }
    return y;
}

Tensor temporal_shift(const Tensor& h, int64_t d) {
    return temporal_shift(h, d, h.rank() >= 2 ? 1 : 0);
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate " + std::to_string(rate) +
                                    " outside [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const auto& xv = x.values();
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        (*mask)[i] = uniform(rng) < rate ? 0.0 : keep_scale;
        out[i] = xv[i] * (*mask)[i];
    }
    bool track = should_record({&x});
    Tensor y = make_output(x.shape(), std::move(out), track);
    if (track) {
        auto xi = x.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, mask]() {
            if (!xi->requires_grad) return;
            for (size_t i = 0; i < xi->grad.size(); ++i)
                xi->grad[i] += yi->grad[i] * (*mask)[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = parts[0].shape();
    int64_t total_len = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != static_cast<int>(first.size()))
            shape_error("concat", first, p.shape());
        for (int i = 0; i < p.rank(); ++i)
            if (i != axis && p.dim(i) != first[static_cast<size_t>(i)])
                shape_error("concat", first, p.shape());
        total_len += p.dim(axis);
    }
    Shape out_shape = first;
    out_shape[static_cast<size_t>(axis)] = total_len;
    AxisSplit out_ax = split_at_axis(out_shape, axis, "concat");

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> offsets; // running start of each part along the axis
    int64_t run = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(run);
        AxisSplit pax = split_at_axis(p.shape(), axis, "concat");
        const double* src = p.values().data();
        for (int64_t pre = 0; pre < pax.pre; ++pre)
            std::memcpy(out.data() + (pre * out_ax.len + run) * out_ax.post,
                        src + pre * pax.len * pax.post,
                        static_cast<size_t>(pax.len * pax.post) * sizeof(double));
        run += pax.len;
    }

    bool track = false;
    for (const Tensor& p : parts)
        if (should_record({&p})) track = true;
    Tensor y = make_output(out_shape, std::move(out), track);
    if (track) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto yi = y.impl();
        g_active_tape->record([impls, yi, offsets, out_ax, axis]() {
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                auto& xi = impls[pi];
                if (!xi->requires_grad) continue;
                AxisSplit pax = split_at_axis(xi->shape, axis, "concat");
                const int64_t off = offsets[pi];
                for (int64_t pre = 0; pre < pax.pre; ++pre) {
                    const double* gy =
                        yi->grad.data() + (pre * out_ax.len + off) * out_ax.post;
                    double* gx = xi->grad.data() + pre * pax.len * pax.post;
                    for (int64_t i = 0; i < pax.len * pax.post; ++i) gx[i] += gy[i];
                }
            }
        });
    }
    return y;
}

Tensor select(const Tensor& x, int axis, int64_t index) {
    AxisSplit ax = split_at_axis(x.shape(), axis, "select");
    if (index < 0 || index >= ax.len)
        throw std::invalid_argument("select: index " + std::to_string(index) +
                                    " out of range [0, " + std::to_string(ax.len) + ")");
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1); // selecting from a vector yields a scalar

    std::vector<double> out(static_cast<size_t>(ax.pre * ax.post));
    const double* src = x.values().data();
    for (int64_t p = 0; p < ax.pre; ++p)
        std::memcpy(out.data() + p * ax.post, src + (p * ax.len + index) * ax.post,
                    static_cast<size_t>(ax.post) * sizeof(double));

    bool track = should_record({&x});
    Tensor y = make_output(out_shape, std::move(out), track);
    if (track) {
        auto xi = x.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, ax, index]() {
            if (!xi->requires_grad) return;
            for (int64_t p = 0; p < ax.pre; ++p) {
                const double* gy = yi->grad.data() + p * ax.post;
                double* gx = xi->grad.data() + (p * ax.len + index) * ax.post;
                for (int64_t q = 0; q < ax.post; ++q) gx[q] += gy[q];
            }
        });
    }
    return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) +
                                    " as " + shape_to_string(shape));
    bool track = should_record({&x});
    Tensor y = make_output(std::move(shape), x.values(), track);
    if (track) {
        auto xi = x.impl(), yi = y.impl();
        g_active_tape->record([xi, yi]() {
            if (!xi->requires_grad) return;
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
        });
    }
    return y;
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[static_cast<size_t>(i)] =
            strides[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return strides;
}

// Maps each element of the axis-swapped output to its source index.
template <class F>
void for_each_swapped(const Shape& out_shape, const std::vector<int64_t>& src_strides, F&& f) {
    int rank = static_cast<int>(out_shape.size());
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t total = shape_numel(out_shape);
    int64_t src = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, src);
        for (int ax = rank - 1; ax >= 0; --ax) {
            size_t u = static_cast<size_t>(ax);
            ++idx[u];
            src += src_strides[u];
            if (idx[u] < out_shape[u]) break;
            src -= src_strides[u] * out_shape[u];
            idx[u] = 0;
        }
    }
}

} // namespace

Tensor swap_axes(const Tensor& x, int axis_a, int axis_b) {
    const int r = x.rank();
    if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r)
        throw std::invalid_argument("swap_axes: axis out of range for shape " +
                                    shape_to_string(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);
    std::vector<int64_t> src_strides = row_major_strides(x.shape());
    std::swap(src_strides[static_cast<size_t>(axis_a)], src_strides[static_cast<size_t>(axis_b)]);

    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for_each_swapped(out_shape, src_strides,
                     [&](int64_t i, int64_t s) { out[static_cast<size_t>(i)] = xv[static_cast<size_t>(s)]; });

    bool track = should_record({&x});
    Tensor y = make_output(out_shape, std::move(out), track);
    if (track) {
        auto xi = x.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, out_shape, src_strides]() {
            if (!xi->requires_grad) return;
            for_each_swapped(out_shape, src_strides, [&](int64_t i, int64_t s) {
                xi->grad[static_cast<size_t>(s)] += yi->grad[static_cast<size_t>(i)];
            });
        });
    }
    return y;
}

namespace {

Tensor reduce_all(const Tensor& x, bool take_mean) {
    const auto& xv = x.values();
    double total = 0.0;
    for (double v : xv) total += v;
    const double factor = take_mean ? 1.0 / static_cast<double>(xv.size()) : 1.0;
    bool track = should_record({&x});
    Tensor y = make_output({1}, {total * factor}, track);
    if (track) {
        auto xi = x.impl(), yi = y.impl();
        g_active_tape->record([xi, yi, factor]() {
            if (!xi->requires_grad) return;
            const double g = yi->grad[0] * factor;
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
        });
    }
    return y;
}

} // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, false); }
Tensor mean(const Tensor& x) { return reduce_all(x, true); }

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

std::vector<double>& AdamState::moment(bool second, const std::string& name, size_t size) {
    auto& table = second ? second_moment : first_moment;
    for (auto& [k, v] : table)
        if (k == name) return v;
    table.emplace_back(name, std::vector<double>(size, 0.0));
    return table.back().second;
}

void adam_step(ParamSet& params, AdamState& state) {
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (NamedTensor& p : params) {
        if (!p.tensor.requires_grad())
            throw std::runtime_error("adam_step: parameter '" + p.name + "' has no gradient");
        const auto& g = p.tensor.grad();
        auto& w = p.tensor.mutable_values();
        auto& m = state.moment(false, p.name, g.size());
        auto& v = state.moment(true, p.name, g.size());
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            w[i] -= state.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
        }
    }
}

double clip_global_norm(ParamSet& params, double clip) {
    double sq = 0.0;
    for (NamedTensor& p : params)
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        const double s = clip / norm;
        for (NamedTensor& p : params)
            for (double& g : p.tensor.grad()) g *= s;
    }
    return norm;
}

} // namespace dtmp
