#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// Everything is templated on the scalar type: the model runs in float, the
// finite-difference oracles in tests instantiate the same code in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lbs/error.hpp"

namespace lbs::diff {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

template <class T>
class BasicTensor {
public:
    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_size(shape_), fill);
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_size(shape_))
            throw ContractError("diffcore", "tensor data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_str(shape_));
    }

    static BasicTensor vector(std::vector<T> values) {
        Shape s{static_cast<int>(values.size())};
        return BasicTensor(std::move(s), std::move(values));
    }
    static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    /// Length of the last axis.
    int cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
    /// Product of all leading axes.
    int rows() const noexcept { return cols() == 0 ? 0 : static_cast<int>(size() / cols()); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T item() const { return data_.at(0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_shape() const {
        for (int d : shape_)
            if (d <= 0) throw ContractError("diffcore", "non-positive tensor extent in " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// ---------------------------------------------------------------------------
// Parameters

enum class ParamKind { Weight, Bias, Embedding, Gain };

struct ParamId {
    std::size_t index = 0;
};

template <class T>
class BasicParamRegistry {
public:
    ParamId declare(std::string name, Shape shape, ParamKind kind) {
        if (index_.count(name)) throw ContractError("params", "duplicate parameter '" + name + "'");
        ParamId id{names_.size()};
        index_.emplace(name, id.index);
        names_.push_back(std::move(name));
        kinds_.push_back(kind);
        values_.emplace_back(shape);
        grads_.emplace_back(std::move(shape));
        return id;
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    ParamKind kind(std::size_t i) const { return kinds_.at(i); }

    BasicTensor<T>& value(ParamId id) { return values_.at(id.index); }
    const BasicTensor<T>& value(ParamId id) const { return values_.at(id.index); }
    BasicTensor<T>& value(std::size_t i) { return values_.at(i); }
    const BasicTensor<T>& value(std::size_t i) const { return values_.at(i); }
    BasicTensor<T>& grad(ParamId id) { return grads_.at(id.index); }
    const BasicTensor<T>& grad(ParamId id) const { return grads_.at(id.index); }
    BasicTensor<T>& grad(std::size_t i) { return grads_.at(i); }
    const BasicTensor<T>& grad(std::size_t i) const { return grads_.at(i); }

    std::optional<ParamId> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return ParamId{it->second};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    void zero_grads() {
        for (auto& g : grads_) g.fill(T(0));
    }

    std::vector<BasicTensor<T>> snapshot() const { return values_; }
    void restore(const std::vector<BasicTensor<T>>& values) {
        if (values.size() != values_.size()) throw ContractError("params", "snapshot size mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i].shape() != values_[i].shape())
                throw ContractError("params", "snapshot shape mismatch for '" + names_[i] + "'");
            values_[i] = values[i];
        }
    }

    template <class U>
    BasicParamRegistry<U> cast() const {
        BasicParamRegistry<U> out;
        for (std::size_t i = 0; i < size(); ++i) {
            auto id = out.declare(names_[i], values_[i].shape(), kinds_[i]);
            out.value(id) = values_[i].template cast<U>();
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<ParamKind> kinds_;
    std::vector<BasicTensor<T>> values_;
    std::vector<BasicTensor<T>> grads_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamRegistry = BasicParamRegistry<float>;

template <class T>
void zero_grads(BasicParamRegistry<T>& registry) {
    registry.zero_grads();
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
class BasicTape;

/// Handle to a node on a tape.
template <class T>
struct BasicVar {
    BasicTape<T>* tape = nullptr;
    std::size_t id = 0;

    const BasicTensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
};

template <class T>
class BasicTape {
public:
    using Tensor = BasicTensor<T>;
    using Var = BasicVar<T>;
    using Backward = std::function<void(BasicTape&, std::size_t)>;

    /// Tape without parameters (pure tensor graphs).
    BasicTape() = default;
    /// Training tape: parameter gradients accumulate into the registry.
    explicit BasicTape(BasicParamRegistry<T>& registry, bool record = true)
        : registry_(&registry), mutable_registry_(&registry), record_(record) {}
    /// Evaluation tape over a read-only registry; nothing is recorded.
    explicit BasicTape(const BasicParamRegistry<T>& registry) : registry_(&registry), record_(false) {}

    BasicTape(const BasicTape&) = delete;
    BasicTape& operator=(const BasicTape&) = delete;

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool owns(const Var& v) const noexcept { return v.tape == this && v.id < nodes_.size(); }

    Var constant(Tensor value) { return push_leaf(std::move(value), false); }
    /// Leaf that receives gradients (readable via grad()).
    Var leaf(Tensor value) { return push_leaf(std::move(value), record_); }

    Var param(ParamId id) {
        if (!registry_) throw GraphError("diffcore", "tape has no parameter registry");
        if (id.index >= registry_->size()) throw GraphError("diffcore", "unknown parameter id");
        if (auto it = param_nodes_.find(id.index); it != param_nodes_.end()) return Var{this, it->second};
        Node node;
        node.ref = &registry_->value(id);
        node.op = "param";
        node.is_leaf = true;
        node.requires_grad = record_ && mutable_registry_ != nullptr;
        if (node.requires_grad) node.param_grad = &mutable_registry_->grad(id);
        nodes_.push_back(std::move(node));
        param_nodes_.emplace(id.index, nodes_.size() - 1);
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(const Var& v) const {
        check(v);
        return node_value(v.id);
    }

    /// Gradient of a leaf (or any node after backward); zeros if untouched.
    Tensor grad(const Var& v) const {
        check(v);
        const Node& n = nodes_[v.id];
        if (n.param_grad) return *n.param_grad;
        if (n.grad.size() == node_value(v.id).size()) return n.grad;
        return Tensor(node_value(v.id).shape());
    }

    bool requires_grad(const Var& v) const {
        check(v);
        return nodes_[v.id].requires_grad;
    }

    /// Record a primitive's output. `parents` are node ids already on this tape.
    Var push(Tensor value, std::vector<std::size_t> parents, Backward backward, const char* op) {
        if (!value.all_finite())
            throw NumericError("diffcore", std::string(op) + " produced a non-finite value");
        Node node;
        node.value = std::move(value);
        node.op = op;
        if (record_) {
            for (auto p : parents)
                if (nodes_[p].requires_grad) node.requires_grad = true;
        }
        if (node.requires_grad) {
            node.parents = std::move(parents);
            node.backward = std::move(backward);
        }
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    void backward(const Var& root) {
        if (!owns(root)) throw GraphError("diffcore", "backward root is not on this tape");
        if (node_value(root.id).size() != 1)
            throw ContractError("diffcore", "backward root must be scalar, got shape " +
                                                shape_str(node_value(root.id).shape()));
        if (!nodes_[root.id].requires_grad) return;
        for (std::size_t i = 0; i <= root.id; ++i) {
            Node& n = nodes_[i];
            n.touched = false;
            if (!n.is_leaf) n.grad = Tensor();
        }
        grad_buffer(root.id)[0] += T(1);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.touched || n.is_leaf || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    // --- accessors for backward rules ---

    const Tensor& node_value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.value;
    }
    const Tensor& node_grad(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.param_grad ? *n.param_grad : n.grad;
    }
    /// Gradient buffer of `id`, or nullptr if it does not require grad.
    Tensor* grad_target(std::size_t id) {
        if (!nodes_[id].requires_grad) return nullptr;
        return &grad_buffer(id);
    }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
    const char* op_name(std::size_t id) const { return nodes_[id].op; }

private:
    struct Node {
        Tensor value;
        const Tensor* ref = nullptr;
        Tensor grad;
        Tensor* param_grad = nullptr;
        std::vector<std::size_t> parents;
        Backward backward;
        const char* op = "";
        bool requires_grad = false;
        bool is_leaf = false;
        bool touched = false;
    };

    void check(const Var& v) const {
        if (!owns(v)) throw GraphError("diffcore", "node is not on this tape");
    }

    Var push_leaf(Tensor value, bool requires_grad) {
        if (!value.all_finite()) throw NumericError("diffcore", "leaf holds a non-finite value");
        Node node;
        node.value = std::move(value);
        node.op = "leaf";
        node.is_leaf = true;
        node.requires_grad = requires_grad;
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    Tensor& grad_buffer(std::size_t id) {
        Node& n = nodes_[id];
        n.touched = true;
        if (n.param_grad) return *n.param_grad;
        const Tensor& v = node_value(id);
        if (n.grad.size() != v.size()) n.grad = Tensor(v.shape());
        return n.grad;
    }

    // deque keeps node addresses stable as the tape grows
    std::deque<Node> nodes_;
    const BasicParamRegistry<T>* registry_ = nullptr;
    BasicParamRegistry<T>* mutable_registry_ = nullptr;
    std::unordered_map<std::size_t, std::size_t> param_nodes_;
    bool record_ = true;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
BasicTape<T>& same_tape(const char* op, std::initializer_list<BasicVar<T>> vars) {
    BasicTape<T>* tape = nullptr;
    for (const auto& v : vars) {
        if (!v.tape) throw GraphError("diffcore", std::string(op) + ": null variable");
        if (tape && v.tape != tape) throw GraphError("diffcore", std::string(op) + ": operands on different tapes");
        tape = v.tape;
        if (!tape->owns(v)) throw GraphError("diffcore", std::string(op) + ": node is not on the tape");
    }
    return *tape;
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ContractError("diffcore", std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Elementwise unary op: f(x) and df/dx expressed via (x, y).
template <class T, class F, class D>
BasicVar<T> unary(BasicVar<T> a, const char* op, F f, D dfdx) {
    auto& tape = same_tape<T>(op, {a});
    const auto& x = a.value();
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return tape.push(std::move(y), {a.id},
                     [dfdx](BasicTape<T>& t, std::size_t self) {
                         std::size_t p = t.parents(self)[0];
                         auto* g = t.grad_target(p);
                         if (!g) return;
                         const auto& x = t.node_value(p);
                         const auto& y = t.node_value(self);
                         const auto& gy = t.node_grad(self);
                         for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += gy[i] * dfdx(x[i], y[i]);
                     },
                     op);
}

}  // namespace detail

/// a + b; b may also be a vector matching a's last axis (bias add).
template <class T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("add", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    bool bias = false;
    if (x.shape() != y.shape()) {
        if (y.rank() == 1 && y.size() == static_cast<std::size_t>(x.cols()))
            bias = true;
        else
            detail::shape_error("add", x.shape(), y.shape());
    }
    BasicTensor<T> out = x;
    const std::size_t c = y.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias ? y[i % c] : y[i];
    return tape.push(std::move(out), {a.id, b.id},
                     [bias](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         const auto& g = t.node_grad(self);
                         if (auto* ga = t.grad_target(ps[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                         if (auto* gb = t.grad_target(ps[1])) {
                             const std::size_t c = gb->size();
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bias ? i % c : i] += g[i];
                         }
                     },
                     "add");
}

template <class T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("sub", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.shape() != y.shape()) detail::shape_error("sub", x.shape(), y.shape());
    BasicTensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return tape.push(std::move(out), {a.id, b.id},
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         const auto& g = t.node_grad(self);
                         if (auto* ga = t.grad_target(ps[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                         if (auto* gb = t.grad_target(ps[1]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                     },
                     "sub");
}

/// Elementwise product.
template <class T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("mul", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.shape() != y.shape()) detail::shape_error("mul", x.shape(), y.shape());
    BasicTensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return tape.push(std::move(out), {a.id, b.id},
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         const auto& g = t.node_grad(self);
                         const auto& x = t.node_value(ps[0]);
                         const auto& y = t.node_value(ps[1]);
                         if (auto* ga = t.grad_target(ps[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
                         if (auto* gb = t.grad_target(ps[1]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
                     },
                     "mul");
}

/// Elementwise quotient.
template <class T>
BasicVar<T> div(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("div", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.shape() != y.shape()) detail::shape_error("div", x.shape(), y.shape());
    BasicTensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= y[i];
    return tape.push(std::move(out), {a.id, b.id},
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         const auto& g = t.node_grad(self);
                         const auto& y = t.node_value(ps[1]);
                         const auto& q = t.node_value(self);
                         if (auto* ga = t.grad_target(ps[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / y[i];
                         if (auto* gb = t.grad_target(ps[1]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * q[i] / y[i];
                     },
                     "div");
}

template <class T>
BasicVar<T> scale(BasicVar<T> a, T c) {
    return detail::unary<T>(a, "scale", [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
BasicVar<T> add_scalar(BasicVar<T> a, T c) {
    return detail::unary<T>(a, "add_scalar", [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

/// Matrix product a[m,k] * b[k,n]. A rank-1 `a` is treated as a single row
/// and yields a rank-1 result.
template <class T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("matmul", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.rank() > 2 || y.rank() != 2 || x.cols() != y.shape()[0]) detail::shape_error("matmul", x.shape(), y.shape());
    const int m = x.rows(), k = x.cols(), n = y.cols();
    BasicTensor<T> out(x.rank() == 1 ? Shape{n} : Shape{m, n});
    detail::MapMat<T>(out.data(), m, n).noalias() =
        detail::CMapMat<T>(x.data(), m, k) * detail::CMapMat<T>(y.data(), k, n);
    return tape.push(std::move(out), {a.id, b.id},
                     [m, k, n](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         detail::CMapMat<T> g(t.node_grad(self).data(), m, n);
                         if (auto* ga = t.grad_target(ps[0]))
                             detail::MapMat<T>(ga->data(), m, k).noalias() +=
                                 g * detail::CMapMat<T>(t.node_value(ps[1]).data(), k, n).transpose();
                         if (auto* gb = t.grad_target(ps[1]))
                             detail::MapMat<T>(gb->data(), k, n).noalias() +=
                                 detail::CMapMat<T>(t.node_value(ps[0]).data(), m, k).transpose() * g;
                     },
                     "matmul");
}

/// a[m,k] * b[n,k]^T -> [m,n]. Used for linear layers (W stored [out,in])
/// and attention scores.
template <class T>
BasicVar<T> matmul_nt(BasicVar<T> a, BasicVar<T> b) {
    auto& tape = detail::same_tape<T>("matmul_nt", {a, b});
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.rank() > 2 || y.rank() != 2 || x.cols() != y.cols()) detail::shape_error("matmul_nt", x.shape(), y.shape());
    const int m = x.rows(), k = x.cols(), n = y.rows();
    BasicTensor<T> out(x.rank() == 1 ? Shape{n} : Shape{m, n});
    detail::MapMat<T>(out.data(), m, n).noalias() =
        detail::CMapMat<T>(x.data(), m, k) * detail::CMapMat<T>(y.data(), n, k).transpose();
    return tape.push(std::move(out), {a.id, b.id},
                     [m, k, n](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         detail::CMapMat<T> g(t.node_grad(self).data(), m, n);
                         if (auto* ga = t.grad_target(ps[0]))
                             detail::MapMat<T>(ga->data(), m, k).noalias() +=
                                 g * detail::CMapMat<T>(t.node_value(ps[1]).data(), n, k);
                         if (auto* gb = t.grad_target(ps[1]))
                             detail::MapMat<T>(gb->data(), n, k).noalias() +=
                                 g.transpose() * detail::CMapMat<T>(t.node_value(ps[0]).data(), m, k);
                     },
                     "matmul_nt");
}

/// Concatenation of rank-1 tensors.
template <class T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw ContractError("diffcore", "concat: no operands");
    auto& tape = *parts.front().tape;
    std::vector<std::size_t> ids;
    std::vector<T> data;
    for (const auto& p : parts) {
        detail::same_tape<T>("concat", {parts.front(), p});
        if (p.value().rank() != 1) detail::shape_error("concat", parts.front().shape(), p.shape());
        ids.push_back(p.id);
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    auto out = BasicTensor<T>::vector(std::move(data));
    return tape.push(std::move(out), ids,
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         std::size_t off = 0;
                         for (auto p : t.parents(self)) {
                             const std::size_t n = t.node_value(p).size();
                             if (auto* gp = t.grad_target(p))
                                 for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
                             off += n;
                         }
                     },
                     "concat");
}

/// Stack row blocks: each part is [r_i, c] (or a rank-1 [c] row).
template <class T>
BasicVar<T> concat_rows(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw ContractError("diffcore", "concat_rows: no operands");
    auto& tape = *parts.front().tape;
    const int c = parts.front().value().cols();
    int rows = 0;
    std::vector<std::size_t> ids;
    std::vector<T> data;
    for (const auto& p : parts) {
        detail::same_tape<T>("concat_rows", {parts.front(), p});
        if (p.value().cols() != c || p.value().rank() > 2)
            detail::shape_error("concat_rows", parts.front().shape(), p.shape());
        rows += p.value().rows();
        ids.push_back(p.id);
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    BasicTensor<T> out(Shape{rows, c}, std::move(data));
    return tape.push(std::move(out), ids,
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         std::size_t off = 0;
                         for (auto p : t.parents(self)) {
                             const std::size_t n = t.node_value(p).size();
                             if (auto* gp = t.grad_target(p))
                                 for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
                             off += n;
                         }
                     },
                     "concat_rows");
}

/// Join column blocks: each part is [r, c_i].
template <class T>
BasicVar<T> concat_cols(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw ContractError("diffcore", "concat_cols: no operands");
    auto& tape = *parts.front().tape;
    const int r = parts.front().value().rows();
    int cols = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        detail::same_tape<T>("concat_cols", {parts.front(), p});
        if (p.value().rank() != 2 || p.value().rows() != r)
            detail::shape_error("concat_cols", parts.front().shape(), p.shape());
        cols += p.value().cols();
        ids.push_back(p.id);
    }
    BasicTensor<T> out(Shape{r, cols});
    int off = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (int i = 0; i < r; ++i)
            std::copy_n(v.data() + static_cast<std::size_t>(i) * v.cols(), v.cols(),
                        out.data() + static_cast<std::size_t>(i) * cols + off);
        off += v.cols();
    }
    return tape.push(std::move(out), ids,
                     [r, cols](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         int off = 0;
                         for (auto p : t.parents(self)) {
                             const int c = t.node_value(p).cols();
                             if (auto* gp = t.grad_target(p))
                                 for (int i = 0; i < r; ++i)
                                     for (int j = 0; j < c; ++j)
                                         (*gp)[static_cast<std::size_t>(i) * c + j] +=
                                             g[static_cast<std::size_t>(i) * cols + off + j];
                             off += c;
                         }
                     },
                     "concat_cols");
}

/// Contiguous slice [start, start+len) of a rank-1 tensor.
template <class T>
BasicVar<T> slice(BasicVar<T> a, int start, int len) {
    auto& tape = detail::same_tape<T>("slice", {a});
    const auto& x = a.value();
    if (x.rank() != 1 || start < 0 || len <= 0 || start + len > x.cols())
        throw ContractError("diffcore", "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                            ") out of bounds for shape " + shape_str(x.shape()));
    std::vector<T> d(x.data() + start, x.data() + start + len);
    return tape.push(BasicTensor<T>::vector(std::move(d)), {a.id},
                     [start](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         if (auto* gp = t.grad_target(t.parents(self)[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gp)[start + i] += g[i];
                     },
                     "slice");
}

/// Rows [start, start+len) of a rank-2 tensor.
template <class T>
BasicVar<T> slice_rows(BasicVar<T> a, int start, int len) {
    auto& tape = detail::same_tape<T>("slice_rows", {a});
    const auto& x = a.value();
    if (x.rank() != 2 || start < 0 || len <= 0 || start + len > x.rows())
        throw ContractError("diffcore", "slice_rows: range out of bounds for shape " + shape_str(x.shape()));
    const int c = x.cols();
    std::vector<T> d(x.data() + static_cast<std::size_t>(start) * c,
                     x.data() + static_cast<std::size_t>(start + len) * c);
    return tape.push(BasicTensor<T>(Shape{len, c}, std::move(d)), {a.id},
                     [start, c](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         if (auto* gp = t.grad_target(t.parents(self)[0]))
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 (*gp)[static_cast<std::size_t>(start) * c + i] += g[i];
                     },
                     "slice_rows");
}

/// Columns [start, start+len) of a rank-2 tensor.
template <class T>
BasicVar<T> slice_cols(BasicVar<T> a, int start, int len) {
    auto& tape = detail::same_tape<T>("slice_cols", {a});
    const auto& x = a.value();
    if (x.rank() != 2 || start < 0 || len <= 0 || start + len > x.cols())
        throw ContractError("diffcore", "slice_cols: range out of bounds for shape " + shape_str(x.shape()));
    const int r = x.rows(), c = x.cols();
    BasicTensor<T> out(Shape{r, len});
    for (int i = 0; i < r; ++i)
        std::copy_n(x.data() + static_cast<std::size_t>(i) * c + start, len,
                    out.data() + static_cast<std::size_t>(i) * len);
    return tape.push(std::move(out), {a.id},
                     [r, c, start, len](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         if (auto* gp = t.grad_target(t.parents(self)[0]))
                             for (int i = 0; i < r; ++i)
                                 for (int j = 0; j < len; ++j)
                                     (*gp)[static_cast<std::size_t>(i) * c + start + j] +=
                                         g[static_cast<std::size_t>(i) * len + j];
                     },
                     "slice_cols");
}

template <class T>
BasicVar<T> reshape(BasicVar<T> a, Shape shape) {
    auto& tape = detail::same_tape<T>("reshape", {a});
    const auto& x = a.value();
    if (shape_size(shape) != x.size()) detail::shape_error("reshape", x.shape(), shape);
    BasicTensor<T> out(std::move(shape), x.storage());
    return tape.push(std::move(out), {a.id},
                     [](BasicTape<T>& t, std::size_t self) {
                         const auto& g = t.node_grad(self);
                         if (auto* gp = t.grad_target(t.parents(self)[0]))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
                     },
                     "reshape");
}

template <class T>
BasicVar<T> tanh(BasicVar<T> a) {
    return detail::unary<T>(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
BasicVar<T> sigmoid(BasicVar<T> a) {
    return detail::unary<T>(
        a, "sigmoid",
        [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
BasicVar<T> exp(BasicVar<T> a) {
    return detail::unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
BasicVar<T> log(BasicVar<T> a) {
    return detail::unary<T>(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
BasicVar<T> square(BasicVar<T> a) {
    return detail::unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// GELU, tanh approximation.
template <class T>
BasicVar<T> gelu(BasicVar<T> a) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = T(0.044715);
    return detail::unary<T>(
        a, "gelu",
        [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
        [](T x, T) {
            const T u = k * (x + c * x * x * x);
            const T th = std::tanh(u);
            return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * k * (T(1) + T(3) * c * x * x);
        });
}

/// Elementwise max(a, c) against a constant; gradient passes where a >= c.
template <class T>
BasicVar<T> maximum(BasicVar<T> a, T c) {
    return detail::unary<T>(
        a, "maximum", [c](T x) { return x >= c ? x : c; }, [c](T x, T) { return x >= c ? T(1) : T(0); });
}

/// Elementwise clamp to [lo, hi]; zero gradient outside.
template <class T>
BasicVar<T> clamp(BasicVar<T> a, T lo, T hi) {
    return detail::unary<T>(
        a, "clamp", [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

/// Softmax over the last axis (max-subtracted).
template <class T>
BasicVar<T> softmax(BasicVar<T> a) {
    auto& tape = detail::same_tape<T>("softmax", {a});
    const auto& x = a.value();
    const int r = x.rows(), c = x.cols();
    BasicTensor<T> y(x.shape());
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data() + static_cast<std::size_t>(i) * c;
        T* yi = y.data() + static_cast<std::size_t>(i) * c;
        const T mx = *std::max_element(xi, xi + c);
        T s = 0;
        for (int j = 0; j < c; ++j) s += (yi[j] = std::exp(xi[j] - mx));
        for (int j = 0; j < c; ++j) yi[j] /= s;
    }
    return tape.push(std::move(y), {a.id},
                     [r, c](BasicTape<T>& t, std::size_t self) {
                         auto* gp = t.grad_target(t.parents(self)[0]);
                         if (!gp) return;
                         const auto& y = t.node_value(self);
                         const auto& g = t.node_grad(self);
                         for (int i = 0; i < r; ++i) {
                             const std::size_t o = static_cast<std::size_t>(i) * c;
                             T dot = 0;
                             for (int j = 0; j < c; ++j) dot += g[o + j] * y[o + j];
                             for (int j = 0; j < c; ++j) (*gp)[o + j] += y[o + j] * (g[o + j] - dot);
                         }
                     },
                     "softmax");
}

template <class T>
BasicVar<T> log_softmax(BasicVar<T> a) {
    auto& tape = detail::same_tape<T>("log_softmax", {a});
    const auto& x = a.value();
    const int r = x.rows(), c = x.cols();
    BasicTensor<T> y(x.shape());
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data() + static_cast<std::size_t>(i) * c;
        T* yi = y.data() + static_cast<std::size_t>(i) * c;
        const T mx = *std::max_element(xi, xi + c);
        T s = 0;
        for (int j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
        const T lse = mx + std::log(s);
        for (int j = 0; j < c; ++j) yi[j] = xi[j] - lse;
    }
    return tape.push(std::move(y), {a.id},
                     [r, c](BasicTape<T>& t, std::size_t self) {
                         auto* gp = t.grad_target(t.parents(self)[0]);
                         if (!gp) return;
                         const auto& y = t.node_value(self);
                         const auto& g = t.node_grad(self);
                         for (int i = 0; i < r; ++i) {
                             const std::size_t o = static_cast<std::size_t>(i) * c;
                             T gs = 0;
                             for (int j = 0; j < c; ++j) gs += g[o + j];
                             for (int j = 0; j < c; ++j) (*gp)[o + j] += g[o + j] - std::exp(y[o + j]) * gs;
                         }
                     },
                     "log_softmax");
}

template <class T>
BasicVar<T> sum(BasicVar<T> a) {
    auto& tape = detail::same_tape<T>("sum", {a});
    const auto& x = a.value();
    T s = 0;
    for (T v : x.values()) s += v;
    return tape.push(BasicTensor<T>::scalar(s), {a.id},
                     [](BasicTape<T>& t, std::size_t self) {
                         const T g = t.node_grad(self)[0];
                         if (auto* gp = t.grad_target(t.parents(self)[0]))
                             for (auto& v : gp->values()) v += g;
                     },
                     "sum");
}

template <class T>
BasicVar<T> mean(BasicVar<T> a) {
    const T n = static_cast<T>(a.value().size());
    return scale(sum(a), T(1) / n);
}

/// Gather rows of `table` [V,d] for each id -> [L,d].
template <class T>
BasicVar<T> embedding(BasicVar<T> table, std::span<const int> ids) {
    auto& tape = detail::same_tape<T>("embedding", {table});
    const auto& e = table.value();
    if (e.rank() != 2 || ids.empty()) throw ContractError("diffcore", "embedding: bad table or empty ids");
    const int v = e.rows(), d = e.cols();
    std::vector<int> idv(ids.begin(), ids.end());
    BasicTensor<T> out(Shape{static_cast<int>(idv.size()), d});
    for (std::size_t i = 0; i < idv.size(); ++i) {
        if (idv[i] < 0 || idv[i] >= v)
            throw ContractError("diffcore", "embedding: id " + std::to_string(idv[i]) + " outside table " +
                                                shape_str(e.shape()));
        std::copy_n(e.data() + static_cast<std::size_t>(idv[i]) * d, d, out.data() + i * d);
    }
    return tape.push(std::move(out), {table.id},
                     [idv, d](BasicTape<T>& t, std::size_t self) {
                         auto* gp = t.grad_target(t.parents(self)[0]);
                         if (!gp) return;
                         const auto& g = t.node_grad(self);
                         for (std::size_t i = 0; i < idv.size(); ++i)
                             for (int j = 0; j < d; ++j)
                                 (*gp)[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
                     },
                     "embedding");
}

/// out[i] = a[i, targets[i]] for a [L,V].
template <class T>
BasicVar<T> pick(BasicVar<T> a, std::span<const int> targets) {
    auto& tape = detail::same_tape<T>("pick", {a});
    const auto& x = a.value();
    const int r = x.rows(), c = x.cols();
    if (static_cast<int>(targets.size()) != r)
        throw ContractError("diffcore", "pick: " + std::to_string(targets.size()) + " targets for shape " +
                                            shape_str(x.shape()));
    std::vector<int> tv(targets.begin(), targets.end());
    BasicTensor<T> out(Shape{r});
    for (int i = 0; i < r; ++i) {
        if (tv[i] < 0 || tv[i] >= c) throw ContractError("diffcore", "pick: target out of range");
        out[i] = x[static_cast<std::size_t>(i) * c + tv[i]];
    }
    return tape.push(std::move(out), {a.id},
                     [tv, c](BasicTape<T>& t, std::size_t self) {
                         auto* gp = t.grad_target(t.parents(self)[0]);
                         if (!gp) return;
                         const auto& g = t.node_grad(self);
                         for (std::size_t i = 0; i < tv.size(); ++i) (*gp)[i * c + tv[i]] += g[i];
                     },
                     "pick");
}

/// Layer normalization over the last axis with learned gain and bias.
template <class T>
BasicVar<T> layer_norm(BasicVar<T> a, BasicVar<T> gain, BasicVar<T> bias, T eps = T(1e-5)) {
    auto& tape = detail::same_tape<T>("layer_norm", {a, gain, bias});
    const auto& x = a.value();
    const int r = x.rows(), c = x.cols();
    if (gain.value().size() != static_cast<std::size_t>(c) || bias.value().size() != static_cast<std::size_t>(c))
        detail::shape_error("layer_norm", x.shape(), gain.shape());
    BasicTensor<T> out(x.shape());
    std::vector<T> xhat(x.size()), rstd(r);
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    for (int i = 0; i < r; ++i) {
        const std::size_t o = static_cast<std::size_t>(i) * c;
        T mu = 0;
        for (int j = 0; j < c; ++j) mu += x[o + j];
        mu /= c;
        T var = 0;
        for (int j = 0; j < c; ++j) var += (x[o + j] - mu) * (x[o + j] - mu);
        var /= c;
        rstd[i] = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) {
            xhat[o + j] = (x[o + j] - mu) * rstd[i];
            out[o + j] = xhat[o + j] * gv[j] + bv[j];
        }
    }
    return tape.push(std::move(out), {a.id, gain.id, bias.id},
                     [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](BasicTape<T>& t, std::size_t self) {
                         const auto& ps = t.parents(self);
                         const auto& g = t.node_grad(self);
                         const auto& gv = t.node_value(ps[1]);
                         if (auto* gg = t.grad_target(ps[1]))
                             for (int i = 0; i < r; ++i)
                                 for (int j = 0; j < c; ++j)
                                     (*gg)[j] += g[static_cast<std::size_t>(i) * c + j] * xhat[static_cast<std::size_t>(i) * c + j];
                         if (auto* gb = t.grad_target(ps[2]))
                             for (int i = 0; i < r; ++i)
                                 for (int j = 0; j < c; ++j) (*gb)[j] += g[static_cast<std::size_t>(i) * c + j];
                         if (auto* gx = t.grad_target(ps[0])) {
                             for (int i = 0; i < r; ++i) {
                                 const std::size_t o = static_cast<std::size_t>(i) * c;
                                 T m1 = 0, m2 = 0;
                                 for (int j = 0; j < c; ++j) {
                                     const T dxh = g[o + j] * gv[j];
                                     m1 += dxh;
                                     m2 += dxh * xhat[o + j];
                                 }
                                 m1 /= c;
                                 m2 /= c;
                                 for (int j = 0; j < c; ++j)
                                     (*gx)[o + j] += rstd[i] * (g[o + j] * gv[j] - m1 - xhat[o + j] * m2);
                             }
                         }
                     },
                     "layer_norm");
}

/// Causal mask on square scores [L,L]: entries above the diagonal are
/// replaced by a large negative constant (finite, so softmax gives exact 0).
template <class T>
BasicVar<T> causal_mask(BasicVar<T> a) {
    auto& tape = detail::same_tape<T>("causal_mask", {a});
    const auto& x = a.value();
    if (x.rank() != 2 || x.rows() != x.cols()) detail::shape_error("causal_mask", x.shape(), x.shape());
    const int n = x.rows();
    BasicTensor<T> out = x;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = T(-1e9);
    return tape.push(std::move(out), {a.id},
                     [n](BasicTape<T>& t, std::size_t self) {
                         auto* gp = t.grad_target(t.parents(self)[0]);
                         if (!gp) return;
                         const auto& g = t.node_grad(self);
                         for (int i = 0; i < n; ++i)
                             for (int j = 0; j <= i; ++j)
                                 (*gp)[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i) * n + j];
                     },
                     "causal_mask");
}

template <class T>
void backward(BasicTape<T>& tape, BasicVar<T> root) {
    tape.backward(root);
}

}  // namespace lbs::diff
