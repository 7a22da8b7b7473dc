#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msgode/tensor.hpp"

namespace msgode::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the compute graph. Parents are the op inputs; backward_fn
// reads this node's accumulated gradient and adds each input's contribution
// to the parents. Leaves have no backward_fn.
struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Matrix& g);
    void zero_grad();
};

// Value-semantics handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var leaf(Tensor v);       // trainable parameter
    static Var constant(Tensor v);   // no gradient ever

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const { return n_->value; }
    // Gradient after backward(); zeros if the leaf was unreachable.
    Tensor grad() const;
    bool requires_grad() const { return n_->requires_grad; }
    void zero_grad() { n_->zero_grad(); }
    // In-place parameter update between steps; the old graph must be dropped first.
    void set_value(Tensor v) { n_->value = std::move(v); }
    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

// While a guard is alive, ops do not record parents or backward functions,
// so intermediates free as soon as they go out of scope.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Label attached to NumericError messages raised while the guard is alive.
struct ScopedStage {
    explicit ScopedStage(const char* name);
    ~ScopedStage();
    const char* prev;
};
const char* current_stage();

// ---- primitives -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);  // elementwise, same shape
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index len);
Var stack_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<int>& idx);
Var scatter_sum_rows(const Var& a, const std::vector<int>& segment, Eigen::Index n_segments);
Var row_dot(const Var& a, const Var& b);          // [n,d] x [n,d] -> rank-1 [n]
Var mul_rows(const Var& a, const Var& s);         // scale row i of a by s[i]
Var relu(const Var& a);
Var tanh_v(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var square(const Var& a);
Var softmax(const Var& a);  // rank-1
Var segment_softmax(const Var& logits, const std::vector<int>& segment, Eigen::Index n_segments);
Var clamp(const Var& a, double lo, double hi);
Var sum(const Var& a);  // -> scalar
// Straight-through: forward takes the supplied value, backward passes the
// incoming gradient to x unchanged.
Var straight_through(const Var& x, Tensor forward_value);

// Reverse-mode sweep from a scalar root. Every reachable node with
// requires_grad receives its accumulated gradient exactly once.
void backward(const Var& root);

// operators used by the generic ODE steppers
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }

inline bool same_shape(const Var& a, const Var& b) { return a.value().same_shape(b.value()); }

}  // namespace msgode::ad
