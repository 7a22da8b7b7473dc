#include "msgode/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>
#include <utility>

#include "msgode/errors.hpp"

namespace msgode::ad {

namespace {
thread_local bool g_grad_enabled = true;
thread_local const char* g_stage = nullptr;

std::string err_where(const char* op) {
    std::string s(op);
    if (g_stage) s += std::string(" (stage: ") + g_stage + ")";
    return s;
}

Var make_node(Tensor value, const char* op, std::vector<Var> inputs,
              std::function<void(Node&)> backward_fn) {
    value.check_finite(err_where(op));
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const Var& v : inputs) needs = needs || v.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const Var& v : inputs) n->parents.push_back(v.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(n));
}
}  // namespace

void Node::accumulate(const Matrix& g) {
    if (!has_grad) {
        grad = Tensor::zeros_like(value);
        has_grad = true;
    }
    grad.mat() += g;
}

void Node::zero_grad() {
    grad = Tensor();
    has_grad = false;
}

Var Var::leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var Var::constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->op = "const";
    return Var(std::move(n));
}

Tensor Var::grad() const {
    if (n_->has_grad) return n_->grad;
    return Tensor::zeros_like(n_->value);
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

ScopedStage::ScopedStage(const char* name) : prev(g_stage) { g_stage = name; }
ScopedStage::~ScopedStage() { g_stage = prev; }
const char* current_stage() { return g_stage; }

// ---- elementwise ----------------------------------------------------------

namespace {
void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw NumericError(std::string(op) + ": shape mismatch");
}
}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.value());
    out.mat() += b.value().mat();
    return make_node(std::move(out), "add", {a, b}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.mat());
        n.parents[1]->accumulate(n.grad.mat());
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.value());
    out.mat() -= b.value().mat();
    return make_node(std::move(out), "sub", {a, b}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.mat());
        n.parents[1]->accumulate(-n.grad.mat());
    });
}

Var neg(const Var& a) {
    Tensor out(a.value());
    out.mat() = -out.mat();
    return make_node(std::move(out), "neg", {a},
                     [](Node& n) { n.parents[0]->accumulate(-n.grad.mat()); });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.value());
    out.mat().array() *= b.value().mat().array();
    return make_node(std::move(out), "mul", {a, b}, [](Node& n) {
        n.parents[0]->accumulate(
            (n.grad.mat().array() * n.parents[1]->value.mat().array()).matrix());
        n.parents[1]->accumulate(
            (n.grad.mat().array() * n.parents[0]->value.mat().array()).matrix());
    });
}

Var scale(const Var& a, double c) {
    Tensor out(a.value());
    out.mat() *= c;
    return make_node(std::move(out), "scale", {a},
                     [c](Node& n) { n.parents[0]->accumulate(c * n.grad.mat()); });
}

Var add_scalar(const Var& a, double c) {
    Tensor out(a.value());
    out.mat().array() += c;
    return make_node(std::move(out), "add_scalar", {a},
                     [](Node& n) { n.parents[0]->accumulate(n.grad.mat()); });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Matrix& A = a.value().mat();
    const Matrix& B = b.value().mat();
    Eigen::Index ak = trans_a ? A.rows() : A.cols();
    Eigen::Index bk = trans_b ? B.cols() : B.rows();
    if (ak != bk) throw NumericError("matmul: inner dimension mismatch");
    Matrix C;
    if (!trans_a && !trans_b) C = A * B;
    else if (trans_a && !trans_b) C = A.transpose() * B;
    else if (!trans_a && trans_b) C = A * B.transpose();
    else C = A.transpose() * B.transpose();
    return make_node(Tensor::from_matrix(std::move(C)), "matmul", {a, b},
                     [trans_a, trans_b](Node& n) {
                         const Matrix& G = n.grad.mat();
                         const Matrix& A = n.parents[0]->value.mat();
                         const Matrix& B = n.parents[1]->value.mat();
                         if (!trans_a && !trans_b) {
                             n.parents[0]->accumulate(G * B.transpose());
                             n.parents[1]->accumulate(A.transpose() * G);
                         } else if (trans_a && !trans_b) {
                             n.parents[0]->accumulate(B * G.transpose());
                             n.parents[1]->accumulate(A * G);
                         } else if (!trans_a && trans_b) {
                             n.parents[0]->accumulate(G * B);
                             n.parents[1]->accumulate(G.transpose() * A);
                         } else {
                             n.parents[0]->accumulate(B.transpose() * G.transpose());
                             n.parents[1]->accumulate(G.transpose() * A.transpose());
                         }
                     });
}

Var concat_cols(const Var& a, const Var& b) {
    const Matrix& A = a.value().mat();
    const Matrix& B = b.value().mat();
    if (A.rows() != B.rows()) throw NumericError("concat_cols: row count mismatch");
    Matrix C(A.rows(), A.cols() + B.cols());
    C.leftCols(A.cols()) = A;
    C.rightCols(B.cols()) = B;
    Eigen::Index na = A.cols();
    return make_node(Tensor::from_matrix(std::move(C)), "concat_cols", {a, b},
                     [na](Node& n) {
                         const Matrix& G = n.grad.mat();
                         n.parents[0]->accumulate(G.leftCols(na));
                         n.parents[1]->accumulate(G.rightCols(G.cols() - na));
                     });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index len) {
    const Matrix& A = a.value().mat();
    if (begin < 0 || len < 0 || begin + len > A.cols())
        throw NumericError("slice_cols: range out of bounds");
    Matrix C = A.middleCols(begin, len);
    return make_node(Tensor::from_matrix(std::move(C)), "slice_cols", {a},
                     [begin, len](Node& n) {
                         Matrix g = Matrix::Zero(n.parents[0]->value.rows(),
                                                 n.parents[0]->value.cols());
                         g.middleCols(begin, len) = n.grad.mat();
                         n.parents[0]->accumulate(g);
                     });
}

Var stack_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("stack_rows: no inputs");
    Eigen::Index total = 0, cols = parts[0].value().cols();
    for (const Var& p : parts) {
        if (p.value().cols() != cols) throw NumericError("stack_rows: column mismatch");
        total += p.value().rows();
    }
    Matrix C(total, cols);
    Eigen::Index r = 0;
    std::vector<Eigen::Index> offsets;
    offsets.reserve(parts.size());
    for (const Var& p : parts) {
        offsets.push_back(r);
        C.middleRows(r, p.value().rows()) = p.value().mat();
        r += p.value().rows();
    }
    std::vector<Var> in(parts.begin(), parts.end());
    return make_node(Tensor::from_matrix(std::move(C)), "stack_rows", std::move(in),
                     [offsets](Node& n) {
                         for (size_t i = 0; i < n.parents.size(); ++i) {
                             Eigen::Index rows = n.parents[i]->value.rows();
                             n.parents[i]->accumulate(n.grad.mat().middleRows(offsets[i], rows));
                         }
                     });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
    const Matrix& A = a.value().mat();
    Matrix C(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= A.rows()) throw NumericError("gather_rows: index out of range");
        C.row(static_cast<Eigen::Index>(i)) = A.row(idx[i]);
    }
    return make_node(Tensor::from_matrix(std::move(C)), "gather_rows", {a},
                     [idx](Node& n) {
                         Matrix g = Matrix::Zero(n.parents[0]->value.rows(),
                                                 n.parents[0]->value.cols());
                         const Matrix& G = n.grad.mat();
                         for (size_t i = 0; i < idx.size(); ++i)
                             g.row(idx[i]) += G.row(static_cast<Eigen::Index>(i));
                         n.parents[0]->accumulate(g);
                     });
}

Var scatter_sum_rows(const Var& a, const std::vector<int>& segment, Eigen::Index n_segments) {
    const Matrix& A = a.value().mat();
    if (static_cast<Eigen::Index>(segment.size()) != A.rows())
        throw NumericError("scatter_sum_rows: segment size mismatch");
    Matrix C = Matrix::Zero(n_segments, A.cols());
    for (size_t i = 0; i < segment.size(); ++i) {
        if (segment[i] < 0 || segment[i] >= n_segments)
            throw NumericError("scatter_sum_rows: segment id out of range");
        C.row(segment[i]) += A.row(static_cast<Eigen::Index>(i));
    }
    return make_node(Tensor::from_matrix(std::move(C)), "scatter_sum_rows", {a},
                     [segment](Node& n) {
                         const Matrix& G = n.grad.mat();
                         Matrix g(static_cast<Eigen::Index>(segment.size()), G.cols());
                         for (size_t i = 0; i < segment.size(); ++i)
                             g.row(static_cast<Eigen::Index>(i)) = G.row(segment[i]);
                         n.parents[0]->accumulate(g);
                     });
}

Var row_dot(const Var& a, const Var& b) {
    require_same_shape(a, b, "row_dot");
    const Matrix& A = a.value().mat();
    const Matrix& B = b.value().mat();
    Vector d = (A.array() * B.array()).rowwise().sum().matrix();
    return make_node(Tensor::from_vector(d), "row_dot", {a, b}, [](Node& n) {
        const Matrix& A = n.parents[0]->value.mat();
        const Matrix& B = n.parents[1]->value.mat();
        const Matrix& G = n.grad.mat();  // [n,1]
        n.parents[0]->accumulate((B.array().colwise() * G.col(0).array()).matrix());
        n.parents[1]->accumulate((A.array().colwise() * G.col(0).array()).matrix());
    });
}

Var mul_rows(const Var& a, const Var& s) {
    const Matrix& A = a.value().mat();
    const Matrix& S = s.value().mat();
    if (s.value().rank() != 1 || S.rows() != A.rows())
        throw NumericError("mul_rows: scale must be rank-1 with matching rows");
    Matrix C = (A.array().colwise() * S.col(0).array()).matrix();
    return make_node(Tensor::from_matrix(std::move(C)), "mul_rows", {a, s}, [](Node& n) {
        const Matrix& A = n.parents[0]->value.mat();
        const Matrix& S = n.parents[1]->value.mat();
        const Matrix& G = n.grad.mat();
        n.parents[0]->accumulate((G.array().colwise() * S.col(0).array()).matrix());
        n.parents[1]->accumulate((G.array() * A.array()).rowwise().sum().matrix());
    });
}

// ---- nonlinearities -------------------------------------------------------

Var relu(const Var& a) {
    Tensor out(a.value());
    out.mat() = out.mat().cwiseMax(0.0);
    return make_node(std::move(out), "relu", {a}, [](Node& n) {
        const Matrix& X = n.parents[0]->value.mat();
        n.parents[0]->accumulate(
            (n.grad.mat().array() * (X.array() > 0.0).cast<double>()).matrix());
    });
}

Var tanh_v(const Var& a) {
    Tensor out(a.value());
    out.mat() = out.mat().array().tanh().matrix();
    return make_node(std::move(out), "tanh", {a}, [](Node& n) {
        const Matrix& Y = n.value.mat();
        n.parents[0]->accumulate((n.grad.mat().array() * (1.0 - Y.array().square())).matrix());
    });
}

Var exp_v(const Var& a) {
    Tensor out(a.value());
    out.mat() = out.mat().array().exp().matrix();
    return make_node(std::move(out), "exp", {a}, [](Node& n) {
        n.parents[0]->accumulate((n.grad.mat().array() * n.value.mat().array()).matrix());
    });
}

Var log_v(const Var& a) {
    Tensor out(a.value());
    out.mat() = out.mat().array().log().matrix();
    return make_node(std::move(out), "log", {a}, [](Node& n) {
        n.parents[0]->accumulate(
            (n.grad.mat().array() / n.parents[0]->value.mat().array()).matrix());
    });
}

Var square(const Var& a) {
    Tensor out(a.value());
    out.mat() = out.mat().array().square().matrix();
    return make_node(std::move(out), "square", {a}, [](Node& n) {
        n.parents[0]->accumulate(
            (2.0 * n.grad.mat().array() * n.parents[0]->value.mat().array()).matrix());
    });
}

Var softmax(const Var& a) {
    if (a.value().rank() != 1) throw NumericError("softmax: rank-1 input required");
    Vector v = a.value().mat().col(0);
    Vector y = (v.array() - v.maxCoeff()).exp().matrix();
    y /= y.sum();
    return make_node(Tensor::from_vector(y), "softmax", {a}, [](Node& n) {
        const Vector y = n.value.mat().col(0);
        const Vector g = n.grad.mat().col(0);
        double dot = y.dot(g);
        n.parents[0]->accumulate(((g.array() - dot) * y.array()).matrix());
    });
}

Var segment_softmax(const Var& logits, const std::vector<int>& segment,
                    Eigen::Index n_segments) {
    if (logits.value().rank() != 1) throw NumericError("segment_softmax: rank-1 input required");
    const Matrix& L = logits.value().mat();
    if (static_cast<Eigen::Index>(segment.size()) != L.rows())
        throw NumericError("segment_softmax: segment size mismatch");
    Vector mx = Vector::Constant(n_segments, -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < segment.size(); ++i)
        mx[segment[i]] = std::max(mx[segment[i]], L(static_cast<Eigen::Index>(i), 0));
    Vector y(L.rows());
    Vector denom = Vector::Zero(n_segments);
    for (size_t i = 0; i < segment.size(); ++i) {
        y[static_cast<Eigen::Index>(i)] = std::exp(L(static_cast<Eigen::Index>(i), 0) - mx[segment[i]]);
        denom[segment[i]] += y[static_cast<Eigen::Index>(i)];
    }
    for (size_t i = 0; i < segment.size(); ++i) y[static_cast<Eigen::Index>(i)] /= denom[segment[i]];
    return make_node(Tensor::from_vector(y), "segment_softmax", {logits},
                     [segment, n_segments](Node& n) {
                         const Vector y = n.value.mat().col(0);
                         const Vector g = n.grad.mat().col(0);
                         Vector seg_dot = Vector::Zero(n_segments);
                         for (size_t i = 0; i < segment.size(); ++i)
                             seg_dot[segment[i]] += y[static_cast<Eigen::Index>(i)] * g[static_cast<Eigen::Index>(i)];
                         Vector dv(y.size());
                         for (size_t i = 0; i < segment.size(); ++i)
                             dv[static_cast<Eigen::Index>(i)] =
                                 y[static_cast<Eigen::Index>(i)] *
                                 (g[static_cast<Eigen::Index>(i)] - seg_dot[segment[i]]);
                         n.parents[0]->accumulate(dv);
                     });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out(a.value());
    out.mat() = out.mat().cwiseMax(lo).cwiseMin(hi);
    return make_node(std::move(out), "clamp", {a}, [lo, hi](Node& n) {
        const Matrix& X = n.parents[0]->value.mat();
        Matrix mask = ((X.array() > lo) && (X.array() < hi)).cast<double>().matrix();
        n.parents[0]->accumulate((n.grad.mat().array() * mask.array()).matrix());
    });
}

Var sum(const Var& a) {
    double s = a.value().mat().sum();
    return make_node(Tensor::scalar(s), "sum", {a}, [](Node& n) {
        double g = n.grad.mat()(0, 0);
        n.parents[0]->accumulate(
            Matrix::Constant(n.parents[0]->value.rows(), n.parents[0]->value.cols(), g));
    });
}

Var straight_through(const Var& x, Tensor forward_value) {
    if (!x.value().same_shape(forward_value))
        throw NumericError("straight_through: forward value shape mismatch");
    return make_node(std::move(forward_value), "straight_through", {x},
                     [](Node& n) { n.parents[0]->accumulate(n.grad.mat()); });
}

// ---- backward -------------------------------------------------------------

void backward(const Var& root) {
    if (!root.defined() || root.value().rank() != 0)
        throw NumericError("backward requires scalar output");
    if (!root.requires_grad()) return;  // no trainable leaves reachable

    // iterative post-order DFS; reverse gives a valid topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->accumulate(Matrix::Constant(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

}  // namespace msgode::ad
