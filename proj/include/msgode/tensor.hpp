#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "msgode/errors.hpp"

namespace msgode {

// Row-major dense storage; all model math is double precision.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Dense tensor of rank 0, 1 or 2 backed by a row-major Eigen matrix.
// Scalars are stored 1x1, vectors n x 1. The rank only affects shape
// reporting and op conformability checks; storage is always 2-D.
class Tensor {
public:
    Tensor() : m_(0, 0), rank_(2) {}

    static Tensor scalar(double v) {
        Tensor t;
        t.m_.resize(1, 1);
        t.m_(0, 0) = v;
        t.rank_ = 0;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) {
        Tensor t;
        t.m_ = Matrix::Zero(other.rows(), other.cols());
        t.rank_ = other.rank_;
        return t;
    }

    static Tensor zeros(Eigen::Index rows, Eigen::Index cols) {
        Tensor t;
        t.m_ = Matrix::Zero(rows, cols);
        t.rank_ = 2;
        return t;
    }

    static Tensor from_matrix(Matrix m) {
        Tensor t;
        t.m_ = std::move(m);
        t.rank_ = 2;
        return t;
    }

    static Tensor from_vector(const Vector& v) {
        Tensor t;
        t.m_ = v;
        t.rank_ = 1;
        return t;
    }

    static Tensor zero_vector(Eigen::Index n) {
        Tensor t;
        t.m_ = Matrix::Zero(n, 1);
        t.rank_ = 1;
        return t;
    }

    int rank() const { return rank_; }
    Eigen::Index rows() const { return m_.rows(); }
    Eigen::Index cols() const { return m_.cols(); }
    Eigen::Index size() const { return m_.size(); }

    std::vector<Eigen::Index> shape() const {
        switch (rank_) {
            case 0: return {};
            case 1: return {m_.rows()};
            default: return {m_.rows(), m_.cols()};
        }
    }

    bool same_shape(const Tensor& o) const {
        return rank_ == o.rank_ && rows() == o.rows() && cols() == o.cols();
    }

    bool is_scalar() const { return rank_ == 0; }

    double value() const {
        if (rank_ != 0) throw NumericError("Tensor::value on non-scalar tensor");
        return m_(0, 0);
    }

    double& operator()(Eigen::Index i, Eigen::Index j) { return m_(i, j); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    double& operator[](Eigen::Index i) { return m_(i, 0); }
    double operator[](Eigen::Index i) const { return m_(i, 0); }

    Matrix& mat() { return m_; }
    const Matrix& mat() const { return m_; }

    bool all_finite() const { return m_.allFinite(); }

    void check_finite(const std::string& where) const {
        if (!all_finite()) throw NumericError("non-finite values in " + where);
    }

    // arithmetic used by the generic ODE steppers and tests
    Tensor operator+(const Tensor& o) const {
        require_same_shape(o, "Tensor::operator+");
        Tensor t(*this);
        t.m_ += o.m_;
        return t;
    }
    Tensor operator-(const Tensor& o) const {
        require_same_shape(o, "Tensor::operator-");
        Tensor t(*this);
        t.m_ -= o.m_;
        return t;
    }
    Tensor operator*(double c) const {
        Tensor t(*this);
        t.m_ *= c;
        return t;
    }

private:
    void require_same_shape(const Tensor& o, const char* where) const {
        if (!same_shape(o)) throw NumericError(std::string(where) + ": shape mismatch");
    }

    Matrix m_;
    int rank_;
};

inline Tensor operator*(double c, const Tensor& t) { return t * c; }

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.same_shape(b); }

}  // namespace msgode
