#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "msgode/autodiff.hpp"
#include "msgode/rng.hpp"
#include "msgode/tensor.hpp"

namespace msgode::testutil {

inline Tensor rand_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                       double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = rng.uniform(lo, hi);
    return t;
}

inline Tensor rand_vec(Rng& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
    return Tensor::from_vector(v);
}

inline Matrix rand_dense(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                         double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

// Central-difference check of every input gradient of a scalar-valued graph.
// `build` must construct the graph from scratch each call so perturbed
// evaluations see fresh leaves.
inline void expect_gradients_match(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& build,
    const std::vector<Tensor>& inputs, double rel_tol = 1e-5, double h = 1e-6) {
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(ad::Var::leaf(t));
    ad::Var root = build(leaves);
    REQUIRE(root.value().rank() == 0);
    ad::backward(root);

    auto eval_perturbed = [&](size_t which, Eigen::Index i, Eigen::Index j, double v) {
        std::vector<ad::Var> ls;
        ls.reserve(inputs.size());
        for (size_t k = 0; k < inputs.size(); ++k) {
            Tensor t = inputs[k];
            if (k == which) t(i, j) = v;
            ls.push_back(ad::Var::leaf(std::move(t)));
        }
        return build(ls).value().value();
    };

    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor g = leaves[k].grad();
        for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
                double x = inputs[k](i, j);
                double fd = (eval_perturbed(k, i, j, x + h) -
                             eval_perturbed(k, i, j, x - h)) / (2.0 * h);
                double got = g(i, j);
                double scale = std::max({1.0, std::abs(fd), std::abs(got)});
                INFO("input ", k, " entry (", i, ",", j, "): fd=", fd, " analytic=", got);
                CHECK(std::abs(fd - got) <= rel_tol * scale);
            }
        }
    }
}

}  // namespace msgode::testutil
