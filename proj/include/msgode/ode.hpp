#pragma once

#include <cmath>
#include <vector>

#include "msgode/errors.hpp"

namespace msgode::ode {

// Classic fixed-step RK4. State needs operator+, double*State, and
// f(state, t) -> State; works for both Tensor and autodiff Var states.
template <typename State, typename Deriv>
State rk4_step(Deriv&& f, const State& y, double t, double h) {
    State k1 = f(y, t);
    State k2 = f(y + (h / 2.0) * k1, t + h / 2.0);
    State k3 = f(y + (h / 2.0) * k2, t + h / 2.0);
    State k4 = f(y + h * k3, t + h);
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// March from (y0, t0) landing exactly on every target time; interior steps
// use size h, with a shorter final step onto each target. Targets must be
// non-decreasing and >= t0. A target equal to the current time re-emits the
// current state without stepping.
template <typename State, typename Deriv>
std::vector<State> integrate(Deriv&& f, const State& y0, double t0,
                             const std::vector<double>& targets, double h) {
    if (!(h > 0.0)) throw NumericError("integrate: step size must be positive");
    std::vector<State> out;
    out.reserve(targets.size());
    State y = y0;
    double t = t0;
    constexpr double eps = 1e-12;
    for (double target : targets) {
        if (target < t - 1e-9)
            throw NumericError("integrate: target times must be non-decreasing");
        while (target - t > eps) {
            // absorb a sub-ulp overshoot into the final step instead of
            // emitting a degenerate extra step
            double step = (target - t <= h * (1.0 + 1e-9)) ? (target - t) : h;
            y = rk4_step(f, y, t, step);
            t += step;
        }
        t = target;
        out.push_back(y);
    }
    return out;
}

}  // namespace msgode::ode
