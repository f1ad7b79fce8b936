#pragma once

// Central finite-difference oracle for gradient tests. Kept independent of
// the tape's backward pass: it only ever calls forward evaluations.

#include <cmath>
#include <functional>
#include <vector>

namespace fam::testing {

inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> x, double h = 1e-4) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline bool grad_close(double analytic, double fd, double rel = 1e-3, double abs_floor = 1e-6) {
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    return std::abs(analytic - fd) <= std::max(abs_floor, rel * scale);
}

}  // namespace fam::testing
