#include "invsen/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "invsen/error.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::numkit {

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const std::span<double>> params,
                                  std::span<const std::span<const double>> grads, double tolerance,
                                  const GradCheckOptions& options) {
    if (params.size() != grads.size()) throw Error(ErrorKind::shape, "finite_diff_check: tensor count mismatch");
    auto evaluate = [&] {
        const double value = loss();
        if (!std::isfinite(value)) throw Error(ErrorKind::numerical, "finite_diff_check: non-finite loss");
        return value;
    };
    evaluate();

    GradCheckReport report;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size() != grads[t].size()) {
            throw Error(ErrorKind::shape, "finite_diff_check: tensor " + std::to_string(t) + " shape mismatch");
        }
        std::vector<std::size_t> coords(params[t].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
            auto perm = rng.permutation(coords.size());
            perm.resize(options.max_coords_per_tensor);
            std::sort(perm.begin(), perm.end());
            coords = std::move(perm);
        }
        for (const std::size_t j : coords) {
            double& p = params[t][j];
            const double saved = p;
            const double h = options.relative_step * std::max(1.0, std::abs(saved));
            p = saved + h;
            const double up = evaluate();
            p = saved - h;
            const double down = evaluate();
            p = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[t][j];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), options.denominator_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.checked;
            if (rel >= report.max_rel_err) {
                report.max_rel_err = rel;
                std::ostringstream os;
                os << "tensor " << t << "[" << j << "]: analytic=" << analytic << ", numeric=" << numeric;
                report.worst = os.str();
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace invsen::numkit
