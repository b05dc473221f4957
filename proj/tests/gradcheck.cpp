#include "gradcheck.hpp"

namespace fous::testing {

Eigen::ArrayXd finite_difference_gradient(
    const std::function<double(const Eigen::ArrayXd&)>& f,
    Eigen::ArrayXd x, double step) {
  Eigen::ArrayXd g(x.size());
  for (long i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const double denom = std::max(std::sqrt((a * a).sum()), 1e-12);
  return std::sqrt(((a - b) * (a - b)).sum()) / denom;
}

}  // namespace fous::testing
