#include "agln/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "agln/ops.hpp"

namespace agln {
namespace {

double projected_loss(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs,
                      const Tensor<double>& projection) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  Var<double> out = op(g, vars);
  const double v = sum(mul(out, g.constant(projection))).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, double h, double tol,
                           std::uint64_t projection_seed) {
  for (const auto& t : inputs) {
    if (!t.all_finite()) throw NumericError("grad_check: non-finite input");
  }

  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.parameter(t));
  Var<double> out = op(g, vars);

  std::mt19937_64 rng(projection_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> projection(out.shape());
  for (double& v : projection.values()) v = normal(rng);

  const GradientMap<double> grads = g.backward(sum(mul(out, g.constant(projection))));

  GradCheckReport report;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = grads.at(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      const double step = h * std::max(1.0, std::abs(x));
      probe[k][i] = x + step;
      const double up = projected_loss(op, probe, projection);
      probe[k][i] = x - step;
      const double down = projected_loss(op, probe, projection);
      probe[k][i] = x;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.elements_checked;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace agln
