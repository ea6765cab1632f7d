#include "xst/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xst {

GradCheckReport finite_difference_check(const std::function<Tensor<double>()>& f,
                                        std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f();
    backward(tape, loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].has_grad()) {
        analytic[i].assign(inputs[i].grad().begin(), inputs[i].grad().end());
      } else {
        analytic[i].assign(inputs[i].size(), 0.0);
      }
    }
  }

  // (input, index) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  if (options.max_coordinates && *options.max_coordinates < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(*options.max_coordinates);
  }

  GradCheckReport report;
  NoGradScope<double> no_grad;
  for (auto [i, j] : coords) {
    double& x = inputs[i].mutable_data()[j];
    const double saved = x;
    x = saved + options.step;
    const double up = f().item();
    x = saved - options.step;
    const double down = f().item();
    x = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[i][j];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    ++report.coordinates;
    if (report.coordinates == 1 || err > report.max_error) {
      report.max_error = err;
      report.worst_input = i;
      report.worst_index = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_error <= options.tolerance;

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(previous[i]);
  }
  return report;
}

}  // namespace xst
