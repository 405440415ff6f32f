#pragma once

#include <functional>
#include <string>
#include <vector>

#include "samtl/tensor.hpp"

namespace samtl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double tol = 0.0;
  long checked = 0;
  std::string worst;  // "input i elem j: analytic a vs numeric n"
  bool pass = false;
};

// f must return a scalar tensor and be deterministic across calls
// (reseed any RNG it uses per call). Checks every element of every
// input against central differences.
using GradFn =
    std::function<Tensor<double>(Tape<double>&, std::vector<Tensor<double>>&)>;

inline double relative_error(double a, double n) {
  return std::abs(a - n) / (std::max(std::abs(a), std::abs(n)) + 1e-3);
}

inline GradCheckReport grad_check(const GradFn& f,
                                  std::vector<Tensor<double>> inputs,
                                  double tol, double h = 1e-4) {
  GradCheckReport report;
  report.tol = tol;
  for (auto& in : inputs) in.set_requires_grad(true);

  Tape<double> tape;
  Tensor<double> loss = f(tape, inputs);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.push_back(in.grad());

  Tape<double> silent(false);
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int j = 0; j < inputs[i].size(); ++j) {
      double saved = inputs[i].data()[j];
      inputs[i].data()[j] = saved + h;
      double up = f(silent, inputs).item();
      inputs[i].data()[j] = saved - h;
      double down = f(silent, inputs).item();
      inputs[i].data()[j] = saved;
      double numeric = (up - down) / (2 * h);
      double a = analytic[i][static_cast<size_t>(j)];
      double rel = relative_error(a, numeric);
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "input " + std::to_string(i) + " elem " +
                       std::to_string(j) + ": analytic " + std::to_string(a) +
                       " vs numeric " + std::to_string(numeric);
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

// Spot-checks `samples` randomly chosen elements; for large inputs
// such as full model parameter sets.
inline GradCheckReport grad_check_sampled(const GradFn& f,
                                          std::vector<Tensor<double>> inputs,
                                          int samples, Rng& rng, double tol,
                                          double h = 1e-4) {
  GradCheckReport report;
  report.tol = tol;
  for (auto& in : inputs) in.set_requires_grad(true);

  Tape<double> tape;
  Tensor<double> loss = f(tape, inputs);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.push_back(in.grad());

  long total = 0;
  for (const auto& in : inputs) total += in.size();
  Tape<double> silent(false);
  for (int s = 0; s < samples; ++s) {
    long flat = static_cast<long>(rng.uniform_index(static_cast<size_t>(total)));
    size_t i = 0;
    while (flat >= inputs[i].size()) {
      flat -= inputs[i].size();
      ++i;
    }
    int j = static_cast<int>(flat);
    double saved = inputs[i].data()[j];
    inputs[i].data()[j] = saved + h;
    double up = f(silent, inputs).item();
    inputs[i].data()[j] = saved - h;
    double down = f(silent, inputs).item();
    inputs[i].data()[j] = saved;
    double numeric = (up - down) / (2 * h);
    double a = analytic[i][static_cast<size_t>(j)];
    double rel = relative_error(a, numeric);
    ++report.checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = "input " + std::to_string(i) + " elem " +
                     std::to_string(j) + ": analytic " + std::to_string(a) +
                     " vs numeric " + std::to_string(numeric);
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace samtl
