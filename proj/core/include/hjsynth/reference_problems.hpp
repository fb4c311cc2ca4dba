#pragma once

#include "hjsynth/synthesis.hpp"
#include "hjsynth/system.hpp"

#include <vector>

namespace hjsynth {

// One-dimensional robust-synthesis benchmark with a known closed form:
// f = 0, g, h constant, running cost (q/4) (x^2 e^x + 2 x e^x + 4 x^3)^2 with
// q = g^2/R - h^2/(2 gamma^2 P), whose value function is x^4 + x^2 e^x.
ControlSystem reference_1d_system(double gamma = 2.0, double R = 1.0, double P = 1.0,
                                  double g = 1.0, double h = 0.1);

double reference_1d_value(double x);    // x^4 + x^2 e^x
double reference_1d_control(double x);  // -1/2 (4x^3 + 2x e^x + x^2 e^x)

struct ConvergenceRow {
    int degree = 0;
    double error_v = 0.0;  // relative L2 error of the value function
    double error_u = 0.0;  // relative L2 error of the feedback
    int iterations = 0;    // total policy-evaluation solves
};

// Synthesis at each polynomial degree followed by quadrature of the errors
// against the closed form.
std::vector<ConvergenceRow> reference_1d_convergence(const std::vector<int>& degrees,
                                                     double epsilon = 1e-6,
                                                     double kappa0 = 0.01);

}  // namespace hjsynth
