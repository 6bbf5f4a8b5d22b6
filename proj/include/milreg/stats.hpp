#pragma once
// Distribution functions for the test statistics: regularized incomplete
// beta via Lentz's continued fraction, and the t / F tail probabilities
// built on it.
namespace milreg {

// Regularized incomplete beta I_x(a, b).
double incbeta(double a, double b, double x);

// Survival function P(T > t) of Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

// Survival function P(F > f) of the F distribution.
double f_dist_sf(double f, double d1, double d2);

// Standard normal survival function P(Z > z).
double normal_sf(double z);

}  // namespace milreg
