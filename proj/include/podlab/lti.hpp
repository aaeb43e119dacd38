#pragma once

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace podlab {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadToDeg = 180.0 / kPi;
inline constexpr double kDegToRad = kPi / 180.0;

// Domain error carrying the name of the module that raised it. what() is
// "<module>: <message>" so the CLI can surface it verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message);
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// Rational function num(s)/den(s), coefficients in ascending powers of s.
//
// Canonical form: trailing (highest-power) zeros trimmed, denominator scaled
// so its lowest-order nonzero coefficient is 1 (den[0] == 1 whenever the
// function has no pole at the origin). The zero function is {0}/{1}.
class TransferFunction {
 public:
  TransferFunction();  // unity
  TransferFunction(std::vector<double> num, std::vector<double> den);

  static TransferFunction gain(double k);

  const std::vector<double>& num() const noexcept { return num_; }
  const std::vector<double>& den() const noexcept { return den_; }
  int num_degree() const noexcept { return static_cast<int>(num_.size()) - 1; }
  int den_degree() const noexcept { return static_cast<int>(den_.size()) - 1; }
  bool is_proper() const noexcept { return num_degree() <= den_degree(); }
  bool is_zero() const noexcept { return num_.size() == 1 && num_[0] == 0.0; }

  Complex eval(Complex s) const;
  std::vector<Complex> poles() const;
  std::vector<Complex> zeros() const;

  friend bool operator==(const TransferFunction&, const TransferFunction&) = default;

 private:
  std::vector<double> num_;
  std::vector<double> den_;
};

TransferFunction series(const TransferFunction& a, const TransferFunction& b);
TransferFunction operator*(const TransferFunction& a, const TransferFunction& b);
TransferFunction scale(const TransferFunction& tf, double k);

struct FrequencyResponsePoint {
  double freq_hz;
  Complex value;
};

// Exact evaluation at s = j*2*pi*f. Throws when a requested frequency sits on
// a pole of the function.
std::vector<FrequencyResponsePoint> freq_response(const TransferFunction& tf,
                                                  std::span<const double> freqs_hz);

// Nearest-multiple-of-360 continuation along the given order.
std::vector<double> unwrap_deg(std::span<const double> phases_deg);

// Unwrapped phase table (degrees) of a response on an ascending grid.
std::vector<double> phase_table_deg(std::span<const FrequencyResponsePoint> points);

// Phase of tf(j*omega) continued from DC, built factor by factor from the
// roots so that it is independent of any frequency grid.
double continuous_phase_deg(const TransferFunction& tf, double omega_rad_s);

std::vector<double> logspace(double lo, double hi, std::size_t n);

struct StateSpace {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix D;

  Eigen::Index order() const noexcept { return A.rows(); }
  Eigen::Index inputs() const noexcept { return B.cols(); }
  Eigen::Index outputs() const noexcept { return C.rows(); }

  // Throws on dimensional inconsistency.
  void validate() const;
};

// Controllable-canonical realization. Order equals den_degree().
StateSpace to_state_space(const TransferFunction& tf);

// SISO transfer function of one input/output channel of ss.
TransferFunction to_transfer_function(const StateSpace& ss, Eigen::Index input = 0,
                                      Eigen::Index output = 0);

// Series connection: output of `first` feeds input of `second` (SISO).
StateSpace series(const StateSpace& first, const StateSpace& second);

// All eigenvalues of a square real matrix.
std::vector<Complex> eigen(const Matrix& A);

// Roots of a polynomial given in ascending coefficient order.
std::vector<Complex> poly_roots(std::span<const double> ascending);

// Real monic polynomial (ascending) with the given roots; conjugate pairs are
// expected to be present in full.
std::vector<double> poly_from_roots(std::span<const Complex> roots);

std::vector<double> poly_mul(std::span<const double> a, std::span<const double> b);
Complex poly_eval(std::span<const double> ascending, Complex s);

struct ModeReport {
  Complex eigenvalue;
  double freq_hz = 0.0;
  double damping_ratio = 0.0;
};

ModeReport mode_report(Complex eigenvalue);

// Constant-input fourth-order Runge-Kutta step for x' = Ax + Bu, folded into
// x_{k+1} = Phi x_k + Gamma u_k. Identical to classical RK4 with a
// zero-order-hold input.
class Rk4Propagator {
 public:
  Rk4Propagator(const StateSpace& ss, double dt);

  void step(Vector& x, const Vector& u) const;
  const Matrix& phi() const noexcept { return phi_; }
  const Matrix& gamma() const noexcept { return gamma_; }

 private:
  Matrix phi_;
  Matrix gamma_;
};

// Largest step allowed by the accuracy guard dt <= 1/(20 f_highest).
double max_simulation_step(const StateSpace& ss);

// Fixed-step RK4 with zero-order-hold input. `inputs` has one row per sample
// and one column per input. Returns one row per sample, one column per output.
Matrix simulate(const StateSpace& ss, const Matrix& inputs, double dt,
                const std::optional<Vector>& x0 = std::nullopt);

std::vector<double> simulate(const StateSpace& ss, std::span<const double> input, double dt,
                             const std::optional<Vector>& x0 = std::nullopt);

}  // namespace podlab
