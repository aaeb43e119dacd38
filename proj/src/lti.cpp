#include "podlab/lti.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace podlab {

Error::Error(std::string module, const std::string& message)
    : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

namespace {

void trim(std::vector<double>& p) {
  while (p.size() > 1 && p.back() == 0.0) p.pop_back();
  if (p.empty()) p.push_back(0.0);
}

// Sum of |a_k| |s|^k, the natural scale for deciding that p(s) vanishes.
double poly_abs_scale(std::span<const double> p, double mag) {
  double acc = 0.0;
  double pw = 1.0;
  for (double c : p) {
    acc += std::abs(c) * pw;
    pw *= mag;
  }
  return acc;
}

std::string fmt_hz(double f) {
  std::ostringstream os;
  os.precision(9);
  os << f << " Hz";
  return os.str();
}

}  // namespace

TransferFunction::TransferFunction() : num_{1.0}, den_{1.0} {}

TransferFunction::TransferFunction(std::vector<double> num, std::vector<double> den)
    : num_(std::move(num)), den_(std::move(den)) {
  trim(num_);
  trim(den_);
  if (den_.size() == 1 && den_[0] == 0.0) {
    throw Error("lti", "transfer function denominator is identically zero");
  }
  if (num_.size() == 1 && num_[0] == 0.0) {
    den_ = {1.0};
    return;
  }
  const auto lead = std::find_if(den_.begin(), den_.end(), [](double c) { return c != 0.0; });
  const double norm = *lead;
  if (norm != 1.0) {
    for (double& c : num_) c /= norm;
    for (double& c : den_) c /= norm;
  }
}

TransferFunction TransferFunction::gain(double k) { return TransferFunction({k}, {1.0}); }

Complex TransferFunction::eval(Complex s) const {
  return poly_eval(num_, s) / poly_eval(den_, s);
}

std::vector<Complex> TransferFunction::poles() const { return poly_roots(den_); }
std::vector<Complex> TransferFunction::zeros() const {
  if (is_zero()) return {};
  return poly_roots(num_);
}

TransferFunction series(const TransferFunction& a, const TransferFunction& b) {
  return TransferFunction(poly_mul(a.num(), b.num()), poly_mul(a.den(), b.den()));
}

TransferFunction operator*(const TransferFunction& a, const TransferFunction& b) {
  return series(a, b);
}

TransferFunction scale(const TransferFunction& tf, double k) {
  std::vector<double> num = tf.num();
  for (double& c : num) c *= k;
  return TransferFunction(std::move(num), tf.den());
}

std::vector<FrequencyResponsePoint> freq_response(const TransferFunction& tf,
                                                  std::span<const double> freqs_hz) {
  std::vector<FrequencyResponsePoint> out;
  out.reserve(freqs_hz.size());
  for (double f : freqs_hz) {
    if (!(f > 0.0)) throw Error("lti", "frequency must be positive, got " + fmt_hz(f));
    const double w = 2.0 * kPi * f;
    const Complex s(0.0, w);
    const Complex d = poly_eval(tf.den(), s);
    if (std::abs(d) <= 1e-14 * poly_abs_scale(tf.den(), w)) {
      throw Error("lti", "pole on the imaginary axis at " + fmt_hz(f));
    }
    out.push_back({f, poly_eval(tf.num(), s) / d});
  }
  return out;
}

std::vector<double> unwrap_deg(std::span<const double> phases_deg) {
  std::vector<double> out(phases_deg.begin(), phases_deg.end());
  for (std::size_t i = 1; i < out.size(); ++i) {
    const double diff = out[i] - out[i - 1];
    out[i] -= 360.0 * std::round(diff / 360.0);
  }
  return out;
}

std::vector<double> phase_table_deg(std::span<const FrequencyResponsePoint> points) {
  std::vector<double> raw;
  raw.reserve(points.size());
  for (const auto& p : points) raw.push_back(std::arg(p.value) * kRadToDeg);
  return unwrap_deg(raw);
}

double continuous_phase_deg(const TransferFunction& tf, double omega) {
  if (!(omega > 0.0)) throw Error("lti", "phase requested at non-positive frequency");
  if (tf.is_zero()) return 0.0;
  const auto& num = tf.num();
  const auto& den = tf.den();
  std::size_t kz = 0;
  while (num[kz] == 0.0) ++kz;
  std::size_t kp = 0;
  while (den[kp] == 0.0) ++kp;

  // tf(s) = c s^(kz-kp) prod(1 - s/z) / prod(1 - s/p); each factor sweeps
  // less than 180 degrees along the imaginary axis, so principal angles add up
  // to the continuous phase.
  const double c = num[kz] / den[kp];
  double phase = (c < 0.0 ? 180.0 : 0.0) +
                 90.0 * (static_cast<double>(kz) - static_cast<double>(kp));
  const Complex jw(0.0, omega);

  const std::vector<double> num_red(num.begin() + static_cast<std::ptrdiff_t>(kz), num.end());
  const std::vector<double> den_red(den.begin() + static_cast<std::ptrdiff_t>(kp), den.end());
  for (const Complex& z : poly_roots(num_red)) {
    phase += std::arg(1.0 - jw / z) * kRadToDeg;
  }
  for (const Complex& p : poly_roots(den_red)) {
    const Complex f = 1.0 - jw / p;
    if (std::abs(f) < 1e-12) {
      throw Error("lti", "phase evaluated on a pole at " + fmt_hz(omega / (2.0 * kPi)));
    }
    phase -= std::arg(f) * kRadToDeg;
  }
  return phase;
}

std::vector<double> logspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

void StateSpace::validate() const {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() ||
      D.cols() != B.cols()) {
    std::ostringstream os;
    os << "inconsistent state-space dimensions A " << A.rows() << "x" << A.cols() << ", B "
       << B.rows() << "x" << B.cols() << ", C " << C.rows() << "x" << C.cols() << ", D "
       << D.rows() << "x" << D.cols();
    throw Error("lti", os.str());
  }
}

StateSpace to_state_space(const TransferFunction& tf) {
  if (!tf.is_proper()) {
    throw Error("lti", "improper transfer function: numerator degree " +
                           std::to_string(tf.num_degree()) + " exceeds denominator degree " +
                           std::to_string(tf.den_degree()));
  }
  const int n = tf.den_degree();
  const double lead = tf.den().back();
  std::vector<double> a(tf.den());
  for (double& c : a) c /= lead;
  std::vector<double> b(static_cast<std::size_t>(n) + 1, 0.0);
  for (std::size_t i = 0; i < tf.num().size(); ++i) b[i] = tf.num()[i] / lead;

  StateSpace ss;
  ss.A = Matrix::Zero(n, n);
  ss.B = Matrix::Zero(n, 1);
  ss.C = Matrix::Zero(1, n);
  ss.D = Matrix::Constant(1, 1, b[static_cast<std::size_t>(n)]);
  for (int i = 0; i + 1 < n; ++i) ss.A(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) {
    ss.A(n - 1, j) = -a[static_cast<std::size_t>(j)];
    ss.C(0, j) = b[static_cast<std::size_t>(j)] - ss.D(0, 0) * a[static_cast<std::size_t>(j)];
  }
  if (n > 0) ss.B(n - 1, 0) = 1.0;
  return ss;
}

namespace {

// Characteristic polynomials (ascending) of every leading principal block of
// an upper Hessenberg matrix, La Budde's recurrence. out[i] has degree i.
std::vector<std::vector<double>> hessenberg_charpolys(const Matrix& H) {
  const Eigen::Index n = H.rows();
  std::vector<std::vector<double>> p(static_cast<std::size_t>(n) + 1);
  p[0] = {1.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& cur = p[static_cast<std::size_t>(i) + 1];
    const auto& prev = p[static_cast<std::size_t>(i)];
    cur.assign(static_cast<std::size_t>(i) + 2, 0.0);
    for (std::size_t k = 0; k < prev.size(); ++k) {
      cur[k + 1] += prev[k];
      cur[k] -= H(i, i) * prev[k];
    }
    double sub = 1.0;
    for (Eigen::Index m = 1; m <= i; ++m) {
      sub *= H(i - m + 1, i - m);
      const auto& older = p[static_cast<std::size_t>(i - m)];
      const double w = H(i - m, i) * sub;
      for (std::size_t k = 0; k < older.size(); ++k) cur[k] -= w * older[k];
    }
  }
  return p;
}

}  // namespace

TransferFunction to_transfer_function(const StateSpace& ss, Eigen::Index input,
                                      Eigen::Index output) {
  ss.validate();
  const double d = ss.D(output, input);
  if (ss.order() == 0) return TransferFunction::gain(d);
  const Eigen::Index n = ss.order();
  // Orthogonal similarity to controller-Hessenberg form: b -> beta e1, A upper
  // Hessenberg. Numerator and denominator then follow from determinants of
  // trailing blocks with no eigenvalue round trip.
  Vector b = ss.B.col(input);
  Eigen::RowVectorXd c = ss.C.row(output);
  Matrix A = ss.A;
  double beta = 0.0;
  {
    Vector essential(n > 1 ? n - 1 : 0);
    double tau = 0.0;
    b.makeHouseholder(essential, tau, beta);
    Vector work(n);
    A.applyHouseholderOnTheLeft(essential, tau, work.data());
    A.applyHouseholderOnTheRight(essential, tau, work.data());
    c.applyHouseholderOnTheRight(essential, tau, work.data());
  }
  if (n > 2) {
    Eigen::HessenbergDecomposition<Matrix> hd(A);
    const Matrix Q = hd.matrixQ();  // Q e1 = e1
    A = hd.matrixH();
    c = c * Q;
  }
  // t[m] = det(sI - A[m:, m:]), computed as leading minors of the flipped
  // transpose, which is again upper Hessenberg.
  Matrix G(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) = A(n - 1 - j, n - 1 - i);
  }
  const auto lead = hessenberg_charpolys(G);
  std::vector<std::vector<double>> t(static_cast<std::size_t>(n) + 1);
  for (Eigen::Index m = 0; m <= n; ++m) t[static_cast<std::size_t>(m)] = lead[static_cast<std::size_t>(n - m)];
  const auto& den = t[0];
  std::vector<double> num(den.size(), 0.0);
  double chain = beta;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k > 0) chain *= A(k, k - 1);
    const auto& q = t[static_cast<std::size_t>(k) + 1];
    for (std::size_t i = 0; i < q.size(); ++i) num[i] += chain * c(k) * q[i];
  }
  for (std::size_t i = 0; i < den.size(); ++i) num[i] += d * den[i];
  return TransferFunction(std::move(num), den);
}

StateSpace series(const StateSpace& first, const StateSpace& second) {
  first.validate();
  second.validate();
  if (first.outputs() != second.inputs()) {
    throw Error("lti", "series connection with mismatched signal widths");
  }
  const auto n1 = first.order();
  const auto n2 = second.order();
  StateSpace out;
  out.A = Matrix::Zero(n1 + n2, n1 + n2);
  out.A.topLeftCorner(n1, n1) = first.A;
  out.A.bottomLeftCorner(n2, n1) = second.B * first.C;
  out.A.bottomRightCorner(n2, n2) = second.A;
  out.B = Matrix::Zero(n1 + n2, first.inputs());
  out.B.topRows(n1) = first.B;
  out.B.bottomRows(n2) = second.B * first.D;
  out.C = Matrix::Zero(second.outputs(), n1 + n2);
  out.C.leftCols(n1) = second.D * first.C;
  out.C.rightCols(n2) = second.C;
  out.D = second.D * first.D;
  return out;
}

namespace {

// Diagonal similarity by powers of two that evens out row and column norms
// (Parlett-Reinsch). Exact in floating point, so the spectrum is unchanged.
Matrix balanced(Matrix A) {
  const Eigen::Index n = A.rows();
  bool done = false;
  while (!done) {
    done = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      double c = 0.0;
      double r = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::abs(A(j, i));
        r += std::abs(A(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      const double total = c + r;
      double f = 1.0;
      while (c < r / 2.0) {
        c *= 2.0;
        r /= 2.0;
        f *= 2.0;
      }
      while (c >= r * 2.0) {
        c /= 2.0;
        r *= 2.0;
        f /= 2.0;
      }
      if (c + r < 0.95 * total) {
        done = false;
        A.row(i) /= f;
        A.col(i) *= f;
      }
    }
  }
  return A;
}

}  // namespace

std::vector<Complex> eigen(const Matrix& A) {
  if (A.rows() != A.cols()) {
    throw Error("lti", "eigenvalues requested for a non-square " + std::to_string(A.rows()) +
                           "x" + std::to_string(A.cols()) + " matrix");
  }
  if (A.rows() == 0) return {};
  Eigen::EigenSolver<Matrix> solver(balanced(A), false);
  if (solver.info() != Eigen::Success) throw Error("lti", "eigenvalue iteration did not converge");
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

std::vector<Complex> poly_roots(std::span<const double> ascending) {
  std::size_t deg = ascending.size();
  while (deg > 0 && ascending[deg - 1] == 0.0) --deg;
  if (deg <= 1) return {};
  const auto n = static_cast<Eigen::Index>(deg - 1);
  const double lead = ascending[deg - 1];
  if (n == 1) return {Complex(-ascending[0] / lead, 0.0)};
  Matrix comp = Matrix::Zero(n, n);
  for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) comp(i, n - 1) = -ascending[static_cast<std::size_t>(i)] / lead;
  return eigen(comp);
}

std::vector<double> poly_from_roots(std::span<const Complex> roots) {
  std::vector<Complex> c{Complex(1.0, 0.0)};
  for (const Complex& r : roots) {
    std::vector<Complex> next(c.size() + 1, Complex(0.0, 0.0));
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i + 1] += c[i];
      next[i] -= r * c[i];
    }
    c = std::move(next);
  }
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

std::vector<double> poly_mul(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

Complex poly_eval(std::span<const double> ascending, Complex s) {
  Complex acc(0.0, 0.0);
  for (auto it = ascending.rbegin(); it != ascending.rend(); ++it) acc = acc * s + *it;
  return acc;
}

ModeReport mode_report(Complex lambda) {
  ModeReport m;
  m.eigenvalue = lambda;
  m.freq_hz = std::abs(lambda.imag()) / (2.0 * kPi);
  const double mag = std::abs(lambda);
  m.damping_ratio = mag > 0.0 ? -lambda.real() / mag : 0.0;
  return m;
}

Rk4Propagator::Rk4Propagator(const StateSpace& ss, double dt) {
  ss.validate();
  const auto n = ss.order();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix M = dt * ss.A;
  const Matrix M2 = M * M;
  const Matrix M3 = M2 * M;
  phi_ = I + M + M2 / 2.0 + M3 / 6.0 + M3 * M / 24.0;
  gamma_ = dt * (I + M / 2.0 + M2 / 6.0 + M3 / 24.0) * ss.B;
}

void Rk4Propagator::step(Vector& x, const Vector& u) const {
  x = phi_ * x + gamma_ * u;
}

double max_simulation_step(const StateSpace& ss) {
  double f_hi = 0.0;
  for (const Complex& l : eigen(ss.A)) f_hi = std::max(f_hi, std::abs(l.imag()) / (2.0 * kPi));
  return f_hi > 0.0 ? 1.0 / (20.0 * f_hi) : std::numeric_limits<double>::infinity();
}

Matrix simulate(const StateSpace& ss, const Matrix& inputs, double dt,
                const std::optional<Vector>& x0) {
  ss.validate();
  if (!(dt > 0.0)) throw Error("lti", "simulation step must be positive");
  if (inputs.cols() != ss.inputs()) throw Error("lti", "input signal width does not match B");
  const double guard = max_simulation_step(ss);
  if (dt > guard) {
    std::ostringstream os;
    os.precision(6);
    os << "step dt=" << dt << " s violates the accuracy guard; required dt <= " << guard << " s";
    throw Error("lti", os.str());
  }
  double fastest = 0.0;
  for (const Complex& l : eigen(ss.A)) fastest = std::max(fastest, std::abs(l));
  if (fastest * dt > 2.5) {
    std::ostringstream os;
    os.precision(6);
    os << "step dt=" << dt << " s outside the RK4 stability region; required dt <= "
       << 2.5 / fastest << " s";
    throw Error("lti", os.str());
  }

  const Rk4Propagator prop(ss, dt);
  Vector x = x0.value_or(Vector::Zero(ss.order()));
  if (x.size() != ss.order()) throw Error("lti", "initial state has the wrong dimension");
  Matrix out(inputs.rows(), ss.outputs());
  for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
    const Vector u = inputs.row(k).transpose();
    out.row(k) = (ss.C * x + ss.D * u).transpose();
    prop.step(x, u);
  }
  return out;
}

std::vector<double> simulate(const StateSpace& ss, std::span<const double> input, double dt,
                             const std::optional<Vector>& x0) {
  const Matrix u = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  const Matrix y = simulate(ss, u, dt, x0);
  return {y.data(), y.data() + y.size()};
}

}  // namespace podlab
