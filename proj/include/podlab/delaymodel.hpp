#pragma once

#include "podlab/channel.hpp"
#include "podlab/lti.hpp"

#include <utility>

namespace podlab {

struct Band {
  double low_hz;
  double high_hz;
};

// Rational design surrogate D'(s) of the average channel delay.
struct DelaySurrogate {
  double theta_s = 0.0;
  TransferFunction pade;
  int order = 0;
  Band band{0.1, 2.0};
  double max_phase_err_deg = 0.0;
};

double expected_delay(const DelayDistribution& dist);

// Diagonal [order/order] Pade approximant of exp(-s theta). theta = 0 gives
// unity.
TransferFunction pade_approx(double theta_s, int order);

// Worst |phase(D'(jw)) + w theta| in degrees over a 200-point log grid.
double validate_surrogate(const TransferFunction& pade, double theta_s, Band band);

// Escalates the order from 1 until the phase error drops below
// max_phase_err_deg; throws if order 8 still fails.
DelaySurrogate select_surrogate(double theta_s, Band band = {0.1, 2.0},
                                double max_phase_err_deg = 10.0, int max_order = 8);

}  // namespace podlab
