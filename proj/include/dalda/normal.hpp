#pragma once

namespace dalda {

// Standard normal pdf/cdf/quantile. The quantile uses a rational
// approximation refined by one Halley step against erfc, absolute error
// well under 1e-9 over the full open interval.
double normal_pdf(double x);
double normal_cdf(double x);
double normal_quantile(double p);

} // namespace dalda
