#pragma once

#include "flashread/errors.hpp"

namespace flashread {

/// Standard normal upper-tail probability Q(x) = P(Z > x).
double q_func(double x);

/// Inverse of q_func on (0,1). Throws DomainError outside the open interval.
double q_inv(double y);

/// Standard normal density.
double phi(double x);

// Uniform grid used for read thresholds and quantized cdf samples.
// quantize() maps to the nearest grid point, ties toward +infinity.
struct QuantizationGrid {
    double origin = 0.0;
    double step = 0.0;

    QuantizationGrid() = default;
    QuantizationGrid(double origin_, double step_);

    double quantize(double x) const;
    long long index_of(double x) const;  // index of the nearest grid point
    double value_at(long long index) const { return origin + step * static_cast<double>(index); }
};

}  // namespace flashread
