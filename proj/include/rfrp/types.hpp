#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace rfrp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using Index = Eigen::Index;

inline constexpr double kPi = 3.14159265358979323846;

// Spectrum grid: 36 azimuth bins x 9 elevation bins, 10 degrees each.
inline constexpr int kAzimuthBins = 36;
inline constexpr int kElevationBins = 9;
inline constexpr int kSpectrumSize = kAzimuthBins * kElevationBins;
inline constexpr double kBinWidthDeg = 10.0;

// Patch grid: 12 x 3 patches of 3 x 3 bins.
inline constexpr int kPatchSide = 3;
inline constexpr int kPatchesPerArray = 36;
inline constexpr int kPatchValues = kPatchSide * kPatchSide;

/// Raised when an operation's inputs violate its contract (shapes, ranges).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for numerically degenerate inputs (parallel rays, near-field tx).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace rfrp
