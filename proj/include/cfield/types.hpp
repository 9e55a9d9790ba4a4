#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>

namespace cfield {

using Scalar = double;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Row-per-point storage; all coordinates in millimetres unless stated.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using TetCells = Eigen::Matrix<int, Eigen::Dynamic, 4>;
using TriCells = Eigen::Matrix<int, Eigen::Dynamic, 3>;
using LineCells = Eigen::Matrix<int, Eigen::Dynamic, 2>;

// FNV-1a, used wherever a stable cross-platform hash is needed (stage seeds,
// config fingerprints).  Not std::hash on purpose: that one is unspecified.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  std::uint64_t h = fnv1a(stage);
  h ^= global_seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

}  // namespace cfield
