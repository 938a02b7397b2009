#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace mmcoord {

/// Dense row-major matrix; all internal arithmetic is 64-bit.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// One flag per batch row / entity: 1 when the view is present.
using Presence = std::vector<std::uint8_t>;

}  // namespace mmcoord
