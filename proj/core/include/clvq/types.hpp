#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace clvq {

/// Compute-side matrices are double precision; rows are tokens.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Storage-side matrices mirror the on-disk row-major float32 layout.
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

using Rng = std::mt19937_64;

enum class Mode { kTrain, kEval };

inline Mat to_compute(const MatF& m) { return m.cast<double>(); }

}  // namespace clvq
