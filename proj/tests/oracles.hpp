#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's own math for the quantity being checked.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oprl/nn.hpp"

namespace oracle {

/// Central finite-difference gradient of f at p.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   Eigen::VectorXd p, double h = 1e-5) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(p);
    p[i] = keep - h;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest elementwise relative error over entries with magnitude > floor.
inline double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                            double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (scale <= floor) continue;
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

/// Plain relu MLP evaluated with explicit loops over the documented layout.
inline std::vector<double> mlp_by_hand(const oprl::nn::NetworkSpec& spec,
                                       const Eigen::VectorXd& params, std::vector<double> x) {
  std::size_t at = 0;
  const std::size_t layers = spec.hidden_sizes.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = x.size();
    const std::size_t out = l + 1 == layers ? spec.output_dim : spec.hidden_sizes[l];
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) y[o] += params[static_cast<Eigen::Index>(at + i * out + o)] * x[i];
    }
    at += in * out;
    for (std::size_t o = 0; o < out; ++o) y[o] += params[static_cast<Eigen::Index>(at + o)];
    at += out;
    if (l + 1 < layers) {
      for (double& v : y) v = std::max(v, 0.0);
    }
    x = y;
  }
  return x;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Numerically naive Bradley-Terry probability of b, fine for moderate inputs.
inline double bt(double ra, double rb, double beta) {
  return std::exp(beta * rb) / (std::exp(beta * ra) + std::exp(beta * rb));
}

inline double entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
  return h;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("oprl-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace oracle
