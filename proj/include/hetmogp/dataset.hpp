#ifndef HETMOGP_DATASET_HPP
#define HETMOGP_DATASET_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"
#include "hetmogp/likelihoods.hpp"

namespace hetmogp {

/// Inputs shared by all outputs. Missing observations are NaN in `Y`.
struct Dataset {
  Eigen::MatrixXd X;  // N x P
  Eigen::MatrixXd Y;  // N x D
  std::vector<LikelihoodSpec> likelihoods;

  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
  int num_outputs() const { return static_cast<int>(Y.cols()); }
  int input_dim() const { return static_cast<int>(X.cols()); }

  static bool missing(double y) { return std::isnan(y); }

  std::size_t observed_count(int d) const {
    std::size_t c = 0;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) c += missing(Y(n, d)) ? 0 : 1;
    return c;
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.likelihoods = likelihoods;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.Y.resize(static_cast<Eigen::Index>(rows.size()), Y.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(rows[i]);
      out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
      out.Y.row(static_cast<Eigen::Index>(i)) = Y.row(r);
    }
    return out;
  }

  /// Throws DataError listing every row whose value falls outside the
  /// support of its output's likelihood.
  void validate() const {
    if (X.rows() != Y.rows()) throw ShapeError("X and Y row counts differ");
    if (static_cast<std::size_t>(Y.cols()) != likelihoods.size()) {
      throw ShapeError("one likelihood per output column is required");
    }
    std::vector<std::size_t> bad;
    std::string first;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
      bool row_bad = !X.row(n).allFinite();
      for (Eigen::Index d = 0; d < Y.cols(); ++d) {
        const double y = Y(n, d);
        if (missing(y)) continue;
        if (!in_support(likelihoods[static_cast<std::size_t>(d)], y)) {
          if (first.empty()) {
            first = "row " + std::to_string(n) + ", output " + std::to_string(d + 1) + ": value " +
                    std::to_string(y) + " outside the support of " +
                    to_string(likelihoods[static_cast<std::size_t>(d)]);
          }
          row_bad = true;
        }
      }
      if (row_bad) {
        if (first.empty()) first = "row " + std::to_string(n) + ": non-finite input";
        bad.push_back(static_cast<std::size_t>(n));
      }
    }
    if (!bad.empty()) {
      throw DataError(std::to_string(bad.size()) + " invalid row(s); first: " + first, bad);
    }
  }
};

/// Row indices of one minibatch and the data-term scale N / B.
struct MiniBatch {
  std::vector<std::size_t> indices;
  double scale = 1.0;

  static MiniBatch full(std::size_t n) {
    MiniBatch b;
    b.indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.indices[i] = i;
    b.scale = 1.0;
    return b;
  }
};

}  // namespace hetmogp

#endif
