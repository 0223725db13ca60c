// include/mbndiar/plda.h
//
// Copyright (c)  2026  The mbndiar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MBNDIAR_PLDA_H_
#define MBNDIAR_PLDA_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbndiar/common.h"
#include "mbndiar/data_io.h"

namespace mbndiar {

/*
  Two-covariance PLDA.  An embedding x (after optional centering and length
  normalization) is modelled as x = y + e with class centre
  y ~ N(mean, between_cov) and residual e ~ N(0, within_cov).

  `transform` (W) simultaneously diagonalizes the two covariances:
      W^T within_cov W = I,   W^T between_cov W = diag(psi),
  so the latent variable u = W^T (x - mean) has unit within-class covariance
  and between-class variances psi, and x = mean + W^{-T} u.
*/
struct PldaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd within_cov;
  Eigen::MatrixXd between_cov;
  Eigen::MatrixXd transform;
  Eigen::VectorXd psi;  // non-increasing, >= 0

  // Preprocessing applied to raw embeddings before the model: subtract
  // `norm_center`, then scale to norm sqrt(dim).
  bool length_normalize = false;
  Eigen::VectorXd norm_center;

  int Dim() const { return static_cast<int>(mean.size()); }

  // Raw embedding -> model input space.
  Eigen::VectorXd Preprocess(const Eigen::VectorXd &x) const;
};

struct PldaOptions {
  int max_iters = 10;
  double tol = 1e-6;  // stop when the log-likelihood gain drops below this
  bool length_normalize = true;
};

struct PldaTrainResult {
  PldaModel model;
  // log-likelihood of the training data before EM and after each iteration.
  std::vector<double> log_likelihoods;
  std::vector<std::string> warnings;
};

// Segments must all carry speaker labels.
PldaTrainResult TrainPlda(const EmbeddingSet &train, const PldaOptions &opts);

struct Diagonalization {
  Eigen::MatrixXd transform;
  Eigen::VectorXd psi;
};

// Whitens `within` and eigendecomposes the whitened `between`. Eigenvalues
// come out sorted non-increasing; each eigenvector's largest-magnitude
// entry is made positive. Throws NumericalError if `within` is not
// positive-definite.
Diagonalization Diagonalize(const Eigen::MatrixXd &within,
                            const Eigen::MatrixXd &between);

// Per-class sufficient statistics used by EM.
struct PldaClassStats {
  int count = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scatter;  // sum_i (x_i - mean)(x_i - mean)^T
};

std::vector<PldaClassStats> ComputeClassStats(const RowMatrix &data,
                                              std::span<const int> labels,
                                              int num_classes);

// Exact marginal log-likelihood of the data under (mean, within, between).
double PldaLogLikelihood(std::span<const PldaClassStats> stats,
                         const Eigen::VectorXd &mean,
                         const Eigen::MatrixXd &within,
                         const Eigen::MatrixXd &between);

struct LatentSet {
  std::vector<SegmentRecord> records;
  RowMatrix vectors;

  int Size() const { return static_cast<int>(records.size()); }
  int Dim() const { return static_cast<int>(vectors.cols()); }
};

LatentSet ExtractLatent(const PldaModel &model, const EmbeddingSet &set);

EmbeddingSet ToEmbeddingSet(const LatentSet &latents);
LatentSet ToLatentSet(const EmbeddingSet &set);

// Same-versus-different speaker log-likelihood ratio of two latent vectors.
// The per-dimension constants are precomputed once per model.
class PldaScorer {
 public:
  explicit PldaScorer(const Eigen::VectorXd &psi);

  int Dim() const { return static_cast<int>(cross_.size()); }

  template <typename A, typename B>
  double Score(const Eigen::MatrixBase<A> &u1,
               const Eigen::MatrixBase<B> &u2) const {
    double s = offset_;
    for (Eigen::Index j = 0; j < cross_.size(); ++j) {
      const double a = u1(j), b = u2(j);
      s += square_(j) * (a * a + b * b) + cross_(j) * a * b;
    }
    return s;
  }

 private:
  double offset_ = 0.0;
  Eigen::VectorXd square_;
  Eigen::VectorXd cross_;
};

double LlrScore(const PldaModel &model, const Eigen::VectorXd &u1,
                const Eigen::VectorXd &u2);

void WritePlda(const PldaModel &model, const std::filesystem::path &path);
PldaModel ReadPlda(const std::filesystem::path &path);

}  // namespace mbndiar

#endif  // MBNDIAR_PLDA_H_
