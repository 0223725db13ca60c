// src/plda.cc
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

#include "mbndiar/plda.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace mbndiar {

namespace {

constexpr char kPldaMagic[4] = {'M', 'B', 'N', 'P'};
constexpr uint8_t kPldaVersion = 1;
constexpr double kWithinRegularization = 1e-6;

Eigen::MatrixXd Symmetrize(const Eigen::MatrixXd &m) {
  return 0.5 * (m + m.transpose());
}

double SmallestEigenvalue(const Eigen::MatrixXd &m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// log-determinant of a symmetric positive-definite matrix.
double LogDetSpd(const Eigen::LLT<Eigen::MatrixXd> &llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Eigen::LLT<Eigen::MatrixXd> CholeskyOrThrow(const Eigen::MatrixXd &m,
                                            const char *what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << what << " is not positive-definite (smallest eigenvalue "
        << SmallestEigenvalue(Symmetrize(m)) << ")";
    throw NumericalError(msg.str());
  }
  return llt;
}

Eigen::VectorXd LengthNormalize(const Eigen::VectorXd &x,
                                const Eigen::VectorXd &center) {
  Eigen::VectorXd y = x - center;
  const double norm = y.norm();
  if (norm > 0.0) y *= std::sqrt(static_cast<double>(y.size())) / norm;
  return y;
}

void AddRidge(Eigen::MatrixXd *m) {
  const double ridge = kWithinRegularization * m->trace() / m->rows();
  m->diagonal().array() += ridge;
}

// LLT alone can succeed on a numerically rank-deficient matrix, so look at
// the spectrum.  Returns true if a ridge was added.
bool RidgeIfSingular(Eigen::MatrixXd *m) {
  if (SmallestEigenvalue(*m) > 1e-10 * m->trace() / m->rows()) return false;
  AddRidge(m);
  return true;
}

void PutU32(std::ostream &os, uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutF64(std::ostream &os, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint64_t GetBytes(std::istream &is, int n, const std::filesystem::path &path) {
  uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    int c = is.get();
    if (c == std::char_traits<char>::eof())
      throw DataError(path.string() + ": truncated PLDA model file");
    v |= static_cast<uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void PutVector(std::ostream &os, const Eigen::VectorXd &v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) PutF64(os, v(i));
}

void PutMatrix(std::ostream &os, const Eigen::MatrixXd &m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) PutF64(os, m(i, j));
}

double GetF64(std::istream &is, const std::filesystem::path &path) {
  double v = std::bit_cast<double>(GetBytes(is, 8, path));
  if (!std::isfinite(v))
    throw DataError(path.string() + ": non-finite value in PLDA model");
  return v;
}

Eigen::VectorXd GetVector(std::istream &is, int d,
                          const std::filesystem::path &path) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = GetF64(is, path);
  return v;
}

Eigen::MatrixXd GetMatrix(std::istream &is, int d,
                          const std::filesystem::path &path) {
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = GetF64(is, path);
  return m;
}

}  // namespace

Eigen::VectorXd PldaModel::Preprocess(const Eigen::VectorXd &x) const {
  if (!length_normalize) return x;
  return LengthNormalize(x, norm_center);
}

Diagonalization Diagonalize(const Eigen::MatrixXd &within,
                            const Eigen::MatrixXd &between) {
  const Eigen::Index d = within.rows();
  if (within.cols() != d || between.rows() != d || between.cols() != d)
    throw DataError("Diagonalize: covariance shapes do not match");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_w(Symmetrize(within));
  if (es_w.info() != Eigen::Success)
    throw NumericalError("eigendecomposition of within-class covariance failed");
  const Eigen::VectorXd lw = es_w.eigenvalues();
  const double max_w = lw(d - 1);
  if (!(lw(0) > 0.0) || lw(0) <= 1e-14 * max_w) {
    std::ostringstream msg;
    msg << "within-class covariance is not positive-definite (smallest "
           "eigenvalue " << lw(0) << ")";
    throw NumericalError(msg.str());
  }
  // within = U diag(lw) U^T, whitening T = U diag(lw)^{-1/2}.
  const Eigen::MatrixXd whiten =
      es_w.eigenvectors() * lw.array().rsqrt().matrix().asDiagonal();
  const Eigen::MatrixXd b = Symmetrize(whiten.transpose() * between * whiten);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_b(b);
  if (es_b.info() != Eigen::Success)
    throw NumericalError("eigendecomposition of whitened between-class "
                         "covariance failed");

  Diagonalization out;
  out.transform.resize(d, d);
  out.psi.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    // Eigen sorts ascending; we want non-increasing.
    const Eigen::Index src = d - 1 - k;
    Eigen::VectorXd col = whiten * es_b.eigenvectors().col(src);
    Eigen::Index arg;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0.0) col = -col;
    out.transform.col(k) = col;
    out.psi(k) = es_b.eigenvalues()(src);
  }
  return out;
}

std::vector<PldaClassStats> ComputeClassStats(const RowMatrix &data,
                                              std::span<const int> labels,
                                              int num_classes) {
  const Eigen::Index d = data.cols();
  std::vector<PldaClassStats> stats(num_classes);
  for (auto &s : stats) {
    s.mean = Eigen::VectorXd::Zero(d);
    s.scatter = Eigen::MatrixXd::Zero(d, d);
  }
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    auto &s = stats[labels[i]];
    ++s.count;
    s.mean += data.row(i).transpose();
  }
  for (auto &s : stats)
    if (s.count > 0) s.mean /= s.count;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    auto &s = stats[labels[i]];
    Eigen::VectorXd dev = data.row(i).transpose() - s.mean;
    s.scatter.noalias() += dev * dev.transpose();
  }
  return stats;
}

/*
  For a class with n samples, the stacked samples are jointly Gaussian with
  covariance I_n (x) within + 1 1^T (x) between. Splitting into the class
  average and the deviations from it gives

    log p = -1/2 [ n d log(2 pi) + log|within + n between|
                   + (n - 1) log|within|
                   + n (xbar - m)^T (within + n between)^{-1} (xbar - m)
                   + tr(within^{-1} S) ].
*/
double PldaLogLikelihood(std::span<const PldaClassStats> stats,
                         const Eigen::VectorXd &mean,
                         const Eigen::MatrixXd &within,
                         const Eigen::MatrixXd &between) {
  const double d = static_cast<double>(mean.size());
  auto within_llt = CholeskyOrThrow(within, "within-class covariance");
  const double logdet_w = LogDetSpd(within_llt);
  const Eigen::MatrixXd within_inv = within_llt.solve(
      Eigen::MatrixXd::Identity(mean.size(), mean.size()));

  struct PerCount {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double logdet;
  };
  std::map<int, PerCount> cache;
  double total = 0.0;
  for (const auto &s : stats) {
    if (s.count == 0) continue;
    auto it = cache.find(s.count);
    if (it == cache.end()) {
      Eigen::MatrixXd c = Symmetrize(within + s.count * between);
      auto llt = CholeskyOrThrow(c, "class-average covariance");
      const double logdet = LogDetSpd(llt);
      it = cache.emplace(s.count, PerCount{std::move(llt), logdet}).first;
    }
    const double n = s.count;
    const Eigen::VectorXd diff = s.mean - mean;
    const double quad = n * diff.dot(it->second.llt.solve(diff));
    const double tr = (within_inv.cwiseProduct(s.scatter)).sum();
    total += -0.5 * (n * d * std::log(2.0 * std::numbers::pi) +
                     it->second.logdet + (n - 1.0) * logdet_w + quad + tr);
  }
  return total;
}

PldaTrainResult TrainPlda(const EmbeddingSet &train, const PldaOptions &opts) {
  train.Validate();
  if (opts.max_iters < 0) throw UsageError("plda max_iters must be >= 0");
  const int n = train.Size();
  const int d = train.Dim();

  std::vector<int> labels(n);
  std::unordered_map<std::string, int> speaker_index;
  for (int i = 0; i < n; ++i) {
    const auto &rec = train.records[i];
    if (!rec.speaker)
      throw DataError("PLDA training row " + std::to_string(i + 1) +
                      " (" + rec.recording_id + "/" + rec.segment_id +
                      ") has no speaker label");
    auto [it, inserted] = speaker_index.try_emplace(
        *rec.speaker, static_cast<int>(speaker_index.size()));
    labels[i] = it->second;
  }
  const int num_classes = static_cast<int>(speaker_index.size());
  if (num_classes < 2)
    throw DataError("PLDA training needs at least 2 speakers, got " +
                    std::to_string(num_classes));

  PldaTrainResult result;
  PldaModel &model = result.model;
  model.length_normalize = opts.length_normalize;
  model.norm_center = train.vectors.colwise().mean().transpose();

  RowMatrix data(n, d);
  for (int i = 0; i < n; ++i)
    data.row(i) = model.Preprocess(train.vectors.row(i).transpose()).transpose();

  auto stats = ComputeClassStats(data, labels, num_classes);
  bool any_repeated = false;
  for (const auto &s : stats) any_repeated |= s.count >= 2;
  if (!any_repeated)
    throw DataError("PLDA training needs at least one speaker with 2 or more "
                    "segments");
  if (n <= d)
    result.warnings.push_back("PLDA training set has " + std::to_string(n) +
                              " segments for dimension " + std::to_string(d) +
                              "; estimates will be poor");

  // Initialization from sample scatter matrices.
  Eigen::VectorXd mean = data.colwise().mean().transpose();
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
  for (const auto &s : stats) {
    within += s.scatter;
    const Eigen::VectorXd diff = s.mean - mean;
    between += diff * diff.transpose();
  }
  within /= n;
  between /= num_classes;
  if (!(within.trace() > 0.0))
    throw NumericalError("within-class scatter is zero; every speaker's "
                         "segments are identical");
  if (RidgeIfSingular(&within)) {
    result.warnings.push_back("initial within-class scatter is singular; "
                              "added a ridge before EM");
  }

  double ll = PldaLogLikelihood(stats, mean, within, between);
  result.log_likelihoods.push_back(ll);
  bool warned_em_ridge = false;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // E-step: posterior N(mu_c, post_cov_n) of each class centre, where
    //   K = between (between + within/n)^{-1},
    //   mu_c = mean + K (xbar_c - mean),  post_cov_n = between - K between.
    struct Gain {
      Eigen::MatrixXd gain;
      Eigen::MatrixXd post_cov;
    };
    std::map<int, Gain> gains;
    std::vector<Eigen::VectorXd> mu(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      const int cnt = stats[c].count;
      auto it = gains.find(cnt);
      if (it == gains.end()) {
        Eigen::MatrixXd g = Symmetrize(between + within / cnt);
        auto llt = CholeskyOrThrow(g, "class-average covariance");
        // K = between g^{-1}  =>  K^T = g^{-1} between.
        Eigen::MatrixXd gain = llt.solve(between).transpose();
        Eigen::MatrixXd post = Symmetrize(between - gain * between);
        it = gains.emplace(cnt, Gain{std::move(gain), std::move(post)}).first;
      }
      mu[c] = mean + it->second.gain * (stats[c].mean - mean);
    }

    // M-step.
    Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(d);
    for (const auto &m : mu) new_mean += m;
    new_mean /= num_classes;
    Eigen::MatrixXd new_between = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd new_within = Eigen::MatrixXd::Zero(d, d);
    for (int c = 0; c < num_classes; ++c) {
      const auto &s = stats[c];
      const Eigen::MatrixXd &post = gains.at(s.count).post_cov;
      const Eigen::VectorXd dm = mu[c] - new_mean;
      new_between += post + dm * dm.transpose();
      const Eigen::VectorXd dx = s.mean - mu[c];
      new_within += s.scatter + s.count * (dx * dx.transpose() + post);
    }
    mean = new_mean;
    between = Symmetrize(new_between / num_classes);
    within = Symmetrize(new_within / n);
    if (RidgeIfSingular(&within) && !warned_em_ridge) {
      result.warnings.push_back("within-class covariance became singular "
                                "during EM; added a ridge");
      warned_em_ridge = true;
    }

    const double new_ll = PldaLogLikelihood(stats, mean, within, between);
    result.log_likelihoods.push_back(new_ll);
    const double gain = new_ll - ll;
    ll = new_ll;
    if (gain < opts.tol) break;
  }

  AddRidge(&within);
  const double min_eig = SmallestEigenvalue(within);
  if (!(min_eig > 0.0)) {
    std::ostringstream msg;
    msg << "within-class covariance is singular after regularization "
           "(smallest eigenvalue " << min_eig << ")";
    throw NumericalError(msg.str());
  }
  Diagonalization diag = Diagonalize(within, between);
  model.mean = mean;
  model.within_cov = within;
  model.between_cov = between;
  model.transform = diag.transform;
  model.psi = diag.psi.cwiseMax(0.0);
  return result;
}

LatentSet ExtractLatent(const PldaModel &model, const EmbeddingSet &set) {
  if (set.Dim() != model.Dim())
    throw DataError("embedding dimension " + std::to_string(set.Dim()) +
                    " does not match PLDA dimension " +
                    std::to_string(model.Dim()));
  LatentSet out;
  out.records = set.records;
  out.vectors.resize(set.Size(), model.Dim());
  const Eigen::MatrixXd wt = model.transform.transpose();
  for (int i = 0; i < set.Size(); ++i) {
    Eigen::VectorXd x = model.Preprocess(set.vectors.row(i).transpose());
    out.vectors.row(i) = (wt * (x - model.mean)).transpose();
  }
  return out;
}

EmbeddingSet ToEmbeddingSet(const LatentSet &latents) {
  EmbeddingSet set;
  set.records = latents.records;
  set.vectors = latents.vectors;
  return set;
}

LatentSet ToLatentSet(const EmbeddingSet &set) {
  LatentSet out;
  out.records = set.records;
  out.vectors = set.vectors;
  return out;
}

/*
  Per latent dimension with between-class variance p, the pair (a, b) is
  N(0, [[p+1, p], [p, p+1]]) under "same speaker" and N(0, diag(p+1, p+1))
  under "different speakers".  The log ratio is

    log(p+1) - 1/2 log(2p+1)
      + (a^2 + b^2) (1/(2(p+1)) - (p+1)/(2(2p+1)))  +  a b p/(2p+1).
*/
PldaScorer::PldaScorer(const Eigen::VectorXd &psi)
    : square_(psi.size()), cross_(psi.size()) {
  for (Eigen::Index j = 0; j < psi.size(); ++j) {
    const double p = psi(j);
    offset_ += std::log1p(p) - 0.5 * std::log1p(2.0 * p);
    square_(j) = 0.5 / (p + 1.0) - 0.5 * (p + 1.0) / (2.0 * p + 1.0);
    cross_(j) = p / (2.0 * p + 1.0);
  }
}

double LlrScore(const PldaModel &model, const Eigen::VectorXd &u1,
                const Eigen::VectorXd &u2) {
  if (u1.size() != model.Dim() || u2.size() != model.Dim())
    throw DataError("latent dimension does not match PLDA dimension " +
                    std::to_string(model.Dim()));
  return PldaScorer(model.psi).Score(u1, u2);
}

void WritePlda(const PldaModel &model, const std::filesystem::path &path) {
  const int d = model.Dim();
  WriteFileAtomically(
      path,
      [&](std::ostream &os) {
        os.write(kPldaMagic, 4);
        os.put(static_cast<char>(kPldaVersion));
        PutU32(os, static_cast<uint32_t>(d));
        os.put(model.length_normalize ? 1 : 0);
        PutVector(os, model.length_normalize ? model.norm_center
                                             : Eigen::VectorXd::Zero(d).eval());
        PutVector(os, model.mean);
        PutMatrix(os, model.within_cov);
        PutMatrix(os, model.between_cov);
        PutMatrix(os, model.transform);
        PutVector(os, model.psi);
      },
      true);
}

PldaModel ReadPlda(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open PLDA model " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kPldaMagic))
    throw DataError(path.string() + ": bad magic, not an MBNP PLDA model");
  const int version = is.get();
  if (version != kPldaVersion)
    throw DataError(path.string() + ": unsupported PLDA model version " +
                    std::to_string(version));
  const int d = static_cast<int>(GetBytes(is, 4, path));
  if (d <= 0) throw DataError(path.string() + ": PLDA dimension is zero");
  PldaModel model;
  model.length_normalize = GetBytes(is, 1, path) != 0;
  model.norm_center = GetVector(is, d, path);
  model.mean = GetVector(is, d, path);
  model.within_cov = GetMatrix(is, d, path);
  model.between_cov = GetMatrix(is, d, path);
  model.transform = GetMatrix(is, d, path);
  model.psi = GetVector(is, d, path);
  return model;
}

}  // namespace mbndiar
