// tests/test_plda.cc
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

#include "doctest.h"
#include "mbndiar/plda.h"
#include "test_util.h"

namespace mbndiar {
namespace {

using testing::TempDir;

Eigen::MatrixXd RandomSpd(std::mt19937_64 &rng, int d, double floor) {
  Eigen::MatrixXd a = testing::RandomMatrix(rng, d, d);
  return a * a.transpose() / d + floor * Eigen::MatrixXd::Identity(d, d);
}

// Draws classes x = m + y + e with y ~ N(0, between), e ~ N(0, within).
EmbeddingSet DrawPldaData(std::mt19937_64 &rng, const Eigen::VectorXd &m,
                          const Eigen::MatrixXd &within,
                          const Eigen::MatrixXd &between, int classes,
                          int per_class) {
  const int d = static_cast<int>(m.size());
  const Eigen::MatrixXd lw = within.llt().matrixL();
  const Eigen::MatrixXd lb = between.llt().matrixL();
  std::normal_distribution<double> g;
  auto draw = [&] {
    Eigen::VectorXd z(d);
    for (int j = 0; j < d; ++j) z(j) = g(rng);
    return z;
  };
  EmbeddingSet set;
  set.vectors.resize(classes * per_class, d);
  int row = 0;
  for (int c = 0; c < classes; ++c) {
    const Eigen::VectorXd centre = m + lb * draw();
    for (int k = 0; k < per_class; ++k, ++row) {
      set.records.push_back({"r" + std::to_string(c), "s" + std::to_string(k),
                             0.0, 1.0, "spk" + std::to_string(c)});
      set.vectors.row(row) = (centre + lw * draw()).transpose();
    }
  }
  return set;
}

TEST_CASE("diagonalization of hand-picked covariance pairs") {
  SUBCASE("unit within, diagonal between") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd b = Eigen::Vector2d(3.0, 1.0).asDiagonal();
    Diagonalization r = Diagonalize(w, b);
    CHECK(r.psi(0) == doctest::Approx(3.0));
    CHECK(r.psi(1) == doctest::Approx(1.0));
  }
  SUBCASE("equal scaled identities") {
    Eigen::MatrixXd w = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    Diagonalization r = Diagonalize(w, w);
    CHECK(r.psi(0) == doctest::Approx(1.0));
    CHECK(r.psi(1) == doctest::Approx(1.0));
  }
  SUBCASE("order is non-increasing even when the input is not") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(3, 3);
    Eigen::MatrixXd b = Eigen::Vector3d(0.5, 4.0, 2.0).asDiagonal();
    Diagonalization r = Diagonalize(w, b);
    CHECK(r.psi(0) == doctest::Approx(4.0));
    CHECK(r.psi(1) == doctest::Approx(2.0));
    CHECK(r.psi(2) == doctest::Approx(0.5));
  }
}

TEST_CASE("diagonalization identities hold for random pairs") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 8);
    Eigen::MatrixXd w = RandomSpd(rng, d, 0.1);
    Eigen::MatrixXd b = RandomSpd(rng, d, 0.0);
    Diagonalization r = Diagonalize(w, b);
    const Eigen::MatrixXd &t = r.transform;
    CHECK((t.transpose() * w * t - Eigen::MatrixXd::Identity(d, d))
              .cwiseAbs()
              .maxCoeff() < 1e-8);
    Eigen::MatrixXd psi = r.psi.asDiagonal();
    CHECK((t.transpose() * b * t - psi).cwiseAbs().maxCoeff() < 1e-8);
    for (int j = 0; j + 1 < d; ++j) CHECK(r.psi(j) >= r.psi(j + 1));
    for (int j = 0; j < d; ++j) {
      Eigen::Index arg;
      t.col(j).cwiseAbs().maxCoeff(&arg);
      CHECK(t(arg, j) > 0.0);
    }
  }
}

TEST_CASE("non positive-definite within covariance is a numerical error") {
  Eigen::MatrixXd w = Eigen::Vector2d(1.0, -1.0).asDiagonal();
  CHECK_THROWS_AS(Diagonalize(w, Eigen::MatrixXd::Identity(2, 2)),
                  NumericalError);
}

TEST_CASE("llr matches the dense two-vector gaussian ratio") {
  SUBCASE("one dimension, unit psi") {
    Eigen::VectorXd psi(1), u1(1), u2(1);
    psi << 1.0;
    u1 << 1.0;
    u2 << 1.0;
    PldaScorer s(psi);
    CHECK(std::abs(s.Score(u1, u2) - testing::DenseLlr(psi, u1, u2)) < 1e-10);
  }
  SUBCASE("random dimensions and variances") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> pu(0.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int d = 1 + static_cast<int>(rng() % 6);
      Eigen::VectorXd psi(d);
      for (int j = 0; j < d; ++j) psi(j) = pu(rng);
      Eigen::VectorXd u1 = testing::RandomMatrix(rng, d, 1, 2.0).col(0);
      Eigen::VectorXd u2 = testing::RandomMatrix(rng, d, 1, 2.0).col(0);
      PldaScorer s(psi);
      CHECK(std::abs(s.Score(u1, u2) - testing::DenseLlr(psi, u1, u2)) < 1e-9);
    }
  }
}

TEST_CASE("llr is zero without between-class variance and symmetric") {
  std::mt19937_64 rng(8);
  PldaScorer zero(Eigen::VectorXd::Zero(4));
  Eigen::VectorXd psi(4);
  psi << 5.0, 2.0, 0.5, 0.0;
  PldaScorer s(psi);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd a = testing::RandomMatrix(rng, 4, 1, 3.0).col(0);
    Eigen::VectorXd b = testing::RandomMatrix(rng, 4, 1, 3.0).col(0);
    CHECK(std::abs(zero.Score(a, b)) < 1e-15);
    CHECK(s.Score(a, b) == doctest::Approx(s.Score(b, a)).epsilon(1e-14));
  }
}

TEST_CASE("latent extraction inverts to the model input") {
  std::mt19937_64 rng(12);
  const int d = 4;
  PldaModel model;
  model.mean = testing::RandomMatrix(rng, d, 1).col(0);
  model.within_cov = RandomSpd(rng, d, 0.2);
  model.between_cov = RandomSpd(rng, d, 0.1);
  Diagonalization diag = Diagonalize(model.within_cov, model.between_cov);
  model.transform = diag.transform;
  model.psi = diag.psi;
  model.length_normalize = false;

  EmbeddingSet set;
  set.vectors.resize(6, d);
  for (int i = 0; i < 6; ++i) {
    set.records.push_back({"r", "s" + std::to_string(i), 0.0, 1.0, std::nullopt});
    set.vectors.row(i) = testing::RandomMatrix(rng, 1, d, 2.0).row(0);
  }
  set.vectors.row(0) = model.mean.transpose();
  LatentSet lat = ExtractLatent(model, set);
  CHECK(lat.vectors.row(0).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd back_t = model.transform.transpose().inverse();
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd x = model.mean + back_t * lat.vectors.row(i).transpose();
    CHECK((x - set.vectors.row(i).transpose()).cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK(lat.records == set.records);
}

TEST_CASE("identity transform and zero mean leave inputs unchanged") {
  std::mt19937_64 rng(13);
  PldaModel model;
  model.mean = Eigen::VectorXd::Zero(3);
  model.within_cov = Eigen::MatrixXd::Identity(3, 3);
  model.between_cov = Eigen::MatrixXd::Identity(3, 3);
  model.transform = Eigen::MatrixXd::Identity(3, 3);
  model.psi = Eigen::VectorXd::Ones(3);
  model.length_normalize = false;
  EmbeddingSet set;
  set.vectors = testing::RandomMatrix(rng, 5, 3, 4.0);
  for (int i = 0; i < 5; ++i)
    set.records.push_back({"r", "s" + std::to_string(i), 0.0, 1.0, std::nullopt});
  CHECK(ExtractLatent(model, set).vectors == set.vectors);
}

TEST_CASE("same-speaker pairs outscore different-speaker pairs") {
  std::mt19937_64 rng(99);
  const int d = 4;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd w = RandomSpd(rng, d, 0.3);
  Eigen::MatrixXd b = 2.0 * RandomSpd(rng, d, 0.5);
  PldaOptions opts;
  opts.length_normalize = false;
  PldaModel model = TrainPlda(DrawPldaData(rng, m, w, b, 150, 8), opts).model;
  LatentSet lat = ExtractLatent(model, DrawPldaData(rng, m, w, b, 30, 4));
  PldaScorer s(model.psi);
  double same = 0.0, diff = 0.0;
  int n_same = 0, n_diff = 0;
  for (int i = 0; i < lat.Size(); ++i)
    for (int j = i + 1; j < lat.Size(); ++j) {
      const double v = s.Score(lat.vectors.row(i).transpose(),
                               lat.vectors.row(j).transpose());
      if (lat.records[i].speaker == lat.records[j].speaker) {
        same += v;
        ++n_same;
      } else {
        diff += v;
        ++n_diff;
      }
    }
  CHECK(same / n_same > diff / n_diff);
}

TEST_CASE("log-likelihood matches the stacked dense gaussian") {
  std::mt19937_64 rng(31);
  const int d = 3;
  Eigen::VectorXd m = testing::RandomMatrix(rng, d, 1).col(0);
  Eigen::MatrixXd w = RandomSpd(rng, d, 0.3);
  Eigen::MatrixXd b = RandomSpd(rng, d, 0.1);
  EmbeddingSet set = DrawPldaData(rng, m, w, b, 4, 3);
  set.records.back().speaker = "spk0";  // unequal class sizes
  std::vector<int> labels;
  for (const auto &r : set.records) labels.push_back(r.speaker->back() - '0');
  auto stats = ComputeClassStats(set.vectors, labels, 4);
  const double ll = PldaLogLikelihood(stats, m, w, b);

  double dense = 0.0;
  for (int c = 0; c < 4; ++c) {
    std::vector<int> rows;
    for (int i = 0; i < set.Size(); ++i)
      if (labels[i] == c) rows.push_back(i);
    const int n = static_cast<int>(rows.size());
    Eigen::MatrixXd cov(n * d, n * d);
    Eigen::VectorXd x(n * d);
    for (int i = 0; i < n; ++i) {
      x.segment(i * d, d) = set.vectors.row(rows[i]).transpose() - m;
      for (int k = 0; k < n; ++k)
        cov.block(i * d, k * d, d, d) = b + (i == k ? w : Eigen::MatrixXd::Zero(d, d));
    }
    dense += testing::GaussianLogPdf(x, cov);
  }
  CHECK(ll == doctest::Approx(dense).epsilon(1e-10));
}

TEST_CASE("em increases the likelihood and recovers the covariances") {
  std::mt19937_64 rng(2024);
  const int d = 5;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd w = RandomSpd(rng, d, 0.5);
  Eigen::MatrixXd b = RandomSpd(rng, d, 0.5);
  EmbeddingSet set = DrawPldaData(rng, m, w, b, 200, 10);
  PldaOptions opts;
  opts.length_normalize = false;
  opts.max_iters = 50;
  opts.tol = 0.0;
  PldaTrainResult r = TrainPlda(set, opts);
  for (size_t i = 1; i < r.log_likelihoods.size(); ++i)
    CHECK(r.log_likelihoods[i] - r.log_likelihoods[i - 1] >= -1e-8);
  CHECK((r.model.within_cov - w).norm() / w.norm() < 0.15);
  CHECK((r.model.between_cov - b).norm() / b.norm() < 0.15);
}

TEST_CASE("speakers sharing one mean give near-zero between variance") {
  std::mt19937_64 rng(77);
  const int d = 3;
  EmbeddingSet set;
  set.vectors = testing::RandomMatrix(rng, 300 * 20, d);
  for (int c = 0; c < 300; ++c)
    for (int k = 0; k < 20; ++k)
      set.records.push_back({"r", std::to_string(c) + "_" + std::to_string(k),
                             0.0, 1.0, "spk" + std::to_string(c)});
  PldaOptions opts;
  opts.length_normalize = false;
  opts.max_iters = 30;
  PldaTrainResult r = TrainPlda(set, opts);
  CHECK(r.model.psi.maxCoeff() < 0.05);
  CHECK(r.model.psi.minCoeff() >= 0.0);
}

TEST_CASE("length normalization scales to sqrt of the dimension") {
  std::mt19937_64 rng(3);
  EmbeddingSet set = DrawPldaData(rng, Eigen::VectorXd::Constant(4, 2.0),
                                  Eigen::MatrixXd::Identity(4, 4),
                                  2.0 * Eigen::MatrixXd::Identity(4, 4), 10, 5);
  PldaTrainResult r = TrainPlda(set, {});
  REQUIRE(r.model.length_normalize);
  for (int i = 0; i < set.Size(); ++i) {
    Eigen::VectorXd x = r.model.Preprocess(set.vectors.row(i).transpose());
    CHECK(x.norm() == doctest::Approx(2.0));
  }
}

TEST_CASE("training input errors") {
  EmbeddingSet set;
  set.vectors = RowMatrix::Random(4, 2);
  for (int i = 0; i < 4; ++i)
    set.records.push_back({"r", "s" + std::to_string(i), 0.0, 1.0, "a"});
  SUBCASE("single speaker") { CHECK_THROWS_AS(TrainPlda(set, {}), DataError); }
  SUBCASE("missing label names the row") {
    set.records[2].speaker.reset();
    try {
      TrainPlda(set, {});
      FAIL("expected DataError");
    } catch (const DataError &e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }
  SUBCASE("every speaker seen once") {
    for (int i = 0; i < 4; ++i) set.records[i].speaker = "s" + std::to_string(i);
    CHECK_THROWS_AS(TrainPlda(set, {}), DataError);
  }
  SUBCASE("few segments warn") {
    set.records[2].speaker = set.records[3].speaker = "b";
    set.vectors = RowMatrix::Random(4, 4);
    PldaTrainResult r = TrainPlda(set, {});
    CHECK_FALSE(r.warnings.empty());
  }
}

TEST_CASE("model file round trip is exact") {
  TempDir dir;
  std::mt19937_64 rng(9);
  EmbeddingSet set = DrawPldaData(rng, Eigen::VectorXd::Zero(3),
                                  Eigen::MatrixXd::Identity(3, 3),
                                  Eigen::MatrixXd::Identity(3, 3), 8, 4);
  PldaModel m = TrainPlda(set, {}).model;
  WritePlda(m, dir / "m.bin");
  PldaModel back = ReadPlda(dir / "m.bin");
  CHECK(back.mean == m.mean);
  CHECK(back.within_cov == m.within_cov);
  CHECK(back.between_cov == m.between_cov);
  CHECK(back.transform == m.transform);
  CHECK(back.psi == m.psi);
  CHECK(back.norm_center == m.norm_center);
  CHECK(back.length_normalize == m.length_normalize);
  testing::Spit(dir / "bad.bin", "MBNX");
  CHECK_THROWS_AS(ReadPlda(dir / "bad.bin"), DataError);
}

TEST_CASE("latent and embedding sets convert both ways") {
  std::mt19937_64 rng(1);
  EmbeddingSet set = DrawPldaData(rng, Eigen::VectorXd::Zero(2),
                                  Eigen::MatrixXd::Identity(2, 2),
                                  Eigen::MatrixXd::Identity(2, 2), 3, 2);
  CHECK(ToEmbeddingSet(ToLatentSet(set)) == set);
}

}  // namespace
}  // namespace mbndiar
