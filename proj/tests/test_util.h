// tests/test_util.h
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

// Shared test helpers and the independent reference implementations
// ("oracles") the library is checked against. The oracles favour the most
// literal formulation over speed and share no code with src/.

#ifndef MBNDIAR_TESTS_TEST_UTIL_H_
#define MBNDIAR_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbndiar/clustering.h"
#include "mbndiar/data_io.h"

namespace mbndiar::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mbndiar_test_" + std::to_string(rd()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline std::string Slurp(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void Spit(const std::filesystem::path &path, const std::string &text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

inline RowMatrix RandomMatrix(std::mt19937_64 &rng, int rows, int cols,
                              double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  RowMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

// Canonical form of a partition: each item's label replaced by the smallest
// item index in its cluster.
inline std::vector<int> CanonicalPartition(const std::vector<int> &labels) {
  std::map<int, int> first;
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    auto it = first.try_emplace(labels[i], static_cast<int>(i)).first;
    out[i] = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Average-linkage AHC, recomputing every cluster-pair average from the raw
// similarities at each step. Clusters are named by their smallest member;
// ties go to the lexicographically smallest (first, second) pair.
// `oracle_clusters` > 0 stops at that count, otherwise merging continues
// while the best average is >= tau.
inline std::vector<int> NaiveAhc(const Eigen::MatrixXd &sim, int oracle_clusters,
                                 double tau) {
  const int n = static_cast<int>(sim.rows());
  std::vector<std::vector<int>> clusters(n);
  for (int i = 0; i < n; ++i) clusters[i] = {i};
  auto average = [&](const std::vector<int> &a, const std::vector<int> &b) {
    // Same summation order as merging cluster b's row into a's: the sum over
    // b's members of (sum over a's members); values in tests are chosen so
    // that the result is exact either way.
    double s = 0.0;
    for (int i : a)
      for (int j : b) s += sim(i, j);
    return s / (static_cast<double>(a.size()) * b.size());
  };
  while (true) {
    const int count = static_cast<int>(clusters.size());
    if (oracle_clusters > 0 && count <= oracle_clusters) break;
    if (count < 2) break;
    double best = -std::numeric_limits<double>::infinity();
    int ba = -1, bb = -1;
    for (int a = 0; a < count; ++a) {
      for (int b = a + 1; b < count; ++b) {
        const double s = average(clusters[a], clusters[b]);
        // clusters stay sorted by smallest member, so (a, b) order is the
        // lexicographic tie-break order.
        if (s > best) {
          best = s;
          ba = a;
          bb = b;
        }
      }
    }
    if (oracle_clusters <= 0 && best < tau) break;
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(),
                        clusters[bb].end());
    std::sort(clusters[ba].begin(), clusters[ba].end());
    clusters.erase(clusters.begin() + bb);
  }
  std::vector<int> labels(n);
  for (size_t c = 0; c < clusters.size(); ++c)
    for (int i : clusters[c]) labels[i] = static_cast<int>(c);
  return CanonicalPartition(labels);
}

// ---------------------------------------------------------------------------
// Frame-based DER: the timeline is cut into `step`-second frames and each
// frame is judged at its centre. Speaker mapping by exhaustive search over
// injective maps on the frame-counted overlaps.
struct FrameDer {
  double der = 0.0, miss = 0.0, fa = 0.0, spkerr = 0.0, scored = 0.0;
};

inline double BruteForceBestOverlap(const std::vector<std::vector<double>> &w) {
  // Max over injective partial maps rows -> cols of the summed weight.
  const int rows = static_cast<int>(w.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(w[0].size());
  double best = 0.0;
  std::vector<char> used(cols, 0);
  std::function<void(int, double)> rec = [&](int r, double acc) {
    if (r == rows) {
      best = std::max(best, acc);
      return;
    }
    rec(r + 1, acc);  // leave row r unmapped
    for (int c = 0; c < cols; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      rec(r + 1, acc + w[r][c]);
      used[c] = 0;
    }
  };
  rec(0, 0.0);
  return best;
}

inline FrameDer FrameScore(const Annotation &ref, const Annotation &hyp,
                           double collar, bool skip_overlap,
                           double step = 0.01) {
  std::set<std::string> recs;
  for (const auto &e : ref.entries) recs.insert(e.recording_id);
  for (const auto &e : hyp.entries) recs.insert(e.recording_id);
  FrameDer tot;
  for (const auto &rec : recs) {
    std::vector<AnnotationEntry> r, h;
    double end = 0.0;
    for (const auto &e : ref.entries)
      if (e.recording_id == rec) {
        r.push_back(e);
        end = std::max(end, e.start + e.duration);
      }
    for (const auto &e : hyp.entries)
      if (e.recording_id == rec) {
        h.push_back(e);
        end = std::max(end, e.start + e.duration);
      }
    std::map<std::string, int> rid, hid;
    for (const auto &e : r) rid.try_emplace(e.speaker, (int)rid.size());
    for (const auto &e : h) hid.try_emplace(e.speaker, (int)hid.size());
    std::vector<std::vector<double>> overlap(
        rid.size(), std::vector<double>(hid.size(), 0.0));
    double min_sum = 0.0;
    const long frames = static_cast<long>(std::ceil(end / step)) + 1;
    for (long f = 0; f < frames; ++f) {
      const double t = (f + 0.5) * step;
      bool in_collar = false;
      for (const auto &e : r)
        if (std::abs(t - e.start) < collar ||
            std::abs(t - (e.start + e.duration)) < collar)
          in_collar = true;
      if (in_collar) continue;
      std::set<int> ra, ha;
      for (const auto &e : r)
        if (e.start <= t && t < e.start + e.duration) ra.insert(rid[e.speaker]);
      for (const auto &e : h)
        if (e.start <= t && t < e.start + e.duration) ha.insert(hid[e.speaker]);
      const int nr = static_cast<int>(ra.size());
      const int nh = static_cast<int>(ha.size());
      if (skip_overlap && nr > 1) continue;
      tot.scored += step * nr;
      tot.miss += step * std::max(0, nr - nh);
      tot.fa += step * std::max(0, nh - nr);
      min_sum += step * std::min(nr, nh);
      for (int a : ra)
        for (int b : ha) overlap[a][b] += step;
    }
    tot.spkerr += min_sum - BruteForceBestOverlap(overlap);
  }
  if (tot.scored > 0.0) {
    tot.miss /= tot.scored;
    tot.fa /= tot.scored;
    tot.spkerr /= tot.scored;
    tot.der = tot.miss + tot.fa + tot.spkerr;
  }
  return tot;
}

// ---------------------------------------------------------------------------
// PLDA verification LLR of two latent vectors computed as the log ratio of
// two dense 2d-dimensional Gaussian densities: under the same-speaker
// hypothesis [u1; u2] has covariance [[Psi + I, Psi], [Psi, Psi + I]],
// under the different-speaker one [[Psi + I, 0], [0, Psi + I]].
inline double GaussianLogPdf(const Eigen::VectorXd &x, const Eigen::MatrixXd &cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const double quad = x.dot(llt.solve(x));
  return -0.5 * (x.size() * std::log(2.0 * M_PI) + logdet + quad);
}

inline double DenseLlr(const Eigen::VectorXd &psi, const Eigen::VectorXd &u1,
                       const Eigen::VectorXd &u2) {
  const Eigen::Index d = psi.size();
  Eigen::MatrixXd same = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    same(j, j) = same(d + j, d + j) = psi(j) + 1.0;
    same(j, d + j) = same(d + j, j) = psi(j);
    diff(j, j) = diff(d + j, d + j) = psi(j) + 1.0;
  }
  Eigen::VectorXd x(2 * d);
  x << u1, u2;
  return GaussianLogPdf(x, same) - GaussianLogPdf(x, diff);
}

// Random annotation of one recording: `speakers` speakers, turns with
// boundaries snapped to `grid` seconds (0 for continuous times).
inline Annotation RandomAnnotation(std::mt19937_64 &rng, const std::string &rec,
                                   int speakers, int turns, double grid,
                                   bool allow_overlap) {
  std::uniform_real_distribution<double> gap(0.0, 1.5), len(0.2, 4.0);
  std::uniform_int_distribution<int> who(0, speakers - 1);
  auto snap = [&](double x) {
    return grid > 0.0 ? std::round(x / grid) * grid : x;
  };
  Annotation a;
  double t = 0.0;
  for (int i = 0; i < turns; ++i) {
    double start = snap(t + gap(rng));
    double dur = std::max(grid > 0.0 ? grid : 0.05, snap(len(rng)));
    a.entries.push_back(
        {rec, start, dur, "s" + std::to_string(who(rng))});
    t = allow_overlap ? start + 0.5 * dur : start + dur;
  }
  return a;
}

// A system-like hypothesis for `ref`: boundaries jittered by N(0, jitter),
// speakers renamed through a random map with some turns relabelled, about
// 5% of turns dropped and a few short false-alarm turns added.
inline Annotation PerturbedHypothesis(std::mt19937_64 &rng, const Annotation &ref,
                                      int hyp_speakers, double jitter) {
  std::normal_distribution<double> shift(0.0, jitter);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> who(0, hyp_speakers - 1);
  std::map<std::string, int> rename;
  Annotation hyp;
  for (const auto &e : ref.entries) {
    if (u(rng) < 0.05) continue;
    auto it = rename.try_emplace(e.speaker, who(rng)).first;
    const int label = u(rng) < 0.15 ? who(rng) : it->second;
    const double start = std::max(0.0, e.start + shift(rng));
    const double end = std::max(start + 0.05, e.End() + shift(rng));
    hyp.entries.push_back(
        {e.recording_id, start, end - start, "h" + std::to_string(label)});
    if (u(rng) < 0.1)
      hyp.entries.push_back({e.recording_id, end + 0.1, 0.3 + u(rng),
                             "h" + std::to_string(who(rng))});
  }
  return hyp;
}

}  // namespace mbndiar::testing

#endif  // MBNDIAR_TESTS_TEST_UTIL_H_
