// tests/acceptance.cc
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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <thread>

#include "mbndiar/cli.h"
#include "mbndiar/pipeline.h"
#include "test_util.h"

namespace mbndiar {
namespace {

namespace fs = std::filesystem;

// Synthetic setup for the DER comparison. within_scale 1.1 puts the
// baseline in its target DER band; see the README.
constexpr double kWithinScale = 1.1;
constexpr uint64_t kSeeds[] = {1, 2, 3};

int failures = 0;

void Report(bool ok, const std::string &name, const std::string &detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string Fmt(const char *fmt, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), fmt, a);
  return buf;
}

int Jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct SeedRun {
  double mean_der = 0.0;
  double dt_latent = 0.0;
  double dt_mvector = 0.0;
};

SeedRun RunSynthetic(const fs::path &out, uint64_t seed, ClusteringMode mode,
                     double delta) {
  PipelineConfig c;
  SynthSpec s;
  s.dim = 16;
  s.n_speakers_pool = 50;
  s.speakers_per_conversation = 5;
  s.segments_per_speaker = 20;
  s.n_conversations = 20;
  s.within_scale = kWithinScale;
  s.seed = seed;
  c.synth = s;
  c.output_dir = out;
  c.mode = mode;
  c.mbn.ensemble_size = 200;
  c.mbn.k1 = 50;
  c.mbn.delta = delta;
  c.seed = seed;
  c.jobs = Jobs();
  RunReport r = RunPipeline(c);
  SeedRun sr;
  sr.mean_der = r.MeanDer().value_or(1.0);
  sr.dt_latent = r.dt_latent.value_or(0.0);
  sr.dt_mvector = r.dt_mvector.value_or(0.0);
  return sr;
}

double Mean(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// [1] and [2].
void CheckSyntheticDer(const fs::path &dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> base, mbn;
  bool dt_ok = true;
  std::string per_seed;
  for (uint64_t seed : kSeeds) {
    const auto b = RunSynthetic(dir / ("b" + std::to_string(seed)), seed,
                                ClusteringMode::kBaseline, 0.3);
    const auto m = RunSynthetic(dir / ("m" + std::to_string(seed)), seed,
                                ClusteringMode::kMbn, 0.3);
    base.push_back(b.mean_der);
    mbn.push_back(m.mean_der);
    dt_ok = dt_ok && m.dt_mvector < m.dt_latent;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  " seed%llu(base=%.4f mbn=%.4f dt_lat=%.3f dt_mv=%.3f)",
                  static_cast<unsigned long long>(seed), b.mean_der,
                  m.mean_der, m.dt_latent, m.dt_mvector);
    per_seed += buf;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double mb = Mean(base), mm = Mean(mbn);
  Report(mb >= 0.15 && mb <= 0.35, "[1a] baseline oracle DER in [15%, 35%]",
         Fmt("mean=%.4f", mb) + per_seed);
  Report(mm < mb, "[1b] MBN mean oracle DER below baseline",
         Fmt("mbn=%.4f", mm) + Fmt(" baseline=%.4f", mb));
  Report(dt_ok, "[1c] DT of m-vectors below DT of latents on every seed",
         per_seed.substr(1));
  Report(seconds <= 300.0, "[1d] runtime at most 5 min",
         Fmt("%.1f s for 3 seeds x 2 modes", seconds));

  std::vector<double> by_delta{mm};
  std::string detail = Fmt("0.3:%.4f", mm);
  for (double delta : {0.5, 0.7}) {
    std::vector<double> ders;
    for (uint64_t seed : kSeeds)
      ders.push_back(RunSynthetic(dir / ("d" + std::to_string(seed)), seed,
                                  ClusteringMode::kMbn, delta)
                         .mean_der);
    by_delta.push_back(Mean(ders));
    detail += Fmt(" %.1f:", delta) + Fmt("%.4f", by_delta.back());
  }
  const double spread = *std::max_element(by_delta.begin(), by_delta.end()) -
                        *std::min_element(by_delta.begin(), by_delta.end());
  Report(spread <= 0.05, "[2] delta in {0.3, 0.5, 0.7}: mean DER spread <= 5 pp",
         Fmt("spread=%.4f ", spread) + detail);
}

Eigen::MatrixXd RandomSpd(std::mt19937_64 &rng, int d, double scale) {
  Eigen::MatrixXd a = testing::RandomMatrix(rng, d, d);
  return scale * (a * a.transpose() / d + 0.5 * Eigen::MatrixXd::Identity(d, d));
}

// [3]
void CheckPldaRecovery() {
  std::mt19937_64 rng(2026);
  const int d = 5, speakers = 200, per = 10;
  const Eigen::MatrixXd phi_b = RandomSpd(rng, d, 2.0);
  const Eigen::MatrixXd phi_w = RandomSpd(rng, d, 1.0);
  const Eigen::MatrixXd lb = phi_b.llt().matrixL();
  const Eigen::MatrixXd lw = phi_w.llt().matrixL();
  EmbeddingSet set;
  set.vectors.resize(speakers * per, d);
  for (int s = 0; s < speakers; ++s) {
    const Eigen::VectorXd y = lb * testing::RandomMatrix(rng, d, 1).col(0);
    for (int k = 0; k < per; ++k) {
      set.vectors.row(s * per + k) =
          (y + lw * testing::RandomMatrix(rng, d, 1).col(0)).transpose();
      set.records.push_back({"spk" + std::to_string(s), std::to_string(k), 0.0,
                             1.0, "spk" + std::to_string(s)});
    }
  }
  PldaOptions opts;
  opts.length_normalize = false;
  opts.max_iters = 100;
  opts.tol = 0.0;
  PldaTrainResult r = TrainPlda(set, opts);
  const auto &m = r.model;
  const double eb = (m.between_cov - phi_b).norm() / phi_b.norm();
  const double ew = (m.within_cov - phi_w).norm() / phi_w.norm();
  Report(eb <= 0.15 && ew <= 0.15, "[3a] PLDA EM recovers covariances within 15%",
         Fmt("between=%.4f", eb) + Fmt(" within=%.4f", ew));

  double worst = std::numeric_limits<double>::infinity();
  for (size_t i = 1; i < r.log_likelihoods.size(); ++i)
    worst = std::min(worst, r.log_likelihoods[i] - r.log_likelihoods[i - 1]);
  Report(worst >= -1e-8, "[3b] EM log-likelihood monotone (tolerance 1e-8)",
         Fmt("smallest step=%.3g", worst) +
             Fmt(" over %.0f iterations", r.log_likelihoods.size() - 1.0));

  const Eigen::MatrixXd &w = m.transform;
  const double e1 =
      (w.transpose() * m.within_cov * w - Eigen::MatrixXd::Identity(d, d))
          .cwiseAbs()
          .maxCoeff();
  const Eigen::MatrixXd psi = m.psi.asDiagonal();
  const double e2 = (w.transpose() * m.between_cov * w - psi).cwiseAbs().maxCoeff();
  Report(e1 <= 1e-6 && e2 <= 1e-6, "[3c] simultaneous diagonalization to 1e-6",
         Fmt("within=%.3g", e1) + Fmt(" between=%.3g", e2));
}

// [4]
void CheckAhc() {
  std::mt19937_64 rng(404);
  int oracle_ok = 0, threshold_ok = 0;
  const int instances = 200;
  for (int t = 0; t < instances; ++t) {
    const int n = 1 + static_cast<int>(rng() % 50);
    // Multiples of 1/8 keep every cluster average exact and create ties.
    Eigen::MatrixXd v = Eigen::MatrixXd::Ones(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        v(i, j) = v(j, i) = static_cast<int>(rng() % 17 - 8) / 8.0;
    SimilarityMatrix sim;
    sim.values = v;
    const int o = 1 + static_cast<int>(rng() % n);
    const double tau = static_cast<int>(rng() % 17 - 8) / 8.0;
    oracle_ok += testing::CanonicalPartition(Ahc(sim, OracleStop{o}).labels) ==
                 testing::NaiveAhc(v, o, 0.0);
    threshold_ok += testing::CanonicalPartition(Ahc(sim, ThresholdStop{tau}).labels) ==
                    testing::NaiveAhc(v, 0, tau);
  }
  Report(oracle_ok == instances && threshold_ok == instances,
         "[4] AHC matches the naive O(n^3) reference",
         "oracle " + std::to_string(oracle_ok) + "/200, threshold " +
             std::to_string(threshold_ok) + "/200");
}

// [5]
void CheckDer() {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Annotation ref = testing::RandomAnnotation(rng, "r", 2 + rng() % 4,
                                               20 + rng() % 21, 0.0, rng() % 2);
    Annotation hyp = testing::PerturbedHypothesis(rng, ref, 1 + rng() % 5, 0.3);
    const DerOptions opts{(rng() % 2) ? 0.25 : 0.0, static_cast<bool>(rng() % 2)};
    const double got = ComputeDer(ref, hyp, opts).der;
    const double want = testing::FrameScore(ref, hyp, opts.collar, opts.skip_overlap).der;
    worst = std::max(worst, std::abs(got - want));
  }
  Report(worst <= 0.005, "[5a] interval DER within 0.5% of a 10 ms frame scorer",
         Fmt("max abs difference %.5f over 100 pairs", worst));

  const DerOptions plain{0.0, false};
  const auto miss = ComputeDer({{{"r", 0.0, 10.0, "A"}}}, {{{"r", 0.0, 8.0, "x"}}}, plain);
  Report(std::abs(miss.missed_speech - 0.2) < 1e-12 && std::abs(miss.der - 0.2) < 1e-12,
         "[5b] hand case: missed speech 0.2", miss.ReportLine());
  const auto spk = ComputeDer({{{"r", 0.0, 5.0, "A"}, {"r", 5.0, 5.0, "B"}}},
                              {{{"r", 0.0, 10.0, "spk1"}}}, plain);
  Report(std::abs(spk.speaker_error - 0.5) < 1e-12 && std::abs(spk.der - 0.5) < 1e-12,
         "[5c] hand case: speaker error 0.5", spk.ReportLine());
}

// [6]
void CheckMVectors() {
  std::mt19937_64 rng(606);
  const int v = 200;
  LatentSet lat;
  lat.vectors = testing::RandomMatrix(rng, 100, 6, 2.0);
  for (int i = 0; i < 100; ++i)
    lat.records.push_back({"r", std::to_string(i), 0.75 * i, 1.5, std::nullopt});
  PldaModel plda;
  plda.mean = Eigen::VectorXd::Zero(6);
  plda.psi = Eigen::VectorXd::LinSpaced(6, 3.0, 0.5);
  MbnConfig cfg;
  cfg.ensemble_size = v;
  cfg.k1 = 50;
  cfg.delta = 0.3;
  cfg.floor = FloorPolicy::Balanced(5);
  cfg.seed = 6;
  auto mv = FitTransform(lat, plda, cfg).mvectors;
  bool nnz_ok = true, norm_ok = true;
  double cos_err = 0.0;
  for (size_t i = 0; i < mv.size(); ++i) {
    const Eigen::VectorXd a = mv[i].ToDense();
    nnz_ok = nnz_ok && (a.array() != 0.0).count() == v;
    norm_ok = norm_ok && std::abs(a.norm() - std::sqrt(double(v))) < 1e-12;
    for (size_t j = i + 1; j < mv.size(); ++j) {
      const Eigen::VectorXd b = mv[j].ToDense();
      const double cosine = a.dot(b) / (a.norm() * b.norm());
      const double frac = Agreement(mv[i].blocks, mv[j].blocks) / double(v);
      cos_err = std::max(cos_err, std::abs(cosine - frac));
    }
  }
  Report(nnz_ok && norm_ok && cos_err < 1e-12,
         "[6] m-vectors: V nonzeros, norm sqrt(V), cosine = agreement fraction",
         std::string(nnz_ok ? "nnz ok" : "nnz wrong") +
             (norm_ok ? ", norm ok" : ", norm wrong") +
             Fmt(", max cosine error %.2g", cos_err));
}

// [7]
void CheckDeterminism(const fs::path &dir) {
  std::vector<std::string> lines;
  int i = 0;
  for (const char *jobs : {"1", "1", "4", "8"}) {
    std::ostringstream out, err;
    const int code = CliMain(
        {"run", "--synth", "--synth-conversations", "6", "--V", "100",
         "--seed", "77", "--jobs", jobs, "--out-dir",
         (dir / ("det" + std::to_string(i++))).string()},
        out, err);
    const std::string text = out.str();
    lines.push_back(code == 0 ? text.substr(0, text.find('\n'))
                              : "exit " + std::to_string(code) + " " + err.str());
  }
  bool same = true;
  for (const auto &l : lines) same = same && l == lines.front();
  Report(same && lines.front().rfind("DER=", 0) == 0,
         "[7] run output identical across repeats and --jobs 1/4/8", lines.front());
}

// [8]
void CheckPlanLayers() {
  MbnConfig a;
  a.k1 = 50;
  a.delta = 0.3;
  a.floor = FloorPolicy::Imbalanced(8);
  MbnConfig b;
  b.k1 = 10;
  b.delta = 0.3;
  b.floor = FloorPolicy::Imbalanced(3);
  const auto pa = PlanLayers(a), pb = PlanLayers(b);
  auto str = [](const std::vector<int> &v) {
    std::string s;
    for (int k : v) s += (s.empty() ? "" : ",") + std::to_string(k);
    return "[" + s + "]";
  };
  Report(pa == std::vector<int>{50, 15} && pb == std::vector<int>{10, 3},
         "[8] layer plans", str(pa) + " " + str(pb));
}

}  // namespace
}  // namespace mbndiar

int main() {
  using namespace mbndiar;
  testing::TempDir dir;
  auto guarded = [](const char *name, auto fn) {
    try {
      fn();
    } catch (const std::exception &e) {
      Report(false, name, std::string("exception: ") + e.what());
    }
  };
  guarded("[8] layer plans", CheckPlanLayers);
  guarded("[6] m-vectors", CheckMVectors);
  guarded("[4] AHC", CheckAhc);
  guarded("[5] DER", CheckDer);
  guarded("[3] PLDA", CheckPldaRecovery);
  guarded("[7] determinism", [&] { CheckDeterminism(dir.path()); });
  guarded("[1]/[2] synthetic DER", [&] { CheckSyntheticDer(dir.path()); });
  std::printf("%s: %d failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
