// src/metrics.cc
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

#include "mbndiar/metrics.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mbndiar {

namespace {

// Time-weighted statistics of one recording over its scored regions.
struct RecordingTally {
  std::vector<std::string> ref_speakers;
  std::vector<std::string> hyp_speakers;
  Eigen::MatrixXd overlap;  // ref x hyp co-active scored time
  double ref_time = 0.0;    // sum of dur * n_ref
  double miss = 0.0;
  double fa = 0.0;
  double min_time = 0.0;    // sum of dur * min(n_ref, n_hyp)
};

std::vector<std::string> SortedSpeakers(const std::vector<AnnotationEntry> &es) {
  std::set<std::string> s;
  for (const auto &e : es) s.insert(e.speaker);
  return {s.begin(), s.end()};
}

RecordingTally TallyRecording(const std::vector<AnnotationEntry> &ref,
                              const std::vector<AnnotationEntry> &hyp,
                              const DerOptions &opts) {
  RecordingTally t;
  t.ref_speakers = SortedSpeakers(ref);
  t.hyp_speakers = SortedSpeakers(hyp);
  t.overlap = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(t.ref_speakers.size()),
      static_cast<Eigen::Index>(t.hyp_speakers.size()));
  auto index_of = [](const std::vector<std::string> &v, const std::string &s) {
    return static_cast<int>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
  };

  std::vector<double> ref_bounds;
  for (const auto &e : ref) {
    ref_bounds.push_back(e.start);
    ref_bounds.push_back(e.End());
  }
  std::vector<double> points;
  for (double b : ref_bounds) {
    points.push_back(b);
    if (opts.collar > 0.0) {
      points.push_back(b - opts.collar);
      points.push_back(b + opts.collar);
    }
  }
  for (const auto &e : hyp) {
    points.push_back(e.start);
    points.push_back(e.End());
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<int> ref_active(t.ref_speakers.size());
  std::vector<int> hyp_active(t.hyp_speakers.size());
  for (size_t p = 0; p + 1 < points.size(); ++p) {
    const double t0 = points[p], t1 = points[p + 1];
    const double dur = t1 - t0;
    const double mid = 0.5 * (t0 + t1);
    if (opts.collar > 0.0) {
      bool in_collar = false;
      for (double b : ref_bounds) {
        if (std::abs(mid - b) < opts.collar) {
          in_collar = true;
          break;
        }
      }
      if (in_collar) continue;
    }
    std::fill(ref_active.begin(), ref_active.end(), 0);
    std::fill(hyp_active.begin(), hyp_active.end(), 0);
    for (const auto &e : ref)
      if (e.start <= mid && mid < e.End())
        ref_active[index_of(t.ref_speakers, e.speaker)] = 1;
    for (const auto &e : hyp)
      if (e.start <= mid && mid < e.End())
        hyp_active[index_of(t.hyp_speakers, e.speaker)] = 1;
    int n_ref = 0, n_hyp = 0;
    for (int a : ref_active) n_ref += a;
    for (int a : hyp_active) n_hyp += a;
    if (opts.skip_overlap && n_ref > 1) continue;
    t.ref_time += dur * n_ref;
    t.miss += dur * std::max(0, n_ref - n_hyp);
    t.fa += dur * std::max(0, n_hyp - n_ref);
    t.min_time += dur * std::min(n_ref, n_hyp);
    for (size_t r = 0; r < ref_active.size(); ++r) {
      if (!ref_active[r]) continue;
      for (size_t h = 0; h < hyp_active.size(); ++h)
        if (hyp_active[h])
          t.overlap(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(h)) += dur;
    }
  }
  return t;
}

std::vector<std::string> UnionRecordings(const Annotation &a,
                                         const Annotation &b) {
  std::vector<std::string> ids = a.RecordingIds();
  std::set<std::string> seen(ids.begin(), ids.end());
  for (const auto &id : b.RecordingIds())
    if (seen.insert(id).second) ids.push_back(id);
  return ids;
}

double MappedOverlap(const Eigen::MatrixXd &overlap,
                     const std::vector<int> &assignment) {
  double total = 0.0;
  for (size_t r = 0; r < assignment.size(); ++r)
    if (assignment[r] >= 0)
      total += overlap(static_cast<Eigen::Index>(r), assignment[r]);
  return total;
}

// Best assignment of the rows (the smaller side, <= 8) by dynamic
// programming over subsets of rows while scanning the columns.
std::vector<int> SubsetDpAssignment(const Eigen::MatrixXd &w) {
  const int rows = static_cast<int>(w.rows());
  const int cols = static_cast<int>(w.cols());
  const int full = 1 << rows;
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  // best[j][mask]: best weight using the first j columns, rows in mask used.
  std::vector<std::vector<double>> best(cols + 1, std::vector<double>(full, kNeg));
  std::vector<std::vector<int>> choice(cols + 1, std::vector<int>(full, -1));
  best[0][0] = 0.0;
  for (int j = 0; j < cols; ++j) {
    for (int mask = 0; mask < full; ++mask) {
      if (best[j][mask] == kNeg) continue;
      if (best[j][mask] > best[j + 1][mask]) {
        best[j + 1][mask] = best[j][mask];
        choice[j + 1][mask] = -1;
      }
      for (int i = 0; i < rows; ++i) {
        if (mask & (1 << i)) continue;
        const int next = mask | (1 << i);
        const double v = best[j][mask] + w(i, j);
        if (v > best[j + 1][next]) {
          best[j + 1][next] = v;
          choice[j + 1][next] = i;
        }
      }
    }
  }
  int mask = 0;
  for (int m = 1; m < full; ++m)
    if (best[cols][m] > best[cols][mask]) mask = m;
  std::vector<int> out(rows, -1);
  for (int j = cols; j > 0; --j) {
    const int i = choice[j][mask];
    if (i >= 0) {
      out[i] = j - 1;
      mask &= ~(1 << i);
    }
  }
  return out;
}

// Hungarian algorithm (potentials form) minimizing cost for rows <= cols.
std::vector<int> HungarianRowsLeCols(const Eigen::MatrixXd &cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) out[p[j] - 1] = j - 1;
  return out;
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string DerBreakdown::ReportLine() const {
  return "DER=" + Fixed(der, 6) + " MISS=" + Fixed(missed_speech, 6) +
         " FA=" + Fixed(false_alarm, 6) + " SPKERR=" + Fixed(speaker_error, 6) +
         " SCORED=" + Fixed(scored_time, 2);
}

std::string DerBreakdown::HumanReadable() const {
  return "DER " + Fixed(100.0 * der, 2) + "% (missed " +
         Fixed(100.0 * missed_speech, 2) + "%, false alarm " +
         Fixed(100.0 * false_alarm, 2) + "%, speaker error " +
         Fixed(100.0 * speaker_error, 2) + "%) over " + Fixed(scored_time, 2) +
         " s of scored speech";
}

std::vector<int> HungarianAssignment(const Eigen::MatrixXd &weights) {
  if (weights.size() == 0) return std::vector<int>(weights.rows(), -1);
  const double top = weights.maxCoeff();
  if (weights.rows() <= weights.cols())
    return HungarianRowsLeCols((top - weights.array()).matrix());
  // More rows than columns: solve the transpose and invert.
  const Eigen::MatrixXd wt = weights.transpose();
  auto col_to_row = HungarianRowsLeCols((top - wt.array()).matrix());
  std::vector<int> out(weights.rows(), -1);
  for (size_t c = 0; c < col_to_row.size(); ++c)
    if (col_to_row[c] >= 0) out[col_to_row[c]] = static_cast<int>(c);
  return out;
}

std::vector<int> MaxWeightAssignment(const Eigen::MatrixXd &weights) {
  const Eigen::Index rows = weights.rows(), cols = weights.cols();
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  if (std::min(rows, cols) > 8) return HungarianAssignment(weights);
  if (rows <= cols) return SubsetDpAssignment(weights);
  const Eigen::MatrixXd wt = weights.transpose();
  auto col_to_row = SubsetDpAssignment(wt);
  std::vector<int> out(rows, -1);
  for (size_t c = 0; c < col_to_row.size(); ++c)
    if (col_to_row[c] >= 0) out[col_to_row[c]] = static_cast<int>(c);
  return out;
}

SpeakerMapping OptimalSpeakerMapping(const Annotation &reference,
                                     const Annotation &hypothesis,
                                     const DerOptions &opts) {
  SpeakerMapping mapping;
  for (const auto &rec : UnionRecordings(reference, hypothesis)) {
    RecordingTally t = TallyRecording(reference.Subset(rec).entries,
                                      hypothesis.Subset(rec).entries, opts);
    auto assign = MaxWeightAssignment(t.overlap);
    for (size_t r = 0; r < assign.size(); ++r) {
      if (assign[r] < 0) continue;
      const double ov = t.overlap(static_cast<Eigen::Index>(r), assign[r]);
      if (ov <= 0.0) continue;
      mapping.pairs.push_back({rec, t.ref_speakers[r], t.hyp_speakers[assign[r]]});
      mapping.total_overlap += ov;
    }
  }
  return mapping;
}

DerBreakdown ComputeDer(const Annotation &reference,
                        const Annotation &hypothesis, const DerOptions &opts) {
  if (opts.collar < 0.0) throw UsageError("collar must be non-negative");
  double ref_time = 0.0, miss = 0.0, fa = 0.0, spk = 0.0;
  for (const auto &rec : UnionRecordings(reference, hypothesis)) {
    RecordingTally t = TallyRecording(reference.Subset(rec).entries,
                                      hypothesis.Subset(rec).entries, opts);
    const double mapped = MappedOverlap(t.overlap, MaxWeightAssignment(t.overlap));
    ref_time += t.ref_time;
    miss += t.miss;
    fa += t.fa;
    spk += std::max(0.0, t.min_time - mapped);
  }
  if (!(ref_time > 0.0))
    throw DataError("reference has no scored speech time");
  DerBreakdown out;
  out.scored_time = ref_time;
  out.missed_speech = miss / ref_time;
  out.false_alarm = fa / ref_time;
  out.speaker_error = spk / ref_time;
  out.der = out.speaker_error + out.missed_speech + out.false_alarm;
  return out;
}

DtScore ComputeDt(const RowMatrix &vectors, std::span<const int> labels) {
  const Eigen::Index n = vectors.rows();
  const Eigen::Index d = vectors.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw DataError("DT: label count does not match vector count");
  std::map<int, std::vector<Eigen::Index>> classes;
  for (Eigen::Index i = 0; i < n; ++i) classes[labels[i]].push_back(i);
  if (classes.size() < 2)
    throw DataError("DT needs at least 2 classes, got " +
                    std::to_string(classes.size()));

  const Eigen::VectorXd mu = vectors.colwise().mean().transpose();
  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(d, d);
  for (const auto &[label, rows] : classes) {
    Eigen::VectorXd mc = Eigen::VectorXd::Zero(d);
    for (auto i : rows) mc += vectors.row(i).transpose();
    mc /= static_cast<double>(rows.size());
    for (auto i : rows) {
      Eigen::VectorXd dev = vectors.row(i).transpose() - mc;
      sw.noalias() += dev * dev.transpose();
    }
    const Eigen::VectorXd dm = mc - mu;
    sb.noalias() += static_cast<double>(rows.size()) * dm * dm.transpose();
  }
  sw /= static_cast<double>(n);
  sb /= static_cast<double>(n);

  const double tr = sb.trace();
  if (!(tr > 0.0))
    throw NumericalError("DT: between-class scatter is singular (smallest "
                         "eigenvalue 0; all class means coincide)");
  sb.diagonal().array() += 1e-10 * tr / static_cast<double>(d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sb, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(d - 1);
  if (!(lo > 0.0)) {
    std::ostringstream msg;
    msg << "DT: between-class scatter is singular (smallest eigenvalue " << lo
        << ")";
    throw NumericalError(msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sb);
  DtScore out;
  out.value = llt.solve(sw).trace();
  out.n_classes = static_cast<int>(classes.size());
  out.dim = static_cast<int>(d);
  out.sb_condition = hi / lo;
  return out;
}

PcaResult PcaProject(const RowMatrix &vectors, int out_dims) {
  const Eigen::Index n = vectors.rows();
  const Eigen::Index d = vectors.cols();
  if (n < 2) throw DataError("PCA needs at least 2 rows");
  if (out_dims < 1 || out_dims > std::min<Eigen::Index>(n - 1, d))
    throw DataError("PCA output dimension " + std::to_string(out_dims) +
                    " must lie in [1, min(n-1, d)]");
  const Eigen::RowVectorXd mean = vectors.colwise().mean();
  const Eigen::MatrixXd centred = vectors.rowwise() - mean;

  PcaResult out;
  out.coords = RowMatrix::Zero(n, out_dims);
  out.components = Eigen::MatrixXd::Zero(d, out_dims);
  if (centred.cwiseAbs().maxCoeff() == 0.0) {
    out.degenerate = true;
    out.eigenvalues = Eigen::VectorXd::Zero(std::min(n, d));
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.eigenvalues =
      svd.singularValues().array().square() / static_cast<double>(n);
  for (int k = 0; k < out_dims; ++k) {
    Eigen::VectorXd load = svd.matrixV().col(k);
    Eigen::Index arg;
    load.cwiseAbs().maxCoeff(&arg);
    if (load(arg) < 0.0) load = -load;
    out.components.col(k) = load;
  }
  out.coords = centred * out.components;
  return out;
}

void WritePcaCsv(const RowMatrix &coords,
                 std::span<const SegmentRecord> records,
                 const std::filesystem::path &path, bool with_labels) {
  if (static_cast<Eigen::Index>(records.size()) != coords.rows())
    throw DataError("PCA coordinates and records differ in count");
  WriteFileAtomically(path, [&](std::ostream &os) {
    os << "segment_id";
    for (Eigen::Index k = 0; k < coords.cols(); ++k) os << ",pc" << k + 1;
    if (with_labels) os << ",label";
    os << '\n';
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
      os << records[i].segment_id;
      for (Eigen::Index k = 0; k < coords.cols(); ++k)
        os << ',' << FormatDouble(coords(i, k));
      if (with_labels) os << ',' << records[i].speaker.value_or("");
      os << '\n';
    }
  });
}

}  // namespace mbndiar
