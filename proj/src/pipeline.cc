// src/pipeline.cc
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

#include "mbndiar/pipeline.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace mbndiar {

namespace {

// Re-throws module errors with the stage name in front, keeping the type so
// the exit code still reflects the failure class.
template <typename F>
auto Stage(const std::string &name, F &&fn) {
  try {
    return fn();
  } catch (const DataError &e) {
    throw DataError(name + ": " + e.what());
  } catch (const NumericalError &e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const UsageError &e) {
    throw UsageError(name + ": " + e.what());
  }
}

std::string Fixed(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

Annotation ReadReferences(std::span<const std::filesystem::path> paths) {
  Annotation out;
  for (const auto &p : paths) {
    Annotation a = ReadRttm(p);
    out.entries.insert(out.entries.end(), a.entries.begin(), a.entries.end());
  }
  return out;
}

EmbeddingSet ReadAll(std::span<const std::filesystem::path> paths) {
  std::vector<EmbeddingSet> sets;
  for (const auto &p : paths) sets.push_back(ReadEmbeddings(p));
  return ConcatEmbeddings(sets);
}

int OracleCount(const std::string &rec,
                const std::map<std::string, int> &counts, int fallback) {
  auto it = counts.find(rec);
  if (it != counts.end()) return it->second;
  if (fallback > 0) return fallback;
  throw UsageError("oracle stop for recording '" + rec +
                   "' needs a reference RTTM or --num-speakers");
}

struct Prepared {
  std::vector<Conversation> conversations;
  std::map<std::string, int> speaker_counts;
  Annotation reference;
  bool has_reference = false;
};

Prepared Prepare(const EmbeddingSet &set,
                 std::span<const std::filesystem::path> rttms,
                 const PldaModel &plda) {
  Prepared p;
  p.conversations = SplitConversations(ExtractLatent(plda, set));
  if (!rttms.empty()) {
    p.reference = ReadReferences(rttms);
    p.speaker_counts = SpeakerCounts(p.reference);
    p.has_reference = true;
  }
  return p;
}

}  // namespace

ClusteringMode ParseClusteringMode(const std::string &s) {
  if (s == "baseline") return ClusteringMode::kBaseline;
  if (s == "mbn") return ClusteringMode::kMbn;
  throw UsageError("unknown clustering mode '" + s + "' (baseline|mbn)");
}

StopMode ParseStopMode(const std::string &s) {
  if (s == "oracle") return StopMode::kOracle;
  if (s == "threshold") return StopMode::kThreshold;
  throw UsageError("unknown stop rule '" + s + "' (oracle|threshold)");
}

FloorPolicy::Kind ParseFloorKind(const std::string &s) {
  if (s == "balanced") return FloorPolicy::Kind::kBalanced;
  if (s == "imbalanced") return FloorPolicy::Kind::kImbalanced;
  throw UsageError("unknown floor policy '" + s + "' (balanced|imbalanced)");
}

std::vector<Conversation> SplitConversations(const LatentSet &latents) {
  std::vector<Conversation> out;
  std::unordered_map<std::string, std::vector<int>> rows;
  for (int i = 0; i < latents.Size(); ++i) {
    const std::string &rec = latents.records[i].recording_id;
    auto [it, fresh] = rows.try_emplace(rec);
    if (fresh) out.push_back({rec, {}, {}, {}});
    it->second.push_back(i);
  }
  for (auto &conv : out) {
    const auto &idx = rows[conv.id];
    conv.latents.resize(static_cast<Eigen::Index>(idx.size()), latents.Dim());
    for (size_t r = 0; r < idx.size(); ++r) {
      conv.records.push_back(latents.records[idx[r]]);
      conv.latents.row(r) = latents.vectors.row(idx[r]);
    }
  }
  return out;
}

uint64_t RecordingSeed(uint64_t master_seed, const std::string &recording_id) {
  return Mix64(master_seed ^ HashString(recording_id));
}

std::vector<std::string> RunMbnStage(
    std::vector<Conversation> *conversations, const PldaModel &plda,
    const MbnStageOptions &opts, uint64_t seed,
    const std::map<std::string, int> &speaker_counts, int jobs,
    std::vector<MbnModel> *models) {
  const int count = static_cast<int>(conversations->size());
  std::vector<std::vector<std::string>> warnings(count);
  if (models) models->assign(count, {});
  ParallelFor(count, jobs, [&](int c) {
    Conversation &conv = (*conversations)[c];
    MbnConfig config;
    config.ensemble_size = opts.ensemble_size;
    config.k1 = opts.k1;
    config.delta = opts.delta;
    config.seed = RecordingSeed(seed, conv.id);
    if (opts.floor_kind == FloorPolicy::Kind::kImbalanced) {
      config.floor = FloorPolicy::Imbalanced(opts.k_floor);
    } else {
      int o = opts.num_speakers;
      if (o <= 0) {
        auto it = speaker_counts.find(conv.id);
        if (it == speaker_counts.end())
          throw UsageError("balanced MBN floor for recording '" + conv.id +
                           "' needs a speaker count (reference RTTM, "
                           "--mbn-speakers or --num-speakers)");
        o = it->second;
      }
      config.floor = FloorPolicy::Balanced(o);
    }
    LatentSet latents{conv.records, conv.latents};
    MbnFitResult fit;
    try {
      fit = FitTransform(latents, plda, config, 1);
    } catch (const DataError &e) {
      throw DataError("recording '" + conv.id + "': " + e.what());
    }
    conv.mvectors = std::move(fit.mvectors);
    for (auto &w : fit.warnings)
      warnings[c].push_back("recording '" + conv.id + "': " + w);
    if (models) (*models)[c] = std::move(fit.model);
  });
  std::vector<std::string> out;
  for (auto &w : warnings) out.insert(out.end(), w.begin(), w.end());
  return out;
}

SimilarityMatrix ConversationSimilarity(const Conversation &conv,
                                        ClusteringMode mode,
                                        const PldaModel *plda) {
  if (mode == ClusteringMode::kMbn) {
    if (conv.mvectors.size() != conv.records.size())
      throw DataError("recording '" + conv.id + "' has no m-vectors");
    return CosineMatrix(std::span<const MVector>(conv.mvectors));
  }
  if (!plda) throw UsageError("baseline clustering needs a PLDA model");
  return PldaLlrMatrix(*plda, conv.latents);
}

std::map<std::string, int> SpeakerCounts(const Annotation &reference) {
  std::map<std::string, int> out;
  for (const auto &rec : reference.RecordingIds())
    out[rec] = static_cast<int>(reference.Speakers(rec).size());
  return out;
}

DtLabelPolicy ParseDtLabelPolicy(const std::string &s) {
  if (s == "longest") return DtLabelPolicy::kLongest;
  if (s == "first") return DtLabelPolicy::kFirst;
  throw UsageError("unknown DT label policy '" + s + "' (longest|first)");
}

std::map<std::string, double> ParseTauOverrides(
    std::span<const std::string> items) {
  std::map<std::string, double> out;
  for (const auto &item : items) {
    const auto eq = item.rfind('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw UsageError("tau override '" + item + "' is not recording=tau");
    const std::string rec = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    double tau = 0.0;
    const auto [ptr, ec] =
        std::from_chars(value.data(), value.data() + value.size(), tau);
    if (ec != std::errc() || ptr != value.data() + value.size() ||
        !std::isfinite(tau))
      throw UsageError("tau override '" + item + "' has a bad threshold");
    if (!out.emplace(rec, tau).second)
      throw UsageError("tau override for '" + rec + "' given twice");
  }
  return out;
}

std::optional<std::vector<std::string>> SegmentLabels(
    std::span<const SegmentRecord> records, const Annotation *reference,
    DtLabelPolicy policy) {
  std::vector<std::string> out;
  out.reserve(records.size());
  bool all_labelled = true;
  for (const auto &r : records) {
    if (!r.speaker) {
      all_labelled = false;
      break;
    }
    out.push_back(*r.speaker);
  }
  if (all_labelled) return out;
  if (!reference) return std::nullopt;
  out.clear();
  for (const auto &r : records) {
    std::map<std::string, double> overlap;
    const AnnotationEntry *first = nullptr;
    for (const auto &e : reference->entries) {
      if (e.recording_id != r.recording_id) continue;
      const double o = std::min(e.End(), r.start + r.duration) -
                       std::max(e.start, r.start);
      if (o <= 0.0) continue;
      overlap[e.speaker] += o;
      if (!first || e.start < first->start ||
          (e.start == first->start && e.speaker < first->speaker))
        first = &e;
    }
    if (overlap.empty()) return std::nullopt;
    if (policy == DtLabelPolicy::kFirst) {
      out.push_back(first->speaker);
      continue;
    }
    auto best = overlap.begin();
    for (auto it = overlap.begin(); it != overlap.end(); ++it)
      if (it->second > best->second) best = it;
    out.push_back(best->first);
  }
  return out;
}

EmbeddingSet MVectorIndexSet(std::span<const MVector> mvectors,
                             std::span<const SegmentRecord> records) {
  if (mvectors.size() != records.size())
    throw DataError("m-vector count does not match record count");
  EmbeddingSet set;
  set.records.assign(records.begin(), records.end());
  const int v = mvectors.empty() ? 0 : mvectors.front().NumBlocks();
  set.vectors.resize(static_cast<Eigen::Index>(mvectors.size()), v);
  for (size_t i = 0; i < mvectors.size(); ++i) {
    if (mvectors[i].NumBlocks() != v)
      throw DataError("m-vectors differ in block count");
    for (int b = 0; b < v; ++b) set.vectors(i, b) = mvectors[i].blocks[b];
  }
  return set;
}

std::vector<MVector> MVectorsFromIndexSet(const EmbeddingSet &set) {
  std::vector<MVector> out(set.Size());
  int width = 0;
  for (int i = 0; i < set.Size(); ++i) {
    out[i].blocks.resize(set.Dim());
    for (int b = 0; b < set.Dim(); ++b) {
      const double x = set.vectors(i, b);
      if (!(x >= 0.0) || x != std::floor(x) || x > 2e9)
        throw DataError("row " + std::to_string(i + 1) +
                        ": m-vector block index must be a non-negative "
                        "integer, got " + FormatDouble(x));
      out[i].blocks[b] = static_cast<int32_t>(x);
      width = std::max(width, out[i].blocks[b] + 1);
    }
  }
  for (auto &m : out) m.block_width = width;
  return out;
}

std::optional<double> ProjectedDt(const RowMatrix &vectors,
                                  std::span<const std::string> labels) {
  if (labels.size() != static_cast<size_t>(vectors.rows()))
    throw DataError("DT needs one label per vector");
  std::map<std::string, int> ids;
  std::vector<int> y;
  y.reserve(labels.size());
  for (const auto &l : labels)
    y.push_back(ids.try_emplace(l, static_cast<int>(ids.size())).first->second);
  const int c = static_cast<int>(ids.size());
  if (c < 2) return std::nullopt;

  const Eigen::RowVectorXd mu = vectors.colwise().mean();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(c, vectors.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(c);
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    means.row(y[i]) += vectors.row(i);
    counts(y[i]) += 1.0;
  }
  for (int k = 0; k < c; ++k)
    means.row(k) = std::sqrt(counts(k)) * (means.row(k) / counts(k) - mu);

  // Orthonormal basis of the between-class subspace.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(means, Eigen::ComputeThinV);
  const Eigen::VectorXd &sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(0) > 0.0)) return std::nullopt;
  int rank = 0;
  while (rank < sv.size() && sv(rank) > 1e-9 * sv(0)) ++rank;
  const Eigen::MatrixXd basis = svd.matrixV().leftCols(rank);
  const RowMatrix coords = (vectors.rowwise() - mu) * basis;
  try {
    return ComputeDt(coords, y).value;
  } catch (const NumericalError &) {
    return std::nullopt;
  }
}

std::optional<double> RunReport::MeanDer() const {
  double sum = 0.0;
  int count = 0;
  for (const auto &r : recordings) {
    if (!r.der) continue;
    sum += r.der->der;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

std::string RunReport::Text() const {
  std::ostringstream os;
  if (der)
    os << der->ReportLine() << "\n";
  else
    os << "DER=NA MISS=NA FA=NA SPKERR=NA SCORED=0.00\n";
  if (auto m = MeanDer()) os << "MEAN_DER=" << Fixed(*m) << "\n";
  if (dt_latent) os << "DT_LATENT=" << Fixed(*dt_latent) << "\n";
  if (dt_mvector) os << "DT_MVECTOR=" << Fixed(*dt_mvector) << "\n";
  if (tau) os << "TAU=" << Fixed(*tau) << "\n";
  for (const auto &r : recordings) {
    os << "RECORDING " << r.recording_id << " SEGMENTS=" << r.num_segments
       << " CLUSTERS=" << r.num_clusters;
    if (r.der) os << " DER=" << Fixed(r.der->der);
    if (r.dt_latent) os << " DT_LATENT=" << Fixed(*r.dt_latent);
    if (r.dt_mvector) os << " DT_MVECTOR=" << Fixed(*r.dt_mvector);
    if (r.tau) os << " TAU=" << Fixed(*r.tau);
    os << "\n";
  }
  for (const auto &w : warnings) os << "WARNING " << w << "\n";
  return os.str();
}

OutputTracker::~OutputTracker() {
  if (committed_) return;
  for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) {
    std::error_code ec;
    std::filesystem::remove(*it, ec);
  }
}

const std::filesystem::path &OutputTracker::Track(
    const std::filesystem::path &path) {
  paths_.push_back(path);
  return paths_.back();
}

RunReport RunPipeline(const PipelineConfig &config) {
  if (config.output_dir.empty()) throw UsageError("run needs an output dir");
  if (config.jobs < 1) throw UsageError("--jobs must be >= 1");
  namespace fs = std::filesystem;
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  OutputTracker tracker;
  RunReport report;

  fs::path train_path = config.train_embeddings;
  std::vector<fs::path> test_paths = config.test_embeddings;
  std::vector<fs::path> ref_paths = config.reference_rttms;
  std::vector<fs::path> dev_paths = config.dev_embeddings;
  std::vector<fs::path> dev_ref_paths = config.dev_rttms;

  if (config.synth) {
    Stage("synth", [&] {
      SynthData data = Generate(*config.synth);
      // Track before writing so a failure part-way still cleans up.
      const fs::path dir = out / "data";
      tracker.Track(dir / "train.csv");
      for (const auto *group : {&data.conversations, &data.dev})
        for (const auto &conv : *group) {
          const std::string id = conv.segments.records.front().recording_id;
          tracker.Track(dir / (id + ".csv"));
          tracker.Track(dir / (id + ".rttm"));
        }
      SynthFiles files = WriteSynthData(data, dir);
      train_path = files.train;
      test_paths = files.conversation_embeddings;
      ref_paths = files.conversation_rttms;
      dev_paths = files.dev_embeddings;
      dev_ref_paths = files.dev_rttms;
      return 0;
    });
  }
  if (train_path.empty()) throw UsageError("run needs train embeddings");
  if (test_paths.empty()) throw UsageError("run needs test embeddings");

  const PldaModel plda = Stage("train-plda", [&] {
    PldaTrainResult r = TrainPlda(ReadEmbeddings(train_path), config.plda);
    for (auto &w : r.warnings) report.warnings.push_back("train-plda: " + w);
    WritePlda(r.model, tracker.Track(out / "plda.bin"));
    return r.model;
  });

  Prepared test = Stage("extract", [&] {
    Prepared p = Prepare(ReadAll(test_paths), ref_paths, plda);
    std::vector<EmbeddingSet> parts;
    for (const auto &conv : p.conversations)
      parts.push_back(EmbeddingSet{conv.records, conv.latents});
    WriteEmbeddings(ConcatEmbeddings(parts), tracker.Track(out / "latents.csv"));
    return p;
  });

  const bool mbn = config.mode == ClusteringMode::kMbn;
  MbnStageOptions mbn_opts = config.mbn;
  if (mbn_opts.num_speakers <= 0) mbn_opts.num_speakers = config.num_speakers;
  // A reference count is more specific than the global fallback.
  auto counts_for_mbn = [&](const Prepared &p) {
    MbnStageOptions o = mbn_opts;
    if (config.mbn.num_speakers <= 0 && p.has_reference) o.num_speakers = 0;
    return o;
  };

  if (mbn) {
    Stage("mbn", [&] {
      std::vector<MbnModel> models;
      auto w = RunMbnStage(&test.conversations, plda, counts_for_mbn(test),
                           config.seed, test.speaker_counts, config.jobs,
                           &models);
      for (auto &s : w) report.warnings.push_back("mbn: " + s);
      std::vector<EmbeddingSet> parts;
      for (size_t c = 0; c < test.conversations.size(); ++c) {
        const auto &conv = test.conversations[c];
        parts.push_back(MVectorIndexSet(conv.mvectors, conv.records));
        fs::create_directories(out / "mbn");
        WriteMbnDump(models[c], tracker.Track(out / "mbn" / (conv.id + ".json")));
      }
      WriteEmbeddings(ConcatEmbeddings(parts),
                      tracker.Track(out / "mvectors.csv"));
      return 0;
    });
  }

  if (!config.tau_overrides.empty() && config.stop != StopMode::kThreshold)
    throw UsageError("tau overrides need the threshold stop rule");
  bool needs_global_tau = false;
  for (const auto &conv : test.conversations)
    needs_global_tau |= !config.tau_overrides.count(conv.id);
  std::optional<double> tau = config.tau;
  if (config.stop == StopMode::kThreshold && !tau && needs_global_tau) {
    tau = Stage("calibrate", [&] {
      if (dev_paths.empty() || dev_ref_paths.empty())
        throw UsageError(
            "threshold stop without --tau needs dev embeddings and dev RTTMs");
      Prepared dev = Prepare(ReadAll(dev_paths), dev_ref_paths, plda);
      if (mbn) {
        auto w = RunMbnStage(&dev.conversations, plda, counts_for_mbn(dev),
                             config.seed, dev.speaker_counts, config.jobs);
        for (auto &s : w) report.warnings.push_back("calibrate: " + s);
      }
      std::vector<DevConversation> convs(dev.conversations.size());
      ParallelFor(static_cast<int>(convs.size()), config.jobs, [&](int c) {
        const auto &conv = dev.conversations[c];
        convs[c].sim = ConversationSimilarity(conv, config.mode, &plda);
        convs[c].reference = dev.reference.Subset(conv.id);
        convs[c].segments = conv.records;
      });
      const DerOptions der = config.der;
      CalibrationResult cal =
          CalibrateThreshold(convs, config.grid,
                             [der](const Annotation &r, const Annotation &h) {
                               return ComputeDer(r, h, der);
                             });
      return cal.tau;
    });
  }
  report.tau = tau;

  const int count = static_cast<int>(test.conversations.size());
  std::vector<Annotation> hyps(count);
  report.recordings.resize(count);
  Stage("cluster", [&] {
    ParallelFor(count, config.jobs, [&](int c) {
      const Conversation &conv = test.conversations[c];
      StopRule stop = OracleStop{1};
      std::optional<double> conv_tau;
      if (config.stop == StopMode::kOracle) {
        stop = OracleStop{
            OracleCount(conv.id, test.speaker_counts, config.num_speakers)};
      } else {
        auto it = config.tau_overrides.find(conv.id);
        conv_tau = it != config.tau_overrides.end() ? it->second : *tau;
        stop = ThresholdStop{*conv_tau};
      }
      ClusterAssignment a;
      try {
        a = Ahc(ConversationSimilarity(conv, config.mode, &plda), stop);
      } catch (const DataError &e) {
        throw DataError("recording '" + conv.id + "': " + e.what());
      }
      hyps[c] = AssignmentToAnnotation(conv.records, a);
      RecordingResult &r = report.recordings[c];
      r.recording_id = conv.id;
      r.num_segments = static_cast<int>(conv.records.size());
      r.num_clusters = a.num_clusters;
      r.tau = conv_tau;
    });
    Annotation all;
    for (const auto &h : hyps)
      all.entries.insert(all.entries.end(), h.entries.begin(), h.entries.end());
    WriteRttm(all, tracker.Track(out / "hypothesis.rttm"));
    return 0;
  });

  Stage("score", [&] {
    ParallelFor(count, config.jobs, [&](int c) {
      const Conversation &conv = test.conversations[c];
      RecordingResult &r = report.recordings[c];
      if (test.has_reference) {
        Annotation ref = test.reference.Subset(conv.id);
        if (!ref.entries.empty()) r.der = ComputeDer(ref, hyps[c], config.der);
      }
      auto labels = SegmentLabels(conv.records,
                                  test.has_reference ? &test.reference : nullptr,
                                  config.dt_labels);
      if (!labels) return;
      r.dt_latent = ProjectedDt(conv.latents, *labels);
      if (mbn && !conv.mvectors.empty()) {
        RowMatrix dense(static_cast<Eigen::Index>(conv.mvectors.size()),
                        conv.mvectors.front().Width());
        for (size_t i = 0; i < conv.mvectors.size(); ++i)
          dense.row(i) = conv.mvectors[i].ToDense().transpose();
        r.dt_mvector = ProjectedDt(dense, *labels);
      }
    });
    if (test.has_reference) {
      Annotation all;
      for (const auto &h : hyps)
        all.entries.insert(all.entries.end(), h.entries.begin(),
                           h.entries.end());
      report.der = ComputeDer(test.reference, all, config.der);
    }
    auto mean_of = [&](auto member) -> std::optional<double> {
      double sum = 0.0;
      int n = 0;
      for (const auto &r : report.recordings)
        if (const auto &v = r.*member) {
          sum += *v;
          ++n;
        }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    report.dt_latent = mean_of(&RecordingResult::dt_latent);
    report.dt_mvector = mean_of(&RecordingResult::dt_mvector);
    report.report_path = out / "report.txt";
    const std::string text = report.Text();
    WriteFileAtomically(tracker.Track(report.report_path),
                        [&](std::ostream &os) { os << text; });
    return 0;
  });

  tracker.Commit();
  return report;
}

}  // namespace mbndiar
