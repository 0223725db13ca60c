// src/cli.cc
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

#include "mbndiar/cli.h"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>

#include "CLI11.hpp"
#include "mbndiar/pipeline.h"

namespace mbndiar {

namespace {

namespace fs = std::filesystem;

constexpr const char *kSeedEnv = "MBN_SEED";

std::string Fixed(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

std::vector<fs::path> ToPaths(const std::vector<std::string> &v) {
  return {v.begin(), v.end()};
}

EmbeddingSet ReadAllEmbeddings(const std::vector<std::string> &paths) {
  std::vector<EmbeddingSet> sets;
  for (const auto &p : paths) sets.push_back(ReadEmbeddings(p));
  return ConcatEmbeddings(sets);
}

Annotation ReadAllRttm(const std::vector<std::string> &paths) {
  Annotation out;
  for (const auto &p : paths) {
    Annotation a = ReadRttm(p);
    out.entries.insert(out.entries.end(), a.entries.begin(), a.entries.end());
  }
  return out;
}

void MakeParent(const fs::path &path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// Options shared by the subcommands that build MBN networks.
struct MbnFlags {
  MbnStageOptions opts;
  std::string floor = "balanced";

  void Add(CLI::App *app) {
    app->add_option("--V,--ensemble-size", opts.ensemble_size,
                    "clusterings per layer")
        ->capture_default_str();
    app->add_option("--k1", opts.k1, "centroids in the bottom layer")
        ->capture_default_str();
    app->add_option("--delta", opts.delta, "layer shrink factor in [0, 1)")
        ->capture_default_str();
    app->add_option("--floor", floor, "top-layer floor policy")
        ->check(CLI::IsMember({"balanced", "imbalanced"}))
        ->capture_default_str();
    app->add_option("--mbn-speakers", opts.num_speakers,
                    "speaker count O for the balanced floor (0: from the "
                    "reference)")
        ->capture_default_str();
    app->add_option("--k-floor", opts.k_floor, "floor of the imbalanced policy")
        ->capture_default_str();
  }
  MbnStageOptions Resolve() const {
    MbnStageOptions o = opts;
    o.floor_kind = ParseFloorKind(floor);
    return o;
  }
};

struct Context {
  std::ostream &out;
  std::ostream &err;
};

void PrintWarnings(const Context &ctx, const std::vector<std::string> &w) {
  for (const auto &s : w) ctx.err << "warning: " << s << "\n";
}

// Each subcommand registers its options and a body run after parsing.
using Body = std::function<void(const Context &)>;

Body AddSynth(CLI::App &app) {
  auto *cmd = app.add_subcommand("synth", "generate synthetic conversations");
  auto spec = std::make_shared<SynthSpec>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--out", *out, "output directory")->required();
  cmd->add_option("--pool", spec->n_speakers_pool, "PLDA training speakers")
      ->capture_default_str();
  cmd->add_option("--speakers", spec->speakers_per_conversation,
                  "speakers per conversation")
      ->capture_default_str();
  cmd->add_option("--segs", spec->segments_per_speaker,
                  "segments per speaker")
      ->capture_default_str();
  cmd->add_option("--conversations", spec->n_conversations,
                  "test conversations")
      ->capture_default_str();
  cmd->add_option("--dev-conversations", spec->n_dev_conversations,
                  "dev conversations")
      ->capture_default_str();
  cmd->add_option("--dim", spec->dim, "embedding dimension")
      ->capture_default_str();
  cmd->add_option("--between-scale", spec->between_scale,
                  "std of speaker means")
      ->capture_default_str();
  cmd->add_option("--within-scale", spec->within_scale,
                  "std around a speaker mean")
      ->capture_default_str();
  cmd->add_option("--segment-duration", spec->segment_duration, "seconds")
      ->capture_default_str();
  cmd->add_option("--segment-shift", spec->segment_shift, "seconds")
      ->capture_default_str();
  cmd->add_option("--seed", spec->seed, "random seed")
      ->envname(kSeedEnv)
      ->capture_default_str();
  return [=](const Context &ctx) {
    SynthData data = Generate(*spec);
    OutputTracker tracker;
    tracker.Track(fs::path(*out) / "train.csv");
    for (const auto *group : {&data.conversations, &data.dev})
      for (const auto &conv : *group) {
        const std::string id = conv.segments.records.front().recording_id;
        tracker.Track(fs::path(*out) / (id + ".csv"));
        tracker.Track(fs::path(*out) / (id + ".rttm"));
      }
    SynthFiles files = WriteSynthData(data, *out);
    tracker.Commit();
    for (const auto &f : files.All()) ctx.out << f.string() << "\n";
  };
}

Body AddTrainPlda(CLI::App &app) {
  auto *cmd = app.add_subcommand("train-plda", "train a two-covariance PLDA");
  struct Args {
    std::string train, out;
    PldaOptions opts;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--train", a->train, "labelled training embeddings")
      ->required();
  cmd->add_option("--out", a->out, "model file")->required();
  cmd->add_option("--max-iters", a->opts.max_iters, "EM iterations")
      ->capture_default_str();
  cmd->add_option("--tol", a->opts.tol, "log-likelihood gain to stop at")
      ->capture_default_str();
  cmd->add_flag("--length-norm,!--no-length-norm", a->opts.length_normalize,
                "length-normalize embeddings")
      ->capture_default_str();
  return [=](const Context &ctx) {
    PldaTrainResult r = TrainPlda(ReadEmbeddings(a->train), a->opts);
    PrintWarnings(ctx, r.warnings);
    MakeParent(a->out);
    WritePlda(r.model, a->out);
    for (size_t i = 0; i < r.log_likelihoods.size(); ++i)
      ctx.out << "ITER=" << i << " LOGLIK=" << Fixed(r.log_likelihoods[i])
              << "\n";
    ctx.out << "PSI=";
    for (Eigen::Index j = 0; j < r.model.psi.size(); ++j)
      ctx.out << (j ? "," : "") << FormatDouble(r.model.psi(j));
    ctx.out << "\n";
  };
}

Body AddExtract(CLI::App &app) {
  auto *cmd = app.add_subcommand("extract", "map embeddings to PLDA latents");
  struct Args {
    std::string plda, out;
    std::vector<std::string> input;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--plda", a->plda, "PLDA model")->required();
  cmd->add_option("--input", a->input, "embedding files")->required();
  cmd->add_option("--out", a->out, "latent file (.csv or .bin)")->required();
  return [=](const Context &ctx) {
    LatentSet latents =
        ExtractLatent(ReadPlda(a->plda), ReadAllEmbeddings(a->input));
    MakeParent(a->out);
    WriteEmbeddings(ToEmbeddingSet(latents), a->out);
    ctx.out << "SEGMENTS=" << latents.Size() << " DIM=" << latents.Dim()
            << "\n";
  };
}

Body AddMbn(CLI::App &app) {
  auto *cmd = app.add_subcommand(
      "mbn", "train one MBN per recording and emit m-vectors");
  struct Args {
    std::string plda, latents, out, dump_dir, dense_dir;
    std::vector<std::string> reference;
    MbnFlags mbn;
    int num_speakers = 0;
    uint64_t seed = 0;
    int jobs = 1;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--plda", a->plda, "PLDA model")->required();
  cmd->add_option("--latents", a->latents, "latent file")->required();
  cmd->add_option("--out", a->out, "m-vector index file")->required();
  cmd->add_option("--dump-dir", a->dump_dir,
                  "write per-recording network dumps (JSON) here");
  cmd->add_option("--dense-dir", a->dense_dir,
                  "write densely expanded m-vectors, one file per recording");
  cmd->add_option("--reference", a->reference,
                  "reference RTTMs (speaker counts for the floor)");
  cmd->add_option("--num-speakers", a->num_speakers,
                  "speaker count when no reference is given");
  a->mbn.Add(cmd);
  cmd->add_option("--seed", a->seed, "random seed")
      ->envname(kSeedEnv)
      ->capture_default_str();
  cmd->add_option("--jobs", a->jobs, "parallel recordings")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  return [=](const Context &ctx) {
    const PldaModel plda = ReadPlda(a->plda);
    auto convs = SplitConversations(ToLatentSet(ReadEmbeddings(a->latents)));
    std::map<std::string, int> counts;
    if (!a->reference.empty()) counts = SpeakerCounts(ReadAllRttm(a->reference));
    MbnStageOptions opts = a->mbn.Resolve();
    if (opts.num_speakers <= 0 && counts.empty())
      opts.num_speakers = a->num_speakers;
    std::vector<MbnModel> models;
    PrintWarnings(ctx, RunMbnStage(&convs, plda, opts, a->seed, counts,
                                   a->jobs, &models));
    OutputTracker tracker;
    std::vector<EmbeddingSet> parts;
    for (size_t c = 0; c < convs.size(); ++c) {
      parts.push_back(MVectorIndexSet(convs[c].mvectors, convs[c].records));
      if (!a->dump_dir.empty()) {
        fs::create_directories(a->dump_dir);
        WriteMbnDump(models[c], tracker.Track(fs::path(a->dump_dir) /
                                              (convs[c].id + ".json")));
      }
      if (!a->dense_dir.empty()) {
        fs::create_directories(a->dense_dir);
        WriteEmbeddings(
            MVectorsToEmbeddingSet(convs[c].mvectors, convs[c].records),
            tracker.Track(fs::path(a->dense_dir) / (convs[c].id + ".bin")));
      }
      std::string sizes;
      for (int k : models[c].layer_sizes)
        sizes += (sizes.empty() ? "" : ",") + std::to_string(k);
      ctx.out << "RECORDING " << convs[c].id
              << " SEGMENTS=" << convs[c].records.size() << " LAYERS=" << sizes
              << " WIDTH="
              << (convs[c].mvectors.empty() ? 0 : convs[c].mvectors[0].Width())
              << "\n";
    }
    MakeParent(a->out);
    WriteEmbeddings(ConcatEmbeddings(parts), tracker.Track(a->out));
    tracker.Commit();
  };
}

// Input for clustering-style commands: latents (baseline) or m-vector
// indices (mbn).
std::vector<Conversation> LoadConversations(const std::string &path,
                                            ClusteringMode mode) {
  EmbeddingSet set = ReadEmbeddings(path);
  if (mode == ClusteringMode::kBaseline)
    return SplitConversations(ToLatentSet(set));
  std::vector<Conversation> convs =
      SplitConversations(ToLatentSet(set));  // grouping only
  for (auto &conv : convs) {
    EmbeddingSet part{conv.records, conv.latents};
    conv.mvectors = MVectorsFromIndexSet(part);
    conv.latents.resize(0, 0);
  }
  return convs;
}

Body AddCluster(CLI::App &app) {
  auto *cmd = app.add_subcommand("cluster", "average-linkage AHC per recording");
  struct Args {
    std::string input, plda, out, mode = "mbn", stop = "oracle";
    std::optional<double> tau;
    std::vector<std::string> reference, tau_override;
    int num_speakers = 0;
    int jobs = 1;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--input", a->input,
                  "latents (baseline) or m-vector indices (mbn)")
      ->required();
  cmd->add_option("--mode", a->mode, "similarity")
      ->check(CLI::IsMember({"baseline", "mbn"}))
      ->capture_default_str();
  cmd->add_option("--plda", a->plda, "PLDA model (baseline mode)");
  cmd->add_option("--stop", a->stop, "stopping rule")
      ->check(CLI::IsMember({"oracle", "threshold"}))
      ->capture_default_str();
  cmd->add_option("--tau", a->tau, "merge threshold (threshold stop)");
  cmd->add_option("--tau-override", a->tau_override,
                  "per-recording threshold as recording=tau (repeatable)");
  cmd->add_option("--reference", a->reference,
                  "reference RTTMs (oracle speaker counts)");
  cmd->add_option("--num-speakers", a->num_speakers,
                  "oracle speaker count when no reference is given");
  cmd->add_option("--out", a->out, "hypothesis RTTM")->required();
  cmd->add_option("--jobs", a->jobs, "parallel recordings")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  return [=](const Context &ctx) {
    const ClusteringMode mode = ParseClusteringMode(a->mode);
    const StopMode stop_mode = ParseStopMode(a->stop);
    const auto overrides = ParseTauOverrides(a->tau_override);
    if (!overrides.empty() && stop_mode != StopMode::kThreshold)
      throw UsageError("--tau-override needs --stop threshold");
    std::optional<PldaModel> plda;
    if (mode == ClusteringMode::kBaseline) {
      if (a->plda.empty()) throw UsageError("--mode baseline needs --plda");
      plda = ReadPlda(a->plda);
    }
    auto convs = LoadConversations(a->input, mode);
    std::map<std::string, int> counts;
    if (!a->reference.empty()) counts = SpeakerCounts(ReadAllRttm(a->reference));
    std::vector<Annotation> hyps(convs.size());
    std::vector<int> clusters(convs.size());
    if (stop_mode == StopMode::kThreshold && !a->tau)
      for (const auto &conv : convs)
        if (!overrides.count(conv.id))
          throw UsageError("--stop threshold needs --tau or a --tau-override "
                           "for recording '" + conv.id + "'");
    ParallelFor(static_cast<int>(convs.size()), a->jobs, [&](int c) {
      auto it = overrides.find(convs[c].id);
      StopRule stop = ThresholdStop{it != overrides.end() ? it->second
                                                          : a->tau.value_or(0.0)};
      if (stop_mode == StopMode::kOracle) {
        auto it = counts.find(convs[c].id);
        int n = it != counts.end() ? it->second : a->num_speakers;
        if (n <= 0)
          throw UsageError("oracle stop for recording '" + convs[c].id +
                           "' needs --reference or --num-speakers");
        stop = OracleStop{n};
      }
      ClusterAssignment asg = Ahc(
          ConversationSimilarity(convs[c], mode, plda ? &*plda : nullptr), stop);
      clusters[c] = asg.num_clusters;
      hyps[c] = AssignmentToAnnotation(convs[c].records, asg);
    });
    Annotation all;
    for (const auto &h : hyps)
      all.entries.insert(all.entries.end(), h.entries.begin(), h.entries.end());
    MakeParent(a->out);
    WriteRttm(all, a->out);
    for (size_t c = 0; c < convs.size(); ++c)
      ctx.out << "RECORDING " << convs[c].id << " CLUSTERS=" << clusters[c]
              << "\n";
  };
}

Body AddScore(CLI::App &app) {
  auto *cmd = app.add_subcommand("score", "DER of a hypothesis RTTM");
  struct Args {
    std::vector<std::string> reference, hypothesis;
    std::string embeddings, dt_labels = "longest";
    bool mvectors = false;
    DerOptions der;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--reference", a->reference, "reference RTTMs")->required();
  cmd->add_option("--hypothesis", a->hypothesis, "hypothesis RTTMs")
      ->required();
  cmd->add_option("--collar", a->der.collar, "seconds around reference "
                                             "boundaries left unscored")
      ->capture_default_str();
  cmd->add_flag("--skip-overlap,!--no-skip-overlap", a->der.skip_overlap,
                "leave overlapped reference speech unscored")
      ->capture_default_str();
  cmd->add_option("--embeddings", a->embeddings,
                  "also report DT of these vectors (labels from the records "
                  "or the reference)");
  cmd->add_flag("--mvectors", a->mvectors,
                "--embeddings holds m-vector indices; expand before DT");
  cmd->add_option("--dt-labels", a->dt_labels,
                  "class of unlabelled segments: longest overlapping "
                  "reference speaker, or the first one")
      ->check(CLI::IsMember({"longest", "first"}))
      ->capture_default_str();
  return [=](const Context &ctx) {
    const DtLabelPolicy policy = ParseDtLabelPolicy(a->dt_labels);
    const Annotation ref = ReadAllRttm(a->reference);
    const DerBreakdown d = ComputeDer(ref, ReadAllRttm(a->hypothesis), a->der);
    ctx.out << d.ReportLine() << "\n";
    if (a->embeddings.empty()) return;
    auto convs = SplitConversations(ToLatentSet(ReadEmbeddings(a->embeddings)));
    double sum = 0.0;
    int n = 0;
    for (auto &conv : convs) {
      auto labels = SegmentLabels(conv.records, &ref, policy);
      if (!labels) continue;
      RowMatrix vectors = conv.latents;
      if (a->mvectors) {
        auto mv = MVectorsFromIndexSet(EmbeddingSet{conv.records, conv.latents});
        vectors.resize(static_cast<Eigen::Index>(mv.size()), mv.front().Width());
        for (size_t i = 0; i < mv.size(); ++i)
          vectors.row(i) = mv[i].ToDense().transpose();
      }
      if (auto dt = ProjectedDt(vectors, *labels)) {
        sum += *dt;
        ++n;
      }
    }
    if (n > 0) ctx.out << "DT=" << Fixed(sum / n) << "\n";
  };
}

Body AddCalibrate(CLI::App &app) {
  auto *cmd = app.add_subcommand(
      "calibrate", "pick the AHC threshold minimizing dev DER");
  struct Args {
    std::string input, plda, mode = "mbn", curve;
    std::vector<std::string> reference;
    ThresholdGrid grid;
    DerOptions der;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--input", a->input,
                  "dev latents (baseline) or m-vector indices (mbn)")
      ->required();
  cmd->add_option("--mode", a->mode, "similarity")
      ->check(CLI::IsMember({"baseline", "mbn"}))
      ->capture_default_str();
  cmd->add_option("--plda", a->plda, "PLDA model (baseline mode)");
  cmd->add_option("--reference", a->reference, "dev reference RTTMs")
      ->required();
  cmd->add_option("--lo", a->grid.lo, "grid start")->capture_default_str();
  cmd->add_option("--hi", a->grid.hi, "grid end")->capture_default_str();
  cmd->add_option("--step", a->grid.step, "grid step")->capture_default_str();
  cmd->add_option("--collar", a->der.collar, "scoring collar")
      ->capture_default_str();
  cmd->add_flag("--skip-overlap,!--no-skip-overlap", a->der.skip_overlap,
                "leave overlapped reference speech unscored")
      ->capture_default_str();
  cmd->add_option("--curve", a->curve, "write the tau,der curve as CSV");
  return [=](const Context &ctx) {
    const ClusteringMode mode = ParseClusteringMode(a->mode);
    std::optional<PldaModel> plda;
    if (mode == ClusteringMode::kBaseline) {
      if (a->plda.empty()) throw UsageError("--mode baseline needs --plda");
      plda = ReadPlda(a->plda);
    }
    auto convs = LoadConversations(a->input, mode);
    const Annotation ref = ReadAllRttm(a->reference);
    std::vector<DevConversation> dev;
    for (const auto &conv : convs)
      dev.push_back({ConversationSimilarity(conv, mode, plda ? &*plda : nullptr),
                     ref.Subset(conv.id), conv.records});
    const DerOptions der = a->der;
    CalibrationResult r = CalibrateThreshold(
        dev, a->grid, [der](const Annotation &x, const Annotation &y) {
          return ComputeDer(x, y, der);
        });
    if (!a->curve.empty()) {
      MakeParent(a->curve);
      WriteFileAtomically(a->curve, [&](std::ostream &os) {
        os << "tau,der\n";
        for (const auto &[tau, d] : r.curve)
          os << FormatDouble(tau) << "," << FormatDouble(d) << "\n";
      });
    }
    double best = 0.0;
    for (const auto &[tau, d] : r.curve)
      if (tau == r.tau) best = d;
    ctx.out << "TAU=" << Fixed(r.tau) << " DER=" << Fixed(best) << "\n";
  };
}

Body AddProject(CLI::App &app) {
  auto *cmd = app.add_subcommand("project", "2-D PCA projection for plotting");
  struct Args {
    std::string input, out;
    bool labels = false, mvectors = false;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--input", a->input, "vectors to project")->required();
  cmd->add_option("--out", a->out, "PCA CSV")->required();
  cmd->add_flag("--labels", a->labels, "append the speaker label column");
  cmd->add_flag("--mvectors", a->mvectors,
                "input holds m-vector indices; expand before projecting");
  return [=](const Context &ctx) {
    EmbeddingSet set = ReadEmbeddings(a->input);
    RowMatrix vectors = set.vectors;
    if (a->mvectors) {
      auto mv = MVectorsFromIndexSet(set);
      if (mv.empty()) throw DataError("no m-vectors in " + a->input);
      vectors.resize(static_cast<Eigen::Index>(mv.size()), mv.front().Width());
      for (size_t i = 0; i < mv.size(); ++i)
        vectors.row(i) = mv[i].ToDense().transpose();
    }
    PcaResult pca = PcaProject(vectors, 2);
    MakeParent(a->out);
    WritePcaCsv(pca.coords, set.records, a->out, a->labels);
    if (pca.degenerate) ctx.err << "warning: all vectors are identical\n";
    ctx.out << "VARIANCE=";
    for (Eigen::Index j = 0; j < std::min<Eigen::Index>(2, pca.eigenvalues.size());
         ++j)
      ctx.out << (j ? "," : "") << Fixed(pca.eigenvalues(j));
    ctx.out << "\n";
  };
}

Body AddRun(CLI::App &app) {
  auto *cmd = app.add_subcommand("run", "run every stage from one config");
  struct Args {
    std::string train, out_dir, mode = "mbn", stop = "oracle";
    std::string dt_labels = "longest";
    std::vector<std::string> test, reference, dev, dev_reference, tau_override;
    bool synth = false;
    SynthSpec spec;
    std::optional<uint64_t> synth_seed;
    MbnFlags mbn;
    PipelineConfig config;
    bool dump_config = false;
    std::string config_file;
  };
  auto a = std::make_shared<Args>();
  PipelineConfig &c = a->config;
  // The file itself is read through the top-level app; see CliMain.
  cmd->add_option("--config", a->config_file,
                  "flat TOML config; flags override its keys")
      ->configurable(false);
  cmd->add_option("--train", a->train, "labelled PLDA training embeddings");
  cmd->add_option("--test", a->test, "test embedding files");
  cmd->add_option("--reference", a->reference, "test reference RTTMs");
  cmd->add_option("--dev", a->dev, "dev embedding files (calibration)");
  cmd->add_option("--dev-reference", a->dev_reference, "dev reference RTTMs");
  cmd->add_option("--out-dir", a->out_dir, "output directory")->required();

  cmd->add_flag("--synth", a->synth,
                "generate synthetic data into out-dir/data instead of "
                "reading files");
  cmd->add_option("--synth-pool", a->spec.n_speakers_pool)
      ->capture_default_str();
  cmd->add_option("--synth-speakers", a->spec.speakers_per_conversation)
      ->capture_default_str();
  cmd->add_option("--synth-segs", a->spec.segments_per_speaker)
      ->capture_default_str();
  cmd->add_option("--synth-conversations", a->spec.n_conversations)
      ->capture_default_str();
  cmd->add_option("--synth-dev-conversations", a->spec.n_dev_conversations)
      ->capture_default_str();
  cmd->add_option("--synth-dim", a->spec.dim)->capture_default_str();
  cmd->add_option("--synth-between-scale", a->spec.between_scale)
      ->capture_default_str();
  cmd->add_option("--synth-within-scale", a->spec.within_scale)
      ->capture_default_str();
  cmd->add_option("--synth-segment-duration", a->spec.segment_duration)
      ->capture_default_str();
  cmd->add_option("--synth-segment-shift", a->spec.segment_shift)
      ->capture_default_str();
  cmd->add_option("--synth-seed", a->synth_seed,
                  "synthetic data seed (default: --seed)");

  cmd->add_option("--plda-max-iters", c.plda.max_iters)->capture_default_str();
  cmd->add_option("--plda-tol", c.plda.tol)->capture_default_str();
  cmd->add_flag("--plda-length-norm,!--no-plda-length-norm",
                c.plda.length_normalize)
      ->capture_default_str();

  a->mbn.Add(cmd);

  cmd->add_option("--mode", a->mode, "clustering path")
      ->check(CLI::IsMember({"baseline", "mbn"}))
      ->capture_default_str();
  cmd->add_option("--stop", a->stop, "AHC stopping rule")
      ->check(CLI::IsMember({"oracle", "threshold"}))
      ->capture_default_str();
  cmd->add_option("--tau", c.tau,
                  "fixed threshold; calibrated on the dev set when unset");
  cmd->add_option("--tau-override", a->tau_override,
                  "per-recording threshold as recording=tau (repeatable)");
  cmd->add_option("--calib-lo", c.grid.lo)->capture_default_str();
  cmd->add_option("--calib-hi", c.grid.hi)->capture_default_str();
  cmd->add_option("--calib-step", c.grid.step)->capture_default_str();
  cmd->add_option("--num-speakers", c.num_speakers,
                  "speaker count when no reference is given");
  cmd->add_option("--collar", c.der.collar)->capture_default_str();
  cmd->add_flag("--skip-overlap,!--no-skip-overlap", c.der.skip_overlap)
      ->capture_default_str();
  cmd->add_option("--dt-labels", a->dt_labels,
                  "class of unlabelled segments for DT (longest|first)")
      ->check(CLI::IsMember({"longest", "first"}))
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "master seed")
      ->envname(kSeedEnv)
      ->capture_default_str();
  cmd->add_option("--jobs", c.jobs, "parallel recordings")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_flag("--dump-config", a->dump_config,
                "print the effective config as TOML and exit")
      ->configurable(false);

  return [=, cmd = cmd](const Context &ctx) {
    if (a->dump_config) {
      ctx.out << cmd->config_to_str(true, true);
      return;
    }
    PipelineConfig config = a->config;
    config.output_dir = a->out_dir;
    config.train_embeddings = a->train;
    config.test_embeddings = ToPaths(a->test);
    config.reference_rttms = ToPaths(a->reference);
    config.dev_embeddings = ToPaths(a->dev);
    config.dev_rttms = ToPaths(a->dev_reference);
    config.mode = ParseClusteringMode(a->mode);
    config.stop = ParseStopMode(a->stop);
    config.mbn = a->mbn.Resolve();
    config.tau_overrides = ParseTauOverrides(a->tau_override);
    config.dt_labels = ParseDtLabelPolicy(a->dt_labels);
    if (a->synth) {
      SynthSpec spec = a->spec;
      spec.seed = a->synth_seed.value_or(config.seed);
      config.synth = spec;
    }
    RunReport r = RunPipeline(config);
    PrintWarnings(ctx, r.warnings);
    ctx.out << (r.der ? r.der->ReportLine() : std::string("DER=NA")) << "\n";
    if (r.dt_latent) ctx.out << "DT_LATENT=" << Fixed(*r.dt_latent) << "\n";
    if (r.dt_mvector) ctx.out << "DT_MVECTOR=" << Fixed(*r.dt_mvector) << "\n";
    if (r.tau) ctx.out << "TAU=" << Fixed(*r.tau) << "\n";
    ctx.out << "REPORT=" << r.report_path.string() << "\n";
  };
}

// CLI11 reads config files only on the top-level app. Flat keys are routed
// to the `run` subcommand by giving every item that parent.
class RunConfigFormat : public CLI::ConfigBase {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream &input) const override {
    std::vector<CLI::ConfigItem> items = CLI::ConfigBase::from_config(input);
    for (auto &item : items) {
      if (!item.parents.empty())
        throw CLI::ConfigError("config sections are not supported ([" +
                               item.parents.front() + "])");
      item.parents.push_back("run");
    }
    return items;
  }
};

// The value following `run ... --config`, if any.
std::optional<std::string> FindRunConfig(const std::vector<std::string> &args) {
  auto run = std::find(args.begin(), args.end(), "run");
  if (run == args.end()) return std::nullopt;
  for (auto it = run + 1; it != args.end(); ++it) {
    if (*it == "--config" && it + 1 != args.end()) return *(it + 1);
    if (it->rfind("--config=", 0) == 0) return it->substr(9);
  }
  return std::nullopt;
}

}  // namespace

int CliMain(const std::vector<std::string> &args, std::ostream &out,
            std::ostream &err) {
  CLI::App app{"Speaker diarization with PLDA latents and multilayer "
               "bootstrap networks",
               "mbn-diar"};
  app.require_subcommand(1);
  if (auto config = FindRunConfig(args)) {
    app.set_config("--run-config", *config, "", true)->group("");
    app.config_formatter(std::make_shared<RunConfigFormat>());
    app.allow_config_extras(CLI::config_extras_mode::error);
  }

  std::vector<std::pair<CLI::App *, Body>> commands;
  for (auto add : {AddSynth, AddTrainPlda, AddExtract, AddMbn, AddCluster,
                   AddScore, AddCalibrate, AddProject, AddRun}) {
    Body body = add(app);
    commands.emplace_back(
        app.get_subcommands([](CLI::App *) { return true; }).back(),
        std::move(body));
  }

  const Context ctx{out, err};
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::string stage;
  try {
    for (auto &[cmd, body] : commands) {
      if (!cmd->parsed()) continue;
      stage = cmd->get_name();
      body(ctx);
    }
  } catch (const UsageError &e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError &e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError &e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception &e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace mbndiar
