#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ttcap/adaptation.hpp"
#include "ttcap/corruptions.hpp"
#include "ttcap/evaluation.hpp"
#include "ttcap/meta.hpp"
#include "ttcap/report.hpp"

namespace ttcap {

enum class BackendKind { toy, external };

// Corruption sweep applied before adaptation: every image is expanded into one
// sample per (kind, severity).
struct CorruptionSweep {
    std::vector<CorruptionKind> kinds;
    std::vector<int> severities;
    long seed = 0;
};

struct RunConfig {
    BackendKind backend = BackendKind::toy;
    TttConfig ttt;
    std::optional<std::string> meta_init_path;
    std::optional<CorruptionSweep> corruption;
    std::string toy_world_path;   // exactly one dataset source
    std::string images_dir;
    std::string annotations_path;
    std::string synonyms_path;
    std::string output_dir;
    int workers = 1;
    long global_seed = 0;

    void validate() const;
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

// Set TTCAP_BACKEND=toy|external to override config.backend.
BackendKind backend_kind_with_env_override(BackendKind configured);

struct SampleStatus {
    std::string sample_id;
    std::string status;  // "ok", "skipped", "failed", "fallback"
    std::string detail;
    double seconds = 0.0;
};

struct RunManifest {
    std::string version;
    std::string config_json;
    std::string dataset_hash;
    std::string started_at;
    std::string finished_at;
    std::vector<SampleStatus> samples;
    int hard_failures = 0;

    std::string to_json() const;
};
RunManifest manifest_from_json(const std::string& text);

// Registry hook for a real-model backend. A reproduction build registers a
// factory here; selecting `external` without one is a config error that
// documents the required contract.
using BackendFactory = std::function<Backends()>;
void register_external_backend(BackendFactory factory);

// corrupt (if configured) -> adapt -> persist trace, one JSON per sample.
// Already-completed samples are skipped on rerun. Sample errors isolate.
RunManifest run_adapt(const RunConfig& config);

// CHAIR/F1 for baseline and final captions side by side + score-distribution
// report. `ablation_clip_without_ttt` scores the iteration-0 pseudo-labels.
struct EvaluateResult {
    HallucinationReport baseline;
    HallucinationReport final_;
    HallucinationReport pseudo_label0;  // only when ablation requested
    bool has_pseudo_label0 = false;
    ScoreDistributionReport distribution;
};
EvaluateResult run_evaluate(const RunConfig& config, const std::string& traces_dir,
                            bool ablation_clip_without_ttt = false);

// Wraps meta_train; writes the checkpoint plus the per-task log.
std::string run_meta(const RunConfig& config, const MetaConfig& meta, const std::string& out_path);

std::vector<AdaptationTrace> load_traces(const std::string& traces_dir);

}  // namespace ttcap
