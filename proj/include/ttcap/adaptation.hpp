#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ttcap/clip_score.hpp"
#include "ttcap/lora.hpp"
#include "ttcap/toy_world.hpp"

namespace ttcap {

enum class TeacherMode { ema, fixed, dynamic };
enum class CheckpointStrategy { max_clip_score, final_iteration, best_loss };
enum class LrSchedule { cosine, constant };

std::string teacher_mode_name(TeacherMode m);
TeacherMode teacher_mode_from_name(const std::string& s);
std::string checkpoint_strategy_name(CheckpointStrategy s);
CheckpointStrategy checkpoint_strategy_from_name(const std::string& s);

// Per-sample adaptation settings. Defaults are the reference hyperparameters:
// 70 iterations, candidate refresh every 20, 16 candidates at temperature 0.8 /
// top-p 0.9 (512-token cap), AdamW with cosine-annealed lr from 5e-5, EMA
// teacher with 0.999 decay, LoRA rank 8 / alpha 16 on the LLM q/v projections.
struct TttConfig {
    int iterations = 70;
    int regen_interval = 20;
    int n_candidates = 16;
    DecodingParams decoding;  // stochastic, T=0.8, top_p=0.9, max_tokens=512
    double lr0 = 5e-5;
    LrSchedule lr_schedule = LrSchedule::cosine;
    double ema_decay = 0.999;
    TeacherMode teacher_mode = TeacherMode::ema;
    CheckpointStrategy checkpoint_strategy = CheckpointStrategy::max_clip_score;
    std::string prompt;  // empty = null prompt: the model sees only the image
    ScoringMode scoring_mode = ScoringMode::sentence_avg;
    long seed = 0;

    int lora_rank = 8;
    double lora_alpha = 16.0;
    Placement placement = Placement::llm_only;
    std::optional<std::vector<std::string>> lora_targets;  // overrides placement when set

    // AdamW knobs beyond lr (the reference states only the optimizer and lr0).
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;

    // Greedy decode + score cadence for checkpoint tracking; 0 = regen_interval.
    int eval_interval = 0;

    void validate() const;
    int effective_eval_interval() const { return eval_interval > 0 ? eval_interval : regen_interval; }
};

// AdamW over adapter parameters: decoupled weight decay, bias-corrected moments.
struct OptimizerState {
    AdapterState m;  // first moment, same structure as the adapter
    AdapterState v;  // second moment
    long step = 0;

    static OptimizerState zeros_like(const AdapterState& adapter);
};

struct IterationRecord {
    int iteration = 0;
    double loss = 0.0;
    std::string pseudo_label;
    double pseudo_label_score = 0.0;
    std::string student_caption;      // greedy decode, present at eval points only
    double student_score = 0.0;       // valid iff has_eval
    bool has_eval = false;
    double lr = 0.0;
    bool candidates_refreshed = false;
};

// Everything recorded for one sample. selected_iteration == -1 means the
// untouched baseline won the checkpoint race.
struct AdaptationTrace {
    std::string image_id;
    std::vector<IterationRecord> records;
    int selected_iteration = 0;
    std::string final_caption;
    double final_score = 0.0;
    std::string baseline_caption;  // greedy, zero adapter
    double baseline_score = 0.0;
    bool aborted_non_finite = false;  // fell back to the baseline caption

    std::string config_json;  // snapshot of the TttConfig that produced this
};

struct Backends {
    const GeneratorBackend* generator = nullptr;
    const EncoderBackend* encoder = nullptr;
};

// n_candidates captions sampled from the teacher with distinct derived seeds,
// then ranked. Duplicates are kept; they cannot change the argmax.
CandidateSet generate_candidates(const AdapterState& teacher_adapter, const ImageInput& image,
                                 const TttConfig& config, const Backends& backends, int iteration);

// One AdamW step on the adapter only. Returns the pre-step loss.
double student_step(AdapterState& student, const ImageInput& image, const std::string& prompt,
                    const std::string& pseudo_label, const GeneratorBackend& gen,
                    OptimizerState& opt, double lr, const TttConfig& config);

// teacher := decay*teacher + (1-decay)*student.
void ema_update(AdapterState& teacher, const AdapterState& student, double decay);

// cosine: lr0 * 0.5 * (1 + cos(pi * i / (n-1))); constant: lr0.
double lr_at(const TttConfig& config, int iteration);

// max_clip_score: argmax student_score over evaluated records (earliest tie);
// final_iteration: last index; best_loss: argmin loss. Returns an index into
// `records`; -1 only when no record qualifies for the strategy.
int select_checkpoint(const std::vector<IterationRecord>& records, CheckpointStrategy strategy);

// The full loop for one sample: baseline, candidate refreshes, student steps,
// teacher updates, checkpoint selection.
AdaptationTrace adapt_sample(const ImageInput& image, const TttConfig& config,
                             const Backends& backends,
                             const AdapterState* initial_adapter = nullptr);

std::string trace_to_json(const AdaptationTrace& trace);
AdaptationTrace trace_from_json(const std::string& text);
std::string ttt_config_to_json(const TttConfig& config);
TttConfig ttt_config_from_json(const std::string& text);

}  // namespace ttcap
