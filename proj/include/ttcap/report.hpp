#pragma once

#include <string>
#include <vector>

#include "ttcap/adaptation.hpp"

namespace ttcap {

struct DistributionSummary {
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
    double median = 0.0;
    std::vector<double> histogram_edges;
    std::vector<int> histogram_counts;
};

struct ImprovementBin {
    double lo = 0.0;
    double hi = 0.0;
    int count = 0;
    double mean_improvement = 0.0;  // final - baseline display score
};

// Baseline vs final display-score distributions and the improvement grouped by
// baseline-score bin.
struct ScoreDistributionReport {
    DistributionSummary baseline;
    DistributionSummary final_;
    std::vector<ImprovementBin> bins;
    double mean_improvement = 0.0;

    std::string to_json() const;
    std::string to_csv() const;      // per-trace rows
    std::string bins_to_csv() const;
    std::string histogram_svg() const;  // overlaid baseline/final histograms
    std::string bins_svg() const;
};

ScoreDistributionReport score_distribution_report(const std::vector<AdaptationTrace>& traces,
                                                  const std::vector<double>& bin_edges);

DistributionSummary summarize(const std::vector<double>& values, const std::vector<double>& edges);

// -------- LLM-judge prompt export (text only; nothing is called) --------

struct JudgePromptEntry {
    std::string image_id;
    std::vector<std::string> responses;  // exactly 4
    std::vector<bool> empty_flags;
};

// The four-assistant scoring prompt with the responses spliced into the
// bracketed slots.
std::string render_judge_prompt(const std::vector<std::string>& responses);

// Parse-back: recover the 4 responses from a rendered prompt.
std::vector<std::string> parse_judge_prompt(const std::string& text);

// One file per image under out_dir; returns the entries written.
std::vector<JudgePromptEntry> export_judge_prompts(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& caption_sets,
    const std::string& out_dir);

}  // namespace ttcap
