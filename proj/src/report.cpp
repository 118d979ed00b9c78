#include "ttcap/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"

namespace ttcap {

DistributionSummary summarize(const std::vector<double>& values, const std::vector<double>& edges) {
    DistributionSummary s;
    if (values.empty()) return s;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    s.median = sorted[sorted.size() / 2];
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / double(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(sq / double(values.size() - 1)) : 0.0;
    s.histogram_edges = edges;
    if (edges.size() >= 2) {
        s.histogram_counts.assign(edges.size() - 1, 0);
        for (double v : values)
            for (size_t b = 0; b + 1 < edges.size(); ++b) {
                const bool last = (b + 2 == edges.size());
                if (v >= edges[b] && (v < edges[b + 1] || (last && v <= edges[b + 1]))) {
                    s.histogram_counts[b] += 1;
                    break;
                }
            }
    }
    return s;
}

ScoreDistributionReport score_distribution_report(const std::vector<AdaptationTrace>& traces,
                                                  const std::vector<double>& bin_edges) {
    if (traces.empty()) throw ConfigError("score_distribution_report: no traces");
    std::vector<double> baseline, final_scores;
    baseline.reserve(traces.size());
    final_scores.reserve(traces.size());
    for (const auto& t : traces) {
        baseline.push_back(t.baseline_score * 100.0);
        final_scores.push_back(t.final_score * 100.0);
    }

    // shared histogram edges spanning both distributions
    double lo = 1e300, hi = -1e300;
    for (double v : baseline) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : final_scores) lo = std::min(lo, v), hi = std::max(hi, v);
    if (hi <= lo) hi = lo + 1.0;
    const int n_bins = 20;
    std::vector<double> edges;
    for (int i = 0; i <= n_bins; ++i) edges.push_back(lo + (hi - lo) * i / n_bins);

    ScoreDistributionReport rep;
    rep.baseline = summarize(baseline, edges);
    rep.final_ = summarize(final_scores, edges);
    rep.mean_improvement = rep.final_.mean - rep.baseline.mean;

    for (size_t b = 0; b + 1 < bin_edges.size(); ++b) {
        ImprovementBin bin;
        bin.lo = bin_edges[b];
        bin.hi = bin_edges[b + 1];
        double acc = 0.0;
        const bool last = (b + 2 == bin_edges.size());
        for (size_t i = 0; i < traces.size(); ++i) {
            const double base = baseline[i];
            if (base >= bin.lo && (base < bin.hi || (last && base <= bin.hi))) {
                acc += final_scores[i] - base;
                bin.count += 1;
            }
        }
        bin.mean_improvement = bin.count > 0 ? acc / bin.count : 0.0;
        rep.bins.push_back(bin);
    }
    return rep;
}

namespace {

nlohmann::json summary_to_json(const DistributionSummary& s) {
    nlohmann::json j;
    j["mean"] = s.mean;
    j["stddev"] = s.stddev;
    j["min"] = s.min;
    j["max"] = s.max;
    j["median"] = s.median;
    j["histogram_edges"] = s.histogram_edges;
    j["histogram_counts"] = s.histogram_counts;
    return j;
}

}  // namespace

std::string ScoreDistributionReport::to_json() const {
    nlohmann::json j;
    j["baseline"] = summary_to_json(baseline);
    j["final"] = summary_to_json(final_);
    j["mean_improvement"] = mean_improvement;
    nlohmann::json bj = nlohmann::json::array();
    for (const auto& b : bins)
        bj.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count},
                      {"mean_improvement", b.mean_improvement}});
    j["improvement_by_baseline_bin"] = bj;
    return j.dump(2);
}

std::string ScoreDistributionReport::to_csv() const {
    std::ostringstream out;
    out << "bin_index,edge_lo,edge_hi,baseline_count,final_count\n";
    for (size_t b = 0; b < baseline.histogram_counts.size(); ++b)
        out << b << "," << baseline.histogram_edges[b] << "," << baseline.histogram_edges[b + 1]
            << "," << baseline.histogram_counts[b] << "," << final_.histogram_counts[b] << "\n";
    return out.str();
}

std::string ScoreDistributionReport::bins_to_csv() const {
    std::ostringstream out;
    out << "baseline_bin_lo,baseline_bin_hi,count,mean_improvement\n";
    for (const auto& b : bins)
        out << b.lo << "," << b.hi << "," << b.count << "," << b.mean_improvement << "\n";
    return out.str();
}

namespace {

// minimal deterministic bar chart; two series side by side per bin
std::string bars_svg(const std::vector<double>& edges, const std::vector<int>& a,
                     const std::vector<int>& b, const std::string& label_a,
                     const std::string& label_b) {
    const int W = 640, H = 360, ml = 50, mb = 40, mt = 20, mr = 20;
    int max_count = 1;
    for (int v : a) max_count = std::max(max_count, v);
    for (int v : b) max_count = std::max(max_count, v);
    const double pw = double(W - ml - mr) / double(std::max<size_t>(1, a.size()));
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    for (size_t i = 0; i < a.size(); ++i) {
        const double ha = double(a[i]) / max_count * (H - mt - mb);
        const double hb = double(b[i]) / max_count * (H - mt - mb);
        const double x0 = ml + double(i) * pw;
        s << "<rect x='" << x0 << "' y='" << (H - mb - ha) << "' width='" << pw * 0.45
          << "' height='" << ha << "' fill='#e08214'/>\n";
        s << "<rect x='" << x0 + pw * 0.45 << "' y='" << (H - mb - hb) << "' width='" << pw * 0.45
          << "' height='" << hb << "' fill='#2e8b57'/>\n";
    }
    s << "<text x='" << ml << "' y='14' fill='#e08214'>" << label_a << "</text>\n";
    s << "<text x='" << ml + 120 << "' y='14' fill='#2e8b57'>" << label_b << "</text>\n";
    if (!edges.empty()) {
        s << "<text x='" << ml << "' y='" << H - 8 << "'>" << edges.front() << "</text>\n";
        s << "<text x='" << W - mr - 40 << "' y='" << H - 8 << "'>" << edges.back() << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace

std::string ScoreDistributionReport::histogram_svg() const {
    return bars_svg(baseline.histogram_edges, baseline.histogram_counts, final_.histogram_counts,
                    "baseline", "adapted");
}

std::string ScoreDistributionReport::bins_svg() const {
    const int W = 640, H = 360, ml = 50, mb = 40, mt = 20, mr = 20;
    double max_abs = 1e-9;
    for (const auto& b : bins) max_abs = std::max(max_abs, std::abs(b.mean_improvement));
    const double pw = double(W - ml - mr) / double(std::max<size_t>(1, bins.size()));
    const double y0 = mt + (H - mt - mb) / 2.0;
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    s << "<line x1='" << ml << "' y1='" << y0 << "' x2='" << W - mr << "' y2='" << y0
      << "' stroke='black'/>\n";
    for (size_t i = 0; i < bins.size(); ++i) {
        const double h = bins[i].mean_improvement / max_abs * (H - mt - mb) / 2.0;
        const double x0 = ml + double(i) * pw;
        const double top = h >= 0 ? y0 - h : y0;
        s << "<rect x='" << x0 << "' y='" << top << "' width='" << pw * 0.8 << "' height='"
          << std::abs(h) << "' fill='#4575b4'/>\n";
        s << "<text x='" << x0 << "' y='" << H - 8 << "' font-size='10'>" << bins[i].lo
          << "</text>\n";
    }
    s << "<text x='4' y='" << y0 << "' font-size='10'>0</text>\n";
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// judge prompt export

namespace {

const char* kJudgePromptHeader =
    "You are required to score the performance of four AI assistants in describing a given "
    "image. You should pay extra attention to the hallucination, which refers to the part of "
    "descriptions that are inconsistent with the image content, such as claiming the existence "
    "of something not present in the image or describing incorrectly in terms of the counts, "
    "positions, or colors of objects in the image. Please rate the responses of the assistants "
    "on a scale of 1 to 10, where a higher score indicates better performance, according to the "
    "following criteria:\n"
    "1: Accuracy: whether the response is accurate with respect to the image content. Responses "
    "with fewer hallucinations should be given higher scores.\n"
    "2: Detailedness: whether the response is rich in necessary details. Note that hallucinated "
    "descriptions should not count as necessary details.\n"
    "Please output the scores for each criterion, containing only four values indicating the "
    "scores for Assistant 1, 2, 3 and 4, respectively. The four scores are separated by a "
    "space. Following the scores, please provide an explanation of your evaluation, avoiding "
    "any potential bias and ensuring that the order in which the responses were presented does "
    "not affect your judgment.\n";

const char* kJudgePromptFooter =
    "Output format:\n"
    "Accuracy: <Scores of the four answers>\n"
    "Reason:\n"
    "\n"
    "Detailedness: <Scores of the four answers>\n"
    "Reason:\n";

}  // namespace

std::string render_judge_prompt(const std::vector<std::string>& responses) {
    if (responses.size() != 4)
        throw ConfigError("judge prompt requires exactly 4 responses, got " +
                          std::to_string(responses.size()));
    std::ostringstream out;
    out << kJudgePromptHeader << "\n";
    for (int i = 0; i < 4; ++i) {
        out << "[Assistant " << (i + 1) << "]\n";
        out << responses[size_t(i)] << "\n";
        out << "[End of Assistant " << (i + 1) << "]\n\n";
    }
    out << kJudgePromptFooter;
    return out.str();
}

std::vector<std::string> parse_judge_prompt(const std::string& text) {
    std::vector<std::string> out;
    for (int i = 1; i <= 4; ++i) {
        const std::string open = "[Assistant " + std::to_string(i) + "]\n";
        const std::string close = "\n[End of Assistant " + std::to_string(i) + "]";
        const size_t b = text.find(open);
        const size_t e = text.find(close);
        if (b == std::string::npos || e == std::string::npos || e < b + open.size())
            throw ConfigError("malformed judge prompt: assistant " + std::to_string(i));
        out.push_back(text.substr(b + open.size(), e - b - open.size()));
    }
    return out;
}

std::vector<JudgePromptEntry> export_judge_prompts(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& caption_sets,
    const std::string& out_dir) {
    ensure_dir(out_dir);
    std::vector<JudgePromptEntry> entries;
    for (const auto& [image_id, responses] : caption_sets) {
        if (responses.size() != 4)
            throw ConfigError("image " + image_id + ": judge prompt export needs exactly 4 responses");
        JudgePromptEntry e;
        e.image_id = image_id;
        e.responses = responses;
        for (const auto& r : responses) e.empty_flags.push_back(r.empty());
        atomic_write_file(out_dir + "/" + image_id + ".judge_prompt.txt",
                          render_judge_prompt(responses));
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace ttcap
