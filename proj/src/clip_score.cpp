#include "ttcap/clip_score.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttcap/errors.hpp"

namespace ttcap {

namespace {

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

std::string strip(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

Eigen::VectorXd unit(const Eigen::VectorXd& v, const char* what) {
    const double n = v.norm();
    if (!std::isfinite(n) || n == 0.0)
        throw NumericalError(std::string("zero-norm or non-finite embedding: ") + what);
    return v / n;
}

}  // namespace

std::vector<std::string> sentence_tokenize(const std::string& caption) {
    if (strip(caption).empty()) throw EmptyCaptionError("caption is empty or whitespace-only");

    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i < caption.size(); ++i) {
        if (!is_terminal(caption[i])) continue;
        // consume a run of terminal punctuation
        size_t j = i;
        while (j + 1 < caption.size() && is_terminal(caption[j + 1])) ++j;
        const bool at_end = (j + 1 == caption.size());
        const bool before_space = !at_end && std::isspace(static_cast<unsigned char>(caption[j + 1]));
        if (at_end || before_space) {
            std::string seg = strip(caption.substr(start, j + 1 - start));
            if (!seg.empty()) out.push_back(seg);
            start = j + 1;
        }
        i = j;
    }
    std::string tail = strip(caption.substr(start));
    if (!tail.empty()) out.push_back(tail);
    if (out.empty()) throw EmptyCaptionError("caption has no sentence content");
    return out;
}

ScoredCaption clip_score(const ImageInput& image, const std::string& caption,
                         const EncoderBackend& encoder, ScoringMode mode) {
    ScoredCaption sc;
    sc.caption = caption;
    if (mode == ScoringMode::sentence_avg) {
        sc.sentences = sentence_tokenize(caption);
    } else {
        // full-caption variant scores the text as a single segment
        if (strip(caption).empty()) throw EmptyCaptionError("caption is empty or whitespace-only");
        sc.sentences = {strip(caption)};
    }

    const Eigen::VectorXd v = unit(encoder.encode_image(image), "image");
    double sum = 0.0;
    for (const auto& s : sc.sentences) {
        auto [text, truncated] = encoder.truncate_to_limit(s);
        const Eigen::VectorXd t = unit(encoder.encode_text(text), "sentence");
        if (t.size() != v.size()) throw ConfigError("encoder dimension mismatch between image and text");
        const double cosine = v.dot(t);
        sc.per_sentence_cosine.push_back(cosine);
        sc.truncated_flags.push_back(truncated);
        sum += cosine;
    }
    sc.score = sum / double(sc.sentences.size());
    return sc;
}

CandidateSet rank_candidates(const ImageInput& image, const std::vector<std::string>& captions,
                             const EncoderBackend& encoder, ScoringMode mode) {
    if (captions.empty()) throw EmptyCaptionError("no candidate captions");
    CandidateSet set;
    set.image_id = image.id;
    set.candidates.reserve(captions.size());
    for (const auto& c : captions) set.candidates.push_back(clip_score(image, c, encoder, mode));
    set.best_index = 0;
    for (size_t i = 1; i < set.candidates.size(); ++i)
        if (set.candidates[i].score > set.candidates[size_t(set.best_index)].score)
            set.best_index = int(i);
    return set;
}

std::string scored_caption_jsonl(const std::string& image_id, const ScoredCaption& sc) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["caption"] = sc.caption;
    j["sentences"] = sc.sentences;
    j["per_sentence_cosine"] = sc.per_sentence_cosine;
    j["score"] = sc.score;
    j["display_score"] = sc.display_score();
    j["truncated_flags"] = sc.truncated_flags;
    return j.dump();
}

}  // namespace ttcap
