#pragma once

#include <string>
#include <vector>

#include "ttcap/backend.hpp"

namespace ttcap {

// One caption scored sentence by sentence against an image.
struct ScoredCaption {
    std::string caption;
    std::vector<std::string> sentences;
    std::vector<double> per_sentence_cosine;
    std::vector<bool> truncated_flags;
    double score = 0.0;  // mean of per_sentence_cosine

    double display_score() const { return score * 100.0; }
};

struct CandidateSet {
    std::string image_id;
    std::vector<ScoredCaption> candidates;
    int best_index = 0;

    const ScoredCaption& best() const { return candidates[size_t(best_index)]; }
};

enum class ScoringMode { sentence_avg, full_caption };

// Split on terminal punctuation (. ! ?) followed by whitespace or end of text.
// No abbreviation handling; "Mr. Smith sits." comes back as two sentences.
std::vector<std::string> sentence_tokenize(const std::string& caption);

// Mean cosine between the unit-norm image embedding and each sentence's
// unit-norm embedding. Over-limit sentences are truncated, not dropped.
ScoredCaption clip_score(const ImageInput& image, const std::string& caption,
                         const EncoderBackend& encoder, ScoringMode mode = ScoringMode::sentence_avg);

// Score every caption; best_index = argmax, ties to the lowest index.
CandidateSet rank_candidates(const ImageInput& image, const std::vector<std::string>& captions,
                             const EncoderBackend& encoder,
                             ScoringMode mode = ScoringMode::sentence_avg);

// One JSONL line: {image_id, caption, sentences, per_sentence_cosine, score,
// display_score, truncated_flags}.
std::string scored_caption_jsonl(const std::string& image_id, const ScoredCaption& sc);

}  // namespace ttcap
