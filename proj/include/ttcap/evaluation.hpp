#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ttcap/adaptation.hpp"

namespace ttcap {

// Ground-truth object sets plus the term -> category table used for spotting.
struct ObjectAnnotations {
    std::map<std::string, std::set<std::string>> present_objects;  // image id -> categories
    std::map<std::string, std::string> synonym_map;                // lowercase term -> category

    bool has(const std::string& image_id) const { return present_objects.count(image_id) > 0; }
};

// COCO-style instances JSON: only image ids and category names are read.
ObjectAnnotations load_coco_annotations(const std::string& path,
                                        const std::map<std::string, std::string>& synonym_map);
std::map<std::string, std::string> load_synonym_map(const std::string& path);
void save_coco_annotations(const ObjectAnnotations& ann, const std::string& path);

struct ObjectMention {
    std::string term;      // surface form matched in the caption
    std::string category;  // canonical category
};

// Case-insensitive longest-match spotting over word boundaries. Each word
// position feeds at most one match; multi-word terms are supported.
std::vector<ObjectMention> extract_objects(const std::string& caption,
                                           const std::map<std::string, std::string>& synonym_map);

struct PerImageObjects {
    std::string image_id;
    std::set<std::string> mentioned;
    std::set<std::string> hallucinated;
    std::set<std::string> missed;
};

struct HallucinationReport {
    double chair_s = 0.0;  // fraction of captions with >= 1 hallucinated object
    double chair_i = 0.0;  // hallucinated mentions / total mentions
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    int n_captions = 0;
    bool zero_denominator_chair_i = false;
    bool zero_denominator_f1 = false;
    std::vector<PerImageObjects> per_image;
    std::vector<std::string> excluded_ids;  // missing annotations

    std::string to_json() const;
};

using CaptionList = std::vector<std::pair<std::string, std::string>>;  // (image_id, caption)

HallucinationReport chair_metrics(const CaptionList& captions, const ObjectAnnotations& annotations);

// Micro-averaged object F1 (same counting as chair_metrics).
double f1_metric(const CaptionList& captions, const ObjectAnnotations& annotations);

}  // namespace ttcap
