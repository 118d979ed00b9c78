#include "ttcap/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"

namespace ttcap {

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return out;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-';
}

// caption -> lowercase word tokens
std::vector<std::string> word_tokens(const std::string& caption) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : caption) {
        if (is_word_char(c)) {
            cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::vector<std::string> term_words(const std::string& term) { return word_tokens(term); }

}  // namespace

std::vector<ObjectMention> extract_objects(const std::string& caption,
                                           const std::map<std::string, std::string>& synonym_map) {
    if (synonym_map.empty()) throw ConfigError("extract_objects: empty synonym map");

    // index terms by their first word; longest term wins at each position
    std::map<std::string, std::vector<std::pair<std::vector<std::string>, std::string>>> by_first;
    for (const auto& [term, category] : synonym_map) {
        auto words = term_words(term);
        if (words.empty()) continue;
        by_first[words[0]].push_back({words, lower(category)});
    }
    for (auto& [first, entries] : by_first)
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return a.first.size() > b.first.size();
        });

    const auto words = word_tokens(caption);
    std::vector<ObjectMention> mentions;
    size_t i = 0;
    while (i < words.size()) {
        auto it = by_first.find(words[i]);
        bool matched = false;
        if (it != by_first.end()) {
            for (const auto& [tw, category] : it->second) {
                if (i + tw.size() > words.size()) continue;
                bool ok = true;
                for (size_t k = 1; k < tw.size() && ok; ++k) ok = (words[i + k] == tw[k]);
                if (!ok) continue;
                std::string surface = words[i];
                for (size_t k = 1; k < tw.size(); ++k) surface += " " + words[i + k];
                mentions.push_back({surface, category});
                i += tw.size();
                matched = true;
                break;
            }
        }
        if (!matched) ++i;
    }
    return mentions;
}

HallucinationReport chair_metrics(const CaptionList& captions,
                                  const ObjectAnnotations& annotations) {
    HallucinationReport rep;
    long long captions_with_hallucination = 0;
    long long hallucinated_mentions = 0;
    long long total_mentions = 0;
    long long covered_gt = 0;
    long long total_gt = 0;

    for (const auto& [image_id, caption] : captions) {
        if (!annotations.has(image_id)) {
            rep.excluded_ids.push_back(image_id);
            continue;
        }
        const auto& gt = annotations.present_objects.at(image_id);
        PerImageObjects per;
        per.image_id = image_id;
        if (!caption.empty())
            for (const auto& m : extract_objects(caption, annotations.synonym_map))
                per.mentioned.insert(m.category);  // set semantics per caption
        for (const auto& cat : per.mentioned)
            if (!gt.count(cat)) per.hallucinated.insert(cat);
        for (const auto& cat : gt)
            if (!per.mentioned.count(cat)) per.missed.insert(cat);

        rep.n_captions += 1;
        if (!per.hallucinated.empty()) captions_with_hallucination += 1;
        hallucinated_mentions += (long long)per.hallucinated.size();
        total_mentions += (long long)per.mentioned.size();
        covered_gt += (long long)(gt.size() - per.missed.size());
        total_gt += (long long)gt.size();
        rep.per_image.push_back(std::move(per));
    }

    rep.chair_s = rep.n_captions > 0 ? double(captions_with_hallucination) / rep.n_captions : 0.0;
    if (total_mentions > 0) {
        rep.chair_i = double(hallucinated_mentions) / double(total_mentions);
    } else {
        rep.chair_i = 0.0;
        rep.zero_denominator_chair_i = true;
    }

    const double precision =
        total_mentions > 0 ? double(total_mentions - hallucinated_mentions) / double(total_mentions)
                           : 0.0;
    const double recall = total_gt > 0 ? double(covered_gt) / double(total_gt) : 0.0;
    rep.precision = precision;
    rep.recall = recall;
    if (precision + recall > 0.0) {
        rep.f1 = 2.0 * precision * recall / (precision + recall);
    } else {
        rep.f1 = 0.0;
        rep.zero_denominator_f1 = true;
    }
    return rep;
}

double f1_metric(const CaptionList& captions, const ObjectAnnotations& annotations) {
    return chair_metrics(captions, annotations).f1;
}

std::string HallucinationReport::to_json() const {
    nlohmann::json j;
    j["chair_s"] = chair_s;
    j["chair_i"] = chair_i;
    j["chair_s_x100"] = chair_s * 100.0;
    j["chair_i_x100"] = chair_i * 100.0;
    j["f1"] = f1;
    j["precision"] = precision;
    j["recall"] = recall;
    j["n_captions"] = n_captions;
    j["zero_denominator_chair_i"] = zero_denominator_chair_i;
    j["zero_denominator_f1"] = zero_denominator_f1;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& p : per_image) {
        nlohmann::json e;
        e["image_id"] = p.image_id;
        e["mentioned"] = std::vector<std::string>(p.mentioned.begin(), p.mentioned.end());
        e["hallucinated"] = std::vector<std::string>(p.hallucinated.begin(), p.hallucinated.end());
        e["missed"] = std::vector<std::string>(p.missed.begin(), p.missed.end());
        per.push_back(e);
    }
    j["per_image"] = per;
    j["excluded_ids"] = excluded_ids;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// annotation ingestion

std::map<std::string, std::string> load_synonym_map(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    std::map<std::string, std::string> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out[lower(it.key())] = lower(it.value().get<std::string>());
    if (out.empty()) throw ConfigError("synonym map is empty: " + path);
    return out;
}

namespace {

std::string id_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ConfigError("annotation id is neither string nor integer");
}

}  // namespace

ObjectAnnotations load_coco_annotations(const std::string& path,
                                        const std::map<std::string, std::string>& synonym_map) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    ObjectAnnotations ann;
    ann.synonym_map = synonym_map;

    std::map<std::string, std::string> cat_names;  // category id -> name
    for (const auto& c : j.at("categories"))
        cat_names[id_to_string(c.at("id"))] = lower(c.at("name").get<std::string>());

    // establish every image id, even ones with no annotations
    if (j.contains("images"))
        for (const auto& im : j.at("images")) ann.present_objects[id_to_string(im.at("id"))];

    for (const auto& a : j.at("annotations")) {
        const std::string img = id_to_string(a.at("image_id"));
        const std::string cat_id = id_to_string(a.at("category_id"));
        auto it = cat_names.find(cat_id);
        if (it == cat_names.end()) throw ConfigError("annotation references unknown category " + cat_id);
        ann.present_objects[img].insert(it->second);
    }
    return ann;
}

void save_coco_annotations(const ObjectAnnotations& ann, const std::string& path) {
    nlohmann::json j;
    std::map<std::string, int> cat_ids;
    nlohmann::json cats = nlohmann::json::array();
    int next_cat = 1;
    for (const auto& [img, objs] : ann.present_objects)
        for (const auto& o : objs)
            if (!cat_ids.count(o)) {
                cat_ids[o] = next_cat++;
                cats.push_back({{"id", cat_ids[o]}, {"name", o}});
            }
    nlohmann::json images = nlohmann::json::array();
    nlohmann::json annotations = nlohmann::json::array();
    int next_ann = 1;
    for (const auto& [img, objs] : ann.present_objects) {
        images.push_back({{"id", img}, {"file_name", img + ".ppm"}});
        for (const auto& o : objs)
            annotations.push_back(
                {{"id", next_ann++}, {"image_id", img}, {"category_id", cat_ids[o]}});
    }
    j["categories"] = cats;
    j["images"] = images;
    j["annotations"] = annotations;
    atomic_write_file(path, j.dump(2));
}

}  // namespace ttcap
