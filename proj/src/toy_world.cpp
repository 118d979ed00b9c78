#include "ttcap/toy_world.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"
#include "ttcap/rng.hpp"

namespace ttcap {

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) words.push_back(cur), cur.clear();
        } else if (c == '.' || c == '!' || c == '?' || c == ',') {
            // punctuation never forms part of a toy token
        } else {
            cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

constexpr int kEosId = -1;  // sentinel, logits vector keeps EOS as the extra last slot

}  // namespace

int ToyWorld::word_index(const std::string& w) const {
    for (size_t i = 0; i < vocabulary.size(); ++i)
        if (vocabulary[i] == w) return int(i);
    return -1;
}

const std::vector<std::string>& ToyWorld::scene(const std::string& image_id) const {
    auto it = scenes.find(image_id);
    if (it == scenes.end()) throw LookupError("unregistered image id: " + image_id);
    return it->second;
}

Eigen::VectorXd ToyWorld::image_feature(const std::string& image_id) const {
    const auto& objs = scene(image_id);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
    for (const auto& o : objs) {
        const int idx = word_index(o);
        if (idx < 0) throw ConfigError("scene object not in vocabulary: " + o);
        x += embeddings.row(idx).transpose();
    }
    const double n = x.norm();
    if (n == 0.0) throw NumericalError("empty or degenerate scene for image " + image_id);
    return x / n;
}

ImageInput ToyWorld::render_image(const std::string& image_id) const {
    const auto& objs = scene(image_id);
    const int s = image_size;
    ImageInput img(image_id, s, s);
    Rng rng(mix_seed(fnv1a64(image_id), 0x1031u));
    const uint8_t bg[3] = {uint8_t(40 + rng.uniform_index(60)), uint8_t(40 + rng.uniform_index(60)),
                           uint8_t(40 + rng.uniform_index(60))};
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
    // one colored block per scene object, color keyed to the object name
    for (const auto& o : objs) {
        Rng orng(mix_seed(fnv1a64(image_id), fnv1a64(o)));
        const int bw = s / 4 + int(orng.uniform_index(uint64_t(s / 4)));
        const int bh = s / 4 + int(orng.uniform_index(uint64_t(s / 4)));
        const int x0 = int(orng.uniform_index(uint64_t(std::max(1, s - bw))));
        const int y0 = int(orng.uniform_index(uint64_t(std::max(1, s - bh))));
        Rng crng(fnv1a64(o));
        const uint8_t col[3] = {uint8_t(80 + crng.uniform_index(176)),
                                uint8_t(80 + crng.uniform_index(176)),
                                uint8_t(80 + crng.uniform_index(176))};
        for (int y = y0; y < std::min(s, y0 + bh); ++y)
            for (int x = x0; x < std::min(s, x0 + bw); ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
    }
    return img;
}

std::vector<ImageInput> ToyWorld::render_all() const {
    std::vector<ImageInput> out;
    out.reserve(scenes.size());
    for (const auto& [id, objs] : scenes) out.push_back(render_image(id));
    return out;
}

std::string ToyWorld::content_hash() const { return sha256_hex(toy_world_to_json_text(*this)); }

// ---------------------------------------------------------------------------
// serialization

std::string toy_world_to_json_text(const ToyWorld& world) {
    nlohmann::json j;
    j["vocabulary"] = world.vocabulary;
    j["object_lexicon"] = std::vector<std::string>(world.object_lexicon.begin(),
                                                   world.object_lexicon.end());
    nlohmann::json emb;
    emb["dim"] = world.dim();
    std::vector<std::vector<double>> rows;
    for (int r = 0; r < world.embeddings.rows(); ++r) {
        std::vector<double> row(size_t(world.embeddings.cols()));
        for (int c = 0; c < world.embeddings.cols(); ++c) row[size_t(c)] = world.embeddings(r, c);
        rows.push_back(std::move(row));
    }
    emb["rows"] = rows;
    j["embeddings"] = emb;
    j["scenes"] = world.scenes;
    j["distractors"] = world.distractors;
    j["generator"]["scale"] = world.gen.scale;
    j["generator"]["distractor_bias"] = world.gen.distractor_bias;
    j["generator"]["repetition_penalty"] = world.gen.repetition_penalty;
    j["generator"]["eos_logit"] = world.gen.eos_logit;
    j["generator"]["prompt_bias"] = world.gen.prompt_bias;
    j["generator"]["words_per_sentence"] = world.gen.words_per_sentence;
    j["text_token_limit"] = world.text_token_limit;
    j["image_size"] = world.image_size;
    return j.dump(2);
}

ToyWorld toy_world_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ToyWorld w;
    w.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    for (const auto& o : j.at("object_lexicon").get<std::vector<std::string>>())
        w.object_lexicon.insert(o);

    const auto& emb = j.at("embeddings");
    const int dim = emb.at("dim").get<int>();
    const auto rows = emb.at("rows").get<std::vector<std::vector<double>>>();
    if (rows.size() != w.vocabulary.size())
        throw ConfigError("embedding row count does not match vocabulary");
    w.embeddings.resize(long(rows.size()), dim);
    for (size_t r = 0; r < rows.size(); ++r) {
        if (int(rows[r].size()) != dim) throw ConfigError("embedding row has wrong dimension");
        for (int c = 0; c < dim; ++c) w.embeddings(long(r), c) = rows[r][size_t(c)];
        const double n = w.embeddings.row(long(r)).norm();
        if (std::abs(n - 1.0) > 1e-6)
            throw ConfigError("embedding row for '" + w.vocabulary[r] + "' is not unit-norm");
    }

    w.scenes = j.at("scenes").get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("distractors"))
        w.distractors = j.at("distractors").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& [id, objs] : w.scenes)
        for (const auto& o : objs)
            if (!w.object_lexicon.count(o))
                throw ConfigError("scene object outside object lexicon: " + o);
    for (const auto& [id, objs] : w.distractors)
        for (const auto& o : objs)
            if (!w.object_lexicon.count(o))
                throw ConfigError("distractor outside object lexicon: " + o);

    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        w.gen.scale = g.value("scale", w.gen.scale);
        w.gen.distractor_bias = g.value("distractor_bias", w.gen.distractor_bias);
        w.gen.repetition_penalty = g.value("repetition_penalty", w.gen.repetition_penalty);
        w.gen.eos_logit = g.value("eos_logit", w.gen.eos_logit);
        w.gen.prompt_bias = g.value("prompt_bias", w.gen.prompt_bias);
        w.gen.words_per_sentence = g.value("words_per_sentence", w.gen.words_per_sentence);
    }
    w.text_token_limit = j.value("text_token_limit", 77);
    w.image_size = j.value("image_size", 48);
    return w;
}

ToyWorld load_toy_world(const std::string& path) { return toy_world_from_json_text(read_file(path)); }

void save_toy_world(const ToyWorld& world, const std::string& path) {
    atomic_write_file(path, toy_world_to_json_text(world));
}

ToyWorld make_toy_corpus(int n_images, long seed) {
    ToyWorld w;
    const std::vector<std::string> fillers = {"a", "the", "on", "and", "in", "near"};
    const std::vector<std::string> scene_objects = {"dog",  "cat",  "grass", "tree",  "car",
                                                    "bird", "boat", "chair", "table", "horse"};
    const std::vector<std::string> pool = {"banana", "umbrella", "clock", "kite"};

    w.vocabulary = fillers;
    w.vocabulary.insert(w.vocabulary.end(), scene_objects.begin(), scene_objects.end());
    w.vocabulary.insert(w.vocabulary.end(), pool.begin(), pool.end());
    for (const auto& o : scene_objects) w.object_lexicon.insert(o);
    for (const auto& o : pool) w.object_lexicon.insert(o);

    // orthonormal word embeddings: dim = |vocab|
    const int dim = int(w.vocabulary.size());
    w.embeddings = Eigen::MatrixXd::Identity(dim, dim);

    Rng rng(mix_seed(uint64_t(seed), 0xc0ffeeULL));
    for (int i = 0; i < n_images; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "img%03d", i);
        const std::string id(buf);
        const int n_objs = 2 + int(rng.uniform_index(2));  // 2..3 scene objects
        std::vector<std::string> shuffled = scene_objects;
        for (size_t k = shuffled.size(); k > 1; --k)
            std::swap(shuffled[k - 1], shuffled[rng.uniform_index(k)]);
        w.scenes[id] = std::vector<std::string>(shuffled.begin(), shuffled.begin() + n_objs);

        const int n_dis = 1 + int(rng.uniform_index(2));  // 1..2 planted distractors
        std::vector<std::string> dpool = pool;
        for (size_t k = dpool.size(); k > 1; --k)
            std::swap(dpool[k - 1], dpool[rng.uniform_index(k)]);
        w.distractors[id] = std::vector<std::string>(dpool.begin(), dpool.begin() + n_dis);
    }
    return w;
}

// ---------------------------------------------------------------------------
// generator

ToyGenerator::ToyGenerator(std::shared_ptr<const ToyWorld> world) : world_(std::move(world)) {
    const int d = world_->dim();
    base_vq_ = Eigen::MatrixXd::Identity(d, d);
    base_vv_ = Eigen::MatrixXd::Identity(d, d);
    base_lq_ = Eigen::MatrixXd::Identity(d, d);
    base_lv_ = Eigen::MatrixXd::Identity(d, d);
}

ModelDims ToyGenerator::model_dims() const {
    const int d = world_->dim();
    return {{"vision.q", d, d}, {"vision.v", d, d}, {"llm.q", d, d}, {"llm.v", d, d}};
}

std::vector<uint8_t> ToyGenerator::serialize_base() const {
    std::vector<uint8_t> out;
    auto append = [&out](const Eigen::MatrixXd& m) {
        const size_t bytes = size_t(m.size()) * sizeof(double);
        const size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, m.data(), bytes);
    };
    append(base_vq_);
    append(base_vv_);
    append(base_lq_);
    append(base_lv_);
    append(world_->embeddings);
    return out;
}

void ToyGenerator::check_adapter(const AdapterState& adapter) const {
    const int d = world_->dim();
    for (const auto& [name, layer] : adapter.layers) {
        if (name != "vision.q" && name != "vision.v" && name != "llm.q" && name != "llm.v")
            throw ConfigError("adapter targets unknown toy projection: " + name);
        if (layer.A.cols() != d || layer.B.rows() != d)
            throw ConfigError("adapter shape mismatch for " + name);
    }
}

std::vector<int> ToyGenerator::tokenize(const std::string& caption) const {
    std::vector<int> ids;
    for (const auto& w : split_words(caption)) {
        const int idx = world_->word_index(w);
        if (idx >= 0) ids.push_back(idx);  // unknown words carry no signal
    }
    return ids;
}

Eigen::VectorXd ToyGenerator::pathway(const Eigen::VectorXd& x, const AdapterState& adapter,
                                      Eigen::MatrixXd eff[4], Eigen::VectorXd stage[5]) const {
    const char* names[4] = {"vision.q", "vision.v", "llm.q", "llm.v"};
    const Eigen::MatrixXd* bases[4] = {&base_vq_, &base_vv_, &base_lq_, &base_lv_};
    stage[0] = x;
    for (int k = 0; k < 4; ++k) {
        auto it = adapter.layers.find(names[k]);
        eff[k] = (it != adapter.layers.end()) ? effective_weight(*bases[k], it->second) : *bases[k];
        stage[k + 1] = eff[k] * stage[k];
    }
    return stage[4];
}

Eigen::VectorXd ToyGenerator::word_logits(const ImageInput& image, const std::string& prompt,
                                          const AdapterState& adapter, Eigen::VectorXd* x4_out) const {
    check_adapter(adapter);
    const Eigen::VectorXd x = world_->image_feature(image.id);
    Eigen::MatrixXd eff[4];
    Eigen::VectorXd stage[5];
    const Eigen::VectorXd x4 = pathway(x, adapter, eff, stage);
    if (x4_out) *x4_out = x4;

    Eigen::VectorXd z = world_->gen.scale * (world_->embeddings * x4);

    auto dit = world_->distractors.find(image.id);
    if (dit != world_->distractors.end())
        for (const auto& o : dit->second) {
            const int idx = world_->word_index(o);
            if (idx >= 0) z[idx] += world_->gen.distractor_bias;
        }

    if (!prompt.empty()) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(world_->dim());
        int known = 0;
        for (const auto& w : split_words(prompt)) {
            const int idx = world_->word_index(w);
            if (idx >= 0) p += world_->embeddings.row(idx).transpose(), ++known;
        }
        if (known > 0 && p.norm() > 0.0)
            z += world_->gen.prompt_bias * (world_->embeddings * (p / p.norm()));
    }
    return z;
}

namespace {

std::string compose_caption(const std::vector<std::string>& words, int words_per_sentence) {
    std::ostringstream out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out << ' ';
        out << words[i];
        const bool sentence_end =
            ((i + 1) % size_t(words_per_sentence) == 0) || (i + 1 == words.size());
        if (sentence_end) out << '.';
    }
    return out.str();
}

}  // namespace

std::string ToyGenerator::generate(const ImageInput& image, const std::string& prompt,
                                   const DecodingParams& params, const AdapterState& adapter) const {
    if (params.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    const Eigen::VectorXd base_logits = word_logits(image, prompt, adapter);
    const int vocab = world_->vocab_size();
    const double eos = world_->gen.eos_logit;
    const double rho = world_->gen.repetition_penalty;

    Rng rng(mix_seed(uint64_t(params.seed), fnv1a64(image.id), fnv1a64(prompt), 0x9e1uL));
    std::vector<int> counts(size_t(vocab), 0);
    std::vector<std::string> words;

    const int max_steps = std::min(params.max_tokens, 4 * vocab);
    for (int t = 0; t < max_steps; ++t) {
        Eigen::VectorXd z(vocab + 1);
        for (int w = 0; w < vocab; ++w) z[w] = base_logits[w] - rho * counts[size_t(w)];
        z[vocab] = (t == 0) ? -1e30 : eos;  // never end on an empty caption

        int pick;
        if (params.mode == DecodeMode::greedy) {
            pick = 0;
            for (int w = 1; w <= vocab; ++w)
                if (z[w] > z[pick]) pick = w;
        } else {
            if (params.temperature <= 0.0) throw ConfigError("temperature must be positive");
            if (params.top_p <= 0.0 || params.top_p > 1.0) throw ConfigError("top_p must be in (0,1]");
            Eigen::VectorXd logp = z / params.temperature;
            const double m = logp.maxCoeff();
            Eigen::VectorXd probs = (logp.array() - m).exp();
            probs /= probs.sum();
            // nucleus filter: keep the smallest prefix of the sorted probs >= top_p
            std::vector<int> order(size_t(vocab) + 1);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&probs](int a, int b) { return probs[a] > probs[b]; });
            double cum = 0.0;
            size_t keep = 0;
            for (; keep < order.size(); ++keep) {
                cum += probs[order[keep]];
                if (cum >= params.top_p) {
                    ++keep;
                    break;
                }
            }
            keep = std::max<size_t>(keep, 1);
            const double u = rng.uniform() * cum;
            double acc = 0.0;
            pick = order[keep - 1];
            for (size_t k = 0; k < keep; ++k) {
                acc += probs[order[k]];
                if (u < acc) {
                    pick = order[k];
                    break;
                }
            }
        }

        if (pick == vocab) break;  // EOS
        words.push_back(world_->vocabulary[size_t(pick)]);
        ++counts[size_t(pick)];
    }
    return compose_caption(words, world_->gen.words_per_sentence);
}

double ToyGenerator::loss_and_grad(const ImageInput& image, const std::string& prompt,
                                   const std::string& target_caption, const AdapterState& adapter,
                                   AdapterState& grad_out) const {
    check_adapter(adapter);
    const std::vector<int> target = tokenize(target_caption);
    if (target.empty()) throw EmptyCaptionError("target caption has no known tokens");

    const Eigen::VectorXd x = world_->image_feature(image.id);
    Eigen::MatrixXd eff[4];
    Eigen::VectorXd stage[5];
    pathway(x, adapter, eff, stage);

    const Eigen::VectorXd base_logits = word_logits(image, prompt, adapter);
    const int vocab = world_->vocab_size();
    const double eos = world_->gen.eos_logit;
    const double rho = world_->gen.repetition_penalty;
    const double scale = world_->gen.scale;

    // teacher-forced CE over target tokens plus the closing EOS
    const int steps = int(target.size()) + 1;
    std::vector<int> counts(size_t(vocab), 0);
    double loss = 0.0;
    Eigen::VectorXd g_words = Eigen::VectorXd::Zero(vocab);  // sum_t dL/dz_t over word slots
    for (int t = 0; t < steps; ++t) {
        Eigen::VectorXd z(vocab + 1);
        for (int w = 0; w < vocab; ++w) z[w] = base_logits[w] - rho * counts[size_t(w)];
        z[vocab] = (t == 0) ? -1e30 : eos;
        const int label = (t < int(target.size())) ? target[size_t(t)] : vocab;

        const double m = z.maxCoeff();
        Eigen::VectorXd p = (z.array() - m).exp();
        const double Z = p.sum();
        p /= Z;
        loss += -(z[label] - m - std::log(Z));

        Eigen::VectorXd dz = p;
        dz[label] -= 1.0;
        g_words += dz.head(vocab);

        if (label != vocab) ++counts[size_t(label)];
    }
    loss /= double(steps);
    g_words /= double(steps);
    if (!std::isfinite(loss)) throw NumericalError("non-finite toy loss");

    // backprop: z_word = scale * E * x4 (+ constants)
    Eigen::VectorXd g_stage = scale * (world_->embeddings.transpose() * g_words);  // dL/dx4

    grad_out = adapter;
    for (auto& [name, layer] : grad_out.layers) {
        layer.A.setZero();
        layer.B.setZero();
    }
    const char* names[4] = {"vision.q", "vision.v", "llm.q", "llm.v"};
    for (int k = 3; k >= 0; --k) {
        const Eigen::MatrixXd d_eff = g_stage * stage[k].transpose();  // dL/dEff_k
        auto it = grad_out.layers.find(names[k]);
        if (it != grad_out.layers.end()) {
            const LoraLayer& src = adapter.layers.at(names[k]);
            const double s = src.alpha / src.rank;
            it->second.A = s * (src.B.transpose() * d_eff);
            it->second.B = s * (d_eff * src.A.transpose());
        }
        g_stage = eff[k].transpose() * g_stage;
    }

    bool finite = true;
    grad_out.for_each_matrix([&finite](const Eigen::MatrixXd& m) {
        if (!m.allFinite()) finite = false;
    });
    if (!finite) throw NumericalError("non-finite toy gradient");
    return loss;
}

// ---------------------------------------------------------------------------
// encoder

Eigen::VectorXd ToyEncoder::encode_image(const ImageInput& image) const {
    return world_->image_feature(image.id);
}

Eigen::VectorXd ToyEncoder::encode_text(const std::string& sentence) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(world_->dim());
    for (const auto& w : split_words(sentence)) {
        const int idx = world_->word_index(w);
        if (idx >= 0) v += world_->embeddings.row(idx).transpose();
    }
    const double n = v.norm();
    return n > 0.0 ? Eigen::VectorXd(v / n) : v;  // all-unknown sentences come back zero
}

ToyBackend make_toy_backend(std::shared_ptr<const ToyWorld> world) {
    ToyBackend b;
    b.world = world;
    b.generator = std::make_shared<ToyGenerator>(world);
    b.encoder = std::make_shared<ToyEncoder>(world);
    return b;
}

}  // namespace ttcap
