#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "ttcap/backend.hpp"

namespace ttcap {

// Knobs of the toy token predictor. Logits for image `id` are
//   z[w] = scale * <e_w, pathway(x_img)> + distractor_bias * [w in distractors(id)]
//          + prompt_bias * <e_w, prompt_vec> - repetition_penalty * count(w emitted)
// where pathway() chains the four adaptable projections (vision.q, vision.v,
// llm.q, llm.v; base = identity) and x_img is the normalized sum of scene-object
// embeddings. The planted distractor bias is what makes the untrained model
// hallucinate, mirroring a language prior that visual evidence fails to override.
struct ToyGeneratorParams {
    double scale = 4.0;
    double distractor_bias = 2.0;
    double repetition_penalty = 10.0;
    double eos_logit = 1.0;
    double prompt_bias = 0.3;
    int words_per_sentence = 4;
};

// Desk-scale world: a vocabulary with unit-norm word embeddings, per-image scene
// sets, and per-image planted distractor objects.
struct ToyWorld {
    std::vector<std::string> vocabulary;
    std::set<std::string> object_lexicon;
    Eigen::MatrixXd embeddings;  // |vocab| x dim, rows unit-norm
    std::map<std::string, std::vector<std::string>> scenes;       // image id -> present objects
    std::map<std::string, std::vector<std::string>> distractors;  // image id -> planted objects
    ToyGeneratorParams gen;
    int text_token_limit = 77;
    int image_size = 48;

    int dim() const { return int(embeddings.cols()); }
    int vocab_size() const { return int(vocabulary.size()); }
    int word_index(const std::string& w) const;  // -1 when unknown

    const std::vector<std::string>& scene(const std::string& image_id) const;

    // Normalized sum of the scene objects' embeddings.
    Eigen::VectorXd image_feature(const std::string& image_id) const;

    // Synthetic pixels for an image id: per-object color blocks on a seeded
    // background, so the corruption pipeline has real pixels to chew on.
    ImageInput render_image(const std::string& image_id) const;
    std::vector<ImageInput> render_all() const;

    std::string content_hash() const;
};

ToyWorld load_toy_world(const std::string& path);
void save_toy_world(const ToyWorld& world, const std::string& path);
ToyWorld toy_world_from_json_text(const std::string& text);
std::string toy_world_to_json_text(const ToyWorld& world);

// Deterministic corpus generator used by tests and the shipped default world:
// scenes drawn from ordinary objects, distractors from a dedicated pool that
// never appears in any scene.
ToyWorld make_toy_corpus(int n_images, long seed);

class ToyGenerator final : public GeneratorBackend {
public:
    explicit ToyGenerator(std::shared_ptr<const ToyWorld> world);

    std::string generate(const ImageInput& image, const std::string& prompt,
                         const DecodingParams& params, const AdapterState& adapter) const override;
    double loss_and_grad(const ImageInput& image, const std::string& prompt,
                         const std::string& target_caption, const AdapterState& adapter,
                         AdapterState& grad_out) const override;
    ModelDims model_dims() const override;
    std::vector<uint8_t> serialize_base() const override;

    // Caption text -> vocabulary ids (punctuation stripped, unknown words skipped).
    std::vector<int> tokenize(const std::string& caption) const;

private:
    std::shared_ptr<const ToyWorld> world_;
    Eigen::MatrixXd base_vq_, base_vv_, base_lq_, base_lv_;  // identity, frozen

    void check_adapter(const AdapterState& adapter) const;
    Eigen::VectorXd word_logits(const ImageInput& image, const std::string& prompt,
                                const AdapterState& adapter,
                                Eigen::VectorXd* stages = nullptr) const;
    Eigen::VectorXd pathway(const Eigen::VectorXd& x, const AdapterState& adapter,
                            Eigen::MatrixXd eff[4], Eigen::VectorXd stage[5]) const;
};

class ToyEncoder final : public EncoderBackend {
public:
    explicit ToyEncoder(std::shared_ptr<const ToyWorld> world) : world_(std::move(world)) {}

    Eigen::VectorXd encode_image(const ImageInput& image) const override;
    Eigen::VectorXd encode_text(const std::string& sentence) const override;
    int text_token_limit() const override { return world_->text_token_limit; }

private:
    std::shared_ptr<const ToyWorld> world_;
};

// Both halves of the toy backend, sharing one world.
struct ToyBackend {
    std::shared_ptr<const ToyWorld> world;
    std::shared_ptr<ToyGenerator> generator;
    std::shared_ptr<ToyEncoder> encoder;
};

ToyBackend make_toy_backend(std::shared_ptr<const ToyWorld> world);

}  // namespace ttcap
