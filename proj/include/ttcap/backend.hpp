#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ttcap/image.hpp"
#include "ttcap/lora.hpp"

namespace ttcap {

enum class DecodeMode { greedy, stochastic };

struct DecodingParams {
    DecodeMode mode = DecodeMode::stochastic;
    double temperature = 0.8;
    double top_p = 0.9;
    int max_tokens = 512;
    long seed = 0;

    static DecodingParams greedy_mode() {
        DecodingParams p;
        p.mode = DecodeMode::greedy;
        return p;
    }
};

// Caption model access. generate() is a pure function of its arguments (seed
// included); loss_and_grad() never touches the frozen base parameters.
class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;

    virtual std::string generate(const ImageInput& image, const std::string& prompt,
                                 const DecodingParams& params, const AdapterState& adapter) const = 0;

    // Cross-entropy of the target caption under the adapter-modulated model,
    // plus the gradient w.r.t. the adapter parameters (same structure as `adapter`).
    virtual double loss_and_grad(const ImageInput& image, const std::string& prompt,
                                 const std::string& target_caption, const AdapterState& adapter,
                                 AdapterState& grad_out) const = 0;

    // Declared shapes of the projections LoRA may wrap.
    virtual ModelDims model_dims() const = 0;

    // Frozen parameters as bytes; used by the base-immutability checks.
    virtual std::vector<uint8_t> serialize_base() const = 0;
};

// Dual-encoder access for alignment scoring.
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;

    virtual Eigen::VectorXd encode_image(const ImageInput& image) const = 0;
    virtual Eigen::VectorXd encode_text(const std::string& sentence) const = 0;
    virtual int text_token_limit() const = 0;

    // Whitespace-token truncation to the encoder's context window.
    // Returns the (possibly shortened) text and whether anything was cut.
    std::pair<std::string, bool> truncate_to_limit(const std::string& sentence) const;
};

}  // namespace ttcap
