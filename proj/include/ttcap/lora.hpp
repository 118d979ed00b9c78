#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttcap/errors.hpp"

namespace ttcap {

enum class Placement { llm_only, vision_only, vision_and_llm };

std::string placement_name(Placement p);
Placement placement_from_name(const std::string& name);

// One low-rank pair wrapping a base projection. delta(W) = (alpha / rank) * B * A.
struct LoraLayer {
    Eigen::MatrixXd A;  // rank x d_in
    Eigen::MatrixXd B;  // d_out x rank
    int rank = 0;
    double alpha = 0.0;
    std::string target;

    Eigen::MatrixXd delta() const { return (alpha / rank) * B * A; }
};

// Declared shape of one adaptable base projection.
struct ProjectionDim {
    std::string target;  // e.g. "llm.q"
    int d_in = 0;
    int d_out = 0;
};

using ModelDims = std::vector<ProjectionDim>;

// The full set of trainable weights layered on a frozen base model. Value type:
// copies are independent, which is what the student/teacher split relies on.
struct AdapterState {
    std::map<std::string, LoraLayer> layers;  // keyed by target, ordered
    Placement placement = Placement::llm_only;
    int rank = 0;
    double alpha = 0.0;
    long seed = 0;

    bool structurally_equal(const AdapterState& other) const;
    size_t parameter_count() const;

    // Visit every parameter matrix (A then B per layer, in target order).
    template <typename Fn>
    void for_each_matrix(Fn&& fn) {
        for (auto& [name, layer] : layers) {
            fn(layer.A);
            fn(layer.B);
        }
    }
    template <typename Fn>
    void for_each_matrix(Fn&& fn) const {
        for (const auto& [name, layer] : layers) {
            fn(layer.A);
            fn(layer.B);
        }
    }
};

// Targets selected by a placement: "llm." / "vision." prefixes.
std::vector<std::string> targets_for_placement(const ModelDims& dims, Placement placement);

// A ~ N(0, 1/d_in) seeded, B = 0, so every effective weight equals the base at step 0.
// target_override, when given, wins over the placement prefix rule.
AdapterState init_adapter(const ModelDims& dims, int rank, double alpha, Placement placement,
                          long seed,
                          const std::optional<std::vector<std::string>>& target_override = std::nullopt);

// base + (alpha/rank) * B * A. Never mutates base.
Eigen::MatrixXd effective_weight(const Eigen::MatrixXd& base, const LoraLayer& layer);

// dst := a*dst + b*src, elementwise over all A and B matrices.
void adapter_axpy(AdapterState& dst, const AdapterState& src, double a, double b);

// Checkpoint container: {metadata, tensors} as JSON-of-floats; round-trips bit-exact.
std::string adapter_to_json(const AdapterState& adapter,
                            const std::map<std::string, std::string>& provenance = {});
AdapterState adapter_from_json(const std::string& text);
void save_adapter(const AdapterState& adapter, const std::string& path,
                  const std::map<std::string, std::string>& provenance = {});
AdapterState load_adapter(const std::string& path);

}  // namespace ttcap
