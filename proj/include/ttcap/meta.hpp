#pragma once

#include <string>
#include <vector>

#include "ttcap/adaptation.hpp"

namespace ttcap {

enum class InnerOptimizer { sgd, adamw };

// Reptile meta-training of the adapter initialization. The reference states
// K = 12 inner steps; eps and the epoch count are toy-suite defaults.
struct MetaConfig {
    int inner_steps = 12;   // K
    double eps = 0.1;       // meta step size
    int meta_epochs = 3;
    long task_sampler_seed = 0;
    TttConfig inner;        // inner.iterations is forced to inner_steps
    InnerOptimizer inner_optimizer = InnerOptimizer::sgd;
    double inner_lr = 0.05;  // fixed eta across the K steps

    void validate() const;
};

struct MetaTaskLog {
    std::string image_id;
    int epoch = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool skipped = false;
};

struct MetaTrainResult {
    AdapterState phi;
    std::vector<MetaTaskLog> log;
};

// K student steps against a pseudo-label selected once at step 0 from phi's
// copy. phi itself is left untouched.
AdapterState inner_loop(const AdapterState& phi, const ImageInput& image, const MetaConfig& config,
                        const Backends& backends, double* initial_loss = nullptr,
                        double* final_loss = nullptr);

// phi + eps * (phi_K - phi), i.e. axpy(a = 1-eps, b = eps).
AdapterState meta_update(const AdapterState& phi, const AdapterState& phi_K, double eps);

// Sequential Reptile over a seeded task order; one image = one task. Label-free:
// nothing here reads an annotation.
MetaTrainResult meta_train(const std::vector<ImageInput>& dataset, const MetaConfig& config,
                           const Backends& backends);

std::string meta_config_to_json(const MetaConfig& config);
MetaConfig meta_config_from_json(const std::string& text);

}  // namespace ttcap
