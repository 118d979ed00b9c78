#include "ttcap/meta.hpp"

#include <nlohmann/json.hpp>

#include "ttcap/rng.hpp"

namespace ttcap {

void MetaConfig::validate() const {
    if (inner_steps < 0) throw ConfigError("inner_steps must be >= 0");
    if (eps <= 0.0 || eps > 1.0) throw ConfigError("eps must be in (0, 1]");
    if (meta_epochs < 1) throw ConfigError("meta_epochs must be >= 1");
    if (inner_lr <= 0.0) throw ConfigError("inner_lr must be positive");
}

AdapterState inner_loop(const AdapterState& phi, const ImageInput& image, const MetaConfig& config,
                        const Backends& backends, double* initial_loss, double* final_loss) {
    config.validate();
    AdapterState theta = phi;  // phi itself is never touched
    if (config.inner_steps == 0) {
        if (initial_loss) *initial_loss = 0.0;
        if (final_loss) *final_loss = 0.0;
        return theta;
    }

    TttConfig inner = config.inner;
    inner.iterations = config.inner_steps;

    // single pseudo-label selected at step 0 from phi (fixed-teacher inner objective)
    CandidateSet cands = generate_candidates(phi, image, inner, backends, 0);
    const std::string pseudo_label = cands.best().caption;

    OptimizerState opt = OptimizerState::zeros_like(theta);
    double first = 0.0, last = 0.0;
    for (int k = 0; k < config.inner_steps; ++k) {
        double loss;
        if (config.inner_optimizer == InnerOptimizer::adamw) {
            loss = student_step(theta, image, inner.prompt, pseudo_label, *backends.generator, opt,
                                config.inner_lr, inner);
        } else {
            // plain gradient descent with fixed eta
            AdapterState grad = theta;
            loss = backends.generator->loss_and_grad(image, inner.prompt, pseudo_label, theta, grad);
            adapter_axpy(theta, grad, 1.0, -config.inner_lr);
        }
        if (k == 0) first = loss;
        last = loss;
    }
    if (initial_loss) *initial_loss = first;
    if (final_loss) *final_loss = last;
    return theta;
}

AdapterState meta_update(const AdapterState& phi, const AdapterState& phi_K, double eps) {
    AdapterState out = phi;
    adapter_axpy(out, phi_K, 1.0 - eps, eps);
    return out;
}

MetaTrainResult meta_train(const std::vector<ImageInput>& dataset, const MetaConfig& config,
                           const Backends& backends) {
    config.validate();
    if (dataset.empty()) throw ConfigError("meta_train: dataset is empty");

    TttConfig inner = config.inner;
    inner.iterations = std::max(1, config.inner_steps);

    MetaTrainResult result;
    result.phi = init_adapter(backends.generator->model_dims(), inner.lora_rank, inner.lora_alpha,
                              inner.placement, inner.seed, inner.lora_targets);

    Rng order_rng(mix_seed(uint64_t(config.task_sampler_seed), 0x4d457461ULL));
    for (int epoch = 0; epoch < config.meta_epochs; ++epoch) {
        std::vector<size_t> order(dataset.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t k = order.size(); k > 1; --k)
            std::swap(order[k - 1], order[order_rng.uniform_index(k)]);

        for (size_t idx : order) {
            const ImageInput& image = dataset[idx];
            MetaTaskLog log;
            log.image_id = image.id;
            log.epoch = epoch;
            try {
                MetaConfig task_cfg = config;
                task_cfg.inner.seed = long(mix_seed(uint64_t(config.task_sampler_seed),
                                                    fnv1a64(image.id), uint64_t(epoch)));
                AdapterState phi_K = inner_loop(result.phi, image, task_cfg, backends,
                                                &log.initial_loss, &log.final_loss);
                result.phi = meta_update(result.phi, phi_K, config.eps);
            } catch (const std::exception&) {
                log.skipped = true;
            }
            result.log.push_back(log);
        }
    }
    return result;
}

std::string meta_config_to_json(const MetaConfig& c) {
    nlohmann::json j;
    j["inner_steps"] = c.inner_steps;
    j["eps"] = c.eps;
    j["meta_epochs"] = c.meta_epochs;
    j["task_sampler_seed"] = c.task_sampler_seed;
    j["inner"] = nlohmann::json::parse(ttt_config_to_json(c.inner));
    j["inner_optimizer"] = c.inner_optimizer == InnerOptimizer::sgd ? "sgd" : "adamw";
    j["inner_lr"] = c.inner_lr;
    return j.dump();
}

MetaConfig meta_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MetaConfig c;
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.eps = j.value("eps", c.eps);
    c.meta_epochs = j.value("meta_epochs", c.meta_epochs);
    c.task_sampler_seed = j.value("task_sampler_seed", c.task_sampler_seed);
    if (j.contains("inner")) c.inner = ttt_config_from_json(j.at("inner").dump());
    c.inner_optimizer = j.value("inner_optimizer", "sgd") == std::string("adamw")
                            ? InnerOptimizer::adamw
                            : InnerOptimizer::sgd;
    c.inner_lr = j.value("inner_lr", c.inner_lr);
    return c;
}

}  // namespace ttcap
