#include "ttcap/adaptation.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ttcap/rng.hpp"

namespace ttcap {

std::string teacher_mode_name(TeacherMode m) {
    switch (m) {
        case TeacherMode::ema: return "ema";
        case TeacherMode::fixed: return "fixed";
        case TeacherMode::dynamic: return "dynamic";
    }
    throw ConfigError("bad teacher mode");
}

TeacherMode teacher_mode_from_name(const std::string& s) {
    if (s == "ema") return TeacherMode::ema;
    if (s == "fixed") return TeacherMode::fixed;
    if (s == "dynamic") return TeacherMode::dynamic;
    throw ConfigError("unknown teacher mode: " + s);
}

std::string checkpoint_strategy_name(CheckpointStrategy s) {
    switch (s) {
        case CheckpointStrategy::max_clip_score: return "max_clip_score";
        case CheckpointStrategy::final_iteration: return "final";
        case CheckpointStrategy::best_loss: return "best_loss";
    }
    throw ConfigError("bad checkpoint strategy");
}

CheckpointStrategy checkpoint_strategy_from_name(const std::string& s) {
    if (s == "max_clip_score") return CheckpointStrategy::max_clip_score;
    if (s == "final") return CheckpointStrategy::final_iteration;
    if (s == "best_loss") return CheckpointStrategy::best_loss;
    throw ConfigError("unknown checkpoint strategy: " + s);
}

void TttConfig::validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (iterations > 0 && (regen_interval < 1 || regen_interval > iterations))
        throw ConfigError("regen_interval must be in [1, iterations]");
    if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("ema_decay must be in [0, 1)");
    if (decoding.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
    if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
}

OptimizerState OptimizerState::zeros_like(const AdapterState& adapter) {
    OptimizerState s;
    s.m = adapter;
    s.v = adapter;
    s.m.for_each_matrix([](Eigen::MatrixXd& mat) { mat.setZero(); });
    s.v.for_each_matrix([](Eigen::MatrixXd& mat) { mat.setZero(); });
    s.step = 0;
    return s;
}

double lr_at(const TttConfig& config, int iteration) {
    if (iteration < 0 || iteration >= config.iterations)
        throw ConfigError("lr_at: iteration out of range");
    if (config.lr_schedule == LrSchedule::constant) return config.lr0;
    if (config.iterations == 1) return config.lr0;
    const double frac = double(iteration) / double(config.iterations - 1);
    return config.lr0 * 0.5 * (1.0 + std::cos(M_PI * frac));
}

CandidateSet generate_candidates(const AdapterState& teacher_adapter, const ImageInput& image,
                                 const TttConfig& config, const Backends& backends, int iteration) {
    std::vector<std::string> captions;
    captions.reserve(size_t(config.n_candidates));
    for (int j = 0; j < config.n_candidates; ++j) {
        DecodingParams p = config.decoding;
        p.mode = DecodeMode::stochastic;
        p.seed = long(mix_seed(uint64_t(config.seed), fnv1a64(image.id), uint64_t(iteration),
                               uint64_t(j)));
        try {
            captions.push_back(
                backends.generator->generate(image, config.prompt, p, teacher_adapter));
        } catch (const std::exception& e) {
            // surface whatever was produced so far alongside the failure
            std::string msg = "candidate generation failed at index " + std::to_string(j) + ": " +
                              e.what() + " (" + std::to_string(captions.size()) + " partial)";
            throw EmptyCaptionError(msg);
        }
    }
    return rank_candidates(image, captions, *backends.encoder, config.scoring_mode);
}

double student_step(AdapterState& student, const ImageInput& image, const std::string& prompt,
                    const std::string& pseudo_label, const GeneratorBackend& gen,
                    OptimizerState& opt, double lr, const TttConfig& config) {
    if (pseudo_label.empty()) throw EmptyCaptionError("pseudo label is empty");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");

    AdapterState grad = student;
    const double loss = gen.loss_and_grad(image, prompt, pseudo_label, student, grad);

    opt.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, double(opt.step));
    const double bc2 = 1.0 - std::pow(config.beta2, double(opt.step));

    auto s_it = student.layers.begin();
    auto g_it = grad.layers.begin();
    auto m_it = opt.m.layers.begin();
    auto v_it = opt.v.layers.begin();
    for (; s_it != student.layers.end(); ++s_it, ++g_it, ++m_it, ++v_it) {
        auto update = [&](Eigen::MatrixXd& p, const Eigen::MatrixXd& g, Eigen::MatrixXd& m,
                          Eigen::MatrixXd& v) {
            m = config.beta1 * m + (1.0 - config.beta1) * g;
            v = config.beta2 * v.array().matrix() +
                (1.0 - config.beta2) * g.array().square().matrix();
            const Eigen::ArrayXXd m_hat = m.array() / bc1;
            const Eigen::ArrayXXd v_hat = v.array() / bc2;
            // decoupled weight decay
            p = (p.array() - lr * (m_hat / (v_hat.sqrt() + config.adam_eps) +
                                   config.weight_decay * p.array()))
                    .matrix();
        };
        update(s_it->second.A, g_it->second.A, m_it->second.A, v_it->second.A);
        update(s_it->second.B, g_it->second.B, m_it->second.B, v_it->second.B);
    }
    return loss;
}

void ema_update(AdapterState& teacher, const AdapterState& student, double decay) {
    adapter_axpy(teacher, student, decay, 1.0 - decay);
}

int select_checkpoint(const std::vector<IterationRecord>& records, CheckpointStrategy strategy) {
    if (records.empty()) throw ConfigError("select_checkpoint: no records");
    switch (strategy) {
        case CheckpointStrategy::final_iteration:
            return int(records.size()) - 1;
        case CheckpointStrategy::best_loss: {
            int best = -1;
            for (size_t i = 0; i < records.size(); ++i)
                if (best < 0 || records[i].loss < records[size_t(best)].loss) best = int(i);
            return best;
        }
        case CheckpointStrategy::max_clip_score: {
            int best = -1;
            for (size_t i = 0; i < records.size(); ++i) {
                if (!records[i].has_eval) continue;
                if (best < 0 || records[i].student_score > records[size_t(best)].student_score)
                    best = int(i);
            }
            return best;
        }
    }
    throw ConfigError("bad checkpoint strategy");
}

AdaptationTrace adapt_sample(const ImageInput& image, const TttConfig& config,
                             const Backends& backends, const AdapterState* initial_adapter) {
    config.validate();
    const GeneratorBackend& gen = *backends.generator;
    const EncoderBackend& enc = *backends.encoder;

    AdaptationTrace trace;
    trace.image_id = image.id;
    trace.config_json = ttt_config_to_json(config);

    AdapterState init = initial_adapter
                            ? *initial_adapter
                            : init_adapter(gen.model_dims(), config.lora_rank, config.lora_alpha,
                                           config.placement, config.seed, config.lora_targets);

    // baseline: greedy decode with the untouched adapter (delta = 0 at init,
    // or the supplied meta-initialization)
    trace.baseline_caption = gen.generate(image, config.prompt, DecodingParams::greedy_mode(), init);
    trace.baseline_score =
        clip_score(image, trace.baseline_caption, enc, config.scoring_mode).score;

    if (config.iterations == 0) {
        trace.selected_iteration = -1;
        trace.final_caption = trace.baseline_caption;
        trace.final_score = trace.baseline_score;
        return trace;
    }

    AdapterState student = init;
    AdapterState teacher = init;
    OptimizerState opt = OptimizerState::zeros_like(student);

    std::string pseudo_label;
    double pseudo_label_score = 0.0;
    const int eval_interval = config.effective_eval_interval();

    double best_loss = std::numeric_limits<double>::infinity();
    AdapterState best_loss_adapter = student;
    int best_loss_iteration = -1;

    try {
        for (int i = 0; i < config.iterations; ++i) {
            IterationRecord rec;
            rec.iteration = i;
            rec.lr = lr_at(config, i);

            const bool refresh =
                (i == 0) || (config.teacher_mode != TeacherMode::fixed && i % config.regen_interval == 0);
            if (refresh) {
                CandidateSet cands = generate_candidates(teacher, image, config, backends, i);
                pseudo_label = cands.best().caption;
                pseudo_label_score = cands.best().score;
            }
            rec.candidates_refreshed = refresh;
            rec.pseudo_label = pseudo_label;
            rec.pseudo_label_score = pseudo_label_score;

            if (config.checkpoint_strategy == CheckpointStrategy::best_loss) {
                // loss is measured pre-step; snapshot the matching weights
                AdapterState pre = student;
                rec.loss = student_step(student, image, config.prompt, pseudo_label, gen, opt,
                                        rec.lr, config);
                if (rec.loss < best_loss) {
                    best_loss = rec.loss;
                    best_loss_adapter = pre;
                    best_loss_iteration = i;
                }
            } else {
                rec.loss = student_step(student, image, config.prompt, pseudo_label, gen, opt,
                                        rec.lr, config);
            }

            switch (config.teacher_mode) {
                case TeacherMode::ema:
                    ema_update(teacher, student, config.ema_decay);
                    break;
                case TeacherMode::dynamic:
                    teacher = student;
                    break;
                case TeacherMode::fixed:
                    break;
            }

            const bool eval_point = (i % eval_interval == 0) || (i == config.iterations - 1);
            if (eval_point) {
                rec.student_caption =
                    gen.generate(image, config.prompt, DecodingParams::greedy_mode(), student);
                rec.student_score = clip_score(image, rec.student_caption, enc,
                                               config.scoring_mode).score;
                rec.has_eval = true;
            }
            trace.records.push_back(std::move(rec));
        }
    } catch (const NumericalError&) {
        // fall back to the baseline caption, keep the partial trace
        trace.aborted_non_finite = true;
        trace.selected_iteration = -1;
        trace.final_caption = trace.baseline_caption;
        trace.final_score = trace.baseline_score;
        return trace;
    }

    switch (config.checkpoint_strategy) {
        case CheckpointStrategy::max_clip_score: {
            const int idx = select_checkpoint(trace.records, CheckpointStrategy::max_clip_score);
            // the untouched baseline competes too; ties go to the baseline
            if (idx >= 0 && trace.records[size_t(idx)].student_score > trace.baseline_score) {
                trace.selected_iteration = trace.records[size_t(idx)].iteration;
                trace.final_caption = trace.records[size_t(idx)].student_caption;
                trace.final_score = trace.records[size_t(idx)].student_score;
            } else {
                trace.selected_iteration = -1;
                trace.final_caption = trace.baseline_caption;
                trace.final_score = trace.baseline_score;
            }
            break;
        }
        case CheckpointStrategy::final_iteration: {
            const IterationRecord& last = trace.records.back();
            trace.selected_iteration = last.iteration;
            trace.final_caption = last.student_caption;
            trace.final_score = last.student_score;
            break;
        }
        case CheckpointStrategy::best_loss: {
            trace.selected_iteration = best_loss_iteration;
            trace.final_caption = gen.generate(image, config.prompt,
                                               DecodingParams::greedy_mode(), best_loss_adapter);
            trace.final_score = clip_score(image, trace.final_caption, enc,
                                           config.scoring_mode).score;
            break;
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// serialization

std::string ttt_config_to_json(const TttConfig& c) {
    nlohmann::json j;
    j["iterations"] = c.iterations;
    j["regen_interval"] = c.regen_interval;
    j["n_candidates"] = c.n_candidates;
    j["decoding"]["mode"] = c.decoding.mode == DecodeMode::greedy ? "greedy" : "stochastic";
    j["decoding"]["temperature"] = c.decoding.temperature;
    j["decoding"]["top_p"] = c.decoding.top_p;
    j["decoding"]["max_tokens"] = c.decoding.max_tokens;
    j["decoding"]["seed"] = c.decoding.seed;
    j["lr0"] = c.lr0;
    j["lr_schedule"] = c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant";
    j["ema_decay"] = c.ema_decay;
    j["teacher_mode"] = teacher_mode_name(c.teacher_mode);
    j["checkpoint_strategy"] = checkpoint_strategy_name(c.checkpoint_strategy);
    j["prompt"] = c.prompt;
    j["scoring_mode"] = c.scoring_mode == ScoringMode::sentence_avg ? "sentence_avg" : "full_caption";
    j["seed"] = c.seed;
    j["lora_rank"] = c.lora_rank;
    j["lora_alpha"] = c.lora_alpha;
    j["placement"] = placement_name(c.placement);
    if (c.lora_targets) j["lora_targets"] = *c.lora_targets;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["weight_decay"] = c.weight_decay;
    j["eval_interval"] = c.eval_interval;
    return j.dump();
}

TttConfig ttt_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TttConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.regen_interval = j.value("regen_interval", c.regen_interval);
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    if (j.contains("decoding")) {
        const auto& d = j.at("decoding");
        c.decoding.mode = d.value("mode", "stochastic") == std::string("greedy")
                              ? DecodeMode::greedy
                              : DecodeMode::stochastic;
        c.decoding.temperature = d.value("temperature", c.decoding.temperature);
        c.decoding.top_p = d.value("top_p", c.decoding.top_p);
        c.decoding.max_tokens = d.value("max_tokens", c.decoding.max_tokens);
        c.decoding.seed = d.value("seed", c.decoding.seed);
    }
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_schedule = j.value("lr_schedule", "cosine") == std::string("constant")
                        ? LrSchedule::constant
                        : LrSchedule::cosine;
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    if (j.contains("teacher_mode")) c.teacher_mode = teacher_mode_from_name(j.at("teacher_mode"));
    if (j.contains("checkpoint_strategy"))
        c.checkpoint_strategy = checkpoint_strategy_from_name(j.at("checkpoint_strategy"));
    c.prompt = j.value("prompt", c.prompt);
    c.scoring_mode = j.value("scoring_mode", "sentence_avg") == std::string("full_caption")
                         ? ScoringMode::full_caption
                         : ScoringMode::sentence_avg;
    c.seed = j.value("seed", c.seed);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
    if (j.contains("placement")) c.placement = placement_from_name(j.at("placement"));
    if (j.contains("lora_targets"))
        c.lora_targets = j.at("lora_targets").get<std::vector<std::string>>();
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    return c;
}

namespace {

nlohmann::json record_to_json(const IterationRecord& r) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["loss"] = r.loss;
    j["pseudo_label"] = r.pseudo_label;
    j["pseudo_label_score"] = r.pseudo_label_score;
    j["lr"] = r.lr;
    j["candidates_refreshed"] = r.candidates_refreshed;
    j["has_eval"] = r.has_eval;
    if (r.has_eval) {
        j["student_caption"] = r.student_caption;
        j["student_score"] = r.student_score;
    }
    return j;
}

IterationRecord record_from_json(const nlohmann::json& j) {
    IterationRecord r;
    r.iteration = j.at("iteration").get<int>();
    r.loss = j.at("loss").get<double>();
    r.pseudo_label = j.at("pseudo_label").get<std::string>();
    r.pseudo_label_score = j.at("pseudo_label_score").get<double>();
    r.lr = j.at("lr").get<double>();
    r.candidates_refreshed = j.at("candidates_refreshed").get<bool>();
    r.has_eval = j.at("has_eval").get<bool>();
    if (r.has_eval) {
        r.student_caption = j.at("student_caption").get<std::string>();
        r.student_score = j.at("student_score").get<double>();
    }
    return r;
}

}  // namespace

std::string trace_to_json(const AdaptationTrace& t) {
    nlohmann::json j;
    j["image_id"] = t.image_id;
    j["config"] = nlohmann::json::parse(t.config_json);
    j["selected_iteration"] = t.selected_iteration;
    j["final_caption"] = t.final_caption;
    j["final_score"] = t.final_score;
    j["baseline_caption"] = t.baseline_caption;
    j["baseline_score"] = t.baseline_score;
    j["aborted_non_finite"] = t.aborted_non_finite;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : t.records) recs.push_back(record_to_json(r));
    j["records"] = recs;
    return j.dump(2);
}

AdaptationTrace trace_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    AdaptationTrace t;
    t.image_id = j.at("image_id").get<std::string>();
    t.config_json = j.at("config").dump();
    t.selected_iteration = j.at("selected_iteration").get<int>();
    t.final_caption = j.at("final_caption").get<std::string>();
    t.final_score = j.at("final_score").get<double>();
    t.baseline_caption = j.at("baseline_caption").get<std::string>();
    t.baseline_score = j.at("baseline_score").get<double>();
    t.aborted_non_finite = j.value("aborted_non_finite", false);
    for (const auto& r : j.at("records")) t.records.push_back(record_from_json(r));
    return t;
}

}  // namespace ttcap
