#include "ttcap/runner.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"
#include "ttcap/rng.hpp"

namespace fs = std::filesystem;

namespace ttcap {

namespace {

BackendFactory& external_factory() {
    static BackendFactory factory;
    return factory;
}

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

constexpr const char* kVersion = "ttcap 0.1.0";

}  // namespace

void register_external_backend(BackendFactory factory) { external_factory() = std::move(factory); }

BackendKind backend_kind_with_env_override(BackendKind configured) {
    const char* env = std::getenv("TTCAP_BACKEND");
    if (!env) return configured;
    const std::string v(env);
    if (v == "toy") return BackendKind::toy;
    if (v == "external") return BackendKind::external;
    throw ConfigError("TTCAP_BACKEND must be 'toy' or 'external', got '" + v + "'");
}

void RunConfig::validate() const {
    ttt.validate();
    const bool has_toy = !toy_world_path.empty();
    const bool has_dir = !images_dir.empty();
    if (has_toy == has_dir)
        throw ConfigError("exactly one of toy_world_path / images_dir must be set");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (corruption) {
        if (corruption->kinds.empty() || corruption->severities.empty())
            throw ConfigError("corruption sweep needs kinds and severities");
        for (int s : corruption->severities)
            if (s < 1 || s > 5) throw ConfigError("corruption severity out of range [1,5]");
    }
}

RunConfig run_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    RunConfig c;
    const std::string backend = j.value("backend", "toy");
    if (backend == "toy")
        c.backend = BackendKind::toy;
    else if (backend == "external")
        c.backend = BackendKind::external;
    else
        throw ConfigError("unknown backend: " + backend);
    if (j.contains("ttt")) c.ttt = ttt_config_from_json(j.at("ttt").dump());
    if (j.contains("meta_init_path") && !j.at("meta_init_path").is_null())
        c.meta_init_path = j.at("meta_init_path").get<std::string>();
    if (j.contains("corruption") && !j.at("corruption").is_null()) {
        CorruptionSweep sweep;
        for (const auto& k : j.at("corruption").at("kinds"))
            sweep.kinds.push_back(corruption_from_name(k.get<std::string>()));
        sweep.severities = j.at("corruption").at("severities").get<std::vector<int>>();
        sweep.seed = j.at("corruption").value("seed", 0L);
        c.corruption = sweep;
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.toy_world_path = d.value("toy_world_path", "");
        c.images_dir = d.value("images_dir", "");
        c.annotations_path = d.value("annotations_path", "");
        c.synonyms_path = d.value("synonyms_path", "");
    }
    c.output_dir = j.value("output_dir", "");
    c.workers = j.value("workers", 1);
    c.global_seed = j.value("global_seed", 0L);
    return c;
}

std::string run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["backend"] = c.backend == BackendKind::toy ? "toy" : "external";
    j["ttt"] = nlohmann::json::parse(ttt_config_to_json(c.ttt));
    if (c.meta_init_path) j["meta_init_path"] = *c.meta_init_path;
    if (c.corruption) {
        nlohmann::json kinds = nlohmann::json::array();
        for (const auto k : c.corruption->kinds) kinds.push_back(corruption_name(k));
        j["corruption"]["kinds"] = kinds;
        j["corruption"]["severities"] = c.corruption->severities;
        j["corruption"]["seed"] = c.corruption->seed;
    }
    j["dataset"]["toy_world_path"] = c.toy_world_path;
    j["dataset"]["images_dir"] = c.images_dir;
    j["dataset"]["annotations_path"] = c.annotations_path;
    j["dataset"]["synonyms_path"] = c.synonyms_path;
    j["output_dir"] = c.output_dir;
    j["workers"] = c.workers;
    j["global_seed"] = c.global_seed;
    return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_file(path));
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["config"] = nlohmann::json::parse(config_json);
    j["dataset_hash"] = dataset_hash;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["hard_failures"] = hard_failures;
    nlohmann::json sample_list = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json e;
        e["sample_id"] = s.sample_id;
        e["status"] = s.status;
        e["detail"] = s.detail;
        e["seconds"] = s.seconds;
        sample_list.push_back(e);
    }
    j["samples"] = sample_list;
    return j.dump(2);
}

RunManifest manifest_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    RunManifest m;
    m.version = j.value("version", "");
    m.config_json = j.at("config").dump();
    m.dataset_hash = j.value("dataset_hash", "");
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.hard_failures = j.value("hard_failures", 0);
    for (const auto& e : j.at("samples")) {
        SampleStatus s;
        s.sample_id = e.at("sample_id").get<std::string>();
        s.status = e.at("status").get<std::string>();
        s.detail = e.value("detail", "");
        s.seconds = e.value("seconds", 0.0);
        m.samples.push_back(s);
    }
    return m;
}

namespace {

struct LoadedDataset {
    std::vector<ImageInput> images;
    std::shared_ptr<const ToyWorld> world;  // null for external datasets
    std::string hash;
};

LoadedDataset load_dataset(const RunConfig& config) {
    LoadedDataset ds;
    if (!config.toy_world_path.empty()) {
        auto world = std::make_shared<ToyWorld>(load_toy_world(config.toy_world_path));
        ds.images = world->render_all();
        ds.hash = world->content_hash();
        ds.world = world;
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(config.images_dir))
            if (entry.path().extension() == ".ppm") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::string combined;
        for (const auto& f : files) {
            ds.images.push_back(read_ppm(f.string(), f.stem().string()));
            combined += sha256_file(f.string());
        }
        ds.hash = sha256_hex(combined);
    }
    if (ds.images.empty()) throw ConfigError("dataset contains no images");
    return ds;
}

Backends resolve_backends(const RunConfig& config, const LoadedDataset& ds, ToyBackend& storage) {
    const BackendKind kind = backend_kind_with_env_override(config.backend);
    if (kind == BackendKind::external) {
        if (!external_factory())
            throw ConfigError(
                "no external backend registered. A reproduction build must call "
                "register_external_backend() with a factory producing GeneratorBackend "
                "(generate, loss_and_grad, model_dims, serialize_base) and EncoderBackend "
                "(encode_image, encode_text, text_token_limit) implementations wrapping the "
                "real models.");
        return external_factory()();
    }
    if (!ds.world) throw ConfigError("toy backend requires a toy world dataset");
    storage = make_toy_backend(ds.world);
    Backends b;
    b.generator = storage.generator.get();
    b.encoder = storage.encoder.get();
    return b;
}

struct SampleJob {
    ImageInput image;         // possibly corrupted
    std::string sample_id;
    std::string source_id;
};

std::vector<SampleJob> expand_samples(const RunConfig& config, const LoadedDataset& ds) {
    std::vector<SampleJob> jobs;
    for (const auto& img : ds.images) {
        if (config.corruption) {
            for (const auto kind : config.corruption->kinds)
                for (const int sev : config.corruption->severities) {
                    CorruptionSpec spec;
                    spec.kind = kind;
                    spec.severity = sev;
                    spec.seed = long(mix_seed(uint64_t(config.corruption->seed), fnv1a64(img.id)));
                    SampleJob job;
                    job.image = corrupt(img, spec);
                    job.sample_id = img.id + "__" + spec.tag();
                    job.source_id = img.id;
                    // the trace and downstream metrics key on the source image
                    job.image.id = img.id;
                    jobs.push_back(std::move(job));
                }
        } else {
            jobs.push_back({img, img.id, img.id});
        }
    }
    return jobs;
}

}  // namespace

RunManifest run_adapt(const RunConfig& config) {
    config.validate();
    const LoadedDataset ds = load_dataset(config);
    ToyBackend toy_storage;
    const Backends backends = resolve_backends(config, ds, toy_storage);

    std::optional<AdapterState> meta_init;
    if (config.meta_init_path) meta_init = load_adapter(*config.meta_init_path);

    const std::string traces_dir = config.output_dir + "/traces";
    ensure_dir(traces_dir);

    RunManifest manifest;
    manifest.version = kVersion;
    manifest.config_json = run_config_to_json(config);
    manifest.dataset_hash = ds.hash;
    manifest.started_at = now_iso8601();

    std::vector<SampleJob> jobs = expand_samples(config, ds);
    std::vector<SampleStatus> statuses(jobs.size());

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t idx = next.fetch_add(1);
            if (idx >= jobs.size()) break;
            const SampleJob& job = jobs[idx];
            SampleStatus& st = statuses[idx];
            st.sample_id = job.sample_id;
            const std::string trace_path = traces_dir + "/" + job.sample_id + ".json";
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (file_exists(trace_path)) {
                    trace_from_json(read_file(trace_path));  // must parse to count as done
                    st.status = "skipped";
                } else {
                    TttConfig ttt = config.ttt;
                    // all per-sample randomness derives from (global_seed, sample_id)
                    ttt.seed = long(mix_seed(uint64_t(config.global_seed), fnv1a64(job.sample_id)));
                    AdaptationTrace trace = adapt_sample(job.image, ttt, backends,
                                                         meta_init ? &*meta_init : nullptr);
                    trace.image_id = job.sample_id;
                    atomic_write_file(trace_path, trace_to_json(trace));
                    st.status = trace.aborted_non_finite ? "fallback" : "ok";
                }
            } catch (const std::exception& e) {
                st.status = "failed";
                st.detail = e.what();
            }
            st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };

    if (config.workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < config.workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    manifest.samples = std::move(statuses);
    for (const auto& s : manifest.samples)
        if (s.status == "failed") manifest.hard_failures += 1;
    manifest.finished_at = now_iso8601();
    atomic_write_file(config.output_dir + "/manifest.json", manifest.to_json());
    return manifest;
}

std::vector<AdaptationTrace> load_traces(const std::string& traces_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(traces_dir))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<AdaptationTrace> traces;
    for (const auto& f : files) {
        try {
            traces.push_back(trace_from_json(read_file(f.string())));
        } catch (const std::exception&) {
            fprintf(stderr, "warning: skipping unparseable trace %s\n", f.string().c_str());
        }
    }
    return traces;
}

EvaluateResult run_evaluate(const RunConfig& config, const std::string& traces_dir,
                            bool ablation_clip_without_ttt) {
    const std::vector<AdaptationTrace> traces = load_traces(traces_dir);
    if (traces.empty()) throw ConfigError("no traces found in " + traces_dir);

    ObjectAnnotations ann;
    if (!config.toy_world_path.empty()) {
        const ToyWorld world = load_toy_world(config.toy_world_path);
        for (const auto& [id, objs] : world.scenes)
            ann.present_objects[id] = std::set<std::string>(objs.begin(), objs.end());
        // identity synonym table over the object lexicon
        for (const auto& o : world.object_lexicon) ann.synonym_map[o] = o;
        if (!config.synonyms_path.empty()) {
            for (const auto& [term, cat] : load_synonym_map(config.synonyms_path))
                ann.synonym_map[term] = cat;
        }
    } else {
        if (config.annotations_path.empty() || config.synonyms_path.empty())
            throw ConfigError("evaluation needs annotations_path and synonyms_path");
        ann = load_coco_annotations(config.annotations_path, load_synonym_map(config.synonyms_path));
    }

    auto strip_corruption_tag = [](const std::string& sample_id) {
        const size_t pos = sample_id.find("__");
        return pos == std::string::npos ? sample_id : sample_id.substr(0, pos);
    };

    CaptionList baseline, final_caps, pseudo0;
    for (const auto& t : traces) {
        const std::string source = strip_corruption_tag(t.image_id);
        baseline.push_back({source, t.baseline_caption});
        final_caps.push_back({source, t.final_caption});
        if (!t.records.empty()) pseudo0.push_back({source, t.records.front().pseudo_label});
    }

    EvaluateResult result;
    result.baseline = chair_metrics(baseline, ann);
    result.final_ = chair_metrics(final_caps, ann);
    if (ablation_clip_without_ttt && !pseudo0.empty()) {
        result.pseudo_label0 = chair_metrics(pseudo0, ann);
        result.has_pseudo_label0 = true;
    }
    result.distribution = score_distribution_report(traces, {0, 5, 10, 15, 20, 25, 50, 100});

    const std::string rep_dir = config.output_dir + "/reports";
    ensure_dir(rep_dir);
    atomic_write_file(rep_dir + "/chair_baseline.json", result.baseline.to_json());
    atomic_write_file(rep_dir + "/chair_final.json", result.final_.to_json());
    if (result.has_pseudo_label0)
        atomic_write_file(rep_dir + "/chair_pseudo_label0.json", result.pseudo_label0.to_json());
    atomic_write_file(rep_dir + "/score_distribution.json", result.distribution.to_json());
    atomic_write_file(rep_dir + "/score_distribution.csv", result.distribution.to_csv());
    atomic_write_file(rep_dir + "/improvement_bins.csv", result.distribution.bins_to_csv());
    atomic_write_file(rep_dir + "/score_distribution.svg", result.distribution.histogram_svg());
    atomic_write_file(rep_dir + "/improvement_bins.svg", result.distribution.bins_svg());

    std::ostringstream side;
    side << "metric,baseline,final\n";
    side << "chair_s," << result.baseline.chair_s * 100 << "," << result.final_.chair_s * 100 << "\n";
    side << "chair_i," << result.baseline.chair_i * 100 << "," << result.final_.chair_i * 100 << "\n";
    side << "f1," << result.baseline.f1 << "," << result.final_.f1 << "\n";
    atomic_write_file(rep_dir + "/chair_side_by_side.csv", side.str());
    return result;
}

std::string run_meta(const RunConfig& config, const MetaConfig& meta, const std::string& out_path) {
    config.validate();
    const LoadedDataset ds = load_dataset(config);
    ToyBackend toy_storage;
    const Backends backends = resolve_backends(config, ds, toy_storage);

    const MetaTrainResult result = meta_train(ds.images, meta, backends);

    std::map<std::string, std::string> provenance;
    provenance["dataset_hash"] = ds.hash;
    provenance["meta_config"] = meta_config_to_json(meta);
    save_adapter(result.phi, out_path, provenance);

    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : result.log)
        log.push_back({{"image_id", e.image_id},
                       {"epoch", e.epoch},
                       {"initial_loss", e.initial_loss},
                       {"final_loss", e.final_loss},
                       {"skipped", e.skipped}});
    atomic_write_file(out_path + ".log.json", log.dump(2));
    return out_path;
}

}  // namespace ttcap
