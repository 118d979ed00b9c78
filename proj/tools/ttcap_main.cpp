// Command-line front end: adapt / evaluate / corrupt / meta-train /
// export-judge-prompts / report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"
#include "ttcap/runner.hpp"

using namespace ttcap;
namespace fs = std::filesystem;

namespace {

RunConfig load_config_with_overrides(const std::string& config_path, const std::string& output_dir,
                                     int workers, long seed, int iterations) {
    RunConfig config = load_run_config(config_path);
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (workers > 0) config.workers = workers;
    if (seed >= 0) config.global_seed = seed;
    if (iterations >= 0) config.ttt.iterations = iterations;
    config.backend = backend_kind_with_env_override(config.backend);
    return config;
}

int cmd_adapt(const std::string& config_path, const std::string& output_dir, int workers,
              long seed, int iterations) {
    RunConfig config =
        load_config_with_overrides(config_path, output_dir, workers, seed, iterations);
    const RunManifest manifest = run_adapt(config);
    int ok = 0, skipped = 0, fallback = 0;
    for (const auto& s : manifest.samples) {
        if (s.status == "ok") ++ok;
        if (s.status == "skipped") ++skipped;
        if (s.status == "fallback") ++fallback;
    }
    std::printf("adapt: %d ok, %d skipped, %d fallback, %d failed -> %s\n", ok, skipped, fallback,
                manifest.hard_failures, config.output_dir.c_str());
    return manifest.hard_failures == 0 ? 0 : 1;
}

int cmd_evaluate(const std::string& config_path, const std::string& traces_dir,
                 const std::string& captions_file, const std::string& annotations_file,
                 const std::string& synonyms_file, const std::string& report_dir,
                 bool ablation_clip_without_ttt) {
    if (!captions_file.empty()) {
        // standalone mode: caption JSONL against COCO-style annotations
        if (annotations_file.empty() || synonyms_file.empty() || report_dir.empty())
            throw ConfigError("--captions mode needs --annotations, --synonyms and --report");
        CaptionList captions;
        std::istringstream in(read_file(captions_file));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            captions.push_back({j.at("image_id").get<std::string>(),
                                j.at("caption").get<std::string>()});
        }
        const ObjectAnnotations ann =
            load_coco_annotations(annotations_file, load_synonym_map(synonyms_file));
        const HallucinationReport rep = chair_metrics(captions, ann);
        ensure_dir(report_dir);
        atomic_write_file(report_dir + "/chair.json", rep.to_json());
        std::printf("chair_s=%.2f chair_i=%.2f f1=%.4f over %d captions\n", rep.chair_s * 100,
                    rep.chair_i * 100, rep.f1, rep.n_captions);
        return 0;
    }

    RunConfig config = load_run_config(config_path);
    config.backend = backend_kind_with_env_override(config.backend);
    const std::string traces = traces_dir.empty() ? config.output_dir + "/traces" : traces_dir;
    const EvaluateResult res = run_evaluate(config, traces, ablation_clip_without_ttt);
    std::printf("baseline: chair_s=%.2f chair_i=%.2f f1=%.4f\n", res.baseline.chair_s * 100,
                res.baseline.chair_i * 100, res.baseline.f1);
    std::printf("final:    chair_s=%.2f chair_i=%.2f f1=%.4f\n", res.final_.chair_s * 100,
                res.final_.chair_i * 100, res.final_.f1);
    if (res.has_pseudo_label0)
        std::printf("clip w/o ttt: chair_s=%.2f chair_i=%.2f f1=%.4f\n",
                    res.pseudo_label0.chair_s * 100, res.pseudo_label0.chair_i * 100,
                    res.pseudo_label0.f1);
    std::printf("mean display score: baseline=%.3f final=%.3f (improvement %.3f)\n",
                res.distribution.baseline.mean, res.distribution.final_.mean,
                res.distribution.mean_improvement);
    return 0;
}

int cmd_corrupt(const std::string& in_dir, const std::string& out_dir,
                const std::vector<std::string>& kind_names, const std::vector<int>& severities,
                long seed, const std::string& toy_world) {
    std::vector<ImageInput> images;
    if (!toy_world.empty()) {
        images = load_toy_world(toy_world).render_all();
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(in_dir))
            if (entry.path().extension() == ".ppm") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) images.push_back(read_ppm(f.string(), f.stem().string()));
    }
    if (images.empty()) throw ConfigError("no input images");

    std::vector<CorruptionKind> kinds;
    if (kind_names.size() == 1 && kind_names[0] == "all") {
        kinds.assign(kAllCorruptionKinds.begin(), kAllCorruptionKinds.end());
    } else {
        for (const auto& n : kind_names) kinds.push_back(corruption_from_name(n));
    }
    const auto manifest = corrupt_dataset(images, kinds, severities, seed, out_dir);
    std::printf("corrupt: wrote %zu images + manifest.jsonl -> %s\n", manifest.size(),
                out_dir.c_str());
    return 0;
}

int cmd_meta_train(const std::string& config_path, const std::string& out_path, int inner_steps,
                   double eps, int epochs, double inner_lr) {
    RunConfig config = load_run_config(config_path);
    config.backend = backend_kind_with_env_override(config.backend);
    MetaConfig meta;
    meta.inner = config.ttt;
    meta.inner_steps = inner_steps;
    meta.eps = eps;
    meta.meta_epochs = epochs;
    meta.inner_lr = inner_lr;
    meta.task_sampler_seed = config.global_seed;
    run_meta(config, meta, out_path);
    std::printf("meta-train: wrote %s (+.log.json)\n", out_path.c_str());
    return 0;
}

int cmd_export_judge_prompts(const std::string& captions_file, const std::string& out_dir) {
    const auto j = nlohmann::json::parse(read_file(captions_file));
    std::vector<std::pair<std::string, std::vector<std::string>>> sets;
    for (const auto& e : j)
        sets.push_back({e.at("image_id").get<std::string>(),
                        e.at("responses").get<std::vector<std::string>>()});
    const auto entries = export_judge_prompts(sets, out_dir);
    int empties = 0;
    for (const auto& e : entries)
        for (bool f : e.empty_flags) empties += f ? 1 : 0;
    std::printf("export-judge-prompts: %zu files -> %s (%d empty responses flagged)\n",
                entries.size(), out_dir.c_str(), empties);
    return 0;
}

int cmd_report(const std::string& traces_dir, const std::string& out_dir,
               std::vector<double> bin_edges) {
    const auto traces = load_traces(traces_dir);
    if (traces.empty()) throw ConfigError("no traces found in " + traces_dir);
    if (bin_edges.size() < 2) bin_edges = {0, 5, 10, 15, 20, 25, 50, 100};
    const ScoreDistributionReport rep = score_distribution_report(traces, bin_edges);
    ensure_dir(out_dir);
    atomic_write_file(out_dir + "/score_distribution.json", rep.to_json());
    atomic_write_file(out_dir + "/score_distribution.csv", rep.to_csv());
    atomic_write_file(out_dir + "/improvement_bins.csv", rep.bins_to_csv());
    atomic_write_file(out_dir + "/score_distribution.svg", rep.histogram_svg());
    atomic_write_file(out_dir + "/improvement_bins.svg", rep.bins_svg());
    std::printf("report: baseline mean %.3f, final mean %.3f, improvement %.3f -> %s\n",
                rep.baseline.mean, rep.final_.mean, rep.mean_improvement, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"test-time captioning adaptation toolkit"};
    app.require_subcommand(1);

    // adapt
    std::string config_path, output_dir, traces_dir, captions_file, annotations_file;
    std::string synonyms_file, report_dir, in_dir, out_dir, out_path, toy_world;
    int workers = -1, iterations = -1;
    long seed = -1;
    bool ablation = false;

    auto* adapt = app.add_subcommand("adapt", "run per-sample adaptation over a dataset");
    adapt->add_option("--config", config_path, "run config JSON")->required();
    adapt->add_option("--output-dir", output_dir, "override output directory");
    adapt->add_option("--workers", workers, "override worker count");
    adapt->add_option("--seed", seed, "override global seed");
    adapt->add_option("--iterations", iterations, "override adaptation iterations");

    auto* evaluate = app.add_subcommand("evaluate", "hallucination metrics for traces or captions");
    evaluate->add_option("--config", config_path, "run config JSON");
    evaluate->add_option("--traces", traces_dir, "trace directory (default <output_dir>/traces)");
    evaluate->add_option("--captions", captions_file, "caption JSONL ({image_id, caption} lines)");
    evaluate->add_option("--annotations", annotations_file, "COCO-style instances JSON");
    evaluate->add_option("--synonyms", synonyms_file, "term->category JSON map");
    evaluate->add_option("--report", report_dir, "report output directory (captions mode)");
    evaluate->add_flag("--ablation-clip-without-ttt", ablation,
                       "also score the iteration-0 pseudo-labels");

    auto* corrupt_cmd = app.add_subcommand("corrupt", "write corrupted copies of a dataset");
    std::vector<std::string> kind_names = {"all"};
    std::vector<int> severities = {5};
    corrupt_cmd->add_option("--in", in_dir, "input directory of .ppm images");
    corrupt_cmd->add_option("--toy-world", toy_world, "render inputs from a toy world instead");
    corrupt_cmd->add_option("--out", out_dir, "output directory")->required();
    corrupt_cmd->add_option("--kinds", kind_names, "corruption kinds or 'all'");
    corrupt_cmd->add_option("--severities", severities, "severity levels (1-5)");
    corrupt_cmd->add_option("--seed", seed, "corruption seed");

    auto* meta = app.add_subcommand("meta-train", "learn an adapter initialization (Reptile)");
    int inner_steps = 12, epochs = 3;
    double eps = 0.1, inner_lr = 0.05;
    meta->add_option("--config", config_path, "run config JSON")->required();
    meta->add_option("--out", out_path, "checkpoint output path")->required();
    meta->add_option("--inner-steps", inner_steps, "inner-loop step count K");
    meta->add_option("--eps", eps, "meta step size");
    meta->add_option("--epochs", epochs, "meta epochs");
    meta->add_option("--inner-lr", inner_lr, "inner-loop learning rate");

    auto* judge = app.add_subcommand("export-judge-prompts", "emit LLM-judge prompt files");
    judge->add_option("--captions", captions_file,
                      "JSON array of {image_id, responses:[4 strings]}")->required();
    judge->add_option("--out", out_dir, "output directory")->required();

    auto* report = app.add_subcommand("report", "score distribution / improvement-bin report");
    std::vector<double> bin_edges;
    report->add_option("--traces", traces_dir, "trace directory")->required();
    report->add_option("--out", out_dir, "output directory")->required();
    report->add_option("--bins", bin_edges, "baseline-score bin edges");

    CLI11_PARSE(app, argc, argv);

    try {
        if (adapt->parsed())
            return cmd_adapt(config_path, output_dir, workers, seed, iterations);
        if (evaluate->parsed())
            return cmd_evaluate(config_path, traces_dir, captions_file, annotations_file,
                                synonyms_file, report_dir, ablation);
        if (corrupt_cmd->parsed()) {
            if (in_dir.empty() == toy_world.empty())
                throw ConfigError("corrupt: exactly one of --in / --toy-world required");
            return cmd_corrupt(in_dir, out_dir, kind_names, severities, seed < 0 ? 0 : seed,
                               toy_world);
        }
        if (meta->parsed())
            return cmd_meta_train(config_path, out_path, inner_steps, eps, epochs, inner_lr);
        if (judge->parsed()) return cmd_export_judge_prompts(captions_file, out_dir);
        if (report->parsed()) return cmd_report(traces_dir, out_dir, bin_edges);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
