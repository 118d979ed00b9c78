#include "ttcap/lora.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"
#include "ttcap/rng.hpp"

namespace ttcap {

std::string placement_name(Placement p) {
    switch (p) {
        case Placement::llm_only: return "llm_only";
        case Placement::vision_only: return "vision_only";
        case Placement::vision_and_llm: return "vision_and_llm";
    }
    throw ConfigError("bad placement value");
}

Placement placement_from_name(const std::string& name) {
    if (name == "llm_only") return Placement::llm_only;
    if (name == "vision_only") return Placement::vision_only;
    if (name == "vision_and_llm") return Placement::vision_and_llm;
    throw ConfigError("unknown placement: " + name);
}

bool AdapterState::structurally_equal(const AdapterState& other) const {
    if (layers.size() != other.layers.size()) return false;
    auto it = layers.begin();
    auto jt = other.layers.begin();
    for (; it != layers.end(); ++it, ++jt) {
        if (it->first != jt->first) return false;
        const LoraLayer& a = it->second;
        const LoraLayer& b = jt->second;
        if (a.rank != b.rank || a.A.rows() != b.A.rows() || a.A.cols() != b.A.cols() ||
            a.B.rows() != b.B.rows() || a.B.cols() != b.B.cols())
            return false;
    }
    return true;
}

size_t AdapterState::parameter_count() const {
    size_t n = 0;
    for (const auto& [name, layer] : layers) n += size_t(layer.A.size()) + size_t(layer.B.size());
    return n;
}

std::vector<std::string> targets_for_placement(const ModelDims& dims, Placement placement) {
    std::vector<std::string> out;
    for (const auto& d : dims) {
        const bool is_vision = d.target.rfind("vision.", 0) == 0;
        const bool is_llm = d.target.rfind("llm.", 0) == 0;
        switch (placement) {
            case Placement::llm_only:
                if (is_llm) out.push_back(d.target);
                break;
            case Placement::vision_only:
                if (is_vision) out.push_back(d.target);
                break;
            case Placement::vision_and_llm:
                if (is_vision || is_llm) out.push_back(d.target);
                break;
        }
    }
    return out;
}

AdapterState init_adapter(const ModelDims& dims, int rank, double alpha, Placement placement,
                          long seed, const std::optional<std::vector<std::string>>& target_override) {
    if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
    if (alpha <= 0.0) throw ConfigError("LoRA alpha must be positive");

    std::vector<std::string> targets =
        target_override ? *target_override : targets_for_placement(dims, placement);
    if (targets.empty()) throw ConfigError("no projections selected for LoRA placement");

    AdapterState adapter;
    adapter.placement = placement;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.seed = seed;

    for (const auto& target : targets) {
        const ProjectionDim* dim = nullptr;
        for (const auto& d : dims)
            if (d.target == target) dim = &d;
        if (!dim) throw ConfigError("unknown LoRA target: " + target);
        if (rank > std::min(dim->d_in, dim->d_out))
            throw ConfigError("rank " + std::to_string(rank) + " exceeds min dim of " + target);

        LoraLayer layer;
        layer.rank = rank;
        layer.alpha = alpha;
        layer.target = target;
        layer.A.resize(rank, dim->d_in);
        layer.B = Eigen::MatrixXd::Zero(dim->d_out, rank);

        Rng rng(mix_seed(uint64_t(seed), fnv1a64(target)));
        const double stddev = 1.0 / std::sqrt(double(dim->d_in));
        for (int r = 0; r < layer.A.rows(); ++r)
            for (int c = 0; c < layer.A.cols(); ++c) layer.A(r, c) = rng.normal(0.0, stddev);

        adapter.layers.emplace(target, std::move(layer));
    }
    return adapter;
}

Eigen::MatrixXd effective_weight(const Eigen::MatrixXd& base, const LoraLayer& layer) {
    if (layer.B.rows() != base.rows() || layer.A.cols() != base.cols() ||
        layer.B.cols() != layer.rank || layer.A.rows() != layer.rank)
        throw ConfigError("LoRA layer shape mismatch for target " + layer.target);
    return base + layer.delta();
}

void adapter_axpy(AdapterState& dst, const AdapterState& src, double a, double b) {
    if (!dst.structurally_equal(src)) throw ConfigError("adapter_axpy: structural mismatch");
    auto it = dst.layers.begin();
    auto jt = src.layers.begin();
    for (; it != dst.layers.end(); ++it, ++jt) {
        it->second.A = a * it->second.A + b * jt->second.A;
        it->second.B = a * it->second.B + b * jt->second.B;
    }
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json j;
    j["shape"] = {m.rows(), m.cols()};
    std::vector<double> data;
    data.reserve(size_t(m.size()));
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape");
    const int rows = shape.at(0).get<int>();
    const int cols = shape.at(1).get<int>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (int(data.size()) != rows * cols) throw ConfigError("tensor data size mismatch");
    Eigen::MatrixXd m(rows, cols);
    size_t k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[k++];
    return m;
}

}  // namespace

std::string adapter_to_json(const AdapterState& adapter,
                            const std::map<std::string, std::string>& provenance) {
    nlohmann::json j;
    j["format"] = "ttcap-adapter-v1";
    j["metadata"]["rank"] = adapter.rank;
    j["metadata"]["alpha"] = adapter.alpha;
    j["metadata"]["placement"] = placement_name(adapter.placement);
    j["metadata"]["seed"] = adapter.seed;
    if (!provenance.empty()) j["metadata"]["provenance"] = provenance;
    for (const auto& [name, layer] : adapter.layers) {
        j["tensors"][name + ".A"] = matrix_to_json(layer.A);
        j["tensors"][name + ".B"] = matrix_to_json(layer.B);
    }
    return j.dump(2);
}

AdapterState adapter_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("format", "") != "ttcap-adapter-v1")
        throw ConfigError("not a ttcap adapter checkpoint");
    AdapterState adapter;
    adapter.rank = j.at("metadata").at("rank").get<int>();
    adapter.alpha = j.at("metadata").at("alpha").get<double>();
    adapter.placement = placement_from_name(j.at("metadata").at("placement").get<std::string>());
    adapter.seed = j.at("metadata").at("seed").get<long>();
    const auto& tensors = j.at("tensors");
    for (auto it = tensors.begin(); it != tensors.end(); ++it) {
        const std::string key = it.key();
        if (key.size() < 2 || key[key.size() - 2] != '.') throw ConfigError("bad tensor key: " + key);
        const std::string target = key.substr(0, key.size() - 2);
        const char which = key.back();
        LoraLayer& layer = adapter.layers[target];
        layer.target = target;
        layer.rank = adapter.rank;
        layer.alpha = adapter.alpha;
        if (which == 'A')
            layer.A = matrix_from_json(*it);
        else if (which == 'B')
            layer.B = matrix_from_json(*it);
        else
            throw ConfigError("bad tensor key: " + key);
    }
    for (const auto& [name, layer] : adapter.layers)
        if (layer.A.size() == 0 || layer.B.size() == 0)
            throw ConfigError("incomplete tensor pair for target " + name);
    return adapter;
}

void save_adapter(const AdapterState& adapter, const std::string& path,
                  const std::map<std::string, std::string>& provenance) {
    atomic_write_file(path, adapter_to_json(adapter, provenance));
}

AdapterState load_adapter(const std::string& path) { return adapter_from_json(read_file(path)); }

}  // namespace ttcap
