#include "fairstamp/errors.hpp"
#include "fairstamp/model.hpp"

#include "tensor_file.hpp"

namespace fairstamp {

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"num_layers", c.num_layers},         {"model_dim", c.model_dim},
            {"num_heads", c.num_heads},           {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len},       {"ffn_hidden_dim", c.ffn_hidden_dim},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.ffn_hidden_dim = j.at("ffn_hidden_dim").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

template <typename Tensor>
std::vector<std::int64_t> shape_of(const Tensor& t) {
    if constexpr (Tensor::RowsAtCompileTime == 1) {
        return {static_cast<std::int64_t>(t.cols())};
    } else {
        return {static_cast<std::int64_t>(t.rows()), static_cast<std::int64_t>(t.cols())};
    }
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<detail::TensorRecord> tensors;
    model.params().for_each([&](const std::string& name, const auto& t) {
        detail::TensorRecord r;
        r.name = name;
        r.shape = shape_of(t);
        r.values.assign(t.data(), t.data() + t.size());
        tensors.push_back(std::move(r));
    });
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"] = config_to_json(model.config());
    manifest["parameters"] = detail::write_tensor_blob(dir / "weights.bin", tensors);
    detail::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path& dir) {
    const nlohmann::json manifest = detail::read_json_file(dir / "manifest.json");
    ModelConfig config;
    nlohmann::json entries;
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw LoadError("unknown checkpoint format_version " + std::to_string(version));
        }
        config = config_from_json(manifest.at("config"));
        entries = manifest.at("parameters");
    } catch (const nlohmann::json::exception& ex) {
        throw LoadError(std::string("corrupt checkpoint manifest: ") + ex.what());
    }
    try {
        config.validate();
    } catch (const ConfigError& ex) {
        throw LoadError(std::string("checkpoint config invalid: ") + ex.what());
    }

    const auto tensors = detail::read_tensor_blob(dir / "weights.bin", entries);
    ModelParams<float> params = ModelParams<float>::zeros(config);
    std::size_t i = 0;
    params.for_each([&](const std::string& name, auto& t) {
        if (i >= tensors.size()) {
            throw LoadError("checkpoint is missing parameter " + name);
        }
        const auto& rec = tensors[i++];
        if (rec.name != name) {
            throw LoadError("expected parameter " + name + ", found " + rec.name);
        }
        if (rec.shape != shape_of(t)) {
            throw LoadError("parameter " + name + " has a shape that does not match the config");
        }
        std::copy(rec.values.begin(), rec.values.end(), t.data());
    });
    if (i != tensors.size()) {
        throw LoadError("checkpoint has unexpected extra parameters");
    }
    return Model(config, std::move(params));
}

}  // namespace fairstamp
