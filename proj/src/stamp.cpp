#include "fairstamp/stamp.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/random.hpp"

#include "tensor_file.hpp"

namespace fairstamp {

template <typename T>
FairnessStamp<T> new_stamp(int layer, int model_dim, int hidden_dim, std::uint64_t seed) {
    if (layer < 1) {
        throw ArgumentError("stamp layer must be >= 1, got " + std::to_string(layer));
    }
    if (model_dim < 1 || hidden_dim < 1) {
        throw ArgumentError("stamp dimensions must be positive");
    }
    FairnessStamp<T> stamp;
    stamp.layer = layer;
    stamp.key.resize(hidden_dim, model_dim);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < stamp.key.size(); ++i) {
        stamp.key.data()[i] = static_cast<T>(0.01 * rng.normal());
    }
    stamp.value = Matrix<T>::Zero(hidden_dim, model_dim);
    return stamp;
}

template <typename T>
RowVector<T> apply(const FairnessStamp<T>& stamp, const RowVector<T>& h) {
    if (h.size() != stamp.model_dim()) {
        throw ShapeError("stamp expects vectors of dimension " + std::to_string(stamp.model_dim()) +
                         ", got " + std::to_string(h.size()));
    }
    const RowVector<T> hidden = (h * stamp.key.transpose()).cwiseMax(T(0));
    return hidden * stamp.value;
}

template <typename T>
StampedModel<T>::StampedModel(std::shared_ptr<const BasicModel<T>> base)
    : base_(std::move(base)) {
    if (!base_) {
        throw ArgumentError("stamped model needs a base model");
    }
    base_checksum_ = base_->checksum();
}

template <typename T>
void StampedModel<T>::attach(FairnessStamp<T> stamp) {
    const ModelConfig& config = base_->config();
    if (stamp.layer < 1 || stamp.layer > config.num_layers) {
        throw ArgumentError("stamp layer " + std::to_string(stamp.layer) + " outside [1, " +
                            std::to_string(config.num_layers) + "]");
    }
    if (stamp.model_dim() != config.model_dim || stamp.value.cols() != config.model_dim ||
        stamp.value.rows() != stamp.key.rows()) {
        throw ShapeError("stamp of width " + std::to_string(stamp.model_dim()) +
                         " cannot attach to a model with model_dim " +
                         std::to_string(config.model_dim));
    }
    for (const auto& s : stamps_) {
        if (s.layer == stamp.layer) {
            throw AttachError("layer " + std::to_string(stamp.layer) + " already has a stamp");
        }
    }
    stamps_.push_back(std::move(stamp));
}

template <typename T>
ForwardResult<T> StampedModel<T>::forward(const TokenSeq& input) const {
    return fairstamp::forward(view(), input);
}

template <typename T>
double StampedModel<T>::object_prob(const TokenSeq& prompt, const TokenSeq& object) const {
    return fairstamp::object_prob<T>(view(), prompt, object);
}

template <typename T>
std::vector<double> StampedModel<T>::next_token_distribution(const TokenSeq& prompt) const {
    return fairstamp::next_token_distribution(view(), prompt);
}

template <typename T>
std::size_t StampedModel<T>::stamp_parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : stamps_) {
        n += s.parameter_count();
    }
    return n;
}

template <typename T>
StampedModel<T> attach(std::shared_ptr<const BasicModel<T>> base, FairnessStamp<T> stamp) {
    StampedModel<T> out(std::move(base));
    out.attach(std::move(stamp));
    return out;
}

namespace {

constexpr int kStampVersion = 1;

detail::TensorRecord record(const std::string& name, const Matrix<float>& m) {
    detail::TensorRecord r;
    r.name = name;
    r.shape = {m.rows(), m.cols()};
    r.values.assign(m.data(), m.data() + m.size());
    return r;
}

}  // namespace

void save_stamp(const FairnessStamp<float>& stamp, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kStampVersion;
    manifest["layer"] = stamp.layer;
    manifest["d"] = stamp.model_dim();
    manifest["d_c"] = stamp.hidden_dim();
    manifest["activation"] = "relu";
    manifest["tensors"] = detail::write_tensor_blob(
        dir / "stamp.bin", {record("K_prime", stamp.key), record("V_prime", stamp.value)});
    detail::write_text_atomic(dir / "stamp_manifest.json", manifest.dump(2) + "\n");
}

FairnessStamp<float> load_stamp(const std::filesystem::path& dir) {
    const nlohmann::json manifest = detail::read_json_file(dir / "stamp_manifest.json");
    FairnessStamp<float> stamp;
    int d = 0;
    int d_c = 0;
    nlohmann::json entries;
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kStampVersion) {
            throw LoadError("unknown stamp format_version " + std::to_string(version));
        }
        stamp.layer = manifest.at("layer").get<int>();
        d = manifest.at("d").get<int>();
        d_c = manifest.at("d_c").get<int>();
        if (manifest.at("activation").get<std::string>() != "relu") {
            throw LoadError("unsupported stamp activation");
        }
        entries = manifest.at("tensors");
    } catch (const nlohmann::json::exception& ex) {
        throw LoadError(std::string("corrupt stamp manifest: ") + ex.what());
    }
    if (d < 1 || d_c < 1 || stamp.layer < 1) {
        throw LoadError("stamp manifest has non-positive dimensions or layer");
    }
    const auto tensors = detail::read_tensor_blob(dir / "stamp.bin", entries);
    const std::vector<std::int64_t> expected{d_c, d};
    if (tensors.size() != 2 || tensors[0].name != "K_prime" || tensors[1].name != "V_prime" ||
        tensors[0].shape != expected || tensors[1].shape != expected) {
        throw LoadError("stamp tensors do not match the declared d_c x d = " +
                        std::to_string(d_c) + " x " + std::to_string(d));
    }
    stamp.key = Eigen::Map<const Matrix<float>>(tensors[0].values.data(), d_c, d);
    stamp.value = Eigen::Map<const Matrix<float>>(tensors[1].values.data(), d_c, d);
    return stamp;
}

#define FAIRSTAMP_INSTANTIATE(T)                                                          \
    template FairnessStamp<T> new_stamp<T>(int, int, int, std::uint64_t);                 \
    template RowVector<T> apply<T>(const FairnessStamp<T>&, const RowVector<T>&);         \
    template class StampedModel<T>;                                                       \
    template StampedModel<T> attach<T>(std::shared_ptr<const BasicModel<T>>, FairnessStamp<T>);

FAIRSTAMP_INSTANTIATE(float)
FAIRSTAMP_INSTANTIATE(double)

#undef FAIRSTAMP_INSTANTIATE

}  // namespace fairstamp
