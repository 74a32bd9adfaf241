#pragma once

#include "fairstamp/model.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace fairstamp {

// key ~ N(0, 0.01^2) from `seed`, value = 0, so a new stamp is an exact
// identity on the model it is attached to.
template <typename T = float>
FairnessStamp<T> new_stamp(int layer, int model_dim, int hidden_dim, std::uint64_t seed);

// relu(h key^T) value for one residual-width vector h.
template <typename T>
RowVector<T> apply(const FairnessStamp<T>& stamp, const RowVector<T>& h);

// A frozen base model with one or more stamps on distinct layers. The base is
// shared read-only; only the stamps are mutable.
template <typename T>
class StampedModel : public ProbabilityModel {
public:
    explicit StampedModel(std::shared_ptr<const BasicModel<T>> base);

    // Throws ArgumentError for a layer outside [1, L], ShapeError for a
    // model_dim mismatch and AttachError when the layer already has a stamp.
    void attach(FairnessStamp<T> stamp);
    StampedModel detached() const { return StampedModel(base_); }

    const BasicModel<T>& base() const { return *base_; }
    const std::shared_ptr<const BasicModel<T>>& base_ptr() const { return base_; }
    std::span<const FairnessStamp<T>> stamps() const { return stamps_; }
    std::vector<FairnessStamp<T>>& mutable_stamps() { return stamps_; }

    ModelView<T> view() const { return ModelView<T>{base_.get(), stamps_}; }

    ForwardResult<T> forward(const TokenSeq& input) const;
    double object_prob(const TokenSeq& prompt, const TokenSeq& object) const override;
    std::vector<double> next_token_distribution(const TokenSeq& prompt) const;

    std::uint64_t base_checksum_at_attach() const { return base_checksum_; }
    bool base_unchanged() const { return base_->checksum() == base_checksum_; }
    std::size_t stamp_parameter_count() const;

private:
    std::shared_ptr<const BasicModel<T>> base_;
    std::vector<FairnessStamp<T>> stamps_;
    std::uint64_t base_checksum_ = 0;
};

template <typename T>
StampedModel<T> attach(std::shared_ptr<const BasicModel<T>> base, FairnessStamp<T> stamp);

// Stamp directory: stamp_manifest.json + stamp.bin (key then value, f32 LE).
void save_stamp(const FairnessStamp<float>& stamp, const std::filesystem::path& dir);
FairnessStamp<float> load_stamp(const std::filesystem::path& dir);

}  // namespace fairstamp
