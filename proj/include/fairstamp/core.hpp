#pragma once

// Tensor aliases, model parameters and the raw forward/backward kernels shared
// by the base model, stamped models, tracing and editing.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fairstamp {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

TokenSeq concat(const TokenSeq& a, const TokenSeq& b);

struct ModelConfig {
    int num_layers = 4;
    int model_dim = 64;
    int num_heads = 4;
    int vocab_size = 256;
    int max_seq_len = 32;
    int ffn_hidden_dim = 256;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first violated constraint.
    void validate() const;
    int head_dim() const { return model_dim / num_heads; }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockParams {
    RowVector<T> attn_norm_gain;
    RowVector<T> attn_norm_bias;
    Matrix<T> query;   // d x d
    Matrix<T> key;     // d x d
    Matrix<T> value;   // d x d
    Matrix<T> output;  // d x d
    RowVector<T> ffn_norm_gain;
    RowVector<T> ffn_norm_bias;
    Matrix<T> ffn_in;   // d x ffn_hidden_dim
    Matrix<T> ffn_out;  // ffn_hidden_dim x d
};

template <typename T>
struct ModelParams {
    Matrix<T> token_embedding;     // vocab x d
    Matrix<T> position_embedding;  // max_seq_len x d
    std::vector<BlockParams<T>> blocks;
    RowVector<T> final_norm_gain;
    RowVector<T> final_norm_bias;
    Matrix<T> readout;  // d x vocab
    RowVector<T> readout_bias;

    static ModelParams zeros(const ModelConfig& config);

    // Visits every tensor in a fixed order with a stable dotted name. The
    // order defines checkpoint layout, checksums and optimizer state layout.
    template <typename Fn>
    void for_each(Fn&& fn) {
        visit(*this, fn);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        visit(*this, fn);
    }

private:
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn& fn) {
        fn(std::string("token_embedding"), self.token_embedding);
        fn(std::string("position_embedding"), self.position_embedding);
        for (std::size_t i = 0; i < self.blocks.size(); ++i) {
            auto& b = self.blocks[i];
            const std::string prefix = "blocks." + std::to_string(i) + ".";
            fn(prefix + "attn_norm_gain", b.attn_norm_gain);
            fn(prefix + "attn_norm_bias", b.attn_norm_bias);
            fn(prefix + "query", b.query);
            fn(prefix + "key", b.key);
            fn(prefix + "value", b.value);
            fn(prefix + "output", b.output);
            fn(prefix + "ffn_norm_gain", b.ffn_norm_gain);
            fn(prefix + "ffn_norm_bias", b.ffn_norm_bias);
            fn(prefix + "ffn_in", b.ffn_in);
            fn(prefix + "ffn_out", b.ffn_out);
        }
        fn(std::string("final_norm_gain"), self.final_norm_gain);
        fn(std::string("final_norm_bias"), self.final_norm_bias);
        fn(std::string("readout"), self.readout);
        fn(std::string("readout_bias"), self.readout_bias);
    }
};

// Residual stream after every block: layers[l - 1] holds h^(l) as a
// (sequence length x model_dim) matrix, l = 1..L.
template <typename T>
struct HiddenStates {
    std::vector<Matrix<T>> layers;

    int num_layers() const { return static_cast<int>(layers.size()); }
    int length() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rows()); }
    const Matrix<T>& at(int layer) const { return layers.at(static_cast<std::size_t>(layer - 1)); }
};

// Replaces the residual stream of `layer` (1-based) at each listed position
// before later blocks read it.
template <typename T>
struct Patch {
    int layer = 1;
    std::vector<int> positions;
    std::vector<RowVector<T>> vectors;
};

enum class Activation { relu };

// Adapter added to the FFN output of one block:
//   FFN'(h) = FFN(h) + relu(h key^T) value,   key, value: hidden_dim x d.
template <typename T>
struct FairnessStamp {
    int layer = 1;
    Matrix<T> key;
    Matrix<T> value;
    Activation activation = Activation::relu;

    int hidden_dim() const { return static_cast<int>(key.rows()); }
    int model_dim() const { return static_cast<int>(key.cols()); }
    std::size_t parameter_count() const {
        return static_cast<std::size_t>(key.size() + value.size());
    }
};

template <typename T>
class BasicModel;

// A frozen model plus the stamps active on top of it. Non-owning.
template <typename T>
struct ModelView {
    const BasicModel<T>* model = nullptr;
    std::span<const FairnessStamp<T>> stamps;
};

template <typename T>
struct BlockCache {
    Matrix<T> input;
    Matrix<T> attn_norm_hat;
    std::vector<T> attn_norm_rstd;
    Matrix<T> attn_norm_out;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> attn_probs;  // one (len x len) matrix per head
    Matrix<T> context;
    Matrix<T> attn_out;  // a^(l)
    Matrix<T> mid;
    Matrix<T> ffn_norm_hat;
    std::vector<T> ffn_norm_rstd;
    Matrix<T> ffn_norm_out;  // the h consumed by the FFN and by any stamp
    Matrix<T> ffn_pre;
    Matrix<T> ffn_act;
    Matrix<T> ffn_out;  // m^(l), including the stamp delta
    Matrix<T> stamp_pre;
    Matrix<T> stamp_act;
    Matrix<T> output;  // h^(l) after patching
};

template <typename T>
struct ForwardCache {
    TokenSeq tokens;
    std::vector<BlockCache<T>> blocks;
    Matrix<T> final_hat;
    std::vector<T> final_rstd;
    Matrix<T> final_out;
    Matrix<T> logits;  // len x vocab

    HiddenStates<T> hidden_states() const;
};

// Raw forward pass. Validates tokens, stamps and patches against the model.
template <typename T>
ForwardCache<T> run_forward(const ModelView<T>& view, std::span<const Token> tokens,
                            std::span<const Patch<T>> patches = {});

// Backpropagates dL/dlogits. Gradients are accumulated (+=) into the outputs.
// With base_grads == nullptr the pass stops at the lowest stamped block, so
// only the stamp gradients are produced. stamp_grads, when given, must have
// one entry per stamp in view.stamps with matching shapes.
template <typename T>
void run_backward(const ModelView<T>& view, const ForwardCache<T>& cache,
                  const Matrix<T>& dlogits, ModelParams<T>* base_grads,
                  std::vector<FairnessStamp<T>>* stamp_grads,
                  std::span<const Patch<T>> patches = {});

// Row-wise numerically stable softmax / log-softmax in double precision.
template <typename T>
std::vector<double> softmax_row(const Matrix<T>& logits, int row);
template <typename T>
std::vector<double> log_softmax_row(const Matrix<T>& logits, int row);

}  // namespace fairstamp
