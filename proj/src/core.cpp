#include "fairstamp/core.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fairstamp {

namespace {

constexpr double kNormEps = 1e-5;

template <typename T>
void layer_norm(const Matrix<T>& x, const RowVector<T>& gain, const RowVector<T>& bias,
                Matrix<T>& hat, std::vector<T>& rstd, Matrix<T>& out) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    hat.resize(rows, cols);
    out.resize(rows, cols);
    rstd.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
        const T mean = x.row(i).mean();
        const T var = (x.row(i).array() - mean).square().mean();
        const T r = T(1) / std::sqrt(var + T(kNormEps));
        rstd[static_cast<std::size_t>(i)] = r;
        hat.row(i) = (x.row(i).array() - mean) * r;
        out.row(i) = hat.row(i).cwiseProduct(gain) + bias;
    }
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dout, const Matrix<T>& hat,
                              const std::vector<T>& rstd, const RowVector<T>& gain,
                              RowVector<T>* dgain, RowVector<T>* dbias) {
    if (dgain != nullptr) {
        *dgain += dout.cwiseProduct(hat).colwise().sum();
        *dbias += dout.colwise().sum();
    }
    Matrix<T> dx(dout.rows(), dout.cols());
    for (Eigen::Index i = 0; i < dout.rows(); ++i) {
        const RowVector<T> dhat = dout.row(i).cwiseProduct(gain);
        const T mean_dhat = dhat.mean();
        const T mean_dhat_hat = dhat.cwiseProduct(hat.row(i)).mean();
        dx.row(i) = (dhat.array() - mean_dhat - hat.row(i).array() * mean_dhat_hat) *
                    rstd[static_cast<std::size_t>(i)];
    }
    return dx;
}

template <typename T>
T gelu(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T t = std::tanh(c * (x + T(0.044715) * x * x * x));
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
const FairnessStamp<T>* stamp_at(std::span<const FairnessStamp<T>> stamps, int layer) {
    for (const auto& s : stamps) {
        if (s.layer == layer) {
            return &s;
        }
    }
    return nullptr;
}

template <typename T>
void validate_view(const ModelView<T>& view) {
    if (view.model == nullptr) {
        throw ArgumentError("model view has no model");
    }
    const ModelConfig& config = view.model->config();
    for (std::size_t i = 0; i < view.stamps.size(); ++i) {
        const auto& s = view.stamps[i];
        if (s.layer < 1 || s.layer > config.num_layers) {
            throw ShapeError("stamp layer " + std::to_string(s.layer) + " outside [1, " +
                             std::to_string(config.num_layers) + "]");
        }
        if (s.key.cols() != config.model_dim || s.value.cols() != config.model_dim ||
            s.key.rows() != s.value.rows() || s.key.rows() < 1) {
            throw ShapeError("stamp at layer " + std::to_string(s.layer) +
                             " does not match model_dim " + std::to_string(config.model_dim));
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (view.stamps[j].layer == s.layer) {
                throw AttachError("two stamps at layer " + std::to_string(s.layer));
            }
        }
    }
}

template <typename T>
void validate_patches(const ModelConfig& config, std::span<const Patch<T>> patches, int length) {
    for (const auto& p : patches) {
        if (p.layer < 1 || p.layer > config.num_layers) {
            throw PatchError("patch layer " + std::to_string(p.layer) + " outside [1, " +
                             std::to_string(config.num_layers) + "]");
        }
        if (p.positions.empty()) {
            throw PatchError("patch at layer " + std::to_string(p.layer) + " has no positions");
        }
        if (p.positions.size() != p.vectors.size()) {
            throw PatchError("patch at layer " + std::to_string(p.layer) +
                             " needs one vector per position");
        }
        for (std::size_t i = 0; i < p.positions.size(); ++i) {
            if (p.positions[i] < 0 || p.positions[i] >= length) {
                throw PatchError("patch position " + std::to_string(p.positions[i]) +
                                 " outside input of length " + std::to_string(length));
            }
            if (p.vectors[i].size() != config.model_dim) {
                throw PatchError("patch vector has dimension " + std::to_string(p.vectors[i].size()));
            }
        }
    }
}

}  // namespace

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
    TokenSeq out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError(what);
        }
    };
    require(num_layers > 0, "num_layers must be positive");
    require(model_dim > 0, "model_dim must be positive");
    require(num_heads > 0, "num_heads must be positive");
    require(model_dim % num_heads == 0, "model_dim " + std::to_string(model_dim) +
                                            " is not divisible by num_heads " +
                                            std::to_string(num_heads));
    require(vocab_size > 0, "vocab_size must be positive");
    require(max_seq_len >= 4, "max_seq_len must be at least 4");
    require(ffn_hidden_dim > 0, "ffn_hidden_dim must be positive");
}

void validate_tokens(const ModelConfig& config, std::span<const Token> tokens) {
    if (tokens.empty()) {
        throw ArgumentError("empty token sequence");
    }
    if (static_cast<int>(tokens.size()) > config.max_seq_len) {
        throw LengthError("sequence of length " + std::to_string(tokens.size()) +
                          " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    for (const Token t : tokens) {
        if (t < 0 || t >= config.vocab_size) {
            throw ArgumentError("token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
    const int d = config.model_dim;
    const int f = config.ffn_hidden_dim;
    ModelParams<T> p;
    p.token_embedding = Matrix<T>::Zero(config.vocab_size, d);
    p.position_embedding = Matrix<T>::Zero(config.max_seq_len, d);
    p.blocks.resize(static_cast<std::size_t>(config.num_layers));
    for (auto& b : p.blocks) {
        b.attn_norm_gain = RowVector<T>::Zero(d);
        b.attn_norm_bias = RowVector<T>::Zero(d);
        b.query = Matrix<T>::Zero(d, d);
        b.key = Matrix<T>::Zero(d, d);
        b.value = Matrix<T>::Zero(d, d);
        b.output = Matrix<T>::Zero(d, d);
        b.ffn_norm_gain = RowVector<T>::Zero(d);
        b.ffn_norm_bias = RowVector<T>::Zero(d);
        b.ffn_in = Matrix<T>::Zero(d, f);
        b.ffn_out = Matrix<T>::Zero(f, d);
    }
    p.final_norm_gain = RowVector<T>::Zero(d);
    p.final_norm_bias = RowVector<T>::Zero(d);
    p.readout = Matrix<T>::Zero(d, config.vocab_size);
    p.readout_bias = RowVector<T>::Zero(config.vocab_size);
    return p;
}

template <typename T>
HiddenStates<T> ForwardCache<T>::hidden_states() const {
    HiddenStates<T> h;
    h.layers.reserve(blocks.size());
    for (const auto& b : blocks) {
        h.layers.push_back(b.output);
    }
    return h;
}

template <typename T>
ForwardCache<T> run_forward(const ModelView<T>& view, std::span<const Token> tokens,
                            std::span<const Patch<T>> patches) {
    validate_view(view);
    const ModelConfig& config = view.model->config();
    const ModelParams<T>& params = view.model->params();
    validate_tokens(config, tokens);
    const int len = static_cast<int>(tokens.size());
    validate_patches(config, patches, len);

    const int d = config.model_dim;
    const int heads = config.num_heads;
    const int hd = config.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    ForwardCache<T> cache;
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.blocks.resize(static_cast<std::size_t>(config.num_layers));

    Matrix<T> resid(len, d);
    for (int i = 0; i < len; ++i) {
        resid.row(i) = params.token_embedding.row(tokens[static_cast<std::size_t>(i)]) +
                       params.position_embedding.row(i);
    }

    for (int l = 0; l < config.num_layers; ++l) {
        const auto& bp = params.blocks[static_cast<std::size_t>(l)];
        auto& bc = cache.blocks[static_cast<std::size_t>(l)];
        bc.input = resid;

        layer_norm(bc.input, bp.attn_norm_gain, bp.attn_norm_bias, bc.attn_norm_hat,
                   bc.attn_norm_rstd, bc.attn_norm_out);
        bc.q.noalias() = bc.attn_norm_out * bp.query;
        bc.k.noalias() = bc.attn_norm_out * bp.key;
        bc.v.noalias() = bc.attn_norm_out * bp.value;

        bc.context.resize(len, d);
        bc.attn_probs.resize(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const auto qh = bc.q.middleCols(h * hd, hd);
            const auto kh = bc.k.middleCols(h * hd, hd);
            const auto vh = bc.v.middleCols(h * hd, hd);
            Matrix<T> scores = (qh * kh.transpose()) * scale;
            Matrix<T>& probs = bc.attn_probs[static_cast<std::size_t>(h)];
            probs = Matrix<T>::Zero(len, len);
            for (int i = 0; i < len; ++i) {
                const T mx = scores.row(i).head(i + 1).maxCoeff();
                T total = 0;
                for (int j = 0; j <= i; ++j) {
                    const T e = std::exp(scores(i, j) - mx);
                    probs(i, j) = e;
                    total += e;
                }
                probs.row(i).head(i + 1) /= total;
            }
            bc.context.middleCols(h * hd, hd).noalias() = probs * vh;
        }
        bc.attn_out.noalias() = bc.context * bp.output;
        bc.mid = bc.input + bc.attn_out;

        layer_norm(bc.mid, bp.ffn_norm_gain, bp.ffn_norm_bias, bc.ffn_norm_hat, bc.ffn_norm_rstd,
                   bc.ffn_norm_out);
        bc.ffn_pre.noalias() = bc.ffn_norm_out * bp.ffn_in;
        bc.ffn_act = bc.ffn_pre.unaryExpr([](T x) { return gelu(x); });
        bc.ffn_out.noalias() = bc.ffn_act * bp.ffn_out;

        if (const auto* stamp = stamp_at(view.stamps, l + 1)) {
            bc.stamp_pre.noalias() = bc.ffn_norm_out * stamp->key.transpose();
            bc.stamp_act = bc.stamp_pre.cwiseMax(T(0));
            bc.ffn_out.noalias() += bc.stamp_act * stamp->value;
        }

        resid = bc.mid + bc.ffn_out;
        for (const auto& p : patches) {
            if (p.layer != l + 1) {
                continue;
            }
            for (std::size_t i = 0; i < p.positions.size(); ++i) {
                resid.row(p.positions[i]) = p.vectors[i];
            }
        }
        bc.output = resid;
    }

    layer_norm(resid, params.final_norm_gain, params.final_norm_bias, cache.final_hat,
               cache.final_rstd, cache.final_out);
    cache.logits.noalias() = cache.final_out * params.readout;
    cache.logits.rowwise() += params.readout_bias;
    return cache;
}

template <typename T>
void run_backward(const ModelView<T>& view, const ForwardCache<T>& cache, const Matrix<T>& dlogits,
                  ModelParams<T>* base_grads, std::vector<FairnessStamp<T>>* stamp_grads,
                  std::span<const Patch<T>> patches) {
    const ModelConfig& config = view.model->config();
    const ModelParams<T>& params = view.model->params();
    const int len = static_cast<int>(cache.tokens.size());
    const int heads = config.num_heads;
    const int hd = config.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    if (stamp_grads != nullptr && stamp_grads->size() != view.stamps.size()) {
        throw ShapeError("stamp gradient list does not match the stamps");
    }

    // Lowest block whose parameters (or stamp) need a gradient.
    int stop = 0;
    if (base_grads == nullptr) {
        if (view.stamps.empty() || stamp_grads == nullptr) {
            return;
        }
        stop = config.num_layers;
        for (const auto& s : view.stamps) {
            stop = std::min(stop, s.layer - 1);
        }
    }

    Matrix<T> dfinal = dlogits * params.readout.transpose();
    if (base_grads != nullptr) {
        base_grads->readout.noalias() += cache.final_out.transpose() * dlogits;
        base_grads->readout_bias += dlogits.colwise().sum();
    }
    Matrix<T> dresid = layer_norm_backward(
        dfinal, cache.final_hat, cache.final_rstd, params.final_norm_gain,
        base_grads ? &base_grads->final_norm_gain : nullptr,
        base_grads ? &base_grads->final_norm_bias : nullptr);

    for (int l = config.num_layers - 1; l >= stop; --l) {
        const auto& bp = params.blocks[static_cast<std::size_t>(l)];
        const auto& bc = cache.blocks[static_cast<std::size_t>(l)];
        BlockParams<T>* bg = base_grads ? &base_grads->blocks[static_cast<std::size_t>(l)] : nullptr;

        // Patched rows are constants: nothing flows back through them.
        for (const auto& p : patches) {
            if (p.layer == l + 1) {
                for (const int pos : p.positions) {
                    dresid.row(pos).setZero();
                }
            }
        }

        const Matrix<T>& dffn_out = dresid;
        Matrix<T> dffn_norm_out = Matrix<T>::Zero(len, config.model_dim);

        for (std::size_t s = 0; s < view.stamps.size(); ++s) {
            const auto& stamp = view.stamps[s];
            if (stamp.layer != l + 1) {
                continue;
            }
            Matrix<T> dact = dffn_out * stamp.value.transpose();
            Matrix<T> dpre = dact.cwiseProduct(
                bc.stamp_pre.unaryExpr([](T x) { return x > T(0) ? T(1) : T(0); }));
            if (stamp_grads != nullptr) {
                auto& g = (*stamp_grads)[s];
                g.value.noalias() += bc.stamp_act.transpose() * dffn_out;
                g.key.noalias() += dpre.transpose() * bc.ffn_norm_out;
            }
            dffn_norm_out.noalias() += dpre * stamp.key;
        }
        if (base_grads == nullptr && l == stop) {
            break;
        }

        Matrix<T> dact = dffn_out * bp.ffn_out.transpose();
        Matrix<T> dpre = dact.cwiseProduct(bc.ffn_pre.unaryExpr([](T x) { return gelu_grad(x); }));
        if (bg != nullptr) {
            bg->ffn_out.noalias() += bc.ffn_act.transpose() * dffn_out;
            bg->ffn_in.noalias() += bc.ffn_norm_out.transpose() * dpre;
        }
        dffn_norm_out.noalias() += dpre * bp.ffn_in.transpose();

        Matrix<T> dmid = dresid + layer_norm_backward(dffn_norm_out, bc.ffn_norm_hat,
                                                      bc.ffn_norm_rstd, bp.ffn_norm_gain,
                                                      bg ? &bg->ffn_norm_gain : nullptr,
                                                      bg ? &bg->ffn_norm_bias : nullptr);

        const Matrix<T>& dattn_out = dmid;
        Matrix<T> dcontext = dattn_out * bp.output.transpose();
        if (bg != nullptr) {
            bg->output.noalias() += bc.context.transpose() * dattn_out;
        }

        Matrix<T> dq(len, config.model_dim);
        Matrix<T> dk(len, config.model_dim);
        Matrix<T> dv(len, config.model_dim);
        for (int h = 0; h < heads; ++h) {
            const Matrix<T>& probs = bc.attn_probs[static_cast<std::size_t>(h)];
            const auto dctx_h = dcontext.middleCols(h * hd, hd);
            Matrix<T> dprobs = dctx_h * bc.v.middleCols(h * hd, hd).transpose();
            dv.middleCols(h * hd, hd).noalias() = probs.transpose() * dctx_h;
            Matrix<T> dscores(len, len);
            for (int i = 0; i < len; ++i) {
                const T dot = probs.row(i).dot(dprobs.row(i));
                dscores.row(i) = probs.row(i).cwiseProduct(
                    (dprobs.row(i).array() - dot).matrix());
            }
            dscores *= scale;
            dq.middleCols(h * hd, hd).noalias() = dscores * bc.k.middleCols(h * hd, hd);
            dk.middleCols(h * hd, hd).noalias() = dscores.transpose() * bc.q.middleCols(h * hd, hd);
        }
        if (bg != nullptr) {
            bg->query.noalias() += bc.attn_norm_out.transpose() * dq;
            bg->key.noalias() += bc.attn_norm_out.transpose() * dk;
            bg->value.noalias() += bc.attn_norm_out.transpose() * dv;
        }
        Matrix<T> dnorm = dq * bp.query.transpose();
        dnorm.noalias() += dk * bp.key.transpose();
        dnorm.noalias() += dv * bp.value.transpose();

        dresid = dmid + layer_norm_backward(dnorm, bc.attn_norm_hat, bc.attn_norm_rstd,
                                            bp.attn_norm_gain,
                                            bg ? &bg->attn_norm_gain : nullptr,
                                            bg ? &bg->attn_norm_bias : nullptr);
    }

    if (base_grads != nullptr) {
        for (int i = 0; i < len; ++i) {
            base_grads->token_embedding.row(cache.tokens[static_cast<std::size_t>(i)]) +=
                dresid.row(i);
            base_grads->position_embedding.row(i) += dresid.row(i);
        }
    }
}

template <typename T>
std::vector<double> log_softmax_row(const Matrix<T>& logits, int row) {
    const Eigen::Index n = logits.cols();
    std::vector<double> out(static_cast<std::size_t>(n));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
        mx = std::max(mx, static_cast<double>(logits(row, j)));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        total += std::exp(static_cast<double>(logits(row, j)) - mx);
    }
    const double log_total = mx + std::log(total);
    for (Eigen::Index j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(j)] = static_cast<double>(logits(row, j)) - log_total;
    }
    return out;
}

template <typename T>
std::vector<double> softmax_row(const Matrix<T>& logits, int row) {
    std::vector<double> out = log_softmax_row(logits, row);
    for (double& v : out) {
        v = std::exp(v);
    }
    return out;
}

#define FAIRSTAMP_INSTANTIATE(T)                                                              \
    template struct ModelParams<T>;                                                           \
    template struct ForwardCache<T>;                                                          \
    template ForwardCache<T> run_forward<T>(const ModelView<T>&, std::span<const Token>,      \
                                            std::span<const Patch<T>>);                      \
    template void run_backward<T>(const ModelView<T>&, const ForwardCache<T>&,                \
                                  const Matrix<T>&, ModelParams<T>*,                          \
                                  std::vector<FairnessStamp<T>>*, std::span<const Patch<T>>); \
    template std::vector<double> log_softmax_row<T>(const Matrix<T>&, int);                   \
    template std::vector<double> softmax_row<T>(const Matrix<T>&, int);

FAIRSTAMP_INSTANTIATE(float)
FAIRSTAMP_INSTANTIATE(double)

#undef FAIRSTAMP_INSTANTIATE

}  // namespace fairstamp
