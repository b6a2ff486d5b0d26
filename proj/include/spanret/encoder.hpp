#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hash.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t max_seq_len = 128;
    double dropout = 0.1;
    double init_std = 0.02;

    void validate() const
    {
        if (vocab_size <= Vocabulary::reserved_count) {
            throw Error(ErrorKind::invalid_argument, "encoder: vocab_size must exceed the reserved tokens");
        }
        if (dim == 0 || heads == 0 || dim % heads != 0) {
            throw Error(ErrorKind::invalid_argument, "encoder: dim must be a positive multiple of heads");
        }
        if (layers == 0 || ffn_dim == 0 || max_seq_len < 2) {
            throw Error(ErrorKind::invalid_argument, "encoder: layers, ffn_dim and max_seq_len >= 2 required");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw Error(ErrorKind::invalid_argument, "encoder: dropout must lie in [0, 1)");
        }
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ParamTensor {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::size_t size() const { return rows * cols; }
};

/// Flat parameter layout. Tensor order is the declared (and serialized)
/// order; the index fields give direct access without name lookups.
class ParamLayout {
   public:
    struct Layer {
        std::size_t attn_gain, attn_bias;
        std::size_t query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
        std::size_t ffn_gain, ffn_bias;
        std::size_t inner_w, inner_b, outer_w, outer_b;
    };

    explicit ParamLayout(const EncoderConfig& c)
    {
        token_embedding = add("token_embedding", c.vocab_size, c.dim);
        position_embedding = add("position_embedding", c.max_seq_len, c.dim);
        for (std::size_t l = 0; l < c.layers; ++l) {
            auto p = "layer" + std::to_string(l) + ".";
            Layer layer{};
            layer.attn_gain = add(p + "attn_norm.gain", 1, c.dim);
            layer.attn_bias = add(p + "attn_norm.bias", 1, c.dim);
            layer.query_w = add(p + "attn.query.weight", c.dim, c.dim);
            layer.query_b = add(p + "attn.query.bias", 1, c.dim);
            layer.key_w = add(p + "attn.key.weight", c.dim, c.dim);
            layer.key_b = add(p + "attn.key.bias", 1, c.dim);
            layer.value_w = add(p + "attn.value.weight", c.dim, c.dim);
            layer.value_b = add(p + "attn.value.bias", 1, c.dim);
            layer.out_w = add(p + "attn.output.weight", c.dim, c.dim);
            layer.out_b = add(p + "attn.output.bias", 1, c.dim);
            layer.ffn_gain = add(p + "ffn_norm.gain", 1, c.dim);
            layer.ffn_bias = add(p + "ffn_norm.bias", 1, c.dim);
            layer.inner_w = add(p + "ffn.inner.weight", c.dim, c.ffn_dim);
            layer.inner_b = add(p + "ffn.inner.bias", 1, c.ffn_dim);
            layer.outer_w = add(p + "ffn.outer.weight", c.ffn_dim, c.dim);
            layer.outer_b = add(p + "ffn.outer.bias", 1, c.dim);
            layers.push_back(layer);
        }
    }

    [[nodiscard]] const std::vector<ParamTensor>& tensors() const { return tensors_; }
    [[nodiscard]] const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }
    [[nodiscard]] std::size_t total() const { return total_; }

    std::size_t token_embedding = 0;
    std::size_t position_embedding = 0;
    std::vector<Layer> layers;

   private:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols)
    {
        tensors_.push_back({std::move(name), total_, rows, cols});
        total_ += rows * cols;
        return tensors_.size() - 1;
    }

    std::vector<ParamTensor> tensors_;
    std::size_t total_ = 0;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Shared-weight transformer encoder (pre-norm blocks, no final norm).
/// The same parameters encode queries and passages.
template <typename T>
class EncoderModel {
   public:
    EncoderModel(EncoderConfig config, std::uint64_t seed) : config_(validated(config)), layout_(config_)
    {
        params_.assign(layout_.total(), T(0));
        Rng rng(seed);
        for (auto const& t : layout_.tensors()) {
            bool const is_gain = t.name.ends_with(".gain");
            bool const is_bias = t.name.ends_with(".bias");
            for (std::size_t i = 0; i < t.size(); ++i) {
                T v = T(0);
                if (is_gain) {
                    v = T(1);
                } else if (!is_bias) {
                    v = static_cast<T>(rng.normal() * config_.init_std);
                }
                params_[t.offset + i] = v;
            }
        }
    }

    EncoderModel(EncoderConfig config, std::vector<T> params)
        : config_(validated(config)), layout_(config_), params_(std::move(params))
    {
        if (params_.size() != layout_.total()) {
            throw Error(ErrorKind::malformed_input, "encoder: parameter count does not match the configuration");
        }
    }

    [[nodiscard]] const EncoderConfig& config() const { return config_; }
    [[nodiscard]] const ParamLayout& layout() const { return layout_; }
    [[nodiscard]] std::span<T> parameters() { return params_; }
    [[nodiscard]] std::span<const T> parameters() const { return params_; }

    [[nodiscard]] Eigen::Map<const Mat<T>> tensor(std::size_t index) const
    {
        auto const& t = layout_[index];
        return {params_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
    }

    [[nodiscard]] Eigen::Map<const RowVec<T>> vector(std::size_t index) const
    {
        auto const& t = layout_[index];
        return {params_.data() + t.offset, static_cast<Eigen::Index>(t.size())};
    }

    [[nodiscard]] bool all_finite() const
    {
        for (auto v : params_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    /// Identifies the exact weights; dense indexes record it.
    [[nodiscard]] std::string fingerprint() const
    {
        Fnv1a64 h;
        for (auto v : {config_.vocab_size, config_.dim, config_.layers, config_.heads, config_.ffn_dim,
                       config_.max_seq_len}) {
            h.update_value(static_cast<std::uint64_t>(v));
        }
        h.update_value(static_cast<std::uint32_t>(sizeof(T)));
        h.update(params_.data(), params_.size() * sizeof(T));
        return h.hex();
    }

   private:
    static EncoderConfig validated(EncoderConfig c)
    {
        c.validate();
        return c;
    }

    EncoderConfig config_;
    ParamLayout layout_;
    std::vector<T> params_;
};

/// Dropout masks for one sequence. Every site draws from a counter stream
/// keyed by (key, layer, site), so masks do not depend on evaluation order.
struct DropoutStream {
    double rate = 0.0;
    std::uint64_t key = 0;

    [[nodiscard]] bool active() const { return rate > 0.0; }
};

namespace detail {

template <typename T>
struct NormCache {
    Mat<T> xhat;
    ColVec<T> rstd;
};

template <typename T>
struct LayerCache {
    NormCache<T> norm1;
    Mat<T> u1, q, k, v;
    std::vector<Mat<T>> probs;
    std::vector<Mat<T>> prob_masks;
    Mat<T> o;
    Mat<T> attn_mask;
    NormCache<T> norm2;
    Mat<T> u2, z, g;
    Mat<T> ffn_mask;
};

inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Eigen::Map<const RowVec<T>>& gain, const Eigen::Map<const RowVec<T>>& bias,
                  NormCache<T>& cache)
{
    ColVec<T> const mean = x.rowwise().mean();
    Mat<T> centered = x.colwise() - mean;
    ColVec<T> const var = centered.array().square().rowwise().mean().matrix();
    cache.rstd = (var.array() + T(kNormEpsilon)).rsqrt().matrix();
    cache.xhat = (centered.array().colwise() * cache.rstd.array()).matrix();
    return ((cache.xhat.array().rowwise() * gain.array()).rowwise() + bias.array()).matrix();
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const NormCache<T>& cache, const Eigen::Map<const RowVec<T>>& gain,
                           T* grad_gain, T* grad_bias)
{
    auto const d = dy.cols();
    Eigen::Map<RowVec<T>>(grad_gain, d) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    Eigen::Map<RowVec<T>>(grad_bias, d) += dy.colwise().sum();
    Mat<T> const dxhat = (dy.array().rowwise() * gain.array()).matrix();
    ColVec<T> const mean_dxhat = dxhat.rowwise().mean();
    ColVec<T> const mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean().matrix();
    Mat<T> dx = dxhat.colwise() - mean_dxhat;
    dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
    return (dx.array().colwise() * cache.rstd.array()).matrix();
}

template <typename T>
T gelu(T x)
{
    return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x)
{
    T const cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    T const pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

/// Inverted-dropout mask with the given shape; entries are 0 or 1/(1-rate).
template <typename T>
Mat<T> dropout_mask(const DropoutStream& stream, std::uint64_t site, Eigen::Index rows, Eigen::Index cols)
{
    CounterRng rng(derive_seed(stream.key, {site}));
    Mat<T> mask(rows, cols);
    T const keep = T(1) / T(1 - stream.rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.uniform01(static_cast<std::uint64_t>(i)) < stream.rate ? T(0) : keep;
    }
    return mask;
}

template <typename T>
void softmax_rows(Mat<T>& s)
{
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        T const mx = row.maxCoeff();
        row = (row.array() - mx).exp().matrix();
        row /= row.sum();
    }
}

} // namespace detail

/// Activations kept from a forward pass for the backward pass.
template <typename T>
struct SequenceCache {
    std::vector<TokenId> ids;
    std::vector<std::size_t> positions;
    Mat<T> embed_mask;
    std::vector<detail::LayerCache<T>> layers;
};

/// Encodes one prepared input (ids[0] is [CLS]) and returns the final hidden
/// state at the [CLS] row. `positions[i]` is the position-embedding row of
/// ids[i]. Ids outside the vocabulary are replaced by [UNK] and counted.
template <typename T>
RowVec<T> forward_sequence(const EncoderModel<T>& model, std::span<const TokenId> ids,
                           std::span<const std::size_t> positions, const DropoutStream* dropout,
                           SequenceCache<T>* cache, std::size_t* unknown = nullptr)
{
    auto const& cfg = model.config();
    auto const& layout = model.layout();
    auto const len = static_cast<Eigen::Index>(ids.size());
    auto const dim = static_cast<Eigen::Index>(cfg.dim);
    auto const heads = static_cast<Eigen::Index>(cfg.heads);
    auto const head_dim = dim / heads;
    T const scale = T(1) / std::sqrt(T(head_dim));
    bool const drop = dropout != nullptr && dropout->active();

    if (ids.empty() || ids.size() != positions.size()) {
        throw Error(ErrorKind::invalid_argument, "encoder: ids and positions must be non-empty and aligned");
    }

    std::vector<TokenId> safe_ids(ids.begin(), ids.end());
    for (auto& id : safe_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            id = Vocabulary::unk;
            if (unknown != nullptr) {
                ++*unknown;
            }
        }
    }

    auto const tok = model.tensor(layout.token_embedding);
    auto const pos = model.tensor(layout.position_embedding);
    Mat<T> x(len, dim);
    for (Eigen::Index t = 0; t < len; ++t) {
        auto const p = positions[static_cast<std::size_t>(t)];
        if (p >= cfg.max_seq_len) {
            throw Error(ErrorKind::invalid_argument, "encoder: position beyond max_seq_len");
        }
        x.row(t) = tok.row(safe_ids[static_cast<std::size_t>(t)]) + pos.row(static_cast<Eigen::Index>(p));
    }
    std::uint64_t site = 0;
    if (drop) {
        Mat<T> mask = detail::dropout_mask<T>(*dropout, site, len, dim);
        x.array() *= mask.array();
        if (cache != nullptr) {
            cache->embed_mask = std::move(mask);
        }
    }
    ++site;
    if (cache != nullptr) {
        cache->ids = std::move(safe_ids);
        cache->positions.assign(positions.begin(), positions.end());
        cache->layers.assign(cfg.layers, {});
    }

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto const& P = layout.layers[l];
        detail::LayerCache<T> local;
        auto& c = cache != nullptr ? cache->layers[l] : local;

        c.u1 = detail::layer_norm<T>(x, model.vector(P.attn_gain), model.vector(P.attn_bias), c.norm1);
        c.q = (c.u1 * model.tensor(P.query_w)).rowwise() + model.vector(P.query_b);
        c.k = (c.u1 * model.tensor(P.key_w)).rowwise() + model.vector(P.key_b);
        c.v = (c.u1 * model.tensor(P.value_w)).rowwise() + model.vector(P.value_b);

        c.o.resize(len, dim);
        c.probs.resize(static_cast<std::size_t>(heads));
        c.prob_masks.resize(drop ? static_cast<std::size_t>(heads) : 0);
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto& probs = c.probs[static_cast<std::size_t>(h)];
            probs = c.q.middleCols(h * head_dim, head_dim) * c.k.middleCols(h * head_dim, head_dim).transpose();
            probs *= scale;
            detail::softmax_rows(probs);
            if (drop) {
                auto& mask = c.prob_masks[static_cast<std::size_t>(h)];
                mask = detail::dropout_mask<T>(*dropout, site, len, len);
                c.o.middleCols(h * head_dim, head_dim) =
                    (probs.array() * mask.array()).matrix() * c.v.middleCols(h * head_dim, head_dim);
            } else {
                c.o.middleCols(h * head_dim, head_dim) = probs * c.v.middleCols(h * head_dim, head_dim);
            }
            ++site;
        }
        Mat<T> a = (c.o * model.tensor(P.out_w)).rowwise() + model.vector(P.out_b);
        if (drop) {
            c.attn_mask = detail::dropout_mask<T>(*dropout, site, len, dim);
            a.array() *= c.attn_mask.array();
        }
        ++site;
        x += a;

        c.u2 = detail::layer_norm<T>(x, model.vector(P.ffn_gain), model.vector(P.ffn_bias), c.norm2);
        c.z = (c.u2 * model.tensor(P.inner_w)).rowwise() + model.vector(P.inner_b);
        c.g = c.z.unaryExpr([](T v) { return detail::gelu(v); });
        Mat<T> f = (c.g * model.tensor(P.outer_w)).rowwise() + model.vector(P.outer_b);
        if (drop) {
            c.ffn_mask = detail::dropout_mask<T>(*dropout, site, len, dim);
            f.array() *= c.ffn_mask.array();
        }
        ++site;
        x += f;
    }
    return x.row(0);
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(cls output).
template <typename T>
void backward_sequence(const EncoderModel<T>& model, const SequenceCache<T>& cache,
                       const Eigen::Ref<const RowVec<T>>& d_cls, std::span<T> grad)
{
    auto const& cfg = model.config();
    auto const& layout = model.layout();
    auto const len = static_cast<Eigen::Index>(cache.ids.size());
    auto const dim = static_cast<Eigen::Index>(cfg.dim);
    auto const heads = static_cast<Eigen::Index>(cfg.heads);
    auto const head_dim = dim / heads;
    T const scale = T(1) / std::sqrt(T(head_dim));

    auto gmat = [&](std::size_t index) {
        auto const& t = layout[index];
        return Eigen::Map<Mat<T>>(grad.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                                  static_cast<Eigen::Index>(t.cols));
    };
    auto gvec = [&](std::size_t index) {
        auto const& t = layout[index];
        return Eigen::Map<RowVec<T>>(grad.data() + t.offset, static_cast<Eigen::Index>(t.size()));
    };
    auto gptr = [&](std::size_t index) { return grad.data() + layout[index].offset; };

    Mat<T> dx = Mat<T>::Zero(len, dim);
    dx.row(0) = d_cls;

    for (std::size_t li = cfg.layers; li-- > 0;) {
        auto const& P = layout.layers[li];
        auto const& c = cache.layers[li];

        // Feed-forward sublayer: x_out = h + drop(gelu(u2 W1 + b1) W2 + b2).
        Mat<T> df = dx;
        if (c.ffn_mask.size() > 0) {
            df.array() *= c.ffn_mask.array();
        }
        gvec(P.outer_b) += df.colwise().sum();
        gmat(P.outer_w).noalias() += c.g.transpose() * df;
        Mat<T> dz = df * model.tensor(P.outer_w).transpose();
        dz.array() *= c.z.unaryExpr([](T v) { return detail::gelu_grad(v); }).array();
        gvec(P.inner_b) += dz.colwise().sum();
        gmat(P.inner_w).noalias() += c.u2.transpose() * dz;
        Mat<T> const du2 = dz * model.tensor(P.inner_w).transpose();
        dx += detail::layer_norm_backward<T>(du2, c.norm2, model.vector(P.ffn_gain), gptr(P.ffn_gain),
                                             gptr(P.ffn_bias));

        // Attention sublayer: h = x + drop(attn(u1) Wo + bo).
        Mat<T> da = dx;
        if (c.attn_mask.size() > 0) {
            da.array() *= c.attn_mask.array();
        }
        gvec(P.out_b) += da.colwise().sum();
        gmat(P.out_w).noalias() += c.o.transpose() * da;
        Mat<T> const d_o = da * model.tensor(P.out_w).transpose();

        Mat<T> dq(len, dim);
        Mat<T> dk(len, dim);
        Mat<T> dv(len, dim);
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto const hs = static_cast<std::size_t>(h);
            auto const& probs = c.probs[hs];
            auto const d_oh = d_o.middleCols(h * head_dim, head_dim);
            Mat<T> dp = d_oh * c.v.middleCols(h * head_dim, head_dim).transpose();
            if (!c.prob_masks.empty()) {
                dv.middleCols(h * head_dim, head_dim) =
                    (probs.array() * c.prob_masks[hs].array()).matrix().transpose() * d_oh;
                dp.array() *= c.prob_masks[hs].array();
            } else {
                dv.middleCols(h * head_dim, head_dim) = probs.transpose() * d_oh;
            }
            ColVec<T> const row_dot = (dp.array() * probs.array()).rowwise().sum().matrix();
            Mat<T> ds = (probs.array() * (dp.colwise() - row_dot).array()).matrix();
            ds *= scale;
            dq.middleCols(h * head_dim, head_dim) = ds * c.k.middleCols(h * head_dim, head_dim);
            dk.middleCols(h * head_dim, head_dim) = ds.transpose() * c.q.middleCols(h * head_dim, head_dim);
        }
        gvec(P.query_b) += dq.colwise().sum();
        gvec(P.key_b) += dk.colwise().sum();
        gvec(P.value_b) += dv.colwise().sum();
        gmat(P.query_w).noalias() += c.u1.transpose() * dq;
        gmat(P.key_w).noalias() += c.u1.transpose() * dk;
        gmat(P.value_w).noalias() += c.u1.transpose() * dv;
        Mat<T> du1 = dq * model.tensor(P.query_w).transpose();
        du1.noalias() += dk * model.tensor(P.key_w).transpose();
        du1.noalias() += dv * model.tensor(P.value_w).transpose();
        dx += detail::layer_norm_backward<T>(du1, c.norm1, model.vector(P.attn_gain), gptr(P.attn_gain),
                                             gptr(P.attn_bias));
    }

    if (cache.embed_mask.size() > 0) {
        dx.array() *= cache.embed_mask.array();
    }
    auto gtok = gmat(layout.token_embedding);
    auto gpos = gmat(layout.position_embedding);
    for (Eigen::Index t = 0; t < len; ++t) {
        gtok.row(cache.ids[static_cast<std::size_t>(t)]) += dx.row(t);
        gpos.row(static_cast<Eigen::Index>(cache.positions[static_cast<std::size_t>(t)])) += dx.row(t);
    }
}

/// Encoder input for a token sequence: [CLS] followed by the tokens,
/// truncated to max_seq_len. Sets *truncated when tokens were dropped.
[[nodiscard]] inline std::vector<TokenId> encoder_input(std::span<const TokenId> tokens, std::size_t max_seq_len,
                                                        bool* truncated = nullptr)
{
    std::size_t const keep = std::min(tokens.size(), max_seq_len - 1);
    if (truncated != nullptr) {
        *truncated = keep < tokens.size();
    }
    std::vector<TokenId> out;
    out.reserve(keep + 1);
    out.push_back(Vocabulary::cls);
    out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
    return out;
}

[[nodiscard]] inline std::vector<std::size_t> sequential_positions(std::size_t n)
{
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = i;
    }
    return p;
}

struct EncodeOptions {
    bool train_mode = false;
    std::uint64_t dropout_key = 0;
};

/// Embedding of a token-id sequence (the [CLS] hidden state). Dropout is
/// applied only in train mode.
template <typename T>
std::vector<T> encode(const EncoderModel<T>& model, std::span<const TokenId> tokens, EncodeOptions options = {},
                      std::size_t* unknown = nullptr)
{
    auto input = encoder_input(tokens, model.config().max_seq_len);
    auto positions = sequential_positions(input.size());
    DropoutStream stream{options.train_mode ? model.config().dropout : 0.0, options.dropout_key};
    RowVec<T> out = forward_sequence<T>(model, input, positions, &stream, nullptr, unknown);
    return {out.data(), out.data() + out.size()};
}

/// Padded-batch form: `input` already starts with [CLS]; positions whose
/// mask entry is false are padding and take no part in attention.
template <typename T>
std::vector<T> encode_padded(const EncoderModel<T>& model, std::span<const TokenId> input,
                             std::span<const bool> mask)
{
    if (input.size() != mask.size() || input.empty() || !mask[0]) {
        throw Error(ErrorKind::invalid_argument, "encode_padded: mask must cover the input and keep [CLS]");
    }
    std::vector<TokenId> ids;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (mask[i]) {
            ids.push_back(input[i]);
            positions.push_back(i);
        }
    }
    RowVec<T> out = forward_sequence<T>(model, ids, positions, nullptr, nullptr);
    return {out.data(), out.data() + out.size()};
}

} // namespace spanret
