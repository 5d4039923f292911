#ifndef LORTSAR_MODEL_HPP
#define LORTSAR_MODEL_HPP

#include <lortsar/container.hpp>
#include <lortsar/data.hpp>
#include <lortsar/errors.hpp>
#include <lortsar/layers.hpp>
#include <lortsar/matrix.hpp>
#include <lortsar/rng.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lortsar {

struct ModelConfig {
    std::size_t joints = 8;
    std::size_t frames = 16;
    std::size_t d_model = 32;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t classes = 8;
    std::uint64_t seed = 1;

    std::size_t input_width() const { return 3 * joints; }
    std::size_t d_head() const { return d_model / heads; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// `blocks` may be zero; every other count must be positive and d_model must
/// be divisible by heads.
inline void validate(const ModelConfig& cfg) {
    if (cfg.joints == 0 || cfg.frames == 0 || cfg.d_model == 0 || cfg.heads == 0 || cfg.classes == 0) {
        throw std::invalid_argument("ModelConfig: joints, frames, d_model, heads and classes must be >= 1");
    }
    if (cfg.d_model % cfg.heads != 0) {
        throw std::invalid_argument("ModelConfig: d_model " + std::to_string(cfg.d_model) +
                                    " is not divisible by heads " + std::to_string(cfg.heads));
    }
}

/// embed → [x + MHSA(x)]×blocks → mean over frames → head.
struct SkeletonModel {
    ModelConfig config;
    Linear embed;                // 3J × d_model
    std::vector<MhsaBlock> blocks;
    Linear head;                 // d_model × classes

    friend bool operator==(const SkeletonModel&, const SkeletonModel&) = default;
};

template <class A, class B, class F>
    requires std::is_same_v<std::remove_const_t<A>, SkeletonModel> &&
             std::is_same_v<std::remove_const_t<B>, SkeletonModel>
void zip_params(A& a, B& b, F&& f) {
    if (a.blocks.size() != b.blocks.size()) throw ShapeError("zip_params: block counts differ");
    zip_params(a.embed, b.embed, f);
    for (std::size_t i = 0; i < a.blocks.size(); ++i) zip_params(a.blocks[i], b.blocks[i], f);
    zip_params(a.head, b.head, f);
}

// --- layer enumeration ---------------------------------------------------

enum class LayerGroup { Q, K, V, O, Embed, Head };

inline const char* group_name(LayerGroup g) {
    switch (g) {
    case LayerGroup::Q: return "q";
    case LayerGroup::K: return "k";
    case LayerGroup::V: return "v";
    case LayerGroup::O: return "o";
    case LayerGroup::Embed: return "embed";
    case LayerGroup::Head: return "head";
    }
    return "?";
}

/// Calls f(name, group, layer) for every linear layer in forward order.
/// Works on const and mutable models.
template <class Model, class F>
    requires std::is_same_v<std::remove_const_t<Model>, SkeletonModel>
void for_each_layer(Model& m, F&& f) {
    f(std::string("embed"), LayerGroup::Embed, m.embed);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        auto& block = m.blocks[b];
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        for (std::size_t h = 0; h < block.heads.size(); ++h) {
            const std::string hp = prefix + "heads." + std::to_string(h) + ".";
            f(hp + "q", LayerGroup::Q, block.heads[h].q);
            f(hp + "k", LayerGroup::K, block.heads[h].k);
            f(hp + "v", LayerGroup::V, block.heads[h].v);
        }
        f(prefix + "o", LayerGroup::O, block.o);
    }
    f(std::string("head"), LayerGroup::Head, m.head);
}

// --- construction --------------------------------------------------------

namespace detail {
inline DenseLinear glorot_dense(std::size_t in, std::size_t out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (double& v : w.values()) v = rng.uniform(-a, a);
    return DenseLinear{std::move(w), Vector(out, 0.0)};
}
} // namespace detail

/// Weights ~ U(−a, a) with a = √(6/(fan_in+fan_out)), biases zero, drawn in
/// forward layer order from one seeded stream.
inline SkeletonModel build_model(const ModelConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    SkeletonModel m;
    m.config = cfg;
    m.embed = detail::glorot_dense(cfg.input_width(), cfg.d_model, rng);
    const std::size_t dh = cfg.d_head();
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        MhsaBlock block;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            AttentionHead head;
            head.q = detail::glorot_dense(cfg.d_model, dh, rng);
            head.k = detail::glorot_dense(cfg.d_model, dh, rng);
            head.v = detail::glorot_dense(cfg.d_model, dh, rng);
            block.heads.push_back(std::move(head));
        }
        block.o = detail::glorot_dense(cfg.heads * dh, cfg.d_model, rng);
        m.blocks.push_back(std::move(block));
    }
    m.head = detail::glorot_dense(cfg.d_model, cfg.classes, rng);
    return m;
}

// --- forward / backward --------------------------------------------------

namespace detail {
inline void check_frames(const SkeletonModel& m, const Matrix& x) {
    if (x.rows() != m.config.frames || x.cols() != m.config.input_width()) {
        throw ShapeError("model forward: input " + shape_string(x) + " expects " + std::to_string(m.config.frames) +
                         "x" + std::to_string(m.config.input_width()));
    }
}

inline Matrix mean_rows(const Matrix& h) {
    Matrix pooled(1, h.cols());
    for (std::size_t t = 0; t < h.rows(); ++t) {
        auto r = h.row(t);
        for (std::size_t j = 0; j < r.size(); ++j) pooled(0, j) += r[j];
    }
    const double inv = 1.0 / static_cast<double>(h.rows());
    for (double& v : pooled.values()) v *= inv;
    return pooled;
}
} // namespace detail

/// Logits (1 × classes) for one T × 3J frame matrix.
inline Matrix forward_frames(const SkeletonModel& m, const Matrix& x) {
    detail::check_frames(m, x);
    Matrix h = linear_forward(x, m.embed);
    for (const auto& block : m.blocks) h = h + mhsa_forward(h, block);
    return linear_forward(detail::mean_rows(h), m.head);
}

/// Rejects samples whose frame/joint counts do not match the model.
inline void check_sample(const SkeletonModel& m, const SkeletonSample& s) {
    if (s.frames != m.config.frames || s.joints != m.config.joints) {
        throw ShapeError("sample is " + std::to_string(s.frames) + " frames x " + std::to_string(s.joints) +
                         " joints, model expects " + std::to_string(m.config.frames) + " x " +
                         std::to_string(m.config.joints));
    }
}

/// Logits (B × classes), one row per sample.
inline Matrix forward(const SkeletonModel& m, std::span<const SkeletonSample> batch) {
    Matrix logits(batch.size(), m.config.classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        check_sample(m, batch[i]);
        const Matrix row = forward_frames(m, batch[i].frame_matrix());
        std::copy_n(row.values().begin(), row.cols(), logits.row(i).begin());
    }
    return logits;
}

struct ModelTape {
    TapeState state;
    LinearTape embed;
    std::vector<MhsaTape> blocks;
    LinearTape head;
    std::size_t frames = 0;
};

inline Matrix forward_frames(const SkeletonModel& m, const Matrix& x, ModelTape& tape) {
    detail::check_frames(m, x);
    tape.frames = x.rows();
    tape.blocks.assign(m.blocks.size(), MhsaTape{});
    Matrix h = linear_forward(x, m.embed, tape.embed);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) h = h + mhsa_forward(h, m.blocks[b], tape.blocks[b]);
    Matrix logits = linear_forward(detail::mean_rows(h), m.head, tape.head);
    tape.state.record();
    return logits;
}

inline Backprop<SkeletonModel> backward(ModelTape& tape, const SkeletonModel& m, const Matrix& grad_logits) {
    tape.state.consume("model backward");
    Backprop<SkeletonModel> out;
    out.grad_params.config = m.config;
    auto [grad_pooled, grad_head] = backward(tape.head, m.head, grad_logits);
    out.grad_params.head = std::move(grad_head);

    Matrix grad_h(tape.frames, grad_pooled.cols());
    const double inv = 1.0 / static_cast<double>(tape.frames);
    for (std::size_t t = 0; t < tape.frames; ++t)
        for (std::size_t j = 0; j < grad_pooled.cols(); ++j) grad_h(t, j) = grad_pooled(0, j) * inv;

    out.grad_params.blocks.resize(m.blocks.size());
    for (std::size_t b = m.blocks.size(); b-- > 0;) {
        auto step = backward(tape.blocks[b], m.blocks[b], grad_h);
        grad_h = grad_h + step.grad_in; // residual
        out.grad_params.blocks[b] = std::move(step.grad_params);
    }
    auto [grad_x, grad_embed] = backward(tape.embed, m.embed, grad_h);
    out.grad_params.embed = std::move(grad_embed);
    out.grad_in = std::move(grad_x);
    return out;
}

// --- loss ----------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Matrix grad_logits;
};

/// Mean cross-entropy over the batch; grad = (softmax − onehot)/B.
inline LossResult cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
    if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count does not match batch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= logits.cols()) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                                    std::to_string(logits.cols()) + ")");
        }
    }
    LossResult out;
    out.grad_logits = softmax_rows(logits);
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row(i);
        double mx = r[0];
        for (double v : r) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : r) z += std::exp(v - mx);
        out.loss += (std::log(z) + mx - r[labels[i]]) * inv_b;
        out.grad_logits(i, labels[i]) -= 1.0;
    }
    for (double& v : out.grad_logits.values()) v *= inv_b;
    return out;
}

// --- accounting ----------------------------------------------------------

/// Total trainable scalars.
inline std::size_t count_params(const SkeletonModel& m) {
    std::size_t n = 0;
    for_each_layer(m, [&](const std::string&, LayerGroup, const Linear& l) { n += parameter_count(l); });
    return n;
}

/// Forward FLOPs for a `frames`-long sequence, 2 per MAC: linear layers as in
/// linear_flops, per head 2T²d_k for q·kᵀ and 2T²d_v for P·v, 5 per softmax
/// element. The head runs on the pooled row. Residual adds, pooling and bias
/// adds are not counted.
inline std::size_t count_flops(const SkeletonModel& m, std::size_t frames) {
    const std::size_t t = frames;
    std::size_t n = linear_flops(m.embed, t);
    for (const auto& block : m.blocks) {
        for (const auto& h : block.heads) {
            n += linear_flops(h.q, t) + linear_flops(h.k, t) + linear_flops(h.v, t);
            n += 2 * t * t * out_features(h.q) + 2 * t * t * out_features(h.v) + 5 * t * t;
        }
        n += linear_flops(block.o, t);
    }
    n += linear_flops(m.head, 1);
    return n;
}

/// FNV-1a over the raw parameter bytes; used to check that a model is unchanged.
inline std::uint64_t parameter_hash(const SkeletonModel& m) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for_each_param(m, [&](std::span<const double> s) {
        for (double v : s) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffu;
                h *= 0x100000001b3ull;
            }
        }
    });
    return h;
}

// --- serialization -------------------------------------------------------
//
// Tensor names: "config" (8 values: J, T, d_model, heads, blocks, classes,
// seed low 32 bits, seed high 32 bits), then per layer "<name>.weight" for
// dense or "<name>.w1"/"<name>.w2" for low-rank, plus "<name>.bias".

namespace detail {
inline NamedTensor matrix_tensor(std::string name, const Matrix& m) {
    return {std::move(name), {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
            std::vector<double>(m.values().begin(), m.values().end())};
}

inline void append_linear(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
    const std::optional<Vector>* bias = nullptr;
    if (const auto* d = std::get_if<DenseLinear>(&l)) {
        out.push_back(matrix_tensor(name + ".weight", d->weight));
        bias = &d->bias;
    } else {
        const auto& lr = std::get<LowRankLinear>(l);
        out.push_back(matrix_tensor(name + ".w1", lr.w1));
        out.push_back(matrix_tensor(name + ".w2", lr.w2));
        bias = &lr.bias;
    }
    if (*bias) out.push_back({name + ".bias", {static_cast<std::uint32_t>((*bias)->size())}, **bias});
}

class TensorIndex {
public:
    explicit TensorIndex(std::vector<NamedTensor> tensors) {
        for (auto& t : tensors) {
            const std::string name = t.name;
            if (!by_name_.emplace(name, std::move(t)).second) {
                throw ContainerError(ContainerErrorKind::Corrupt, "duplicate tensor \"" + name + "\"");
            }
        }
    }

    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    const NamedTensor& take(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ContainerError(ContainerErrorKind::Corrupt, "missing tensor \"" + name + "\"");
        used_.push_back(name);
        return it->second;
    }

    Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) {
        const auto& t = take(name);
        if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols) {
            throw ContainerError(ContainerErrorKind::Corrupt, "tensor \"" + name + "\" has unexpected shape");
        }
        try {
            return Matrix(rows, cols, t.values);
        } catch (const std::invalid_argument&) {
            throw ContainerError(ContainerErrorKind::Corrupt, "tensor \"" + name + "\" has non-finite values");
        }
    }

    Matrix matrix_any(const std::string& name) {
        const auto& t = take(name);
        if (t.dims.size() != 2) throw ContainerError(ContainerErrorKind::Corrupt, "tensor \"" + name + "\" is not 2-D");
        return matrix(name, t.dims[0], t.dims[1]);
    }

    void check_all_used() const {
        if (used_.size() != by_name_.size()) {
            for (const auto& [name, t] : by_name_) {
                if (std::find(used_.begin(), used_.end(), name) == used_.end()) {
                    throw ContainerError(ContainerErrorKind::Corrupt, "unexpected tensor \"" + name + "\"");
                }
            }
        }
    }

private:
    std::map<std::string, NamedTensor> by_name_;
    std::vector<std::string> used_;
};

inline Linear read_linear(TensorIndex& idx, const std::string& name, std::size_t in, std::size_t out) {
    Linear l;
    std::optional<Vector> bias;
    if (idx.has(name + ".bias")) {
        const auto& t = idx.take(name + ".bias");
        if (t.dims.size() != 1 || t.dims[0] != out) {
            throw ContainerError(ContainerErrorKind::Corrupt, "tensor \"" + name + ".bias\" has unexpected shape");
        }
        bias = t.values;
    }
    if (idx.has(name + ".weight")) {
        l = DenseLinear{idx.matrix(name + ".weight", in, out), bias};
    } else {
        Matrix w1 = idx.matrix_any(name + ".w1");
        if (w1.rows() != in || w1.cols() == 0 || w1.cols() > std::min(in, out)) {
            throw ContainerError(ContainerErrorKind::Corrupt, "tensor \"" + name + ".w1\" has unexpected shape");
        }
        Matrix w2 = idx.matrix(name + ".w2", w1.cols(), out);
        l = LowRankLinear{std::move(w1), std::move(w2), bias};
    }
    return l;
}
} // namespace detail

inline std::vector<NamedTensor> to_tensors(const SkeletonModel& m) {
    const auto& c = m.config;
    std::vector<NamedTensor> out;
    out.push_back({"config",
                   {8},
                   {static_cast<double>(c.joints), static_cast<double>(c.frames), static_cast<double>(c.d_model),
                    static_cast<double>(c.heads), static_cast<double>(c.blocks), static_cast<double>(c.classes),
                    static_cast<double>(c.seed & 0xffffffffu), static_cast<double>(c.seed >> 32)}});
    for_each_layer(m, [&](const std::string& name, LayerGroup, const Linear& l) { detail::append_linear(out, name, l); });
    return out;
}

inline SkeletonModel from_tensors(std::vector<NamedTensor> tensors) {
    detail::TensorIndex idx(std::move(tensors));
    const auto& ct = idx.take("config");
    if (ct.dims != std::vector<std::uint32_t>{8}) throw ContainerError(ContainerErrorKind::Corrupt, "bad config tensor");
    auto count = [&](std::size_t i) {
        const double v = ct.values[i];
        if (!(v >= 0.0 && v <= 4294967295.0) || v != std::floor(v)) {
            throw ContainerError(ContainerErrorKind::Corrupt, "bad config value");
        }
        return static_cast<std::size_t>(v);
    };
    ModelConfig c;
    c.joints = count(0);
    c.frames = count(1);
    c.d_model = count(2);
    c.heads = count(3);
    c.blocks = count(4);
    c.classes = count(5);
    c.seed = static_cast<std::uint64_t>(count(6)) | (static_cast<std::uint64_t>(count(7)) << 32);
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw ContainerError(ContainerErrorKind::Corrupt, e.what());
    }

    SkeletonModel m;
    m.config = c;
    const std::size_t dh = c.d_head();
    m.embed = detail::read_linear(idx, "embed", c.input_width(), c.d_model);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        MhsaBlock block;
        for (std::size_t h = 0; h < c.heads; ++h) {
            const std::string hp = prefix + "heads." + std::to_string(h) + ".";
            block.heads.push_back(AttentionHead{detail::read_linear(idx, hp + "q", c.d_model, dh),
                                                detail::read_linear(idx, hp + "k", c.d_model, dh),
                                                detail::read_linear(idx, hp + "v", c.d_model, dh)});
        }
        block.o = detail::read_linear(idx, prefix + "o", c.heads * dh, c.d_model);
        m.blocks.push_back(std::move(block));
    }
    m.head = detail::read_linear(idx, "head", c.d_model, c.classes);
    idx.check_all_used();
    return m;
}

inline std::string encode_model(const SkeletonModel& m) { return encode_tensors(to_tensors(m)); }
inline SkeletonModel decode_model(std::string_view bytes) { return from_tensors(decode_tensors(bytes)); }

inline void save_model(const std::filesystem::path& path, const SkeletonModel& m) { write_file(path, encode_model(m)); }
inline SkeletonModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

} // namespace lortsar

#endif // LORTSAR_MODEL_HPP
