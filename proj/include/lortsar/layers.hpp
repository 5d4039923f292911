#ifndef LORTSAR_LAYERS_HPP
#define LORTSAR_LAYERS_HPP

#include <lortsar/errors.hpp>
#include <lortsar/matrix.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace lortsar {

using Vector = std::vector<double>;

/// y = x·weight + bias, weight is C_in × C_out.
struct DenseLinear {
    Matrix weight;
    std::optional<Vector> bias;

    std::size_t in_features() const { return weight.rows(); }
    std::size_t out_features() const { return weight.cols(); }
    std::size_t parameter_count() const { return weight.size() + (bias ? bias->size() : 0); }

    friend bool operator==(const DenseLinear&, const DenseLinear&) = default;
};

/// y = (x·w1)·w2 + bias. The bias sits on the output of w2; w1 never has one.
struct LowRankLinear {
    Matrix w1; // C_in × k
    Matrix w2; // k × C_out
    std::optional<Vector> bias;

    std::size_t in_features() const { return w1.rows(); }
    std::size_t out_features() const { return w2.cols(); }
    std::size_t rank() const { return w1.cols(); }
    std::size_t parameter_count() const {
        return rank() * (in_features() + out_features()) + (bias ? bias->size() : 0);
    }

    friend bool operator==(const LowRankLinear&, const LowRankLinear&) = default;
};

using Linear = std::variant<DenseLinear, LowRankLinear>;

inline std::size_t in_features(const Linear& l) {
    return std::visit([](const auto& x) { return x.in_features(); }, l);
}
inline std::size_t out_features(const Linear& l) {
    return std::visit([](const auto& x) { return x.out_features(); }, l);
}
inline std::size_t parameter_count(const Linear& l) {
    return std::visit([](const auto& x) { return x.parameter_count(); }, l);
}
inline bool is_low_rank(const Linear& l) { return std::holds_alternative<LowRankLinear>(l); }

/// Forward FLOPs for `rows` input rows, 2 per multiply-accumulate. Bias adds are not counted.
inline std::size_t linear_flops(const Linear& l, std::size_t rows) {
    if (const auto* lr = std::get_if<LowRankLinear>(&l)) {
        return 2 * rows * lr->rank() * (lr->in_features() + lr->out_features());
    }
    const auto& d = std::get<DenseLinear>(l);
    return 2 * rows * d.in_features() * d.out_features();
}

// --- parameter traversal -------------------------------------------------
//
// zip_params(a, b, f) calls f(span_a, span_b) for every parameter tensor of
// two structurally identical objects, in a fixed order. Used for SGD updates,
// gradient accumulation, hashing and serialization.

namespace detail {
template <class V>
auto as_span(V& v) {
    if constexpr (std::is_const_v<V>) {
        return std::span<const double>(v.data(), v.size());
    } else {
        return std::span<double>(v.data(), v.size());
    }
}

template <class A, class B>
void require_same_bias(const A& a, const B& b) {
    if (a.bias.has_value() != b.bias.has_value()) throw ShapeError("zip_params: bias presence differs");
}
} // namespace detail

template <class A, class B, class F>
    requires std::is_same_v<std::remove_const_t<A>, DenseLinear> && std::is_same_v<std::remove_const_t<B>, DenseLinear>
void zip_params(A& a, B& b, F&& f) {
    detail::require_same_bias(a, b);
    f(a.weight.values(), b.weight.values());
    if (a.bias) f(detail::as_span(*a.bias), detail::as_span(*b.bias));
}

template <class A, class B, class F>
    requires std::is_same_v<std::remove_const_t<A>, LowRankLinear> &&
             std::is_same_v<std::remove_const_t<B>, LowRankLinear>
void zip_params(A& a, B& b, F&& f) {
    detail::require_same_bias(a, b);
    f(a.w1.values(), b.w1.values());
    f(a.w2.values(), b.w2.values());
    if (a.bias) f(detail::as_span(*a.bias), detail::as_span(*b.bias));
}

template <class A, class B, class F>
    requires std::is_same_v<std::remove_const_t<A>, Linear> && std::is_same_v<std::remove_const_t<B>, Linear>
void zip_params(A& a, B& b, F&& f) {
    if (a.index() != b.index()) throw ShapeError("zip_params: layer kinds differ");
    if (auto* d = std::get_if<DenseLinear>(&a)) {
        zip_params(*d, std::get<DenseLinear>(b), f);
    } else {
        zip_params(std::get<LowRankLinear>(a), std::get<LowRankLinear>(b), f);
    }
}

/// Visits every parameter tensor of `obj` as a span.
template <class T, class F>
void for_each_param(T& obj, F&& f) {
    zip_params(obj, obj, [&](auto x, auto) { f(x); });
}

/// Same structure as `obj` with every parameter set to zero.
template <class T>
T zeros_like(const T& obj) {
    T out = obj;
    for_each_param(out, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return out;
}

// --- tapes ---------------------------------------------------------------

/// Bookkeeping shared by all tapes: a tape must be recorded by a forward call
/// and can then be consumed by exactly one backward call.
class TapeState {
public:
    void record() {
        recorded_ = true;
        consumed_ = false;
    }
    void consume(const char* who) {
        if (!recorded_) throw TapeError(std::string(who) + ": backward without a recorded forward");
        if (consumed_) throw TapeError(std::string(who) + ": tape already consumed");
        consumed_ = true;
    }

private:
    bool recorded_ = false;
    bool consumed_ = false;
};

template <class Params>
struct Backprop {
    Matrix grad_in;
    Params grad_params;
};

struct LinearTape {
    TapeState state;
    Matrix input;
    Matrix hidden; // x·w1, low-rank only
};

namespace detail {
inline void add_bias(Matrix& y, const std::optional<Vector>& bias) {
    if (!bias) return;
    if (bias->size() != y.cols()) throw ShapeError("bias length does not match output width");
    for (std::size_t i = 0; i < y.rows(); ++i) {
        auto r = y.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += (*bias)[j];
    }
}

inline Vector column_sums(const Matrix& g) {
    Vector s(g.cols(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
    }
    return s;
}

inline void check_input(const Matrix& x, std::size_t in, const char* who) {
    if (x.cols() != in) {
        throw ShapeError(std::string(who) + ": input " + shape_string(x) + " expects width " + std::to_string(in));
    }
}
} // namespace detail

inline Matrix dense_forward(const Matrix& x, const DenseLinear& layer) {
    detail::check_input(x, layer.in_features(), "dense_forward");
    Matrix y = matmul(x, layer.weight);
    detail::add_bias(y, layer.bias);
    return y;
}

inline Matrix lowrank_forward(const Matrix& x, const LowRankLinear& layer) {
    detail::check_input(x, layer.in_features(), "lowrank_forward");
    if (layer.w1.cols() != layer.w2.rows()) throw ShapeError("lowrank_forward: factor ranks differ");
    Matrix y = matmul(matmul(x, layer.w1), layer.w2);
    detail::add_bias(y, layer.bias);
    return y;
}

inline Matrix linear_forward(const Matrix& x, const Linear& layer) {
    return std::visit(
        [&](const auto& l) {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLinear>) {
                return dense_forward(x, l);
            } else {
                return lowrank_forward(x, l);
            }
        },
        layer);
}

inline Matrix linear_forward(const Matrix& x, const Linear& layer, LinearTape& tape) {
    tape.input = x;
    if (const auto* lr = std::get_if<LowRankLinear>(&layer)) {
        detail::check_input(x, lr->in_features(), "lowrank_forward");
        tape.hidden = matmul(x, lr->w1);
        Matrix y = matmul(tape.hidden, lr->w2);
        detail::add_bias(y, lr->bias);
        tape.state.record();
        return y;
    }
    Matrix y = dense_forward(x, std::get<DenseLinear>(layer));
    tape.state.record();
    return y;
}

inline Backprop<Linear> backward(LinearTape& tape, const Linear& layer, const Matrix& grad_out) {
    tape.state.consume("linear backward");
    if (grad_out.rows() != tape.input.rows() || grad_out.cols() != out_features(layer)) {
        throw ShapeError("linear backward: grad_out " + shape_string(grad_out) + " does not match forward output");
    }
    if (const auto* lr = std::get_if<LowRankLinear>(&layer)) {
        LowRankLinear g;
        g.w2 = matmul_tn(tape.hidden, grad_out);
        const Matrix grad_hidden = matmul_nt(grad_out, lr->w2);
        g.w1 = matmul_tn(tape.input, grad_hidden);
        if (lr->bias) g.bias = detail::column_sums(grad_out);
        return {matmul_nt(grad_hidden, lr->w1), Linear{std::move(g)}};
    }
    const auto& d = std::get<DenseLinear>(layer);
    DenseLinear g;
    g.weight = matmul_tn(tape.input, grad_out);
    if (d.bias) g.bias = detail::column_sums(grad_out);
    return {matmul_nt(grad_out, d.weight), Linear{std::move(g)}};
}

// --- softmax / attention -------------------------------------------------

/// Row-wise softmax, stabilized by subtracting each row's maximum.
inline Matrix softmax_rows(const Matrix& a) {
    Matrix p(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto src = a.row(i);
        auto dst = p.row(i);
        if (src.empty()) continue;
        double mx = src[0];
        for (double v : src) mx = std::max(mx, v);
        double z = 0.0;
        for (std::size_t j = 0; j < src.size(); ++j) {
            dst[j] = std::exp(src[j] - mx);
            z += dst[j];
        }
        for (double& v : dst) v /= z;
    }
    return p;
}

struct SoftmaxTape {
    TapeState state;
    Matrix probs;
};

inline Matrix softmax_rows(const Matrix& a, SoftmaxTape& tape) {
    tape.probs = softmax_rows(a);
    tape.state.record();
    return tape.probs;
}

namespace detail {
// dS = P ∘ (dP − rowsum(dP ∘ P))
inline Matrix softmax_grad(const Matrix& p, const Matrix& grad_p) {
    Matrix g(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        auto pr = p.row(i);
        auto gr = grad_p.row(i);
        double dotp = 0.0;
        for (std::size_t j = 0; j < pr.size(); ++j) dotp += pr[j] * gr[j];
        auto out = g.row(i);
        for (std::size_t j = 0; j < pr.size(); ++j) out[j] = pr[j] * (gr[j] - dotp);
    }
    return g;
}
} // namespace detail

inline Matrix backward(SoftmaxTape& tape, const Matrix& grad_out) {
    tape.state.consume("softmax backward");
    if (grad_out.rows() != tape.probs.rows() || grad_out.cols() != tape.probs.cols()) {
        throw ShapeError("softmax backward: grad_out shape mismatch");
    }
    return detail::softmax_grad(tape.probs, grad_out);
}

struct AttentionTape {
    TapeState state;
    Matrix q, k, v, probs;
};

struct AttentionGrads {
    Matrix q, k, v;
};

namespace detail {
inline void check_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    if (q.cols() != k.cols()) throw ShapeError("attention: q width " + shape_string(q) + " vs k " + shape_string(k));
    if (k.rows() != v.rows()) throw ShapeError("attention: k height " + shape_string(k) + " vs v " + shape_string(v));
    if (q.cols() == 0) throw ShapeError("attention: d_k must be positive");
}

inline Matrix attention_logits(const Matrix& q, const Matrix& k) {
    Matrix s = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    for (double& x : s.values()) x *= scale;
    return s;
}
} // namespace detail

/// softmax(q·kᵀ/√d_k)·v
inline Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v) {
    detail::check_attention(q, k, v);
    return matmul(softmax_rows(detail::attention_logits(q, k)), v);
}

inline Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, AttentionTape& tape) {
    detail::check_attention(q, k, v);
    tape.q = q;
    tape.k = k;
    tape.v = v;
    tape.probs = softmax_rows(detail::attention_logits(q, k));
    tape.state.record();
    return matmul(tape.probs, v);
}

inline AttentionGrads backward(AttentionTape& tape, const Matrix& grad_out) {
    tape.state.consume("attention backward");
    if (grad_out.rows() != tape.q.rows() || grad_out.cols() != tape.v.cols()) {
        throw ShapeError("attention backward: grad_out shape mismatch");
    }
    AttentionGrads g;
    g.v = matmul_tn(tape.probs, grad_out);
    Matrix grad_logits = detail::softmax_grad(tape.probs, matmul_nt(grad_out, tape.v));
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.q.cols()));
    for (double& x : grad_logits.values()) x *= scale;
    g.q = matmul(grad_logits, tape.k);
    g.k = matmul_tn(grad_logits, tape.q);
    return g;
}

// --- multi-head self-attention ------------------------------------------

struct AttentionHead {
    Linear q; // d_model × d_k
    Linear k; // d_model × d_k
    Linear v; // d_model × d_v

    friend bool operator==(const AttentionHead&, const AttentionHead&) = default;
};

/// Concat(head_1..head_h)·W^O, each head with its own Q/K/V projections.
struct MhsaBlock {
    std::vector<AttentionHead> heads;
    Linear o; // h·d_v × d_model

    std::size_t d_model() const { return in_features(heads.front().q); }
    std::size_t d_k() const { return out_features(heads.front().q); }
    std::size_t d_v() const { return out_features(heads.front().v); }
    std::size_t parameter_count() const {
        std::size_t n = lortsar::parameter_count(o);
        for (const auto& h : heads) {
            n += lortsar::parameter_count(h.q) + lortsar::parameter_count(h.k) + lortsar::parameter_count(h.v);
        }
        return n;
    }

    friend bool operator==(const MhsaBlock&, const MhsaBlock&) = default;
};

template <class A, class B, class F>
    requires std::is_same_v<std::remove_const_t<A>, MhsaBlock> && std::is_same_v<std::remove_const_t<B>, MhsaBlock>
void zip_params(A& a, B& b, F&& f) {
    if (a.heads.size() != b.heads.size()) throw ShapeError("zip_params: head counts differ");
    for (std::size_t i = 0; i < a.heads.size(); ++i) {
        zip_params(a.heads[i].q, b.heads[i].q, f);
        zip_params(a.heads[i].k, b.heads[i].k, f);
        zip_params(a.heads[i].v, b.heads[i].v, f);
    }
    zip_params(a.o, b.o, f);
}

/// Checks h ≥ 1, shared d_k/d_v and the W^O shape.
inline void validate(const MhsaBlock& block) {
    if (block.heads.empty()) throw ShapeError("MhsaBlock: at least one head required");
    const std::size_t dm = block.d_model();
    const std::size_t dk = block.d_k();
    const std::size_t dv = block.d_v();
    for (const auto& h : block.heads) {
        if (in_features(h.q) != dm || in_features(h.k) != dm || in_features(h.v) != dm) {
            throw ShapeError("MhsaBlock: projection input width differs from d_model");
        }
        if (out_features(h.q) != dk || out_features(h.k) != dk || out_features(h.v) != dv) {
            throw ShapeError("MhsaBlock: heads must share d_k and d_v");
        }
    }
    if (in_features(block.o) != block.heads.size() * dv || out_features(block.o) != dm) {
        throw ShapeError("MhsaBlock: output projection must be h*d_v x d_model");
    }
}

struct HeadTape {
    LinearTape q, k, v;
    AttentionTape attention;
};

struct MhsaTape {
    TapeState state;
    std::vector<HeadTape> heads;
    LinearTape o;
};

namespace detail {
inline Matrix concat_columns(const std::vector<Matrix>& parts) {
    std::size_t cols = 0;
    for (const auto& p : parts) cols += p.cols();
    Matrix out(parts.front().rows(), cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p(i, j);
        off += p.cols();
    }
    return out;
}

inline Matrix column_slice(const Matrix& a, std::size_t off, std::size_t width) {
    Matrix out(a.rows(), width);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < width; ++j) out(i, j) = a(i, off + j);
    return out;
}
} // namespace detail

inline Matrix mhsa_forward(const Matrix& x, const MhsaBlock& block) {
    validate(block);
    detail::check_input(x, block.d_model(), "mhsa_forward");
    std::vector<Matrix> outs;
    outs.reserve(block.heads.size());
    for (const auto& h : block.heads) {
        outs.push_back(attention_forward(linear_forward(x, h.q), linear_forward(x, h.k), linear_forward(x, h.v)));
    }
    return linear_forward(detail::concat_columns(outs), block.o);
}

inline Matrix mhsa_forward(const Matrix& x, const MhsaBlock& block, MhsaTape& tape) {
    validate(block);
    detail::check_input(x, block.d_model(), "mhsa_forward");
    tape.heads.assign(block.heads.size(), HeadTape{});
    std::vector<Matrix> outs;
    outs.reserve(block.heads.size());
    for (std::size_t i = 0; i < block.heads.size(); ++i) {
        const auto& h = block.heads[i];
        auto& t = tape.heads[i];
        Matrix q = linear_forward(x, h.q, t.q);
        Matrix k = linear_forward(x, h.k, t.k);
        Matrix v = linear_forward(x, h.v, t.v);
        outs.push_back(attention_forward(q, k, v, t.attention));
    }
    Matrix y = linear_forward(detail::concat_columns(outs), block.o, tape.o);
    tape.state.record();
    return y;
}

inline Backprop<MhsaBlock> backward(MhsaTape& tape, const MhsaBlock& block, const Matrix& grad_out) {
    tape.state.consume("mhsa backward");
    if (tape.heads.size() != block.heads.size()) throw ShapeError("mhsa backward: tape/block head count differs");
    auto [grad_concat, grad_o] = backward(tape.o, block.o, grad_out);

    Backprop<MhsaBlock> out;
    out.grad_params.o = std::move(grad_o);
    out.grad_params.heads.reserve(block.heads.size());
    const std::size_t dv = block.d_v();
    for (std::size_t i = 0; i < block.heads.size(); ++i) {
        auto& t = tape.heads[i];
        const auto& h = block.heads[i];
        AttentionGrads ag = backward(t.attention, detail::column_slice(grad_concat, i * dv, dv));
        auto gq = backward(t.q, h.q, ag.q);
        auto gk = backward(t.k, h.k, ag.k);
        auto gv = backward(t.v, h.v, ag.v);
        Matrix gx = gq.grad_in + gk.grad_in + gv.grad_in;
        out.grad_in = out.grad_in.empty() ? std::move(gx) : out.grad_in + gx;
        out.grad_params.heads.push_back(
            AttentionHead{std::move(gq.grad_params), std::move(gk.grad_params), std::move(gv.grad_params)});
    }
    return out;
}

} // namespace lortsar

#endif // LORTSAR_LAYERS_HPP
