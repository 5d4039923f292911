#ifndef LORTSAR_COMPRESS_HPP
#define LORTSAR_COMPRESS_HPP

#include <lortsar/errors.hpp>
#include <lortsar/finetune.hpp>
#include <lortsar/format.hpp>
#include <lortsar/layers.hpp>
#include <lortsar/model.hpp>
#include <lortsar/svd.hpp>

#include <array>
#include <cctype>
#include <chrono>
#include <ctime>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace lortsar {

inline constexpr std::array<LayerGroup, 6> all_groups = {LayerGroup::Q, LayerGroup::K,     LayerGroup::V,
                                                         LayerGroup::O, LayerGroup::Embed, LayerGroup::Head};

/// Rank per layer group; std::nullopt leaves the group dense (FULL).
struct CompressionPlan {
    std::array<std::optional<std::size_t>, all_groups.size()> ranks{};

    std::optional<std::size_t>& operator[](LayerGroup g) { return ranks[static_cast<std::size_t>(g)]; }
    const std::optional<std::size_t>& operator[](LayerGroup g) const { return ranks[static_cast<std::size_t>(g)]; }

    bool is_identity() const {
        for (const auto& r : ranks) {
            if (r) return false;
        }
        return true;
    }

    friend bool operator==(const CompressionPlan&, const CompressionPlan&) = default;
};

namespace detail {
inline std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string_view trim(std::string_view s, std::size_t& offset) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
        ++offset;
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}
} // namespace detail

/// Parses "group=rank" tokens separated by commas, e.g. "q=1,k=3,v=full".
/// Groups are q, k, v, o, embed, head (case-insensitive); omitted groups stay
/// FULL. An empty string is the identity plan.
inline CompressionPlan parse_plan(std::string_view text) {
    CompressionPlan plan;
    std::size_t probe = 0;
    if (detail::trim(text, probe).empty()) return plan;

    std::array<bool, all_groups.size()> seen{};
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        std::size_t pos = start;
        const std::string_view token = detail::trim(text.substr(start, end - start), pos);
        if (token.empty()) throw ParseError("empty plan token", pos);

        const std::size_t eq = token.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected group=rank, got \"" + std::string(token) + "\"", pos);
        std::size_t key_pos = pos;
        const std::string key = detail::lower(detail::trim(token.substr(0, eq), key_pos));
        std::size_t value_pos = pos + eq + 1;
        const std::string value = detail::lower(detail::trim(token.substr(eq + 1), value_pos));

        std::optional<LayerGroup> group;
        for (LayerGroup g : all_groups) {
            if (key == group_name(g)) group = g;
        }
        if (!group) throw ParseError("unknown layer group \"" + key + "\"", key_pos);
        const auto gi = static_cast<std::size_t>(*group);
        if (seen[gi]) throw ParseError("duplicate layer group \"" + key + "\"", key_pos);
        seen[gi] = true;

        if (value == "full") {
            plan.ranks[gi] = std::nullopt;
        } else {
            if (value.empty() || value.size() > 9 ||
                value.find_first_not_of("0123456789") != std::string::npos) {
                throw ParseError("rank must be a positive integer or \"full\", got \"" + value + "\"", value_pos);
            }
            const std::size_t k = std::stoul(value);
            if (k == 0) throw ParseError("rank must be >= 1", value_pos);
            plan.ranks[gi] = k;
        }
        start = end + 1;
    }
    return plan;
}

/// Canonical text form: non-FULL groups in q,k,v,o,embed,head order.
inline std::string render(const CompressionPlan& plan) {
    std::string out;
    for (LayerGroup g : all_groups) {
        if (!plan[g]) continue;
        if (!out.empty()) out += ',';
        out += group_name(g);
        out += '=';
        out += std::to_string(*plan[g]);
    }
    return out;
}

struct LayerReport {
    std::string name;
    LayerGroup group = LayerGroup::Q;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::optional<std::size_t> rank; // nullopt: left as is
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    double recon_fro = 0.0;
    double recon_rel = 0.0;
};

struct CompressionReport {
    std::vector<LayerReport> layers;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    std::size_t reference_frames = 0;
    std::size_t flops_before = 0;
    std::size_t flops_after = 0;
    std::string timestamp; // UTC, ISO 8601; not written to the CSV
};

/// CSV with one row per layer plus a `total` footer. Deterministic for a given
/// model and plan.
inline std::string report_csv(const CompressionReport& r) {
    std::ostringstream os;
    os << "layer,group,rows,cols,rank,params_before,params_after,recon_fro,recon_rel\n";
    for (const auto& l : r.layers) {
        os << l.name << ',' << group_name(l.group) << ',' << l.rows << ',' << l.cols << ','
           << (l.rank ? std::to_string(*l.rank) : std::string("full")) << ',' << l.params_before << ','
           << l.params_after << ',' << to_text(l.recon_fro) << ',' << to_text(l.recon_rel) << '\n';
    }
    os << "total,,,,," << r.params_before << ',' << r.params_after << ",,\n";
    return os.str();
}

struct CompressionResult {
    SkeletonModel model;
    CompressionReport report;
};

namespace detail {
inline Matrix materialize(const Linear& l) {
    if (const auto* d = std::get_if<DenseLinear>(&l)) return d->weight;
    const auto& lr = std::get<LowRankLinear>(l);
    return matmul(lr.w1, lr.w2);
}

inline const std::optional<Vector>& bias_of(const Linear& l) {
    return std::visit([](const auto& x) -> const std::optional<Vector>& { return x.bias; }, l);
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}
} // namespace detail

/// Replaces every layer of each planned group with the rank-k factor pair
/// from its SVD (w1 = U_kΣ_k, w2 = V_kᵀ, bias copied onto the w2 output).
/// FULL groups are copied unchanged. The input model is not modified.
/// `reference_frames` = 0 uses the model's configured frame count.
inline CompressionResult compress_model(const SkeletonModel& source, const CompressionPlan& plan,
                                        std::size_t reference_frames = 0) {
    for_each_layer(source, [&](const std::string& name, LayerGroup g, const Linear& l) {
        const auto& k = plan[g];
        if (!k) return;
        const std::size_t limit = std::min(in_features(l), out_features(l));
        if (*k > limit) {
            throw std::invalid_argument("compress: rank " + std::to_string(*k) + " for group " + group_name(g) +
                                        " exceeds min dimension " + std::to_string(limit) + " of layer " + name +
                                        " (" + std::to_string(in_features(l)) + "x" +
                                        std::to_string(out_features(l)) + ")");
        }
    });

    CompressionResult out;
    out.model = source;
    auto& report = out.report;
    report.timestamp = detail::utc_timestamp();
    report.reference_frames = reference_frames ? reference_frames : source.config.frames;

    for_each_layer(out.model, [&](const std::string& name, LayerGroup g, Linear& l) {
        LayerReport row;
        row.name = name;
        row.group = g;
        row.rows = in_features(l);
        row.cols = out_features(l);
        row.params_before = parameter_count(l);
        if (const auto& k = plan[g]) {
            const Matrix w = detail::materialize(l);
            const SvdResult s = svd(w);
            TruncatedFactors f = truncate_to_factors(s, *k);
            row.rank = *k;
            row.recon_fro = reconstruction_error(s, *k);
            const double norm = frobenius_norm(w);
            row.recon_rel = norm > 0.0 ? row.recon_fro / norm : 0.0;
            l = LowRankLinear{std::move(f.w1), std::move(f.w2), detail::bias_of(l)};
        }
        row.params_after = parameter_count(l);
        report.params_before += row.params_before;
        report.params_after += row.params_after;
        report.layers.push_back(std::move(row));
    });
    report.flops_before = count_flops(source, report.reference_frames);
    report.flops_after = count_flops(out.model, report.reference_frames);
    return out;
}

struct SweepRow {
    std::string plan;
    std::size_t params = 0;
    std::size_t flops = 0;
    double top1 = 0.0;
};

/// Compresses with each plan in turn and evaluates on `test` without
/// fine-tuning. Rows follow grid order.
inline std::vector<SweepRow> rank_sweep(const SkeletonModel& m, std::span<const SkeletonSample> test,
                                        std::span<const CompressionPlan> grid) {
    if (grid.empty()) throw std::invalid_argument("rank_sweep: empty grid");
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (const auto& plan : grid) {
        const auto compressed = compress_model(m, plan);
        rows.push_back({plan.is_identity() ? std::string("full") : render(plan), compressed.report.params_after,
                        compressed.report.flops_after, evaluate(compressed.model, test)});
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "plan,params,flops,top1\n";
    for (const auto& r : rows) os << '"' << r.plan << "\"," << r.params << ',' << r.flops << ',' << to_text(r.top1) << '\n';
    return os.str();
}

} // namespace lortsar

#endif // LORTSAR_COMPRESS_HPP
