#ifndef LORTSAR_DATA_HPP
#define LORTSAR_DATA_HPP

// Synthetic skeleton actions. Class c moves every joint coordinate along
//   coords[t, j, a] = A[c, j, a] · sin(2π f_c t / T + φ[c, j, a]) + ε,   f_c = 1 + c,
// with amplitudes A ~ U(0.5, 1.5) and phases φ ~ U(0, 2π) drawn once per class
// and ε ~ N(0, noise_sigma²) per coordinate.
//
// Random streams: class parameters and then the train samples come from
// Rng(seed); test samples come from Rng(seed ^ test_seed_mask). Samples are
// emitted round-robin over classes.
//
// LRSK container:
//   "LRSK" | u32 version=1 | u32 sample_count |
//   per sample: u32 label | u32 T | u32 J | f64 payload[T·J·3] (t-major, then joint, then axis)

#include <lortsar/container.hpp>
#include <lortsar/errors.hpp>
#include <lortsar/matrix.hpp>
#include <lortsar/rng.hpp>

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace lortsar {

struct SkeletonSample {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::vector<double> coords; // frames × joints × 3
    std::size_t label = 0;

    double at(std::size_t t, std::size_t j, std::size_t axis) const { return coords[(t * joints + j) * 3 + axis]; }

    /// frames × 3·joints view used as model input.
    Matrix frame_matrix() const { return Matrix(frames, 3 * joints, coords); }

    friend bool operator==(const SkeletonSample&, const SkeletonSample&) = default;
};

struct DatasetSpec {
    std::size_t classes = 8;
    std::size_t train_per_class = 250;
    std::size_t test_per_class = 60;
    std::size_t frames = 16;
    std::size_t joints = 8;
    double noise_sigma = 0.05;
    std::uint64_t seed = 7;
};

inline constexpr std::uint64_t test_seed_mask = 0x9E3779B97F4A7C15ull;

inline void validate(const DatasetSpec& s) {
    if (s.classes == 0 || s.train_per_class == 0 || s.test_per_class == 0 || s.frames == 0 || s.joints == 0) {
        throw std::invalid_argument("DatasetSpec: classes, per-class counts, frames and joints must be >= 1");
    }
    if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma)) {
        throw std::invalid_argument("DatasetSpec: noise_sigma must be finite and >= 0");
    }
}

struct Dataset {
    std::vector<SkeletonSample> train;
    std::vector<SkeletonSample> test;
};

namespace detail {
struct ClassMotion {
    std::vector<double> amplitude; // joints × 3
    std::vector<double> phase;
};

inline std::vector<SkeletonSample> draw_split(const DatasetSpec& spec, const std::vector<ClassMotion>& motions,
                                              std::size_t per_class, Rng& rng) {
    std::vector<SkeletonSample> out;
    out.reserve(per_class * spec.classes);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < spec.classes; ++c) {
            SkeletonSample s{spec.frames, spec.joints, std::vector<double>(spec.frames * spec.joints * 3), c};
            const double freq = static_cast<double>(1 + c);
            for (std::size_t t = 0; t < spec.frames; ++t) {
                const double angle = two_pi * freq * static_cast<double>(t) / static_cast<double>(spec.frames);
                for (std::size_t ja = 0; ja < spec.joints * 3; ++ja) {
                    double v = motions[c].amplitude[ja] * std::sin(angle + motions[c].phase[ja]);
                    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
                    s.coords[t * spec.joints * 3 + ja] = v;
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}
} // namespace detail

inline Dataset generate_dataset(const DatasetSpec& spec) {
    validate(spec);
    Rng train_rng(spec.seed);
    std::vector<detail::ClassMotion> motions(spec.classes);
    for (auto& m : motions) {
        m.amplitude.resize(spec.joints * 3);
        m.phase.resize(spec.joints * 3);
        for (std::size_t i = 0; i < spec.joints * 3; ++i) {
            m.amplitude[i] = train_rng.uniform(0.5, 1.5);
            m.phase[i] = train_rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
    }
    Rng test_rng(spec.seed ^ test_seed_mask);
    Dataset d;
    d.train = detail::draw_split(spec, motions, spec.train_per_class, train_rng);
    d.test = detail::draw_split(spec, motions, spec.test_per_class, test_rng);
    return d;
}

inline constexpr std::string_view samples_magic = "LRSK";
inline constexpr std::uint32_t samples_version = 1;

inline std::string encode_samples(const std::vector<SkeletonSample>& samples) {
    ByteWriter w;
    w.bytes(samples_magic);
    w.u32(samples_version);
    w.u32(static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        if (s.coords.size() != s.frames * s.joints * 3) throw ShapeError("encode_samples: coords length mismatch");
        w.u32(static_cast<std::uint32_t>(s.label));
        w.u32(static_cast<std::uint32_t>(s.frames));
        w.u32(static_cast<std::uint32_t>(s.joints));
        for (double v : s.coords) w.f64(v);
    }
    return w.buffer();
}

inline std::vector<SkeletonSample> decode_samples(std::string_view bytes) {
    ByteReader r(bytes);
    read_header(r, samples_magic, samples_version);
    const std::uint32_t count = r.u32();
    std::vector<SkeletonSample> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        SkeletonSample s;
        s.label = r.u32();
        s.frames = r.u32();
        s.joints = r.u32();
        const std::uint64_t n = std::uint64_t{s.frames} * s.joints * 3;
        if (n * 8 > r.remaining()) {
            throw ContainerError(ContainerErrorKind::Corrupt, "sample " + std::to_string(i) + " payload exceeds file size");
        }
        s.coords.resize(n);
        for (auto& v : s.coords) {
            v = r.f64();
            if (!std::isfinite(v)) throw ContainerError(ContainerErrorKind::Corrupt, "non-finite coordinate");
        }
        out.push_back(std::move(s));
    }
    if (!r.at_end()) throw ContainerError(ContainerErrorKind::Corrupt, "trailing bytes after last sample");
    return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<SkeletonSample>& samples) {
    write_file(path, encode_samples(samples));
}

inline std::vector<SkeletonSample> load_dataset(const std::filesystem::path& path) {
    return decode_samples(read_file(path));
}

} // namespace lortsar

#endif // LORTSAR_DATA_HPP
