#pragma once

// Deterministic region-localised clip generator.
//
// Region masks are the four spatial quadrants. Each class injects a motion
// signal into a spatial pattern inside its region's quadrant only; every
// pixel also carries Gaussian noise. Sample j of class c is generated from
// derive_seed(seed, c, j) alone, so datasets with different per-class
// counts share their common prefix.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bmoe/data/sample.hpp"
#include "bmoe/rng.hpp"

namespace bmoe {

/// A config failed validation; what() lists every violation.
class ValidationError : public ContractError {
public:
    explicit ValidationError(std::vector<std::string> violations)
        : ContractError(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

enum class MotionKind : std::uint8_t { Burst, Sustained };

/// Where inside the region's quadrant the signal lives. The two checker
/// patterns cover every pixel with sign (-1)^(y+x), one the negation of
/// the other.
enum class SpatialPattern : std::uint8_t { Full, UpperBand, LowerBand, LeftBand, RightBand, Fine, CheckerEven, CheckerOdd };

inline constexpr SpatialPattern kAllPatterns[] = {
    SpatialPattern::Full, SpatialPattern::UpperBand, SpatialPattern::LowerBand,   SpatialPattern::LeftBand,
    SpatialPattern::RightBand, SpatialPattern::Fine, SpatialPattern::CheckerEven, SpatialPattern::CheckerOdd};

inline std::string_view motion_kind_name(MotionKind k) { return k == MotionKind::Burst ? "burst" : "sustained"; }

inline std::string_view pattern_name(SpatialPattern p) {
    switch (p) {
        case SpatialPattern::Full: return "full";
        case SpatialPattern::UpperBand: return "upper_band";
        case SpatialPattern::LowerBand: return "lower_band";
        case SpatialPattern::LeftBand: return "left_band";
        case SpatialPattern::RightBand: return "right_band";
        case SpatialPattern::Fine: return "fine";
        case SpatialPattern::CheckerEven: return "checker_even";
        case SpatialPattern::CheckerOdd: return "checker_odd";
    }
    return "unknown";
}

struct ClassSpec {
    std::uint32_t class_id = 0;
    std::vector<std::string> name;  // label words
    RegionId region = RegionId::Head;
    MotionKind motion_kind = MotionKind::Burst;
    std::size_t duration_min = 3;  // burst length range in frames
    std::size_t duration_max = 5;
    double amplitude = 1.0;
    SpatialPattern pattern = SpatialPattern::Full;
    double frequency = 0.0;  // cycles per frame of the carrier

    std::string label() const {
        std::string out;
        for (const auto& w : name) out += (out.empty() ? "" : "_") + w;
        return out;
    }
};

struct DatasetConfig {
    std::vector<ClassSpec> classes;
    std::size_t clip_length = 8;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 2;
    double noise_std = 0.1;
    std::size_t samples_per_class = 100;
    /// Per-class counts; overrides samples_per_class when non-empty.
    std::vector<std::size_t> class_counts;
    std::uint64_t seed = 0;

    std::size_t num_classes() const { return classes.size(); }

    std::size_t count_of(std::size_t c) const { return class_counts.empty() ? samples_per_class : class_counts.at(c); }

    std::vector<RegionId> class_region_map() const {
        std::vector<RegionId> out;
        for (const auto& c : classes) out.push_back(c.region);
        return out;
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (classes.empty()) v.push_back("at least one class is required");
        if (clip_length < 1 || clip_length > 0xffff) v.push_back("clip_length must lie in [1, 65535]");
        if (height < 2 || width < 2 || height > 0xffff || width > 0xffff)
            v.push_back("frame height and width must lie in [2, 65535]");
        if (channels < 1 || channels > 0xffff) v.push_back("channels must lie in [1, 65535]");
        if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) v.push_back("noise_std must be finite and >= 0");
        if (class_counts.empty() && samples_per_class < 1) v.push_back("samples_per_class must be >= 1");
        if (!class_counts.empty() && class_counts.size() != classes.size())
            v.push_back("class_counts has " + std::to_string(class_counts.size()) + " entries for " +
                        std::to_string(classes.size()) + " classes");
        for (std::size_t i = 0; i < class_counts.size(); ++i)
            if (class_counts[i] < 1) v.push_back("class " + std::to_string(i) + " has a zero sample count");
        std::array<int, kNumRegions> owners{};
        for (std::size_t i = 0; i < classes.size(); ++i) {
            const auto& c = classes[i];
            const std::string tag = "class " + std::to_string(i);
            if (c.class_id != i) v.push_back(tag + " has class_id " + std::to_string(c.class_id));
            if (c.name.empty()) v.push_back(tag + " has an empty name");
            for (const auto& w : c.name)
                if (w.empty() || w.find_first_of(" \t\n") != std::string::npos)
                    v.push_back(tag + " has an empty or whitespace-containing word");
            if (index_of(c.region) >= kNumRegions) v.push_back(tag + " has an invalid region");
            else ++owners[index_of(c.region)];
            // Zero amplitude is allowed as a pure-noise control class.
            if (!(c.amplitude >= 0.0) || !std::isfinite(c.amplitude)) v.push_back(tag + " amplitude must be >= 0");
            if (c.duration_min < 1 || c.duration_min > c.duration_max || c.duration_max > clip_length)
                v.push_back(tag + " duration range [" + std::to_string(c.duration_min) + ", " +
                            std::to_string(c.duration_max) + "] does not fit a clip of " +
                            std::to_string(clip_length) + " frames");
            if (!(c.frequency >= 0.0) || !std::isfinite(c.frequency)) v.push_back(tag + " frequency must be >= 0");
        }
        for (RegionId r : kAllRegions)
            if (owners[index_of(r)] == 0) v.push_back("region " + std::string(region_name(r)) + " owns no class");
        return v;
    }

    void validate() const {
        auto v = violations();
        if (!v.empty()) throw ValidationError(std::move(v));
    }
};

struct QuadrantBox {
    std::size_t y0, y1, x0, x1;  // half-open
};

inline QuadrantBox quadrant_box(RegionId r, std::size_t height, std::size_t width) {
    const std::size_t hy = height / 2, hx = width / 2;
    switch (r) {
        case RegionId::Head: return {0, hy, 0, hx};
        case RegionId::Body: return {0, hy, hx, width};
        case RegionId::UpperLimb: return {hy, height, 0, hx};
        case RegionId::LowerLimb: return {hy, height, hx, width};
    }
    return {0, 0, 0, 0};
}

inline std::array<std::vector<std::uint8_t>, kNumRegions> quadrant_masks(std::size_t height, std::size_t width) {
    std::array<std::vector<std::uint8_t>, kNumRegions> masks;
    for (RegionId r : kAllRegions) {
        auto& m = masks[index_of(r)];
        m.assign(height * width, 0);
        const auto b = quadrant_box(r, height, width);
        for (std::size_t y = b.y0; y < b.y1; ++y)
            for (std::size_t x = b.x0; x < b.x1; ++x) m[y * width + x] = 1;
    }
    return masks;
}

/// Signal weight of local pixel (y, x) in an h x w quadrant: 0, +1 or -1.
inline double pattern_weight(SpatialPattern p, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    const double checker = (y + x) % 2 == 0 ? 1.0 : -1.0;
    switch (p) {
        case SpatialPattern::Full: return 1.0;
        case SpatialPattern::UpperBand: return y < h / 2 ? 1.0 : 0.0;
        case SpatialPattern::LowerBand: return y >= h / 2 ? 1.0 : 0.0;
        case SpatialPattern::LeftBand: return x < w / 2 ? 1.0 : 0.0;
        case SpatialPattern::RightBand: return x >= w / 2 ? 1.0 : 0.0;
        case SpatialPattern::Fine: return (y % 2 == 1) && (x % 2 == 1) ? 1.0 : 0.0;
        case SpatialPattern::CheckerEven: return checker;
        case SpatialPattern::CheckerOdd: return -checker;
    }
    return 0.0;
}

inline bool pattern_covers(SpatialPattern p, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    return pattern_weight(p, y, x, h, w) != 0.0;
}

/// Per-frame signal strength for one sample of `spec`, drawn from rng.
inline std::vector<double> temporal_profile(const ClassSpec& spec, std::size_t T, Rng& rng) {
    std::vector<double> s(T, 0.0);
    const double amp = spec.amplitude * rng.uniform(0.8, 1.2);
    const double two_pi_f = 2.0 * std::numbers::pi * spec.frequency;
    if (spec.motion_kind == MotionKind::Burst) {
        const auto d = static_cast<std::size_t>(
            rng.integer(static_cast<std::int64_t>(spec.duration_min), static_cast<std::int64_t>(spec.duration_max)));
        const auto t0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(T - d)));
        for (std::size_t i = 0; i < d; ++i) {
            const double env = std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(d));
            s[t0 + i] = amp * env * std::cos(two_pi_f * static_cast<double>(i));
        }
    } else {
        for (std::size_t t = 0; t < T; ++t)
            s[t] = amp * static_cast<double>(t + 1) / static_cast<double>(T) * std::cos(two_pi_f * static_cast<double>(t));
    }
    return s;
}

inline VideoSample generate_sample(const DatasetConfig& cfg, std::size_t class_index, std::size_t j) {
    const ClassSpec& spec = cfg.classes.at(class_index);
    Rng rng(derive_seed(cfg.seed, spec.class_id, j));
    VideoSample s;
    s.frames_count = cfg.clip_length;
    s.height = cfg.height;
    s.width = cfg.width;
    s.channels = cfg.channels;
    s.label = spec.class_id;
    s.region = spec.region;
    s.masks = quadrant_masks(cfg.height, cfg.width);
    s.frames.resize(cfg.clip_length * cfg.height * cfg.width * cfg.channels);
    const auto profile = temporal_profile(spec, cfg.clip_length, rng);
    for (auto& v : s.frames) v = static_cast<float>(rng.normal(0.0, cfg.noise_std));
    const auto box = quadrant_box(spec.region, cfg.height, cfg.width);
    const std::size_t qh = box.y1 - box.y0, qw = box.x1 - box.x0;
    for (std::size_t t = 0; t < cfg.clip_length; ++t)
        for (std::size_t y = 0; y < qh; ++y)
            for (std::size_t x = 0; x < qw; ++x) {
                const double weight = pattern_weight(spec.pattern, y, x, qh, qw);
                if (weight == 0.0) continue;
                for (std::size_t c = 0; c < cfg.channels; ++c) {
                    // Channels carry the signal at decreasing gain.
                    const double gain = weight / static_cast<double>(c + 1);
                    s.at(t, box.y0 + y, box.x0 + x, c) += static_cast<float>(gain * profile[t]);
                }
            }
    return s;
}

/// Class-major list: all samples of class 0, then class 1, ...
inline std::vector<VideoSample> generate_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    std::vector<VideoSample> out;
    for (std::size_t c = 0; c < cfg.num_classes(); ++c)
        for (std::size_t j = 0; j < cfg.count_of(c); ++j) out.push_back(generate_sample(cfg, c, j));
    return out;
}

/// Scales the counts of `tail_classes` by `tail_fraction` (floor, at least 1).
inline DatasetConfig make_imbalanced(const DatasetConfig& cfg, const std::vector<std::size_t>& tail_classes,
                                     double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
        throw ContractError("make_imbalanced: tail_fraction must lie in (0, 1]");
    DatasetConfig out = cfg;
    if (out.class_counts.empty()) out.class_counts.assign(cfg.num_classes(), cfg.samples_per_class);
    for (std::size_t c : tail_classes) {
        if (c >= cfg.num_classes()) throw ContractError("make_imbalanced: unknown class id " + std::to_string(c));
        // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
        const double scaled = std::floor(static_cast<double>(out.class_counts[c]) * tail_fraction + 1e-9);
        out.class_counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(scaled));
    }
    return out;
}

inline std::vector<std::size_t> class_histogram(const std::vector<VideoSample>& samples, std::size_t num_classes) {
    std::vector<std::size_t> h(num_classes, 0);
    for (const auto& s : samples) {
        if (s.label >= num_classes) throw ContractError("sample label " + std::to_string(s.label) + " out of range");
        ++h[s.label];
    }
    return h;
}

struct DatasetSplit {
    std::vector<VideoSample> train;
    std::vector<VideoSample> test;
};

/// Stratified split: the last floor(n * test_fraction) samples of each class
/// (in dataset order) are held out.
inline DatasetSplit split_dataset(const std::vector<VideoSample>& samples, std::size_t num_classes,
                                  double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ContractError("split_dataset: test_fraction must lie in [0, 1)");
    const auto hist = class_histogram(samples, num_classes);
    std::vector<std::size_t> seen(num_classes, 0);
    DatasetSplit out;
    for (const auto& s : samples) {
        const std::size_t n = hist[s.label];
        const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 1e-9));
        (seen[s.label]++ < n - n_test ? out.train : out.test).push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Presets used by the acceptance suite and the CLI defaults.

namespace presets {

inline ClassSpec make_class(std::uint32_t id, std::vector<std::string> name, RegionId r, MotionKind k,
                            SpatialPattern p, double freq, double amplitude = 1.0) {
    ClassSpec c;
    c.class_id = id;
    c.name = std::move(name);
    c.region = r;
    c.motion_kind = k;
    c.pattern = p;
    c.frequency = freq;
    c.amplitude = amplitude;
    return c;
}

/// 8 classes, two per region. Classes sharing a region share their motion
/// and differ only in the sign of a checker pattern, so telling them apart
/// needs that region's crop.
inline DatasetConfig separable(std::uint64_t seed = 7, std::size_t per_class = 100) {
    using enum RegionId;
    using enum MotionKind;
    using enum SpatialPattern;
    DatasetConfig cfg;
    cfg.seed = seed;
    cfg.samples_per_class = per_class;
    cfg.classes = {
        make_class(0, {"nod", "up"}, Head, Burst, CheckerEven, 0.0),
        make_class(1, {"nod", "down"}, Head, Burst, CheckerOdd, 0.0),
        make_class(2, {"lean", "forward"}, Body, Sustained, CheckerEven, 0.0),
        make_class(3, {"lean", "back"}, Body, Sustained, CheckerOdd, 0.0),
        make_class(4, {"hand", "wave"}, UpperLimb, Burst, CheckerEven, 0.0),
        make_class(5, {"arm", "rub"}, UpperLimb, Burst, CheckerOdd, 0.0),
        make_class(6, {"knee", "shake"}, LowerLimb, Sustained, CheckerEven, 0.0),
        make_class(7, {"foot", "tap"}, LowerLimb, Sustained, CheckerOdd, 0.0),
    };
    return cfg;
}

/// 4 spatial classes and 4 temporal classes.
/// Spatial: two regions, each with a checker pattern and its negation, all
/// with the same motion. Pooled conv features barely see the sign, while a
/// token grid sampling even pixels reads it directly.
/// Temporal: distinct motions on the odd pixel lattice, which that token
/// grid never samples.
inline DatasetConfig dual_stream(std::uint64_t seed = 11, std::size_t per_class = 100) {
    using enum RegionId;
    using enum MotionKind;
    using enum SpatialPattern;
    DatasetConfig cfg;
    cfg.seed = seed;
    cfg.samples_per_class = per_class;
    cfg.classes = {
        make_class(0, {"head", "raise"}, Head, Sustained, CheckerEven, 0.0),
        make_class(1, {"head", "lower"}, Head, Sustained, CheckerOdd, 0.0),
        make_class(2, {"leg", "raise"}, LowerLimb, Sustained, CheckerEven, 0.0),
        make_class(3, {"leg", "lower"}, LowerLimb, Sustained, CheckerOdd, 0.0),
        make_class(4, {"blink", "quick"}, Head, Burst, Fine, 0.5),
        make_class(5, {"posture", "drift"}, Body, Sustained, Fine, 0.0),
        make_class(6, {"finger", "flick"}, UpperLimb, Burst, Fine, 0.0),
        make_class(7, {"toe", "wiggle"}, LowerLimb, Sustained, Fine, 0.125),
    };
    return cfg;
}

/// Frequent classes that never need to know where motion happens, plus two
/// "twin" classes (4 and 6) that copy classes 0 and 3 in another region.
/// Only region-aware features separate a twin from its original.
inline DatasetConfig region_twins(std::uint64_t seed = 13, std::size_t per_class = 100) {
    using enum RegionId;
    using enum MotionKind;
    using enum SpatialPattern;
    DatasetConfig cfg;
    cfg.seed = seed;
    cfg.samples_per_class = per_class;
    cfg.classes = {
        make_class(0, {"nod", "up"}, Head, Burst, CheckerEven, 0.0),
        make_class(1, {"nod", "down"}, Head, Burst, CheckerOdd, 0.0),
        make_class(2, {"lean", "forward"}, Body, Sustained, CheckerEven, 0.0),
        make_class(3, {"lean", "back"}, Body, Sustained, CheckerOdd, 0.0),
        make_class(4, {"hand", "raise"}, UpperLimb, Burst, CheckerEven, 0.0),
        make_class(5, {"hand", "wave"}, UpperLimb, Burst, Fine, 0.5),
        make_class(6, {"knee", "bend"}, LowerLimb, Sustained, CheckerOdd, 0.0),
        make_class(7, {"foot", "tap"}, LowerLimb, Sustained, Fine, 0.125),
    };
    return cfg;
}

}  // namespace presets

}  // namespace bmoe
