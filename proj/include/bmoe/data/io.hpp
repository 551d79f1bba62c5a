#pragma once

// Dataset files.
//
//   "BMDS" | u32 version (1) | u32 sample count | per sample:
//     u32 label, u8 region, u16 T, u16 H, u16 W, u16 C,
//     T*H*W*C float32 frames, 4 masks of ceil(H*W/8) bytes each
//     (row-major bits, least significant bit first).
//
// All integers and floats are little-endian. A JSON sidecar at
// "<path>.json" records the generating config and class names.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "bmoe/binary_io.hpp"
#include "bmoe/data/synthetic.hpp"

namespace bmoe {

inline constexpr std::string_view kDatasetMagic = "BMDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const std::vector<VideoSample>& samples) {
    io::ByteWriter w;
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        validate_sample(s);
        if (s.frames_count > 0xffff || s.height > 0xffff || s.width > 0xffff || s.channels > 0xffff)
            throw ContractError("sample extent does not fit the dataset format " + shape_str(s.shape()));
        w.u32(s.label);
        w.u8(static_cast<std::uint8_t>(s.region));
        w.u16(static_cast<std::uint16_t>(s.frames_count));
        w.u16(static_cast<std::uint16_t>(s.height));
        w.u16(static_cast<std::uint16_t>(s.width));
        w.u16(static_cast<std::uint16_t>(s.channels));
        for (float v : s.frames) w.f32(v);
        const std::size_t pixels = s.height * s.width;
        for (const auto& m : s.masks) {
            for (std::size_t byte = 0; byte < (pixels + 7) / 8; ++byte) {
                std::uint8_t b = 0;
                for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < pixels; ++bit)
                    if (m[byte * 8 + bit]) b |= static_cast<std::uint8_t>(1u << bit);
                w.u8(b);
            }
        }
    }
    return w.buffer();
}

inline std::vector<VideoSample> decode_dataset(io::ByteReader& r) {
    if (r.bytes(4) != kDatasetMagic) throw IoError(r.source() + ": bad dataset magic");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw IoError(r.source() + ": unsupported dataset version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<VideoSample> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        VideoSample s;
        s.label = r.u32();
        const std::uint8_t region = r.u8();
        if (region >= kNumRegions) throw IoError(r.source() + ": sample " + std::to_string(i) + " has bad region");
        s.region = static_cast<RegionId>(region);
        s.frames_count = r.u16();
        s.height = r.u16();
        s.width = r.u16();
        s.channels = r.u16();
        const std::size_t n = s.frames_count * s.height * s.width * s.channels;
        const std::size_t pixels = s.height * s.width;
        r.need(4 * n + kNumRegions * ((pixels + 7) / 8));
        s.frames.resize(n);
        for (auto& v : s.frames) v = r.f32();
        for (auto& m : s.masks) {
            m.assign(pixels, 0);
            for (std::size_t byte = 0; byte < (pixels + 7) / 8; ++byte) {
                const std::uint8_t b = r.u8();
                for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < pixels; ++bit)
                    m[byte * 8 + bit] = static_cast<std::uint8_t>((b >> bit) & 1u);
            }
        }
        out.push_back(std::move(s));
    }
    if (!r.at_end()) throw IoError(r.source() + ": trailing bytes after last sample");
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace json_detail {

using nlohmann::json;

/// Rejects keys outside `allowed`, appending one violation per stray key.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where,
                       std::vector<std::string>& v) {
    if (!j.is_object()) {
        v.push_back(where + " must be a JSON object");
        return;
    }
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) v.push_back(where + ": unknown key \"" + key + "\"");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where, std::vector<std::string>& v) {
    if (!j.is_object() || !j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        v.push_back(where + "." + key + " has the wrong type");
    }
}

}  // namespace json_detail

inline nlohmann::json to_json(const ClassSpec& c) {
    return {{"class_id", c.class_id},
            {"name", c.name},
            {"region", std::string(region_name(c.region))},
            {"motion_kind", std::string(motion_kind_name(c.motion_kind))},
            {"duration", {c.duration_min, c.duration_max}},
            {"amplitude", c.amplitude},
            {"pattern", std::string(pattern_name(c.pattern))},
            {"frequency", c.frequency}};
}

inline nlohmann::json to_json(const DatasetConfig& cfg) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : cfg.classes) classes.push_back(to_json(c));
    return {{"classes", classes},           {"clip_length", cfg.clip_length},
            {"height", cfg.height},         {"width", cfg.width},
            {"channels", cfg.channels},     {"noise_std", cfg.noise_std},
            {"samples_per_class", cfg.samples_per_class}, {"class_counts", cfg.class_counts},
            {"seed", cfg.seed}};
}

/// Strict parse: unknown keys, wrong types and unknown enum names are all
/// reported together. Missing keys keep their defaults.
inline ClassSpec class_spec_from_json(const nlohmann::json& j, const std::string& where, std::vector<std::string>& v) {
    using namespace json_detail;
    ClassSpec c;
    check_keys(j, {"class_id", "name", "region", "motion_kind", "duration", "amplitude", "pattern", "frequency"},
               where, v);
    if (!j.is_object()) return c;
    read(j, "class_id", c.class_id, where, v);
    read(j, "name", c.name, where, v);
    read(j, "amplitude", c.amplitude, where, v);
    read(j, "frequency", c.frequency, where, v);
    std::string s;
    if (j.contains("region")) {
        read(j, "region", s, where, v);
        if (auto r = parse_region(s)) c.region = *r;
        else v.push_back(where + ".region \"" + s + "\" is not a region");
    }
    if (j.contains("motion_kind")) {
        read(j, "motion_kind", s, where, v);
        if (s == "burst") c.motion_kind = MotionKind::Burst;
        else if (s == "sustained") c.motion_kind = MotionKind::Sustained;
        else v.push_back(where + ".motion_kind \"" + s + "\" is not burst or sustained");
    }
    if (j.contains("pattern")) {
        read(j, "pattern", s, where, v);
        bool found = false;
        for (auto p : kAllPatterns)
            if (pattern_name(p) == s) c.pattern = p, found = true;
        if (!found) v.push_back(where + ".pattern \"" + s + "\" is not a pattern");
    }
    if (j.contains("duration")) {
        std::vector<std::size_t> d;
        read(j, "duration", d, where, v);
        if (d.size() == 2) c.duration_min = d[0], c.duration_max = d[1];
        else v.push_back(where + ".duration must be [min, max]");
    }
    return c;
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j, const std::string& where,
                                              std::vector<std::string>& v) {
    using namespace json_detail;
    DatasetConfig cfg;
    check_keys(j,
               {"classes", "clip_length", "height", "width", "channels", "noise_std", "samples_per_class",
                "class_counts", "seed"},
               where, v);
    if (!j.is_object()) return cfg;
    read(j, "clip_length", cfg.clip_length, where, v);
    read(j, "height", cfg.height, where, v);
    read(j, "width", cfg.width, where, v);
    read(j, "channels", cfg.channels, where, v);
    read(j, "noise_std", cfg.noise_std, where, v);
    read(j, "samples_per_class", cfg.samples_per_class, where, v);
    read(j, "class_counts", cfg.class_counts, where, v);
    read(j, "seed", cfg.seed, where, v);
    if (j.contains("classes")) {
        if (!j["classes"].is_array()) {
            v.push_back(where + ".classes must be an array");
        } else {
            for (std::size_t i = 0; i < j["classes"].size(); ++i)
                cfg.classes.push_back(
                    class_spec_from_json(j["classes"][i], where + ".classes[" + std::to_string(i) + "]", v));
        }
    }
    return cfg;
}

/// Parses and validates; throws ValidationError listing every problem.
inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    std::vector<std::string> v;
    auto cfg = dataset_config_from_json(j, "data", v);
    if (v.empty()) v = cfg.violations();
    if (!v.empty()) throw ValidationError(std::move(v));
    return cfg;
}

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

inline void save_dataset(const std::vector<VideoSample>& samples, const std::string& path,
                         const DatasetConfig* cfg = nullptr) {
    io::ByteWriter w;
    const auto bytes = encode_dataset(samples);
    w.bytes(std::string_view(bytes.data(), bytes.size()));
    w.write_file(path);
    if (cfg) {
        nlohmann::json side{{"config", to_json(*cfg)}, {"class_names", nlohmann::json::array()}};
        for (const auto& c : cfg->classes) side["class_names"].push_back(c.label());
        std::ofstream out(sidecar_path(path));
        if (!out) throw IoError("cannot open " + sidecar_path(path) + " for writing");
        out << side.dump(2) << '\n';
    }
}

inline std::vector<VideoSample> load_dataset(const std::string& path) {
    auto r = io::ByteReader::from_file(path);
    return decode_dataset(r);
}

/// Reads the config recorded next to a dataset file.
inline DatasetConfig load_dataset_sidecar(const std::string& path) {
    std::ifstream in(sidecar_path(path));
    if (!in) throw IoError("cannot open " + sidecar_path(path));
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(sidecar_path(path) + ": " + e.what());
    }
    if (!side.contains("config")) throw IoError(sidecar_path(path) + ": missing config");
    return dataset_config_from_json(side["config"]);
}

}  // namespace bmoe
