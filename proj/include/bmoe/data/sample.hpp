#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bmoe/tensor.hpp"

namespace bmoe {

enum class RegionId : std::uint8_t { Head = 0, Body = 1, UpperLimb = 2, LowerLimb = 3 };

inline constexpr std::size_t kNumRegions = 4;
inline constexpr std::array<RegionId, kNumRegions> kAllRegions{RegionId::Head, RegionId::Body, RegionId::UpperLimb,
                                                              RegionId::LowerLimb};

constexpr std::size_t index_of(RegionId r) { return static_cast<std::size_t>(r); }

inline std::string_view region_name(RegionId r) {
    switch (r) {
        case RegionId::Head: return "head";
        case RegionId::Body: return "body";
        case RegionId::UpperLimb: return "upper_limb";
        case RegionId::LowerLimb: return "lower_limb";
    }
    return "unknown";
}

inline std::optional<RegionId> parse_region(std::string_view name) {
    for (RegionId r : kAllRegions)
        if (region_name(r) == name) return r;
    return std::nullopt;
}

inline RegionId region_from_index(std::size_t i) {
    if (i >= kNumRegions) throw ContractError("region index " + std::to_string(i) + " out of range");
    return static_cast<RegionId>(i);
}

/// One synthetic clip: frames [T x H x W x C] plus one binary mask per region.
struct VideoSample {
    std::size_t frames_count = 0;  // T
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> frames;
    std::array<std::vector<std::uint8_t>, kNumRegions> masks;
    std::uint32_t label = 0;
    RegionId region = RegionId::Head;

    Shape shape() const { return {frames_count, height, width, channels}; }

    float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
        return frames[((t * height + y) * width + x) * channels + c];
    }
    float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return frames[((t * height + y) * width + x) * channels + c];
    }
    bool in_mask(RegionId r, std::size_t y, std::size_t x) const { return masks[index_of(r)][y * width + x] != 0; }

    bool operator==(const VideoSample&) const = default;
};

/// Checks mask shape, {0,1} values and pairwise disjointness.
inline void validate_sample(const VideoSample& s) {
    if (s.frames.size() != s.frames_count * s.height * s.width * s.channels || s.frames.empty()) {
        throw ContractError("sample frames do not match " + shape_str(s.shape()));
    }
    for (std::size_t p = 0; p < s.height * s.width; ++p) {
        int total = 0;
        for (const auto& m : s.masks) {
            if (m.size() != s.height * s.width) throw ContractError("sample mask does not match frame size");
            if (m[p] > 1) throw ContractError("sample mask values must be 0 or 1");
            total += m[p];
        }
        if (total > 1) throw ContractError("sample region masks overlap");
    }
}

template <typename S>
Tensor<S> frames_tensor(const VideoSample& s) {
    return Tensor<S>(s.shape(), std::vector<S>(s.frames.begin(), s.frames.end()));
}

}  // namespace bmoe
