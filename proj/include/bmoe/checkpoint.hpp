#pragma once

// Named-tensor checkpoints.
//
// Layout (all integers u32 little-endian):
//   "BMO1" | entry count | per entry: name length, UTF-8 name, rank,
//   rank extents, product(extents) float32 values.

#include <string>
#include <vector>

#include "bmoe/binary_io.hpp"
#include "bmoe/params.hpp"

namespace bmoe {

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline constexpr std::string_view kCheckpointMagic = "BMO1";

inline std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    io::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name);
        w.u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
        for (float v : e.values) w.f32(v);
    }
    return w.buffer();
}

inline std::vector<CheckpointEntry> decode_checkpoint(io::ByteReader& r) {
    if (r.bytes(4) != kCheckpointMagic) throw IoError(r.source() + ": bad checkpoint magic");
    const std::uint32_t count = r.u32();
    std::vector<CheckpointEntry> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u32());
        const std::uint32_t rank = r.u32();
        for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
        const std::size_t n = numel(e.shape);
        r.need(4 * n);
        e.values.resize(n);
        for (auto& v : e.values) v = r.f32();
        out.push_back(std::move(e));
    }
    if (!r.at_end()) throw IoError(r.source() + ": trailing bytes after last checkpoint entry");
    return out;
}

template <typename S>
std::vector<CheckpointEntry> to_entries(const ParamList<S>& params) {
    std::vector<CheckpointEntry> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        CheckpointEntry e{p.name, p.tensor.shape(), {}};
        e.values.reserve(p.tensor.size());
        for (S v : p.tensor.data()) e.values.push_back(static_cast<float>(v));
        out.push_back(std::move(e));
    }
    return out;
}

template <typename S>
void save_checkpoint(const std::string& path, const ParamList<S>& params) {
    io::ByteWriter w;
    const auto bytes = encode_checkpoint(to_entries(params));
    w.bytes(std::string_view(bytes.data(), bytes.size()));
    w.write_file(path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    auto r = io::ByteReader::from_file(path);
    return decode_checkpoint(r);
}

/// Copies checkpoint values into matching parameters. With `require_all`,
/// every parameter must be present; shape mismatches always throw and name
/// the first offending tensor. Returns the number of parameters loaded.
template <typename S>
std::size_t apply_checkpoint(const ParamList<S>& params, const std::vector<CheckpointEntry>& entries,
                             bool require_all = true) {
    std::size_t loaded = 0;
    for (const auto& p : params) {
        const CheckpointEntry* match = nullptr;
        for (const auto& e : entries)
            if (e.name == p.name) match = &e;
        if (!match) {
            if (require_all) throw IoError("checkpoint is missing tensor " + p.name);
            continue;
        }
        if (match->shape != p.tensor.shape()) {
            throw DimensionError("checkpoint tensor " + p.name + " has shape " + shape_str(match->shape) +
                                 " but the model expects " + shape_str(p.tensor.shape()));
        }
        auto t = p.tensor;
        auto& dst = t.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(match->values[i]);
        ++loaded;
    }
    return loaded;
}

}  // namespace bmoe
