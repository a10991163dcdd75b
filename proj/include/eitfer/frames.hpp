#pragma once
// Time series of measured data vectors and their on-disk formats.
//
// Text:   "EITF1 <frame_count> <seed> <scenario_hash>"
//         then per frame "t=<seconds>" and a line of 208 f64
// Binary: "EITFB", u32 frame_count, u64 seed, u32 hash length, hash bytes,
//         then per frame f64 seconds, u32 208, 208 f64 (all little-endian)

#include "eitfer/forward.hpp"

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace eitfer {

struct Frame {
    double time = 0; // seconds
    DataVector data;
};

struct FrameProvenance {
    std::string scenario_hash = "none";
    std::uint64_t seed = 0;
    std::string mesh_hash = "none";
};

class FrameSequence {
public:
    FrameSequence() = default;
    FrameSequence(std::vector<Frame> frames, FrameProvenance provenance)
        : m_frames(std::move(frames)), m_provenance(std::move(provenance)) {
        for (std::size_t m = 1; m < m_frames.size(); ++m)
            if (!(m_frames[m].time > m_frames[m - 1].time))
                throw InvalidArgument("frame timestamps must be strictly increasing");
    }

    const std::vector<Frame> &frames() const { return m_frames; }
    const Frame &operator[](std::size_t m) const { return m_frames[m]; }
    std::size_t size() const { return m_frames.size(); }
    const FrameProvenance &provenance() const { return m_provenance; }

private:
    std::vector<Frame> m_frames;
    FrameProvenance m_provenance;
};

inline std::string frames_to_text(const FrameSequence &seq) {
    std::string out = "EITF1 " + std::to_string(seq.size()) + " " + std::to_string(seq.provenance().seed) + " " +
                      seq.provenance().scenario_hash + "\n";
    for (const auto &f : seq.frames()) {
        out += "t=" + detail::fmt_double(f.time) + "\n";
        for (int r = 0; r < kDataLength; ++r) {
            if (r) out += ' ';
            out += detail::fmt_double(f.data[r]);
        }
        out += '\n';
    }
    return out;
}

inline FrameSequence frames_from_text(const std::string &text) {
    std::istringstream in(text);
    std::string magic, hash;
    long long count = -1;
    std::uint64_t seed = 0;
    if (!(in >> magic >> count >> seed >> hash) || magic != "EITF1" || count < 0)
        throw ParseError("frame file: bad EITF1 header");
    std::vector<Frame> frames;
    for (long long m = 0; m < count; ++m) {
        std::string stamp;
        if (!(in >> stamp) || stamp.rfind("t=", 0) != 0)
            throw ParseError("frame file: expected 't=<seconds>' for frame " + std::to_string(m));
        Frame f;
        try {
            std::size_t used = 0;
            f.time = std::stod(stamp.substr(2), &used);
            if (used != stamp.size() - 2) throw std::invalid_argument("trailing");
        } catch (const std::exception &) {
            throw ParseError("frame file: bad timestamp '" + stamp + "'");
        }
        for (int r = 0; r < kDataLength; ++r)
            if (!(in >> f.data[r]))
                throw ParseError("frame file: frame " + std::to_string(m) + " has fewer than 208 values");
        frames.push_back(std::move(f));
    }
    std::string extra;
    if (in >> extra) throw ParseError("frame file: trailing content after last frame");
    try {
        return FrameSequence(std::move(frames), FrameProvenance{hash, seed, "none"});
    } catch (const InvalidArgument &e) {
        throw ParseError(std::string("frame file: ") + e.what());
    }
}

inline std::string frames_to_binary(const FrameSequence &seq) {
    std::string out = "EITFB";
    binary::put(out, static_cast<std::uint32_t>(seq.size()));
    binary::put(out, seq.provenance().seed);
    binary::put(out, static_cast<std::uint32_t>(seq.provenance().scenario_hash.size()));
    out += seq.provenance().scenario_hash;
    for (const auto &f : seq.frames()) {
        binary::put(out, f.time);
        binary::put(out, static_cast<std::uint32_t>(kDataLength));
        for (int r = 0; r < kDataLength; ++r) binary::put(out, f.data[r]);
    }
    return out;
}

inline FrameSequence frames_from_binary(std::string_view bytes) {
    binary::Reader in(bytes);
    if (in.take(5) != "EITFB") throw IoError("not a binary frame file (bad magic)");
    const auto count = in.get<std::uint32_t>();
    FrameProvenance prov;
    prov.seed = in.get<std::uint64_t>();
    prov.scenario_hash = std::string(in.take(in.get<std::uint32_t>()));
    if (count > in.remaining() / (12 + 8 * kDataLength)) throw IoError("binary frame file is truncated");
    std::vector<Frame> frames(count);
    for (auto &f : frames) {
        f.time = in.get<double>();
        if (in.get<std::uint32_t>() != kDataLength) throw IoError("binary frame must hold 208 entries");
        for (int r = 0; r < kDataLength; ++r) f.data[r] = in.get<double>();
    }
    if (in.remaining() != 0) throw IoError("trailing bytes after last frame");
    try {
        return FrameSequence(std::move(frames), std::move(prov));
    } catch (const InvalidArgument &e) {
        throw IoError(std::string("binary frame file: ") + e.what());
    }
}

// Either format, chosen by the leading magic.
inline FrameSequence load_frames(const std::string &path) {
    const std::string bytes = read_file(path);
    if (bytes.rfind("EITFB", 0) == 0) return frames_from_binary(bytes);
    return frames_from_text(bytes);
}

} // namespace eitfer
