#include "tsjm/featurestore.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "tsjm/binary_io.hpp"
#include "tsjm/errors.hpp"

namespace tsjm {

const char* to_string(FormatErrc code) noexcept {
    switch (code) {
        case FormatErrc::BadMagic: return "bad magic";
        case FormatErrc::VersionMismatch: return "version mismatch";
        case FormatErrc::Truncated: return "truncated payload";
        case FormatErrc::TrailingData: return "trailing data";
        case FormatErrc::ChecksumMismatch: return "checksum mismatch";
        case FormatErrc::NonFinite: return "non-finite value";
        case FormatErrc::InvariantViolation: return "invariant violation";
    }
    return "unknown format error";
}

std::string_view to_string(Modality m) noexcept {
    return m == Modality::Rgb ? "rgb" : "flow";
}

void FeatureSequence::validate() const {
    if (frames.rows() == 0) throw std::invalid_argument("feature sequence has T = 0");
    if (frames.cols() == 0) throw std::invalid_argument("feature sequence has D = 0");
    for (std::size_t t = 0; t < frames.rows(); ++t) {
        double norm2 = 0.0;
        for (double v : frames.row(t)) {
            if (!std::isfinite(v)) throw std::invalid_argument("feature sequence has non-finite value");
            norm2 += v * v;
        }
        if (norm2 == 0.0) {
            throw std::invalid_argument("frame " + std::to_string(t) + " is the zero vector");
        }
    }
}

void FeatureStore::validate() const {
    if (records.empty()) throw std::invalid_argument("empty store");
    if (dim == 0) throw std::invalid_argument("store dim is 0");
    std::vector<std::size_t> per_class(num_classes, 0);
    for (const auto& r : records) {
        if (r.class_id >= num_classes) {
            throw std::invalid_argument("class_id " + std::to_string(r.class_id) + " out of range");
        }
        ++per_class[r.class_id];
        r.rgb.validate();
        r.flow.validate();
        if (r.rgb.modality != Modality::Rgb || r.flow.modality != Modality::Flow) {
            throw std::invalid_argument("record modalities are not (rgb, flow)");
        }
        if (r.rgb.length() != r.flow.length()) {
            throw std::invalid_argument("video " + std::to_string(r.video_id) +
                                        ": rgb and flow lengths differ");
        }
        if (r.rgb.dim() != dim || r.flow.dim() != dim) {
            throw std::invalid_argument("video " + std::to_string(r.video_id) +
                                        ": feature dim differs from store dim");
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (per_class[c] == 0) throw std::invalid_argument("class " + std::to_string(c) + " has no records");
    }
}

std::vector<std::vector<std::size_t>> FeatureStore::records_by_class() const {
    std::vector<std::vector<std::size_t>> out(num_classes);
    for (std::size_t i = 0; i < records.size(); ++i) out[records[i].class_id].push_back(i);
    return out;
}

const VideoRecord* FeatureStore::find_video(std::uint32_t video_id) const noexcept {
    auto it = std::find_if(records.begin(), records.end(),
                           [&](const VideoRecord& r) { return r.video_id == video_id; });
    return it == records.end() ? nullptr : &*it;
}

FeatureStore make_store(std::vector<VideoRecord> records) {
    FeatureStore s;
    for (const auto& r : records) {
        s.num_classes = std::max<std::size_t>(s.num_classes, std::size_t{r.class_id} + 1);
    }
    if (!records.empty()) s.dim = records.front().rgb.dim();
    s.records = std::move(records);
    s.validate();
    return s;
}

FeatureStore merge_stores(std::span<const FeatureStore> stores) {
    std::vector<VideoRecord> all;
    std::uint32_t class_offset = 0;
    std::uint32_t video_offset = 0;
    for (const auto& s : stores) {
        std::uint32_t max_video = 0;
        for (auto r : s.records) {
            max_video = std::max(max_video, r.video_id);
            r.class_id += class_offset;
            r.video_id += video_offset;
            all.push_back(std::move(r));
        }
        class_offset += static_cast<std::uint32_t>(s.num_classes);
        video_offset += max_video + 1;
    }
    return make_store(std::move(all));
}

std::pair<FeatureStore, FeatureStore> split_holdout(const FeatureStore& store,
                                                    std::size_t holdout_per_class) {
    const auto by_class = store.records_by_class();
    FeatureStore train{{}, store.num_classes, store.dim};
    FeatureStore held{{}, store.num_classes, store.dim};
    for (const auto& idx : by_class) {
        if (idx.size() <= holdout_per_class) {
            throw DomainError("split_holdout: every class needs more than " +
                              std::to_string(holdout_per_class) + " records");
        }
        const std::size_t cut = idx.size() - holdout_per_class;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < cut ? train : held).records.push_back(store.records[idx[i]]);
        }
    }
    if (holdout_per_class == 0) held.records.clear();
    return {std::move(train), std::move(held)};
}

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'F', 'S', 'E', 'T'};

void put_sequence(ByteWriter& w, const FeatureSequence& seq) {
    for (double v : seq.frames.flat()) w.f32(static_cast<float>(v));
}

FeatureSequence get_sequence(ByteReader& r, std::size_t t, std::size_t dim, Modality m) {
    std::vector<double> data(t * dim);
    for (auto& v : data) v = static_cast<double>(r.f32());
    return {Matrix(t, dim, std::move(data)), m};
}

}  // namespace

std::vector<std::uint8_t> encode_store(const FeatureStore& store) {
    store.validate();
    ByteWriter w;
    w.bytes(kMagic);
    w.u16(kFsetVersion);
    w.u32(static_cast<std::uint32_t>(store.records.size()));
    w.u32(static_cast<std::uint32_t>(store.dim));
    for (const auto& rec : store.records) {
        w.u32(rec.video_id);
        w.u32(rec.class_id);
        w.u32(static_cast<std::uint32_t>(rec.rgb.length()));
        put_sequence(w, rec.rgb);
        put_sequence(w, rec.flow);
    }
    w.u32(crc32_of(w.data()));
    return w.take();
}

FeatureStore decode_store(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kMagic);
    if (const auto version = r.u16(); version != kFsetVersion) {
        throw FormatError(FormatErrc::VersionMismatch, "found version " + std::to_string(version));
    }
    const std::uint32_t num_records = r.u32();
    const std::uint32_t dim = r.u32();
    if (num_records == 0) throw FormatError(FormatErrc::InvariantViolation, "empty store");
    if (dim == 0) throw FormatError(FormatErrc::InvariantViolation, "dim = 0");

    std::vector<VideoRecord> records;
    records.reserve(num_records);
    for (std::uint32_t i = 0; i < num_records; ++i) {
        VideoRecord rec;
        rec.video_id = r.u32();
        rec.class_id = r.u32();
        const std::uint32_t t = r.u32();
        if (t == 0) {
            throw FormatError(FormatErrc::InvariantViolation,
                              "record " + std::to_string(i) + " declares T = 0");
        }
        r.require(2ull * t * dim * 4);
        rec.rgb = get_sequence(r, t, dim, Modality::Rgb);
        rec.flow = get_sequence(r, t, dim, Modality::Flow);
        records.push_back(std::move(rec));
    }
    const std::size_t body = r.position();
    const std::uint32_t stored_crc = r.u32();
    if (!r.at_end()) throw FormatError(FormatErrc::TrailingData, "");
    if (crc32_of(bytes.first(body)) != stored_crc) throw FormatError(FormatErrc::ChecksumMismatch, "");

    for (const auto& rec : records) {
        for (const auto* seq : {&rec.rgb, &rec.flow}) {
            for (double v : seq->frames.flat()) {
                if (!std::isfinite(v)) {
                    throw FormatError(FormatErrc::NonFinite, "video " + std::to_string(rec.video_id));
                }
            }
        }
    }
    try {
        return make_store(std::move(records));
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatErrc::InvariantViolation, e.what());
    }
}

void save_store(const FeatureStore& store, const std::filesystem::path& path) {
    write_file(path, encode_store(store));
}

FeatureStore load_store(const std::filesystem::path& path) {
    return decode_store(read_file(path));
}

}  // namespace tsjm
