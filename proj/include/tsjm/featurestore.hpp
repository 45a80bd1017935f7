#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "tsjm/matrix.hpp"

namespace tsjm {

enum class Modality { Rgb, Flow };

std::string_view to_string(Modality m) noexcept;

/// One video in one modality: T frame vectors of dimension D, stored as the
/// rows of a T x D matrix.
struct FeatureSequence {
    Matrix frames;
    Modality modality = Modality::Rgb;

    std::size_t length() const noexcept { return frames.rows(); }
    std::size_t dim() const noexcept { return frames.cols(); }
    std::span<const double> frame(std::size_t t) const noexcept { return frames.row(t); }

    /// Throws std::invalid_argument unless T >= 1, D >= 1, every value is
    /// finite and no frame is the zero vector.
    void validate() const;

    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct VideoRecord {
    std::uint32_t video_id = 0;
    std::uint32_t class_id = 0;
    FeatureSequence rgb;
    FeatureSequence flow;

    friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

struct FeatureStore {
    std::vector<VideoRecord> records;
    std::size_t num_classes = 0;
    std::size_t dim = 0;

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate() const;

    /// Indices into `records`, grouped by class id.
    std::vector<std::vector<std::size_t>> records_by_class() const;

    const VideoRecord* find_video(std::uint32_t video_id) const noexcept;

    friend bool operator==(const FeatureStore&, const FeatureStore&) = default;
};

/// Builds a store from records, deriving num_classes and dim, then validates.
FeatureStore make_store(std::vector<VideoRecord> records);

/// Concatenates stores, renumbering class ids (and video ids) of later stores
/// so they do not collide.
FeatureStore merge_stores(std::span<const FeatureStore> stores);

/// Splits off the last `holdout_per_class` records of each class. Returns
/// (train, holdout); both keep the original class ids.
std::pair<FeatureStore, FeatureStore> split_holdout(const FeatureStore& store,
                                                    std::size_t holdout_per_class);

// FSET binary format, little-endian:
//   "FSET" | version u16 | num_records u32 | dim u32
//   per record: video_id u32 | class_id u32 | T u32 | rgb T*dim f32 | flow T*dim f32
//   CRC32 (IEEE) of every preceding byte, u32
inline constexpr std::uint16_t kFsetVersion = 1;

std::vector<std::uint8_t> encode_store(const FeatureStore& store);
FeatureStore decode_store(std::span<const std::uint8_t> bytes);

/// Values are written as f32; the round trip is bit-exact for stores whose
/// values are f32-representable (every generated or loaded store is).
void save_store(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore load_store(const std::filesystem::path& path);

struct SynthConfig {
    std::size_t num_classes = 24;
    std::size_t videos_per_class = 20;
    std::size_t frames = 8;
    std::size_t dim = 32;
    std::size_t num_subactions = 4;
    double warp_min = 0.5;
    double warp_max = 2.0;
    bool permute_subactions = true;
    double noise_sigma = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deterministic synthetic dataset. Each class owns an ordered list of unit
/// anchors; each video (optionally) shuffles the sub-action order, warps the
/// sub-action durations, resamples to T frames and emits
///   rgb[t]  = anchor(t) + noise
///   flow[t] = M * (anchor(t) - previous anchor) + noise
/// where M is a fixed seeded rotation and the anchor preceding the first
/// sub-action is the origin.
FeatureStore gen_synthetic(const SynthConfig& cfg);

}  // namespace tsjm
