#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace histofuse::pathomics {

struct Pixel {
    int row = 0;
    int col = 0;

    friend bool operator==(const Pixel&, const Pixel&) = default;
};

// One segmented nucleus: mask pixels plus their gray values (0..255).
struct NucleusRegion {
    std::vector<Pixel> pixels;
    std::vector<double> intensities;
};

// Gray levels 1..n_bins, one per pixel of the source region.
struct QuantizedRegion {
    std::vector<Pixel> pixels;
    std::vector<int> levels;
    int n_bins = 0;
};

inline constexpr int kDefaultBins = 32;
// Coarseness reported when the NGTDM has no tone differences at all.
inline constexpr double kCoarsenessCap = 1e6;

inline constexpr std::size_t kLocationCount = 2;
inline constexpr std::size_t kFirstOrderCount = 18;
// Sum average is left out: for a symmetric matrix it is exactly twice the joint average.
inline constexpr std::size_t kGlcmCount = 23;
inline constexpr std::size_t kGldmCount = 14;
inline constexpr std::size_t kGlrlmCount = 16;
inline constexpr std::size_t kGlszmCount = 16;
inline constexpr std::size_t kNgtdmCount = 5;
inline constexpr std::size_t kFeatureCount = kLocationCount + kFirstOrderCount + kGlcmCount + kGldmCount +
                                             kGlrlmCount + kGlszmCount + kNgtdmCount;
static_assert(kFeatureCount == 94);

using FeatureVector = std::array<double, kFeatureCount>;

// Feature names in vector order (format version 1).
const std::array<std::string_view, kFeatureCount>& feature_names();

// Checks non-emptiness, unique coordinates and the 0..255 intensity range.
void validate(const NucleusRegion& region);

// Fixed bin count over the region's [min, max]; constant regions map to level 1.
QuantizedRegion quantize(const NucleusRegion& region, int n_bins = kDefaultBins);

// Mean of the (row, col) pixel coordinates.
std::array<double, kLocationCount> location_features(const NucleusRegion& region);
std::array<double, kFirstOrderCount> first_order_features(const NucleusRegion& region, int n_bins = kDefaultBins);

std::array<double, kGlcmCount> glcm_features(const QuantizedRegion& q);
std::array<double, kGldmCount> gldm_features(const QuantizedRegion& q);
std::array<double, kGlrlmCount> glrlm_features(const QuantizedRegion& q);
std::array<double, kGlszmCount> glszm_features(const QuantizedRegion& q);
std::array<double, kNgtdmCount> ngtdm_features(const QuantizedRegion& q);

// Symmetric co-occurrence counts for a single offset, n_bins × n_bins row-major.
std::vector<double> cooccurrence_counts(const QuantizedRegion& q, int drow, int dcol);

FeatureVector extract_node_features(const NucleusRegion& region, int n_bins = kDefaultBins);

}  // namespace histofuse::pathomics
