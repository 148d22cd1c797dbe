#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dof::radiomics {

/// Intensity grid plus region labels on the same lattice. Index order is
/// x fastest, then y, then z: index = x + nx·(y + ny·z).
struct LabeledVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along x, y, z
  std::vector<double> intensity;
  std::vector<std::uint16_t> mask;  // 0 = background, k = region k

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  /// Throws std::invalid_argument on inconsistent sizes or spacing ≤ 0.
  void validate() const;
  /// Highest label present (labels are 1..max).
  std::uint16_t max_label() const;
};

/// The nine per-region measures, in feature-table order.
struct RegionFeatures {
  double volume = 0.0;            // mm³
  double longest_axis = 0.0;      // mm
  double surface_to_volume = 0.0; // 1/mm
  double sphericity = 0.0;
  double mean = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
  double skewness = 0.0;
  double variance = 0.0;

  double surface_area = 0.0;  // mm², kept for reporting

  static constexpr std::size_t kMeasureCount = 9;
  std::array<double, kMeasureCount> measures() const {
    return {volume, longest_axis, surface_to_volume, sphericity, mean, p10, p90, skewness, variance};
  }
};

std::span<const std::string_view> measure_names();

/// Shape and intensity features of region `label`.
/// Volume counts voxels; surface area counts voxel faces that border a voxel
/// outside the region (or the grid edge); longest axis is the largest distance
/// between centers of boundary voxels (6-connected boundary); sphericity is
/// π^{1/3}(6V)^{2/3}/A. Intensity variance and skewness are population
/// moments; percentiles interpolate linearly between order statistics.
/// Throws std::invalid_argument when the region is empty.
RegionFeatures extract_region(const LabeledVolume& vol, std::uint16_t label);

/// Features of every label 1..max_label() in the volume.
std::vector<RegionFeatures> extract_all(const LabeledVolume& vol);

inline constexpr std::size_t kPatientFeatureCount = 56;

/// Patient-level vector from the regions of the two sequences:
///   [count_t1, count_flair,
///    for each measure: t1 sum, t1 largest, t1 avg, flair sum, flair largest, flair avg]
/// Throws std::invalid_argument if a sequence has no region.
std::vector<double> summarize_patient(std::span<const RegionFeatures> t1_regions,
                                      std::span<const RegionFeatures> flair_regions);

/// Column names matching summarize_patient order (f1..f56 with descriptions).
std::vector<std::string> patient_feature_names();

/// Axis-aligned ellipsoid for synthetic phantoms. Intensity inside is
/// `intensity + gradient·x_mm` plus noise.
struct Ellipsoid {
  std::array<double, 3> center{0, 0, 0};  // mm
  std::array<double, 3> radii{1, 1, 1};   // mm
  std::uint16_t label = 1;
  double intensity = 100.0;
  double gradient = 0.0;
};

/// Volume with the given ellipsoids painted in order (later ones win) over a
/// zero background; intensity noise is N(0, noise²) from `seed`.
LabeledVolume paint_phantom(std::array<std::size_t, 3> dims, std::array<double, 3> spacing,
                            std::span<const Ellipsoid> shapes, double noise = 0.0, std::uint64_t seed = 1);

// Flat binary volume format, little-endian:
//   char[4]  magic "DOFV"
//   uint32   version (1)
//   uint32   nx, ny, nz
//   float64  sx, sy, sz          (spacing, mm)
//   uint32   intensity dtype     (0 = float32, 1 = float64, 2 = int16)
//   intensity values             (nx·ny·nz, dtype as declared)
//   uint16   labels              (nx·ny·nz)
enum class IntensityType : std::uint32_t { kFloat32 = 0, kFloat64 = 1, kInt16 = 2 };

void write_volume(const std::filesystem::path& path, const LabeledVolume& vol,
                  IntensityType dtype = IntensityType::kFloat64);
LabeledVolume read_volume(const std::filesystem::path& path);

/// CSV rows keyed by patient/sequence/region with the nine measures.
void write_region_csv_header(std::ostream& os);
void write_region_csv_rows(std::ostream& os, const std::string& patient, const std::string& sequence,
                           std::span<const RegionFeatures> regions);

}  // namespace dof::radiomics
