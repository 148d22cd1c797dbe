#include "dof/radiomics/radiomics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <ostream>
#include <limits>
#include <stdexcept>
#include <string_view>

#include "dof/common/rng.hpp"

namespace dof::radiomics {

namespace {

constexpr std::string_view kMeasureNames[RegionFeatures::kMeasureCount] = {
    "volume_mm3", "longest_axis_mm", "sa_to_v_per_mm", "sphericity", "mean_intensity",
    "p10_intensity", "p90_intensity", "skewness", "variance"};

double linear_percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "volume I/O assumes little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("read_volume: truncated file");
  return v;
}

}  // namespace

void LabeledVolume::validate() const {
  const std::size_t n = voxel_count();
  if (n == 0) throw std::invalid_argument("LabeledVolume: empty grid");
  if (intensity.size() != n || mask.size() != n) {
    throw std::invalid_argument("LabeledVolume: intensity/mask sizes do not match the grid");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("LabeledVolume: spacing must be positive");
  }
}

std::uint16_t LabeledVolume::max_label() const {
  std::uint16_t m = 0;
  for (std::uint16_t l : mask) m = std::max(m, l);
  return m;
}

std::span<const std::string_view> measure_names() { return kMeasureNames; }

RegionFeatures extract_region(const LabeledVolume& vol, std::uint16_t label) {
  vol.validate();
  if (label == 0) throw std::invalid_argument("extract_region: label 0 is background");
  const auto [nx, ny, nz] = vol.dims;
  const auto [sx, sy, sz] = vol.spacing;
  auto inside = [&](std::ptrdiff_t x, std::ptrdiff_t y, std::ptrdiff_t z) {
    if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::ptrdiff_t>(nx) ||
        y >= static_cast<std::ptrdiff_t>(ny) || z >= static_cast<std::ptrdiff_t>(nz)) {
      return false;
    }
    return vol.mask[vol.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                              static_cast<std::size_t>(z))] == label;
  };

  std::size_t count = 0;
  double area = 0.0;
  std::vector<double> values;
  std::vector<std::array<double, 3>> boundary;
  const double face_x = sy * sz, face_y = sx * sz, face_z = sx * sy;
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        if (vol.mask[vol.index(x, y, z)] != label) continue;
        ++count;
        values.push_back(vol.intensity[vol.index(x, y, z)]);
        const auto px = static_cast<std::ptrdiff_t>(x), py = static_cast<std::ptrdiff_t>(y),
                   pz = static_cast<std::ptrdiff_t>(z);
        int exposed_x = !inside(px - 1, py, pz) + !inside(px + 1, py, pz);
        int exposed_y = !inside(px, py - 1, pz) + !inside(px, py + 1, pz);
        int exposed_z = !inside(px, py, pz - 1) + !inside(px, py, pz + 1);
        area += exposed_x * face_x + exposed_y * face_y + exposed_z * face_z;
        if (exposed_x + exposed_y + exposed_z > 0) {
          boundary.push_back({static_cast<double>(x) * sx, static_cast<double>(y) * sy,
                              static_cast<double>(z) * sz});
        }
      }
    }
  }
  if (count == 0) {
    throw std::invalid_argument("extract_region: label " + std::to_string(label) + " has no voxels");
  }

  RegionFeatures f;
  f.volume = static_cast<double>(count) * sx * sy * sz;
  f.surface_area = area;
  f.surface_to_volume = area / f.volume;
  f.sphericity = std::cbrt(std::numbers::pi) * std::pow(6.0 * f.volume, 2.0 / 3.0) / area;

  double best = 0.0;
  for (std::size_t i = 0; i < boundary.size(); ++i) {
    const auto& a = boundary[i];
    for (std::size_t j = i + 1; j < boundary.size(); ++j) {
      const auto& b = boundary[j];
      const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
      best = std::max(best, dx * dx + dy * dy + dz * dz);
    }
  }
  f.longest_axis = std::sqrt(best);

  std::sort(values.begin(), values.end());
  f.p10 = linear_percentile(values, 0.10);
  f.p90 = linear_percentile(values, 0.90);
  if (values.front() == values.back()) {
    f.mean = values.front();
    f.variance = 0.0;
    f.skewness = 0.0;
    return f;
  }
  double total = 0.0;
  for (double v : values) total += v;
  const double n = static_cast<double>(values.size());
  f.mean = total / n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : values) {
    const double d = v - f.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  f.variance = m2;
  f.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return f;
}

std::vector<RegionFeatures> extract_all(const LabeledVolume& vol) {
  std::vector<RegionFeatures> out;
  const std::uint16_t top = vol.max_label();
  for (std::uint16_t l = 1; l <= top; ++l) out.push_back(extract_region(vol, l));
  return out;
}

std::vector<double> summarize_patient(std::span<const RegionFeatures> t1_regions,
                                      std::span<const RegionFeatures> flair_regions) {
  if (t1_regions.empty() || flair_regions.empty()) {
    throw std::invalid_argument("summarize_patient: each sequence needs at least one region");
  }
  std::vector<double> out;
  out.reserve(kPatientFeatureCount);
  out.push_back(static_cast<double>(t1_regions.size()));
  out.push_back(static_cast<double>(flair_regions.size()));
  for (std::size_t m = 0; m < RegionFeatures::kMeasureCount; ++m) {
    for (const auto regions : {t1_regions, flair_regions}) {
      double sum = 0.0;
      double largest = -std::numeric_limits<double>::infinity();
      for (const RegionFeatures& r : regions) {
        const double v = r.measures()[m];
        sum += v;
        largest = std::max(largest, v);
      }
      out.push_back(sum);
      out.push_back(largest);
      out.push_back(sum / static_cast<double>(regions.size()));
    }
  }
  return out;
}

std::vector<std::string> patient_feature_names() {
  std::vector<std::string> names{"f1_regions_t1", "f2_regions_flair"};
  std::size_t f = 3;
  for (std::string_view measure : kMeasureNames) {
    for (std::string_view seq : {"t1", "flair"}) {
      for (std::string_view how : {"sum", "largest", "avg"}) {
        names.push_back("f" + std::to_string(f++) + "_" + std::string(measure) + "_" + std::string(how) +
                        "_" + std::string(seq));
      }
    }
  }
  return names;
}

LabeledVolume paint_phantom(std::array<std::size_t, 3> dims, std::array<double, 3> spacing,
                            std::span<const Ellipsoid> shapes, double noise, std::uint64_t seed) {
  LabeledVolume vol;
  vol.dims = dims;
  vol.spacing = spacing;
  vol.intensity.assign(vol.voxel_count(), 0.0);
  vol.mask.assign(vol.voxel_count(), 0);
  Rng rng(seed);
  for (std::size_t z = 0; z < dims[2]; ++z) {
    for (std::size_t y = 0; y < dims[1]; ++y) {
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const double p[3] = {static_cast<double>(x) * spacing[0], static_cast<double>(y) * spacing[1],
                             static_cast<double>(z) * spacing[2]};
        const std::size_t i = vol.index(x, y, z);
        for (const Ellipsoid& e : shapes) {
          double r = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double d = (p[a] - e.center[a]) / e.radii[a];
            r += d * d;
          }
          if (r <= 1.0) {
            vol.mask[i] = e.label;
            vol.intensity[i] = e.intensity + e.gradient * p[0];
          }
        }
        if (noise > 0.0) vol.intensity[i] += noise * rng.normal();
      }
    }
  }
  return vol;
}

void write_volume(const std::filesystem::path& path, const LabeledVolume& vol, IntensityType dtype) {
  vol.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_volume: cannot open " + path.string());
  os.write("DOFV", 4);
  write_pod<std::uint32_t>(os, 1);
  for (std::size_t d : vol.dims) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double s : vol.spacing) write_pod<double>(os, s);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dtype));
  for (double v : vol.intensity) {
    switch (dtype) {
      case IntensityType::kFloat32: write_pod<float>(os, static_cast<float>(v)); break;
      case IntensityType::kFloat64: write_pod<double>(os, v); break;
      case IntensityType::kInt16: write_pod<std::int16_t>(os, static_cast<std::int16_t>(std::lround(v))); break;
    }
  }
  for (std::uint16_t l : vol.mask) write_pod<std::uint16_t>(os, l);
  if (!os) throw std::runtime_error("write_volume: write failed for " + path.string());
}

LabeledVolume read_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_volume: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DOFV", 4) != 0) throw std::runtime_error("read_volume: bad magic in " + path.string());
  if (const auto version = read_pod<std::uint32_t>(is); version != 1) {
    throw std::runtime_error("read_volume: unsupported version " + std::to_string(version));
  }
  LabeledVolume vol;
  for (auto& d : vol.dims) d = read_pod<std::uint32_t>(is);
  for (auto& s : vol.spacing) s = read_pod<double>(is);
  const auto dtype = static_cast<IntensityType>(read_pod<std::uint32_t>(is));
  const std::size_t n = vol.voxel_count();
  vol.intensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case IntensityType::kFloat32: vol.intensity[i] = read_pod<float>(is); break;
      case IntensityType::kFloat64: vol.intensity[i] = read_pod<double>(is); break;
      case IntensityType::kInt16: vol.intensity[i] = read_pod<std::int16_t>(is); break;
      default: throw std::runtime_error("read_volume: unknown intensity dtype");
    }
  }
  vol.mask.resize(n);
  for (auto& l : vol.mask) l = read_pod<std::uint16_t>(is);
  vol.validate();
  return vol;
}

void write_region_csv_header(std::ostream& os) {
  os << "patient,sequence,region";
  for (std::string_view name : kMeasureNames) os << ',' << name;
  os << '\n';
}

void write_region_csv_rows(std::ostream& os, const std::string& patient, const std::string& sequence,
                           std::span<const RegionFeatures> regions) {
  const auto old_precision = os.precision(17);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    os << patient << ',' << sequence << ',' << (r + 1);
    for (double v : regions[r].measures()) os << ',' << v;
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace dof::radiomics
