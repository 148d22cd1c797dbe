#include "dof/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "dof/common/errors.hpp"
#include "dof/common/rng.hpp"
#include "json.hpp"

namespace dof::synth {

namespace {

constexpr std::uint64_t kLoadingStream = 0x10AD;
constexpr std::uint64_t kPatientStream = 0x9A71;
constexpr double kCensoringTolerance = 0.02;

struct FeatureLoading {
  std::vector<double> shared, unique, offset, scale;
};

struct PatientDraw {
  std::vector<double> latent;
  std::vector<std::vector<std::vector<double>>> samples;  // modality → sample → feature
  double event_time = 0.0;
  double censor_u = 0.0;
};

// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng) { return (static_cast<double>(rng.next() >> 11) + 0.5) * 0x1.0p-53; }

PatientDraw draw_patient(const CohortSpec& spec, const std::vector<FeatureLoading>& loadings,
                         std::size_t patient) {
  Rng rng(derive_seed(derive_seed(spec.seed, kPatientStream), patient));
  PatientDraw d;
  d.latent.resize(spec.latent_count());
  for (double& z : d.latent) z = rng.normal();

  double risk = spec.beta_shared * d.latent[0];
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) risk += spec.beta_unique[m] * d.latent[m + 1];

  d.samples.resize(spec.modalities.size());
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const ModalitySpec& ms = spec.modalities[m];
    const FeatureLoading& fl = loadings[m];
    const std::size_t width = ms.width();
    std::vector<double> base(width);
    for (std::size_t j = 0; j < width; ++j) {
      base[j] = fl.shared[j] * ms.shared_loading * d.latent[0] +
                fl.unique[j] * ms.unique_loading * d.latent[m + 1] + ms.noise * rng.normal();
    }
    const std::size_t count = ms.min_samples + rng.below(ms.max_samples - ms.min_samples + 1);
    for (std::size_t k = 0; k < count; ++k) {
      std::vector<double> x(width);
      for (std::size_t j = 0; j < width; ++j) {
        const double v = count == 1 ? base[j] : base[j] + ms.sample_jitter * rng.normal();
        x[j] = fl.offset[j] + fl.scale[j] * v;
      }
      d.samples[m].push_back(std::move(x));
    }
  }
  d.event_time = -std::log(open_uniform(rng)) / (spec.baseline_hazard * std::exp(risk));
  d.censor_u = open_uniform(rng);
  return d;
}

double censored_fraction(const std::vector<PatientDraw>& draws, double c) {
  std::size_t censored = 0;
  for (const PatientDraw& d : draws) censored += c * d.censor_u < d.event_time;
  return static_cast<double>(censored) / static_cast<double>(draws.size());
}

double solve_censor_scale(const std::vector<PatientDraw>& draws, double target) {
  if (target == 0.0) return std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const PatientDraw& d : draws) hi = std::max(hi, d.event_time / d.censor_u);
  hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(draws, mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double f_lo = censored_fraction(draws, lo), f_hi = censored_fraction(draws, hi);
  const double c = std::abs(f_lo - target) < std::abs(f_hi - target) ? lo : hi;
  const double realized = censored_fraction(draws, c);
  if (std::abs(realized - target) > kCensoringTolerance) {
    std::ostringstream msg;
    msg << "censoring target " << target << " unreachable for " << draws.size()
        << " patients (closest realized rate " << realized << ")";
    throw ConfigError(msg.str());
  }
  return c;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& file) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("bad number '" + s + "' in " + file.string());
  return v;
}

}  // namespace

std::size_t ModalitySpec::width() const {
  return std::accumulate(branch_widths.begin(), branch_widths.end(), std::size_t{0});
}

void CohortSpec::validate() const {
  if (patients < 10) throw ConfigError("cohort needs at least 10 patients");
  if (!(censoring >= 0.0 && censoring < 1.0)) throw ConfigError("censoring target must lie in [0, 1)");
  if (!(baseline_hazard > 0.0)) throw ConfigError("baseline hazard must be positive");
  if (modalities.empty()) throw ConfigError("cohort needs at least one modality");
  if (beta_unique.size() != modalities.size()) {
    throw ConfigError("beta_unique needs one entry per modality (" + std::to_string(modalities.size()) + ")");
  }
  for (const ModalitySpec& m : modalities) {
    if (m.name.empty()) throw ConfigError("modality without a name");
    if (m.width() < latent_count()) {
      throw ConfigError("modality " + m.name + ": width " + std::to_string(m.width()) +
                        " below latent count " + std::to_string(latent_count()));
    }
    if (m.kind == "radiology" ? m.branch_widths.size() != 3 : m.branch_widths.size() != 1) {
      throw ConfigError("modality " + m.name + ": branch widths do not fit kind " + m.kind);
    }
    if (m.min_samples < 1 || m.min_samples > m.max_samples) {
      throw ConfigError("modality " + m.name + ": need 1 <= min_samples <= max_samples");
    }
  }
}

Tensor ModalityBlock::sample(std::size_t patient, std::size_t k) const {
  const std::size_t col = offsets[patient] + k;
  Tensor out = Tensor::matrix(width(), 1);
  for (std::size_t r = 0; r < width(); ++r) out(r, 0) = features(r, col);
  return out;
}

std::size_t Cohort::modality_index(const std::string& name) const {
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    if (modalities[m].name == name) return m;
  }
  throw ConfigError("cohort has no modality named '" + name + "'");
}

void Cohort::validate() const {
  survival.validate();
  if (patient_ids.size() != size()) throw std::invalid_argument("cohort: patient id count differs from N");
  for (const ModalityBlock& b : modalities) {
    if (b.offsets.size() != size() + 1 || b.offsets.front() != 0 || b.offsets.back() != b.features.cols()) {
      throw std::invalid_argument("cohort: bad sample offsets for modality " + b.name);
    }
    for (std::size_t p = 0; p < size(); ++p) {
      if (b.offsets[p + 1] <= b.offsets[p]) {
        throw std::invalid_argument("cohort: patient " + patient_ids[p] + " has no " + b.name + " sample");
      }
    }
  }
}

GeneratedCohort generate(const CohortSpec& spec) {
  spec.validate();
  const std::size_t n = spec.patients;

  std::vector<FeatureLoading> loadings(spec.modalities.size());
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    Rng rng(derive_seed(derive_seed(spec.seed, kLoadingStream), m));
    FeatureLoading& fl = loadings[m];
    for (std::size_t j = 0; j < spec.modalities[m].width(); ++j) {
      fl.shared.push_back(rng.uniform(0.5, 1.5));
      fl.unique.push_back(rng.uniform(0.5, 1.5));
      fl.offset.push_back(rng.uniform(-2.0, 2.0));
      fl.scale.push_back(rng.uniform(0.5, 2.0));
    }
  }

  std::vector<PatientDraw> draws(n);
  const std::size_t block = 256;
  const std::size_t blocks = (n + block - 1) / block;
  const std::size_t workers =
      std::min<std::size_t>(blocks, std::max(1u, std::thread::hardware_concurrency()));
  auto run_blocks = [&](std::size_t first) {
    for (std::size_t b = first; b < blocks; b += workers) {
      for (std::size_t p = b * block; p < std::min(n, (b + 1) * block); ++p) {
        draws[p] = draw_patient(spec, loadings, p);
      }
    }
  };
  if (workers <= 1) {
    run_blocks(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_blocks, w);
  }

  GeneratedCohort out;
  HiddenTruth& truth = out.truth;
  Cohort& cohort = out.cohort;
  truth.censor_scale = solve_censor_scale(draws, spec.censoring);
  truth.latent = Tensor::matrix(spec.latent_count(), n);
  for (std::size_t p = 0; p < n; ++p) {
    const PatientDraw& d = draws[p];
    double risk = spec.beta_shared * d.latent[0];
    for (std::size_t m = 0; m < spec.modalities.size(); ++m) risk += spec.beta_unique[m] * d.latent[m + 1];
    for (std::size_t k = 0; k < d.latent.size(); ++k) truth.latent(k, p) = d.latent[k];
    truth.risk.push_back(risk);
    truth.event_time.push_back(d.event_time);
    const double c = std::isinf(truth.censor_scale) ? truth.censor_scale : truth.censor_scale * d.censor_u;
    truth.censor_time.push_back(c);
    cohort.survival.time.push_back(std::min(d.event_time, c));
    cohort.survival.event.push_back(d.event_time <= c ? 1 : 0);
    cohort.patient_ids.push_back("P" + std::to_string(p + 1));
  }

  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const ModalitySpec& ms = spec.modalities[m];
    ModalityBlock b;
    b.name = ms.name;
    b.kind = ms.kind;
    b.branch_widths = ms.branch_widths;
    b.offsets.assign(1, 0);
    for (const PatientDraw& d : draws) b.offsets.push_back(b.offsets.back() + d.samples[m].size());
    b.features = Tensor::matrix(ms.width(), b.offsets.back());
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t k = 0; k < draws[p].samples[m].size(); ++k) {
        const std::vector<double>& x = draws[p].samples[m][k];
        for (std::size_t j = 0; j < x.size(); ++j) b.features(j, b.offsets[p] + k) = x[j];
      }
    }
    cohort.modalities.push_back(std::move(b));
  }
  cohort.validate();
  return out;
}

CohortSpec complementary_preset(std::size_t patients, std::uint64_t seed) {
  CohortSpec s;
  s.patients = patients;
  s.seed = seed;
  ModalitySpec r{.name = "R", .kind = "radiology", .branch_widths = {9, 9, 56}};
  r.min_samples = r.max_samples = 4;
  ModalitySpec p{.name = "P", .kind = "mlp", .branch_widths = {80}};
  p.min_samples = 1;
  p.max_samples = 3;
  ModalitySpec g{.name = "G", .kind = "snn", .branch_widths = {80}};
  s.modalities = {r, p, g};
  s.beta_shared = 0.3;
  s.beta_unique = {1.0, 0.8, 0.6};
  s.baseline_hazard = 0.1;
  s.censoring = 0.3;
  return s;
}

CohortSpec redundant_preset(std::size_t patients, std::uint64_t seed) {
  CohortSpec s = complementary_preset(patients, seed);
  for (ModalitySpec& m : s.modalities) {
    m.shared_loading = 1.0;
    m.unique_loading = 0.0;
    m.noise = 0.3;
    m.sample_jitter = 0.1;
  }
  s.beta_shared = 1.2;
  s.beta_unique.assign(s.modalities.size(), 0.0);
  return s;
}

std::vector<double> latent_oracle_risk(const CohortSpec& spec, const HiddenTruth& truth,
                                       const std::vector<std::size_t>& modalities) {
  std::vector<double> out(truth.latent.cols());
  for (std::size_t p = 0; p < out.size(); ++p) {
    double r = spec.beta_shared * truth.latent(0, p);
    for (std::size_t m : modalities) r += spec.beta_unique.at(m) * truth.latent(m + 1, p);
    out[p] = r;
  }
  return out;
}

Tensor patient_means(const ModalityBlock& block) {
  const std::size_t n = block.offsets.size() - 1;
  Tensor out = Tensor::matrix(block.width(), n);
  for (std::size_t p = 0; p < n; ++p) {
    const double inv = 1.0 / static_cast<double>(block.samples(p));
    for (std::size_t r = 0; r < block.width(); ++r) {
      double s = 0.0;
      for (std::size_t c = block.offsets[p]; c < block.offsets[p + 1]; ++c) s += block.features(r, c);
      out(r, p) = s * inv;
    }
  }
  return out;
}

void write_bundle(const std::filesystem::path& dir, const Cohort& cohort) {
  cohort.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["format"] = "dof-cohort";
  meta["version"] = 1;
  meta["patients"] = cohort.size();
  meta["modalities"] = nlohmann::ordered_json::array();
  for (const ModalityBlock& b : cohort.modalities) {
    const std::string file = "modality_" + b.name + ".csv";
    meta["modalities"].push_back({{"name", b.name}, {"kind", b.kind}, {"branch_widths", b.branch_widths},
                                  {"file", file}});
    std::ofstream os(dir / file);
    if (!os) throw std::runtime_error("cannot write " + (dir / file).string());
    os.precision(17);
    os << "patient,sample";
    for (std::size_t j = 0; j < b.width(); ++j) os << ",f" << (j + 1);
    os << '\n';
    for (std::size_t p = 0; p < cohort.size(); ++p) {
      for (std::size_t k = 0; k < b.samples(p); ++k) {
        os << cohort.patient_ids[p] << ',' << (k + 1);
        for (std::size_t j = 0; j < b.width(); ++j) os << ',' << b.features(j, b.offsets[p] + k);
        os << '\n';
      }
    }
  }
  std::ofstream os(dir / "outcomes.csv");
  if (!os) throw std::runtime_error("cannot write " + (dir / "outcomes.csv").string());
  os.precision(17);
  os << "patient,time,event\n";
  for (std::size_t p = 0; p < cohort.size(); ++p) {
    os << cohort.patient_ids[p] << ',' << cohort.survival.time[p] << ',' << cohort.survival.event[p] << '\n';
  }
  std::ofstream js(dir / "cohort.json");
  js << meta.dump(2) << '\n';
}

Cohort read_bundle(const std::filesystem::path& dir) {
  std::ifstream js(dir / "cohort.json");
  if (!js) throw ConfigError("no cohort.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cohort.json: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "dof-cohort") throw ConfigError("cohort.json: unexpected format");

  Cohort cohort;
  std::ifstream os(dir / "outcomes.csv");
  if (!os) throw ConfigError("no outcomes.csv in " + dir.string());
  std::string line;
  std::getline(os, line);
  while (std::getline(os, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw ConfigError("outcomes.csv: expected 3 columns in '" + line + "'");
    cohort.patient_ids.push_back(cells[0]);
    cohort.survival.time.push_back(parse_double(cells[1], dir / "outcomes.csv"));
    cohort.survival.event.push_back(static_cast<int>(parse_double(cells[2], dir / "outcomes.csv")));
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t p = 0; p < cohort.patient_ids.size(); ++p) index[cohort.patient_ids[p]] = p;

  for (const auto& m : meta.at("modalities")) {
    ModalityBlock b;
    b.name = m.at("name").get<std::string>();
    b.kind = m.at("kind").get<std::string>();
    b.branch_widths = m.at("branch_widths").get<std::vector<std::size_t>>();
    const std::filesystem::path file = dir / m.at("file").get<std::string>();
    std::ifstream is(file);
    if (!is) throw ConfigError("missing modality file " + file.string());
    std::getline(is, line);
    const std::size_t width = split_csv(line).size() - 2;
    std::vector<std::vector<std::vector<double>>> per_patient(cohort.size());
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != width + 2) throw ConfigError(file.string() + ": ragged row");
      const auto it = index.find(cells[0]);
      if (it == index.end()) throw ConfigError(file.string() + ": unknown patient " + cells[0]);
      std::vector<double> x(width);
      for (std::size_t j = 0; j < width; ++j) x[j] = parse_double(cells[j + 2], file);
      per_patient[it->second].push_back(std::move(x));
    }
    b.offsets.assign(1, 0);
    for (const auto& s : per_patient) b.offsets.push_back(b.offsets.back() + s.size());
    b.features = Tensor::matrix(width, b.offsets.back());
    for (std::size_t p = 0; p < per_patient.size(); ++p) {
      for (std::size_t k = 0; k < per_patient[p].size(); ++k) {
        for (std::size_t j = 0; j < width; ++j) b.features(j, b.offsets[p] + k) = per_patient[p][k][j];
      }
    }
    cohort.modalities.push_back(std::move(b));
  }
  try {
    cohort.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("cohort bundle: ") + e.what());
  }
  return cohort;
}

void write_truth_csv(const std::filesystem::path& path, const Cohort& cohort, const HiddenTruth& truth) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "patient,risk";
  for (std::size_t k = 0; k < truth.latent.rows(); ++k) os << ",z" << k;
  os << '\n';
  for (std::size_t p = 0; p < cohort.size(); ++p) {
    os << cohort.patient_ids[p] << ',' << truth.risk[p];
    for (std::size_t k = 0; k < truth.latent.rows(); ++k) os << ',' << truth.latent(k, p);
    os << '\n';
  }
}

}  // namespace dof::synth
