// dof: command-line front end for cohort generation, cross-validated
// training, evaluation, γ sweeps, ablations, radiomics extraction and run
// comparison. Exit codes: 0 ok, 2 configuration error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dof/common/errors.hpp"
#include "dof/harness/harness.hpp"
#include "dof/radiomics/radiomics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dof;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config;
  std::string out;
  std::size_t threads = 0;
  bool quiet = false;
};

harness::ExperimentConfig load_config(const Common& c) {
  harness::ExperimentConfig cfg = c.config.empty() ? harness::ExperimentConfig{}
                                                   : harness::ExperimentConfig::load(c.config);
  if (c.threads) cfg.threads = c.threads;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

harness::ProgressFn progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << "  " << msg << '\n'; };
}

void print_summary(const harness::ExperimentResult& r) {
  std::cout << "model                      median    std      q25      q75\n";
  for (const harness::ModelSummary& s : r.summaries) {
    std::printf("%-24s %8.4f %8.4f %8.4f %8.4f\n", s.label.c_str(), s.median, s.std, s.q25, s.q75);
  }
  for (const auto& [label, t] : r.comparisons) {
    std::printf("Mann-Whitney %s vs %s: U=%.1f p=%.4g\n", r.primary.c_str(), label.c_str(), t.statistic, t.p_value);
  }
  if (r.has_hazard) {
    std::printf("%s pooled HR (high vs low) %.3f [%.3f, %.3f], log-rank p=%.4g\n", r.primary.c_str(), r.hazard.hr,
                r.hazard.ci_low, r.hazard.ci_high, r.log_rank.p_value);
  }
}

int cmd_generate(const std::string& preset, std::size_t patients, std::uint64_t seed, double censoring,
                 const std::string& out, bool truth) {
  harness::ExperimentConfig cfg;
  cfg.preset = preset;
  cfg.patients = patients;
  cfg.cohort_seed = seed;
  cfg.censoring = censoring;
  cfg.validate();
  const synth::GeneratedCohort g = synth::generate(harness::preset_spec(cfg));
  const fs::path dir = harness::resolve_output_dir(out);
  synth::write_bundle(dir, g.cohort);
  if (truth) synth::write_truth_csv(dir / "truth.csv", g.cohort, g.truth);
  std::size_t events = g.cohort.survival.event_count();
  std::cout << "wrote " << g.cohort.size() << " patients (" << events << " events) to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, bool final_models, bool table1) {
  const harness::ExperimentConfig cfg = load_config(c);
  const synth::Cohort cohort = harness::load_cohort(cfg);
  const fs::path dir = harness::resolve_output_dir(cfg.output_dir);
  const auto models = harness::standard_models(cfg);
  const std::string primary = cfg.modalities.size() >= 2 ? "dof" : models.front().label;
  const harness::ExperimentResult r = harness::run_cv(cohort, cfg, models, primary, progress_for(c));
  harness::write_result(dir, r, cohort, cfg);
  print_summary(r);
  if (table1) {
    const auto rows = harness::table1_models(cfg);
    const harness::ExperimentResult t = harness::run_cv(cohort, cfg, rows, rows.front().label, progress_for(c));
    harness::write_table1(dir / "table1.csv", t, rows);
  }
  if (final_models) {
    harness::FinalModels m = harness::train_final(cohort, cfg, progress_for(c));
    harness::save_final(dir / "model", m);
    std::cout << "saved whole-cohort models to " << (dir / "model").string() << '\n';
  }
  std::cout << "results in " << dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_dir, const std::string& bundle) {
  harness::ExperimentConfig cfg = load_config(c);
  if (!bundle.empty()) cfg.bundle = bundle;
  const synth::Cohort cohort = harness::load_cohort(cfg);
  harness::FinalModels m = harness::load_final(model_dir);
  const fs::path dir = harness::resolve_output_dir(cfg.output_dir);
  const harness::Evaluation ev = harness::evaluate_final(m, cohort, dir);
  std::printf("C-index %.4f over %zu patients; results in %s\n", ev.c_index, cohort.size(), dir.string().c_str());
  return 0;
}

int cmd_sweep(const Common& c) {
  const harness::ExperimentConfig cfg = load_config(c);
  const synth::Cohort cohort = harness::load_cohort(cfg);
  const auto models = harness::gamma_sweep_models(cfg);
  std::string primary = models.front().label;
  for (const auto& m : models) {
    if (m.gamma == cfg.gamma) primary = m.label;
  }
  const harness::ExperimentResult r = harness::run_cv(cohort, cfg, models, primary, progress_for(c));
  const fs::path dir = harness::resolve_output_dir(cfg.output_dir);
  harness::write_result(dir, r, cohort, cfg);
  harness::write_gamma_table(dir / "gamma_sweep.csv", r, cfg);
  print_summary(r);
  return 0;
}

int cmd_ablate(const Common& c) {
  const harness::ExperimentConfig cfg = load_config(c);
  const synth::Cohort cohort = harness::load_cohort(cfg);
  const auto models = harness::ablation_models(cfg);
  const harness::ExperimentResult r = harness::run_cv(cohort, cfg, models, models.front().label, progress_for(c));
  const fs::path dir = harness::resolve_output_dir(cfg.output_dir);
  harness::write_result(dir, r, cohort, cfg);
  harness::write_ablation_table(dir / "ablation.csv", r);
  print_summary(r);
  return 0;
}

int cmd_radiomics(const std::string& t1, const std::string& flair, const std::string& patient,
                  const std::string& out, bool phantom) {
  const fs::path dir = harness::resolve_output_dir(out);
  fs::create_directories(dir);
  fs::path t1_path = t1, flair_path = flair;
  if (phantom) {
    const std::vector<radiomics::Ellipsoid> t1_shapes{{{12, 12, 12}, {6, 5, 4}, 1, 120.0, 0.5},
                                                      {{30, 28, 20}, {3, 3, 3}, 2, 90.0, 0.0}};
    const std::vector<radiomics::Ellipsoid> flair_shapes{{{13, 12, 12}, {9, 8, 7}, 1, 200.0, -0.3}};
    t1_path = dir / "phantom_t1.dofv";
    flair_path = dir / "phantom_flair.dofv";
    radiomics::write_volume(t1_path, radiomics::paint_phantom({40, 40, 32}, {1.0, 1.0, 1.2}, t1_shapes, 4.0, 11));
    radiomics::write_volume(flair_path,
                            radiomics::paint_phantom({40, 40, 32}, {1.0, 1.0, 1.2}, flair_shapes, 4.0, 12));
  }
  if (t1_path.empty() || flair_path.empty()) throw ConfigError("radiomics: give --t1 and --flair, or --phantom");
  const auto t1_regions = radiomics::extract_all(radiomics::read_volume(t1_path));
  const auto flair_regions = radiomics::extract_all(radiomics::read_volume(flair_path));
  {
    std::ofstream os(dir / "regions.csv");
    radiomics::write_region_csv_header(os);
    radiomics::write_region_csv_rows(os, patient, "t1", t1_regions);
    radiomics::write_region_csv_rows(os, patient, "flair", flair_regions);
  }
  const std::vector<double> f = radiomics::summarize_patient(t1_regions, flair_regions);
  const std::vector<std::string> names = radiomics::patient_feature_names();
  std::ofstream os(dir / "patient_features.csv");
  os.precision(17);
  os << "patient";
  for (const std::string& n : names) os << ',' << n;
  os << '\n' << patient;
  for (double v : f) os << ',' << v;
  os << '\n';
  std::cout << t1_regions.size() << " t1 and " << flair_regions.size() << " flair regions; " << f.size()
            << " patient features in " << dir.string() << '\n';
  return 0;
}

std::vector<double> fold_cindices(const fs::path& summary, const std::string& label) {
  std::ifstream is(summary);
  if (!is) throw ConfigError("cannot open " + summary.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    for (const auto& m : j.at("models")) {
      if (m.at("label") == label) return m.at("c_index").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(summary.string() + ": " + e.what());
  }
  throw ConfigError(summary.string() + " has no model labelled " + label);
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& label_a, std::string label_b,
                const std::string& out) {
  if (label_b.empty()) label_b = label_a;
  const std::vector<double> ca = fold_cindices(a, label_a);
  const std::vector<double> cb = fold_cindices(b.empty() ? a : b, label_b);
  const metrics::TestResult t = metrics::mann_whitney_u(ca, cb);
  nlohmann::ordered_json j{{"a", {{"summary", a}, {"model", label_a}, {"median", metrics::median(ca)}}},
                           {"b", {{"summary", b.empty() ? a : b}, {"model", label_b}, {"median", metrics::median(cb)}}},
                           {"u", t.statistic},
                           {"p_value", t.p_value},
                           {"method", t.method}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    const fs::path path = harness::resolve_output_dir(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    os << j.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep orthogonal fusion survival experiments"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("-c,--config", c.config, "JSON experiment config");
    sub->add_option("-o,--out", c.out, "Output directory (relative to $DOF_OUTPUT_ROOT when set)");
    sub->add_option("-j,--threads", c.threads, "Worker threads for folds (0 = all cores)");
    sub->add_flag("-q,--quiet", c.quiet, "No progress messages");
  };

  std::string preset = "complementary", gen_out = "cohort";
  std::size_t patients = 400;
  std::uint64_t seed = 1;
  double censoring = -1.0;
  bool truth = false;
  CLI::App* gen = app.add_subcommand("generate", "Write a synthetic cohort bundle");
  gen->add_option("--preset", preset, "complementary or redundant")->check(CLI::IsMember({"complementary", "redundant"}));
  gen->add_option("-n,--patients", patients, "Cohort size");
  gen->add_option("--seed", seed, "Cohort seed");
  gen->add_option("--censoring", censoring, "Censoring target (default: preset)");
  gen->add_option("-o,--out", gen_out, "Bundle directory");
  gen->add_flag("--with-truth", truth, "Also write truth.csv with hidden risks");

  Common train_opts;
  bool final_models = false, table1 = false;
  CLI::App* train = app.add_subcommand("train", "Monte Carlo cross-validated training and validation");
  add_common(train, train_opts);
  train->add_flag("--final", final_models, "Also fit on the whole cohort and save checkpoints to <out>/model");
  train->add_flag("--table1", table1, "Also evaluate every modality subset and write table1.csv");

  Common eval_opts;
  std::string model_dir, bundle;
  CLI::App* eval = app.add_subcommand("evaluate", "Score a cohort with saved whole-cohort models");
  add_common(eval, eval_opts);
  eval->add_option("-m,--model", model_dir, "Directory written by train --final")->required();
  eval->add_option("-b,--bundle", bundle, "Cohort bundle to score (default: config cohort)");

  Common sweep_opts;
  CLI::App* sweep = app.add_subcommand("sweep-gamma", "Cross-validate DOF over the gamma grid");
  add_common(sweep, sweep_opts);

  Common ablate_opts;
  CLI::App* ablate = app.add_subcommand("ablate", "Gating x combination ablation grid");
  add_common(ablate, ablate_opts);

  std::string t1, flair, patient = "patient", rad_out = "radiomics";
  bool phantom = false;
  CLI::App* rad = app.add_subcommand("radiomics", "Handcrafted region features from labelled volumes");
  rad->add_option("--t1", t1, "Gd-T1w volume (.dofv)");
  rad->add_option("--flair", flair, "T2w-FLAIR volume (.dofv)");
  rad->add_option("--patient", patient, "Patient id for the output rows");
  rad->add_option("-o,--out", rad_out, "Output directory");
  rad->add_flag("--phantom", phantom, "Write and measure a pair of synthetic phantom volumes");

  std::string cmp_a, cmp_b, label_a = "dof", label_b, cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "Mann-Whitney U between fold C-indices of two models");
  cmp->add_option("--a", cmp_a, "summary.json of the first run")->required();
  cmp->add_option("--b", cmp_b, "summary.json of the second run (default: same as --a)");
  cmp->add_option("--model-a", label_a, "Model label in the first run");
  cmp->add_option("--model-b", label_b, "Model label in the second run (default: --model-a)");
  cmp->add_option("-o,--out", cmp_out, "Also write the result to this JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(preset, patients, seed, censoring, gen_out, truth);
    if (*train) return cmd_train(train_opts, final_models, table1);
    if (*eval) return cmd_evaluate(eval_opts, model_dir, bundle);
    if (*sweep) return cmd_sweep(sweep_opts);
    if (*ablate) return cmd_ablate(ablate_opts);
    if (*rad) return cmd_radiomics(t1, flair, patient, rad_out, phantom);
    if (*cmp) return cmd_compare(cmp_a, cmp_b, label_a, label_b, cmp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
