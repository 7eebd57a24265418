#include "photonloop/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "photonloop/calibration.hpp"
#include "photonloop/clickstats.hpp"
#include "photonloop/io.hpp"
#include "photonloop/simulator.hpp"

namespace photonloop::cli {

using nlohmann::json;

namespace {

struct SimulateArgs {
  std::string config;
  std::string source;
  std::uint64_t pulses = 100'000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string output;
  std::string emit_tags;
  std::string report;
  std::int64_t rep_period_ps = 0;
  std::optional<double> back_reflection;
  std::int64_t reflection_delay_ps = 0;
  std::int64_t dead_time_ps = 0;
};

struct AnalyzeArgs {
  std::string tags;
  std::string config;
  std::string output;
  std::string hist_out;
  std::uint64_t iterations = clickstats::kDefaultBootstrapIterations;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::optional<int> witness_bins;
};

struct FitArgs {
  std::string hist;
  std::string config;
  std::string output;
};

struct CalibrateArgs {
  std::string bright;
  std::string attenuated;
  std::string config;
  std::string output;
  std::optional<double> power;
  std::optional<double> power_sigma;
  std::optional<double> rep_rate;
  double wavelength = 1550e-9;
  std::optional<int> j_min;
  double n_dark = 0.0;
};

json witness_entry(const std::function<double()>& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateDenominator) throw;
    return nullptr;
  }
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const LoopConfig config = io::load_config(a.config);
  const PhotonSource source = PhotonSource::parse(a.source);
  sim::SimOptions opts;
  opts.n_pulses = a.pulses;
  opts.seed = a.seed;
  opts.threads = a.threads;
  if (a.back_reflection || a.dead_time_ps > 0) {
    sim::ArtifactModel art;
    art.enabled = true;
    art.back_reflection_prob = a.back_reflection.value_or(0.0);
    art.reflection_delay_ps = a.reflection_delay_ps > 0 ? a.reflection_delay_ps : config.loop_delay_ps * 7 / 10;
    art.dead_time_ps = a.dead_time_ps;
    art.validate(config);
    opts.artifact = art;
  }

  const auto result = sim::simulate_ensemble(config, source, opts);
  io::write_histogram_csv(a.output, result.histogram);
  out << "wrote " << a.output << " (" << a.pulses << " pulses)\n";

  if (!a.emit_tags.empty()) {
    const std::int64_t rep = a.rep_period_ps > 0 ? a.rep_period_ps
                                                 : (static_cast<std::int64_t>(config.n_bins) + 2) * config.loop_delay_ps;
    const auto stream = sim::emit_time_tags(config, source, opts, rep);
    io::write_time_tags_csv(a.emit_tags, stream);
    out << "wrote " << a.emit_tags << " (" << stream.records.size() << " records)\n";
  }
  if (!a.report.empty()) {
    json report = {{"schema_version", io::kSchemaVersion},
                   {"command", "simulate"},
                   {"config", io::to_json(config)},
                   {"source", source.to_spec()},
                   {"mean_photon_number", mean_photon_number(source)},
                   {"pulses", a.pulses},
                   {"seed", a.seed},
                   {"histogram", io::to_json(result.histogram)},
                   {"pattern_stats", io::to_json(result.stats)}};
    io::write_json(a.report, report);
  }
  return kExitOk;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const LoopConfig config = io::load_config(a.config);
  const TimeTagStream stream = io::read_time_tags_csv(a.tags);
  const auto ingest = clickstats::ingest_time_tags(stream, config);
  const int n = a.witness_bins.value_or(config.n_bins);

  json report = {{"schema_version", io::kSchemaVersion},
                 {"command", "analyze"},
                 {"config", io::to_json(config)},
                 {"witness_bins", n},
                 {"diagnostics", io::to_json(ingest.diagnostics)},
                 {"histogram", io::to_json(ingest.histogram)},
                 {"pattern_stats", io::to_json(ingest.stats)}};
  report["qpb"] = witness_entry([&] { return clickstats::q_pb(ingest.stats, n); });
  report["qb"] = witness_entry([&] { return clickstats::q_b(ingest.stats, n); });
  try {
    const auto boot =
        clickstats::bootstrap_sigma(ingest.stats, n, ingest.histogram.trials, a.iterations, a.seed, a.threads);
    report["sigma_qpb"] = std::isfinite(boot.sigma_qpb) ? json(boot.sigma_qpb) : json(nullptr);
    report["sigma_qb"] = std::isfinite(boot.sigma_qb) ? json(boot.sigma_qb) : json(nullptr);
    report["bootstrap"] = {{"iterations", a.iterations},
                           {"seed", a.seed},
                           {"degenerate_qpb", boot.degenerate_qpb},
                           {"degenerate_qb", boot.degenerate_qb}};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllDegenerate) throw;
    report["sigma_qpb"] = nullptr;
    report["sigma_qb"] = nullptr;
    report["bootstrap"] = {{"iterations", a.iterations}, {"seed", a.seed}, {"error", e.what()}};
  }

  if (!a.hist_out.empty()) io::write_histogram_csv(a.hist_out, ingest.histogram);
  if (a.output.empty()) {
    out << report.dump(2) << '\n';
  } else {
    io::write_json(a.output, report);
    out << "wrote " << a.output << '\n';
  }
  return kExitOk;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const LoopConfig config = io::load_config(a.config);
  const ClickHistogram hist = io::read_histogram_csv(a.hist);
  const FitResult fit = calibration::fit_loop_params(hist, config);
  json report = {{"schema_version", io::kSchemaVersion},
                 {"command", "fit"},
                 {"config", io::to_json(config)},
                 {"fit", io::to_json(fit)}};
  if (a.output.empty()) {
    out << report.dump(2) << '\n';
  } else {
    io::write_json(a.output, report);
    out << "wrote " << a.output << '\n';
  }
  return kExitOk;
}

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const LoopConfig config = io::load_config(a.config);
  if (a.power && !a.rep_rate) throw ValidationError("rep-rate", "rep-rate: required together with --power");
  const ClickHistogram attenuated = io::read_histogram_csv(a.attenuated);
  const ClickHistogram bright = io::read_histogram_csv(a.bright);

  FitResult fit;
  try {
    fit = calibration::fit_loop_params(attenuated, config);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SaturatedFirstBin) {
      throw Error(e.code(), std::string(e.what()) +
                                ". Hint: add attenuation before the loop for the attenuated measurement.");
    }
    throw;
  }

  calibration::CalibrateOptions opts;
  opts.j_min = a.j_min;
  opts.n_dark = a.n_dark;
  if (a.power) {
    opts.n_pm = calibration::power_to_photons(*a.power, *a.rep_rate, a.wavelength);
    if (a.power_sigma) opts.sigma_n_pm = *opts.n_pm * (*a.power_sigma / *a.power);
  }
  const CalibrationResult result = calibration::calibrate(bright, fit, config, opts);

  json report = {{"schema_version", io::kSchemaVersion},
                 {"command", "calibrate"},
                 {"config", io::to_json(config)},
                 {"fit", io::to_json(fit)},
                 {"calibration", io::to_json(result)}};
  report["inputs"] = {{"bright", a.bright},
                      {"attenuated", a.attenuated},
                      {"power_w", a.power ? json(*a.power) : json(nullptr)},
                      {"rep_rate_hz", a.rep_rate ? json(*a.rep_rate) : json(nullptr)},
                      {"wavelength_m", a.wavelength},
                      {"n_dark", a.n_dark}};
  if (a.output.empty()) {
    out << report.dump(2) << '\n';
  } else {
    io::write_json(a.output, report);
    out << "wrote " << a.output << '\n';
  }
  out << "n_measured = " << result.n_measured << " +- " << result.sigma_n_measured << " (j >= " << result.j_min
      << ")\n";
  if (result.sde) out << "SDE = " << *result.sde << " +- " << result.sigma_sde.value_or(0.0) << '\n';
  if (result.dynamic_range_db) out << "dynamic range = " << *result.dynamic_range_db << " dB\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Time-multiplexed loop detector simulation and calibration"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo click histogram (and optional time tags)");
  sim->add_option("--config", sa.config, "Loop configuration JSON")->required()->envname("PHOTONLOOP_CONFIG");
  sim->add_option("--source", sa.source, "fock:N | coherent:X | thermal:X | multithermal:X:K | lossyfock:N:T")
      ->required()
      ->envname("PHOTONLOOP_SOURCE");
  sim->add_option("--pulses", sa.pulses, "Number of pulses")->envname("PHOTONLOOP_PULSES");
  sim->add_option("--seed", sa.seed, "Random seed")->envname("PHOTONLOOP_SEED");
  sim->add_option("--threads", sa.threads, "Worker threads")->envname("PHOTONLOOP_THREADS");
  sim->add_option("-o,--output", sa.output, "Histogram CSV")->required();
  sim->add_option("--emit-tags", sa.emit_tags, "Also write a time-tag CSV");
  sim->add_option("--report", sa.report, "Also write a JSON report with pattern statistics");
  sim->add_option("--rep-period-ps", sa.rep_period_ps, "Pulse period of the time tags");
  sim->add_option("--back-reflection", sa.back_reflection, "Back-reflection probability per detection");
  sim->add_option("--reflection-delay-ps", sa.reflection_delay_ps, "Delay of reflected events");
  sim->add_option("--dead-time-ps", sa.dead_time_ps, "Detector dead time");

  AnalyzeArgs aa;
  auto* ana = app.add_subcommand("analyze", "Gate time tags and evaluate click-statistics witnesses");
  ana->add_option("--tags", aa.tags, "Time-tag CSV")->required();
  ana->add_option("--config", aa.config, "Loop configuration JSON")->required()->envname("PHOTONLOOP_CONFIG");
  ana->add_option("-o,--output", aa.output, "JSON report (stdout if omitted)");
  ana->add_option("--hist-out", aa.hist_out, "Also write the gated histogram CSV");
  ana->add_option("--bootstrap-iterations", aa.iterations, "Bootstrap iterations")
      ->envname("PHOTONLOOP_BOOTSTRAP_ITERATIONS");
  ana->add_option("--seed", aa.seed, "Bootstrap seed")->envname("PHOTONLOOP_SEED");
  ana->add_option("--threads", aa.threads, "Worker threads")->envname("PHOTONLOOP_THREADS");
  ana->add_option("--witness-bins", aa.witness_bins, "N used in the witnesses (default: n_bins)");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit R and eta to an attenuated coherent histogram");
  fit->add_option("--hist", fa.hist, "Histogram CSV")->required();
  fit->add_option("--config", fa.config, "Loop configuration JSON (prior)")->required()->envname("PHOTONLOOP_CONFIG");
  fit->add_option("-o,--output", fa.output, "JSON report (stdout if omitted)");

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Photon-number calibration from a bright and an attenuated histogram");
  cal->add_option("--bright", ca.bright, "Bright histogram CSV")->required();
  cal->add_option("--attenuated", ca.attenuated, "Attenuated histogram CSV")->required();
  cal->add_option("--config", ca.config, "Loop configuration JSON")->required()->envname("PHOTONLOOP_CONFIG");
  cal->add_option("-o,--output", ca.output, "JSON report (stdout if omitted)");
  cal->add_option("--power", ca.power, "Power-meter reading in W")->envname("PHOTONLOOP_POWER");
  cal->add_option("--power-sigma", ca.power_sigma, "Power-meter uncertainty in W");
  cal->add_option("--rep-rate", ca.rep_rate, "Repetition rate in Hz")->envname("PHOTONLOOP_REP_RATE");
  cal->add_option("--wavelength", ca.wavelength, "Wavelength in m")->envname("PHOTONLOOP_WAVELENGTH");
  cal->add_option("--j-min", ca.j_min, "First bin of the weighted mean (automatic if omitted)");
  cal->add_option("--n-dark", ca.n_dark, "Dark photon number subtracted in the SDE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sa, out);
    if (ana->parsed()) return cmd_analyze(aa, out);
    if (fit->parsed()) return cmd_fit(fa, out);
    if (cal->parsed()) return cmd_calibrate(ca, out);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return e.code() == ErrorCode::UnsortedStream || e.code() == ErrorCode::NoSyncRecords ? kExitValidation
                                                                                          : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace photonloop::cli
