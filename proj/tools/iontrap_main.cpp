#include <CLI11.hpp>

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "iontrap/calibrate.hpp"
#include "iontrap/constants.hpp"
#include "iontrap/crystal.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/electrodes.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/filters.hpp"
#include "iontrap/harmonics.hpp"
#include "iontrap/optimizer.hpp"
#include "iontrap/rng.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/serialize.hpp"
#include "iontrap/species.hpp"
#include "iontrap/thermometry.hpp"
#include "iontrap/verification.hpp"

namespace {

using iontrap::Json;

struct Global {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::vector<std::string> argv;
  Json config;
  std::vector<std::pair<std::string, std::string>> inputs;
};

Json default_config() {
  Json j;
  j["trap"] = {{"frequencies_mhz", {2.796, 3.499, 1.257}},
               {"rf_drive_mhz", 30.0}};
  j["species"] = {"Ca40", "Ca40"};
  j["schedule"] = {{"steps", 50}, {"sample_period_us", 0.5}};
  j["weights"] = {{"angle", 1.0},
                  {"degeneracy", 0.0},
                  {"stiffness", 0.0},
                  {"drift", 1.0}};
  j["filter"] = {{"channels", 21}};
  j["waveform"] = {{"p_max", 3},
                   {"p_max_compensation", 12},
                   {"settle_steps", 40},
                   {"clamp_volts", 40.0}};
  j["simulate"] = {{"rf_mode", "pseudopotential"},
                   {"time_step_ns", 0.0},
                   {"settle_time_us", 20.0},
                   {"escape_radius_um", 100.0},
                   {"thermal_init", false},
                   {"temperature_mk", 0.0}};
  j["sweep"] = {{"half_range_v_per_mm", 0.1}, {"points", 41}};
  j["optimize"] = {{"iterations", 4},
                   {"batch_size", 500},
                   {"elite_fraction", 0.1},
                   {"hidden_width", 20},
                   {"bound_shrink", 0.7},
                   {"bound_fraction", 0.05},
                   {"steps_bound", 5.0},
                   {"threads", 0},
                   {"objective_prefix", ""}};
  j["calibrate"] = {{"records", 35},
                    {"holdout", 12},
                    {"noise", 1e-3},
                    {"perturbation", 0.05},
                    {"restrict_tilt", true},
                    {"probe_wavelength_nm", 729.0}};
  j["thermometry"] = {{"carrier_rabi_khz", 50.0},
                      {"eta_com", 0.061},
                      {"eta_str", 0.047}};
  return j;
}

void load_config(Global &g) {
  g.config = default_config();
  if (!g.config_path.empty()) {
    Json user;
    try {
      user = Json::parse(iontrap::read_file(g.config_path));
    } catch (const Json::parse_error &e) {
      throw iontrap::ConfigError(std::string("config: ") + e.what());
    }
    g.config.merge_patch(user);
    g.inputs.emplace_back(g.config_path,
                          iontrap::file_digest(g.config_path));
  }
}

std::string out_path(const Global &g, const std::string &name) {
  return g.out_dir + "/" + name;
}

void write_manifest(const Global &g, const std::string &command) {
  const Json m = iontrap::make_manifest(command, g.argv, g.config, g.inputs,
                                        g.seed);
  iontrap::write_file(out_path(g, command + "_manifest.json"),
                      m.dump(2) + "\n");
}

iontrap::IonSpecies species_by_name(const std::string &name) {
  if (name == "Ca40" || name == "ca40")
    return iontrap::ca40();
  if (name == "Sr88" || name == "sr88")
    return iontrap::sr88();
  throw iontrap::ConfigError("unknown species " + name +
                             " (supported: Ca40, Sr88)");
}

std::vector<iontrap::IonSpecies> species_from_config(const Json &cfg) {
  std::vector<iontrap::IonSpecies> out;
  for (const auto &s : cfg.at("species"))
    out.push_back(species_by_name(s.get<std::string>()));
  return out;
}

iontrap::TrapPotential trap_from_config(const Json &cfg) {
  const auto &t = cfg.at("trap");
  const auto f = t.at("frequencies_mhz");
  const Eigen::Vector3d omega(2 * iontrap::kPi * f.at(0).get<double>() * 1e6,
                              2 * iontrap::kPi * f.at(1).get<double>() * 1e6,
                              2 * iontrap::kPi * f.at(2).get<double>() * 1e6);
  return iontrap::trap_from_secular_frequencies(
      iontrap::ca40(), omega,
      2 * iontrap::kPi * t.at("rf_drive_mhz").get<double>() * 1e6);
}

iontrap::CostWeights weights_from_config(const Json &cfg) {
  const auto &w = cfg.at("weights");
  iontrap::CostWeights out;
  out.angle = w.at("angle").get<double>();
  out.degeneracy = w.at("degeneracy").get<double>();
  out.stiffness = w.at("stiffness").get<double>();
  out.drift = w.at("drift").get<double>();
  return out;
}

iontrap::SimulationConfig sim_from_config(const Json &cfg,
                                          std::uint64_t seed) {
  const auto &s = cfg.at("simulate");
  iontrap::SimulationConfig out;
  const std::string mode = s.at("rf_mode").get<std::string>();
  if (mode == "pseudopotential")
    out.rf_mode = iontrap::RfMode::pseudopotential;
  else if (mode == "full_rf")
    out.rf_mode = iontrap::RfMode::full_rf;
  else
    throw iontrap::ConfigError("simulate.rf_mode must be pseudopotential "
                               "or full_rf, got " +
                               mode);
  out.time_step = s.at("time_step_ns").get<double>() * 1e-9;
  out.settle_time = s.at("settle_time_us").get<double>() * 1e-6;
  out.escape_radius = s.at("escape_radius_um").get<double>() * 1e-6;
  out.thermal_init = s.at("thermal_init").get<bool>();
  out.temperature = s.at("temperature_mk").get<double>() * 1e-3;
  out.seed = seed;
  return out;
}

iontrap::MultipoleMatrix matrix_for(Global &g, const std::string &path) {
  if (!path.empty()) {
    const std::string text = iontrap::read_file(path);
    g.inputs.emplace_back(path, iontrap::file_digest(path));
    return iontrap::multipole_matrix_from_json(Json::parse(text));
  }
  return iontrap::expand_multipoles(
      iontrap::make_synthetic_basis(iontrap::default_trap_geometry()));
}

iontrap::MultipoleSequence load_sequence(Global &g, const std::string &path) {
  const std::string text = iontrap::read_file(path);
  g.inputs.emplace_back(path, iontrap::file_digest(path));
  return iontrap::sequence_from_json(Json::parse(text));
}

iontrap::VoltageSequence load_voltages(Global &g, const std::string &path) {
  const std::string text = iontrap::read_file(path);
  g.inputs.emplace_back(path, iontrap::file_digest(path));
  return iontrap::voltage_from_csv(text);
}

std::string sequence_csv(const iontrap::MultipoleSequence &seq) {
  std::string out = "t,angle,f1m1,f10,f11,q2m2,q2m1,q20,q21,q22\n";
  for (std::size_t i = 0; i < seq.steps.size(); ++i) {
    out += iontrap::format_double(i * seq.schedule.sample_period);
    out += ',';
    out += iontrap::format_double(seq.schedule.angles[static_cast<int>(i)]);
    for (int c = 0; c < 8; ++c) {
      out += ',';
      out += iontrap::format_double(seq.steps[i][c]);
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd sequence_voltages(const iontrap::MultipoleSequence &seq,
                                  const iontrap::MultipoleMatrix &mm,
                                  double clamp) {
  Eigen::MatrixXd u(mm.m.cols(), static_cast<int>(seq.steps.size()));
  for (int i = 0; i < u.cols(); ++i)
    u.col(i) =
        iontrap::voltages_for_multipoles(mm, seq.steps[i], clamp).volts;
  return u;
}

// ------------------------------------------------------------ commands

int cmd_basis(Global &g) {
  const iontrap::ElectrodeBasisGrid grid =
      iontrap::make_synthetic_basis(iontrap::default_trap_geometry());
  const iontrap::MultipoleMatrix mm = iontrap::expand_multipoles(grid);
  iontrap::write_file(out_path(g, "multipole_matrix.json"),
                      iontrap::to_json(mm).dump(2) + "\n");
  write_manifest(g, "basis");
  std::cout << mm.m.cols() << " electrodes, basis condition "
            << iontrap::format_double(mm.basis_condition)
            << ", worst expansion residual "
            << iontrap::format_double(mm.fit_residuals.maxCoeff()) << "\n";
  return 0;
}

int cmd_design(Global &g) {
  const iontrap::TrapPotential trap = trap_from_config(g.config);
  const auto species = species_from_config(g.config);
  const auto &sched_cfg = g.config.at("schedule");
  const iontrap::RotationSchedule sched = iontrap::RotationSchedule::uniform(
      sched_cfg.at("steps").get<int>(),
      sched_cfg.at("sample_period_us").get<double>() * 1e-6);
  const iontrap::MultipoleSequence seq =
      iontrap::design_rotation(trap, species, weights_from_config(g.config),
                               sched);
  iontrap::write_file(out_path(g, "sequence.json"),
                      iontrap::to_json(seq).dump(2) + "\n");
  iontrap::write_file(out_path(g, "sequence.csv"), sequence_csv(seq));
  write_manifest(g, "design");
  std::cout << "designed " << seq.schedule.step_count() << " steps over "
            << iontrap::format_double(seq.schedule.step_count() *
                                      seq.schedule.sample_period * 1e6)
            << " us\n";
  return 0;
}

int cmd_solve_voltages(Global &g, const std::string &seq_path,
                       const std::string &matrix_path) {
  const iontrap::MultipoleSequence seq = load_sequence(g, seq_path);
  const iontrap::MultipoleMatrix mm = matrix_for(g, matrix_path);
  const double clamp =
      g.config.at("waveform").at("clamp_volts").get<double>();
  iontrap::VoltageSequence vs;
  vs.sample_period = seq.schedule.sample_period;
  vs.samples = sequence_voltages(seq, mm, clamp);
  iontrap::write_file(out_path(g, "voltages.csv"),
                      iontrap::voltage_csv(vs, mm.names));
  write_manifest(g, "solve-voltages");
  std::cout << "solved " << vs.samples.cols() << " samples, peak |V| = "
            << iontrap::format_double(vs.samples.cwiseAbs().maxCoeff())
            << "\n";
  return 0;
}

int cmd_filter(Global &g, bool invert, const std::string &input_path) {
  iontrap::FilterNetwork net;
  net.channel_count = g.config.at("filter").at("channels").get<int>();
  const iontrap::LinearStateModel model = iontrap::assemble(net);
  const iontrap::VoltageSequence input = load_voltages(g, input_path);
  if (input.samples.rows() != model.inputs())
    throw iontrap::ConfigError(
        "filter: input has " + std::to_string(input.samples.rows()) +
        " channels, network has " + std::to_string(model.inputs()));
  std::vector<std::string> names;
  for (int i = 0; i < model.inputs(); ++i)
    names.push_back("ch" + std::to_string(i));
  if (invert) {
    const double clamp =
        g.config.at("waveform").at("clamp_volts").get<double>();
    const iontrap::VoltageSequence pre =
        iontrap::invert_filter(model, input, 1e-3, clamp);
    iontrap::write_file(out_path(g, "preset_voltages.csv"),
                        iontrap::voltage_csv(pre, names));
    write_manifest(g, "filter-invert");
  } else {
    const iontrap::VoltageSequence post =
        iontrap::apply_filter(model, input, true);
    iontrap::write_file(out_path(g, "filtered_voltages.csv"),
                        iontrap::voltage_csv(post, names));
    write_manifest(g, "filter-apply");
  }
  return 0;
}

int cmd_simulate(Global &g, const std::string &seq_path, bool chain) {
  const iontrap::MultipoleSequence seq = load_sequence(g, seq_path);
  const iontrap::TrapPotential trap = trap_from_config(g.config);
  const auto species = species_from_config(g.config);
  const iontrap::SimulationConfig cfg = sim_from_config(g.config, g.seed);

  iontrap::DrivenPotential drive;
  if (chain) {
    const iontrap::MultipoleMatrix mm = matrix_for(g, "");
    iontrap::FilterNetwork net;
    net.channel_count = g.config.at("filter").at("channels").get<int>();
    const double clamp =
        g.config.at("waveform").at("clamp_volts").get<double>();
    drive = iontrap::realized_drive(
        sequence_voltages(seq, mm, clamp), seq.schedule.sample_period,
        iontrap::assemble(net), mm, iontrap::CalibrationMap{}, trap.rf, 8,
        g.config.at("waveform").at("settle_steps").get<int>());
  } else {
    drive = iontrap::DrivenPotential::from_sequence(seq, trap.rf);
  }

  try {
    const iontrap::Trajectory traj = iontrap::simulate(drive, species, cfg);
    const iontrap::HeatingResult hr = iontrap::mode_energy(traj);
    iontrap::write_file(out_path(g, "trajectory.csv"),
                        iontrap::trajectory_csv(traj));
    iontrap::write_file(out_path(g, "heating.json"),
                        iontrap::to_json(hr).dump(2) + "\n");
    write_manifest(g, "simulate");
    double total = 0;
    for (int i = 0; i < hr.delta_n.size(); ++i)
      total += hr.delta_n[i];
    std::cout << (hr.success ? "rotation succeeded" : "no rotation") << ", "
              << "total heating " << iontrap::format_double(total)
              << " quanta\n";
    return 0;
  } catch (const iontrap::IonLossError &e) {
    Json j;
    j["loss"] = true;
    j["message"] = e.what();
    iontrap::write_file(out_path(g, "heating.json"), j.dump(2) + "\n");
    write_manifest(g, "simulate");
    throw;
  }
}

int cmd_sweep(Global &g, const std::string &seq_path) {
  const iontrap::MultipoleSequence seq = load_sequence(g, seq_path);
  const iontrap::TrapPotential trap = trap_from_config(g.config);
  const auto species = species_from_config(g.config);
  const iontrap::SimulationConfig cfg = sim_from_config(g.config, g.seed);
  const auto &sw = g.config.at("sweep");
  const double half = sw.at("half_range_v_per_mm").get<double>() * 1e3;
  const int points = sw.at("points").get<int>();
  if (points < 2)
    throw iontrap::ConfigError("sweep.points must be at least 2");
  std::vector<double> e_x(points);
  for (int i = 0; i < points; ++i)
    e_x[i] = -half + 2 * half * i / (points - 1);
  const iontrap::OffsetSweepResult res =
      iontrap::offset_field_sweep(seq, species, trap.rf, e_x, cfg);
  iontrap::write_file(out_path(g, "sweep.csv"), iontrap::sweep_csv(res));
  write_manifest(g, "sweep-ex");
  int bidi = 0;
  for (int i = 0; i < points; ++i)
    if (res.regime(i) == "bidirectional")
      ++bidi;
  std::cout << points << " field values, " << bidi
            << " bidirectional points\n";
  return 0;
}

int cmd_optimize(Global &g, const std::string &seq_path) {
  const iontrap::MultipoleSequence seq = load_sequence(g, seq_path);
  const iontrap::TrapPotential trap = trap_from_config(g.config);
  const auto species = species_from_config(g.config);
  const iontrap::MultipoleMatrix mm = matrix_for(g, "");
  iontrap::FilterNetwork net;
  net.channel_count = g.config.at("filter").at("channels").get<int>();
  const iontrap::LinearStateModel filter = iontrap::assemble(net);
  const iontrap::CalibrationMap ident;
  const auto &wf = g.config.at("waveform");
  const int p_max = wf.at("p_max").get<int>();
  const int settle_steps = wf.at("settle_steps").get<int>();
  const double clamp = wf.at("clamp_volts").get<double>();

  const iontrap::WaveformParams desired = iontrap::fourier_fit(seq, p_max);
  const iontrap::WaveformParams start = iontrap::precompensate(
      desired, filter, ident, mm, p_max, settle_steps, clamp);
  const Eigen::MatrixXd out_map = ident.a * mm.m;
  const iontrap::DenseOutputModel dom =
      iontrap::dense_output(filter, out_map, desired.sample_period, 4);
  const iontrap::SimulationConfig sim_cfg = sim_from_config(g.config, g.seed);

  auto oracle = [&](const Eigen::VectorXd &x) -> iontrap::OracleOutcome {
    iontrap::OracleOutcome o;
    try {
      const iontrap::WaveformParams wp = iontrap::unpack_candidate(x, start);
      const iontrap::MultipoleSequence ms = iontrap::params_to_sequence(wp);
      Eigen::MatrixXd u(mm.m.cols(), static_cast<int>(ms.steps.size()));
      for (int i = 0; i < u.cols(); ++i)
        u.col(i) = mm.pseudo_inverse * ms.steps[i].to_vector();
      const iontrap::DrivenPotential drive =
          iontrap::realized_drive(u, dom, ident.b, trap.rf, settle_steps);
      iontrap::SimulationConfig cfg = sim_cfg;
      cfg.settle_time = 5e-6;
      const iontrap::HeatingResult hr =
          iontrap::mode_energy(iontrap::simulate(drive, species, cfg));
      o.delta_n = hr.delta_n;
      o.labels = hr.mode_labels;
      o.success = hr.success;
    } catch (const iontrap::IonLossError &) {
      o.loss = true;
    } catch (const iontrap::NumericalError &) {
      o.loss = true;
    }
    return o;
  };

  const auto &oc = g.config.at("optimize");
  const double bf = oc.at("bound_fraction").get<double>();
  const Eigen::VectorXd a_init = iontrap::pack_candidate(start);
  const int dim = static_cast<int>(a_init.size());
  Eigen::VectorXd bounds(dim);
  for (int c = 0; c < 8; ++c) {
    double scale = 0;
    for (int p = 1; p <= start.p_max(); ++p)
      scale = std::max(scale, std::abs(start.a(p, c)));
    for (int p = 0; p < start.p_max(); ++p) {
      const int j = 8 * p + c;
      bounds[j] = bf * std::abs(a_init[j]) + 0.1 * bf * scale;
    }
  }
  bounds[dim - 1] = oc.at("steps_bound").get<double>();

  iontrap::LoopConfig lc;
  lc.iterations = oc.at("iterations").get<int>();
  lc.batch_size = oc.at("batch_size").get<int>();
  lc.elite_fraction = oc.at("elite_fraction").get<double>();
  lc.hidden_width = oc.at("hidden_width").get<int>();
  lc.bound_shrink = oc.at("bound_shrink").get<double>();
  lc.objective_prefix = oc.at("objective_prefix").get<std::string>();
  lc.threads = oc.at("threads").get<int>();

  const iontrap::LoopResult res =
      iontrap::optimize_loop(oracle, a_init, bounds, lc, g.seed);
  iontrap::write_file(out_path(g, "history.csv"),
                      iontrap::history_csv(res.history));
  const iontrap::WaveformParams best =
      iontrap::unpack_candidate(res.best, start);
  Json bj;
  bj["objective"] = res.best_objective;
  bj["iteration_best"] = res.iteration_best;
  bj["iteration_median"] = res.iteration_median;
  bj["surrogate_r2"] = res.surrogate_r2;
  bj["params"] = iontrap::to_json(best);
  iontrap::write_file(out_path(g, "best.json"), bj.dump(2) + "\n");
  write_manifest(g, "optimize");
  std::cout << "best heating " << iontrap::format_double(res.best_objective)
            << " quanta after " << lc.iterations << " x " << lc.batch_size
            << " evaluations\n";
  return 0;
}

int cmd_calibrate(Global &g, bool generate, const std::string &records_path) {
  const iontrap::TrapPotential trap = trap_from_config(g.config);
  const auto &cc = g.config.at("calibrate");
  const Eigen::Vector3d probe_k =
      (2 * iontrap::kPi / (cc.at("probe_wavelength_nm").get<double>() * 1e-9)) *
      Eigen::Vector3d(1, 1, 1).normalized();

  if (generate) {
    iontrap::Rng rng(g.seed);
    const double pert = cc.at("perturbation").get<double>();
    const double noise = cc.at("noise").get<double>();
    const double scales[8] = {10, 10, 10, 2e7, 2e7, 2e7, 2e7, 2e7};
    iontrap::CalibrationMap hidden;
    for (int i = 0; i < 8; ++i) {
      hidden.a(i, i) = 1 + rng.uniform(-pert, pert);
      for (int j = 0; j < 8; ++j) {
        if (i == j)
          continue;
        const bool tilt_row = i == 3 || i == 4 || i == 6;
        hidden.a(i, j) = tilt_row
                             ? 0.0
                             : rng.uniform(-pert, pert) * scales[i] / scales[j];
      }
      hidden.b[i] = rng.uniform(-pert, pert) * scales[i];
    }
    Json arr = Json::array();
    const int want = cc.at("records").get<int>();
    int attempts = 0;
    int made = 0;
    while (made < want && attempts < 100 * want) {
      ++attempts;
      iontrap::MultipoleVector set = trap.dc;
      set.q20 *= rng.uniform(0.85, 1.15);
      set.q22 *= rng.uniform(0.85, 1.15);
      set.q2m2 = rng.uniform(-2e6, 2e6);
      set.q2m1 = rng.uniform(-2e6, 2e6);
      set.q21 = rng.uniform(-2e6, 2e6);
      set.f1m1 = rng.uniform(-10, 10);
      set.f10 = rng.uniform(-10, 10);
      set.f11 = rng.uniform(-10, 10);
      iontrap::TrapPotential t = trap;
      t.dc = iontrap::MultipoleVector::from_vector(hidden.a * set.to_vector() +
                                                   hidden.b);
      try {
        iontrap::ObservableRecord r =
            iontrap::predict_observables(t, probe_k);
        r.setting = set;
        for (int i = 0; i < 3; ++i) {
          r.frequencies[i] *= 1 + noise * rng.normal();
          r.displacement[i] *= 1 + noise * rng.normal();
          for (int j = 0; j < 3; ++j)
            r.axes(i, j) += noise * rng.normal();
        }
        arr.push_back(iontrap::to_json(r));
        ++made;
      } catch (const iontrap::NumericalError &) {
      }
    }
    if (made < want)
      throw iontrap::NumericalError(
          "calibrate: too few stable settings generated");
    iontrap::write_file(out_path(g, "records.json"), arr.dump(2) + "\n");
    iontrap::write_file(out_path(g, "hidden_map.json"),
                        iontrap::to_json(hidden).dump(2) + "\n");
    write_manifest(g, "calibrate-generate");
    std::cout << "generated " << made << " records\n";
    return 0;
  }

  const std::string text = iontrap::read_file(records_path);
  g.inputs.emplace_back(records_path, iontrap::file_digest(records_path));
  std::vector<iontrap::ObservableRecord> records;
  for (const auto &j : Json::parse(text))
    records.push_back(iontrap::observable_from_json(j));
  const iontrap::CalibrationMap fit = iontrap::fit_calibration(
      records, trap.rf, probe_k, cc.at("restrict_tilt").get<bool>());
  iontrap::write_file(out_path(g, "calibration.json"),
                      iontrap::to_json(fit).dump(2) + "\n");
  write_manifest(g, "calibrate");
  std::cout << "fitted map from " << records.size()
            << " records, gain diagonal:";
  for (int i = 0; i < 8; ++i)
    std::cout << ' ' << iontrap::format_double(fit.a(i, i));
  std::cout << "\n";
  return 0;
}

int cmd_fit_phonons(Global &g, const std::string &data_path,
                    const std::string &mode_name,
                    const std::string &color_name) {
  const std::string text = iontrap::read_file(data_path);
  g.inputs.emplace_back(data_path, iontrap::file_digest(data_path));
  const std::vector<iontrap::ExcitationPoint> pts =
      iontrap::excitation_from_csv(text);
  const auto &tc = g.config.at("thermometry");
  iontrap::SidebandModel model;
  model.carrier_rabi =
      2 * iontrap::kPi * tc.at("carrier_rabi_khz").get<double>() * 1e3;
  model.eta_com = tc.at("eta_com").get<double>();
  model.eta_str = tc.at("eta_str").get<double>();
  iontrap::AxialMode mode;
  if (mode_name == "com")
    mode = iontrap::AxialMode::common;
  else if (mode_name == "stretch")
    mode = iontrap::AxialMode::stretch;
  else
    throw iontrap::ConfigError("mode must be com or stretch");
  iontrap::SidebandColor color;
  if (color_name == "red")
    color = iontrap::SidebandColor::red;
  else if (color_name == "blue")
    color = iontrap::SidebandColor::blue;
  else
    throw iontrap::ConfigError("color must be red or blue");
  const iontrap::PhononFit fit =
      iontrap::fit_mean_phonon(pts, model, mode, color);
  iontrap::write_file(out_path(g, "phonon_fit.json"),
                      iontrap::to_json(fit).dump(2) + "\n");
  write_manifest(g, "fit-phonons");
  std::cout << "nbar = " << iontrap::format_double(fit.nbar) << " +- "
            << iontrap::format_double(fit.sigma) << "\n";
  return 0;
}

int cmd_report(Global &g) {
  const int threads = g.config.at("optimize").at("threads").get<int>();
  const std::vector<iontrap::CheckResult> results =
      iontrap::run_verification(threads);
  iontrap::write_file(out_path(g, "report.csv"),
                      iontrap::verification_csv(results));
  write_manifest(g, "report");
  int failed = 0;
  for (const auto &r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  [" << r.criterion << "] "
              << r.name << ": " << r.detail << "\n";
    if (!r.pass)
      ++failed;
  }
  std::cout << results.size() - failed << "/" << results.size()
            << " checks passed\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Waveform design, simulation and optimization for rotating "
               "two-ion crystals in a segmented surface trap"};
  app.require_subcommand(1);

  Global g;
  for (int i = 0; i < argc; ++i)
    g.argv.emplace_back(argv[i]);

  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--seed", g.seed, "random seed");

  auto *basis = app.add_subcommand("basis", "build the synthetic electrode "
                                            "basis and multipole matrix");
  auto *design =
      app.add_subcommand("design", "design a crystal-rotation sequence");

  std::string seq_path = "sequence.json";
  std::string matrix_path;
  auto *solve = app.add_subcommand("solve-voltages",
                                   "electrode voltages for a sequence");
  solve->add_option("--sequence", seq_path, "sequence file");
  solve->add_option("--matrix", matrix_path, "multipole matrix file");

  std::string filter_input;
  auto *filter = app.add_subcommand("filter", "push voltages through the "
                                              "wiring model");
  auto *fapply = filter->add_subcommand("apply", "forward response");
  auto *finvert = filter->add_subcommand("invert", "precompensate");
  fapply->add_option("--input", filter_input, "voltage CSV")->required();
  finvert->add_option("--input", filter_input, "voltage CSV")->required();
  filter->require_subcommand(1);

  bool chain = false;
  auto *simulate =
      app.add_subcommand("simulate", "integrate the classical motion");
  simulate->add_option("--sequence", seq_path, "sequence file");
  simulate->add_flag("--chain", chain,
                     "drive through electrodes and filters instead of "
                     "ideal multipoles");

  auto *sweep = app.add_subcommand("sweep-ex",
                                   "reordering outcome vs offset field");
  sweep->add_option("--sequence", seq_path, "sequence file");

  auto *optimize =
      app.add_subcommand("optimize", "surrogate-model heating minimization");
  optimize->add_option("--sequence", seq_path, "sequence file");

  bool generate = false;
  std::string records_path = "records.json";
  auto *calibrate =
      app.add_subcommand("calibrate", "fit the multipole transfer map");
  calibrate->add_flag("--generate", generate,
                      "synthesize noisy records from a hidden map");
  calibrate->add_option("--records", records_path, "records file");

  std::string data_path, mode_name = "com", color_name = "red";
  auto *fitph = app.add_subcommand("fit-phonons",
                                   "mean phonon number from sideband data");
  fitph->add_option("--data", data_path, "excitation CSV")->required();
  fitph->add_option("--mode", mode_name, "com or stretch");
  fitph->add_option("--color", color_name, "red or blue");

  auto *report = app.add_subcommand("report", "run the full check suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    Json err;
    err["error"] = {{"category", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  }

  try {
    load_config(g);
    std::filesystem::create_directories(g.out_dir);
    if (basis->parsed())
      return cmd_basis(g);
    if (design->parsed())
      return cmd_design(g);
    if (solve->parsed())
      return cmd_solve_voltages(g, seq_path, matrix_path);
    if (filter->parsed())
      return cmd_filter(g, finvert->parsed(), filter_input);
    if (simulate->parsed())
      return cmd_simulate(g, seq_path, chain);
    if (sweep->parsed())
      return cmd_sweep(g, seq_path);
    if (optimize->parsed())
      return cmd_optimize(g, seq_path);
    if (calibrate->parsed())
      return cmd_calibrate(g, generate, records_path);
    if (fitph->parsed())
      return cmd_fit_phonons(g, data_path, mode_name, color_name);
    if (report->parsed())
      return cmd_report(g);
    throw iontrap::ConfigError("no subcommand given");
  } catch (const iontrap::Error &e) {
    Json err;
    err["error"] = {{"category", e.category()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.exit_code();
  } catch (const std::exception &e) {
    Json err;
    err["error"] = {{"category", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
}
