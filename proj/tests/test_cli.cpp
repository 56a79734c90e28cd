#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include <json.hpp>

#include "iontrap/constants.hpp"
#include "iontrap/serialize.hpp"
#include "iontrap/thermometry.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string &what) {
  if (!ok) {
    ++failures;
    std::fprintf(stderr, "FAILED: %s\n", what.c_str());
  } else {
    std::printf("ok: %s\n", what.c_str());
  }
}

std::string g_cli;

int run(const std::string &args) {
  const std::string cmd = g_cli + " " + args;
  const int status = std::system(cmd.c_str());
  if (status == -1)
    return -1;
#ifdef _WIN32
  return status;
#else
  return WEXITSTATUS(status);
#endif
}

std::string slurp(const std::string &path) {
  return iontrap::read_file(path);
}

} // namespace

int main(int argc, char **argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path-to-cli>\n");
    return 2;
  }
  g_cli = argv[1];

  const fs::path work = fs::current_path() / "cli_work";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string w = work.string();

  expect(run("--help > " + w + "/help.txt") == 0, "--help exits 0");
  expect(slurp(w + "/help.txt").find("design") != std::string::npos,
         "help lists the design subcommand");
  expect(run("definitely-not-a-command 2> " + w + "/err.txt") == 2,
         "unknown subcommand exits 2");
  expect(run("design --config " + w + "/missing.json --out-dir " + w +
             "/d0 2> " + w + "/err2.txt") == 2,
         "missing config exits 2");
  expect(slurp(w + "/err2.txt").find("config") != std::string::npos,
         "config error is categorized on stderr");

  expect(run("basis --out-dir " + w + "/basis") == 0, "basis runs");
  expect(fs::exists(w + "/basis/multipole_matrix.json"),
         "basis writes the multipole matrix");
  expect(fs::exists(w + "/basis/basis_manifest.json"),
         "basis writes a manifest");

  expect(run("design --out-dir " + w + "/design") == 0, "design runs");
  expect(fs::exists(w + "/design/sequence.json"), "design writes json");
  expect(fs::exists(w + "/design/sequence.csv"), "design writes csv");

  expect(run("design --out-dir " + w + "/design2") == 0, "design rerun");
  expect(slurp(w + "/design/sequence.json") ==
             slurp(w + "/design2/sequence.json"),
         "design output is byte-identical across reruns");

  expect(run("solve-voltages --sequence " + w + "/design/sequence.json" +
             " --matrix " + w + "/basis/multipole_matrix.json --out-dir " +
             w + "/volts") == 0,
         "solve-voltages runs");
  expect(fs::exists(w + "/volts/voltages.csv"), "voltages written");

  expect(run("filter apply --input " + w + "/volts/voltages.csv --out-dir " +
             w + "/filt") == 0,
         "filter apply runs");
  expect(fs::exists(w + "/filt/filtered_voltages.csv"),
         "filtered voltages written");
  expect(fs::exists(w + "/filt/filter-apply_manifest.json"),
         "filter apply manifest written");

  expect(run("filter invert --input " + w + "/volts/voltages.csv" +
             " --out-dir " + w + "/inv") == 0,
         "filter invert runs");
  expect(fs::exists(w + "/inv/preset_voltages.csv"),
         "precompensated voltages written");

  expect(run("simulate --sequence " + w + "/design/sequence.json" +
             " --out-dir " + w + "/sim > " + w + "/sim.txt") == 0,
         "simulate runs");
  expect(fs::exists(w + "/sim/trajectory.csv"), "trajectory written");
  {
    const auto hj = iontrap::Json::parse(slurp(w + "/sim/heating.json"));
    expect(hj.contains("delta_n"), "heating report has per-mode quanta");
    expect(hj.at("success").get<bool>(), "ideal-drive rotation succeeds");
  }

  expect(run("simulate --sequence " + w + "/design/sequence.json" +
             " --out-dir " + w + "/sim2 > /dev/null") == 0,
         "simulate rerun");
  expect(slurp(w + "/sim/heating.json") == slurp(w + "/sim2/heating.json"),
         "simulate output is byte-identical across reruns");

  {
    iontrap::Json cfg;
    cfg["sweep"] = {{"points", 5}, {"half_range_v_per_mm", 0.025}};
    iontrap::write_file(w + "/sweep_cfg.json", cfg.dump());
    expect(run("sweep-ex --config " + w + "/sweep_cfg.json --sequence " + w +
               "/design/sequence.json --out-dir " + w + "/sweep") == 0,
           "sweep-ex runs");
    const std::string csv = slurp(w + "/sweep/sweep.csv");
    expect(csv.find("e_x") != std::string::npos, "sweep csv has a header");
    int lines = 0;
    for (char ch : csv)
      if (ch == '\n')
        ++lines;
    expect(lines == 11, "sweep csv has one row per field value and order");
  }

  expect(run("calibrate --generate --seed 11 --out-dir " + w + "/cal") == 0,
         "calibrate --generate runs");
  expect(fs::exists(w + "/cal/records.json"), "records written");
  expect(run("calibrate --records " + w + "/cal/records.json --out-dir " +
             w + "/calfit") == 0,
         "calibrate fit runs");
  {
    const auto cj = iontrap::Json::parse(slurp(w + "/calfit/calibration.json"));
    expect(cj.contains("a") && cj.contains("b"),
           "calibration json has the map");
  }

  {
    iontrap::SidebandModel model;
    std::vector<iontrap::ExcitationPoint> pts;
    for (int i = 1; i <= 40; ++i) {
      iontrap::ExcitationPoint p;
      p.t = i * 2e-6;
      p.excitation =
          iontrap::sideband_excitation(1.7, model, iontrap::AxialMode::common,
                                       p.t, iontrap::SidebandColor::red);
      p.sigma = 0.01;
      pts.push_back(p);
    }
    iontrap::write_file(w + "/excite.csv", iontrap::excitation_csv(pts));
    expect(run("fit-phonons --data " + w + "/excite.csv --mode com" +
               " --color red --out-dir " + w + "/phonon") == 0,
           "fit-phonons runs");
    const auto pj = iontrap::Json::parse(slurp(w + "/phonon/phonon_fit.json"));
    const double nbar = pj.at("nbar").get<double>();
    expect(std::abs(nbar - 1.7) / 1.7 < 0.02,
           "fit-phonons recovers the injected occupation");
  }

  {
    const auto mj =
        iontrap::Json::parse(slurp(w + "/design/design_manifest.json"));
    expect(mj.contains("seed") && mj.contains("version") &&
               mj.contains("inputs"),
           "manifest records seed, version and inputs");
    expect(mj.at("command").get<std::string>() == "design",
           "manifest records the command");
  }

  if (failures == 0)
    std::printf("all cli checks passed\n");
  else
    std::fprintf(stderr, "%d cli checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
