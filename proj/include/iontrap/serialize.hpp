#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "iontrap/calibrate.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/electrodes.hpp"
#include "iontrap/optimizer.hpp"
#include "iontrap/rotation.hpp"
#include "iontrap/thermometry.hpp"

namespace iontrap {

using Json = nlohmann::json;

inline constexpr char kVersion[] = "0.1.0";

// FNV-1a, 64 bit; digests identify input files in manifests.
std::uint64_t fnv1a64(const void *data, std::size_t n);
std::string hex64(std::uint64_t value);

std::string read_file(const std::string &path);
void write_file(const std::string &path, const std::string &contents);
std::string file_digest(const std::string &path);

std::string format_double(double v); // %.17g, round-trip exact

Json matrix_to_json(const Eigen::MatrixXd &m);
Eigen::MatrixXd matrix_from_json(const Json &j);
Json vector_to_json(const Eigen::VectorXd &v);
Eigen::VectorXd vector_from_json(const Json &j);

Json to_json(const MultipoleVector &m);
MultipoleVector multipole_from_json(const Json &j);

Json to_json(const MultipoleSequence &seq);
MultipoleSequence sequence_from_json(const Json &j);

Json to_json(const WaveformParams &params);
WaveformParams params_from_json(const Json &j);

Json to_json(const CalibrationMap &map);
CalibrationMap calibration_from_json(const Json &j);

Json to_json(const MultipoleMatrix &mm);
MultipoleMatrix multipole_matrix_from_json(const Json &j);

Json to_json(const ObservableRecord &rec);
ObservableRecord observable_from_json(const Json &j);

Json to_json(const HeatingResult &hr);
Json to_json(const PhononFit &fit);

Json make_manifest(const std::string &command,
                   const std::vector<std::string> &argv, const Json &config,
                   const std::vector<std::pair<std::string, std::string>>
                       &input_digests,
                   std::uint64_t seed);

std::string voltage_csv(const VoltageSequence &seq,
                        const std::vector<std::string> &names);
VoltageSequence voltage_from_csv(const std::string &text);

std::string trajectory_csv(const Trajectory &traj);
std::string sweep_csv(const OffsetSweepResult &sweep);
std::string history_csv(const std::vector<CandidateRecord> &history);

std::string excitation_csv(const std::vector<ExcitationPoint> &points);
std::vector<ExcitationPoint> excitation_from_csv(const std::string &text);

} // namespace iontrap
