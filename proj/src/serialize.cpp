#include "iontrap/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "iontrap/errors.hpp"

namespace iontrap {

std::uint64_t fnv1a64(const void *data, std::size_t n) {
  const auto *p = static_cast<const unsigned char *>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string &path, const std::string &contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write " + path);
  out << contents;
  if (!out)
    throw ConfigError("failed writing " + path);
}

std::string file_digest(const std::string &path) {
  const std::string bytes = read_file(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json matrix_to_json(const Eigen::MatrixXd &m) {
  Json data = Json::array();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      data.push_back(m(r, c));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const Json &j) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto &data = j.at("data");
  if (rows < 0 || cols < 0 ||
      static_cast<int>(data.size()) != rows * cols)
    throw ConfigError("matrix json has inconsistent shape");
  Eigen::MatrixXd m(rows, cols);
  int i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = data[i++].get<double>();
  return m;
}

Json vector_to_json(const Eigen::VectorXd &v) {
  Json data = Json::array();
  for (int i = 0; i < v.size(); ++i)
    data.push_back(v[i]);
  return data;
}

Eigen::VectorXd vector_from_json(const Json &j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

Json to_json(const MultipoleVector &m) {
  Json arr = Json::array();
  for (int i = 0; i < MultipoleVector::size; ++i)
    arr.push_back(m[i]);
  return arr;
}

MultipoleVector multipole_from_json(const Json &j) {
  if (j.size() != MultipoleVector::size)
    throw ConfigError("multipole vector needs 8 entries");
  MultipoleVector m;
  for (int i = 0; i < MultipoleVector::size; ++i)
    m[i] = j[i].get<double>();
  return m;
}

Json to_json(const MultipoleSequence &seq) {
  Json steps = Json::array();
  for (const auto &s : seq.steps)
    steps.push_back(to_json(s));
  Json angles = Json::array();
  for (int i = 0; i < seq.schedule.angles.size(); ++i)
    angles.push_back(seq.schedule.angles[i]);
  return Json{{"sample_period", seq.schedule.sample_period},
              {"angles", angles},
              {"steps", steps}};
}

MultipoleSequence sequence_from_json(const Json &j) {
  MultipoleSequence seq;
  seq.schedule.sample_period = j.at("sample_period").get<double>();
  const auto &angles = j.at("angles");
  seq.schedule.angles.resize(angles.size());
  for (std::size_t i = 0; i < angles.size(); ++i)
    seq.schedule.angles[static_cast<int>(i)] = angles[i].get<double>();
  for (const auto &s : j.at("steps"))
    seq.steps.push_back(multipole_from_json(s));
  if (seq.steps.size() != static_cast<std::size_t>(seq.schedule.angles.size()))
    throw ConfigError("sequence steps and angles disagree");
  return seq;
}

Json to_json(const WaveformParams &params) {
  Json res(Json::value_t::object);
  res["n_steps"] = params.n_steps;
  res["sample_period"] = params.sample_period;
  res["a"] = matrix_to_json(params.a);
  Json fr = Json::array();
  for (int i = 0; i < 8; ++i)
    fr.push_back(params.fit_residuals[i]);
  res["fit_residuals"] = fr;
  return res;
}

WaveformParams params_from_json(const Json &j) {
  WaveformParams params;
  params.n_steps = j.at("n_steps").get<int>();
  params.sample_period = j.at("sample_period").get<double>();
  params.a = matrix_from_json(j.at("a"));
  if (params.a.cols() != 8 || params.a.rows() < 1)
    throw ConfigError("waveform parameter matrix must be (p_max+1) x 8");
  if (j.contains("fit_residuals")) {
    const auto &fr = j.at("fit_residuals");
    for (int i = 0; i < 8 && i < static_cast<int>(fr.size()); ++i)
      params.fit_residuals[i] = fr[i].get<double>();
  }
  return params;
}

Json to_json(const CalibrationMap &map) {
  return Json{{"a", matrix_to_json(map.a)},
              {"b", vector_to_json(map.b)},
              {"tilt_rows_zeroed", map.tilt_rows_zeroed}};
}

CalibrationMap calibration_from_json(const Json &j) {
  CalibrationMap map;
  const Eigen::MatrixXd a = matrix_from_json(j.at("a"));
  const Eigen::VectorXd b = vector_from_json(j.at("b"));
  if (a.rows() != 8 || a.cols() != 8 || b.size() != 8)
    throw ConfigError("calibration map must be 8 x 8 with an 8-vector "
                      "offset");
  map.a = a;
  map.b = b;
  map.tilt_rows_zeroed = j.value("tilt_rows_zeroed", false);
  return map;
}

Json to_json(const MultipoleMatrix &mm) {
  Json sv = Json::array();
  for (int i = 0; i < mm.singular_values.size(); ++i)
    sv.push_back(mm.singular_values[i]);
  Json fr = Json::array();
  for (int i = 0; i < mm.fit_residuals.size(); ++i)
    fr.push_back(mm.fit_residuals[i]);
  return Json{{"names", mm.names},
              {"m", matrix_to_json(mm.m)},
              {"pseudo_inverse", matrix_to_json(mm.pseudo_inverse)},
              {"fit_residuals", fr},
              {"singular_values", sv},
              {"basis_condition", mm.basis_condition}};
}

MultipoleMatrix multipole_matrix_from_json(const Json &j) {
  MultipoleMatrix mm;
  mm.names = j.at("names").get<std::vector<std::string>>();
  mm.m = matrix_from_json(j.at("m"));
  mm.pseudo_inverse = matrix_from_json(j.at("pseudo_inverse"));
  if (mm.m.rows() != 8 || mm.pseudo_inverse.cols() != 8 ||
      mm.m.cols() != mm.pseudo_inverse.rows() ||
      mm.m.cols() != static_cast<int>(mm.names.size()))
    throw ConfigError("multipole matrix json has inconsistent shapes");
  if (j.contains("fit_residuals"))
    mm.fit_residuals = vector_from_json(j.at("fit_residuals"));
  if (j.contains("singular_values"))
    mm.singular_values = vector_from_json(j.at("singular_values"));
  mm.basis_condition = j.value("basis_condition", 0.0);
  return mm;
}

Json to_json(const ObservableRecord &rec) {
  Json axes = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      axes.push_back(rec.axes(r, c));
  Json freqs = Json::array(), disp = Json::array(), coup = Json::array();
  for (int i = 0; i < 3; ++i) {
    freqs.push_back(rec.frequencies[i]);
    disp.push_back(rec.displacement[i]);
    coup.push_back(rec.coupling_ratios[i]);
  }
  return Json{{"setting", to_json(rec.setting)},
              {"frequencies", freqs},
              {"axes", axes},
              {"displacement", disp},
              {"micromotion_index", rec.micromotion_index},
              {"coupling_ratios", coup}};
}

ObservableRecord observable_from_json(const Json &j) {
  ObservableRecord rec;
  rec.setting = multipole_from_json(j.at("setting"));
  const auto &freqs = j.at("frequencies");
  const auto &axes = j.at("axes");
  const auto &disp = j.at("displacement");
  if (freqs.size() != 3 || axes.size() != 9 || disp.size() != 3)
    throw ConfigError("observable record has inconsistent shapes");
  for (int i = 0; i < 3; ++i) {
    rec.frequencies[i] = freqs[i].get<double>();
    rec.displacement[i] = disp[i].get<double>();
  }
  int i = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      rec.axes(r, c) = axes[i++].get<double>();
  rec.micromotion_index = j.value("micromotion_index", 0.0);
  if (j.contains("coupling_ratios"))
    for (int k = 0; k < 3; ++k)
      rec.coupling_ratios[k] = j.at("coupling_ratios")[k].get<double>();
  return rec;
}

Json to_json(const HeatingResult &hr) {
  Json dn(Json::value_t::object);
  for (int i = 0; i < hr.delta_n.size(); ++i)
    dn[hr.mode_labels[i]] = hr.delta_n[i];
  double mm_peak = 0;
  for (int i = 0; i < hr.micromotion_trace.size(); ++i)
    mm_peak = std::max(mm_peak, hr.micromotion_trace[i]);
  return Json{{"delta_n", dn},
              {"success", hr.success},
              {"final_order", hr.final_order},
              {"peak_y_displacement", hr.peak_y_displacement},
              {"micromotion_peak", mm_peak}};
}

Json to_json(const PhononFit &fit) {
  return Json{{"nbar", fit.nbar},
              {"sigma", fit.sigma},
              {"lower", fit.lower},
              {"upper", fit.upper},
              {"chi_squared", fit.chi_squared}};
}

Json make_manifest(const std::string &command,
                   const std::vector<std::string> &argv, const Json &config,
                   const std::vector<std::pair<std::string, std::string>>
                       &input_digests,
                   std::uint64_t seed) {
  const std::string cfg = config.dump();
  Json inputs(Json::value_t::object);
  for (const auto &[name, digest] : input_digests)
    inputs[name] = digest;
  return Json{{"command", command},
              {"argv", argv},
              {"config_digest", hex64(fnv1a64(cfg.data(), cfg.size()))},
              {"inputs", inputs},
              {"seed", seed},
              {"version", kVersion}};
}

namespace {

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string &s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw ConfigError("cannot parse number '" + s + "'");
  }
}

} // namespace

std::string voltage_csv(const VoltageSequence &seq,
                        const std::vector<std::string> &names) {
  if (static_cast<int>(names.size()) != seq.channels())
    throw ConfigError("voltage_csv: channel names do not match");
  std::string out = "t";
  for (const auto &n : names)
    out += "," + n;
  out += "\n";
  for (int k = 0; k < seq.length(); ++k) {
    out += format_double(k * seq.sample_period);
    for (int c = 0; c < seq.channels(); ++c)
      out += "," + format_double(seq.samples(c, k));
    out += "\n";
  }
  return out;
}

VoltageSequence voltage_from_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("empty voltage file");
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "t")
    throw ConfigError("voltage file must start with a 't' column");
  const int channels = static_cast<int>(header.size()) - 1;

  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const auto cells = split(line, ',');
    if (static_cast<int>(cells.size()) != channels + 1)
      throw ConfigError("voltage row has the wrong number of cells");
    times.push_back(parse_double(cells[0]));
    std::vector<double> row(channels);
    for (int c = 0; c < channels; ++c)
      row[c] = parse_double(cells[c + 1]);
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw ConfigError("voltage file has no samples");

  VoltageSequence seq;
  seq.samples.resize(channels, static_cast<int>(rows.size()));
  for (int k = 0; k < static_cast<int>(rows.size()); ++k)
    for (int c = 0; c < channels; ++c)
      seq.samples(c, k) = rows[k][c];
  if (times.size() > 1)
    seq.sample_period = times[1] - times[0];
  if (seq.sample_period <= 0)
    throw ConfigError("voltage file times must increase");
  return seq;
}

std::string trajectory_csv(const Trajectory &traj) {
  const int n = traj.ion_count();
  std::string out = "t";
  for (int i = 0; i < n; ++i) {
    const std::string tag = std::to_string(i) + "_" + traj.species[i].label;
    out += ",x" + tag + ",y" + tag + ",z" + tag;
  }
  out += "\n";
  for (int k = 0; k < traj.times.size(); ++k) {
    out += format_double(traj.times[k]);
    for (int c = 0; c < 3 * n; ++c)
      out += "," + format_double(traj.positions(c, k));
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const OffsetSweepResult &sweep) {
  std::string out = "e_x,initial_order,outcome,regime\n";
  for (std::size_t i = 0; i < sweep.e_x.size(); ++i) {
    const std::string regime = sweep.regime(static_cast<int>(i));
    for (int j = 0; j < 2; ++j) {
      out += format_double(sweep.e_x[i]);
      out += "," + sweep.initial_orders[j];
      out += "," + sweep.outcomes[i][j];
      out += "," + regime + "\n";
    }
  }
  return out;
}

std::string history_csv(const std::vector<CandidateRecord> &history) {
  std::string out =
      "iteration,index,params_digest,success,loss,objective,heating\n";
  for (const auto &rec : history) {
    out += std::to_string(rec.iteration) + "," + std::to_string(rec.index);
    out += "," + hex64(fnv1a64(rec.x.data(), sizeof(double) * rec.x.size()));
    out += rec.success ? ",1" : ",0";
    out += rec.loss ? ",1" : ",0";
    out += "," + format_double(rec.objective) + ",";
    for (int i = 0; i < rec.delta_n.size(); ++i) {
      if (i)
        out += ";";
      out += rec.labels[i] + "=" + format_double(rec.delta_n[i]);
    }
    out += "\n";
  }
  return out;
}

std::string excitation_csv(const std::vector<ExcitationPoint> &points) {
  std::string out = "t_s,excitation,sigma\n";
  for (const auto &p : points)
    out += format_double(p.t) + "," + format_double(p.excitation) + "," +
           format_double(p.sigma) + "\n";
  return out;
}

std::vector<ExcitationPoint> excitation_from_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("empty excitation file");
  const auto header = split(line, ',');
  if (header.size() != 3 || header[0] != "t_s")
    throw ConfigError("excitation file needs columns t_s,excitation,sigma");
  std::vector<ExcitationPoint> points;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const auto cells = split(line, ',');
    if (cells.size() != 3)
      throw ConfigError("excitation row has the wrong number of cells");
    points.push_back({parse_double(cells[0]), parse_double(cells[1]),
                      parse_double(cells[2])});
  }
  return points;
}

} // namespace iontrap
