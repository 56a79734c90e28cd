#include "iontrap/calibrate.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"

namespace iontrap {

ObservableRecord predict_observables(const TrapPotential &trap,
                                     const Eigen::Vector3d &probe_k,
                                     const IonSpecies &species) {
  if (!(probe_k.norm() > 0))
    throw ConfigError("predict_observables: probe wavevector is zero");

  const Eigen::Matrix3d v = trap.curvature(species);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(v);
  if (es.eigenvalues().minCoeff() <= 0)
    throw NumericalError(
        "predict_observables: potential does not confine the ion");

  ObservableRecord rec;
  rec.setting = trap.dc;
  rec.displacement = es.eigenvectors() *
                     (es.eigenvectors().transpose() * trap.field())
                         .cwiseQuotient(es.eigenvalues());

  const Eigen::Matrix3d evec = es.eigenvectors();
  std::array<int, 3> vec_for_axis{-1, -1, -1};
  std::array<bool, 3> used_axis{}, used_vec{};
  for (int pick = 0; pick < 3; ++pick) {
    int bi = -1, bj = -1;
    double best = -1;
    for (int axis = 0; axis < 3; ++axis) {
      if (used_axis[axis])
        continue;
      for (int k = 0; k < 3; ++k) {
        if (used_vec[k])
          continue;
        if (std::abs(evec(axis, k)) > best) {
          best = std::abs(evec(axis, k));
          bi = axis;
          bj = k;
        }
      }
    }
    vec_for_axis[bi] = bj;
    used_axis[bi] = used_vec[bj] = true;
  }

  for (int axis = 0; axis < 3; ++axis) {
    Eigen::Vector3d col = evec.col(vec_for_axis[axis]);
    if (col[axis] < 0)
      col = -col;
    rec.axes.col(axis) = col;
    rec.frequencies[axis] = std::sqrt(
        species.charge * es.eigenvalues()[vec_for_axis[axis]] / species.mass);
  }
  rec.axes.col(2) = rec.axes.col(0).cross(rec.axes.col(1));

  rec.micromotion_index = 0.5 * probe_k.norm() * trap.rf.stability_q(species) *
                          rec.displacement.y();

  const Eigen::Vector3d khat = probe_k.normalized();
  for (int axis = 0; axis < 3; ++axis)
    rec.coupling_ratios[axis] =
        probe_k.norm() *
        std::sqrt(constants::hbar /
                  (2.0 * species.mass * rec.frequencies[axis])) *
        khat.dot(rec.axes.col(axis));
  return rec;
}

namespace {

constexpr std::array<int, 3> kTiltRows{3, 4, 6};

bool is_tilt_row(int r) {
  return r == kTiltRows[0] || r == kTiltRows[1] || r == kTiltRows[2];
}

struct FreeParams {
  std::vector<std::pair<int, int>> a_entries; // (row, col) of A
  int b_offset = 0;                           // index of first b entry
  int count = 0;
};

FreeParams layout(bool restrict_tilt) {
  FreeParams fp;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      if (restrict_tilt && is_tilt_row(r) && c != r)
        continue;
      fp.a_entries.emplace_back(r, c);
    }
  fp.b_offset = static_cast<int>(fp.a_entries.size());
  fp.count = fp.b_offset + 8;
  return fp;
}

CalibrationMap unpack(const FreeParams &fp, const Eigen::VectorXd &p,
                      bool restrict_tilt) {
  CalibrationMap map;
  map.a.setZero();
  map.tilt_rows_zeroed = restrict_tilt;
  for (int i = 0; i < static_cast<int>(fp.a_entries.size()); ++i)
    map.a(fp.a_entries[i].first, fp.a_entries[i].second) = p[i];
  map.b = p.segment<8>(fp.b_offset);
  return map;
}

bool evaluate_residuals(const CalibrationMap &map,
                        const std::vector<ObservableRecord> &records,
                        const RfPseudoPotential &rf,
                        const Eigen::Vector3d &probe_k,
                        const IonSpecies &species, Eigen::VectorXd &out) {
  const double freq_scale = 2.0 * kPi * 1e3;
  const double axis_scale = 0.01;
  const double disp_scale = 0.1e-6;
  out.resize(15 * static_cast<int>(records.size()));
  int row = 0;
  for (const auto &rec : records) {
    TrapPotential trap;
    trap.rf = rf;
    trap.dc = map.apply(rec.setting);
    ObservableRecord pred;
    try {
      pred = predict_observables(trap, probe_k, species);
    } catch (const NumericalError &) {
      return false;
    }
    out.segment<3>(row) = (pred.frequencies - rec.frequencies) / freq_scale;
    row += 3;
    for (int c = 0; c < 3; ++c) {
      out.segment<3>(row) = (pred.axes.col(c) - rec.axes.col(c)) / axis_scale;
      row += 3;
    }
    out.segment<3>(row) = (pred.displacement - rec.displacement) / disp_scale;
    row += 3;
  }
  return true;
}

} // namespace

CalibrationMap fit_calibration(const std::vector<ObservableRecord> &records,
                               const RfPseudoPotential &rf,
                               const Eigen::Vector3d &probe_k,
                               bool restrict_tilt, const IonSpecies &species) {
  const FreeParams fp = layout(restrict_tilt);
  if (15 * static_cast<int>(records.size()) < fp.count)
    throw ConfigError("fit_calibration: too few records for " +
                      std::to_string(fp.count) + " free parameters");

  Eigen::VectorXd p = Eigen::VectorXd::Zero(fp.count);
  for (int i = 0; i < static_cast<int>(fp.a_entries.size()); ++i)
    if (fp.a_entries[i].first == fp.a_entries[i].second)
      p[i] = 1.0;

  Eigen::VectorXd scales(fp.count);
  for (int i = 0; i < static_cast<int>(fp.a_entries.size()); ++i)
    scales[i] = 1.0;
  for (int i = 0; i < 8; ++i)
    scales[fp.b_offset + i] = i < 3 ? 1.0 : 1e4;

  Eigen::VectorXd r;
  if (!evaluate_residuals(unpack(fp, p, restrict_tilt), records, rf, probe_k,
                          species, r))
    throw NumericalError(
        "fit_calibration: a record is unstable under the identity map");
  double cost = r.squaredNorm();

  double mu = 1e-6;
  bool rank_checked = false;
  for (int iter = 0; iter < 60; ++iter) {
    Eigen::MatrixXd jac(r.size(), fp.count);
    for (int j = 0; j < fp.count; ++j) {
      const double h = 1e-6 * scales[j];
      Eigen::VectorXd pp = p;
      pp[j] += h;
      Eigen::VectorXd rp;
      if (!evaluate_residuals(unpack(fp, pp, restrict_tilt), records, rf,
                              probe_k, species, rp)) {
        pp[j] = p[j] - h;
        if (!evaluate_residuals(unpack(fp, pp, restrict_tilt), records, rf,
                                probe_k, species, rp))
          throw NumericalError("fit_calibration: model unstable around the "
                               "current parameters");
        jac.col(j) = (r - rp) / h;
      } else {
        jac.col(j) = (rp - r) / h;
      }
    }
    if (!rank_checked) {
      const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
      if (qr.rank() < fp.count)
        throw ConfigError(
            "fit_calibration: records leave the free parameters "
            "underdetermined (jacobian rank " +
            std::to_string(qr.rank()) + " of " + std::to_string(fp.count) +
            ")");
      rank_checked = true;
    }

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    Eigen::VectorXd diag = jtj.diagonal();
    diag = diag.cwiseMax(1e-12 * diag.maxCoeff() + 1e-300);

    bool improved = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal() += mu * diag;
      const Eigen::VectorXd delta = lhs.ldlt().solve(-jtr);
      Eigen::VectorXd rt;
      if (delta.allFinite() &&
          evaluate_residuals(unpack(fp, p + delta, restrict_tilt), records,
                             rf, probe_k, species, rt) &&
          rt.squaredNorm() < cost) {
        const double newcost = rt.squaredNorm();
        const bool stalled = newcost > cost * (1.0 - 1e-14);
        p += delta;
        r = rt;
        cost = newcost;
        mu = std::max(mu * 0.3, 1e-14);
        improved = true;
        if (stalled)
          iter = 60;
        break;
      }
      mu *= 4.0;
      if (mu > 1e14)
        break;
    }
    if (!improved)
      break;
  }
  return unpack(fp, p, restrict_tilt);
}

} // namespace iontrap
