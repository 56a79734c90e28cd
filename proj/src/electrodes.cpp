#include "iontrap/electrodes.hpp"

#include <cmath>

#include "iontrap/errors.hpp"

namespace iontrap {

PlanarTrapGeometry default_trap_geometry() {
  // Loading slot spans |x| < 50 um and the RF rails flank it out to 90 um;
  // both are grounded plane for the DC basis, so they carry no channel.
  // The central electrode halves sit just behind the rails and ten segment
  // pairs follow with a 210 um axial pitch.
  PlanarTrapGeometry g;
  g.ion_height = 110e-6;

  ElectrodeChannel center;
  center.name = "center";
  center.patches.push_back({-130e-6, -90e-6, -1045e-6, 1045e-6});
  center.patches.push_back({90e-6, 130e-6, -1045e-6, 1045e-6});
  g.channels.push_back(center);

  for (int side = 0; side < 2; ++side) {
    const double x1 = side == 0 ? -1130e-6 : 130e-6;
    const double x2 = side == 0 ? -130e-6 : 1130e-6;
    const char tag = side == 0 ? 'l' : 'r';
    for (int j = 0; j < 10; ++j) {
      const double z1 = -1045e-6 + 210e-6 * j;
      ElectrodeChannel c;
      c.name = std::string(1, tag) + std::to_string(j);
      c.patches.push_back({x1, x2, z1, z1 + 200e-6});
      g.channels.push_back(c);
    }
  }
  return g;
}

double patch_potential(const ElectrodePatch &e, const Eigen::Vector3d &p) {
  const double y = p.y();
  const auto term = [&](double xe, double ze) {
    const double dx = xe - p.x();
    const double dz = ze - p.z();
    return std::atan2(dx * dz, y * std::sqrt(dx * dx + y * y + dz * dz));
  };
  return (term(e.x2, e.z2) - term(e.x1, e.z2) - term(e.x2, e.z1) +
          term(e.x1, e.z1)) /
         (2.0 * kPi);
}

ElectrodeBasisGrid make_synthetic_basis(const PlanarTrapGeometry &geometry,
                                        double half_extent,
                                        int points_per_axis) {
  if (geometry.ion_height <= 0)
    throw ConfigError("make_synthetic_basis: ion height must be positive");
  if (points_per_axis < 3)
    throw ConfigError("make_synthetic_basis: need at least 3 points per axis");

  std::vector<std::pair<std::string, ElectrodePatch>> all;
  for (const auto &c : geometry.channels) {
    if (c.patches.empty())
      throw ConfigError("make_synthetic_basis: channel '" + c.name +
                        "' has no patches");
    for (const auto &e : c.patches) {
      if (e.x2 <= e.x1 || e.z2 <= e.z1)
        throw ConfigError("make_synthetic_basis: degenerate patch in "
                          "channel '" +
                          c.name + "'");
      all.emplace_back(c.name, e);
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const auto &a = all[i].second, &b = all[j].second;
      if (std::min(a.x2, b.x2) - std::max(a.x1, b.x1) > 0 &&
          std::min(a.z2, b.z2) - std::max(a.z1, b.z1) > 0)
        throw ConfigError("make_synthetic_basis: channels '" + all[i].first +
                          "' and '" + all[j].first + "' overlap");
    }

  ElectrodeBasisGrid grid;
  grid.center = Eigen::Vector3d(0, geometry.ion_height, 0);
  const int npa = points_per_axis;
  const int n = npa * npa * npa;
  grid.points.resize(n, 3);
  int row = 0;
  for (int ix = 0; ix < npa; ++ix)
    for (int iy = 0; iy < npa; ++iy)
      for (int iz = 0; iz < npa; ++iz) {
        const auto coord = [&](int idx) {
          return half_extent * (2.0 * idx / (npa - 1) - 1.0);
        };
        grid.points.row(row++) =
            grid.center + Eigen::Vector3d(coord(ix), coord(iy), coord(iz));
      }

  const int k = static_cast<int>(geometry.channels.size());
  grid.samples.resize(k, n);
  grid.names.reserve(k);
  for (int c = 0; c < k; ++c) {
    grid.names.push_back(geometry.channels[c].name);
    for (int i = 0; i < n; ++i) {
      double phi = 0;
      for (const auto &e : geometry.channels[c].patches)
        phi += patch_potential(e, grid.points.row(i).transpose());
      grid.samples(c, i) = phi;
    }
  }
  return grid;
}

MultipoleMatrix expand_multipoles(const ElectrodeBasisGrid &grid,
                                  double svd_cutoff) {
  const int n = static_cast<int>(grid.points.rows());
  const int k = grid.channel_count();
  if (n < MultipoleVector::size + 1)
    throw ConfigError("expand_multipoles: fewer grid points than basis terms");

  Eigen::MatrixXd psi(n, MultipoleVector::size + 1);
  for (int j = 0; j < MultipoleVector::size; ++j) {
    MultipoleVector unit;
    unit[j] = 1.0;
    const auto [field, v] = multipole_to_matrix(unit);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d d =
          grid.points.row(i).transpose() - grid.center;
      psi(i, j) = -field.dot(d) + 0.5 * d.dot(v * d);
    }
  }
  psi.col(MultipoleVector::size).setOnes();

  Eigen::BDCSVD<Eigen::MatrixXd> svd_psi(psi, Eigen::ComputeThinU |
                                                  Eigen::ComputeThinV);
  const auto &sv = svd_psi.singularValues();
  if (sv(sv.size() - 1) <= 1e-12 * sv(0))
    throw ConfigError("expand_multipoles: grid does not resolve the "
                      "multipole basis (rank-deficient regressor)");

  MultipoleMatrix mm;
  mm.names = grid.names;
  mm.basis_condition = sv(0) / sv(sv.size() - 1);
  mm.m.resize(MultipoleVector::size, k);
  mm.fit_residuals.resize(k);
  for (int c = 0; c < k; ++c) {
    const Eigen::VectorXd phi = grid.samples.row(c).transpose();
    const Eigen::VectorXd coeff = svd_psi.solve(phi);
    mm.m.col(c) = coeff.head(MultipoleVector::size);
    const double rms = std::sqrt(phi.squaredNorm() / n);
    const double res =
        std::sqrt((psi * coeff - phi).squaredNorm() / n);
    mm.fit_residuals(c) = rms > 0 ? res / rms : 0.0;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd_m(mm.m, Eigen::ComputeThinU |
                                                    Eigen::ComputeThinV);
  mm.singular_values = svd_m.singularValues();
  const double smax = mm.singular_values(0);
  Eigen::VectorXd inv = mm.singular_values;
  for (int i = 0; i < inv.size(); ++i)
    inv(i) = mm.singular_values(i) > svd_cutoff * smax
                 ? 1.0 / mm.singular_values(i)
                 : 0.0;
  mm.pseudo_inverse =
      svd_m.matrixV() * inv.asDiagonal() * svd_m.matrixU().transpose();
  return mm;
}

VoltageSet voltages_for_multipoles(const MultipoleMatrix &mm,
                                   const MultipoleVector &m, double clamp) {
  const Eigen::Matrix<double, 8, 1> target = m.to_vector();
  VoltageSet vs;
  vs.names = mm.names;
  vs.volts = mm.pseudo_inverse * target;
  const double tnorm = target.norm();
  vs.residual = tnorm > 0 ? (mm.m * vs.volts - target).norm() / tnorm : 0.0;

  std::string offenders;
  for (int i = 0; i < vs.volts.size(); ++i)
    if (std::abs(vs.volts(i)) > clamp) {
      if (!offenders.empty())
        offenders += ", ";
      offenders += mm.names.empty() ? std::to_string(i) : mm.names[i];
    }
  if (!offenders.empty())
    throw ConfigError("voltages_for_multipoles: clamp of " +
                      std::to_string(clamp) + " V exceeded on: " + offenders);
  return vs;
}

} // namespace iontrap
