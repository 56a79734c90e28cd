#include "iontrap/harmonics.hpp"

#include <cmath>
#include <stdexcept>

#include "iontrap/errors.hpp"

namespace iontrap {

double evaluate_harmonic(int l, int n, const Eigen::Vector3d &p) {
  const double x = p.x(), y = p.y(), z = p.z();
  if (l == 1) {
    const double c = std::sqrt(3.0 / (4.0 * kPi));
    switch (n) {
    case -1:
      return c * y;
    case 0:
      return c * z;
    case 1:
      return c * x;
    default:
      break;
    }
  } else if (l == 2) {
    const double c15 = std::sqrt(15.0 / kPi);
    const double c5 = std::sqrt(5.0 / kPi);
    switch (n) {
    case -2:
      return 0.5 * c15 * x * y;
    case -1:
      return 0.5 * c15 * y * z;
    case 0:
      return 0.25 * c5 * (2.0 * z * z - x * x - y * y);
    case 1:
      return 0.5 * c15 * x * z;
    case 2:
      return 0.25 * c15 * (x * x - y * y);
    default:
      break;
    }
  }
  throw std::domain_error("evaluate_harmonic: unsupported (l, n) = (" +
                          std::to_string(l) + ", " + std::to_string(n) + ")");
}

std::pair<Eigen::Vector3d, Eigen::Matrix3d>
multipole_to_matrix(const MultipoleVector &m) {
  Eigen::Vector3d field(m.f11, m.f1m1, m.f10);
  Eigen::Matrix3d v;
  // clang-format off
  v << -m.q20 + m.q22,  0.5 * m.q2m2,   0.5 * m.q21,
        0.5 * m.q2m2,  -m.q20 - m.q22,  0.5 * m.q2m1,
        0.5 * m.q21,    0.5 * m.q2m1,   2.0 * m.q20;
  // clang-format on
  return {field, v};
}

MultipoleVector matrix_to_multipole(const Eigen::Vector3d &field,
                                    const Eigen::Matrix3d &v) {
  MultipoleVector m;
  m.f11 = field.x();
  m.f1m1 = field.y();
  m.f10 = field.z();
  m.q2m2 = 2.0 * v(0, 1);
  m.q2m1 = 2.0 * v(1, 2);
  m.q20 = 0.5 * v(2, 2);
  m.q21 = 2.0 * v(0, 2);
  m.q22 = 0.5 * (v(0, 0) - v(1, 1));
  return m;
}

Eigen::Matrix3d TrapPotential::curvature(const IonSpecies &s) const {
  auto [field, v] = multipole_to_matrix(dc);
  const double vrf = rf.curvature(s);
  v(0, 0) += vrf;
  v(1, 1) += vrf;
  return v;
}

namespace {

int check_sizes(const Eigen::VectorXd &x,
                const std::vector<IonSpecies> &species) {
  const int n = static_cast<int>(species.size());
  if (x.size() != 3 * n)
    throw NumericalError("potential energy: positions and species disagree");
  return n;
}

} // namespace

double potential_energy(const Eigen::VectorXd &x,
                        const std::vector<IonSpecies> &species,
                        const TrapPotential &trap) {
  const int n = check_sizes(x, species);
  const auto [field, vdc] = multipole_to_matrix(trap.dc);
  double e = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix3d v = vdc;
    const double vrf = trap.rf.curvature(species[i]);
    v(0, 0) += vrf;
    v(1, 1) += vrf;
    const Eigen::Vector3d xi = x.segment<3>(3 * i);
    e += species[i].charge * (0.5 * xi.dot(v * xi) - field.dot(xi));
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double r = (x.segment<3>(3 * i) - x.segment<3>(3 * j)).norm();
      if (r <= 0)
        throw NumericalError("potential energy: coincident ions");
      e += constants::coulomb_constant * species[i].charge *
           species[j].charge / r;
    }
  }
  return e;
}

Eigen::VectorXd potential_gradient(const Eigen::VectorXd &x,
                                   const std::vector<IonSpecies> &species,
                                   const TrapPotential &trap) {
  const int n = check_sizes(x, species);
  const auto [field, vdc] = multipole_to_matrix(trap.dc);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * n);
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix3d v = vdc;
    const double vrf = trap.rf.curvature(species[i]);
    v(0, 0) += vrf;
    v(1, 1) += vrf;
    const Eigen::Vector3d xi = x.segment<3>(3 * i);
    g.segment<3>(3 * i) = species[i].charge * (v * xi - field);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Vector3d d = x.segment<3>(3 * i) - x.segment<3>(3 * j);
      const double r = d.norm();
      if (r <= 0)
        throw NumericalError("potential gradient: coincident ions");
      const Eigen::Vector3d f = -constants::coulomb_constant *
                                species[i].charge * species[j].charge * d /
                                (r * r * r);
      g.segment<3>(3 * i) += f;
      g.segment<3>(3 * j) -= f;
    }
  }
  return g;
}

Eigen::MatrixXd potential_hessian(const Eigen::VectorXd &x,
                                  const std::vector<IonSpecies> &species,
                                  const TrapPotential &trap) {
  const int n = check_sizes(x, species);
  const auto [field, vdc] = multipole_to_matrix(trap.dc);
  (void)field;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix3d v = vdc;
    const double vrf = trap.rf.curvature(species[i]);
    v(0, 0) += vrf;
    v(1, 1) += vrf;
    h.block<3, 3>(3 * i, 3 * i) = species[i].charge * v;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Vector3d d = x.segment<3>(3 * i) - x.segment<3>(3 * j);
      const double r = d.norm();
      if (r <= 0)
        throw NumericalError("potential hessian: coincident ions");
      const Eigen::Matrix3d c =
          constants::coulomb_constant * species[i].charge *
          species[j].charge *
          (3.0 * d * d.transpose() / (r * r) - Eigen::Matrix3d::Identity()) /
          (r * r * r);
      h.block<3, 3>(3 * i, 3 * i) += c;
      h.block<3, 3>(3 * j, 3 * j) += c;
      h.block<3, 3>(3 * i, 3 * j) -= c;
      h.block<3, 3>(3 * j, 3 * i) -= c;
    }
  }
  return h;
}

TrapPotential trap_from_secular_frequencies(const IonSpecies &s,
                                            const Eigen::Vector3d &omega,
                                            double drive_frequency) {
  const double wx2 = omega.x() * omega.x();
  const double wy2 = omega.y() * omega.y();
  const double wz2 = omega.z() * omega.z();
  const double moq = s.mass / s.charge;
  TrapPotential trap;
  trap.dc.q20 = 0.5 * moq * wz2;
  trap.dc.q22 = 0.5 * moq * (wx2 - wy2);
  const double vrf = 0.5 * moq * (wx2 + wy2) + trap.dc.q20;
  if (vrf <= 0)
    throw NumericalError("trap_from_secular_frequencies: drive curvature "
                         "would be non-positive");
  trap.rf.drive_frequency = drive_frequency;
  trap.rf.gradient_norm_sq =
      4.0 * s.mass * drive_frequency * drive_frequency * vrf / s.charge;
  return trap;
}

} // namespace iontrap
