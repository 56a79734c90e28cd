#include "iontrap/crystal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iontrap/errors.hpp"
#include "numerics.hpp"

namespace iontrap {

double CrystalConfiguration::separation() const {
  if (ion_count() != 2)
    throw NumericalError("separation: defined for two-ion crystals only");
  return (position(0) - position(1)).norm();
}

CongruenceTransform
simultaneous_diagonalize(const Eigen::Matrix<double, 6, 6> &v) {
  using Matrix6 = Eigen::Matrix<double, 6, 6>;
  const double s = 1.0 / std::sqrt(2.0);
  Matrix6 p = Matrix6::Zero();
  p.block<3, 3>(0, 0) = s * Eigen::Matrix3d::Identity();
  p.block<3, 3>(0, 3) = s * Eigen::Matrix3d::Identity();
  p.block<3, 3>(3, 0) = -s * Eigen::Matrix3d::Identity();
  p.block<3, 3>(3, 3) = s * Eigen::Matrix3d::Identity();

  const Matrix6 w = p.transpose() * v * p;
  const Eigen::Matrix3d a = w.block<3, 3>(0, 0);
  const Eigen::Matrix3d b = w.block<3, 3>(0, 3);
  const Eigen::Matrix3d e = w.block<3, 3>(3, 3);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es_e(e);
  const Eigen::Vector3d we = es_e.eigenvalues();
  const double emax = we.cwiseAbs().maxCoeff();
  if (we.cwiseAbs().minCoeff() <= 1e-14 * emax || emax == 0)
    throw NumericalError("simultaneous_diagonalize: potential is singular "
                         "on the center-of-mass block");
  const Eigen::Matrix3d einv = es_e.eigenvectors() *
                               we.cwiseInverse().asDiagonal() *
                               es_e.eigenvectors().transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es_s(
      a - b * einv * b.transpose());
  const Eigen::Matrix3d s1 = es_s.eigenvectors();
  const Eigen::Matrix3d x = -einv * b.transpose() * s1;

  CongruenceTransform ct;
  Matrix6 smat = Matrix6::Zero();
  smat.block<3, 3>(0, 0) = s1;
  smat.block<3, 3>(3, 0) = x;
  smat.block<3, 3>(3, 3) = es_e.eigenvectors();
  ct.transform = p * smat;
  ct.diagonal.head<3>() = es_s.eigenvalues();
  ct.diagonal.tail<3>() = we;
  return ct;
}

namespace {

double characteristic_force(const Eigen::VectorXd &x,
                            const std::vector<IonSpecies> &species,
                            const TrapPotential &trap) {
  const auto [field, vdc] = multipole_to_matrix(trap.dc);
  double f = 1e-30;
  const int n = static_cast<int>(species.size());
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix3d vi = vdc;
    const double vrf = trap.rf.curvature(species[i]);
    vi(0, 0) += vrf;
    vi(1, 1) += vrf;
    const Eigen::Vector3d xi = x.segment<3>(3 * i);
    f = std::max(f, species[i].charge * (field.norm() + (vi * xi).norm()));
    for (int j = i + 1; j < n; ++j) {
      const double r = (xi - x.segment<3>(3 * j)).norm();
      if (r > 0)
        f = std::max(f, constants::coulomb_constant * species[i].charge *
                            species[j].charge / (r * r));
    }
  }
  return f;
}

} // namespace

CrystalConfiguration
equilibrium_numeric(const TrapPotential &trap,
                    const std::vector<IonSpecies> &species,
                    const Eigen::VectorXd &guess) {
  if (guess.size() != 3 * static_cast<Eigen::Index>(species.size()))
    throw ConfigError("equilibrium_numeric: guess size mismatch");
  Eigen::VectorXd x = guess;
  double energy = potential_energy(x, species, trap);

  const int max_iter = 300;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd g = potential_gradient(x, species, trap);
    const double fscale = characteristic_force(x, species, trap);
    if (g.lpNorm<Eigen::Infinity>() <= 1e-12 * fscale)
      break;

    const Eigen::MatrixXd h = potential_hessian(x, species, trap);
    Eigen::VectorXd step = -h.ldlt().solve(g);
    bool descent = step.allFinite() && step.dot(g) < 0;
    if (!descent) {
      double len = 1e-7;
      for (int i = 0; i < x.size() / 3; ++i)
        for (int j = i + 1; j < x.size() / 3; ++j)
          len = std::max(
              len, 0.05 * (x.segment<3>(3 * i) - x.segment<3>(3 * j)).norm());
      step = -g.normalized() * len;
    }

    double t = 1.0;
    const double slope = g.dot(step);
    bool moved = false;
    while (t > 1e-20) {
      const Eigen::VectorXd xt = x + t * step;
      double et;
      try {
        et = potential_energy(xt, species, trap);
      } catch (const NumericalError &) {
        t *= 0.5;
        continue;
      }
      if (et <= energy + 1e-4 * t * slope) {
        x = xt;
        energy = et;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved)
      break;
  }

  const Eigen::VectorXd g = potential_gradient(x, species, trap);
  if (g.lpNorm<Eigen::Infinity>() >
      1e-9 * characteristic_force(x, species, trap))
    throw NumericalError("equilibrium_numeric: did not converge");
  return {species, x};
}

CrystalConfiguration
equilibrium_two_ion_analytic(const TrapPotential &trap,
                             const std::vector<IonSpecies> &species) {
  if (species.size() != 2)
    throw ConfigError("equilibrium_two_ion_analytic: needs exactly two ions");
  const auto [field, vdc] = multipole_to_matrix(trap.dc);

  Eigen::Matrix<double, 6, 6> v6 = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 1> g;
  for (int i = 0; i < 2; ++i) {
    Eigen::Matrix3d vi = vdc;
    const double vrf = trap.rf.curvature(species[i]);
    vi(0, 0) += vrf;
    vi(1, 1) += vrf;
    v6.block<3, 3>(3 * i, 3 * i) = species[i].charge * vi;
    g.segment<3>(3 * i) = species[i].charge * field;
  }

  const CongruenceTransform ct = simultaneous_diagonalize(v6);
  const Eigen::Matrix<double, 6, 1> vp = ct.diagonal;
  const Eigen::Matrix<double, 6, 1> gp = ct.transform.transpose() * g;
  const double kqq =
      constants::coulomb_constant * species[0].charge * species[1].charge;

  const double gscale = std::max(gp.norm(), 1e-300);
  std::vector<int> act;
  for (int i = 0; i < 3; ++i)
    if (std::abs(gp[i]) > 1e-12 * gscale)
      act.push_back(i);

  const auto h = [&](double u) {
    const double lam = std::exp(u);
    double s = 0;
    for (int i : act) {
      const double d = vp[i] - 2.0 * lam;
      s += 2.0 * gp[i] * gp[i] / (d * d);
    }
    return s - std::cbrt(kqq * kqq) * std::exp(-2.0 * u / 3.0);
  };

  std::vector<double> poles;
  for (int i : act)
    if (vp[i] > 0)
      poles.push_back(vp[i] / 2.0);
  std::sort(poles.begin(), poles.end());

  std::vector<double> lams;
  if (!poles.empty()) {
    std::vector<double> edges;
    edges.push_back(std::log(poles.front()) - 30.0);
    for (double p : poles)
      edges.push_back(std::log(p));
    edges.push_back(std::log(poles.back()) + 30.0);
    const int npts = 800;
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
      const double lo = edges[k] + 1e-9, hi = edges[k + 1] - 1e-9;
      if (hi <= lo)
        continue;
      double up = lo, hp = h(lo);
      for (int j = 1; j < npts; ++j) {
        const double u = lo + (hi - lo) * j / (npts - 1);
        const double hv = h(u);
        if (std::isfinite(hp) && std::isfinite(hv) && hp * hv < 0)
          lams.push_back(
              std::exp(detail::brent_root(h, up, u, 1e-14, 8.9e-16)));
        up = u;
        hp = hv;
      }
    }
  }

  struct Pinned {
    double lam;
    int axis;
    double t;
  };
  std::vector<Pinned> pinned;
  for (int i = 0; i < 3; ++i) {
    if (std::find(act.begin(), act.end(), i) != act.end() || vp[i] <= 0)
      continue;
    const double lam = vp[i] / 2.0;
    double rest = 0;
    for (int j : act) {
      const double d = vp[j] - 2.0 * lam;
      rest += gp[j] * gp[j] / (d * d);
    }
    const double r = kqq / lam;
    const double t2 = 0.5 * std::cbrt(r * r) - rest;
    if (t2 >= 0) {
      pinned.push_back({lam, i, std::sqrt(t2)});
      if (t2 > 0)
        pinned.push_back({lam, i, -std::sqrt(t2)});
    }
  }

  std::vector<Eigen::Matrix<double, 6, 1>> candidates;
  const auto push_candidate = [&](double lam, int pin_axis, double pin_t) {
    Eigen::Matrix<double, 6, 1> xp = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i : act)
      if (i != pin_axis)
        xp[i] = gp[i] / (vp[i] - 2.0 * lam);
    if (pin_axis >= 0)
      xp[pin_axis] = pin_t;
    for (int i = 3; i < 6; ++i)
      xp[i] = gp[i] / vp[i];
    candidates.push_back(ct.transform * xp);
  };
  for (double lam : lams)
    push_candidate(lam, -1, 0);
  for (const Pinned &pn : pinned)
    push_candidate(pn.lam, pn.axis, pn.t);

  Eigen::VectorXd best;
  double best_energy = std::numeric_limits<double>::infinity();
  for (const auto &xc : candidates) {
    Eigen::VectorXd x = xc;
    if ((x.head<3>() - x.tail<3>()).norm() < 1e-12)
      continue;
    const Eigen::MatrixXd hess = potential_hessian(x, species, trap);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess,
                                                      Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0)
      continue;
    const double energy = potential_energy(x, species, trap);
    if (energy < best_energy) {
      best_energy = energy;
      best = x;
    }
  }
  if (best.size() == 0)
    throw NumericalError(
        "equilibrium_two_ion_analytic: no stable configuration; the "
        "potential does not trap this pair");
  return {species, best};
}

ModeSpectrum mode_spectrum(const TrapPotential &trap,
                           const CrystalConfiguration &config) {
  const int n = config.ion_count();
  const Eigen::MatrixXd h =
      potential_hessian(config.positions, config.species, trap);
  Eigen::VectorXd dinv(3 * n);
  for (int i = 0; i < n; ++i)
    dinv.segment<3>(3 * i).setConstant(1.0 / std::sqrt(config.species[i].mass));
  const Eigen::MatrixXd ht =
      dinv.asDiagonal() * h * dinv.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (ht + ht.transpose()));
  ModeSpectrum spec;
  spec.mode_vectors = es.eigenvectors();
  spec.frequencies.resize(3 * n);
  spec.stable = true;
  for (int i = 0; i < 3 * n; ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev > 0) {
      spec.frequencies[i] = std::sqrt(ev);
    } else {
      spec.frequencies[i] = -std::sqrt(-ev);
      spec.stable = false;
    }
  }

  spec.labels.resize(3 * n);
  for (int k = 0; k < 3 * n; ++k) {
    const Eigen::VectorXd v = spec.mode_vectors.col(k);
    double axis_norm[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a)
        axis_norm[a] += v[3 * i + a] * v[3 * i + a];
    const int axis = static_cast<int>(
        std::max_element(axis_norm, axis_norm + 3) - axis_norm);
    std::string label(1, "xyz"[axis]);
    if (n == 2) {
      const double together = v.head<3>().dot(v.tail<3>());
      label += together >= 0 ? "-com" : "-str";
    }
    spec.labels[k] = label;
  }
  return spec;
}

} // namespace iontrap
