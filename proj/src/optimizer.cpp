#include "iontrap/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "iontrap/errors.hpp"
#include "iontrap/rng.hpp"

namespace iontrap {

Eigen::VectorXd pack_candidate(const WaveformParams &params) {
  const int pm = params.p_max();
  Eigen::VectorXd x(8 * pm + 1);
  for (int p = 1; p <= pm; ++p)
    x.segment<8>(8 * (p - 1)) = params.a.row(p).transpose();
  x[8 * pm] = params.n_steps;
  return x;
}

WaveformParams unpack_candidate(const Eigen::VectorXd &x,
                                const WaveformParams &reference) {
  if ((x.size() - 1) % 8 != 0 || x.size() < 9)
    throw ConfigError("unpack_candidate: bad vector length");
  const int pm = static_cast<int>((x.size() - 1) / 8);
  WaveformParams params;
  params.sample_period = reference.sample_period;
  params.n_steps = std::max<int>(2, std::lround(x[8 * pm]));
  params.a.setZero(pm + 1, 8);
  params.a.row(0) = reference.a.row(0);
  for (int p = 1; p <= pm; ++p)
    params.a.row(p) = x.segment<8>(8 * (p - 1)).transpose();
  return params;
}

CandidateBatch sample_candidates(const Eigen::VectorXd &center,
                                 const Eigen::VectorXd &bounds, int k,
                                 std::uint64_t seed) {
  if (k < 1)
    throw ConfigError("sample_candidates: need at least one candidate");
  if (bounds.size() != center.size() || bounds.minCoeff() < 0)
    throw ConfigError("sample_candidates: bounds must be non-negative and "
                      "match the center size");
  CandidateBatch batch;
  batch.center = center;
  batch.bounds = bounds;
  batch.candidates.resize(center.size(), k);
  batch.candidates.col(0) = center;
  Rng rng(seed);
  for (int j = 1; j < k; ++j)
    for (int i = 0; i < center.size(); ++i)
      batch.candidates(i, j) =
          center[i] + bounds[i] * (2.0 * rng.uniform() - 1.0);
  return batch;
}

double SurrogateModel::predict(const Eigen::VectorXd &x) const {
  const Eigen::VectorXd xn = (x - in_mean).cwiseQuotient(in_std);
  const Eigen::VectorXd h = (w1 * xn + b1).array().tanh();
  return (w2.dot(h) + b2) * out_std + out_mean;
}

Eigen::VectorXd SurrogateModel::gradient(const Eigen::VectorXd &x) const {
  const Eigen::VectorXd xn = (x - in_mean).cwiseQuotient(in_std);
  const Eigen::VectorXd h = (w1 * xn + b1).array().tanh();
  const Eigen::VectorXd gate =
      w2.cwiseProduct(Eigen::VectorXd::Ones(h.size()) -
                      h.cwiseProduct(h));
  return out_std * (w1.transpose() * gate).cwiseQuotient(in_std);
}

namespace {

struct PackedNet {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1, w2;
  double b2 = 0;
};

int param_count(int width, int dim) { return width * (dim + 2) + 1; }

Eigen::VectorXd flatten(const PackedNet &n) {
  const int width = static_cast<int>(n.b1.size());
  const int dim = static_cast<int>(n.w1.cols());
  Eigen::VectorXd p(param_count(width, dim));
  int at = 0;
  for (int j = 0; j < width; ++j, at += dim)
    p.segment(at, dim) = n.w1.row(j).transpose();
  p.segment(at, width) = n.b1;
  at += width;
  p.segment(at, width) = n.w2;
  at += width;
  p[at] = n.b2;
  return p;
}

PackedNet unflatten(const Eigen::VectorXd &p, int width, int dim) {
  PackedNet n;
  n.w1.resize(width, dim);
  int at = 0;
  for (int j = 0; j < width; ++j, at += dim)
    n.w1.row(j) = p.segment(at, dim).transpose();
  n.b1 = p.segment(at, width);
  at += width;
  n.w2 = p.segment(at, width);
  at += width;
  n.b2 = p[at];
  return n;
}

double loss_of(const PackedNet &net, const Eigen::MatrixXd &xn,
               const Eigen::VectorXd &yn, const std::vector<int> &rows) {
  double s = 0;
  for (const int k : rows) {
    const Eigen::VectorXd h = (net.w1 * xn.col(k) + net.b1).array().tanh();
    const double r = net.w2.dot(h) + net.b2 - yn[k];
    s += r * r;
  }
  return s / std::max<std::size_t>(1, rows.size());
}

PackedNet train_once(const Eigen::MatrixXd &xn, const Eigen::VectorXd &yn,
                     const std::vector<int> &train_rows,
                     const std::vector<int> &val_rows, int width,
                     std::uint64_t seed, double &val_out) {
  const int dim = static_cast<int>(xn.rows());
  const int np = param_count(width, dim);
  const int nt = static_cast<int>(train_rows.size());

  Rng rng(seed);
  PackedNet net;
  net.w1.resize(width, dim);
  for (int j = 0; j < width; ++j)
    for (int i = 0; i < dim; ++i)
      net.w1(j, i) = rng.normal() / std::sqrt(static_cast<double>(dim));
  net.b1.resize(width);
  for (int j = 0; j < width; ++j)
    net.b1[j] = 0.2 * rng.normal();
  net.w2.resize(width);
  for (int j = 0; j < width; ++j)
    net.w2[j] = rng.normal() / std::sqrt(static_cast<double>(width));
  net.b2 = 0;

  Eigen::VectorXd theta = flatten(net);
  Eigen::VectorXd resid(nt);
  Eigen::MatrixXd jac(nt, np);

  const auto residuals = [&](const Eigen::VectorXd &th, Eigen::VectorXd &r) {
    const PackedNet n = unflatten(th, width, dim);
    for (int a = 0; a < nt; ++a) {
      const int k = train_rows[a];
      const Eigen::VectorXd h = (n.w1 * xn.col(k) + n.b1).array().tanh();
      r[a] = n.w2.dot(h) + n.b2 - yn[k];
    }
  };

  residuals(theta, resid);
  double cost = resid.squaredNorm();

  PackedNet best = net;
  double best_val = loss_of(net, xn, yn, val_rows);
  int since_best = 0;
  double mu = 1e-2;

  for (int iter = 0; iter < 150 && since_best < 20; ++iter) {
    const PackedNet n = unflatten(theta, width, dim);
    for (int a = 0; a < nt; ++a) {
      const int k = train_rows[a];
      const Eigen::VectorXd z = n.w1 * xn.col(k) + n.b1;
      const Eigen::VectorXd h = z.array().tanh();
      const Eigen::VectorXd gate =
          n.w2.cwiseProduct(Eigen::VectorXd::Ones(width) -
                            h.cwiseProduct(h));
      int at = 0;
      for (int j = 0; j < width; ++j, at += dim)
        jac.row(a).segment(at, dim) = gate[j] * xn.col(k).transpose();
      jac.row(a).segment(at, width) = gate.transpose();
      at += width;
      jac.row(a).segment(at, width) = h.transpose();
      at += width;
      jac(a, at) = 1.0;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * resid;
    Eigen::VectorXd diag = jtj.diagonal();
    diag = diag.cwiseMax(1e-12 * diag.maxCoeff() + 1e-300);

    bool improved = false;
    for (int tries = 0; tries < 20; ++tries) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal() += mu * diag;
      const Eigen::VectorXd delta = lhs.ldlt().solve(-jtr);
      Eigen::VectorXd rt(nt);
      if (delta.allFinite()) {
        residuals(theta + delta, rt);
        if (rt.squaredNorm() < cost) {
          theta += delta;
          resid = rt;
          cost = rt.squaredNorm();
          mu = std::max(mu * 0.3, 1e-12);
          improved = true;
          break;
        }
      }
      mu *= 4.0;
      if (mu > 1e14)
        break;
    }
    if (!improved)
      break;

    const double val = loss_of(unflatten(theta, width, dim), xn, yn, val_rows);
    if (val < best_val * (1.0 - 1e-9)) {
      best_val = val;
      best = unflatten(theta, width, dim);
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  val_out = best_val;
  return best;
}

} // namespace

SurrogateModel train_surrogate(const CandidateBatch &batch, int width,
                               std::uint64_t seed) {
  const int k = static_cast<int>(batch.candidates.cols());
  const int dim = static_cast<int>(batch.candidates.rows());
  if (width < 1)
    throw ConfigError("train_surrogate: width must be positive");
  if (batch.targets.size() != k)
    throw ConfigError("train_surrogate: batch is not evaluated");
  if (k < width + dim)
    throw ConfigError("train_surrogate: need at least width + dim samples");
  if (!batch.targets.allFinite())
    throw ConfigError("train_surrogate: non-finite targets");

  SurrogateModel model;
  model.in_mean = batch.candidates.rowwise().mean();
  model.in_std.resize(dim);
  for (int i = 0; i < dim; ++i) {
    const double var =
        (batch.candidates.row(i).array() - model.in_mean[i]).square().mean();
    model.in_std[i] = var > 0 ? std::sqrt(var) : 1.0;
  }
  model.out_mean = batch.targets.mean();
  const double ovar = (batch.targets.array() - model.out_mean).square().mean();
  model.out_std = ovar > 0 ? std::sqrt(ovar) : 1.0;

  model.w1 = Eigen::MatrixXd::Zero(width, dim);
  model.b1 = Eigen::VectorXd::Zero(width);
  model.w2 = Eigen::VectorXd::Zero(width);
  model.b2 = 0;
  if (!(ovar > 0)) {
    model.trivial = true;
    return model;
  }

  Eigen::MatrixXd xn(dim, k);
  for (int j = 0; j < k; ++j)
    xn.col(j) =
        (batch.candidates.col(j) - model.in_mean).cwiseQuotient(model.in_std);
  const Eigen::VectorXd yn =
      (batch.targets.array() - model.out_mean) / model.out_std;

  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i)
    perm[i] = i;
  Rng rng(Rng::derive_seed(seed, 0));
  for (int i = k - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<int>(rng.integer(i + 1))]);
  const int ntrain = std::max(1, (8 * k) / 10);
  std::vector<int> train_rows(perm.begin(), perm.begin() + ntrain);
  std::vector<int> val_rows(perm.begin() + ntrain, perm.end());
  if (val_rows.empty())
    val_rows = train_rows;

  PackedNet best;
  double best_val = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 3; ++s) {
    double val = 0;
    const PackedNet net = train_once(xn, yn, train_rows, val_rows, width,
                                     Rng::derive_seed(seed, 1 + s), val);
    if (val < best_val) {
      best_val = val;
      best = net;
    }
  }

  model.w1 = best.w1;
  model.b1 = best.b1;
  model.w2 = best.w2;
  model.b2 = best.b2;

  double ss_res = 0, ss_tot = 0;
  const double vmean = [&] {
    double s = 0;
    for (const int r : val_rows)
      s += yn[r];
    return s / val_rows.size();
  }();
  for (const int r : val_rows) {
    const Eigen::VectorXd h = (best.w1 * xn.col(r) + best.b1).array().tanh();
    const double pred = best.w2.dot(h) + best.b2;
    ss_res += (pred - yn[r]) * (pred - yn[r]);
    ss_tot += (yn[r] - vmean) * (yn[r] - vmean);
  }
  model.heldout_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
  return model;
}

MinimizeResult minimize_surrogate(const SurrogateModel &model,
                                  const std::vector<Eigen::VectorXd> &starts,
                                  const Eigen::VectorXd &center,
                                  const Eigen::VectorXd &bounds) {
  if (starts.empty())
    throw ConfigError("minimize_surrogate: no starting points");
  const int dim = static_cast<int>(center.size());
  const auto clip = [&](Eigen::VectorXd x) {
    for (int i = 0; i < dim; ++i)
      x[i] = std::clamp(x[i], center[i] - bounds[i], center[i] + bounds[i]);
    return x;
  };

  int active = 0;
  for (int i = 0; i < dim; ++i)
    if (bounds[i] > 0)
      ++active;
  const double diag = 2.0 * std::sqrt(static_cast<double>(std::max(1, active)));

  MinimizeResult res;
  res.flat = true;
  std::vector<Eigen::VectorXd> ends;
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto &start : starts) {
    Eigen::VectorXd x = clip(start);
    double f = model.predict(x);
    double step = 0.1;
    for (int iter = 0; iter < 300; ++iter) {
      const Eigen::VectorXd g = model.gradient(x);
      Eigen::VectorXd gs = g.cwiseProduct(bounds); // scaled-space gradient
      if (gs.norm() < 1e-12 * (1.0 + std::abs(f)))
        break;
      res.flat = false;
      bool moved = false;
      while (step > 1e-12) {
        const Eigen::VectorXd xt =
            clip(x - step * gs.cwiseProduct(bounds) / gs.norm());
        const double ft = model.predict(xt);
        if (ft < f - 1e-14 * (1.0 + std::abs(f))) {
          x = xt;
          f = ft;
          moved = true;
          step *= 1.3;
          break;
        }
        step *= 0.5;
      }
      if (!moved)
        break;
    }
    ends.push_back(x);
    if (f < best_f) {
      best_f = f;
      res.x = x;
      res.predicted = f;
    }
  }

  res.consensus = true;
  for (std::size_t i = 0; i < ends.size() && res.consensus; ++i)
    for (std::size_t j = i + 1; j < ends.size(); ++j) {
      double d2 = 0;
      for (int a = 0; a < dim; ++a)
        if (bounds[a] > 0) {
          const double d = (ends[i][a] - ends[j][a]) / bounds[a];
          d2 += d * d;
        }
      if (std::sqrt(d2) > 0.01 * diag) {
        res.consensus = false;
        break;
      }
    }
  return res;
}

namespace {

void evaluate_batch(const Oracle &oracle, CandidateBatch &batch,
                    const std::string &prefix, int threads) {
  const int k = static_cast<int>(batch.candidates.cols());
  batch.outcomes.assign(k, {});
  std::vector<std::exception_ptr> errors(k);
  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (;;) {
      const int j = next.fetch_add(1);
      if (j >= k)
        return;
      try {
        batch.outcomes[j] = oracle(batch.candidates.col(j));
      } catch (const IonLossError &) {
        batch.outcomes[j].loss = true;
        batch.outcomes[j].success = false;
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  int nthreads = threads > 0
                     ? threads
                     : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, k));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);

  batch.targets.resize(k);
  double worst = 0;
  bool any_finite = false;
  for (int j = 0; j < k; ++j) {
    const auto &o = batch.outcomes[j];
    if (o.loss)
      continue;
    double obj = 0;
    for (int i = 0; i < o.delta_n.size(); ++i)
      if (prefix.empty() ||
          o.labels[i].compare(0, prefix.size(), prefix) == 0)
        obj += o.delta_n[i];
    batch.targets[j] = obj;
    worst = any_finite ? std::max(worst, obj) : obj;
    any_finite = true;
  }
  const double penalty = any_finite && worst > 0 ? 10.0 * worst : 1.0;
  for (int j = 0; j < k; ++j)
    if (batch.outcomes[j].loss)
      batch.targets[j] = penalty;
  if (!any_finite)
    throw NumericalError("optimize_loop: every candidate in the batch lost "
                         "ions; tighten the search bounds");
}

double median_of(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  const int n = static_cast<int>(v.size());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

LoopResult optimize_loop(const Oracle &oracle, const Eigen::VectorXd &a_init,
                         const Eigen::VectorXd &bounds, const LoopConfig &cfg,
                         std::uint64_t seed) {
  if (cfg.iterations < 1)
    throw ConfigError("optimize_loop: iterations must be >= 1");
  if (cfg.batch_size < 2)
    throw ConfigError("optimize_loop: batch size too small");

  LoopResult result;
  Eigen::VectorXd center = a_init;
  Eigen::VectorXd bnd = bounds;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    if (iter > 0)
      bnd *= cfg.bound_shrink;
    CandidateBatch batch = sample_candidates(center, bnd, cfg.batch_size,
                                             Rng::derive_seed(seed, iter));
    evaluate_batch(oracle, batch, cfg.objective_prefix, cfg.threads);

    int best_j = -1;
    for (int j = 0; j < cfg.batch_size; ++j) {
      const auto &o = batch.outcomes[j];
      CandidateRecord rec;
      rec.iteration = iter;
      rec.index = j;
      rec.x = batch.candidates.col(j);
      rec.delta_n = o.delta_n;
      rec.labels = o.labels;
      rec.success = o.success;
      rec.loss = o.loss;
      rec.objective = batch.targets[j];
      result.history.push_back(std::move(rec));
      if (!o.loss && (best_j < 0 || batch.targets[j] < batch.targets[best_j]))
        best_j = j;
    }
    result.iteration_best.push_back(batch.targets[best_j]);
    result.iteration_median.push_back(median_of(batch.targets));
    result.best = batch.candidates.col(best_j);
    result.best_objective = batch.targets[best_j];

    if (iter + 1 == cfg.iterations)
      break;

    const SurrogateModel model = train_surrogate(
        batch, cfg.hidden_width, Rng::derive_seed(seed, 1000 + iter));
    result.surrogate_r2.push_back(model.heldout_r2);

    std::vector<int> order;
    for (int j = 0; j < cfg.batch_size; ++j)
      if (!batch.outcomes[j].loss)
        order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return batch.targets[a] != batch.targets[b]
                 ? batch.targets[a] < batch.targets[b]
                 : a < b;
    });
    const int n_elite = std::max(
        1, static_cast<int>(cfg.elite_fraction * cfg.batch_size));
    std::vector<Eigen::VectorXd> starts;
    for (int i = 0; i < std::min<int>(n_elite, order.size()); ++i)
      starts.push_back(batch.candidates.col(order[i]));

    const MinimizeResult m = minimize_surrogate(model, starts, center, bnd);
    center = m.x;
  }
  return result;
}

} // namespace iontrap
