#include "chainsgd/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace chainsgd {

Distribution Distribution::ZeroMeanUniform(double scale) {
  if (scale < 0.0) throw std::invalid_argument("zero_mean_uniform: negative scale");
  Distribution d;
  d.kind = Kind::kZeroMeanUniform;
  d.scale = scale;
  return d;
}

Distribution Distribution::ShiftedUniform(double scale) {
  if (scale < 0.0) throw std::invalid_argument("shifted_uniform: negative scale");
  Distribution d;
  d.kind = Kind::kShiftedUniform;
  d.scale = scale;
  return d;
}

Distribution Distribution::Constant(Eigen::VectorXd value) {
  Distribution d;
  d.kind = Kind::kConstant;
  d.constant = std::move(value);
  return d;
}

Distribution Distribution::Gaussian(Eigen::VectorXd mean, double stddev) {
  if (stddev < 0.0) throw std::invalid_argument("gaussian: negative stddev");
  Distribution d;
  d.kind = Kind::kGaussian;
  d.mean = std::move(mean);
  d.stddev = stddev;
  return d;
}

bool Distribution::zero_mean() const {
  switch (kind) {
    case Kind::kNone:
      return true;
    case Kind::kZeroMeanUniform:
      return true;
    case Kind::kShiftedUniform:
      return scale == 0.0;
    case Kind::kConstant:
      return constant.size() == 0 || constant.isZero(0.0);
    case Kind::kGaussian:
      return mean.size() == 0 || mean.isZero(0.0);
  }
  return true;
}

Schedule Schedule::Periodic(long interval, long phase) {
  if (interval < 1) throw std::invalid_argument("periodic schedule: interval < 1");
  if (phase < 0 || phase >= interval) {
    throw std::invalid_argument("periodic schedule: phase outside [0, interval)");
  }
  return {Kind::kPeriodic, interval, phase, 0};
}

bool Schedule::active_at(long t) const {
  switch (kind) {
    case Kind::kEveryIteration:
      return true;
    case Kind::kPeriodic:
      return t % interval == phase;
    case Kind::kOneShot:
      return t == shot;
    case Kind::kNever:
      return false;
  }
  return false;
}

Eigen::VectorXd top_k_compress(const Eigen::VectorXd& v, int k) {
  if (k < 1) throw std::invalid_argument("top_k_compress: k < 1");
  const int n = static_cast<int>(v.size());
  if (k >= n) return v;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Stable partial sort on magnitude; equal magnitudes keep the lower index.
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return std::abs(v(a)) > std::abs(v(b));
  });
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < k; ++i) out(idx[i]) = v(idx[i]);
  return out;
}

const PlanEntry* PerturbationPlan::entry(int layer, PassKind pass) const {
  const auto& table = (pass == PassKind::kForward) ? forward : backward;
  auto it = table.find(layer);
  return it == table.end() ? nullptr : &it->second;
}

const Compressor* PerturbationPlan::compressor(int layer, PassKind pass) const {
  const auto& table = (pass == PassKind::kForward) ? forward_compressor : backward_compressor;
  auto it = table.find(layer);
  if (it == table.end() || it->second.kind == Compressor::Kind::kNone) return nullptr;
  return &it->second;
}

Eigen::VectorXd sample_distribution(const Distribution& dist, int dim, SplitMix64& rng) {
  if (dim < 0) throw std::invalid_argument("sample_distribution: negative dim");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
  switch (dist.kind) {
    case Distribution::Kind::kNone:
      break;
    case Distribution::Kind::kZeroMeanUniform: {
      const double c = dist.scale / std::sqrt(static_cast<double>(std::max(dim, 1)));
      for (int i = 0; i < dim; ++i) out(i) = rng.uniform(-c, c);
      break;
    }
    case Distribution::Kind::kShiftedUniform: {
      const double c = dist.scale / std::sqrt(static_cast<double>(std::max(dim, 1)));
      for (int i = 0; i < dim; ++i) out(i) = rng.uniform(0.0, c);
      break;
    }
    case Distribution::Kind::kConstant:
      if (dist.constant.size() != dim) {
        throw std::invalid_argument("constant distribution: stored vector has size " +
                                    std::to_string(dist.constant.size()) + ", site has dim " +
                                    std::to_string(dim));
      }
      out = dist.constant;
      break;
    case Distribution::Kind::kGaussian: {
      if (dist.mean.size() != dim) {
        throw std::invalid_argument("gaussian distribution: mean size mismatch");
      }
      for (int i = 0; i < dim; ++i) out(i) = rng.normal(dist.mean(i), dist.stddev);
      break;
    }
  }
  return out;
}

std::optional<Eigen::VectorXd> sample_perturbation(const PerturbationPlan& plan, int layer,
                                                   PassKind pass, long t, int dim,
                                                   std::uint64_t master_seed,
                                                   std::uint64_t replicate) {
  const PlanEntry* e = plan.entry(layer, pass);
  if (e == nullptr || e->dist.kind == Distribution::Kind::kNone) return std::nullopt;
  if (!e->schedule.active_at(t)) return std::nullopt;
  SplitMix64 rng(derive_stream({master_seed, static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(layer),
                                pass == PassKind::kForward ? 1ULL : 2ULL, replicate}));
  return sample_distribution(e->dist, dim, rng);
}

MomentSummary analytic_moments(const Distribution& dist, int dim) {
  if (dim < 0) throw std::invalid_argument("analytic_moments: negative dim");
  MomentSummary m;
  if (dim == 0) return m;
  const double n = static_cast<double>(dim);
  switch (dist.kind) {
    case Distribution::Kind::kNone:
      break;
    case Distribution::Kind::kZeroMeanUniform: {
      // Coordinates iid U(-c, c): E x^2 = c^2/3, E x^4 = c^4/5.
      const double c = dist.scale / std::sqrt(n);
      const double c2 = c * c;
      m.second_moment = n * c2 / 3.0;
      m.fourth_moment = n * c2 * c2 / 5.0 + n * (n - 1.0) * (c2 / 3.0) * (c2 / 3.0);
      m.mean_norm_sq = 0.0;
      break;
    }
    case Distribution::Kind::kShiftedUniform: {
      // Coordinates iid U(0, c): E x = c/2, E x^2 = c^2/3, E x^4 = c^4/5.
      const double c = dist.scale / std::sqrt(n);
      const double c2 = c * c;
      m.second_moment = n * c2 / 3.0;
      m.fourth_moment = n * c2 * c2 / 5.0 + n * (n - 1.0) * (c2 / 3.0) * (c2 / 3.0);
      m.mean_norm_sq = n * c2 / 4.0;
      break;
    }
    case Distribution::Kind::kConstant: {
      if (dist.constant.size() != dim) {
        throw std::invalid_argument("analytic_moments: constant vector size mismatch");
      }
      const double s = dist.constant.squaredNorm();
      m.second_moment = s;
      m.fourth_moment = s * s;
      m.mean_norm_sq = s;
      break;
    }
    case Distribution::Kind::kGaussian: {
      if (dist.mean.size() != dim) {
        throw std::invalid_argument("analytic_moments: gaussian mean size mismatch");
      }
      const double mu2 = dist.mean.squaredNorm();
      const double s2 = dist.stddev * dist.stddev;
      m.second_moment = mu2 + n * s2;
      // Var ||x||^2 = 4 s^2 ||mu||^2 + 2 n s^4 for iid coordinate noise.
      m.fourth_moment = m.second_moment * m.second_moment + 4.0 * s2 * mu2 + 2.0 * n * s2 * s2;
      m.mean_norm_sq = mu2;
      break;
    }
  }
  return m;
}

MomentEstimate monte_carlo_moments(const Distribution& dist, int dim, int draws,
                                   std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("monte_carlo_moments: draws < 1");
  SplitMix64 rng(derive_stream({seed, 0x6d6f6d656e7473ULL}));
  Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(dim);
  double s2 = 0.0, s4 = 0.0, s4sq = 0.0, s2sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const Eigen::VectorXd x = sample_distribution(dist, dim, rng);
    const double q = x.squaredNorm();
    mean_acc += x;
    s2 += q;
    s2sq += q * q;
    s4 += q * q;
    s4sq += q * q * q * q;
  }
  const double n = static_cast<double>(draws);
  MomentEstimate est;
  est.moments.second_moment = s2 / n;
  est.moments.fourth_moment = s4 / n;
  est.moments.mean_norm_sq = (mean_acc / n).squaredNorm();
  const double var2 = std::max(0.0, s2sq / n - est.moments.second_moment * est.moments.second_moment);
  const double var4 = std::max(0.0, s4sq / n - est.moments.fourth_moment * est.moments.fourth_moment);
  est.second_se = std::sqrt(var2 / n);
  est.fourth_se = std::sqrt(var4 / n);
  return est;
}

MomentSummary moments_from_events(const std::vector<PerturbationEvent>& events, int layer,
                                  PassKind pass) {
  MomentSummary m;
  Eigen::VectorXd mean_acc;
  long count = 0;
  for (const auto& e : events) {
    if (e.layer != layer || e.pass != pass) continue;
    const double q = e.value.squaredNorm();
    m.second_moment += q;
    m.fourth_moment += q * q;
    if (mean_acc.size() == 0) mean_acc = Eigen::VectorXd::Zero(e.value.size());
    mean_acc += e.value;
    ++count;
  }
  if (count == 0) return {};
  const double n = static_cast<double>(count);
  m.second_moment /= n;
  m.fourth_moment /= n;
  m.mean_norm_sq = (mean_acc / n).squaredNorm();
  return m;
}

EventCounts count_event_iterations(const std::vector<PerturbationEvent>& events) {
  std::set<long> fwd, bwd;
  for (const auto& e : events) {
    if (e.value.size() == 0 || e.value.isZero(0.0)) continue;
    (e.pass == PassKind::kForward ? fwd : bwd).insert(e.t);
  }
  return {static_cast<long>(fwd.size()), static_cast<long>(bwd.size())};
}

}  // namespace chainsgd
