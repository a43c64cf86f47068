#include "gmetro/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <map>

namespace gmetro {

MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error("welch test needs at least two samples per group");
  const MeanStd ma = mean_std(a), mb = mean_std(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = ma.std * ma.std / na, vb = mb.std * mb.std / nb;
  WelchResult r;
  const double se2 = va + vb;
  if (se2 <= 0.0) {
    r.degenerate = true;
    r.p_value = ma.mean == mb.mean ? 1.0 : 0.0;
    r.t = ma.mean == mb.mean ? 0.0 : std::copysign(INFINITY, ma.mean - mb.mean);
    r.df = na + nb - 2.0;
    return r;
  }
  r.t = (ma.mean - mb.mean) / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

namespace {

using BySeed = std::map<std::uint64_t, std::map<int, double>>;

BySeed index_results(const std::vector<EnvResult>& rs, std::map<int, std::string>& names) {
  BySeed out;
  for (const EnvResult& r : rs) {
    out[r.seed][r.env_id] = r.value;
    names[r.env_id] = r.env_name;
  }
  return out;
}

std::vector<double> env_values(const BySeed& s, int env) {
  std::vector<double> v;
  for (const auto& [seed, envs] : s)
    if (auto it = envs.find(env); it != envs.end()) v.push_back(it->second);
  return v;
}

std::vector<double> aggregate_values(const BySeed& s, bool shifted_only) {
  std::vector<double> v;
  for (const auto& [seed, envs] : s) {
    double sum = 0;
    int n = 0;
    for (const auto& [env, value] : envs) {
      if (shifted_only && env == 0) continue;
      sum += value;
      ++n;
    }
    if (n > 0) v.push_back(sum / n);
  }
  return v;
}

SummaryRow make_row(std::string name, int env, const std::vector<double>& m, const std::vector<double>& b) {
  SummaryRow row;
  row.environment = std::move(name);
  row.env_id = env;
  row.method = mean_std(m);
  row.baseline = mean_std(b);
  row.test = welch_t_test(m, b);
  row.seeds = static_cast<int>(m.size());
  return row;
}

}  // namespace

std::vector<SummaryRow> summarize_trials(const std::vector<EnvResult>& method,
                                         const std::vector<EnvResult>& baseline) {
  std::map<int, std::string> names;
  const BySeed m = index_results(method, names);
  const BySeed b = index_results(baseline, names);
  if (m.size() < 2 || b.size() < 2) throw Error("summary needs results from at least two seeds per method");

  std::vector<SummaryRow> rows;
  for (const auto& [env, name] : names) {
    const auto mv = env_values(m, env), bv = env_values(b, env);
    if (mv.size() < 2 || bv.size() < 2) throw Error("environment " + name + " has fewer than two seeds");
    rows.push_back(make_row(name, env, mv, bv));
  }
  const bool has_shifted = names.size() > 1 || !names.count(0);
  if (has_shifted) rows.push_back(make_row(kShiftedMeanLabel, -1, aggregate_values(m, true), aggregate_values(b, true)));
  rows.push_back(make_row(kAllMeanLabel, -1, aggregate_values(m, false), aggregate_values(b, false)));
  return rows;
}

}  // namespace gmetro
