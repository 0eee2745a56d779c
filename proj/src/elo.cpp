#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "critkit/analytics.hpp"
#include "critkit/random.hpp"

namespace critkit::analytics {

namespace {

// Ratings are optimized in natural log-odds units; one unit is this many
// Elo points.
const double kEloPerLogit = 400.0 / std::log(10.0);

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct PairStats {
  std::size_t i = 0;
  std::size_t j = 0;
  double wins_i = 0;  // tie-adjusted
  double wins_j = 0;
};

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// Mean negative log-likelihood of the logistic pairwise model plus an
// optional ridge term. Parameter vector excludes the anchor (pinned to 0).
class EloObjective {
 public:
  EloObjective(std::vector<PairStats> pairs, std::size_t sources, std::size_t anchor, double ridge)
      : pairs_(std::move(pairs)), sources_(sources), anchor_(anchor), ridge_(ridge) {
    for (const auto& p : pairs_) total_ += p.wins_i + p.wins_j;
  }

  std::size_t dim() const { return sources_ - 1; }

  Vec expand(const Vec& x) const {
    Vec theta(sources_, 0.0);
    for (std::size_t s = 0, k = 0; s < sources_; ++s) {
      if (s != anchor_) theta[s] = x[k++];
    }
    return theta;
  }

  double value(const Vec& x, Vec* grad) const {
    Vec theta = expand(x);
    Vec g(sources_, 0.0);
    double f = 0;
    for (const auto& p : pairs_) {
      double delta = theta[p.i] - theta[p.j];
      f -= p.wins_i * log_sigmoid(delta) + p.wins_j * log_sigmoid(-delta);
      double d = p.wins_i * sigmoid(-delta) - p.wins_j * sigmoid(delta);
      g[p.i] -= d;
      g[p.j] += d;
    }
    f /= total_;
    for (auto& v : g) v /= total_;
    for (std::size_t s = 0; s < sources_; ++s) {
      f += ridge_ * theta[s] * theta[s];
      g[s] += 2 * ridge_ * theta[s];
    }
    if (grad) {
      grad->assign(dim(), 0.0);
      for (std::size_t s = 0, k = 0; s < sources_; ++s) {
        if (s != anchor_) (*grad)[k++] = g[s];
      }
    }
    return f;
  }

 private:
  std::vector<PairStats> pairs_;
  std::size_t sources_;
  std::size_t anchor_;
  double ridge_;
  double total_ = 0;
};

struct BfgsOutcome {
  Vec x;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0;
};

BfgsOutcome minimize_bfgs(const EloObjective& obj, double tol, int max_iter) {
  const std::size_t n = obj.dim();
  BfgsOutcome out;
  out.x.assign(n, 0.0);
  if (n == 0) {
    out.converged = true;
    return out;
  }
  // Inverse Hessian approximation, row-major.
  Vec h(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;

  Vec g;
  double f = obj.value(out.x, &g);
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it;
    out.gradient_norm = norm(g);
    if (out.gradient_norm < tol) {
      out.converged = true;
      return out;
    }
    Vec p(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) p[i] -= h[i * n + j] * g[j];
    }
    double slope = dot(g, p);
    if (slope >= 0) {
      // Lost descent direction; restart from steepest descent.
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
      for (std::size_t i = 0; i < n; ++i) p[i] = -g[i];
      slope = dot(g, p);
    }

    // Backtracking line search. Near the optimum the objective differences
    // fall below rounding, so a step that shrinks the gradient is accepted
    // as well.
    double step = 1.0;
    Vec x_new(n), g_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = out.x[i] + step * p[i];
      f_new = obj.value(x_new, &g_new);
      const bool armijo = f_new <= f + 1e-4 * step * slope;
      const bool flat = std::abs(f_new - f) <= 1e-12 * (1.0 + std::abs(f)) &&
                        norm(g_new) < 0.9 * out.gradient_norm;
      if (std::isfinite(f_new) && (armijo || flat)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return out;

    Vec s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - out.x[i];
      y[i] = g_new[i] - g[i];
    }
    double sy = dot(s, y);
    if (sy > 1e-300) {
      Vec hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) hy[i] += h[i * n + j] * y[j];
      }
      double yhy = dot(y, hy);
      double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          h[i * n + j] += (1.0 + yhy * rho) * rho * s[i] * s[j] -
                          rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
      }
    }
    out.x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
  }
  out.iterations = max_iter;
  out.gradient_norm = norm(g);
  out.converged = out.gradient_norm < tol;
  return out;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

double win_prob(double r_a, double r_b) {
  return 1.0 / (1.0 + std::pow(10.0, (r_b - r_a) / 400.0));
}

EloTable fit_elo(std::span<const PairwisePreference> prefs, const EloOptions& opts) {
  std::set<std::string> names;
  for (const auto& p : prefs) {
    if (p.source_a == p.source_b) throw EloError("preference compares " + p.source_a + " with itself");
    names.insert(p.source_a);
    names.insert(p.source_b);
  }
  if (names.empty()) throw EloError("no preferences to fit");
  std::vector<std::string> sources(names.begin(), names.end());
  auto index_of = [&](const std::string& s) {
    return static_cast<std::size_t>(std::lower_bound(sources.begin(), sources.end(), s) -
                                    sources.begin());
  };

  std::map<std::pair<std::size_t, std::size_t>, PairStats> agg;
  std::vector<double> won(sources.size(), 0.0), lost(sources.size(), 0.0);
  std::vector<std::size_t> parent(sources.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& p : prefs) {
    auto a = index_of(p.source_a), b = index_of(p.source_b);
    double wa = p.outcome == Outcome::a_wins ? 1.0 : p.outcome == Outcome::tie ? 0.5 : 0.0;
    double wb = 1.0 - wa;
    auto key = std::minmax(a, b);
    auto& st = agg[key];
    st.i = key.first;
    st.j = key.second;
    if (a == key.first) {
      st.wins_i += wa;
      st.wins_j += wb;
    } else {
      st.wins_i += wb;
      st.wins_j += wa;
    }
    won[a] += wa;
    lost[a] += wb;
    won[b] += wb;
    lost[b] += wa;
    parent[find_root(parent, a)] = find_root(parent, b);
  }

  std::map<std::size_t, std::vector<std::string>> components;
  for (std::size_t s = 0; s < sources.size(); ++s) components[find_root(parent, s)].push_back(sources[s]);
  if (components.size() > 1) {
    std::string msg = "comparison graph is disconnected:";
    for (const auto& [_, members] : components) {
      msg += " {";
      for (std::size_t i = 0; i < members.size(); ++i) msg += (i ? ", " : "") + members[i];
      msg += "}";
    }
    throw EloError(msg);
  }

  EloTable table;
  table.anchor_source = opts.anchor.value_or(sources.front());
  if (!names.contains(table.anchor_source)) {
    throw EloError("anchor source " + table.anchor_source + " has no preferences");
  }
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (won[s] == 0.0 || lost[s] == 0.0) table.regularized = true;
  }

  std::vector<PairStats> pairs;
  for (const auto& [_, st] : agg) pairs.push_back(st);
  EloObjective obj(std::move(pairs), sources.size(), index_of(table.anchor_source),
                   table.regularized ? opts.ridge : 0.0);
  auto fit = minimize_bfgs(obj, opts.gradient_tolerance, opts.max_iterations);
  auto theta = obj.expand(fit.x);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    table.ratings[sources[s]] = theta[s] * kEloPerLogit;
  }
  table.converged = fit.converged;
  table.iterations = fit.iterations;
  table.gradient_norm = fit.gradient_norm;
  return table;
}

double empirical_winrate(std::span<const PairwisePreference> prefs, const std::string& a,
                         const std::string& b) {
  double wins = 0, total = 0;
  for (const auto& p : prefs) {
    double wa;
    if (p.source_a == a && p.source_b == b) {
      wa = p.outcome == Outcome::a_wins ? 1.0 : p.outcome == Outcome::tie ? 0.5 : 0.0;
    } else if (p.source_a == b && p.source_b == a) {
      wa = p.outcome == Outcome::b_wins ? 1.0 : p.outcome == Outcome::tie ? 0.5 : 0.0;
    } else {
      continue;
    }
    wins += wa;
    total += 1;
  }
  if (total == 0) throw BootstrapError("no preferences between " + a + " and " + b);
  return wins / total;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty data");
  std::sort(values.begin(), values.end());
  double h = (static_cast<double>(values.size()) - 1) * q;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void check_bootstrap(std::size_t records, const BootstrapOptions& opts) {
  if (records < 10) throw BootstrapError("bootstrap needs at least 10 records");
  if (opts.resamples < 100) throw BootstrapError("bootstrap needs at least 100 resamples");
  if (!(opts.level > 0 && opts.level < 1)) throw BootstrapError("level must lie in (0, 1)");
}

// Runs fn(i, rng_i) for every replicate. Each replicate owns a stream
// derived from (seed, i), so results do not depend on the worker count.
template <typename Fn>
void for_each_replicate(const BootstrapOptions& opts, Fn&& fn) {
  auto run = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < opts.resamples; i += step) {
      Rng rng(mix_seed(opts.seed, i));
      fn(i, rng);
    }
  };
  std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, opts.resamples));
  if (workers == 1) {
    run(0, 1);
    return;
  }
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w, workers);
  for (auto& t : threads) t.join();
}

Interval percentile_interval(double point, const std::vector<double>& replicates, double level) {
  Interval iv;
  iv.point = point;
  iv.low = std::min(point, quantile(replicates, (1 - level) / 2));
  iv.high = std::max(point, quantile(replicates, (1 + level) / 2));
  return iv;
}

}  // namespace

Interval bootstrap_winrate(std::span<const PairwisePreference> prefs, const std::string& a,
                           const std::string& b, const BootstrapOptions& opts) {
  std::vector<double> wins;  // tie-adjusted score for a per record
  for (const auto& p : prefs) {
    if (p.source_a == a && p.source_b == b) {
      wins.push_back(p.outcome == Outcome::a_wins ? 1.0 : p.outcome == Outcome::tie ? 0.5 : 0.0);
    } else if (p.source_a == b && p.source_b == a) {
      wins.push_back(p.outcome == Outcome::b_wins ? 1.0 : p.outcome == Outcome::tie ? 0.5 : 0.0);
    }
  }
  check_bootstrap(wins.size(), opts);
  const double point = std::accumulate(wins.begin(), wins.end(), 0.0) / static_cast<double>(wins.size());

  std::vector<double> replicates(opts.resamples);
  for_each_replicate(opts, [&](std::size_t i, Rng& rng) {
    double sum = 0;
    for (std::size_t r = 0; r < wins.size(); ++r) sum += wins[rng.below(wins.size())];
    replicates[i] = sum / static_cast<double>(wins.size());
  });
  return percentile_interval(point, replicates, opts.level);
}

std::map<std::string, Interval> bootstrap_ratings(std::span<const PairwisePreference> prefs,
                                                  const BootstrapOptions& opts,
                                                  const EloOptions& elo) {
  check_bootstrap(prefs.size(), opts);
  auto base = fit_elo(prefs, elo);
  EloOptions pinned = elo;
  pinned.anchor = base.anchor_source;

  std::vector<std::optional<std::map<std::string, double>>> replicates(opts.resamples);
  for_each_replicate(opts, [&](std::size_t i, Rng& rng) {
    std::vector<PairwisePreference> sample;
    sample.reserve(prefs.size());
    for (std::size_t r = 0; r < prefs.size(); ++r) sample.push_back(prefs[rng.below(prefs.size())]);
    try {
      auto t = fit_elo(sample, pinned);
      if (t.ratings.size() == base.ratings.size()) replicates[i] = std::move(t.ratings);
    } catch (const EloError&) {
      // Resample lost connectivity or the anchor; discard it.
    }
  });

  std::map<std::string, Interval> out;
  for (const auto& [source, rating] : base.ratings) {
    std::vector<double> values;
    for (const auto& r : replicates) {
      if (r) values.push_back(r->at(source));
    }
    if (values.empty()) throw BootstrapError("every bootstrap replicate was degenerate");
    out[source] = percentile_interval(rating, values, opts.level);
  }
  return out;
}

}  // namespace critkit::analytics
