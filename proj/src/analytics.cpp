#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "critkit/analytics.hpp"
#include "critkit/random.hpp"

namespace critkit::analytics {

ExtractResult extract_pairwise(std::span<const ComparisonRecord> records, Attribute attribute) {
  ExtractResult out;
  const bool higher = higher_is_better(attribute);
  for (const auto& rec : records) {
    std::vector<double> values;
    bool complete = true;
    for (const auto& e : rec.entries) {
      auto v = e.form.value(attribute);
      if (!v) {
        complete = false;
        break;
      }
      values.push_back(*v);
    }
    if (!complete) {
      out.warnings.push_back("record " + rec.task_id + ": missing " +
                             std::string(to_string(attribute)) + " score, skipped");
      continue;
    }
    for (std::size_t i = 0; i < rec.entries.size(); ++i) {
      for (std::size_t j = i + 1; j < rec.entries.size(); ++j) {
        const auto& a = rec.entries[i];
        const auto& b = rec.entries[j];
        if (a.source_id == b.source_id) {
          out.warnings.push_back("record " + rec.task_id + ": entries " + a.critique_id + " and " +
                                 b.critique_id + " share source " + a.source_id);
          continue;
        }
        Outcome o = Outcome::tie;
        if (values[i] != values[j]) {
          o = (values[i] > values[j]) == higher ? Outcome::a_wins : Outcome::b_wins;
        }
        out.preferences.push_back({a.source_id, b.source_id, o, attribute});
      }
    }
  }
  return out;
}

RateResult attribute_rate(std::span<const RatingForm> forms, Attribute attribute,
                          Polarity polarity) {
  RateResult r;
  auto count = [&](int score) {
    ++r.total;
    if (score >= kYesThreshold) ++r.yes;
  };
  for (const auto& f : forms) {
    if (attribute == Attribute::cbi) {
      for (int s : f.cbi) count(s);
    } else if (auto s = f.scalar(attribute)) {
      count(*s);
    }
  }
  if (r.total == 0) {
    throw std::invalid_argument("attribute_rate: no " + std::string(to_string(attribute)) + " scores");
  }
  r.rate = static_cast<double>(r.yes) / static_cast<double>(r.total);
  if (polarity == Polarity::negated) r.rate = 1.0 - r.rate;
  return r;
}

RateResult spurious_rate(std::span<const RatingForm> forms) {
  RateResult r;
  for (const auto& f : forms) {
    auto nit = f.nitpick;
    auto fake = f.fake_problem;
    if (!nit && !fake) continue;
    ++r.total;
    if (nit.value_or(0) >= kYesThreshold || fake.value_or(0) >= kYesThreshold) ++r.yes;
  }
  if (r.total == 0) throw std::invalid_argument("spurious_rate: no nitpick or fake_problem scores");
  r.rate = static_cast<double>(r.yes) / static_cast<double>(r.total);
  return r;
}

std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
  // Sweep in order of decreasing comprehensiveness; a point survives if no
  // point with at least its comprehensiveness has lower spurious rate, or an
  // equal spurious rate with strictly higher comprehensiveness.
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return points[a].comprehensiveness > points[b].comprehensiveness;
  });

  std::vector<std::size_t> kept;
  double best_spurious_strictly_above = INFINITY;  // among strictly higher comprehensiveness
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_c = points[order[i]].comprehensiveness;
    double group_min = INFINITY;
    while (j < order.size() && points[order[j]].comprehensiveness == group_c) {
      group_min = std::min(group_min, points[order[j]].spurious);
      ++j;
    }
    for (std::size_t t = i; t < j; ++t) {
      double s = points[order[t]].spurious;
      bool dominated = best_spurious_strictly_above <= s || group_min < s;
      if (!dominated) kept.push_back(order[t]);
    }
    best_spurious_strictly_above = std::min(best_spurious_strictly_above, group_min);
    i = j;
  }

  std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].comprehensiveness != points[b].comprehensiveness) {
      return points[a].comprehensiveness < points[b].comprehensiveness;
    }
    return a < b;
  });
  std::vector<ParetoPoint> out;
  for (auto k : kept) out.push_back(points[k]);
  return out;
}

namespace {

bool yes(int score) { return score >= kYesThreshold; }

// +1 if x preferred over y, -1 if y preferred, 0 on tie or missing data.
int compare(const RatingForm& x, const RatingForm& y, Attribute a) {
  auto vx = x.value(a), vy = y.value(a);
  if (!vx || !vy || *vx == *vy) return 0;
  return ((*vx > *vy) == higher_is_better(a)) ? 1 : -1;
}

}  // namespace

AgreementReport agreement_report(std::span<const DoublyRatedItem> items,
                                 Attribute preference_attribute, std::uint64_t seed) {
  AgreementReport report;
  std::vector<const DoublyRatedItem*> valid;
  for (const auto& item : items) {
    if (item.first.rater_id == item.second.rater_id) {
      report.warnings.push_back("item " + item.critique_id + ": both ratings by " +
                                item.first.rater_id + ", excluded");
      continue;
    }
    valid.push_back(&item);
  }

  for (const auto* item : valid) {
    for (auto a : kAllAttributes) {
      if (a == Attribute::cbi) {
        auto n = std::min(item->first.cbi.size(), item->second.cbi.size());
        for (std::size_t b = 0; b < n; ++b) {
          auto& c = report.attributes[a];
          ++c.total;
          if (yes(item->first.cbi[b]) == yes(item->second.cbi[b])) ++c.agree;
        }
        continue;
      }
      auto x = item->first.scalar(a), y = item->second.scalar(a);
      if (!x || !y) continue;
      auto& c = report.attributes[a];
      ++c.total;
      if (yes(*x) == yes(*y)) ++c.agree;
    }
  }

  // Pairwise preference agreement within each group, for critique pairs
  // rated by the same two raters.
  std::map<std::string, std::vector<const DoublyRatedItem*>> groups;
  for (const auto* item : valid) groups[item->group_id].push_back(item);
  Rng rng(seed);
  auto resolve = [&](int pref) { return pref != 0 ? pref : (rng.bernoulli(0.5) ? 1 : -1); };
  for (const auto& [gid, members] : groups) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        const auto& x = *members[i];
        const auto& y = *members[j];
        const RatingForm* y_by_first = nullptr;
        const RatingForm* y_by_second = nullptr;
        for (const auto* f : {&y.first, &y.second}) {
          if (f->rater_id == x.first.rater_id) y_by_first = f;
          if (f->rater_id == x.second.rater_id) y_by_second = f;
        }
        if (!y_by_first || !y_by_second) {
          report.warnings.push_back("group " + gid + ": " + x.critique_id + " and " +
                                    y.critique_id + " not rated by the same raters");
          continue;
        }
        int p1 = resolve(compare(x.first, *y_by_first, preference_attribute));
        int p2 = resolve(compare(x.second, *y_by_second, preference_attribute));
        ++report.preference.total;
        if (p1 == p2) ++report.preference.agree;
      }
    }
  }
  return report;
}

DcGapReport dc_gap_report(std::span<const DcItem> items) {
  std::vector<const DcItem*> tampered;
  for (const auto& it : items) {
    if (it.tampered) tampered.push_back(&it);
  }
  if (tampered.size() < 10) throw std::invalid_argument("dc_gap_report needs at least 10 tampered items");
  std::stable_sort(tampered.begin(), tampered.end(), [](const DcItem* a, const DcItem* b) {
    return a->confidence_untampered > b->confidence_untampered;
  });

  DcGapReport r;
  r.tampered = tampered.size();
  r.decile_size = (tampered.size() + 9) / 10;
  std::size_t caught = 0;
  for (std::size_t i = 0; i < tampered.size(); ++i) {
    if (!tampered[i]->caught) continue;
    ++caught;
    if (i < r.decile_size) ++r.decile_caught;
  }
  r.decile_catch_rate = static_cast<double>(r.decile_caught) / static_cast<double>(r.decile_size);
  r.overall_catch_rate = static_cast<double>(caught) / static_cast<double>(r.tampered);
  return r;
}

}  // namespace critkit::analytics
