#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlnet/emd.hpp"
#include "mlnet/error.hpp"
#include "mlnet/rng.hpp"
#include "mlnet/tensor.hpp"

// Evaluation measures for predicted saliency maps: Similarity, linear
// correlation (CC), NSS, three AUC variants, and Earth Mover's Distance.
// The AUC variants are computed as rank statistics equivalent to exhaustive
// pair counting with ties worth 1/2; the sampled variants (Borji, shuffled)
// draw their negative sets from a seeded generator so results are
// reproducible.

namespace mlnet {

struct SaliencyMap {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> v;

  SaliencyMap() = default;
  SaliencyMap(std::int64_t r, std::int64_t c)
      : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}

  double& at(std::int64_t r, std::int64_t c) {
    return v[static_cast<std::size_t>(r * cols + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return v[static_cast<std::size_t>(r * cols + c)];
  }
  std::int64_t size() const { return rows * cols; }
};

struct Fixation {
  std::int64_t row = 0, col = 0;
  bool operator==(const Fixation&) const = default;
};
using FixationSet = std::vector<Fixation>;

// [1,1,h,w] or [1,c,h,w] single-channel tensor view as a metric map.
inline SaliencyMap map_from_tensor(const Tensor& t) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("map_from_tensor: expected [1,1,h,w], got " + s.str());
  }
  SaliencyMap m(s.h, s.w);
  std::copy(t.values().begin(), t.values().end(), m.v.begin());
  return m;
}

namespace detail {

inline void require_same_shape(const SaliencyMap& a, const SaliencyMap& b,
                               const char* who) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(who) + ": map sizes " +
                     std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " and " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + " differ");
  }
}

inline void require_fixations(const SaliencyMap& m, const FixationSet& fix,
                              const char* who) {
  if (fix.empty()) {
    throw ValueError(std::string(who) + ": empty fixation set");
  }
  for (const Fixation& f : fix) {
    if (f.row < 0 || f.row >= m.rows || f.col < 0 || f.col >= m.cols) {
      throw DataError(std::string(who) + ": fixation (" +
                      std::to_string(f.row) + "," + std::to_string(f.col) +
                      ") outside " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols) + " map");
    }
  }
}

inline std::vector<double> sum_normalized(const SaliencyMap& m,
                                          const char* who) {
  double sum = 0.0;
  for (double x : m.v) {
    if (x < 0.0) {
      throw ValueError(std::string(who) + ": negative map value");
    }
    sum += x;
  }
  if (!(sum > 0.0)) {
    throw NumericError(std::string(who) + ": map has zero sum");
  }
  std::vector<double> out(m.v);
  for (double& x : out) x /= sum;
  return out;
}

struct MapMoments {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

inline MapMoments moments(const SaliencyMap& m) {
  double acc = 0.0;
  for (double x : m.v) acc += x;
  const double mean = acc / static_cast<double>(m.size());
  double sq = 0.0;
  for (double x : m.v) {
    const double d = x - mean;
    sq += d * d;
  }
  return {mean, std::sqrt(sq / static_cast<double>(m.size()))};
}

// Mann-Whitney AUC via average ranks: exactly the fraction of
// (positive, negative) pairs with pos > neg, ties counted 1/2.
inline double auc_from_samples(std::vector<double> pos,
                               std::vector<double> neg) {
  const std::size_t P = pos.size(), N = neg.size();
  if (P == 0 || N == 0) throw ValueError("auc: empty sample set");
  std::vector<std::pair<double, bool>> all;
  all.reserve(P + N);
  for (double x : pos) all.emplace_back(x, true);
  for (double x : neg) all.emplace_back(x, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    // Ranks i+1 .. j averaged over the tie group.
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(P), n = static_cast<double>(N);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

}  // namespace detail

// Sum of pixel-wise minimums after each map is normalized to sum one.
// 1 means identical distributions, 0 disjoint support.
inline double similarity(const SaliencyMap& sm, const SaliencyMap& fm) {
  detail::require_same_shape(sm, fm, "similarity");
  auto a = detail::sum_normalized(sm, "similarity");
  auto b = detail::sum_normalized(fm, "similarity");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::min(a[i], b[i]);
  return acc;
}

// Pearson's linear correlation coefficient over flattened pixels.
inline double cc(const SaliencyMap& sm, const SaliencyMap& fm) {
  detail::require_same_shape(sm, fm, "cc");
  const auto ma = detail::moments(sm);
  const auto mb = detail::moments(fm);
  if (ma.stddev == 0.0 || mb.stddev == 0.0) {
    throw NumericError("cc: undefined for a constant map");
  }
  double cov = 0.0;
  for (std::int64_t i = 0; i < sm.size(); ++i) {
    cov += (sm.v[static_cast<std::size_t>(i)] - ma.mean) *
           (fm.v[static_cast<std::size_t>(i)] - mb.mean);
  }
  cov /= static_cast<double>(sm.size());
  return cov / (ma.stddev * mb.stddev);
}

// Mean z-scored saliency at the fixations; the map statistics are the
// whole-map mean and population standard deviation.
inline double nss(const SaliencyMap& sm, const FixationSet& fix) {
  detail::require_fixations(sm, fix, "nss");
  const auto m = detail::moments(sm);
  if (m.stddev == 0.0) {
    throw NumericError("nss: undefined for a constant map");
  }
  double acc = 0.0;
  for (const Fixation& f : fix) {
    acc += (sm.at(f.row, f.col) - m.mean) / m.stddev;
  }
  return acc / static_cast<double>(fix.size());
}

// AUC with positives at the fixated locations (with multiplicity) and every
// non-fixated pixel as a negative.
inline double auc_judd(const SaliencyMap& sm, const FixationSet& fix) {
  detail::require_fixations(sm, fix, "auc_judd");
  std::vector<char> fixated(static_cast<std::size_t>(sm.size()), 0);
  std::vector<double> pos;
  pos.reserve(fix.size());
  for (const Fixation& f : fix) {
    fixated[static_cast<std::size_t>(f.row * sm.cols + f.col)] = 1;
    pos.push_back(sm.at(f.row, f.col));
  }
  std::vector<double> neg;
  neg.reserve(static_cast<std::size_t>(sm.size()));
  for (std::int64_t i = 0; i < sm.size(); ++i) {
    if (!fixated[static_cast<std::size_t>(i)]) {
      neg.push_back(sm.v[static_cast<std::size_t>(i)]);
    }
  }
  if (neg.empty()) {
    throw ValueError("auc_judd: every pixel is fixated");
  }
  return detail::auc_from_samples(std::move(pos), std::move(neg));
}

// AUC with negatives drawn uniformly over all pixel locations,
// |fixations| per split, averaged over n_splits rounds. Fixated pixels are
// eligible negatives by default.
inline double auc_borji(const SaliencyMap& sm, const FixationSet& fix,
                        std::int64_t n_splits, RngState& rng,
                        bool exclude_fixated = false) {
  detail::require_fixations(sm, fix, "auc_borji");
  if (n_splits < 1) throw ValueError("auc_borji: n_splits must be positive");
  std::vector<char> fixated(static_cast<std::size_t>(sm.size()), 0);
  std::vector<double> pos;
  pos.reserve(fix.size());
  for (const Fixation& f : fix) {
    fixated[static_cast<std::size_t>(f.row * sm.cols + f.col)] = 1;
    pos.push_back(sm.at(f.row, f.col));
  }
  if (exclude_fixated) {
    bool any_free = false;
    for (char c : fixated) any_free |= (c == 0);
    if (!any_free) throw ValueError("auc_borji: every pixel is fixated");
  }
  double acc = 0.0;
  std::vector<double> neg(fix.size());
  for (std::int64_t s = 0; s < n_splits; ++s) {
    for (std::size_t k = 0; k < neg.size(); ++k) {
      std::uint64_t idx;
      do {
        idx = rng.next_below(static_cast<std::uint64_t>(sm.size()));
      } while (exclude_fixated && fixated[static_cast<std::size_t>(idx)]);
      neg[k] = sm.v[static_cast<std::size_t>(idx)];
    }
    acc += detail::auc_from_samples(pos, neg);
  }
  return acc / static_cast<double>(n_splits);
}

// Shuffled AUC: negatives drawn from the pooled fixation locations of other
// images, so a pure center-bias predictor scores at chance.
inline double auc_shuffled(const SaliencyMap& sm, const FixationSet& fix,
                           const std::vector<FixationSet>& other_fixations,
                           std::int64_t n_splits, RngState& rng) {
  detail::require_fixations(sm, fix, "auc_shuffled");
  if (n_splits < 1) {
    throw ValueError("auc_shuffled: n_splits must be positive");
  }
  FixationSet pool;
  for (const FixationSet& fs : other_fixations) {
    pool.insert(pool.end(), fs.begin(), fs.end());
  }
  if (pool.empty()) {
    throw ValueError("auc_shuffled: empty non-fixation pool");
  }
  detail::require_fixations(sm, pool, "auc_shuffled pool");

  std::vector<double> pos;
  pos.reserve(fix.size());
  for (const Fixation& f : fix) pos.push_back(sm.at(f.row, f.col));

  double acc = 0.0;
  std::vector<double> neg(fix.size());
  for (std::int64_t s = 0; s < n_splits; ++s) {
    for (std::size_t k = 0; k < neg.size(); ++k) {
      const auto pick = static_cast<std::size_t>(
          rng.next_below(static_cast<std::uint64_t>(pool.size())));
      neg[k] = sm.at(pool[pick].row, pool[pick].col);
    }
    acc += detail::auc_from_samples(pos, neg);
  }
  return acc / static_cast<double>(n_splits);
}

struct EmdOptions {
  std::int64_t max_bins = 1024;
  bool allow_downsample = true;
};

namespace detail {

// Block aggregation by an integer factor: bin masses are summed, bin centers
// placed at block centers in original pixel units.
inline std::vector<TransportNode> emd_nodes(const std::vector<double>& mass,
                                            std::int64_t rows,
                                            std::int64_t cols,
                                            std::int64_t factor) {
  const std::int64_t br = (rows + factor - 1) / factor;
  const std::int64_t bc = (cols + factor - 1) / factor;
  std::vector<double> agg(static_cast<std::size_t>(br * bc), 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      agg[static_cast<std::size_t>((r / factor) * bc + c / factor)] +=
          mass[static_cast<std::size_t>(r * cols + c)];
    }
  }
  std::vector<TransportNode> nodes;
  for (std::int64_t r = 0; r < br; ++r) {
    for (std::int64_t c = 0; c < bc; ++c) {
      const double m = agg[static_cast<std::size_t>(r * bc + c)];
      if (m > 0.0) {
        nodes.push_back(TransportNode{
            m,
            static_cast<double>(r * factor) +
                0.5 * static_cast<double>(factor - 1),
            static_cast<double>(c * factor) +
                0.5 * static_cast<double>(factor - 1)});
      }
    }
  }
  return nodes;
}

}  // namespace detail

// Exact Earth Mover's Distance between the two maps viewed as probability
// distributions on the pixel grid (Euclidean ground distance, unit pixel
// spacing). Maps larger than max_bins are block-aggregated first when
// allowed; the chosen factor keeps both maps on the same coarse grid.
inline double emd(const SaliencyMap& sm, const SaliencyMap& fm,
                  const EmdOptions& opt = {}) {
  detail::require_same_shape(sm, fm, "emd");
  auto a = detail::sum_normalized(sm, "emd");
  auto b = detail::sum_normalized(fm, "emd");

  std::int64_t factor = 1;
  if (sm.size() > opt.max_bins) {
    if (!opt.allow_downsample) {
      throw ValueError("emd: " + std::to_string(sm.size()) +
                       " bins exceed the budget of " +
                       std::to_string(opt.max_bins) +
                       " and downsampling is disabled");
    }
    while (((sm.rows + factor - 1) / factor) *
               ((sm.cols + factor - 1) / factor) >
           opt.max_bins) {
      ++factor;
    }
  }
  auto sources = detail::emd_nodes(a, sm.rows, sm.cols, factor);
  auto sinks = detail::emd_nodes(b, fm.rows, fm.cols, factor);
  return solve_transport(std::move(sources), std::move(sinks));
}

// --------------------------------------------------------------------------
// batch evaluation

struct MetricConfig {
  std::uint64_t seed = 0;
  std::int64_t auc_splits = 100;
  bool borji_exclude_fixated = false;
  EmdOptions emd_options;
};

struct ImageMetrics {
  std::string name;
  std::optional<double> similarity, cc, nss, auc_judd, auc_borji, auc_shuffled,
      emd;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics aggregate;  // arithmetic mean of the available values
  std::uint64_t seed = 0;
  std::int64_t auc_splits = 0;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "seed = " << seed << "\n";
    os << "auc_splits = " << auc_splits << "\n";
    os << "images = " << per_image.size() << "\n";
    auto row = [&os](const ImageMetrics& m) {
      auto key = [&os, &m](const char* k, const std::optional<double>& v) {
        if (v) os << m.name << "." << k << " = " << *v << "\n";
      };
      key("similarity", m.similarity);
      key("cc", m.cc);
      key("nss", m.nss);
      key("auc_judd", m.auc_judd);
      key("auc_borji", m.auc_borji);
      key("auc_shuffled", m.auc_shuffled);
      key("emd", m.emd);
    };
    for (const ImageMetrics& m : per_image) row(m);
    row(aggregate);
    return os.str();
  }

  nlohmann::json to_json() const {
    auto image_json = [](const ImageMetrics& m) {
      nlohmann::json j;
      j["name"] = m.name;
      auto key = [&j](const char* k, const std::optional<double>& v) {
        if (v) {
          j[k] = *v;
        } else {
          j[k] = nullptr;
        }
      };
      key("similarity", m.similarity);
      key("cc", m.cc);
      key("nss", m.nss);
      key("auc_judd", m.auc_judd);
      key("auc_borji", m.auc_borji);
      key("auc_shuffled", m.auc_shuffled);
      key("emd", m.emd);
      return j;
    };
    nlohmann::json j;
    j["seed"] = seed;
    j["auc_splits"] = auc_splits;
    j["per_image"] = nlohmann::json::array();
    for (const ImageMetrics& m : per_image) {
      j["per_image"].push_back(image_json(m));
    }
    j["aggregate"] = image_json(aggregate);
    return j;
  }
};

// One dataset entry for evaluation.
struct EvalItem {
  std::string name;
  SaliencyMap prediction;
  std::optional<SaliencyMap> ground_truth;
  std::optional<FixationSet> fixations;
};

// Runs every metric applicable to one image. A metric that cannot be
// computed (constant map, zero sum, missing data) is reported as absent
// instead of aborting the batch.
inline ImageMetrics evaluate_all(const std::string& name,
                                 const SaliencyMap& sm,
                                 const SaliencyMap* fm,
                                 const FixationSet* fix,
                                 const std::vector<FixationSet>& pool,
                                 const MetricConfig& cfg, RngState& rng) {
  ImageMetrics out;
  out.name = name;
  auto guard = [](std::optional<double>& slot, auto&& fn) {
    try {
      slot = fn();
    } catch (const Error&) {
      slot = std::nullopt;
    }
  };
  if (fm) {
    guard(out.similarity, [&] { return similarity(sm, *fm); });
    guard(out.cc, [&] { return cc(sm, *fm); });
    guard(out.emd, [&] { return emd(sm, *fm, cfg.emd_options); });
  }
  if (fix) {
    guard(out.nss, [&] { return nss(sm, *fix); });
    guard(out.auc_judd, [&] { return auc_judd(sm, *fix); });
    guard(out.auc_borji, [&] {
      return auc_borji(sm, *fix, cfg.auc_splits, rng,
                       cfg.borji_exclude_fixated);
    });
    if (!pool.empty()) {
      guard(out.auc_shuffled,
            [&] { return auc_shuffled(sm, *fix, pool, cfg.auc_splits, rng); });
    }
  }
  return out;
}

// Evaluates a whole dataset. Each image draws from an rng derived from
// (seed, image index), and the shuffled-AUC pool for an image is the union
// of the other images' fixations unless an explicit pool is given.
inline MetricReport evaluate_dataset(
    const std::vector<EvalItem>& items, const MetricConfig& cfg,
    const std::vector<FixationSet>* explicit_pool = nullptr) {
  MetricReport report;
  report.seed = cfg.seed;
  report.auc_splits = cfg.auc_splits;
  const RngState base(cfg.seed);
  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    const EvalItem& item = items[idx];
    std::vector<FixationSet> pool;
    if (explicit_pool) {
      pool = *explicit_pool;
    } else {
      for (std::size_t other = 0; other < items.size(); ++other) {
        if (other != idx && items[other].fixations) {
          pool.push_back(*items[other].fixations);
        }
      }
    }
    RngState rng = base.derive(idx);
    report.per_image.push_back(evaluate_all(
        item.name, item.prediction,
        item.ground_truth ? &*item.ground_truth : nullptr,
        item.fixations ? &*item.fixations : nullptr, pool, cfg, rng));
  }

  report.aggregate.name = "mean";
  auto mean_of = [&report](std::optional<double> ImageMetrics::* field) {
    double acc = 0.0;
    std::int64_t n = 0;
    for (const ImageMetrics& m : report.per_image) {
      if (m.*field) {
        acc += *(m.*field);
        ++n;
      }
    }
    return n > 0 ? std::optional<double>(acc / static_cast<double>(n))
                 : std::nullopt;
  };
  report.aggregate.similarity = mean_of(&ImageMetrics::similarity);
  report.aggregate.cc = mean_of(&ImageMetrics::cc);
  report.aggregate.nss = mean_of(&ImageMetrics::nss);
  report.aggregate.auc_judd = mean_of(&ImageMetrics::auc_judd);
  report.aggregate.auc_borji = mean_of(&ImageMetrics::auc_borji);
  report.aggregate.auc_shuffled = mean_of(&ImageMetrics::auc_shuffled);
  report.aggregate.emd = mean_of(&ImageMetrics::emd);
  return report;
}

}  // namespace mlnet
