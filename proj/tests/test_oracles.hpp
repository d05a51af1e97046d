#pragma once

// Independent oracles shared by the unit and acceptance suites. These are
// deliberately written against the definitions, not against the library
// code paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "mlnet/metrics.hpp"

namespace mlnet::test {

// Exhaustive pair counting with ties worth 1/2: the defining AUC statistic.
inline double pair_count_auc(const std::vector<double>& pos,
                             const std::vector<double>& neg) {
  double acc = 0.0;
  for (double p : pos) {
    for (double n : neg) {
      if (p > n) {
        acc += 1.0;
      } else if (p == n) {
        acc += 0.5;
      }
    }
  }
  return acc / (static_cast<double>(pos.size()) *
                static_cast<double>(neg.size()));
}

inline double judd_oracle(const SaliencyMap& sm, const FixationSet& fix) {
  std::vector<char> fixated(static_cast<std::size_t>(sm.size()), 0);
  std::vector<double> pos, neg;
  for (const Fixation& f : fix) {
    fixated[static_cast<std::size_t>(f.row * sm.cols + f.col)] = 1;
    pos.push_back(sm.at(f.row, f.col));
  }
  for (std::int64_t i = 0; i < sm.size(); ++i) {
    if (!fixated[static_cast<std::size_t>(i)]) {
      neg.push_back(sm.v[static_cast<std::size_t>(i)]);
    }
  }
  return pair_count_auc(pos, neg);
}

// Exhaustive transportation LP oracle: enumerates every basis (spanning
// tree of the complete bipartite graph), solves its unique flow by leaf
// peeling, and keeps the cheapest feasible one. Viable only for a handful
// of nodes.
inline double all_bfs_transport(const std::vector<double>& supply,
                                const std::vector<double>& demand,
                                const std::vector<std::vector<double>>& cost) {
  const int S = static_cast<int>(supply.size());
  const int T = static_cast<int>(demand.size());
  const int nodes = S + T;
  const int n_edges = S * T;
  const int basis_size = nodes - 1;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < T; ++j) edges.emplace_back(i, j);
  }

  std::vector<int> pick(static_cast<std::size_t>(basis_size));
  std::iota(pick.begin(), pick.end(), 0);
  double best = std::numeric_limits<double>::infinity();

  auto evaluate = [&](const std::vector<int>& chosen) {
    std::vector<int> parent(static_cast<std::size_t>(nodes));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
      while (parent[static_cast<std::size_t>(x)] != x) {
        x = parent[static_cast<std::size_t>(x)] =
            parent[static_cast<std::size_t>(
                parent[static_cast<std::size_t>(x)])];
      }
      return x;
    };
    for (int e : chosen) {
      const int a = edges[static_cast<std::size_t>(e)].first;
      const int b = S + edges[static_cast<std::size_t>(e)].second;
      const int ra = find(a), rb = find(b);
      if (ra == rb) return;  // cycle: not a basis
      parent[static_cast<std::size_t>(ra)] = rb;
    }

    std::vector<double> bal(static_cast<std::size_t>(nodes));
    for (int i = 0; i < S; ++i) {
      bal[static_cast<std::size_t>(i)] = supply[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < T; ++j) {
      bal[static_cast<std::size_t>(S + j)] =
          demand[static_cast<std::size_t>(j)];
    }
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(nodes));
    for (int e : chosen) {
      adj[static_cast<std::size_t>(edges[static_cast<std::size_t>(e)].first)]
          .push_back(e);
      adj[static_cast<std::size_t>(
              S + edges[static_cast<std::size_t>(e)].second)]
          .push_back(e);
    }
    std::vector<char> edge_done(static_cast<std::size_t>(n_edges), 0);
    std::vector<int> degree(static_cast<std::size_t>(nodes), 0);
    for (int v = 0; v < nodes; ++v) {
      degree[static_cast<std::size_t>(v)] =
          static_cast<int>(adj[static_cast<std::size_t>(v)].size());
    }
    std::vector<int> stack;
    for (int v = 0; v < nodes; ++v) {
      if (degree[static_cast<std::size_t>(v)] == 1) stack.push_back(v);
    }
    double total = 0.0;
    bool feasible = true;
    int peeled = 0;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      if (degree[static_cast<std::size_t>(v)] != 1) continue;
      int e = -1;
      for (int cand : adj[static_cast<std::size_t>(v)]) {
        if (!edge_done[static_cast<std::size_t>(cand)]) e = cand;
      }
      if (e < 0) continue;
      const int i = edges[static_cast<std::size_t>(e)].first;
      const int j = edges[static_cast<std::size_t>(e)].second;
      const int u = (v == i) ? S + j : i;
      const double f = bal[static_cast<std::size_t>(v)];
      if (f < -1e-12) {
        feasible = false;
        break;
      }
      total +=
          f * cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      bal[static_cast<std::size_t>(v)] = 0.0;
      bal[static_cast<std::size_t>(u)] -= f;
      edge_done[static_cast<std::size_t>(e)] = 1;
      ++peeled;
      if (--degree[static_cast<std::size_t>(u)] == 1) stack.push_back(u);
      degree[static_cast<std::size_t>(v)] = 0;
    }
    if (feasible && peeled == basis_size) best = std::min(best, total);
  };

  for (;;) {
    evaluate(pick);
    int k = basis_size - 1;
    while (k >= 0 &&
           pick[static_cast<std::size_t>(k)] == n_edges - basis_size + k) {
      --k;
    }
    if (k < 0) break;
    ++pick[static_cast<std::size_t>(k)];
    for (int t = k + 1; t < basis_size; ++t) {
      pick[static_cast<std::size_t>(t)] =
          pick[static_cast<std::size_t>(t - 1)] + 1;
    }
  }
  return best;
}

// EMD of two small maps via the exhaustive-basis oracle.
inline double oracle_emd_small(const SaliencyMap& a, const SaliencyMap& b) {
  double sa = 0.0, sb = 0.0;
  for (double x : a.v) sa += x;
  for (double x : b.v) sb += x;
  std::vector<double> supply, demand;
  std::vector<std::pair<double, double>> spos, dpos;
  for (std::int64_t r = 0; r < a.rows; ++r) {
    for (std::int64_t c = 0; c < a.cols; ++c) {
      if (a.at(r, c) > 0.0) {
        supply.push_back(a.at(r, c) / sa);
        spos.emplace_back(static_cast<double>(r), static_cast<double>(c));
      }
      if (b.at(r, c) > 0.0) {
        demand.push_back(b.at(r, c) / sb);
        dpos.emplace_back(static_cast<double>(r), static_cast<double>(c));
      }
    }
  }
  std::vector<std::vector<double>> cost(supply.size(),
                                        std::vector<double>(demand.size()));
  for (std::size_t i = 0; i < supply.size(); ++i) {
    for (std::size_t j = 0; j < demand.size(); ++j) {
      const double dr = spos[i].first - dpos[j].first;
      const double dc = spos[i].second - dpos[j].second;
      cost[i][j] = std::sqrt(dr * dr + dc * dc);
    }
  }
  return all_bfs_transport(supply, demand, cost);
}

}  // namespace mlnet::test
