#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "mlnet/error.hpp"

// Exact minimum-cost transport between two discrete distributions, solved
// with successive shortest augmenting paths on the dense bipartite graph
// (Dijkstra with node potentials, stopped at the first settled sink that
// still needs mass). Supplies and demands are real-valued and must balance;
// each augmentation saturates a source, a sink, or a residual arc. Intended
// for desk-scale instances of at most a few thousand bins.

namespace mlnet {

struct TransportNode {
  double mass;
  double row, col;  // bin center, in pixel units
};

inline double solve_transport(std::vector<TransportNode> sources,
                              std::vector<TransportNode> sinks) {
  const std::size_t S = sources.size(), T = sinks.size();
  if (S == 0 || T == 0) throw ValueError("transport: empty distribution");

  double total_supply = 0.0, total_demand = 0.0;
  for (const auto& s : sources) total_supply += s.mass;
  for (const auto& t : sinks) total_demand += t.mass;
  if (std::fabs(total_supply - total_demand) >
      1e-9 * std::max(total_supply, total_demand)) {
    throw ValueError("transport: unbalanced masses " +
                     std::to_string(total_supply) + " vs " +
                     std::to_string(total_demand));
  }
  // Absorb the rounding residue into the largest sink so supplies can drain
  // exactly.
  std::size_t big = 0;
  for (std::size_t j = 1; j < T; ++j) {
    if (sinks[j].mass > sinks[big].mass) big = j;
  }
  sinks[big].mass += total_supply - total_demand;

  std::vector<double> cost(S * T);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      const double dr = sources[i].row - sinks[j].row;
      const double dc = sources[i].col - sinks[j].col;
      cost[i * T + j] = std::sqrt(dr * dr + dc * dc);
    }
  }

  std::vector<double> flow(S * T, 0.0);
  // Sparse residual arcs: sources currently shipping into each sink.
  std::vector<std::vector<std::uint32_t>> carriers(T);
  std::vector<double> pot_src(S, 0.0), pot_snk(T, 0.0);
  std::vector<double> sup(S), dem(T);
  for (std::size_t i = 0; i < S; ++i) sup[i] = sources[i].mass;
  for (std::size_t j = 0; j < T; ++j) dem[j] = sinks[j].mass;

  // If more than kStopEps mass remains, some source and sink hold at least
  // kNodeEps of it, so an augmenting pair always exists.
  const double kStopEps = 1e-12 * std::max(1.0, total_supply);
  const double kNodeEps = kStopEps / (2.0 * static_cast<double>(S + T));
  const double kFlowEps = 1e-18 * std::max(1.0, total_supply);
  const double kInf = std::numeric_limits<double>::infinity();
  const std::size_t V = S + T;  // sources first, then sinks

  std::vector<double> dist(V);
  std::vector<std::int32_t> parent(V);
  std::vector<char> done(V);
  using HeapItem = std::pair<double, std::uint32_t>;
  std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>> heap;

  double remaining = total_supply;
  const std::size_t max_rounds = 64 * (S + T) + 256;
  std::size_t rounds = 0;
  while (remaining > kStopEps) {
    if (++rounds > max_rounds) {
      throw NumericError("transport: augmentation cap exceeded");
    }
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    while (!heap.empty()) heap.pop();
    for (std::size_t i = 0; i < S; ++i) {
      if (sup[i] > kNodeEps) {
        dist[i] = 0.0;
        heap.emplace(0.0, static_cast<std::uint32_t>(i));
      }
    }

    std::size_t target = V;
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (done[u] || d > dist[u]) continue;
      done[u] = 1;
      if (u >= S && dem[u - S] > kNodeEps) {
        target = u;  // settled: minimal-distance sink that needs mass
        break;
      }
      if (u < S) {
        const std::size_t i = u;
        for (std::size_t j = 0; j < T; ++j) {
          const double nd =
              dist[i] +
              std::max(0.0, cost[i * T + j] + pot_src[i] - pot_snk[j]);
          if (nd < dist[S + j]) {
            dist[S + j] = nd;
            parent[S + j] = static_cast<std::int32_t>(i);
            heap.emplace(nd, static_cast<std::uint32_t>(S + j));
          }
        }
      } else {
        const std::size_t j = u - S;
        auto& list = carriers[j];
        for (std::size_t k = 0; k < list.size();) {
          const std::size_t i = list[k];
          if (flow[i * T + j] <= kFlowEps) {
            list[k] = list.back();
            list.pop_back();
            continue;
          }
          const double nd = dist[S + j] +
                            std::max(0.0, -cost[i * T + j] - pot_src[i] +
                                              pot_snk[j]);
          if (nd < dist[i]) {
            dist[i] = nd;
            parent[i] = static_cast<std::int32_t>(S + j);
            heap.emplace(nd, static_cast<std::uint32_t>(i));
          }
          ++k;
        }
      }
    }
    if (target == V) {
      throw NumericError("transport: no augmenting path; residual mass " +
                         std::to_string(remaining));
    }

    // Bottleneck along the alternating path.
    double delta = dem[target - S];
    for (std::size_t v = target; parent[v] >= 0;
         v = static_cast<std::size_t>(parent[v])) {
      const std::size_t p = static_cast<std::size_t>(parent[v]);
      if (v >= S) {
        if (parent[p] < 0) delta = std::min(delta, sup[p]);
      } else {
        delta = std::min(delta, flow[v * T + (p - S)]);
      }
    }
    std::size_t head = target;
    for (std::size_t v = target; parent[v] >= 0;
         v = static_cast<std::size_t>(parent[v])) {
      const std::size_t p = static_cast<std::size_t>(parent[v]);
      if (v >= S) {
        if (flow[p * T + (v - S)] <= kFlowEps) {
          carriers[v - S].push_back(static_cast<std::uint32_t>(p));
        }
        flow[p * T + (v - S)] += delta;
      } else {
        flow[v * T + (p - S)] -= delta;
      }
      head = p;
    }
    sup[head] -= delta;
    dem[target - S] -= delta;
    remaining -= delta;

    const double cap = dist[target];
    for (std::size_t i = 0; i < S; ++i) {
      if (dist[i] < kInf) pot_src[i] += std::min(dist[i], cap);
      else pot_src[i] += cap;
    }
    for (std::size_t j = 0; j < T; ++j) {
      if (dist[S + j] < kInf) pot_snk[j] += std::min(dist[S + j], cap);
      else pot_snk[j] += cap;
    }
  }

  double total_cost = 0.0;
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      total_cost += flow[i * T + j] * cost[i * T + j];
    }
  }
  return total_cost;
}

}  // namespace mlnet
