#pragma once

// Independent reference for impact assessment: enumerates every simple path
// from every degraded source breadth-first and keeps the largest product of
// criticalities per (node, resource of the last hop).

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ccic/plant.hpp"

namespace ccic::testing {

using ImpactMap = std::map<std::pair<std::string, plant::Resource>, double>;

inline ImpactMap brute_force_impact(const std::vector<plant::InterdependencyEdge>& edges,
                                    const std::set<std::string>& degraded) {
  ImpactMap best;
  struct Path {
    std::vector<std::string> nodes;
    double product;
  };
  for (const auto& src : degraded) {
    std::vector<Path> frontier = {{{src}, 1.0}};
    while (!frontier.empty()) {
      std::vector<Path> next;
      for (const auto& p : frontier) {
        for (const auto& e : edges) {
          if (e.provider_site != p.nodes.back()) continue;
          if (std::find(p.nodes.begin(), p.nodes.end(), e.consumer_site) != p.nodes.end()) continue;
          Path q = p;
          q.nodes.push_back(e.consumer_site);
          q.product *= e.criticality;
          if (q.product > 0.0) {
            auto& b = best[{e.consumer_site, e.resource}];
            b = std::max(b, q.product);
          }
          next.push_back(std::move(q));
        }
      }
      frontier = std::move(next);
    }
  }
  return best;
}

}  // namespace ccic::testing
