#include "cacc/consensus.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cacc/errors.hpp"

namespace cacc::consensus {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kNone:
      return "none";
    case Protocol::kBdc:
      return "bdc";
    case Protocol::kWac:
      return "wac";
    case Protocol::kDcea:
      return "dcea";
  }
  return "none";
}

Protocol protocol_from_string(const std::string& name) {
  if (name == "none") return Protocol::kNone;
  if (name == "bdc") return Protocol::kBdc;
  if (name == "wac") return Protocol::kWac;
  if (name == "dcea") return Protocol::kDcea;
  throw ConfigError("consensus.protocol: unknown value '" + name +
                    "' (expected none, bdc, wac or dcea)");
}

NeighborGraph NeighborGraph::line(std::size_t n) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    adj[i].push_back(i + 1);
    adj[i + 1].push_back(i);
  }
  return NeighborGraph(std::move(adj));
}

NeighborGraph::NeighborGraph(std::vector<std::vector<std::size_t>> adjacency)
    : adjacency_(std::move(adjacency)) {
  const std::size_t n = adjacency_.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& list = adjacency_[i];
    std::sort(list.begin(), list.end());
    if (std::adjacent_find(list.begin(), list.end()) != list.end()) {
      throw UsageError(fmt::format("NeighborGraph: duplicate neighbour of {}", i));
    }
    for (std::size_t j : list) {
      if (j >= n) throw UsageError(fmt::format("NeighborGraph: neighbour {} out of range", j));
      if (j == i) throw UsageError(fmt::format("NeighborGraph: self loop at {}", i));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : adjacency_[i]) {
      if (!std::binary_search(adjacency_[j].begin(), adjacency_[j].end(), i)) {
        throw UsageError(fmt::format("NeighborGraph: edge {}-{} is not symmetric", i, j));
      }
    }
  }
}

std::size_t NeighborGraph::max_degree() const {
  std::size_t m = 0;
  for (const auto& list : adjacency_) m = std::max(m, list.size());
  return m;
}

std::size_t NeighborGraph::directed_edges() const {
  std::size_t e = 0;
  for (const auto& list : adjacency_) e += list.size();
  return e;
}

void ConsensusConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("consensus.epsilon must be > 0");
  if (period < 1) throw ConfigError("consensus.period must be >= 1");
  if (!(threshold >= 0.0)) throw ConfigError("consensus.threshold must be >= 0");
}

namespace {

void check_shapes(const AgentVectors& weights, const NeighborGraph& graph) {
  if (weights.size() != graph.size()) {
    throw UsageError(fmt::format("consensus: {} agents but graph has {} nodes", weights.size(),
                                 graph.size()));
  }
  for (const auto& w : weights) {
    if (w.size() != weights.front().size()) {
      throw UsageError("consensus: agent parameter vectors differ in length");
    }
  }
}

}  // namespace

std::vector<double> ternary_quantize(std::span<const double> x, double threshold) {
  std::vector<double> q(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    q[k] = x[k] > threshold ? 1.0 : (x[k] < -threshold ? -1.0 : 0.0);
  }
  return q;
}

AgentVectors bdc_update(const AgentVectors& weights, const NeighborGraph& graph, double epsilon,
                        double threshold) {
  check_shapes(weights, graph);
  AgentVectors quantized;
  quantized.reserve(weights.size());
  for (const auto& w : weights) quantized.push_back(ternary_quantize(w, threshold));

  AgentVectors out = weights;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t j : graph.neighbors(i)) {
      for (std::size_t k = 0; k < out[i].size(); ++k) {
        out[i][k] += epsilon * (quantized[j][k] - quantized[i][k]);
      }
    }
  }
  return out;
}

AgentVectors wac_update(const AgentVectors& weights, const NeighborGraph& graph) {
  check_shapes(weights, graph);
  AgentVectors out = weights;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double count = static_cast<double>(graph.degree(i) + 1);
    for (std::size_t k = 0; k < out[i].size(); ++k) {
      double sum = weights[i][k];
      for (std::size_t j : graph.neighbors(i)) sum += weights[j][k];
      out[i][k] = sum / count;
    }
  }
  return out;
}

AgentVectors dcea_update(const AgentVectors& weights, const NeighborGraph& graph, double epsilon) {
  check_shapes(weights, graph);
  AgentVectors out = weights;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t j : graph.neighbors(i)) {
      for (std::size_t k = 0; k < out[i].size(); ++k) {
        out[i][k] += epsilon * (weights[j][k] - weights[i][k]);
      }
    }
  }
  return out;
}

AgentVectors apply(const ConsensusConfig& config, const AgentVectors& weights,
                   const NeighborGraph& graph) {
  switch (config.protocol) {
    case Protocol::kNone:
      return weights;
    case Protocol::kBdc:
      return bdc_update(weights, graph, config.epsilon, config.threshold);
    case Protocol::kWac:
      return wac_update(weights, graph);
    case Protocol::kDcea:
      return dcea_update(weights, graph, config.epsilon);
  }
  return weights;
}

QsgdResult qsgd_step(std::span<const double> w, std::span<const double> grad, const EfState& ef,
                     double lr, double threshold) {
  if (grad.size() != w.size() || ef.residual.size() != w.size()) {
    throw UsageError(fmt::format("qsgd_step: shape mismatch (w {}, grad {}, residual {})",
                                 w.size(), grad.size(), ef.residual.size()));
  }
  std::vector<double> corrected(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) corrected[k] = grad[k] + ef.residual[k];
  const std::vector<double> q = ternary_quantize(corrected, threshold);

  QsgdResult out{std::vector<double>(w.begin(), w.end()), EfState::zeros(w.size())};
  for (std::size_t k = 0; k < w.size(); ++k) {
    out.weights[k] -= lr * q[k];
    out.ef.residual[k] = corrected[k] - q[k];
  }
  return out;
}

std::uint64_t comm_bits(Protocol protocol, std::size_t n_params, const NeighborGraph& graph) {
  std::uint64_t per_param = 0;
  switch (protocol) {
    case Protocol::kNone:
      per_param = 0;
      break;
    case Protocol::kBdc:
      per_param = 2;
      break;
    case Protocol::kWac:
    case Protocol::kDcea:
      per_param = 32;
      break;
  }
  return per_param * static_cast<std::uint64_t>(n_params) *
         static_cast<std::uint64_t>(graph.directed_edges());
}

double spread(const AgentVectors& weights) {
  if (weights.empty()) return 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < weights.front().size(); ++k) {
    double lo = weights.front()[k];
    double hi = lo;
    for (const auto& w : weights) {
      lo = std::min(lo, w[k]);
      hi = std::max(hi, w[k]);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

}  // namespace cacc::consensus
