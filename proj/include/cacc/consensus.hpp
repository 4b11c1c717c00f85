#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cacc::consensus {

enum class Protocol { kNone, kBdc, kWac, kDcea };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& name);

/// Undirected communication graph without self loops.
class NeighborGraph {
 public:
  /// Path graph: agent i talks to i-1 and i+1.
  static NeighborGraph line(std::size_t n);

  /// Validates symmetry, range and absence of self loops; sorts lists.
  explicit NeighborGraph(std::vector<std::vector<std::size_t>> adjacency);

  std::size_t size() const { return adjacency_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adjacency_[i]; }
  std::size_t degree(std::size_t i) const { return adjacency_[i].size(); }
  std::size_t max_degree() const;
  std::size_t directed_edges() const;

 private:
  std::vector<std::vector<std::size_t>> adjacency_;
};

struct ConsensusConfig {
  Protocol protocol = Protocol::kBdc;
  double epsilon = 0.01;
  int period = 1;           // episodes between rounds
  double threshold = 0.0;   // ternary quantizer dead zone

  void validate() const;
};

/// Per-agent parameter vectors, all of the same length.
using AgentVectors = std::vector<std::vector<double>>;

struct EfState {
  std::vector<double> residual;

  static EfState zeros(std::size_t n) { return {std::vector<double>(n, 0.0)}; }
};

/// -1 below -threshold, +1 above threshold, 0 in between.
std::vector<double> ternary_quantize(std::span<const double> x, double threshold);

/// w_i += eps * sum_j (q(w_j) - q(w_i)), from the pre-round snapshot.
AgentVectors bdc_update(const AgentVectors& weights, const NeighborGraph& graph, double epsilon,
                        double threshold);

/// w_i = mean of w_i and its neighbours' vectors.
AgentVectors wac_update(const AgentVectors& weights, const NeighborGraph& graph);

/// w_i += eps * sum_j (w_j - w_i). Preserves the across-agent mean.
AgentVectors dcea_update(const AgentVectors& weights, const NeighborGraph& graph, double epsilon);

/// Dispatches on config.protocol; kNone returns the input unchanged.
AgentVectors apply(const ConsensusConfig& config, const AgentVectors& weights,
                   const NeighborGraph& graph);

struct QsgdResult {
  std::vector<double> weights;
  EfState ef;
};

/// Ternary-compressed gradient step with error feedback:
/// p = grad + residual; q = quantize(p); w -= lr * q; residual = p - q.
QsgdResult qsgd_step(std::span<const double> w, std::span<const double> grad, const EfState& ef,
                     double lr, double threshold);

/// Bits exchanged in one round over every directed edge of the graph.
std::uint64_t comm_bits(Protocol protocol, std::size_t n_params, const NeighborGraph& graph);

/// Largest max-minus-min across agents over all components.
double spread(const AgentVectors& weights);

}  // namespace cacc::consensus
