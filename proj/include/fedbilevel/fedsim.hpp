#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "fedbilevel/problems.hpp"
#include "fedbilevel/rng.hpp"
#include "fedbilevel/urs.hpp"

namespace fedbilevel {

enum class Method { FedAvg, Scaffold };

std::string_view to_string(Method method);

/// (i): c_i+ is a fresh gradient of f_eta,i at the server model.
/// (ii): c_i+ = c_i - c + (x - y_i) / (K gamma_l).
enum class ControlVariateOption { I, II };

struct GradientOracle {
  bool stochastic = false;
  std::size_t batch = 1;
  bool withReplacement = true;
};

struct TrainingOptions {
  Method method = Method::FedAvg;
  ControlVariateOption cvOption = ControlVariateOption::II;
  GradientOracle oracle;
  std::uint64_t seed = 0;
  /// Threads running local updates. Results do not depend on it.
  std::size_t workers = 1;
  /// Starting point; zeros when empty.
  ModelVector x0;
  double divergenceThreshold = 1e12;
};

struct ServerState {
  ModelVector x;
  ModelVector c;
  int round = 0;
  WeightedAverage wavg;
};

struct ClientState {
  ModelVector cI;
};

struct RoundRecord {
  int round = 0;
  std::vector<std::size_t> sampledClients;
  double xNorm = 0.0;
  double deltaNorm = 0.0;
  double wallclockMs = 0.0;
};

/// Passed to the per-round hook after the server update of `round`.
struct RoundSnapshot {
  int round;
  const ServerState& server;
  const std::vector<ClientState>& clients;
  const RoundRecord& record;
};

using RoundHook = std::function<void(const RoundSnapshot&)>;

struct TrainingResult {
  ModelVector xBar;
  ModelVector xFinal;
  std::vector<RoundRecord> records;
  ServerState server;
  std::vector<ClientState> clients;
};

/// Uniform subset of size S without replacement, returned in ascending order.
std::vector<std::size_t> sample_clients(std::size_t n, std::size_t s,
                                        RngStream& rng);

/// K local steps from x on client i; returns y - x.
ModelVector local_update_fedavg(const RegularizedObjective& objective,
                                std::size_t clientId, const ModelVector& x,
                                const Schedule& schedule,
                                const GradientOracle& oracle, RngStream& rng);

struct ScaffoldDelta {
  ModelVector deltaY;
  ModelVector deltaC;
};

/// K corrected local steps. `cvRng` is only read under option (i).
ScaffoldDelta local_update_scaffold(const RegularizedObjective& objective,
                                    std::size_t clientId, const ModelVector& x,
                                    const ModelVector& c, const ModelVector& cI,
                                    const Schedule& schedule,
                                    const GradientOracle& oracle, RngStream& rng,
                                    ControlVariateOption option,
                                    RngStream& cvRng);

struct ClientDelta {
  std::size_t clientId = 0;
  ModelVector deltaY;
  /// Empty for FedAvg.
  ModelVector deltaC;
};

/// x += gamma_g mean(deltaY); SCAFFOLD also c += (S/N) mean(deltaC).
/// Deltas are summed in ascending client id whatever their arrival order.
/// Returns the applied step gamma_g mean(deltaY).
ModelVector aggregate(ServerState& server, std::vector<ClientDelta> deltas,
                      const Schedule& schedule, Method method);

/// Runs schedule.R rounds. The averaged iterate takes the pre-round model
/// before every round. Throws DivergenceError on NaN or ||x|| above the
/// threshold.
TrainingResult run_training(const ProblemInstance& instance,
                            const Schedule& schedule,
                            const TrainingOptions& options,
                            const RoundHook& hook = {});

}  // namespace fedbilevel
