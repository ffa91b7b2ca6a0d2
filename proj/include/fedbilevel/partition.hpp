#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedbilevel/dataset.hpp"
#include "fedbilevel/problems.hpp"

namespace fedbilevel {

struct Partition {
  /// Client index of every sample.
  std::vector<std::size_t> assignment;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::size_t clients = 0;
  /// Samples per client.
  std::vector<std::size_t> counts;
  /// Clients that received no sample. Allowed; training aborts only if one
  /// of them is asked for a gradient.
  std::vector<std::size_t> emptyClients;
};

/// Label-skewed split: for each class (ascending label order) draw client
/// proportions from Dir(alpha 1_N), round them to counts by largest
/// remainder, shuffle the class's samples and deal contiguous blocks.
Partition dirichlet_partition(const std::vector<std::int64_t>& labels,
                              std::size_t clients, double alpha,
                              std::uint64_t seed);

/// Header "sampleIndex,clientId", one line per sample.
std::string format_partition_csv(const Partition& partition);
void write_partition_csv(const std::string& path, const Partition& partition);

/// Least-squares inner objectives from the partitioned rows; outer objectives
/// default to 0.5 ||x||^2.
ProblemInstance make_least_squares_instance(const Dataset& data,
                                            const Partition& partition);

/// Class labels from integral targets; non-integral targets form one class.
std::vector<std::int64_t> labels_from_targets(const ModelVector& targets);

}  // namespace fedbilevel
