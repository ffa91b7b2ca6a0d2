#include "fedbilevel/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>


namespace fedbilevel {

Partition dirichlet_partition(const std::vector<std::int64_t>& labels,
                              std::size_t clients, double alpha,
                              std::uint64_t seed) {
  require(clients >= 1, "dirichlet_partition: need at least one client");
  require(alpha > 0.0 && std::isfinite(alpha),
          "dirichlet_partition: alpha must be positive");

  std::map<std::int64_t, std::vector<std::size_t>> byClass;
  for (std::size_t i = 0; i < labels.size(); ++i) byClass[labels[i]].push_back(i);

  Partition out;
  out.seed = seed;
  out.alpha = alpha;
  out.clients = clients;
  out.assignment.assign(labels.size(), 0);
  out.counts.assign(clients, 0);

  std::uint64_t classIndex = 0;
  for (auto& [label, members] : byClass) {
    (void)label;
    RngStream rng =
        RngStream::derive(seed, classIndex++, 0, StreamPurpose::Partition);
    std::vector<double> p(clients);
    for (auto& v : p) v = rng.gamma(alpha);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) {
      // Every draw underflowed (tiny alpha): the class goes to one client.
      std::fill(p.begin(), p.end(), 0.0);
      p[rng.uniform_index(clients)] = 1.0;
    } else {
      for (auto& v : p) v /= total;
    }

    const std::size_t n = members.size();
    std::vector<std::size_t> share(clients);
    std::vector<std::pair<double, std::size_t>> remainder(clients);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      const double exact = p[k] * static_cast<double>(n);
      share[k] = static_cast<std::size_t>(std::floor(exact));
      remainder[k] = {exact - static_cast<double>(share[k]), k};
      assigned += share[k];
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned)
      ++share[remainder[k % clients].second];

    for (std::size_t i = n; i > 1; --i)
      std::swap(members[i - 1], members[rng.uniform_index(i)]);

    std::size_t cursor = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      for (std::size_t j = 0; j < share[k]; ++j)
        out.assignment[members[cursor++]] = k;
      out.counts[k] += share[k];
    }
  }
  for (std::size_t k = 0; k < clients; ++k)
    if (out.counts[k] == 0) out.emptyClients.push_back(k);
  return out;
}

std::string format_partition_csv(const Partition& partition) {
  std::string out = "sampleIndex,clientId\n";
  for (std::size_t i = 0; i < partition.assignment.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(partition.assignment[i]) + "\n";
  return out;
}

void write_partition_csv(const std::string& path, const Partition& partition) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write partition file: " + path);
  file << format_partition_csv(partition);
}

std::vector<std::int64_t> labels_from_targets(const ModelVector& targets) {
  std::vector<std::int64_t> labels(static_cast<std::size_t>(targets.size()), 0);
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    const double t = targets[i];
    if (t != std::round(t) || std::abs(t) > 1e15)
      return std::vector<std::int64_t>(labels.size(), 0);
    labels[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(t);
  }
  return labels;
}

ProblemInstance make_least_squares_instance(const Dataset& data,
                                            const Partition& partition) {
  require(partition.assignment.size() == static_cast<std::size_t>(data.rows()),
          "partition size does not match the dataset");
  ProblemInstance instance;
  instance.name = "csv-least-squares";
  instance.dimension = data.dimension();
  for (std::size_t k = 0; k < partition.clients; ++k) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < partition.assignment.size(); ++i)
      if (partition.assignment[i] == k) rows.push_back(static_cast<Eigen::Index>(i));
    Matrix u(static_cast<Eigen::Index>(rows.size()), data.dimension());
    ModelVector v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      u.row(static_cast<Eigen::Index>(j)) = data.features.row(rows[j]);
      v[static_cast<Eigen::Index>(j)] = data.targets[rows[j]];
    }
    instance.clients.push_back(
        {LocalObjective::squared_distance(ModelVector::Zero(data.dimension())),
         LocalObjective::least_squares(std::move(u), std::move(v))});
  }
  double lH = 0.0;
  for (const auto& c : instance.clients)
    lH = std::max(lH, c.inner.smoothness(instance.dimension));
  instance.constants.lF = 1.0;
  instance.constants.muF = 1.0;
  instance.constants.lH = lH;
  return instance;
}

}  // namespace fedbilevel
