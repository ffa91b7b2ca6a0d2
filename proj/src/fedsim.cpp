#include "fedbilevel/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

namespace fedbilevel {
namespace {

// Fixed set of threads reused across rounds. run(n, fn) calls fn(0..n-1)
// and blocks until all are done; the first failing index is rethrown.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t threads) {
    for (std::size_t t = 1; t < threads; ++t)
      threads_.emplace_back([this] { loop(); });
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void run(std::size_t count, const std::function<void(std::size_t)>& fn) {
    errors_.assign(count, nullptr);
    if (threads_.empty() || count <= 1) {
      for (std::size_t i = 0; i < count; ++i) invoke(fn, i);
    } else {
      {
        std::lock_guard<std::mutex> lock(mutex_);
        task_ = &fn;
        count_ = count;
        next_ = 0;
        pending_ = count;
        ++generation_;
      }
      wake_.notify_all();
      drain();
      std::unique_lock<std::mutex> lock(mutex_);
      done_.wait(lock, [this] { return pending_ == 0; });
      task_ = nullptr;
    }
    for (auto& e : errors_)
      if (e) std::rethrow_exception(e);
  }

 private:
  void invoke(const std::function<void(std::size_t)>& fn, std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors_[i] = std::current_exception();
    }
  }

  // Claims indices until the current batch is exhausted.
  void drain() {
    while (true) {
      std::size_t i;
      const std::function<void(std::size_t)>* fn;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (task_ == nullptr || next_ >= count_) return;
        i = next_++;
        fn = task_;
      }
      invoke(*fn, i);
      std::lock_guard<std::mutex> lock(mutex_);
      if (--pending_ == 0) done_.notify_all();
    }
  }

  void loop() {
    std::uint64_t seen = 0;
    while (true) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t count_ = 0;
  std::size_t next_ = 0;
  std::size_t pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::vector<std::exception_ptr> errors_;
};

ModelVector local_gradient(const RegularizedObjective& objective,
                           std::size_t clientId, const ModelVector& y,
                           const GradientOracle& oracle, RngStream& rng) {
  if (!oracle.stochastic) return objective.client_gradient(clientId, y);
  return objective.client_stochastic_gradient(
      clientId, y, rng, SamplingSpec{oracle.batch, oracle.withReplacement});
}

void check_iterate(const ModelVector& y, std::size_t clientId, int round) {
  if (!all_finite(y)) {
    throw DivergenceError("non-finite local iterate on client " +
                              std::to_string(clientId),
                          round);
  }
}

}  // namespace

std::string_view to_string(Method method) {
  return method == Method::FedAvg ? "fedavg" : "scaffold";
}

std::vector<std::size_t> sample_clients(std::size_t n, std::size_t s,
                                        RngStream& rng) {
  require(s >= 1 && s <= n, "sample_clients: need 1 <= S <= N");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (s < n) {
    for (std::size_t k = 0; k < s; ++k)
      std::swap(pool[k], pool[k + rng.uniform_index(n - k)]);
    pool.resize(s);
    std::sort(pool.begin(), pool.end());
  }
  return pool;
}

ModelVector local_update_fedavg(const RegularizedObjective& objective,
                                std::size_t clientId, const ModelVector& x,
                                const Schedule& schedule,
                                const GradientOracle& oracle, RngStream& rng) {
  // Track the displacement so that y - x is returned without cancellation.
  ModelVector d = ModelVector::Zero(x.size());
  ModelVector y = x;
  for (int k = 0; k < schedule.K; ++k) {
    const ModelVector g = local_gradient(objective, clientId, y, oracle, rng);
    d -= schedule.gammaLocal * g;
    y = x + d;
    check_iterate(y, clientId, -1);
  }
  return d;
}

ScaffoldDelta local_update_scaffold(const RegularizedObjective& objective,
                                    std::size_t clientId, const ModelVector& x,
                                    const ModelVector& c, const ModelVector& cI,
                                    const Schedule& schedule,
                                    const GradientOracle& oracle, RngStream& rng,
                                    ControlVariateOption option,
                                    RngStream& cvRng) {
  const ModelVector correction = c - cI;
  ModelVector d = ModelVector::Zero(x.size());
  ModelVector y = x;
  for (int k = 0; k < schedule.K; ++k) {
    const ModelVector g = local_gradient(objective, clientId, y, oracle, rng);
    d -= schedule.gammaLocal * (g + correction);
    y = x + d;
    check_iterate(y, clientId, -1);
  }

  ModelVector cNext;
  if (option == ControlVariateOption::I) {
    cNext = local_gradient(objective, clientId, x, oracle, cvRng);
  } else if (schedule.gammaLocal > 0.0) {
    const double scale =
        1.0 / (static_cast<double>(schedule.K) * schedule.gammaLocal);
    cNext = cI - c + (-d) * scale;
  } else {
    cNext = cI;
  }
  return {d, cNext - cI};
}

ModelVector aggregate(ServerState& server, std::vector<ClientDelta> deltas,
                      const Schedule& schedule, Method method) {
  require(!deltas.empty(), "aggregate: no client deltas");
  std::sort(deltas.begin(), deltas.end(),
            [](const ClientDelta& a, const ClientDelta& b) {
              return a.clientId < b.clientId;
            });
  const auto s = static_cast<double>(deltas.size());
  ModelVector sumY = ModelVector::Zero(server.x.size());
  for (const auto& d : deltas) sumY += d.deltaY;
  const ModelVector step = schedule.gammaGlobal * (sumY / s);
  server.x += step;

  if (method == Method::Scaffold) {
    ModelVector sumC = ModelVector::Zero(server.x.size());
    for (const auto& d : deltas) sumC += d.deltaC;
    server.c += (s / static_cast<double>(schedule.N)) * (sumC / s);
  }
  ++server.round;
  return step;
}

TrainingResult run_training(const ProblemInstance& instance,
                            const Schedule& schedule,
                            const TrainingOptions& options,
                            const RoundHook& hook) {
  instance.validate();
  const std::size_t n = instance.client_count();
  require(schedule.N == n, "run_training: schedule was built for another N");
  require(schedule.R >= 0, "run_training: R must be >= 0");
  require(schedule.S >= 1 && schedule.S <= n, "run_training: need 1 <= S <= N");
  require(options.workers >= 1, "run_training: workers must be >= 1");

  const Eigen::Index dim = instance.dimension;
  const ModelVector x0 =
      options.x0.size() == 0 ? ModelVector(ModelVector::Zero(dim)) : options.x0;
  require(x0.size() == dim, "run_training: x0 has the wrong dimension");
  require(all_finite(x0), "run_training: x0 must be finite");

  const RegularizedObjective objective(instance, schedule.eta);
  TrainingResult result;
  ServerState& server = result.server;
  server.x = x0;
  server.c = ModelVector::Zero(dim);
  server.wavg = WeightedAverage(schedule.theta, dim);
  result.clients.assign(n, ClientState{ModelVector::Zero(dim)});

  WorkerPool pool(std::min(options.workers, std::max<std::size_t>(schedule.S, 1)));
  std::vector<ClientDelta> deltas(schedule.S);

  for (int r = 0; r < schedule.R; ++r) {
    const auto start = std::chrono::steady_clock::now();
    server.wavg.update(server.x);

    RngStream samplingRng = RngStream::derive(
        options.seed, static_cast<std::uint64_t>(r), 0, StreamPurpose::ClientSampling);
    const std::vector<std::size_t> sampled = sample_clients(n, schedule.S, samplingRng);

    const ModelVector& x = server.x;
    const ModelVector& c = server.c;
    try {
      pool.run(sampled.size(), [&](std::size_t slot) {
        const std::size_t id = sampled[slot];
        RngStream rng = RngStream::derive(options.seed, static_cast<std::uint64_t>(r),
                                          id, StreamPurpose::LocalSteps);
        ClientDelta& out = deltas[slot];
        out.clientId = id;
        if (options.method == Method::FedAvg) {
          out.deltaY = local_update_fedavg(objective, id, x, schedule,
                                           options.oracle, rng);
          out.deltaC.resize(0);
        } else {
          RngStream cvRng = RngStream::derive(options.seed, static_cast<std::uint64_t>(r),
                                              id, StreamPurpose::ControlVariate);
          ScaffoldDelta sd = local_update_scaffold(
              objective, id, x, c, result.clients[id].cI, schedule,
              options.oracle, rng, options.cvOption, cvRng);
          out.deltaY = std::move(sd.deltaY);
          out.deltaC = std::move(sd.deltaC);
        }
      });
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), r + 1);
    }

    if (options.method == Method::Scaffold) {
      for (const auto& d : deltas) result.clients[d.clientId].cI += d.deltaC;
    }
    const ModelVector step = aggregate(server, deltas, schedule, options.method);

    const double xNorm = server.x.norm();
    if (!all_finite(server.x) || xNorm > options.divergenceThreshold) {
      throw DivergenceError("server model diverged at round " +
                                std::to_string(r + 1) + " (||x|| = " +
                                std::to_string(xNorm) + ")",
                            r + 1);
    }

    RoundRecord record;
    record.round = r + 1;
    record.sampledClients = sampled;
    record.xNorm = xNorm;
    record.deltaNorm = step.norm();
    record.wallclockMs =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    result.records.push_back(std::move(record));
    if (hook) hook(RoundSnapshot{r + 1, server, result.clients, result.records.back()});
  }

  result.xFinal = server.x;
  result.xBar = schedule.R > 0 ? server.wavg.mean() : x0;
  return result;
}

}  // namespace fedbilevel
