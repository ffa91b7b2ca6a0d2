#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "fedbilevel/dataset.hpp"
#include "fedbilevel/partition.hpp"

using namespace fedbilevel;

TEST(Csv, ParsesTwoRows) {
  const Dataset d = parse_csv_dataset("1,0,1\n0,1,2");
  ASSERT_EQ(d.rows(), 2);
  ASSERT_EQ(d.dimension(), 2);
  EXPECT_EQ(d.features(0, 0), 1.0);
  EXPECT_EQ(d.features(0, 1), 0.0);
  EXPECT_EQ(d.features(1, 0), 0.0);
  EXPECT_EQ(d.features(1, 1), 1.0);
  EXPECT_EQ(d.targets[0], 1.0);
  EXPECT_EQ(d.targets[1], 2.0);
}

TEST(Csv, EmptyFileSaysNoRows) {
  const auto path = std::filesystem::temp_directory_path() / "fedbilevel_empty.csv";
  { std::ofstream f(path); }
  try {
    load_csv_dataset(path.string());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no rows"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Csv, ErrorsNameTheLine) {
  try {
    parse_csv_dataset("1,2,3\n4,x,6\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_csv_dataset("1,2,3\n4,5\n"), Error);
}

TEST(Csv, RoundTripIsExact) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  Dataset d;
  d.features.resize(30, 4);
  d.targets.resize(30);
  for (auto i = 0; i < d.features.size(); ++i) d.features.data()[i] = nd(gen) * 1e3 / 7.0;
  for (auto& t : d.targets) t = nd(gen) / 3.0;
  d.features(0, 0) = 5e-324;
  d.features(1, 1) = -1.7976931348623157e308;
  const auto path = std::filesystem::temp_directory_path() / "fedbilevel_roundtrip.csv";
  for (bool header : {false, true}) {
    write_csv_dataset(path.string(), d, CsvFormat{header, ','});
    const Dataset back = load_csv_dataset(path.string(), CsvFormat{header, ','});
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.targets, d.targets);
  }
  std::filesystem::remove(path);
}

static std::vector<std::int64_t> balanced_labels(int classes, int perClass) {
  std::vector<std::int64_t> out;
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < perClass; ++k) out.push_back(c);
  return out;
}

TEST(Dirichlet, SingleClientGetsEverything) {
  const auto p = dirichlet_partition(balanced_labels(3, 10), 1, 0.5, 4);
  for (auto a : p.assignment) EXPECT_EQ(a, 0u);
  EXPECT_EQ(p.counts[0], 30u);
}

TEST(Dirichlet, PerClassCountsAreConserved) {
  const auto labels = balanced_labels(4, 25);
  const auto p = dirichlet_partition(labels, 5, 0.5, 9);
  std::map<std::int64_t, std::size_t> perClass;
  std::size_t total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ASSERT_LT(p.assignment[i], 5u);
    ++perClass[labels[i]];
  }
  for (auto c : p.counts) total += c;
  EXPECT_EQ(total, labels.size());
  for (const auto& [label, count] : perClass) EXPECT_EQ(count, 25u) << label;
}

TEST(Dirichlet, LargeAlphaSplitsEvenly) {
  const auto labels = balanced_labels(2, 100);
  int good = 0;
  const int trials = 200;
  for (int seed = 0; seed < trials; ++seed) {
    const auto p = dirichlet_partition(labels, 2, 1e6, static_cast<std::uint64_t>(seed));
    bool ok = true;
    for (std::int64_t c = 0; c < 2; ++c) {
      std::size_t toZero = 0;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == c && p.assignment[i] == 0) ++toZero;
      ok = ok && toZero >= 45 && toZero <= 55;
    }
    good += ok;
  }
  EXPECT_GE(good, static_cast<int>(0.99 * trials));
}

TEST(Dirichlet, Deterministic) {
  const auto labels = balanced_labels(3, 40);
  const auto a = dirichlet_partition(labels, 4, 0.5, 123);
  const auto b = dirichlet_partition(labels, 4, 0.5, 123);
  EXPECT_EQ(format_partition_csv(a), format_partition_csv(b));
  EXPECT_EQ(format_partition_csv(a).rfind("sampleIndex,clientId\n", 0), 0u);
}

TEST(Dirichlet, RejectsBadArguments) {
  EXPECT_THROW(dirichlet_partition(balanced_labels(2, 3), 0, 0.5, 0), PreconditionError);
  EXPECT_THROW(dirichlet_partition(balanced_labels(2, 3), 2, 0.0, 0), PreconditionError);
}

TEST(LeastSquaresInstance, FromPartition) {
  const Dataset d = parse_csv_dataset("1,0,1\n0,1,2\n1,1,3\n2,0,2\n");
  Partition p;
  p.assignment = {0, 1, 0, 1};
  p.clients = 2;
  p.counts = {2, 2};
  const auto inst = make_least_squares_instance(d, p);
  EXPECT_EQ(inst.client_count(), 2u);
  EXPECT_EQ(inst.clients[0].inner.sample_count(), 2u);
  EXPECT_EQ(inst.dimension, 2);
}
