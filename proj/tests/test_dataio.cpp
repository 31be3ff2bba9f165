#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "rispa/dataio.hpp"

using namespace rispa;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rispa_test_" + name)).string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST(Splits, PublishedCounts) {
  EXPECT_EQ(split_sizes(10000, kMeasurementSplit), (std::array<std::size_t, 3>{8100, 900, 1000}));
  EXPECT_EQ(split_sizes(48000, kTargetSplit), (std::array<std::size_t, 3>{40500, 4500, 3000}));
  EXPECT_EQ(split_sizes(10, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_EQ(split_sizes(2000, kMeasurementSplit), (std::array<std::size_t, 3>{1620, 180, 200}));
  EXPECT_EQ(split_sizes(8000, kTargetSplit), (std::array<std::size_t, 3>{6750, 750, 500}));
}

TEST(Splits, IsPartition) {
  for (std::size_t n : {4u, 10u, 97u, 1000u}) {
    const auto s = split_indices(n, {0.5, 0.25, 0.25}, n);
    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      EXPECT_FALSE(part->empty());
      for (auto i : *part) EXPECT_TRUE(all.insert(i).second) << "duplicate index " << i;
    }
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(*all.rbegin(), n - 1);
  }
}

TEST(Splits, SeededAndErrors) {
  const auto a = split_indices(100, kMeasurementSplit, 1), b = split_indices(100, kMeasurementSplit, 1);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, split_indices(100, kMeasurementSplit, 2).train);
  EXPECT_THROW(split_sizes(2, kMeasurementSplit), InvalidArgument);
  EXPECT_THROW(split_sizes(4, {0.9, 0.05, 0.05}), InvalidArgument);  // val rounds to 0
  EXPECT_THROW(split_sizes(100, {0.5, 0.5, 0.1}), InvalidArgument);
  EXPECT_THROW(split_sizes(100, {0.0, 0.5, 0.5}), InvalidArgument);
}

TEST(Collect, SingleRecordMaxIsOne) {
  const auto d = collect(default_scene(), 1, 42);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d.i_max, *std::max_element(d.records[0].raw.begin(), d.records[0].raw.end()));
  EXPECT_DOUBLE_EQ(*std::max_element(d.records[0].normalized.begin(), d.records[0].normalized.end()), 1.0);
}

TEST(Collect, DeterministicAndThreadIndependent) {
  const Scene s;
  const auto a = collect(s, 300, 9), b = collect(s, 300, 9), c = collect(s, 300, 9, {4, std::nullopt});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_NE(a, collect(s, 300, 10));
  EXPECT_EQ(a.scene_digest, scene_digest(s));
  for (const auto& r : a.records) EXPECT_EQ(r.profile.size(), 20u);
  EXPECT_THROW(collect(s, 0, 1), InvalidArgument);
}

TEST(Collect, ProfilesCoverAllStates) {
  const auto d = collect(default_scene(), 400, 3);
  std::array<int, 8> counts{};
  for (const auto& r : d.records)
    for (auto st : r.profile) ++counts[static_cast<std::size_t>(st.index())];
  // 8000 draws, 1000 expected per state.
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}

TEST(Collect, ReferenceNormalization) {
  const auto d = collect(default_scene(), 50, 3, {1, 1000.0});
  EXPECT_EQ(d.i_max, 1000.0);
  for (const auto& r : d.records)
    for (std::size_t j = 0; j < r.raw.size(); ++j) EXPECT_EQ(r.normalized[j], r.raw[j] / 1000.0);
  const auto f = fraction_below(d, 0.6);
  ASSERT_EQ(f.size(), 3u);
  for (double v : f) EXPECT_EQ(v, 1.0);
}

TEST(Normalization, IdempotentAtUnitScale) {
  auto d = collect(default_scene(), 50, 4);
  auto n = d;
  for (auto& r : n.records) r.raw = r.normalized;
  auto again = n;
  apply_normalization(again, 1.0);
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_EQ(again.records[i].normalized, n.records[i].normalized);
  EXPECT_THROW(apply_normalization(d, 0.0), InvalidArgument);
}

TEST(Targets, UniformInRange) {
  const auto t = generate_targets(48000, 0.0, 0.6, 77);
  double sum = 0;
  for (const auto& v : t.targets)
    for (double x : v) {
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 0.6);
      sum += x;
    }
  const double mean = sum / 144000.0;
  EXPECT_LT(std::abs(mean - 0.3), 0.6 / std::sqrt(12.0 * 144000.0) * 4.0);
  EXPECT_EQ(t, generate_targets(48000, 0.0, 0.6, 77));
}

TEST(Targets, DegenerateIntervalAndErrors) {
  const auto t = generate_targets(5, 0.3, 0.3 + 1e-9, 1);
  for (const auto& v : t.targets)
    for (double x : v) EXPECT_NEAR(x, 0.3, 1e-9);
  EXPECT_THROW(generate_targets(5, 0.6, 0.6, 1), InvalidArgument);
  EXPECT_THROW(generate_targets(0, 0.0, 0.6, 1), InvalidArgument);
}

TEST(Persistence, DatasetRoundTrip) {
  const auto d = collect(default_scene(), 37, 8);
  const auto path = temp_path("ds.jsonl");
  save_dataset(d, path);
  EXPECT_EQ(read_lines(path).size(), 38u);
  EXPECT_EQ(load_dataset(path), d);
  std::filesystem::remove(path);
}

TEST(Persistence, TargetRoundTrip) {
  const auto t = generate_targets(25, 0.0, 0.6, 8);
  const auto path = temp_path("targets.jsonl");
  save_targets(t, path);
  EXPECT_EQ(load_targets(path), t);
  std::filesystem::remove(path);
}

TEST(Persistence, TruncatedFileNamesLine) {
  const auto d = collect(default_scene(), 10, 8);
  const auto path = temp_path("trunc.jsonl");
  save_dataset(d, path);
  auto lines = read_lines(path);
  lines.resize(6);
  write_lines(path, lines);
  try {
    load_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
  }
  lines[3] = lines[3].substr(0, lines[3].size() / 2);
  write_lines(path, lines);
  try {
    load_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  std::filesystem::remove(path);
}

TEST(Persistence, WrongColumnCountRejected) {
  auto d = collect(default_scene(), 5, 8);
  d.records[2].profile.pop_back();
  const auto path = temp_path("short.jsonl");
  save_dataset(d, path);
  const Scene s;
  EXPECT_THROW(load_dataset(path, &s), ValidationError);
  std::filesystem::remove(path);
}

TEST(Persistence, DigestMismatchWarns) {
  const auto d = collect(default_scene(), 5, 8);
  const auto path = temp_path("digest.jsonl");
  save_dataset(d, path);
  const Scene other = default_obstacle_scene();
  std::vector<std::string> warnings;
  const auto loaded = load_dataset(path, &other, [&](const std::string& m) { warnings.push_back(m); });
  EXPECT_EQ(loaded, d);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("scene digest"), std::string::npos);
  warnings.clear();
  const Scene same;
  load_dataset(path, &same, [&](const std::string& m) { warnings.push_back(m); });
  EXPECT_TRUE(warnings.empty());
  std::filesystem::remove(path);
}

TEST(Persistence, TargetOutOfRangeRejected) {
  auto t = generate_targets(5, 0.0, 0.6, 8);
  t.targets[1][0] = 0.7;
  const auto path = temp_path("badtargets.jsonl");
  save_targets(t, path);
  EXPECT_THROW(load_targets(path), ValidationError);
  std::filesystem::remove(path);
}
