#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bbp/bench/cli.hpp"

using namespace bbp;
using namespace bbp::bench;

namespace {

struct Outcome {
  int status = 0;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.status = bench_main(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  return parts;
}

std::vector<std::vector<std::string>> rows(const std::string& csv) {
  std::vector<std::vector<std::string>> r;
  for (const auto& line : split(csv, '\n')) {
    if (!line.empty()) r.push_back(split(line, ','));
  }
  return r;
}

const std::vector<std::string> kColumns{"kit",       "region",        "loops",     "stack",       "mmat",
                                        "seed",      "t_init_ms",     "t_proc_ms", "t_fin_ms",    "env_searches",
                                        "mmat_hits", "pages_fetched", "reexecs",   "messages",    "pool_used_b",
                                        "pool_free_b", "checksum"};

std::size_t col(const std::string& name) {
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (kColumns[i] == name) return i;
  }
  return kColumns.size() + 1;
}

}  // namespace

TEST(ParseLayers, Forms) {
  EXPECT_EQ(parse_layers("").describe(), "serial");
  EXPECT_EQ(parse_layers("serial").describe(), "serial");
  EXPECT_EQ(parse_layers("mp:2,sm:4").describe(), "mp:2,sm:4");
  EXPECT_EQ(parse_layers("mp:2+sm:4").describe(), "mp:2,sm:4");
  EXPECT_THROW(parse_layers("sm:2,mp:2"), Error);
  EXPECT_THROW(parse_layers("gpu:2"), Error);
  EXPECT_THROW(parse_layers("sm:x"), Error);
  const auto r = parse_region("640x480");
  EXPECT_EQ(r.first, 640);
  EXPECT_EQ(r.second, 480);
  EXPECT_THROW(parse_region("640"), Error);
}

TEST(CmdRun, SerialVerify) {
  const auto o = cli({"run", "--kit", "sgrid", "--region", "256x256", "--loops", "3", "--verify"});
  EXPECT_EQ(o.status, 0) << o.err;
  const auto r = rows(o.out);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], kColumns);
  ASSERT_EQ(r[1].size(), kColumns.size());
  EXPECT_EQ(r[1][col("kit")], "sgrid");
  EXPECT_EQ(r[1][col("region")], "256x256");
  EXPECT_EQ(r[1][col("stack")], "serial");
  EXPECT_EQ(r[1][col("checksum")].size(), 16u);
  EXPECT_NE(o.err.find("verify: ok"), std::string::npos);
}

TEST(CmdRun, TwoRankVerifyFetchesPages) {
  const auto o = cli({"run", "--kit", "sgrid", "--region", "512x512", "--loops", "2", "--layers", "mp:2", "--verify"});
  EXPECT_EQ(o.status, 0) << o.err;
  const auto r = rows(o.out);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_GT(std::stoull(r[1][col("pages_fetched")]), 0u);
  EXPECT_GT(std::stoull(r[1][col("messages")]), 0u);
}

TEST(CmdRun, NonDivisibleRegionFails) {
  const auto o = cli({"run", "--kit", "sgrid", "--region", "300x300"});
  EXPECT_NE(o.status, 0);
  EXPECT_NE(o.err.find("InvalidGeometry"), std::string::npos) << o.err;
}

TEST(CmdRun, BadOptionsFail) {
  EXPECT_EQ(cli({"run", "--kit", "fem"}).status, 2);
  EXPECT_EQ(cli({"run", "--mmat", "maybe"}).status, 2);
  EXPECT_EQ(cli({}).status, 2);
  EXPECT_EQ(cli({"--help"}).status, 0);
  EXPECT_NE(cli({"run", "--layers", "sm:2,mp:2", "--region", "256x256"}).status, 0);
}

TEST(CmdRun, ConfigFileWithFlagOverride) {
  const auto path = std::filesystem::temp_directory_path() / "bench_test_config.txt";
  {
    std::ofstream f(path);
    f << "kit=usgrid-c\nregion=256x256\nloops=2\nmmat=on\nseed=9\n";
  }
  const auto o = cli({"run", "--config", path.string(), "--loops", "3"});
  std::filesystem::remove(path);
  EXPECT_EQ(o.status, 0) << o.err;
  const auto r = rows(o.out);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1][col("kit")], "usgrid-c");
  EXPECT_EQ(r[1][col("loops")], "3");
  EXPECT_EQ(r[1][col("mmat")], "on");
  EXPECT_EQ(r[1][col("seed")], "9");
}

TEST(CmdRun, CsvToFile) {
  const auto path = std::filesystem::temp_directory_path() / "bench_test_out.csv";
  const auto o = cli({"run", "--region", "256x256", "--loops", "1", "--csv", path.string()});
  EXPECT_EQ(o.status, 0);
  EXPECT_TRUE(o.out.empty());
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::filesystem::remove(path);
  EXPECT_EQ(rows(ss.str()).size(), 2u);
}

TEST(CmdRun, CountersAreDeterministic) {
  const std::vector<std::string> args{"run", "--kit", "usgrid-r", "--region", "256x256", "--loops", "3",
                                      "--layers", "mp:2,sm:2", "--mmat", "on"};
  const auto a = rows(cli(args).out), b = rows(cli(args).out);
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  ASSERT_EQ(a[1].size(), kColumns.size());
  EXPECT_EQ(a[1][col("stack")], "mp:2+sm:2");
  for (const auto* name : {"env_searches", "mmat_hits", "pages_fetched", "reexecs", "messages", "pool_used_b",
                           "pool_free_b", "checksum"}) {
    EXPECT_EQ(a[1][col(name)], b[1][col(name)]) << name;
  }
}

TEST(CmdOverhead, HandwrittenRowIsHundred) {
  const auto o = cli({"overhead", "--kit", "usgrid-c", "--region", "256x256", "--loops", "2"});
  EXPECT_EQ(o.status, 0) << o.err;
  const auto r = rows(o.out);
  ASSERT_EQ(r.size(), 8u);
  EXPECT_EQ(r[0].back(), "normalized");
  EXPECT_EQ(r[1][col("stack")], "handwritten");
  EXPECT_EQ(r[1].back(), "100.000");
  const std::string checksum = r[1][col("checksum")];
  for (std::size_t i = 1; i < r.size(); ++i) {
    ASSERT_EQ(r[i].size(), kColumns.size() + 1);
    EXPECT_EQ(r[i][col("checksum")], checksum);
  }
  // Rows 2.. alternate mmat off/on per stack.
  for (std::size_t i = 2; i < r.size(); i += 2) {
    EXPECT_EQ(r[i][col("mmat")], "off");
    EXPECT_EQ(r[i + 1][col("mmat")], "on");
    EXPECT_LT(std::stoull(r[i + 1][col("env_searches")]), std::stoull(r[i][col("env_searches")]));
  }
}

TEST(CmdScale, NormalizedToOneTask) {
  const auto strong = rows(cli({"scale", "--kit", "sgrid", "--region", "256x256", "--loops", "1",
                                  "--parallelisms", "1,2"})
                               .out);
  ASSERT_EQ(strong.size(), 5u);
  EXPECT_EQ(strong[1].back(), "1.000");
  EXPECT_EQ(strong[3].back(), "1.000");

  const auto weak = rows(cli({"scale", "--kit", "sgrid", "--region", "256x256", "--loops", "1", "--mode", "weak",
                                "--parallelisms", "1,2"})
                             .out);
  ASSERT_EQ(weak.size(), 5u);
  EXPECT_EQ(weak[1].back(), "100.000");
  EXPECT_EQ(weak[2][col("region")], "256x512");
  EXPECT_GT(std::stoull(weak[4][col("pages_fetched")]), std::stoull(weak[3][col("pages_fetched")]));

  EXPECT_NE(cli({"scale", "--parallelisms", "2,4"}).status, 0);
}
