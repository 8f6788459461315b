// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tokshift/dump.hpp"

using namespace tokshift;

namespace {

const char* kHeader = R"({"meta":{"vocab_size":4,"a_name":"base","b_name":"rl","top_p":1.0,"temperature":1.0}})";

LogprobDump parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dump(in);
}

std::string rec(const std::string& seq, int pos, int sampled, const std::string& a, const std::string& b) {
  return R"({"seq_id":")" + seq + R"(","pos":)" + std::to_string(pos) + R"(,"sampled":)" +
         std::to_string(sampled) + R"(,"a_top":)" + a + R"(,"b_top":)" + b + "}";
}

template <class E>
std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const E& e) {
    return e.line();
  }
  ADD_FAILURE() << "expected error";
  return 0;
}

}  // namespace

TEST(Dump, WellFormedTwoRecords) {
  const auto d = parse(std::string(kHeader) + "\n" +
                       rec("s", 0, 1, "[[1,-0.5],[0,-1.5]]", "[[1,-0.1]]") + "\n" +
                       rec("s", 1, 0, "[[0,-0.2]]", "[[2,-0.3],[0,-2.0]]") + "\n");
  ASSERT_EQ(d.records.size(), 2u);
  EXPECT_EQ(d.meta.vocab_size, 4u);
  EXPECT_EQ(d.meta.a_name, "base");
  EXPECT_EQ(d.records[1].b_top[0].id, 2u);
  const auto trajs = d.trajectories();
  ASSERT_EQ(trajs.size(), 1u);
  EXPECT_EQ(trajs[0].response, (std::vector<TokenId>{1, 0}));
}

TEST(Dump, AscendingLogprobIsSchemaError) {
  const auto text = std::string(kHeader) + "\n" + rec("s", 0, 1, "[[1,-1.5],[0,-0.5]]", "[[1,-0.1]]");
  EXPECT_EQ(error_line<SchemaError>(text), 2u);
}

TEST(Dump, MassAboveOneIsSchemaError) {
  const auto text = std::string(kHeader) + "\n" + rec("s", 0, 1, "[[1,-0.1],[0,-0.2]]", "[[1,-0.1]]");
  EXPECT_EQ(error_line<SchemaError>(text), 2u);
}

TEST(Dump, MalformedLinesReportLine) {
  EXPECT_EQ(error_line<ParseError>(std::string(kHeader) + "\n\n{not json"), 3u);
  EXPECT_EQ(error_line<ParseError>(std::string(kHeader) + "\n" + R"({"seq_id":"s","pos":0})"), 2u);
  EXPECT_EQ(error_line<ParseError>(R"({"x":1})"), 1u);
  EXPECT_THROW(parse(""), ParseError);
}

TEST(Dump, SchemaViolations) {
  const std::string h = std::string(kHeader) + "\n";
  EXPECT_THROW(parse(h + rec("s", 0, 7, "[[1,-0.1]]", "[[1,-0.1]]")), SchemaError);    // sampled >= V
  EXPECT_THROW(parse(h + rec("s", 0, 1, "[[9,-0.1]]", "[[1,-0.1]]")), SchemaError);    // id >= V
  EXPECT_THROW(parse(h + rec("s", 0, 1, "[[1,-0.5],[1,-0.9]]", "[[1,-0.1]]")), SchemaError);
  EXPECT_THROW(parse(h + rec("s", 0, 1, "[]", "[[1,-0.1]]")), SchemaError);
  EXPECT_THROW(parse(h + rec("s", 1, 1, "[[1,-0.1]]", "[[1,-0.1]]")), SchemaError);    // pos gap
}

TEST(Dump, LoadMissingFile) {
  try {
    load_dump("/nonexistent/dump.jsonl");
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dump.jsonl"), std::string::npos);
  }
}

TEST(Replay, RenormalizesStoredTopK) {
  const auto d = parse(std::string(kHeader) + "\n" +
                       rec("s", 0, 1, "[[1,-0.5],[0,-1.5]]", "[[1,0.0]]") + "\n" +
                       rec("s", 1, 0, "[[0,-0.2]]", "[[2,-0.3],[0,-2.0]]"));
  const auto [a, b] = dump_as_policies(d);
  const auto p0 = a->next_dist({"s", {}});
  const double z = std::exp(-0.5) + std::exp(-1.5);
  EXPECT_NEAR(p0.prob(1), std::exp(-0.5) / z, 1e-12);
  EXPECT_NEAR(p0.prob(0), std::exp(-1.5) / z, 1e-12);
  EXPECT_EQ(b->next_dist({"s", {}}), Distribution::point_mass(1, 4));
  EXPECT_EQ(b->next_dist({"s", {1}}).size(), 2u);
}

TEST(Replay, OffTrajectoryThrows) {
  const auto d = parse(std::string(kHeader) + "\n" + rec("s", 0, 1, "[[1,-0.5]]", "[[1,-0.5]]") + "\n" +
                       rec("s", 1, 0, "[[0,-0.2]]", "[[0,-0.2]]"));
  const auto [a, b] = dump_as_policies(d);
  EXPECT_THROW(a->next_dist({"s", {2}}), PrefixNotRecorded);
  EXPECT_THROW(a->next_dist({"s", {1, 0}}), PrefixNotRecorded);
  EXPECT_THROW(a->next_dist({"t", {}}), PrefixNotRecorded);
}

TEST(Replay, RoundTripReproducesLogprobs) {
  ToyPolicySpec s;
  s.vocab_size = 6;
  s.seed = 12;
  const auto pair = make_toy_pair(s, 0.5);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 5; ++i) trajs.push_back(sample_trajectory(*pair.rl, {10, {}}, i, {}, "q" + std::to_string(i)));
  const auto dump = make_dump(*pair.base, *pair.rl, trajs, {});
  std::ostringstream os;
  write_dump(os, dump);
  const auto back = parse(os.str());
  ASSERT_EQ(back.records.size(), 50u);
  const auto [a, b] = dump_as_policies(back);
  for (const auto& t : trajs) {
    for (std::size_t pos = 0; pos < t.response.size(); ++pos) {
      const auto prefix = t.prefix_at(pos);
      const auto want_a = pair.base->next_dist(prefix), got_a = a->next_dist(prefix);
      const auto want_b = pair.rl->next_dist(prefix), got_b = b->next_dist(prefix);
      for (TokenId k = 0; k < 6; ++k) {
        EXPECT_NEAR(got_a.prob(k), want_a.prob(k), 1e-9);
        EXPECT_NEAR(got_b.prob(k), want_b.prob(k), 1e-9);
      }
    }
  }
}
