#include <gtest/gtest.h>

#include "nar/archspace.hpp"
#include "test_util.hpp"

using namespace nar;
using nar::testing::space;

TEST(CandidateEdges, SmallCounts) {
  EXPECT_EQ(candidate_edges(1).edge_count(), 0);
  EXPECT_EQ(candidate_edges(2).edge_count(), 0);
  EXPECT_EQ(candidate_edges(12).edge_count(), 55);
}

TEST(CandidateEdges, FourNodesInCanonicalOrder) {
  const auto t = candidate_edges(4);
  const std::vector<SkipEdge> expected{{1, 3}, {1, 4}, {2, 4}};
  EXPECT_EQ(t.edges, expected);
  EXPECT_EQ(t.first_edge_of(3), 0);
  EXPECT_EQ(t.first_edge_of(4), 1);
  EXPECT_EQ(t.edges_into(4), 2);
}

TEST(CandidateEdges, ClosedFormForAllSmallN) {
  for (int n = 1; n <= 40; ++n) {
    const auto t = candidate_edges(n);
    EXPECT_EQ(t.edge_count(), (n - 1) * (n - 2) / 2) << n;
    for (std::size_t e = 1; e < t.edges.size(); ++e) {
      const auto& a = t.edges[e - 1];
      const auto& b = t.edges[e];
      EXPECT_TRUE(a.j < b.j || (a.j == b.j && a.t < b.t));
    }
    for (const auto& e : t.edges) EXPECT_TRUE(e.t >= 1 && e.t <= e.j - 2 && e.j <= n);
  }
}

TEST(CandidateEdges, RejectsZeroNodes) { EXPECT_THROW(candidate_edges(0), std::invalid_argument); }

TEST(Cardinality, TwelveNodesSixOps) {
  const SearchSpaceSpec s(OperatorVocabulary::default_six(), 12);
  const auto c = cardinality(s);
  EXPECT_EQ(c.operator_count, BigInt("2176782336"));
  EXPECT_EQ(c.skip_count, BigInt("36028797018963968"));
  // Order of magnitude of the operator space: 2e9; skip space rounds to 4e16.
  EXPECT_EQ(c.operator_count.str().size(), 10u);
  EXPECT_EQ(c.skip_count / BigInt("1000000000000000"), 36);
}

TEST(Cardinality, SingleNode) {
  const auto c = cardinality(space(1, 5));
  EXPECT_EQ(c.operator_count, 5);
  EXPECT_EQ(c.skip_count, 1);
}

TEST(Cardinality, FixedSkipHasOneSkipPattern) {
  const auto s = space(6, 4);
  const auto fixed = s.with_frozen(residual_skips(s.topology()));
  EXPECT_EQ(cardinality(fixed).skip_count, 1);
  EXPECT_EQ(cardinality(fixed).total(), 4096);
}

TEST(Cardinality, ExactBeyondDouble) {
  const auto c = cardinality(space(60, 7));
  BigInt pow7 = 1, pow2 = 1;
  for (int i = 0; i < 60; ++i) pow7 *= 7;
  for (int i = 0; i < 59 * 58 / 2; ++i) pow2 *= 2;
  EXPECT_EQ(c.operator_count, pow7);
  EXPECT_EQ(c.skip_count, pow2);
}

TEST(Vocabulary, Validation) {
  EXPECT_THROW(OperatorVocabulary({{"a", true}}), std::invalid_argument);
  EXPECT_THROW(OperatorVocabulary({{"a", true}, {"a", false}}), std::invalid_argument);
  EXPECT_EQ(OperatorVocabulary::default_six().size(), 6);
  const auto f = OperatorVocabulary::face_four();
  ASSERT_EQ(f.size(), 4);
  EXPECT_TRUE(f[0].parametric);
  EXPECT_TRUE(f[1].parametric);
  EXPECT_FALSE(f[2].parametric);
  EXPECT_FALSE(f[3].parametric);
}

TEST(Parse, TableFormatRows) {
  const SearchSpaceSpec s(OperatorVocabulary::face_four(), 8);
  const auto base = parse_arch_vector("[0,0,0,0,0,0,0,0]", s);
  EXPECT_EQ(base.ops, std::vector<int>(8, 0));
  const auto refined = parse_arch_vector("[1,0,0,0,0,0,0,0]", s);
  EXPECT_EQ(refined.ops[0], 1);
  EXPECT_EQ(refined.skips, SkipMask(21, 0));
}

TEST(Parse, SkipsComeFromFrozenMask) {
  const auto s = space(4, 4);
  const auto fixed = s.with_frozen(SkipMask{1, 0, 1});
  EXPECT_EQ(parse_arch_vector("[0,1,2,3]", fixed).skips, (SkipMask{1, 0, 1}));
}

TEST(Parse, WhitespaceTolerated) {
  EXPECT_EQ(parse_arch_vector(" [ 0 , 1,2 ,3 ] ", space(4, 4)).ops, (std::vector<int>{0, 1, 2, 3}));
}

namespace {

ArchParseError::Kind parse_error_kind(const std::string& text, const SearchSpaceSpec& s) {
  try {
    parse_arch_vector(text, s);
  } catch (const ArchParseError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << text;
  return ArchParseError::Kind::Malformed;
}

}  // namespace

TEST(Parse, DistinctErrors) {
  const auto s = space(2, 4);
  EXPECT_EQ(parse_error_kind("[0,7]", s), ArchParseError::Kind::IndexOutOfRange);
  EXPECT_EQ(parse_error_kind("[0,1,2]", s), ArchParseError::Kind::LengthMismatch);
  EXPECT_EQ(parse_error_kind("[0,1", s), ArchParseError::Kind::Malformed);
  EXPECT_EQ(parse_error_kind("0,1]", s), ArchParseError::Kind::Malformed);
  EXPECT_EQ(parse_error_kind("[0,,1]", s), ArchParseError::Kind::Malformed);
  EXPECT_EQ(parse_error_kind("[0,-1]", s), ArchParseError::Kind::IndexOutOfRange);
  EXPECT_EQ(parse_error_kind("[0,1]x", s), ArchParseError::Kind::Malformed);
}

TEST(Serialize, Format) {
  EXPECT_EQ(serialize_arch_vector({{0, 0, 0}, {0}}), "[0,0,0]");
  EXPECT_EQ(serialize_arch_vector({{0, 1, 2, 3}, {}}), "[0,1,2,3]");
}

TEST(Serialize, RoundTripProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + rng.below(24);
    const int k = 2 + rng.below(7);
    const auto s = space(n, k);
    const auto a = nar::testing::random_arch(s, rng);
    const auto b = parse_arch_vector(serialize_arch_vector(a), s);
    ASSERT_EQ(a.ops, b.ops);
  }
}

TEST(Validate, Violations) {
  const auto s = space(4, 4);
  EXPECT_TRUE(validate({{0, 1, 2, 3}, {1, 0, 1}}, s).empty());

  auto v = validate({{0, 1, 2, 3}, {1, 0, 1, 1}}, s);
  ASSERT_FALSE(v.empty());
  bool illegal = false;
  for (const auto& m : v) illegal = illegal || m.find("illegal edge") != std::string::npos;
  EXPECT_TRUE(illegal);

  EXPECT_FALSE(validate({{0, 4, 2, 3}, {0, 0, 0}}, s).empty());
  EXPECT_FALSE(validate({{0, 1, 2}, {0, 0, 0}}, s).empty());
  EXPECT_FALSE(validate({{0, 1, 2, 3}, {0, 2, 0}}, s).empty());

  const auto fixed = s.with_frozen(SkipMask{1, 0, 0});
  EXPECT_TRUE(validate({{0, 1, 2, 3}, {1, 0, 0}}, fixed).empty());
  EXPECT_FALSE(validate({{0, 1, 2, 3}, {1, 1, 0}}, fixed).empty());
  EXPECT_THROW(require_valid({{0, 1, 2, 3}, {1, 1, 0}}, fixed), std::invalid_argument);
}

TEST(Validate, ReportsEveryViolation) {
  const auto s = space(4, 4);
  const auto v = validate({{9, 1, 2, 3}, {1, 0, 1, 1}}, s);
  EXPECT_GE(v.size(), 2u);
}

TEST(SkipHex, BitLayout) {
  SkipMask m(10, 0);
  m[0] = 1;
  m[3] = 1;
  m[9] = 1;
  EXPECT_EQ(skips_to_hex(m), "0902");
  EXPECT_EQ(skips_from_hex("0902", 10), m);
  EXPECT_EQ(skips_to_hex({}), "");
  EXPECT_THROW(skips_from_hex("0906", 10), std::invalid_argument);  // padding bit
  EXPECT_THROW(skips_from_hex("09", 10), std::invalid_argument);
  EXPECT_THROW(skips_from_hex("0g02", 10), std::invalid_argument);
}

TEST(SkipHex, RoundTrip) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    SkipMask m(static_cast<std::size_t>(rng.below(70)));
    for (auto& b : m) b = static_cast<std::uint8_t>(rng.below(2));
    EXPECT_EQ(skips_from_hex(skips_to_hex(m), static_cast<int>(m.size())), m);
  }
}

TEST(Residual, IdentityShortcuts) {
  const auto t = candidate_edges(6);
  const auto m = residual_skips(t);
  for (std::size_t e = 0; e < t.edges.size(); ++e) {
    const bool expect = t.edges[e].j == t.edges[e].t + 2 && t.edges[e].t % 2 == 1;
    EXPECT_EQ(m[e] != 0, expect);
  }
  EXPECT_DOUBLE_EQ(skip_density({{}, m}), 0.2);
}

TEST(SkipDensity, NoEdges) { EXPECT_EQ(skip_density({{0, 1}, {}}), 0.0); }

TEST(CanonicalOrder, OperatorBeforeItsSkips) {
  const auto t = candidate_edges(4);
  // Decision sequence: O1, O2, O3, S13, O4, S14, S24.
  const ArchitectureVector a{{0, 0, 1, 0}, {0, 0, 0}};
  const ArchitectureVector b{{0, 0, 0, 1}, {1, 0, 0}};
  EXPECT_TRUE(b.canonical_less(a, t));  // O3 decides first
  const ArchitectureVector c{{0, 0, 0, 1}, {0, 0, 0}};
  EXPECT_TRUE(c.canonical_less(b, t));  // S13 before O4
}

TEST(SpaceJson, RoundTripAndPresets) {
  const auto s = space_from_json({{"n_nodes", 5}, {"operators", "face4"}, {"frozen_skips", "residual"}});
  EXPECT_EQ(s.num_ops(), 4);
  EXPECT_TRUE(s.fixed_skip());
  const auto again = space_from_json(to_json(s));
  EXPECT_EQ(again.vocab(), s.vocab());
  EXPECT_EQ(again.frozen_skips(), s.frozen_skips());

  const auto custom = space_from_json(
      {{"n_nodes", 3}, {"operators", {{{"name", "a"}, {"parametric", true}}, {{"name", "b"}, {"parametric", false}}}},
       {"frozen_skips", nullptr}});
  EXPECT_FALSE(custom.fixed_skip());
  EXPECT_FALSE(custom.vocab()[1].parametric);

  EXPECT_THROW(space_from_json({{"operators", "face4"}}), std::invalid_argument);
  EXPECT_THROW(space_from_json({{"n_nodes", 4}, {"operators", "nope"}}), std::invalid_argument);
  EXPECT_THROW(space_from_json({{"n_nodes", 4}, {"frozen_skips", "ff"}}), std::invalid_argument);
}

TEST(ArchKey, Format) {
  EXPECT_EQ(arch_key({{0, 1, 2, 3}, {1, 0, 1}}), "[0,1,2,3]|05");
  EXPECT_EQ(arch_key({{0, 1}, {}}), "[0,1]");
}
