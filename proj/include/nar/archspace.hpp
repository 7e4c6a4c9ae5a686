#pragma once

// Search-space definition: operator vocabulary, skip topology, the
// architecture vector encoding and its text/JSON forms.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

namespace nar {

using BigInt = boost::multiprecision::cpp_int;

// One entry per candidate edge, 0 or 1.
using SkipMask = std::vector<std::uint8_t>;

struct OperatorDesc {
  std::string name;
  bool parametric = true;

  bool operator==(const OperatorDesc&) const = default;
};

class OperatorVocabulary {
 public:
  // Throws std::invalid_argument on fewer than 2 entries or duplicate names.
  explicit OperatorVocabulary(std::vector<OperatorDesc> entries);

  // conv3x3, conv5x5, depthwise3x3, depthwise5x5, max3x3, avg3x3.
  static OperatorVocabulary default_six();
  // conv3x3, depthwise3x3, max3x3, avg3x3 (indices 0..3).
  static OperatorVocabulary face_four();

  int size() const { return static_cast<int>(entries_.size()); }
  const OperatorDesc& operator[](int k) const { return entries_.at(static_cast<std::size_t>(k)); }
  const std::vector<OperatorDesc>& entries() const { return entries_; }

  bool operator==(const OperatorVocabulary&) const = default;

 private:
  std::vector<OperatorDesc> entries_;
};

// A candidate skip edge from node `t` into node `j`. Both 1-indexed, t <= j-2.
struct SkipEdge {
  int t = 0;
  int j = 0;

  bool operator==(const SkipEdge&) const = default;
};

struct SkipTopology {
  int n_nodes = 0;
  // Ordered by (j, t) ascending; this is the canonical decision order.
  std::vector<SkipEdge> edges;

  int edge_count() const { return static_cast<int>(edges.size()); }
  // Index of the first edge entering node j (1-indexed) and how many there are.
  int first_edge_of(int j) const;
  int edges_into(int j) const { return j >= 3 ? j - 2 : 0; }
};

SkipTopology candidate_edges(int n_nodes);

class SearchSpaceSpec {
 public:
  SearchSpaceSpec(OperatorVocabulary vocab, int n_nodes,
                  std::optional<SkipMask> frozen_skips = std::nullopt);

  const OperatorVocabulary& vocab() const { return vocab_; }
  const SkipTopology& topology() const { return topology_; }
  const std::optional<SkipMask>& frozen_skips() const { return frozen_skips_; }

  int n_nodes() const { return topology_.n_nodes; }
  int num_ops() const { return vocab_.size(); }
  int edge_count() const { return topology_.edge_count(); }
  bool fixed_skip() const { return frozen_skips_.has_value(); }

  // Same vocabulary and nodes, different (or no) frozen mask.
  SearchSpaceSpec with_frozen(std::optional<SkipMask> mask) const;

 private:
  OperatorVocabulary vocab_;
  SkipTopology topology_;
  std::optional<SkipMask> frozen_skips_;
};

struct ArchitectureVector {
  std::vector<int> ops;
  SkipMask skips;

  bool operator==(const ArchitectureVector&) const = default;
  // Lexicographic over the canonical decision sequence (node-major).
  bool canonical_less(const ArchitectureVector& other, const SkipTopology& topo) const;
};

struct Cardinality {
  BigInt operator_count;
  BigInt skip_count;

  BigInt total() const { return operator_count * skip_count; }
};

Cardinality cardinality(const SearchSpaceSpec& spec);

class ArchParseError : public std::runtime_error {
 public:
  enum class Kind { Malformed, IndexOutOfRange, LengthMismatch };

  ArchParseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Parses "[i0,i1,...]". Whitespace between tokens is tolerated. Index range is
// checked before length. Skips come from the frozen mask (all zero if none).
ArchitectureVector parse_arch_vector(std::string_view text, const SearchSpaceSpec& spec);
std::string serialize_arch_vector(const ArchitectureVector& arch);

// Ops text plus skip hex, "[0,1,2]|2a"; the hex part is omitted when there
// are no candidate edges. Used in CSV outputs.
std::string arch_key(const ArchitectureVector& arch);

std::vector<std::string> validate(const ArchitectureVector& arch, const SearchSpaceSpec& spec);

// Throws std::invalid_argument listing every violation.
void require_valid(const ArchitectureVector& arch, const SearchSpaceSpec& spec);

// Skip bit i lives in byte i/8 at bit i%8; bytes are written in order as two
// lowercase hex digits each.
std::string skips_to_hex(const SkipMask& skips);
SkipMask skips_from_hex(std::string_view hex, int edge_count);

// Edges (t, t+block) for t = 1, 1+block, ... : identity shortcuts around
// consecutive blocks, as in residual networks.
SkipMask residual_skips(const SkipTopology& topo, int block = 2);

// Fraction of candidate edges that are set; 0 when there are none.
double skip_density(const ArchitectureVector& arch);

nlohmann::json to_json(const SearchSpaceSpec& spec);
// Accepts "operators" as a list of {name, parametric} or a preset name
// ("default6", "face4"). Throws std::invalid_argument on schema errors.
SearchSpaceSpec space_from_json(const nlohmann::json& j);

}  // namespace nar
