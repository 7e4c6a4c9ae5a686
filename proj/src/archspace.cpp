#include "nar/archspace.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

namespace nar {

OperatorVocabulary::OperatorVocabulary(std::vector<OperatorDesc> entries)
    : entries_(std::move(entries)) {
  if (entries_.size() < 2) throw std::invalid_argument("operator vocabulary needs at least 2 entries");
  std::set<std::string> names;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw std::invalid_argument("operator name must be nonempty");
    if (!names.insert(e.name).second) throw std::invalid_argument("duplicate operator name: " + e.name);
  }
}

OperatorVocabulary OperatorVocabulary::default_six() {
  return OperatorVocabulary({{"conv3x3", true},
                             {"conv5x5", true},
                             {"depthwise3x3", true},
                             {"depthwise5x5", true},
                             {"max3x3", false},
                             {"avg3x3", false}});
}

OperatorVocabulary OperatorVocabulary::face_four() {
  return OperatorVocabulary(
      {{"conv3x3", true}, {"depthwise3x3", true}, {"max3x3", false}, {"avg3x3", false}});
}

int SkipTopology::first_edge_of(int j) const {
  // Nodes 3..j-1 contribute 1..j-3 edges.
  if (j < 3) return 0;
  return (j - 3) * (j - 2) / 2;
}

SkipTopology candidate_edges(int n_nodes) {
  if (n_nodes < 1) throw std::invalid_argument("n_nodes must be >= 1");
  SkipTopology topo;
  topo.n_nodes = n_nodes;
  for (int j = 3; j <= n_nodes; ++j)
    for (int t = 1; t <= j - 2; ++t) topo.edges.push_back({t, j});
  return topo;
}

SearchSpaceSpec::SearchSpaceSpec(OperatorVocabulary vocab, int n_nodes,
                                 std::optional<SkipMask> frozen_skips)
    : vocab_(std::move(vocab)), topology_(candidate_edges(n_nodes)), frozen_skips_(std::move(frozen_skips)) {
  if (frozen_skips_) {
    if (static_cast<int>(frozen_skips_->size()) != topology_.edge_count())
      throw std::invalid_argument("frozen_skips length " + std::to_string(frozen_skips_->size()) +
                                  " != candidate edge count " + std::to_string(topology_.edge_count()));
    for (auto b : *frozen_skips_)
      if (b > 1) throw std::invalid_argument("frozen_skips entries must be 0 or 1");
  }
}

SearchSpaceSpec SearchSpaceSpec::with_frozen(std::optional<SkipMask> mask) const {
  return SearchSpaceSpec(vocab_, n_nodes(), std::move(mask));
}

bool ArchitectureVector::canonical_less(const ArchitectureVector& other, const SkipTopology& topo) const {
  for (int j = 1; j <= topo.n_nodes; ++j) {
    const auto a = ops[j - 1], b = other.ops[j - 1];
    if (a != b) return a < b;
    const int first = topo.first_edge_of(j);
    for (int e = first; e < first + topo.edges_into(j); ++e)
      if (skips[e] != other.skips[e]) return skips[e] < other.skips[e];
  }
  return false;
}

Cardinality cardinality(const SearchSpaceSpec& spec) {
  Cardinality c;
  c.operator_count = boost::multiprecision::pow(BigInt(spec.num_ops()), static_cast<unsigned>(spec.n_nodes()));
  c.skip_count = spec.fixed_skip() ? BigInt(1) : BigInt(1) << spec.edge_count();
  return c;
}

ArchitectureVector parse_arch_vector(std::string_view text, const SearchSpaceSpec& spec) {
  using Kind = ArchParseError::Kind;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto malformed = [&](const std::string& why) {
    return ArchParseError(Kind::Malformed, "malformed architecture vector at offset " +
                                               std::to_string(pos) + ": " + why);
  };

  skip_ws();
  if (pos >= text.size() || text[pos] != '[') throw malformed("expected '['");
  ++pos;
  std::vector<int> ops;
  skip_ws();
  if (pos < text.size() && text[pos] == ']') {
    ++pos;
  } else {
    for (;;) {
      skip_ws();
      int value = 0;
      auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
      if (ec != std::errc() || ptr == text.data() + pos) throw malformed("expected integer");
      pos = static_cast<std::size_t>(ptr - text.data());
      ops.push_back(value);
      skip_ws();
      if (pos >= text.size()) throw malformed("unterminated vector");
      if (text[pos] == ',') {
        ++pos;
        continue;
      }
      if (text[pos] == ']') {
        ++pos;
        break;
      }
      throw malformed("expected ',' or ']'");
    }
  }
  skip_ws();
  if (pos != text.size()) throw malformed("trailing characters");

  for (std::size_t i = 0; i < ops.size(); ++i)
    if (ops[i] < 0 || ops[i] >= spec.num_ops())
      throw ArchParseError(Kind::IndexOutOfRange, "operator index " + std::to_string(ops[i]) +
                                                      " at position " + std::to_string(i) +
                                                      " out of range [0," + std::to_string(spec.num_ops()) + ")");
  if (static_cast<int>(ops.size()) != spec.n_nodes())
    throw ArchParseError(Kind::LengthMismatch, "vector length " + std::to_string(ops.size()) + " != n_nodes " +
                                                   std::to_string(spec.n_nodes()));

  ArchitectureVector arch;
  arch.ops = std::move(ops);
  arch.skips = spec.frozen_skips().value_or(SkipMask(static_cast<std::size_t>(spec.edge_count()), 0));
  return arch;
}

std::string serialize_arch_vector(const ArchitectureVector& arch) {
  std::string out = "[";
  for (std::size_t i = 0; i < arch.ops.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(arch.ops[i]);
  }
  out += ']';
  return out;
}

std::string arch_key(const ArchitectureVector& arch) {
  auto s = serialize_arch_vector(arch);
  if (!arch.skips.empty()) s += "|" + skips_to_hex(arch.skips);
  return s;
}

std::vector<std::string> validate(const ArchitectureVector& arch, const SearchSpaceSpec& spec) {
  std::vector<std::string> violations;
  if (static_cast<int>(arch.ops.size()) != spec.n_nodes())
    violations.push_back("ops length " + std::to_string(arch.ops.size()) + " != n_nodes " +
                         std::to_string(spec.n_nodes()));
  for (std::size_t i = 0; i < arch.ops.size(); ++i)
    if (arch.ops[i] < 0 || arch.ops[i] >= spec.num_ops())
      violations.push_back("operator index out of range at node " + std::to_string(i + 1));

  const auto n_edges = static_cast<std::size_t>(spec.edge_count());
  for (std::size_t e = n_edges; e < arch.skips.size(); ++e)
    if (arch.skips[e]) violations.push_back("illegal edge: skip bit " + std::to_string(e) + " is not a candidate edge");
  if (arch.skips.size() < n_edges)
    violations.push_back("skip mask length " + std::to_string(arch.skips.size()) + " < candidate edge count " +
                         std::to_string(n_edges));
  for (std::size_t e = 0; e < std::min(arch.skips.size(), n_edges); ++e)
    if (arch.skips[e] > 1) violations.push_back("skip bit " + std::to_string(e) + " is not 0/1");

  if (spec.frozen_skips()) {
    const auto& frozen = *spec.frozen_skips();
    bool same = arch.skips.size() >= n_edges;
    for (std::size_t e = 0; same && e < n_edges; ++e) same = arch.skips[e] == frozen[e];
    if (!same) violations.push_back("skips differ from frozen skip mask");
  }
  return violations;
}

void require_valid(const ArchitectureVector& arch, const SearchSpaceSpec& spec) {
  auto v = validate(arch, spec);
  if (v.empty()) return;
  std::string msg = "invalid architecture:";
  for (const auto& s : v) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

std::string skips_to_hex(const SkipMask& skips) {
  static constexpr char digits[] = "0123456789abcdef";
  const std::size_t n_bytes = (skips.size() + 7) / 8;
  std::string out;
  out.reserve(n_bytes * 2);
  for (std::size_t b = 0; b < n_bytes; ++b) {
    unsigned byte = 0;
    for (std::size_t bit = 0; bit < 8 && b * 8 + bit < skips.size(); ++bit)
      if (skips[b * 8 + bit]) byte |= 1u << bit;
    out += digits[byte >> 4];
    out += digits[byte & 0xf];
  }
  return out;
}

SkipMask skips_from_hex(std::string_view hex, int edge_count) {
  const auto n_bytes = static_cast<std::size_t>((edge_count + 7) / 8);
  if (hex.size() != n_bytes * 2)
    throw std::invalid_argument("skip hex length " + std::to_string(hex.size()) + " != " +
                                std::to_string(n_bytes * 2) + " for " + std::to_string(edge_count) + " edges");
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    throw std::invalid_argument(std::string("bad hex digit '") + c + "'");
  };
  SkipMask mask(static_cast<std::size_t>(edge_count), 0);
  for (std::size_t b = 0; b < n_bytes; ++b) {
    const unsigned byte = (nibble(hex[2 * b]) << 4) | nibble(hex[2 * b + 1]);
    for (unsigned bit = 0; bit < 8; ++bit) {
      const std::size_t idx = b * 8 + bit;
      const bool set = (byte >> bit) & 1u;
      if (idx < mask.size())
        mask[idx] = set;
      else if (set)
        throw std::invalid_argument("skip hex sets padding bit " + std::to_string(idx));
    }
  }
  return mask;
}

SkipMask residual_skips(const SkipTopology& topo, int block) {
  if (block < 2) throw std::invalid_argument("residual block must span at least 2 nodes");
  SkipMask mask(static_cast<std::size_t>(topo.edge_count()), 0);
  for (int t = 1; t + block <= topo.n_nodes; t += block) {
    const int j = t + block;
    mask[static_cast<std::size_t>(topo.first_edge_of(j) + (t - 1))] = 1;
  }
  return mask;
}

double skip_density(const ArchitectureVector& arch) {
  if (arch.skips.empty()) return 0.0;
  std::size_t set = 0;
  for (auto b : arch.skips) set += b ? 1 : 0;
  return static_cast<double>(set) / static_cast<double>(arch.skips.size());
}

nlohmann::json to_json(const SearchSpaceSpec& spec) {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& e : spec.vocab().entries()) ops.push_back({{"name", e.name}, {"parametric", e.parametric}});
  nlohmann::json j;
  j["n_nodes"] = spec.n_nodes();
  j["operators"] = ops;
  j["frozen_skips"] = spec.frozen_skips() ? nlohmann::json(skips_to_hex(*spec.frozen_skips())) : nlohmann::json();
  return j;
}

SearchSpaceSpec space_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("space: expected object");
  if (!j.contains("n_nodes") || !j["n_nodes"].is_number_integer())
    throw std::invalid_argument("space.n_nodes: required integer");
  const int n = j["n_nodes"].get<int>();
  if (n < 1) throw std::invalid_argument("space.n_nodes: must be >= 1");

  std::optional<OperatorVocabulary> vocab;
  const auto ops = j.value("operators", nlohmann::json("default6"));
  if (ops.is_string()) {
    const auto name = ops.get<std::string>();
    if (name == "default6")
      vocab = OperatorVocabulary::default_six();
    else if (name == "face4")
      vocab = OperatorVocabulary::face_four();
    else
      throw std::invalid_argument("space.operators: unknown preset '" + name + "'");
  } else if (ops.is_array()) {
    std::vector<OperatorDesc> entries;
    for (const auto& o : ops) {
      if (!o.is_object() || !o.contains("name") || !o["name"].is_string())
        throw std::invalid_argument("space.operators: entries need a string 'name'");
      entries.push_back({o["name"].get<std::string>(), o.value("parametric", true)});
    }
    vocab.emplace(std::move(entries));
  } else {
    throw std::invalid_argument("space.operators: expected list or preset name");
  }

  std::optional<SkipMask> frozen;
  const auto topo = candidate_edges(n);
  if (j.contains("frozen_skips") && !j["frozen_skips"].is_null()) {
    const auto& f = j["frozen_skips"];
    if (!f.is_string()) throw std::invalid_argument("space.frozen_skips: expected hex string or null");
    const auto s = f.get<std::string>();
    if (s == "residual")
      frozen = residual_skips(topo);
    else if (s == "none")
      frozen = SkipMask(static_cast<std::size_t>(topo.edge_count()), 0);
    else
      frozen = skips_from_hex(s, topo.edge_count());
  }
  return SearchSpaceSpec(std::move(*vocab), n, std::move(frozen));
}

}  // namespace nar
