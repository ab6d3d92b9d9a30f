#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "marecg/ontology/graph.hpp"

namespace marecg::snomed {

using Code = std::int64_t;

// Curated routing pi: SNOMED-CT code -> node set. Every routed set names at
// most one root; leaves and root may appear together (single-morphology and
// localised-lesion regimes) or the root alone (generic NOS regime).
class RoutingTable {
public:
    void add(Code code, std::vector<int> nodes);  // validates against the graph
    std::vector<int> route(Code code) const;      // unknown code -> empty set
    bool contains(Code code) const { return entries_.count(code) != 0; }
    const std::map<Code, std::vector<int>>& entries() const { return entries_; }
    void merge(const RoutingTable& other);  // other wins on conflicts

private:
    std::map<Code, std::vector<int>> entries_;
};

// The nine canonical routing rows: three single-morphology codes, three
// localised lesions, three generic NOS codes.
const RoutingTable& canonical_routing();

// Canonical rows plus the artifact's documented extension codes, which cover
// the concepts the synthetic generator can emit. The extension rows are a
// convenience of this implementation, not published ground truth.
const RoutingTable& default_routing();
const RoutingTable& extension_routing();

// Line format: `R <code> <idx>,<idx>,...`; '#' starts a comment.
std::string export_routing(const RoutingTable& t);
RoutingTable parse_routing(const std::string& text);  // throws ontology::graph_parse_error

struct LeafTarget {
    std::vector<int> active;          // active leaf indices, ascending
    std::optional<int> primary;       // highest-indexed active leaf
    bool root_only = false;           // routed, but only to roots

    bool has_leaf() const { return primary.has_value(); }
    // 35-entry indicator over the leaf enumeration (leaf index - kFirstLeaf).
    std::vector<float> multi_hot() const;
};

enum class PrimaryRule {
    MaxIndex,  // highest-indexed active leaf on the frozen enumeration
    IsADepth,  // depth in the is_a/sub_hierarchy hierarchy, ties by index
};

LeafTarget resolve_codes(const std::vector<Code>& codes, const RoutingTable& table,
                         PrimaryRule rule = PrimaryRule::MaxIndex);

struct SoftTarget {
    std::vector<double> t;  // 40 entries, nonnegative, sums to 1
    double sigma = 1.0;
};

// Tempered softmax of negative tree distance from the primary positive, with
// the unnormalized mass of every active leaf clamped up to at least 1 (the
// mass of the primary itself) before normalization. Refuses targets without
// a primary positive; callers must filter root-only records out of GSCL.
SoftTarget soft_target(const LeafTarget& target, const ontology::TreeDistance& dtree,
                       double sigma = 1.0);

enum class TargetShape { UniformOnActive, UniformOnAll, Intermediate };

// Probes the two temperature limits: near-zero sigma must give the uniform
// distribution over active leaves, near-infinite sigma the uniform over all
// nodes (total variation tolerance `tol`).
TargetShape classify_target_shape(const SoftTarget& st, const LeafTarget& target, double tol = 1e-3);

double total_variation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace marecg::snomed
