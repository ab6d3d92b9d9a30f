#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace marecg::ontology {

// Curated 40-node cardiac concept graph: five root families plus 35 leaf
// concepts, joined by taxonomic edges, within-family shortcuts, and a 5-cycle
// over the roots. The node enumeration is frozen; it is part of the model
// contract (the primary-positive rule keys off it).

inline constexpr int kNodeCount = 40;
inline constexpr int kRootCount = 5;
inline constexpr int kLeafCount = 35;
inline constexpr int kFirstLeaf = 5;

enum class EdgeKind { IsA, SubHierarchy, Sibling, Ring };

const char* edge_kind_name(EdgeKind k);
std::optional<EdgeKind> edge_kind_from(const std::string& s);

struct Node {
    int index = 0;
    std::string abbr;
    std::string name;
    bool is_root = false;
    int parent = 0;  // parent root index; roots point at themselves
};

struct Edge {
    EdgeKind kind;
    int a;
    int b;
};

struct ConceptGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;                    // canonical order: kind, then (a,b)
    std::vector<std::uint8_t> adjacency;        // n*n binary, symmetric, zero diagonal
    std::vector<double> normalized_adjacency;   // D^{-1/2} (A+I) D^{-1/2}
    int n = 0;

    std::uint8_t adj(int i, int j) const { return adjacency[static_cast<std::size_t>(i) * n + j]; }
    double norm_adj(int i, int j) const {
        return normalized_adjacency[static_cast<std::size_t>(i) * n + j];
    }
    bool is_leaf(int i) const { return !nodes[static_cast<std::size_t>(i)].is_root; }
    std::size_t edge_count() const { return edges.size(); }
    std::size_t edge_count(EdgeKind k) const;
};

// Unweighted shortest-path distances. Unreachable pairs are clamped to
// (max finite distance) + 1; this does not occur on the curated graph.
struct TreeDistance {
    std::vector<int> d;  // n*n
    int n = 0;
    int max_entry = 0;

    int at(int i, int j) const { return d[static_cast<std::size_t>(i) * n + j]; }
};

struct GraphError {
    std::string message;
    int line = 0;  // 1-based line in the data file when applicable
};

class graph_parse_error : public std::runtime_error {
public:
    explicit graph_parse_error(const GraphError& e)
        : std::runtime_error(e.message + (e.line ? " (line " + std::to_string(e.line) + ")" : "")),
          detail(e) {}
    GraphError detail;
};

// The compiled-in canonical graph.
const ConceptGraph& build_graph();

std::vector<double> normalize_adjacency(const std::vector<std::uint8_t>& a, int n);

TreeDistance tree_distance(const std::vector<std::uint8_t>& a, int n);        // BFS per source
TreeDistance floyd_warshall_distance(const std::vector<std::uint8_t>& a, int n);  // audit oracle

// Histogram of distances from node c: counts[k] = #{c' : D(c,c') = k}, summing to n.
std::vector<int> distance_profile(const TreeDistance& d, int c);

// Line-oriented text format:
//   N <idx> <root|leaf> <parent> <abbr> <name...>
//   E <kind> <i> <j>
// Nodes ordered by index, edges by kind then endpoints; '#' starts a comment.
std::string export_graph(const ConceptGraph& g);
ConceptGraph parse_graph(const std::string& text);  // throws graph_parse_error

std::string export_dtree_csv(const TreeDistance& d);

}  // namespace marecg::ontology
