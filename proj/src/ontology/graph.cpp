#include "marecg/ontology/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

namespace marecg::ontology {

namespace {

struct NodeRow {
    int index;
    const char* abbr;
    const char* name;
    int parent;  // -1 marks a root
};

// Frozen enumeration. Indices 5-31 are the original family-grouped block
// (parent-then-subtype within each family), 32-39 are later additions kept at
// the tail for index stability.
constexpr NodeRow kNodes[kNodeCount] = {
    {0, "Normal", "Normal", -1},
    {1, "Rhythm", "Rhythm", -1},
    {2, "Conduction", "Conduction", -1},
    {3, "Ischemic", "Ischemic", -1},
    {4, "Structural", "Structural", -1},
    {5, "AF", "Atrial fibrillation", 1},
    {6, "AFL", "Atrial flutter", 1},
    {7, "SVT", "Supraventricular tachycardia", 1},
    {8, "VT", "Ventricular tachycardia", 1},
    {9, "PAC", "Premature atrial contraction", 1},
    {10, "PVC", "Premature ventricular contraction", 1},
    {11, "SBrad", "Sinus bradycardia", 1},
    {12, "STach", "Sinus tachycardia", 1},
    {13, "LBBB", "Left bundle branch block", 2},
    {14, "RBBB", "Right bundle branch block", 2},
    {15, "LAFB", "Left anterior fascicular block", 2},
    {16, "1AVB", "First-degree AV block", 2},
    {17, "2AVB", "Second-degree AV block", 2},
    {18, "3AVB", "Complete AV block", 2},
    {19, "AMI", "Acute myocardial infarction", 3},
    {20, "OMI", "Old myocardial infarction", 3},
    {21, "STE", "ST elevation", 3},
    {22, "STD", "ST depression", 3},
    {23, "TWI", "T-wave inversion", 3},
    {24, "MyIsch", "Myocardial ischaemia", 3},
    {25, "AntMI", "Anterior MI", 3},
    {26, "InfMI", "Inferior MI", 3},
    {27, "LVH", "Left ventricular hypertrophy", 4},
    {28, "RVH", "Right ventricular hypertrophy", 4},
    {29, "LAE", "Left atrial enlargement", 4},
    {30, "RAE", "Right atrial enlargement", 4},
    {31, "LowV", "Low voltage", 4},
    {32, "LongQT", "Prolonged QT interval", 2},
    {33, "NSSTC", "Nonspecific ST-T changes", 3},
    {34, "NSR", "Normal sinus rhythm", 0},
    {35, "EarlyR", "Early repolarisation", 0},
    {36, "SinusA", "Sinus arrhythmia", 0},
    {37, "Paced", "Paced rhythm", 1},
    {38, "WPW", "Wolff-Parkinson-White syndrome", 2},
    {39, "IRBBB", "Incomplete RBBB", 2},
};

// Intra-family subtype edges: anterior/inferior MI specialize acute and old
// MI; the ST/T findings are manifestations of myocardial ischaemia.
constexpr std::pair<int, int> kSubHierarchy[] = {
    {25, 19}, {25, 20}, {26, 19}, {26, 20}, {21, 24}, {22, 24}, {23, 24},
};

// Within-family shortcut edges. The AV-block severity chain contributes two
// pairs (16-17, 17-18).
constexpr std::pair<int, int> kSibling[] = {
    {13, 14}, {16, 17}, {17, 18}, {19, 24}, {25, 26},
    {21, 22}, {27, 29}, {28, 30}, {5, 6},   {8, 10},
};

constexpr std::pair<int, int> kRing[] = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}};

int kind_rank(EdgeKind k) { return static_cast<int>(k); }

void finalize(ConceptGraph& g) {
    g.n = static_cast<int>(g.nodes.size());
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
        if (x.kind != y.kind) return kind_rank(x.kind) < kind_rank(y.kind);
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    g.adjacency.assign(static_cast<std::size_t>(g.n) * g.n, 0);
    for (const Edge& e : g.edges) {
        g.adjacency[static_cast<std::size_t>(e.a) * g.n + e.b] = 1;
        g.adjacency[static_cast<std::size_t>(e.b) * g.n + e.a] = 1;
    }
    g.normalized_adjacency = normalize_adjacency(g.adjacency, g.n);
}

void validate(const ConceptGraph& g) {
    std::set<int> seen;
    int roots = 0;
    for (const Node& nd : g.nodes) {
        if (nd.index < 0 || nd.index >= static_cast<int>(g.nodes.size()))
            throw graph_parse_error({"node index out of range: " + std::to_string(nd.index)});
        if (!seen.insert(nd.index).second)
            throw graph_parse_error({"duplicate node index: " + std::to_string(nd.index)});
        if (nd.is_root) {
            ++roots;
            if (nd.index >= kRootCount)
                throw graph_parse_error({"root at non-root index: " + std::to_string(nd.index)});
        } else {
            if (nd.parent < 0 || nd.parent >= kRootCount)
                throw graph_parse_error({"leaf " + std::to_string(nd.index) + " has invalid parent " +
                                         std::to_string(nd.parent)});
        }
    }
    if (roots != kRootCount)
        throw graph_parse_error({"two-tier partition violated: " + std::to_string(roots) + " roots"});
    for (const Edge& e : g.edges) {
        if (e.a < 0 || e.b < 0 || e.a >= g.n || e.b >= g.n || e.a == e.b)
            throw graph_parse_error({"bad edge " + std::to_string(e.a) + "-" + std::to_string(e.b)});
    }
    // Every leaf carries exactly one is_a edge up to its parent root.
    for (const Node& nd : g.nodes) {
        if (nd.is_root) continue;
        int count = 0;
        for (const Edge& e : g.edges) {
            if (e.kind != EdgeKind::IsA) continue;
            if (e.a == nd.index || e.b == nd.index) {
                int other = e.a == nd.index ? e.b : e.a;
                if (other != nd.parent)
                    throw graph_parse_error({"is_a edge of leaf " + std::to_string(nd.index) +
                                             " does not reach its parent"});
                ++count;
            }
        }
        if (count != 1)
            throw graph_parse_error({"leaf " + std::to_string(nd.index) + " has " +
                                     std::to_string(count) + " is_a edges"});
    }
}

}  // namespace

const char* edge_kind_name(EdgeKind k) {
    switch (k) {
        case EdgeKind::IsA: return "is_a";
        case EdgeKind::SubHierarchy: return "sub_hierarchy";
        case EdgeKind::Sibling: return "sibling";
        case EdgeKind::Ring: return "ring";
    }
    return "?";
}

std::optional<EdgeKind> edge_kind_from(const std::string& s) {
    if (s == "is_a") return EdgeKind::IsA;
    if (s == "sub_hierarchy") return EdgeKind::SubHierarchy;
    if (s == "sibling") return EdgeKind::Sibling;
    if (s == "ring") return EdgeKind::Ring;
    return std::nullopt;
}

std::size_t ConceptGraph::edge_count(EdgeKind k) const {
    std::size_t c = 0;
    for (const Edge& e : edges)
        if (e.kind == k) ++c;
    return c;
}

const ConceptGraph& build_graph() {
    static const ConceptGraph g = [] {
        ConceptGraph gg;
        for (const NodeRow& r : kNodes) {
            Node nd;
            nd.index = r.index;
            nd.abbr = r.abbr;
            nd.name = r.name;
            nd.is_root = r.parent < 0;
            nd.parent = nd.is_root ? r.index : r.parent;
            gg.nodes.push_back(std::move(nd));
        }
        for (const NodeRow& r : kNodes) {
            if (r.parent >= 0) gg.edges.push_back({EdgeKind::IsA, r.index, r.parent});
        }
        for (auto [a, b] : kSubHierarchy) gg.edges.push_back({EdgeKind::SubHierarchy, a, b});
        for (auto [a, b] : kSibling) gg.edges.push_back({EdgeKind::Sibling, a, b});
        for (auto [a, b] : kRing) gg.edges.push_back({EdgeKind::Ring, a, b});
        finalize(gg);
        validate(gg);
        return gg;
    }();
    return g;
}

std::vector<double> normalize_adjacency(const std::vector<std::uint8_t>& a, int n) {
    if (static_cast<int>(a.size()) != n * n) throw std::invalid_argument("adjacency size mismatch");
    for (int i = 0; i < n; ++i) {
        if (a[static_cast<std::size_t>(i) * n + i])
            throw std::invalid_argument("adjacency must have zero diagonal");
        for (int j = 0; j < n; ++j)
            if (a[static_cast<std::size_t>(i) * n + j] != a[static_cast<std::size_t>(j) * n + i])
                throw std::invalid_argument("adjacency must be symmetric");
    }
    // Degrees of A + I; the self-loop keeps isolated nodes well-defined.
    std::vector<double> inv_sqrt_deg(n);
    for (int i = 0; i < n; ++i) {
        int deg = 1;
        for (int j = 0; j < n; ++j) deg += a[static_cast<std::size_t>(i) * n + j];
        inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(deg));
    }
    std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double aij = (i == j) ? 1.0 : static_cast<double>(a[static_cast<std::size_t>(i) * n + j]);
            out[static_cast<std::size_t>(i) * n + j] = inv_sqrt_deg[i] * aij * inv_sqrt_deg[j];
        }
    }
    return out;
}

TreeDistance tree_distance(const std::vector<std::uint8_t>& a, int n) {
    TreeDistance td;
    td.n = n;
    td.d.assign(static_cast<std::size_t>(n) * n, -1);
    for (int src = 0; src < n; ++src) {
        std::deque<int> q;
        q.push_back(src);
        td.d[static_cast<std::size_t>(src) * n + src] = 0;
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            int du = td.d[static_cast<std::size_t>(src) * n + u];
            for (int v = 0; v < n; ++v) {
                if (!a[static_cast<std::size_t>(u) * n + v]) continue;
                if (td.d[static_cast<std::size_t>(src) * n + v] >= 0) continue;
                td.d[static_cast<std::size_t>(src) * n + v] = du + 1;
                q.push_back(v);
            }
        }
    }
    int max_finite = 0;
    bool unreachable = false;
    for (int x : td.d) {
        if (x < 0) unreachable = true;
        else max_finite = std::max(max_finite, x);
    }
    if (unreachable) {
        for (int& x : td.d)
            if (x < 0) x = max_finite + 1;
        td.max_entry = max_finite + 1;
    } else {
        td.max_entry = max_finite;
    }
    return td;
}

TreeDistance floyd_warshall_distance(const std::vector<std::uint8_t>& a, int n) {
    const int inf = 1 << 20;
    TreeDistance td;
    td.n = n;
    td.d.assign(static_cast<std::size_t>(n) * n, inf);
    for (int i = 0; i < n; ++i) {
        td.d[static_cast<std::size_t>(i) * n + i] = 0;
        for (int j = 0; j < n; ++j)
            if (a[static_cast<std::size_t>(i) * n + j]) td.d[static_cast<std::size_t>(i) * n + j] = 1;
    }
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                int via = td.d[static_cast<std::size_t>(i) * n + k] +
                          td.d[static_cast<std::size_t>(k) * n + j];
                if (via < td.d[static_cast<std::size_t>(i) * n + j])
                    td.d[static_cast<std::size_t>(i) * n + j] = via;
            }
    int max_finite = 0;
    bool unreachable = false;
    for (int x : td.d) {
        if (x >= inf) unreachable = true;
        else max_finite = std::max(max_finite, x);
    }
    for (int& x : td.d)
        if (x >= inf) x = max_finite + 1;
    td.max_entry = unreachable ? max_finite + 1 : max_finite;
    return td;
}

std::vector<int> distance_profile(const TreeDistance& d, int c) {
    if (c < 0 || c >= d.n) throw std::out_of_range("distance_profile: bad node index");
    std::vector<int> counts(static_cast<std::size_t>(d.max_entry) + 1, 0);
    for (int j = 0; j < d.n; ++j) ++counts[static_cast<std::size_t>(d.at(c, j))];
    return counts;
}

std::string export_graph(const ConceptGraph& g) {
    std::ostringstream os;
    os << "# cardiac concept graph: " << g.nodes.size() << " nodes, " << g.edges.size()
       << " undirected edges\n";
    for (const Node& nd : g.nodes) {
        os << "N " << nd.index << ' ' << (nd.is_root ? "root" : "leaf") << ' ' << nd.parent << ' '
           << nd.abbr << ' ' << nd.name << '\n';
    }
    for (const Edge& e : g.edges) {
        os << "E " << edge_kind_name(e.kind) << ' ' << e.a << ' ' << e.b << '\n';
    }
    return os.str();
}

ConceptGraph parse_graph(const std::string& text) {
    ConceptGraph g;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "N") {
            Node nd;
            std::string tier;
            if (!(ls >> nd.index >> tier >> nd.parent >> nd.abbr))
                throw graph_parse_error({"malformed node line", lineno});
            if (tier != "root" && tier != "leaf")
                throw graph_parse_error({"unknown tier '" + tier + "'", lineno});
            nd.is_root = tier == "root";
            std::getline(ls, nd.name);
            if (!nd.name.empty() && nd.name[0] == ' ') nd.name.erase(0, 1);
            nodes.push_back(std::move(nd));
        } else if (tag == "E") {
            std::string kind;
            Edge e{};
            int a = 0, b = 0;
            if (!(ls >> kind >> a >> b)) throw graph_parse_error({"malformed edge line", lineno});
            auto k = edge_kind_from(kind);
            if (!k) throw graph_parse_error({"unknown edge kind '" + kind + "'", lineno});
            e.kind = *k;
            e.a = a;
            e.b = b;
            edges.push_back(e);
        } else {
            throw graph_parse_error({"unknown record tag '" + tag + "'", lineno});
        }
    }
    std::sort(nodes.begin(), nodes.end(), [](const Node& x, const Node& y) { return x.index < y.index; });
    g.nodes = std::move(nodes);
    g.edges = std::move(edges);
    finalize(g);
    validate(g);
    return g;
}

std::string export_dtree_csv(const TreeDistance& d) {
    std::ostringstream os;
    for (int i = 0; i < d.n; ++i) {
        for (int j = 0; j < d.n; ++j) {
            if (j) os << ',';
            os << d.at(i, j);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace marecg::ontology
