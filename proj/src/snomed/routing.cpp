#include "marecg/snomed/routing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace marecg::snomed {

using ontology::build_graph;
using ontology::graph_parse_error;
using ontology::kFirstLeaf;
using ontology::kLeafCount;
using ontology::kNodeCount;
using ontology::kRootCount;

void RoutingTable::add(Code code, std::vector<int> nodes) {
    const auto& g = build_graph();
    int roots = 0;
    std::set<int> uniq;
    for (int n : nodes) {
        if (n < 0 || n >= g.n)
            throw graph_parse_error({"routing for " + std::to_string(code) + " names unknown node " +
                                     std::to_string(n)});
        if (!uniq.insert(n).second)
            throw graph_parse_error({"routing for " + std::to_string(code) + " repeats node " +
                                     std::to_string(n)});
        if (!g.is_leaf(n)) ++roots;
    }
    if (roots > 1)
        throw graph_parse_error({"routing for " + std::to_string(code) + " names " +
                                 std::to_string(roots) + " roots"});
    std::sort(nodes.begin(), nodes.end());
    entries_[code] = std::move(nodes);
}

std::vector<int> RoutingTable::route(Code code) const {
    auto it = entries_.find(code);
    return it == entries_.end() ? std::vector<int>{} : it->second;
}

void RoutingTable::merge(const RoutingTable& other) {
    for (const auto& [code, nodes] : other.entries_) entries_[code] = nodes;
}

const RoutingTable& canonical_routing() {
    static const RoutingTable t = [] {
        RoutingTable tt;
        // Single morphology: leaf plus its parent root.
        tt.add(164889003, {5, 1});    // atrial fibrillation
        tt.add(164909002, {13, 2});   // left bundle branch block
        tt.add(426177001, {11, 1});   // sinus bradycardia
        // Localised lesion: several leaves plus the shared root.
        tt.add(54329005, {25, 19, 3});   // anterior wall acute MI
        tt.add(164931005, {21, 25, 3});  // ST elevation, anterior leads
        tt.add(233917008, {17, 18, 2});  // second-degree AV block (Mobitz II)
        // Generic NOS: root family only.
        tt.add(698252002, {1});   // cardiac dysrhythmia NOS
        tt.add(6374002, {2});     // bundle branch block NOS
        tt.add(413444003, {3});   // myocardial ischaemia NOS
        return tt;
    }();
    return t;
}

const RoutingTable& extension_routing() {
    static const RoutingTable t = [] {
        RoutingTable tt;
        tt.add(426783006, {34, 0});  // normal sinus rhythm
        tt.add(427084000, {12, 1});  // sinus tachycardia
        tt.add(164890007, {6, 1});   // atrial flutter
        tt.add(427172004, {10, 1});  // premature ventricular contractions
        tt.add(284470004, {9, 1});   // premature atrial contraction
        tt.add(426761007, {7, 1});   // supraventricular tachycardia
        tt.add(270492004, {16, 2});  // first-degree AV block
        tt.add(195042002, {17, 2});  // second-degree AV block
        tt.add(27885002, {18, 2});   // complete AV block
        tt.add(59118001, {14, 2});   // right bundle branch block
        tt.add(111975006, {32, 2});  // prolonged QT interval
        return tt;
    }();
    return t;
}

const RoutingTable& default_routing() {
    static const RoutingTable t = [] {
        RoutingTable tt = canonical_routing();
        tt.merge(extension_routing());
        return tt;
    }();
    return t;
}

std::string export_routing(const RoutingTable& t) {
    std::ostringstream os;
    os << "# SNOMED-CT routing table: " << t.entries().size() << " codes\n";
    for (const auto& [code, nodes] : t.entries()) {
        os << "R " << code << ' ';
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (i) os << ',';
            os << nodes[i];
        }
        os << '\n';
    }
    return os.str();
}

RoutingTable parse_routing(const std::string& text) {
    RoutingTable t;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag != "R") throw graph_parse_error({"unknown record tag '" + tag + "'", lineno});
        Code code = 0;
        std::string nodes_field;
        if (!(ls >> code >> nodes_field)) throw graph_parse_error({"malformed routing line", lineno});
        std::vector<int> nodes;
        std::istringstream ns(nodes_field);
        std::string tok;
        while (std::getline(ns, tok, ',')) {
            try {
                std::size_t used = 0;
                int v = std::stoi(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                nodes.push_back(v);
            } catch (const std::exception&) {
                throw graph_parse_error({"bad node index '" + tok + "'", lineno});
            }
        }
        if (nodes.empty()) throw graph_parse_error({"empty node set", lineno});
        try {
            t.add(code, std::move(nodes));
        } catch (const graph_parse_error& e) {
            throw graph_parse_error({e.detail.message, lineno});
        }
    }
    return t;
}

std::vector<float> LeafTarget::multi_hot() const {
    std::vector<float> y(kLeafCount, 0.0f);
    for (int c : active) y[static_cast<std::size_t>(c - kFirstLeaf)] = 1.0f;
    return y;
}

namespace {

// Depth in the is_a / sub_hierarchy hierarchy: longest upward path to a root.
int isa_depth(int node, const ontology::ConceptGraph& g) {
    if (!g.is_leaf(node)) return 0;
    int best = 1;  // the direct is_a edge to the parent root
    for (const auto& e : g.edges) {
        if (e.kind != ontology::EdgeKind::SubHierarchy) continue;
        if (e.a == node) best = std::max(best, 1 + isa_depth(e.b, g));
    }
    return best;
}

}  // namespace

LeafTarget resolve_codes(const std::vector<Code>& codes, const RoutingTable& table, PrimaryRule rule) {
    const auto& g = build_graph();
    std::set<int> nodes;
    for (Code c : codes) {
        for (int n : table.route(c)) nodes.insert(n);
    }
    LeafTarget out;
    bool any_root = false;
    for (int n : nodes) {
        if (g.is_leaf(n)) out.active.push_back(n);
        else any_root = true;
    }
    out.root_only = out.active.empty() && any_root;
    if (!out.active.empty()) {
        if (rule == PrimaryRule::MaxIndex) {
            out.primary = out.active.back();
        } else {
            int best = out.active.front();
            int best_depth = isa_depth(best, g);
            for (int c : out.active) {
                int d = isa_depth(c, g);
                if (d > best_depth || (d == best_depth && c > best)) {
                    best = c;
                    best_depth = d;
                }
            }
            out.primary = best;
        }
    }
    return out;
}

SoftTarget soft_target(const LeafTarget& target, const ontology::TreeDistance& dtree, double sigma) {
    if (!target.primary)
        throw std::invalid_argument("soft_target: target has no primary positive (root-only record?)");
    if (sigma <= 0) throw std::invalid_argument("soft_target: sigma must be positive");
    int src = *target.primary;
    std::vector<double> u(static_cast<std::size_t>(dtree.n));
    for (int c = 0; c < dtree.n; ++c)
        u[static_cast<std::size_t>(c)] = std::exp(-static_cast<double>(dtree.at(src, c)) / sigma);
    for (int c : target.active) {
        auto& m = u[static_cast<std::size_t>(c)];
        m = std::max(1.0, m);
    }
    double z = 0;
    for (double x : u) z += x;
    for (double& x : u) x /= z;
    SoftTarget st;
    st.t = std::move(u);
    st.sigma = sigma;
    return st;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return 0.5 * s;
}

TargetShape classify_target_shape(const SoftTarget& st, const LeafTarget& target, double tol) {
    std::size_t n = st.t.size();
    std::vector<double> uniform_all(n, 1.0 / static_cast<double>(n));
    std::vector<double> uniform_active(n, 0.0);
    if (!target.active.empty()) {
        double m = 1.0 / static_cast<double>(target.active.size());
        for (int c : target.active) uniform_active[static_cast<std::size_t>(c)] = m;
    }
    if (total_variation(st.t, uniform_active) <= tol) return TargetShape::UniformOnActive;
    if (total_variation(st.t, uniform_all) <= tol) return TargetShape::UniformOnAll;
    return TargetShape::Intermediate;
}

}  // namespace marecg::snomed
