#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "marecg/ontology/graph.hpp"
#include "marecg/snomed/routing.hpp"

using namespace marecg::snomed;
using marecg::ontology::build_graph;
using marecg::ontology::tree_distance;

namespace {

const marecg::ontology::TreeDistance& dtree() {
    static const auto d = tree_distance(build_graph().adjacency, build_graph().n);
    return d;
}

}  // namespace

TEST_CASE("canonical routing matches the worked exemplars") {
    const auto& t = canonical_routing();
    CHECK(t.route(164889003) == std::vector<int>{1, 5});
    CHECK(t.route(164909002) == std::vector<int>{2, 13});
    CHECK(t.route(426177001) == std::vector<int>{1, 11});
    CHECK(t.route(54329005) == std::vector<int>{3, 19, 25});
    CHECK(t.route(164931005) == std::vector<int>{3, 21, 25});
    CHECK(t.route(233917008) == std::vector<int>{2, 17, 18});
    CHECK(t.route(698252002) == std::vector<int>{1});
    CHECK(t.route(6374002) == std::vector<int>{2});
    CHECK(t.route(413444003) == std::vector<int>{3});
    CHECK(t.route(999999999).empty());  // unknown codes are legal
}

TEST_CASE("routing never emits multiple roots or unknown nodes") {
    const auto& g = build_graph();
    for (const auto& [code, nodes] : default_routing().entries()) {
        (void)code;
        int roots = 0;
        for (int n : nodes) {
            REQUIRE(n >= 0);
            REQUIRE(n < g.n);
            if (!g.is_leaf(n)) ++roots;
        }
        CHECK(roots <= 1);
    }
    RoutingTable bad;
    CHECK_THROWS(bad.add(1, {1, 2}));   // two roots
    CHECK_THROWS(bad.add(2, {77}));     // unknown node
    CHECK_THROWS(bad.add(3, {5, 5}));   // duplicate
}

TEST_CASE("resolve_codes: leaf union, max-index primary, root filtering") {
    const auto& t = default_routing();
    SUBCASE("anterior wall acute MI activates {19,25}, primary 25") {
        auto lt = resolve_codes({54329005}, t);
        CHECK(lt.active == std::vector<int>{19, 25});
        REQUIRE(lt.primary.has_value());
        CHECK(*lt.primary == 25);
        CHECK_FALSE(lt.root_only);
        auto y = lt.multi_hot();
        CHECK(y[19 - 5] == 1.0f);
        CHECK(y[25 - 5] == 1.0f);
        CHECK(std::count(y.begin(), y.end(), 1.0f) == 2);
    }
    SUBCASE("1AVB + 2AVB codes select the more severe 17") {
        auto lt = resolve_codes({270492004, 195042002}, t);
        CHECK(lt.active == std::vector<int>{16, 17});
        CHECK(*lt.primary == 17);
    }
    SUBCASE("NOS code resolves to a root only") {
        auto lt = resolve_codes({698252002}, t);
        CHECK(lt.active.empty());
        CHECK_FALSE(lt.primary.has_value());
        CHECK(lt.root_only);
    }
    SUBCASE("unknown codes leave the record unlabeled but usable") {
        auto lt = resolve_codes({424242}, t);
        CHECK(lt.active.empty());
        CHECK_FALSE(lt.root_only);
    }
    SUBCASE("order- and duplicate-invariance") {
        auto a = resolve_codes({54329005, 164889003, 54329005}, t);
        auto b = resolve_codes({164889003, 54329005}, t);
        CHECK(a.active == b.active);
        CHECK(a.primary == b.primary);
    }
    SUBCASE("is_a-depth rule matches max-index on subtype co-activation") {
        auto a = resolve_codes({54329005}, t, PrimaryRule::IsADepth);
        CHECK(*a.primary == 25);  // deeper than AMI
        auto b = resolve_codes({270492004, 195042002}, t, PrimaryRule::IsADepth);
        CHECK(*b.primary == 17);  // equal depth, tie broken by index
    }
}

TEST_CASE("soft target: per-distance-class masses match exp(-D)") {
    LeafTarget lt;
    lt.active = {19};
    lt.primary = 19;
    auto st = soft_target(lt, dtree(), 1.0);
    // Reconstruct unnormalized masses; the singleton clamp is vacuous.
    double z = 0;
    for (int c = 0; c < 40; ++c) z += std::exp(-static_cast<double>(dtree().at(19, c)));
    const double expected[5] = {1.000, 0.368, 0.135, 0.050, 0.018};
    for (int c = 0; c < 40; ++c) {
        double unnorm = st.t[static_cast<std::size_t>(c)] * z;
        int d = dtree().at(19, c);
        CHECK(std::fabs(unnorm - expected[d]) < 5e-4);
    }
    double sum = 0;
    for (double v : st.t) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    // Exact softmax of -D row (BFS + softmax oracle).
    for (int c = 0; c < 40; ++c) {
        double oracle = std::exp(-static_cast<double>(dtree().at(19, c))) / z;
        CHECK(st.t[static_cast<std::size_t>(c)] == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("soft target: clamp grants active leaves the primary's mass") {
    LeafTarget lt;
    lt.active = {19, 25};
    lt.primary = 25;
    auto st = soft_target(lt, dtree(), 1.0);
    CHECK(st.t[19] == doctest::Approx(st.t[25]).epsilon(1e-12));
    // Inactive mass is constant on each distance class and decays with D.
    LeafTarget single;
    single.active = {25};
    single.primary = 25;
    auto ss = soft_target(single, dtree(), 1.0);
    for (int c = 0; c < 40; ++c) {
        for (int c2 = 0; c2 < 40; ++c2) {
            if (c == 25 || c2 == 25) continue;
            if (dtree().at(25, c) == dtree().at(25, c2))
                CHECK(ss.t[static_cast<std::size_t>(c)] ==
                      doctest::Approx(ss.t[static_cast<std::size_t>(c2)]).epsilon(1e-12));
            if (dtree().at(25, c) < dtree().at(25, c2))
                CHECK(ss.t[static_cast<std::size_t>(c)] > ss.t[static_cast<std::size_t>(c2)]);
        }
    }
}

TEST_CASE("soft target: refuses root-only targets") {
    LeafTarget lt;
    lt.root_only = true;
    CHECK_THROWS(soft_target(lt, dtree(), 1.0));
}

TEST_CASE("soft target temperature limits") {
    LeafTarget lt;
    lt.active = {19, 25};
    lt.primary = 25;
    SUBCASE("sigma -> 0 gives uniform over active leaves") {
        auto st = soft_target(lt, dtree(), 1e-3);
        CHECK(classify_target_shape(st, lt) == TargetShape::UniformOnActive);
        CHECK(st.t[19] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(st.t[25] == doctest::Approx(0.5).epsilon(1e-6));
    }
    SUBCASE("sigma -> infinity tends to uniform over all 40 nodes") {
        auto st = soft_target(lt, dtree(), 1e3);
        CHECK(classify_target_shape(st, lt) == TargetShape::UniformOnAll);
        for (double v : st.t) CHECK(std::fabs(v - 0.025) < 1e-3);
    }
    SUBCASE("sigma = 1 sits between the limits") {
        auto st = soft_target(lt, dtree(), 1.0);
        CHECK(classify_target_shape(st, lt) == TargetShape::Intermediate);
    }
}

TEST_CASE("routing file round-trips byte-stably") {
    const auto& t = default_routing();
    std::string text = export_routing(t);
    auto parsed = parse_routing(text);
    CHECK(export_routing(parsed) == text);
    CHECK(parsed.entries().size() == t.entries().size());
    SUBCASE("comments and bad rows") {
        auto ok = parse_routing("# comment\nR 5 5,1\n");
        CHECK(ok.route(5) == std::vector<int>{1, 5});
        CHECK_THROWS(parse_routing("R 5 5,x\n"));
        CHECK_THROWS(parse_routing("Q 5 5\n"));
    }
}
