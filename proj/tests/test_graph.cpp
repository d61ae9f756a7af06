#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "facrec/graph.hpp"
#include "support/synth.hpp"

using namespace facrec;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& content) {
        static int counter = 0;
        path = "test_tmp_" + std::to_string(counter++) + ".tsv";
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load_interactions parses, trims and deduplicates") {
    TempFile f("u1\ti1\nu1\ti2\n");
    auto pairs = load_interactions(f.path);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::string, std::string>("u1", "i1"));
    CHECK(pairs[1] == std::pair<std::string, std::string>("u1", "i2"));

    TempFile dup("u1\ti1\nu1\ti1\n");
    CHECK(load_interactions(dup.path).size() == 1);

    TempFile ws("  u1 \t i1  \n");
    auto p = load_interactions(ws.path);
    CHECK(p[0].first == "u1");
    CHECK(p[0].second == "i1");
}

TEST_CASE("load_interactions errors") {
    TempFile bad("u1\ti1\textra\n");
    CHECK_THROWS_WITH_AS(load_interactions(bad.path),
                         doctest::Contains(":1:"), std::runtime_error);
    TempFile empty("");
    CHECK_THROWS_AS(load_interactions(empty.path), std::runtime_error);
    CHECK_THROWS_AS(load_interactions("no_such_file.tsv"), std::runtime_error);
}

TEST_CASE("load_knowledge_links drops relation column") {
    TempFile ie("i1\tlocated_in\te1\ni2\te2\n");
    auto links = load_knowledge_links(ie.path, "");
    REQUIRE(links.item_entity.size() == 2);
    CHECK(links.item_entity[0] == std::pair<std::string, std::string>("i1", "e1"));
    CHECK(links.item_entity[1] == std::pair<std::string, std::string>("i2", "e2"));
    CHECK(links.entity_entity.empty());

    TempFile ee("e1\te2\n");
    auto both = load_knowledge_links(ie.path, ee.path);
    REQUIRE(both.entity_entity.size() == 1);
    CHECK(both.entity_entity[0] == std::pair<std::string, std::string>("e1", "e2"));

    TempFile bad("a\tb\tc\td\n");
    CHECK_THROWS_AS(load_knowledge_links(bad.path, ""), std::runtime_error);
}

TEST_CASE("build_graph assigns dense ids in first-appearance order") {
    std::vector<std::pair<std::string, std::string>> inter{{"u1", "i1"}, {"u2", "i2"}, {"u1", "i2"}};
    std::vector<std::pair<std::string, std::string>> ie{{"i1", "e1"}};
    auto gb = build_graph(inter, ie, {});
    CHECK(gb.graph.user_count() == 2);
    CHECK(gb.graph.item_count() == 2);
    CHECK(gb.graph.entity_count() == 1);
    CHECK(gb.ids.users == std::vector<std::string>{"u1", "u2"});
    CHECK(gb.ids.items == std::vector<std::string>{"i1", "i2"});
    CHECK(gb.graph.user_items[0] == std::vector<int>{0, 1});
    CHECK(gb.graph.user_items[1] == std::vector<int>{1});
    CHECK(gb.graph.item_entities[0] == std::vector<int>{0});
    CHECK(gb.graph.interaction_count() == 3);
}

TEST_CASE("build_graph rejects overlapping item/entity ids and empty input") {
    std::vector<std::pair<std::string, std::string>> inter{{"u1", "x"}};
    std::vector<std::pair<std::string, std::string>> ie{{"i9", "x"}};
    CHECK_THROWS_AS(build_graph(inter, ie, {}), std::runtime_error);
    CHECK_THROWS_AS(build_graph({}, {}, {}), std::runtime_error);
}

TEST_CASE("idmap digest is stable and content-sensitive") {
    std::vector<std::pair<std::string, std::string>> inter{{"u1", "i1"}, {"u2", "i1"}};
    auto a = build_graph(inter, {}, {});
    auto b = build_graph(inter, {}, {});
    CHECK(a.ids.digest() == b.ids.digest());
    std::vector<std::pair<std::string, std::string>> other{{"u1", "i1"}, {"u3", "i1"}};
    CHECK(a.ids.digest() != build_graph(other, {}, {}).ids.digest());
}

TEST_CASE("split_holdout 80/20 per-user split") {
    HeteroGraph g;
    g.user_items.assign(30, {});
    g.item_entities.assign(20, {});
    for (int u = 0; u < 30; ++u)
        for (int t = 0; t < 10; ++t) g.user_items[u].push_back((u + t) % 20);
    for (auto& v : g.user_items) std::sort(v.begin(), v.end());

    SplitResult sr = split_holdout(g, 7, 5, 5, 0.8);
    CHECK(sr.split.val_users.size() == 5);
    CHECK(sr.split.test_users.size() == 5);

    std::set<int> val(sr.split.val_users.begin(), sr.split.val_users.end());
    for (int u : sr.split.test_users) CHECK(val.count(u) == 0);

    for (size_t i = 0; i < sr.split.val_users.size(); ++i) {
        const int u = sr.split.val_users[i];
        CHECK(sr.train_graph.user_items[u].size() == 8);
        CHECK(sr.split.val_truth[i].size() == 2);
        for (int t : sr.split.val_truth[i]) {
            const auto& tr = sr.train_graph.user_items[u];
            CHECK(!std::binary_search(tr.begin(), tr.end(), t));
        }
    }
    // non-held-out users keep everything
    std::set<int> held(val);
    held.insert(sr.split.test_users.begin(), sr.split.test_users.end());
    for (int u = 0; u < 30; ++u)
        if (!held.count(u)) CHECK(sr.train_graph.user_items[u] == g.user_items[u]);

    // interaction conservation
    size_t total = 0;
    for (const auto& v : sr.train_graph.user_items) total += v.size();
    for (const auto& v : sr.split.val_truth) total += v.size();
    for (const auto& v : sr.split.test_truth) total += v.size();
    CHECK(total == g.interaction_count());
}

TEST_CASE("split_holdout determinism and reproducibility") {
    const HeteroGraph g = synth::random_graph(5, 40, 30, 10, 3, 8, 3);
    SplitResult a = split_holdout(g, 11, 6, 6, 0.8);
    SplitResult b = split_holdout(g, 11, 6, 6, 0.8);
    CHECK(a.split.val_users == b.split.val_users);
    CHECK(a.split.test_users == b.split.test_users);
    CHECK(a.split.val_truth == b.split.val_truth);
    CHECK(a.train_graph.user_items == b.train_graph.user_items);

    SplitResult c = split_holdout(g, 12, 6, 6, 0.8);
    CHECK(a.split.val_users != c.split.val_users);
}

TEST_CASE("split_holdout rejects bad arguments") {
    const HeteroGraph g = synth::toy_graph();
    CHECK_THROWS_AS(split_holdout(g, 1, 10, 10, 0.8), std::runtime_error);  // too few users
    CHECK_THROWS_AS(split_holdout(g, 1, 1, 1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(split_holdout(g, 1, 1, 1, 1.0), std::invalid_argument);
}

TEST_CASE("split_holdout keeps both sides nonempty for minimum-degree users") {
    HeteroGraph g;
    g.user_items = {{0, 1}, {1, 2}, {0, 2}, {0, 1, 2}};
    g.item_entities.assign(3, {});
    SplitResult sr = split_holdout(g, 3, 2, 2, 0.8);
    for (size_t i = 0; i < sr.split.val_users.size(); ++i) {
        CHECK(!sr.split.val_truth[i].empty());
        CHECK(!sr.train_graph.user_items[sr.split.val_users[i]].empty());
    }
    for (size_t i = 0; i < sr.split.test_users.size(); ++i) {
        CHECK(!sr.split.test_truth[i].empty());
        CHECK(!sr.train_graph.user_items[sr.split.test_users[i]].empty());
    }
}
