#include "facrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "facrec/rng.hpp"

namespace facrec {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void parse_fail(const std::string& path, size_t lineno, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

size_t HeteroGraph::interaction_count() const {
    size_t n = 0;
    for (const auto& a : user_items) n += a.size();
    return n;
}

std::string IdMap::to_tsv() const {
    std::ostringstream os;
    for (size_t i = 0; i < users.size(); ++i) os << "user\t" << users[i] << '\t' << i << '\n';
    for (size_t i = 0; i < items.size(); ++i) os << "item\t" << items[i] << '\t' << i << '\n';
    for (size_t i = 0; i < entities.size(); ++i) os << "entity\t" << entities[i] << '\t' << i << '\n';
    return os.str();
}

uint64_t IdMap::digest() const {
    const std::string tsv = to_tsv();
    return fnv1a64(tsv.data(), tsv.size());
}

std::vector<std::pair<std::string, std::string>> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interactions file: " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 2)
            parse_fail(path, lineno, "expected 2 tab-separated fields, got " +
                                         std::to_string(fields.size()));
        std::pair<std::string, std::string> p{trim(fields[0]), trim(fields[1])};
        if (p.first.empty() || p.second.empty()) parse_fail(path, lineno, "empty id");
        if (seen.insert(p).second) pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw std::runtime_error("interactions file is empty: " + path);
    return pairs;
}

KnowledgeLinks load_knowledge_links(const std::string& item_entity_path,
                                    const std::string& entity_entity_path) {
    auto load = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open knowledge file: " + path);
        std::vector<std::pair<std::string, std::string>> pairs;
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            auto fields = split_tabs(line);
            std::string head, tail;
            if (fields.size() == 2) {
                head = trim(fields[0]);
                tail = trim(fields[1]);
            } else if (fields.size() == 3) {
                // relation column discarded
                head = trim(fields[0]);
                tail = trim(fields[2]);
            } else {
                parse_fail(path, lineno, "expected 2 or 3 tab-separated fields, got " +
                                             std::to_string(fields.size()));
            }
            if (head.empty() || tail.empty()) parse_fail(path, lineno, "empty id");
            pairs.emplace_back(std::move(head), std::move(tail));
        }
        return pairs;
    };
    KnowledgeLinks links;
    links.item_entity = load(item_entity_path);
    if (!entity_entity_path.empty()) links.entity_entity = load(entity_entity_path);
    return links;
}

GraphBuild build_graph(const std::vector<std::pair<std::string, std::string>>& interactions,
                       const std::vector<std::pair<std::string, std::string>>& item_entity,
                       const std::vector<std::pair<std::string, std::string>>& entity_entity) {
    if (interactions.empty()) throw std::runtime_error("build_graph: no interactions (no users)");
    GraphBuild out;
    IdMap& ids = out.ids;

    auto intern = [](std::vector<std::string>& names, std::unordered_map<std::string, int>& index,
                     const std::string& id) {
        auto it = index.find(id);
        if (it != index.end()) return it->second;
        const int idx = static_cast<int>(names.size());
        names.push_back(id);
        index.emplace(id, idx);
        return idx;
    };
    auto check_disjoint = [&](const std::string& id, bool as_item) {
        if (as_item && ids.entity_index.count(id))
            throw std::runtime_error("id is both item and entity: " + id);
        if (!as_item && ids.item_index.count(id))
            throw std::runtime_error("id is both item and entity: " + id);
    };

    std::vector<std::pair<int, int>> ui, ie, ee;
    for (const auto& [u, t] : interactions) {
        check_disjoint(t, true);
        ui.emplace_back(intern(ids.users, ids.user_index, u),
                        intern(ids.items, ids.item_index, t));
    }
    for (const auto& [t, e] : item_entity) {
        check_disjoint(t, true);
        check_disjoint(e, false);
        ie.emplace_back(intern(ids.items, ids.item_index, t),
                        intern(ids.entities, ids.entity_index, e));
    }
    for (const auto& [a, b] : entity_entity) {
        check_disjoint(a, false);
        check_disjoint(b, false);
        ee.emplace_back(intern(ids.entities, ids.entity_index, a),
                        intern(ids.entities, ids.entity_index, b));
    }

    HeteroGraph& g = out.graph;
    g.user_items.resize(ids.users.size());
    g.item_entities.resize(ids.items.size());
    g.entity_entities.resize(ids.entities.size());
    for (auto [u, t] : ui) g.user_items[u].push_back(t);
    for (auto [t, e] : ie) g.item_entities[t].push_back(e);
    for (auto [a, b] : ee) g.entity_entities[a].push_back(b);

    auto sort_dedup = [](std::vector<std::vector<int>>& adj) {
        for (auto& v : adj) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
    };
    sort_dedup(g.user_items);
    sort_dedup(g.item_entities);
    sort_dedup(g.entity_entities);
    return out;
}

SplitResult split_holdout(const HeteroGraph& graph, uint64_t seed, int n_val, int n_test,
                          double train_frac) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("split_holdout: train_frac must be in (0, 1)");
    if (n_val < 0 || n_test < 0) throw std::invalid_argument("split_holdout: negative holdout size");

    // candidate pool: users with >= 2 interactions, so both sides of the
    // per-user split are nonempty
    std::vector<int> pool;
    for (int u = 0; u < graph.user_count(); ++u)
        if (graph.user_items[u].size() >= 2) pool.push_back(u);
    if (static_cast<size_t>(n_val) + static_cast<size_t>(n_test) > pool.size())
        throw std::runtime_error("split_holdout: not enough users with >= 2 interactions");

    SeededRng rng(mix_seed(seed, 0x5eedULL));
    rng.shuffle(pool);

    SplitResult out;
    out.split.seed = seed;
    out.split.val_users.assign(pool.begin(), pool.begin() + n_val);
    out.split.test_users.assign(pool.begin() + n_val, pool.begin() + n_val + n_test);

    std::vector<char> held(graph.user_count(), 0);
    for (int u : out.split.val_users) held[u] = 1;
    for (int u : out.split.test_users) held[u] = 2;

    HeteroGraph train = graph;
    auto split_user = [&](int u) {
        std::vector<int> items = graph.user_items[u];
        SeededRng urng = rng.fork(0x517bULL + static_cast<uint64_t>(u));
        urng.shuffle(items);
        const int deg = static_cast<int>(items.size());
        int k = static_cast<int>(std::ceil(train_frac * deg));
        k = std::max(1, std::min(k, deg - 1));
        std::vector<int> tr(items.begin(), items.begin() + k);
        std::vector<int> truth(items.begin() + k, items.end());
        std::sort(tr.begin(), tr.end());
        std::sort(truth.begin(), truth.end());
        train.user_items[u] = std::move(tr);
        return truth;
    };

    out.split.val_truth.reserve(out.split.val_users.size());
    for (int u : out.split.val_users) out.split.val_truth.push_back(split_user(u));
    out.split.test_truth.reserve(out.split.test_users.size());
    for (int u : out.split.test_users) out.split.test_truth.push_back(split_user(u));

    for (int u = 0; u < train.user_count(); ++u)
        for (int t : train.user_items[u]) out.split.train_interactions.emplace_back(u, t);

    out.train_graph = std::move(train);
    return out;
}

}  // namespace facrec
