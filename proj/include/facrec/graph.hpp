#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace facrec {

enum class NodeKind { User, Item, Entity };

struct NodeRef {
    NodeKind kind;
    int index;
};

// Dense-index assignment in first-appearance order, with the original
// string identifiers kept for export and digesting.
struct IdMap {
    std::vector<std::string> users;
    std::vector<std::string> items;
    std::vector<std::string> entities;

    std::unordered_map<std::string, int> user_index;
    std::unordered_map<std::string, int> item_index;
    std::unordered_map<std::string, int> entity_index;

    // FNV-1a 64 over the canonical TSV rendering; ties checkpoints to the
    // graph they were trained on.
    uint64_t digest() const;
    std::string to_tsv() const;
};

// Immutable tri-partite adjacency. user_items holds training interactions
// only once a split has been applied. entity_entities is stored but not
// consumed by the default single-entity-level encoder.
struct HeteroGraph {
    std::vector<std::vector<int>> user_items;
    std::vector<std::vector<int>> item_entities;
    std::vector<std::vector<int>> entity_entities;

    int user_count() const { return static_cast<int>(user_items.size()); }
    int item_count() const { return static_cast<int>(item_entities.size()); }
    int entity_count() const { return static_cast<int>(entity_entities.size()); }
    size_t interaction_count() const;
};

struct DatasetSplit {
    std::vector<std::pair<int, int>> train_interactions;
    std::vector<int> val_users;
    std::vector<int> test_users;
    std::vector<std::vector<int>> val_truth;   // parallel to val_users
    std::vector<std::vector<int>> test_truth;  // parallel to test_users
    uint64_t seed = 0;
};

struct GraphBuild {
    HeteroGraph graph;
    IdMap ids;
};

struct SplitResult {
    HeteroGraph train_graph;  // user_items rebuilt to training interactions only
    DatasetSplit split;
};

// Parses `user<TAB>item` lines, deduplicating while preserving first
// appearance order. Throws on malformed lines (with line number) and on
// an empty file.
std::vector<std::pair<std::string, std::string>> load_interactions(const std::string& path);

// Parses `head<TAB>[relation<TAB>]tail`; a 3-field line drops the middle
// (relation types are ignored). entity_entity_path may be empty.
struct KnowledgeLinks {
    std::vector<std::pair<std::string, std::string>> item_entity;
    std::vector<std::pair<std::string, std::string>> entity_entity;
};
KnowledgeLinks load_knowledge_links(const std::string& item_entity_path,
                                    const std::string& entity_entity_path);

// Builds the dense-indexed graph. An id appearing both as item and as
// entity is an error. Adjacency lists come out sorted and deduplicated.
GraphBuild build_graph(const std::vector<std::pair<std::string, std::string>>& interactions,
                       const std::vector<std::pair<std::string, std::string>>& item_entity,
                       const std::vector<std::pair<std::string, std::string>>& entity_entity);

// Holds out n_val + n_test users (sampled among users with >= 2
// interactions); for each, ceil(train_frac * deg) interactions (clamped so
// both sides stay nonempty) go to train and the rest become truth.
// Returns the graph rebuilt on training interactions plus the split.
SplitResult split_holdout(const HeteroGraph& graph, uint64_t seed, int n_val, int n_test,
                          double train_frac);

}  // namespace facrec
