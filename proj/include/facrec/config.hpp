#pragma once

#include <string>
#include <vector>

#include "facrec/train_config.hpp"

namespace facrec {

// Flat key=value run configuration; unknown keys are rejected. Every key
// has a default except the data paths.
struct RunConfig {
    TrainConfig train;

    std::string interactions;   // required: user<TAB>item
    std::string item_entity;    // required: item<TAB>[rel<TAB>]entity
    std::string entity_entity;  // optional
    std::string out_dir;        // default: $FACREC_OUT_DIR or "runs"

    std::vector<int> k_list{2, 10, 50, 100};
    int n_val = 200;
    int n_test = 200;
    double train_frac = 0.8;

    void validate_paths() const;
    void validate() const;
    std::string render() const;  // resolved config dump, one key per line
};

// `key = value` lines with `#` comments.
RunConfig parse_config(const std::string& path);

// Applies one override; throws on unknown key or bad value. source names
// the origin for error messages ("--set", "file:12", ...).
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value,
               const std::string& source);

}  // namespace facrec
