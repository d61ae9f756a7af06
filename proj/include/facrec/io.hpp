#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "facrec/graph.hpp"
#include "facrec/numerics.hpp"
#include "facrec/params.hpp"
#include "facrec/train_config.hpp"

namespace facrec {

enum class IoErrorCode { VersionMismatch, DigestMismatch, Truncated, Malformed };

struct IoError : std::runtime_error {
    IoErrorCode code;
    IoError(IoErrorCode c, const std::string& what) : std::runtime_error(what), code(c) {}
};

struct ModelCheckpoint {
    uint32_t version = 1;
    TrainConfig config;
    ModelParams params;
    AdamState adam;
    int epoch = 0;  // epoch the parameters were snapshotted at (best validation)
    uint64_t idmap_digest = 0;
};

// Checkpoint container: magic, format version, key=value config block,
// record count, (name-length, name, rank, dims, f32 payload) records,
// trailing FNV-1a64 checksum. Files are written atomically (tmp + rename).
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
// expected_digest 0 skips the id-map check.
ModelCheckpoint load_checkpoint(const std::string& path, uint64_t expected_digest = 0);

void save_graph(const HeteroGraph& graph, uint64_t idmap_digest, const std::string& path);
HeteroGraph load_graph(const std::string& path, uint64_t* idmap_digest_out = nullptr);

void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path);

void save_idmap(const IdMap& ids, const std::string& path);
IdMap load_idmap(const std::string& path);

uint64_t fnv1a64_bytes(const void* data, size_t n);

}  // namespace facrec
