#include "facrec/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace facrec {

namespace {

constexpr char kCkptMagic[4] = {'F', 'R', 'C', 'K'};
constexpr char kGraphMagic[4] = {'F', 'R', 'G', 'R'};
constexpr char kSplitMagic[4] = {'F', 'R', 'S', 'P'};

class ByteWriter {
public:
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i32(int32_t v) { raw(&v, 4); }
    void f32(float v) { raw(&v, 4); }
    void f32s(const float* p, size_t n) { raw(p, n * 4); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}
    void raw(void* p, size_t n) {
        if (pos_ + n > data_.size()) throw IoError(IoErrorCode::Truncated, "unexpected end of file");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    int32_t i32() {
        int32_t v;
        raw(&v, 4);
        return v;
    }
    void f32s(float* p, size_t n) { raw(p, n * 4); }
    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    size_t pos() const { return pos_; }
    size_t size() const { return data_.size(); }

private:
    std::string data_;
    size_t pos_ = 0;
};

void write_file_atomic(const std::string& path, const std::string& payload) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw std::runtime_error("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot rename into place: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// payload with trailing checksum appended
std::string seal(const std::string& body) {
    std::string out = body;
    const uint64_t sum = fnv1a64_bytes(body.data(), body.size());
    out.append(reinterpret_cast<const char*>(&sum), 8);
    return out;
}

std::string unseal(const std::string& path) {
    std::string data = read_file(path);
    if (data.size() < 8) throw IoError(IoErrorCode::Truncated, path + ": file too short");
    uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - 8, 8);
    data.resize(data.size() - 8);
    const uint64_t sum = fnv1a64_bytes(data.data(), data.size());
    if (sum != stored)
        throw IoError(IoErrorCode::Truncated, path + ": checksum mismatch (truncated or corrupt)");
    return data;
}

std::string hexfloat(float v) {
    char b[64];
    std::snprintf(b, sizeof(b), "%a", static_cast<double>(v));
    return b;
}

float parse_hexfloat(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const float v = std::strtof(s.c_str(), &end);
    if (end == s.c_str()) throw IoError(IoErrorCode::Malformed, "bad float for key " + key);
    return v;
}

}  // namespace

uint64_t fnv1a64_bytes(const void* data, size_t n) {
    uint64_t h = 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    const TrainConfig& c = ckpt.config;
    std::ostringstream cfg;
    cfg << "c1=" << c.fc.c1 << '\n'
        << "c2=" << c.fc.c2 << '\n'
        << "d=" << c.fc.d << '\n'
        << "gamma=" << hexfloat(c.fc.gamma) << '\n'
        << "lr=" << hexfloat(c.lr) << '\n'
        << "l2_weight=" << hexfloat(c.l2_weight) << '\n'
        << "batch_size=" << c.batch_size << '\n'
        << "epochs=" << c.epochs << '\n'
        << "seed=" << c.seed << '\n'
        << "mc_samples=" << c.mc_samples << '\n'
        << "decoder_tied=" << (c.decoder_tied ? 1 : 0) << '\n'
        << "softmax_samples=" << c.softmax_samples << '\n'
        << "exclude_target=" << (c.exclude_target_from_neighborhood ? 1 : 0) << '\n'
        << "init_scale=" << hexfloat(c.init_scale) << '\n'
        << "grad_chunks=" << c.grad_chunks << '\n'
        << "threads=" << c.threads << '\n'
        << "n_items=" << ckpt.params.layout.n_items << '\n'
        << "n_entities=" << ckpt.params.layout.n_entities << '\n'
        << "epoch=" << ckpt.epoch << '\n'
        << "adam_step=" << ckpt.adam.step_count << '\n'
        << "idmap_digest=" << ckpt.idmap_digest << '\n';

    ByteWriter w;
    w.raw(kCkptMagic, 4);
    w.u32(ckpt.version);
    w.str(cfg.str());
    w.u32(static_cast<uint32_t>(ckpt.params.layout.tensors.size() + 2));
    for (const auto& t : ckpt.params.layout.tensors) {
        w.str(t.name);
        w.u32(static_cast<uint32_t>(t.shape.size()));
        for (size_t dim : t.shape) w.u32(static_cast<uint32_t>(dim));
        size_t n = 1;
        for (size_t dim : t.shape) n *= dim;
        w.f32s(ckpt.params.flat.data() + t.offset, n);
    }
    auto flat_record = [&](const std::string& name, const std::vector<float>& v) {
        w.str(name);
        w.u32(1);
        w.u32(static_cast<uint32_t>(v.size()));
        w.f32s(v.data(), v.size());
    };
    flat_record("adam_m", ckpt.adam.first_moment);
    flat_record("adam_v", ckpt.adam.second_moment);

    write_file_atomic(path, seal(w.bytes()));
}

ModelCheckpoint load_checkpoint(const std::string& path, uint64_t expected_digest) {
    ByteReader r(unseal(path));
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kCkptMagic, 4) != 0)
        throw IoError(IoErrorCode::VersionMismatch, path + ": not a checkpoint file");
    ModelCheckpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != 1)
        throw IoError(IoErrorCode::VersionMismatch,
                      path + ": unsupported checkpoint version " + std::to_string(ckpt.version));

    std::map<std::string, std::string> kv;
    {
        std::istringstream cfg(r.str());
        std::string line;
        while (std::getline(cfg, line)) {
            const size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto geti = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw IoError(IoErrorCode::Malformed, "missing config key " + k);
        return std::stoll(it->second);
    };
    auto getf = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw IoError(IoErrorCode::Malformed, "missing config key " + k);
        return parse_hexfloat(it->second, k);
    };

    TrainConfig& c = ckpt.config;
    c.fc.c1 = static_cast<int>(geti("c1"));
    c.fc.c2 = static_cast<int>(geti("c2"));
    c.fc.d = static_cast<int>(geti("d"));
    c.fc.gamma = getf("gamma");
    c.lr = getf("lr");
    c.l2_weight = getf("l2_weight");
    c.batch_size = static_cast<int>(geti("batch_size"));
    c.epochs = static_cast<int>(geti("epochs"));
    c.seed = static_cast<uint64_t>(geti("seed"));
    c.mc_samples = static_cast<int>(geti("mc_samples"));
    c.decoder_tied = geti("decoder_tied") != 0;
    c.softmax_samples = static_cast<int>(geti("softmax_samples"));
    c.exclude_target_from_neighborhood = geti("exclude_target") != 0;
    c.init_scale = getf("init_scale");
    c.grad_chunks = static_cast<int>(geti("grad_chunks"));
    c.threads = static_cast<int>(geti("threads"));
    const int n_items = static_cast<int>(geti("n_items"));
    const int n_entities = static_cast<int>(geti("n_entities"));
    ckpt.epoch = static_cast<int>(geti("epoch"));
    const int64_t adam_step = geti("adam_step");
    ckpt.idmap_digest = static_cast<uint64_t>(geti("idmap_digest"));

    if (expected_digest != 0 && ckpt.idmap_digest != expected_digest)
        throw IoError(IoErrorCode::DigestMismatch,
                      path + ": checkpoint id-map digest does not match the loaded graph");

    ckpt.params.layout = ParamLayout::make(n_items, n_entities, c.fc, c.decoder_tied);
    ckpt.params.flat.resize(ckpt.params.layout.total);

    const uint32_t n_records = r.u32();
    if (n_records != ckpt.params.layout.tensors.size() + 2)
        throw IoError(IoErrorCode::Malformed, path + ": unexpected record count");
    for (const auto& t : ckpt.params.layout.tensors) {
        const std::string name = r.str();
        if (name != t.name)
            throw IoError(IoErrorCode::Malformed, path + ": unexpected tensor " + name);
        const uint32_t rank = r.u32();
        if (rank != t.shape.size()) throw IoError(IoErrorCode::Malformed, "rank mismatch: " + name);
        size_t n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint32_t dim = r.u32();
            if (dim != t.shape[i]) throw IoError(IoErrorCode::Malformed, "shape mismatch: " + name);
            n *= dim;
        }
        r.f32s(ckpt.params.flat.data() + t.offset, n);
    }
    auto read_flat = [&](const std::string& want, std::vector<float>& out) {
        const std::string name = r.str();
        if (name != want) throw IoError(IoErrorCode::Malformed, path + ": unexpected record " + name);
        if (r.u32() != 1) throw IoError(IoErrorCode::Malformed, "rank mismatch: " + name);
        out.resize(r.u32());
        r.f32s(out.data(), out.size());
    };
    ckpt.adam = AdamState(0);
    read_flat("adam_m", ckpt.adam.first_moment);
    read_flat("adam_v", ckpt.adam.second_moment);
    ckpt.adam.step_count = adam_step;
    if (ckpt.adam.first_moment.size() != ckpt.params.flat.size())
        throw IoError(IoErrorCode::Malformed, path + ": optimizer state size mismatch");
    return ckpt;
}

void save_graph(const HeteroGraph& graph, uint64_t idmap_digest, const std::string& path) {
    ByteWriter w;
    w.raw(kGraphMagic, 4);
    w.u32(1);
    w.u64(idmap_digest);
    auto adj = [&](const std::vector<std::vector<int>>& a) {
        w.u32(static_cast<uint32_t>(a.size()));
        for (const auto& row : a) {
            w.u32(static_cast<uint32_t>(row.size()));
            for (int x : row) w.i32(x);
        }
    };
    adj(graph.user_items);
    adj(graph.item_entities);
    adj(graph.entity_entities);
    write_file_atomic(path, seal(w.bytes()));
}

HeteroGraph load_graph(const std::string& path, uint64_t* idmap_digest_out) {
    ByteReader r(unseal(path));
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kGraphMagic, 4) != 0)
        throw IoError(IoErrorCode::VersionMismatch, path + ": not a graph file");
    if (r.u32() != 1) throw IoError(IoErrorCode::VersionMismatch, path + ": unsupported version");
    const uint64_t digest = r.u64();
    if (idmap_digest_out) *idmap_digest_out = digest;
    HeteroGraph g;
    auto adj = [&](std::vector<std::vector<int>>& a) {
        a.resize(r.u32());
        for (auto& row : a) {
            row.resize(r.u32());
            for (int& x : row) x = r.i32();
        }
    };
    adj(g.user_items);
    adj(g.item_entities);
    adj(g.entity_entities);
    return g;
}

void save_split(const DatasetSplit& split, const std::string& path) {
    ByteWriter w;
    w.raw(kSplitMagic, 4);
    w.u32(1);
    w.u64(split.seed);
    w.u32(static_cast<uint32_t>(split.train_interactions.size()));
    for (auto [u, t] : split.train_interactions) {
        w.i32(u);
        w.i32(t);
    }
    auto group = [&](const std::vector<int>& users, const std::vector<std::vector<int>>& truth) {
        w.u32(static_cast<uint32_t>(users.size()));
        for (size_t i = 0; i < users.size(); ++i) {
            w.i32(users[i]);
            w.u32(static_cast<uint32_t>(truth[i].size()));
            for (int t : truth[i]) w.i32(t);
        }
    };
    group(split.val_users, split.val_truth);
    group(split.test_users, split.test_truth);
    write_file_atomic(path, seal(w.bytes()));
}

DatasetSplit load_split(const std::string& path) {
    ByteReader r(unseal(path));
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kSplitMagic, 4) != 0)
        throw IoError(IoErrorCode::VersionMismatch, path + ": not a split file");
    if (r.u32() != 1) throw IoError(IoErrorCode::VersionMismatch, path + ": unsupported version");
    DatasetSplit s;
    s.seed = r.u64();
    s.train_interactions.resize(r.u32());
    for (auto& [u, t] : s.train_interactions) {
        u = r.i32();
        t = r.i32();
    }
    auto group = [&](std::vector<int>& users, std::vector<std::vector<int>>& truth) {
        users.resize(r.u32());
        truth.resize(users.size());
        for (size_t i = 0; i < users.size(); ++i) {
            users[i] = r.i32();
            truth[i].resize(r.u32());
            for (int& t : truth[i]) t = r.i32();
        }
    };
    group(s.val_users, s.val_truth);
    group(s.test_users, s.test_truth);
    return s;
}

void save_idmap(const IdMap& ids, const std::string& path) {
    write_file_atomic(path, ids.to_tsv());
}

IdMap load_idmap(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open id-map: " + path);
    IdMap ids;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string kind, id, idx;
        if (!std::getline(ss, kind, '\t') || !std::getline(ss, id, '\t') || !std::getline(ss, idx))
            throw IoError(IoErrorCode::Malformed,
                          path + ":" + std::to_string(lineno) + ": bad id-map row");
        auto push = [&](std::vector<std::string>& names, std::unordered_map<std::string, int>& map) {
            if (static_cast<size_t>(std::stoul(idx)) != names.size())
                throw IoError(IoErrorCode::Malformed,
                              path + ":" + std::to_string(lineno) + ": non-dense index");
            map.emplace(id, static_cast<int>(names.size()));
            names.push_back(id);
        };
        if (kind == "user")
            push(ids.users, ids.user_index);
        else if (kind == "item")
            push(ids.items, ids.item_index);
        else if (kind == "entity")
            push(ids.entities, ids.entity_index);
        else
            throw IoError(IoErrorCode::Malformed,
                          path + ":" + std::to_string(lineno) + ": unknown kind " + kind);
    }
    return ids;
}

}  // namespace facrec
