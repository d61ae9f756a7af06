#include "facrec/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace facrec {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& source, const std::string& what) {
    throw std::runtime_error(source + ": " + what);
}

int to_int(const std::string& v, const std::string& key, const std::string& src) {
    try {
        size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        bad(src, "key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& v, const std::string& key, const std::string& src) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        bad(src, "key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key, const std::string& src) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(src, "key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key, const std::string& src) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        out.push_back(to_int(tok, key, src));
    }
    if (out.empty()) bad(src, "key '" + key + "' expects a comma-separated integer list");
    return out;
}

}  // namespace

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value,
               const std::string& src) {
    TrainConfig& t = cfg.train;
    if (key == "interactions") cfg.interactions = value;
    else if (key == "item_entity") cfg.item_entity = value;
    else if (key == "entity_entity") cfg.entity_entity = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "k_list") cfg.k_list = to_int_list(value, key, src);
    else if (key == "n_val") cfg.n_val = to_int(value, key, src);
    else if (key == "n_test") cfg.n_test = to_int(value, key, src);
    else if (key == "train_frac") cfg.train_frac = to_double(value, key, src);
    else if (key == "d") t.fc.d = to_int(value, key, src);
    else if (key == "c1") t.fc.c1 = to_int(value, key, src);
    else if (key == "c2") t.fc.c2 = to_int(value, key, src);
    else if (key == "c") { t.fc.c1 = t.fc.c2 = to_int(value, key, src); }
    else if (key == "gamma") t.fc.gamma = static_cast<float>(to_double(value, key, src));
    else if (key == "lr") t.lr = static_cast<float>(to_double(value, key, src));
    else if (key == "l2_weight") t.l2_weight = static_cast<float>(to_double(value, key, src));
    else if (key == "batch_size") t.batch_size = to_int(value, key, src);
    else if (key == "epochs") t.epochs = to_int(value, key, src);
    else if (key == "seed") t.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "mc_samples") t.mc_samples = to_int(value, key, src);
    else if (key == "decoder_tied") t.decoder_tied = to_bool(value, key, src);
    else if (key == "softmax_samples") t.softmax_samples = to_int(value, key, src);
    else if (key == "exclude_target_from_neighborhood")
        t.exclude_target_from_neighborhood = to_bool(value, key, src);
    else if (key == "init_scale") t.init_scale = static_cast<float>(to_double(value, key, src));
    else if (key == "grad_chunks") t.grad_chunks = to_int(value, key, src);
    else if (key == "threads") t.threads = to_int(value, key, src);
    else bad(src, "unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    RunConfig cfg;
    if (const char* env = std::getenv("FACREC_OUT_DIR")) cfg.out_dir = env;
    if (cfg.out_dir.empty()) cfg.out_dir = "runs";

    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        const std::string src = path + ":" + std::to_string(lineno);
        if (eq == std::string::npos) bad(src, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) bad(src, "empty key");
        apply_key(cfg, key, value, src);
    }
    return cfg;
}

void RunConfig::validate_paths() const {
    if (interactions.empty()) throw std::runtime_error("config: missing required key 'interactions'");
    if (item_entity.empty()) throw std::runtime_error("config: missing required key 'item_entity'");
}

void RunConfig::validate() const {
    train.validate();
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::runtime_error("config: train_frac must be in (0, 1)");
    if (n_val < 0 || n_test < 0) throw std::runtime_error("config: negative holdout size");
    for (int k : k_list)
        if (k < 1) throw std::runtime_error("config: k_list entries must be >= 1");
}

std::string RunConfig::render() const {
    std::ostringstream os;
    os << "interactions = " << interactions << '\n';
    os << "item_entity = " << item_entity << '\n';
    os << "entity_entity = " << entity_entity << '\n';
    os << "out_dir = " << out_dir << '\n';
    os << "k_list = ";
    for (size_t i = 0; i < k_list.size(); ++i) os << (i ? "," : "") << k_list[i];
    os << '\n';
    os << "n_val = " << n_val << '\n';
    os << "n_test = " << n_test << '\n';
    os << "train_frac = " << train_frac << '\n';
    os << "d = " << train.fc.d << '\n';
    os << "c1 = " << train.fc.c1 << '\n';
    os << "c2 = " << train.fc.c2 << '\n';
    os << "gamma = " << train.fc.gamma << '\n';
    os << "lr = " << train.lr << '\n';
    os << "l2_weight = " << train.l2_weight << '\n';
    os << "batch_size = " << train.batch_size << '\n';
    os << "epochs = " << train.epochs << '\n';
    os << "seed = " << train.seed << '\n';
    os << "mc_samples = " << train.mc_samples << '\n';
    os << "decoder_tied = " << (train.decoder_tied ? "true" : "false") << '\n';
    os << "softmax_samples = " << train.softmax_samples << '\n';
    os << "exclude_target_from_neighborhood = "
       << (train.exclude_target_from_neighborhood ? "true" : "false") << '\n';
    os << "init_scale = " << train.init_scale << '\n';
    os << "grad_chunks = " << train.grad_chunks << '\n';
    os << "threads = " << train.threads << '\n';
    return os.str();
}

}  // namespace facrec
