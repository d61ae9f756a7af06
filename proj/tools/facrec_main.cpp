#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "facrec/config.hpp"
#include "facrec/eval.hpp"
#include "facrec/explain.hpp"
#include "facrec/graph.hpp"
#include "facrec/io.hpp"
#include "facrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace facrec;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;        // exact run directory (default: timestamped)
    std::string graph_dir;  // load prebuilt graph artifacts instead of TSVs
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "run configuration file")->required();
    cmd->add_option("--set", a.sets, "override a config key, key=value (repeatable)");
    cmd->add_option("--out", a.out, "exact output directory (default: <out_dir>/<cmd>-<timestamp>)");
    cmd->add_option("--graph-dir", a.graph_dir,
                    "directory with graph.bin/split.bin/idmap.tsv from a build run");
}

RunConfig resolve_config(const CommonArgs& a) {
    RunConfig cfg = parse_config(a.config_path);
    for (const auto& kv : a.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        apply_key(cfg, kv.substr(0, eq), kv.substr(eq + 1), "--set");
    }
    cfg.validate();
    return cfg;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

fs::path make_run_dir(const RunConfig& cfg, const CommonArgs& a, const std::string& cmd) {
    fs::path dir = a.out.empty() ? fs::path(cfg.out_dir) / (cmd + "-" + timestamp()) : fs::path(a.out);
    fs::create_directories(dir);
    return dir;
}

void write_manifest(const fs::path& dir, const std::string& cmd, const RunConfig& cfg,
                    const std::vector<std::string>& artifacts) {
    std::ofstream out(dir / "manifest.txt");
    out << "command = " << cmd << '\n';
    out << "seed = " << cfg.train.seed << '\n';
    out << "artifacts =";
    for (const auto& a : artifacts) out << ' ' << a;
    out << "\n\n# resolved configuration\n" << cfg.render();
}

struct DataBundle {
    HeteroGraph train_graph;
    DatasetSplit split;
    IdMap ids;
    uint64_t digest = 0;
};

// The id-map digest ties a checkpoint to its graph but not to the holdout
// split; when the graph is rebuilt from TSVs the split comes from the
// config seed, so a seed mismatch would silently evaluate against the
// wrong holdout.
void check_split_seed(const ModelCheckpoint& ckpt, const DataBundle& b, const CommonArgs& a) {
    if (!a.graph_dir.empty()) return;  // persisted split, carries its own seed
    if (ckpt.config.seed != b.split.seed)
        throw std::runtime_error(
            "checkpoint was trained with seed " + std::to_string(ckpt.config.seed) +
            " but the split was rebuilt with seed " + std::to_string(b.split.seed) +
            "; pass --graph-dir for the build the model was trained on, or match the seed");
}

DataBundle load_or_build(const RunConfig& cfg, const CommonArgs& a) {
    DataBundle b;
    if (!a.graph_dir.empty()) {
        const fs::path dir(a.graph_dir);
        b.ids = load_idmap((dir / "idmap.tsv").string());
        uint64_t stored = 0;
        b.train_graph = load_graph((dir / "graph.bin").string(), &stored);
        b.digest = b.ids.digest();
        if (stored != b.digest)
            throw IoError(IoErrorCode::DigestMismatch, "graph.bin does not match idmap.tsv");
        b.split = load_split((dir / "split.bin").string());
        return b;
    }
    cfg.validate_paths();
    const auto interactions = load_interactions(cfg.interactions);
    const auto links = load_knowledge_links(cfg.item_entity, cfg.entity_entity);
    GraphBuild gb = build_graph(interactions, links.item_entity, links.entity_entity);
    SplitResult sr = split_holdout(gb.graph, cfg.train.seed, cfg.n_val, cfg.n_test, cfg.train_frac);
    b.train_graph = std::move(sr.train_graph);
    b.split = std::move(sr.split);
    b.ids = std::move(gb.ids);
    b.digest = b.ids.digest();
    return b;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string train_log_tsv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch\tnll\tkl\tl2\ttotal\tval_ndcg@100\n";
    for (const auto& e : log)
        os << e.epoch << '\t' << e.train_loss.negative_log_likelihood << '\t' << e.train_loss.kl
           << '\t' << e.train_loss.l2 << '\t' << e.train_loss.total << '\t' << e.val_ndcg100
           << '\n';
    return os.str();
}

int lookup_node(const std::unordered_map<std::string, int>& index, const std::string& id,
                const char* what) {
    auto it = index.find(id);
    if (it != index.end()) return it->second;
    // fall back to a raw dense index
    try {
        size_t pos = 0;
        const int v = std::stoi(id, &pos);
        if (pos == id.size()) return v;
    } catch (...) {
    }
    throw std::runtime_error(std::string("unknown ") + what + " id '" + id + "'");
}

int cmd_build(const CommonArgs& a) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const fs::path dir = make_run_dir(cfg, a, "build");
    save_idmap(b.ids, (dir / "idmap.tsv").string());
    save_graph(b.train_graph, b.digest, (dir / "graph.bin").string());
    save_split(b.split, (dir / "split.bin").string());
    write_manifest(dir, "build", cfg, {"graph.bin", "split.bin", "idmap.tsv"});
    std::cout << "built graph: users=" << b.train_graph.user_count()
              << " items=" << b.train_graph.item_count()
              << " entities=" << b.train_graph.entity_count()
              << " train_interactions=" << b.split.train_interactions.size() << '\n'
              << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_train(const CommonArgs& a) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const fs::path dir = make_run_dir(cfg, a, "train");
    std::cout << "# resolved configuration\n" << cfg.render() << std::flush;

    const TrainResult result = train(b.train_graph, b.split, cfg.train, b.digest, &std::cout);
    save_checkpoint(result.checkpoint, (dir / "checkpoint.bin").string());
    write_text(dir / "train_log.tsv", train_log_tsv(result.log));
    write_manifest(dir, "train", cfg, {"checkpoint.bin", "train_log.tsv"});
    std::cout << "best epoch: " << result.checkpoint.epoch << '\n'
              << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& ckpt_path, const std::string& split_name) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const ModelCheckpoint ckpt = load_checkpoint(ckpt_path, b.digest);
    check_split_seed(ckpt, b, a);
    const EvalGroup group = split_name == "val" ? EvalGroup::Val : EvalGroup::Test;
    const MetricsReport rep = evaluate(ckpt.params, b.train_graph, b.split, group, cfg.k_list);
    const fs::path dir = make_run_dir(cfg, a, "eval");
    write_text(dir / ("metrics_" + rep.split_label + ".tsv"), rep.to_tsv());
    write_text(dir / ("metrics_" + rep.split_label + ".txt"), rep.to_text());
    write_manifest(dir, "eval", cfg,
                   {"metrics_" + rep.split_label + ".tsv", "metrics_" + rep.split_label + ".txt"});
    std::cout << rep.to_text() << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_explain(const CommonArgs& a, const std::string& ckpt_path, const std::string& user_id,
                const std::string& item_id, int top, int pairs, const std::string& format) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const ModelCheckpoint ckpt = load_checkpoint(ckpt_path, b.digest);
    check_split_seed(ckpt, b, a);
    const fs::path dir = make_run_dir(cfg, a, "explain");
    const ItemCache cache = build_item_cache(b.train_graph, ckpt.params);

    std::vector<std::pair<int, int>> targets;
    if (!user_id.empty() && !item_id.empty()) {
        const int u = lookup_node(b.ids.user_index, user_id, "user");
        const int t = lookup_node(b.ids.item_index, item_id, "item");
        if (u < 0 || u >= b.train_graph.user_count())
            throw std::runtime_error("user index out of range: " + user_id);
        if (t < 0 || t >= b.train_graph.item_count())
            throw std::runtime_error("item index out of range: " + item_id);
        targets.emplace_back(u, t);
    } else if (pairs > 0) {
        // top-1 recommendation for the first `pairs` test users
        for (int i = 0; i < static_cast<int>(b.split.test_users.size()) && i < pairs; ++i) {
            const int u = b.split.test_users[i];
            const auto ranked = rank_items(u, ckpt.params, b.train_graph, &cache);
            if (!ranked.empty()) targets.emplace_back(u, ranked[0]);
        }
    } else {
        throw std::runtime_error("explain: give --user and --item, or --pairs N");
    }

    std::vector<std::string> artifacts;
    for (auto [u, t] : targets) {
        const Explanation ex = explain(u, t, ckpt.params, b.train_graph, top, &cache);
        const std::string stem = "explanation_u" + std::to_string(u) + "_t" + std::to_string(t);
        if (format == "json" || format == "both") {
            write_text(dir / (stem + ".json"), explanation_to_json(ex, &b.ids));
            artifacts.push_back(stem + ".json");
        }
        if (format == "dot" || format == "both") {
            write_text(dir / (stem + ".dot"), explanation_to_dot(ex, &b.ids));
            artifacts.push_back(stem + ".dot");
        }
    }
    write_manifest(dir, "explain", cfg, artifacts);
    std::cout << "wrote " << artifacts.size() << " explanation file(s)\n"
              << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_faithfulness(const CommonArgs& a, const std::string& ckpt_path, std::string budgets_csv,
                     const std::string& strategy_name_in, const std::string& kind_name_in,
                     int runs) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const ModelCheckpoint ckpt = load_checkpoint(ckpt_path, b.digest);
    check_split_seed(ckpt, b, a);

    std::vector<int> budgets;
    std::stringstream ss(budgets_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) budgets.push_back(std::stoi(tok));

    std::vector<RemovalStrategy> strategies;
    if (strategy_name_in == "model") strategies = {RemovalStrategy::Model};
    else if (strategy_name_in == "random") strategies = {RemovalStrategy::Random};
    else strategies = {RemovalStrategy::Model, RemovalStrategy::Random};

    std::vector<RemovalKind> kinds;
    if (kind_name_in == "items") kinds = {RemovalKind::Items};
    else if (kind_name_in == "entities") kinds = {RemovalKind::Entities};
    else kinds = {RemovalKind::Items, RemovalKind::Entities, RemovalKind::Both};

    ShiftReport all;
    for (RemovalStrategy s : strategies)
        for (RemovalKind k : kinds) {
            const ShiftReport r = faithfulness_shift(ckpt.params, b.train_graph, b.split, budgets,
                                                     s, k, runs, cfg.train.seed);
            all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
        }

    const fs::path dir = make_run_dir(cfg, a, "faithfulness");
    write_text(dir / "shift.tsv", all.to_tsv());
    write_manifest(dir, "faithfulness", cfg, {"shift.tsv"});
    std::cout << all.to_tsv() << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_export_embeddings(const CommonArgs& a, const std::string& ckpt_path) {
    const RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);
    const ModelCheckpoint ckpt = load_checkpoint(ckpt_path, b.digest);
    check_split_seed(ckpt, b, a);
    const fs::path dir = make_run_dir(cfg, a, "export-embeddings");

    std::ostringstream os;
    os.precision(8);
    os << "item\tfactor";
    for (int i = 0; i < ckpt.params.d(); ++i) os << "\tdim" << i;
    os << '\n';
    for (int t = 0; t < b.train_graph.item_count(); ++t) {
        const auto affil = item_affiliation(t, ckpt.params);
        int best = 0;
        for (size_t c = 1; c < affil.size(); ++c)
            if (affil[c] > affil[best]) best = static_cast<int>(c);
        os << (t < static_cast<int>(b.ids.items.size()) ? b.ids.items[t] : std::to_string(t))
           << '\t' << best + 1;
        for (float v : ckpt.params.item_base(t)) os << '\t' << v;
        os << '\n';
    }
    write_text(dir / "embeddings.tsv", os.str());
    write_manifest(dir, "export-embeddings", cfg, {"embeddings.tsv"});
    std::cout << "wrote " << b.train_graph.item_count() << " embedding rows\n"
              << "run dir: " << dir.string() << '\n';
    return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& c_csv, const std::string& mode) {
    RunConfig cfg = resolve_config(a);
    const DataBundle b = load_or_build(cfg, a);

    std::vector<int> c_values;
    std::stringstream ss(c_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) c_values.push_back(std::stoi(tok));
    if (c_values.empty()) throw std::runtime_error("sweep: empty --C list");

    const int base_total = cfg.train.fc.c2 * cfg.train.fc.d;
    const int base_d = cfg.train.fc.d;

    std::ostringstream os;
    os.precision(10);
    os << "C\tD\tndcg@100";
    for (int k : cfg.k_list) os << "\trecall@" << k;
    os << '\n';

    const fs::path dir = make_run_dir(cfg, a, "sweep");
    for (int C : c_values) {
        TrainConfig tc = cfg.train;
        tc.fc.c1 = tc.fc.c2 = C;
        tc.fc.d = mode == "fixed-total" ? std::max(1, base_total / C) : base_d;
        std::cout << "sweep: C=" << C << " D=" << tc.fc.d << '\n';
        const TrainResult r = train(b.train_graph, b.split, tc, b.digest, &std::cout);
        const MetricsReport test =
            evaluate(r.checkpoint.params, b.train_graph, b.split, EvalGroup::Test, cfg.k_list);
        const MetricsReport n100 =
            evaluate(r.checkpoint.params, b.train_graph, b.split, EvalGroup::Test, {100});
        os << C << '\t' << tc.fc.d << '\t' << n100.mean_ndcg[0];
        for (double v : test.mean_recall) os << '\t' << v;
        os << '\n';
        save_checkpoint(r.checkpoint,
                        (dir / ("checkpoint_C" + std::to_string(C) + ".bin")).string());
    }
    write_text(dir / "sweep.tsv", os.str());
    write_manifest(dir, "sweep", cfg, {"sweep.tsv"});
    std::cout << os.str() << "run dir: " << dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"factor-resolved graph-convolutional variational recommender"};
    app.require_subcommand(1);

    CommonArgs build_a, train_a, eval_a, explain_a, faith_a, export_a, sweep_a;
    std::string ckpt, split_name = "test", user_id, item_id, format = "json";
    std::string budgets = "1,2,3,4,5", strategy = "both", kind = "items";
    std::string c_csv, sweep_mode = "fixed-total";
    int top = 5, pairs = 0, runs = 5;
    uint64_t seed_override = 0;
    int epochs_override = 0;

    auto* build = app.add_subcommand("build", "build graph artifacts from TSV inputs");
    add_common(build, build_a);

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, train_a);
    auto* seed_opt = train_cmd->add_option("--seed", seed_override, "override config seed");
    auto* epochs_opt = train_cmd->add_option("--epochs", epochs_override, "override config epochs");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, eval_a);
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--split", split_name, "val or test")
        ->check(CLI::IsMember({"val", "test"}));

    auto* explain_cmd = app.add_subcommand("explain", "export per-prediction explanations");
    add_common(explain_cmd, explain_a);
    explain_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    explain_cmd->add_option("--user", user_id, "user id (string id or dense index)");
    explain_cmd->add_option("--item", item_id, "item id (string id or dense index)");
    explain_cmd->add_option("--top", top, "keep top-N items and entities");
    explain_cmd->add_option("--pairs", pairs, "explain top-1 recommendation for N test users");
    explain_cmd->add_option("--format", format, "json, dot or both")
        ->check(CLI::IsMember({"json", "dot", "both"}));

    auto* faith_cmd = app.add_subcommand("faithfulness", "adversarial-removal shift evaluation");
    add_common(faith_cmd, faith_a);
    faith_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    faith_cmd->add_option("--budgets", budgets, "comma-separated removal budgets");
    faith_cmd->add_option("--strategy", strategy, "model, random or both")
        ->check(CLI::IsMember({"model", "random", "both"}));
    faith_cmd->add_option("--kind", kind, "items, entities or both (default items)")
        ->check(CLI::IsMember({"items", "entities", "both"}));
    faith_cmd->add_option("--runs", runs, "seeded repetitions");

    auto* export_cmd = app.add_subcommand("export-embeddings",
                                          "item base embeddings with argmax-factor labels");
    add_common(export_cmd, export_a);
    export_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "train/eval across factor counts");
    add_common(sweep_cmd, sweep_a);
    sweep_cmd->add_option("--C", c_csv, "comma-separated factor counts")->required();
    sweep_cmd->add_option("--mode", sweep_mode, "fixed-d or fixed-total")
        ->check(CLI::IsMember({"fixed-d", "fixed-total"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) return cmd_build(build_a);
        if (train_cmd->parsed()) {
            if (*seed_opt) train_a.sets.push_back("seed=" + std::to_string(seed_override));
            if (*epochs_opt) train_a.sets.push_back("epochs=" + std::to_string(epochs_override));
            return cmd_train(train_a);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_a, ckpt, split_name);
        if (explain_cmd->parsed())
            return cmd_explain(explain_a, ckpt, user_id, item_id, top, pairs, format);
        if (faith_cmd->parsed()) return cmd_faithfulness(faith_a, ckpt, budgets, strategy, kind, runs);
        if (export_cmd->parsed()) return cmd_export_embeddings(export_a, ckpt);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_a, c_csv, sweep_mode);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
