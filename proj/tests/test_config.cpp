#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "facrec/config.hpp"

using namespace facrec;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& content) {
        static int counter = 0;
        path = "cfg_tmp_" + std::to_string(counter++) + ".cfg";
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("parse_config reads typed keys with comments") {
    TempFile f(
        "# preset\n"
        "interactions = data/i.tsv\n"
        "item_entity = data/ie.tsv\n"
        "gamma = 0.1\n"
        "d = 16\n"
        "c = 4\n"
        "lr = 2e-4\n"
        "l2_weight = 1e-8\n"
        "batch_size = 128   # users per batch\n"
        "epochs = 100\n"
        "k_list = 2,10,50,100\n"
        "decoder_tied = false\n");
    const RunConfig cfg = parse_config(f.path);
    CHECK(cfg.train.fc.gamma == doctest::Approx(0.1f));
    CHECK(cfg.train.fc.d == 16);
    CHECK(cfg.train.fc.c1 == 4);
    CHECK(cfg.train.fc.c2 == 4);
    CHECK(cfg.train.lr == doctest::Approx(2e-4f));
    CHECK(cfg.train.batch_size == 128);
    CHECK(cfg.train.epochs == 100);
    CHECK(cfg.k_list == std::vector<int>{2, 10, 50, 100});
    CHECK(cfg.train.decoder_tied == false);
    CHECK(cfg.interactions == "data/i.tsv");
    cfg.validate();
}

TEST_CASE("validation rejects out-of-domain values") {
    TempFile f("gamma = -1\n");
    const RunConfig cfg = parse_config(f.path);
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    TempFile f2("train_frac = 1.5\n");
    CHECK_THROWS_AS(parse_config(f2.path).validate(), std::runtime_error);
}

TEST_CASE("unknown keys and malformed lines name the location") {
    TempFile f("epochs = 10\nwat = 3\n");
    CHECK_THROWS_WITH_AS(parse_config(f.path), doctest::Contains(":2:"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config(f.path), doctest::Contains("wat"), std::runtime_error);

    TempFile g("epochs 10\n");
    CHECK_THROWS_WITH_AS(parse_config(g.path), doctest::Contains(":1:"), std::runtime_error);

    TempFile h("epochs = ten\n");
    CHECK_THROWS_WITH_AS(parse_config(h.path), doctest::Contains("integer"), std::runtime_error);
}

TEST_CASE("overrides take precedence over file values") {
    TempFile f("epochs = 100\nseed = 1\n");
    RunConfig cfg = parse_config(f.path);
    apply_key(cfg, "epochs", "2", "--set");
    apply_key(cfg, "seed", "7", "--set");
    CHECK(cfg.train.epochs == 2);
    CHECK(cfg.train.seed == 7);
    CHECK_THROWS_AS(apply_key(cfg, "nope", "1", "--set"), std::runtime_error);
}

TEST_CASE("missing required paths are reported") {
    TempFile f("epochs = 1\n");
    const RunConfig cfg = parse_config(f.path);
    CHECK_THROWS_WITH_AS(cfg.validate_paths(), doctest::Contains("interactions"),
                         std::runtime_error);
}

TEST_CASE("render lists every key") {
    TempFile f("interactions = a\nitem_entity = b\n");
    const RunConfig cfg = parse_config(f.path);
    const std::string r = cfg.render();
    for (const char* key :
         {"interactions", "item_entity", "entity_entity", "out_dir", "k_list", "n_val", "n_test",
          "train_frac", "d", "c1", "c2", "gamma", "lr", "l2_weight", "batch_size", "epochs",
          "seed", "mc_samples", "decoder_tied", "softmax_samples",
          "exclude_target_from_neighborhood", "init_scale", "grad_chunks", "threads"})
        CHECK(r.find(key) != std::string::npos);
}
