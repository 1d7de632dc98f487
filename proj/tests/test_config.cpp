#include "doctest.h"
#include "resmatch/config.hpp"
#include "resmatch/errors.hpp"

using namespace resmatch;

TEST_CASE("defaults validate and serialize") {
    DistillConfig cfg;
    cfg.validate();
    const std::string text = serialize_config(cfg);
    DistillConfig parsed = parse_config(text);
    CHECK(parsed.budget == cfg.budget);
    CHECK(parsed.merge_ratio == cfg.merge_ratio);
    CHECK(parsed.seed == cfg.seed);
}

TEST_CASE("parse -> serialize -> parse is a fixed point") {
    const std::string text =
        "# a comment\n"
        "budget = 321\n"
        "arc_count= 2\n"
        "merge_ratio =0.125\n"
        "d_ds = 24\n"
        "d_orig = 32\n"
        "ipc = 3\n"
        "grid = 2x2\n"
        "lambda = 0.75\n"
        "lr = 0.03125\n"
        "params_precision = half16\n"
        "logits_precision = half16\n"
        "scheduler = none\n"
        "seed = 42  # trailing comment\n"
        "data = /tmp/somewhere\n";
    DistillConfig one = parse_config(text);
    const std::string canon = serialize_config(one);
    DistillConfig two = parse_config(canon);
    CHECK(serialize_config(two) == canon);
    CHECK(two.budget == 321);
    CHECK(two.arc_count == 2);
    CHECK(two.merge_ratio == 0.125f);
    CHECK(two.grid == 2);
    CHECK(two.params_precision == Precision::half16);
    CHECK(two.scheduler == LrSchedule::none);
    CHECK(two.data == "/tmp/somewhere");
}

TEST_CASE("non-representable floats still round-trip through text") {
    DistillConfig cfg;
    cfg.lr = 0.1f;
    cfg.lambda = 0.3333333f;
    cfg.merge_ratio = 0.7f;
    DistillConfig again = parse_config(serialize_config(cfg));
    CHECK(again.lr == cfg.lr);
    CHECK(again.lambda == cfg.lambda);
    CHECK(again.merge_ratio == cfg.merge_ratio);
}

TEST_CASE("invalid configs are rejected") {
    CHECK_THROWS_AS(parse_config("nonsense_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("budget\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("budget = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("grid = 3x3\n"), ConfigError);

    DistillConfig cfg;
    cfg.budget = 3;
    cfg.arc_count = 3;  // budget < k+1
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DistillConfig{};
    cfg.merge_ratio = 1.5f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DistillConfig{};
    cfg.d_ds = 40;
    cfg.d_orig = 32;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DistillConfig{};
    cfg.ipc = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
