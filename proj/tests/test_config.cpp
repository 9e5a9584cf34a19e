#include <doctest.h>

#include "depthprune/config.hpp"
#include "depthprune/errors.hpp"

using namespace depthprune;

TEST_CASE("defaults") {
    const Config c;
    CHECK(c.get_int("seed") == 80);
    CHECK(c.get_size("layers") == 12);
    CHECK(c.get_real("lr_params") == 0.01);
    CHECK(c.get_bool("activation"));
    CHECK(c.get_string("cache_cond").empty());
    CHECK_FALSE(c.is_set("seed"));
    const TrainConfig t = c.train_config();
    CHECK(t.block_size == 4);
    CHECK(t.keep == 2);
    CHECK(c.teacher_config().steps == 5000);
    CHECK(c.finetune_config().steps == 2000);
    CHECK(c.benchmark_config().random_trials == 8);
    CHECK_THROWS(c.get_int("nope"));
    CHECK_THROWS(c.get_real("seed"));
}

TEST_CASE("parse_config") {
    const Config c = parse_config("# comment\n  seed = 7  \n\nlr_logits=0.5 # trailing\nactivation = false\n");
    CHECK(c.get_int("seed") == 7);
    CHECK(c.is_set("seed"));
    CHECK(c.get_real("lr_logits") == 0.5);
    CHECK_FALSE(c.get_bool("activation"));
    CHECK_FALSE(c.train_config().activation_enabled);
    CHECK(c.train_config().seed == 7);
    CHECK(c.warnings().empty());
}

TEST_CASE("config errors carry line numbers") {
    try {
        parse_config("seed = 1\nbogus = 2\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 2);
    }
    try {
        parse_config("seed = 1\n\nlayers = twelve\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 3);
        CHECK(std::string(e.what()).find("layers") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("seed 4\n"), ParseError);
    CHECK_THROWS_AS(parse_config("activation = maybe\n"), ParseError);
    CHECK_THROWS_AS(parse_config("layers = -3\n").get_size("layers"), Error);
}

TEST_CASE("duplicate keys warn and the last one wins") {
    const Config c = parse_config("seed = 1\nseed = 2\n");
    CHECK(c.get_int("seed") == 2);
    CHECK(c.warnings().size() == 1);
}

TEST_CASE("resolved lists every key") {
    Config c;
    c.set("k", "2");
    const std::string r = c.resolved();
    CHECK(r.find("k = 2\n") != std::string::npos);
    CHECK(r.find("seed = 80\n") != std::string::npos);
    std::size_t n = 0;
    for (char ch : r) n += ch == '\n';
    CHECK(n == config_schema().size());
}
