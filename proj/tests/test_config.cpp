#include <catch_amalgamated.hpp>

#include "consensus/config.hpp"

using namespace consensus;

TEST_CASE("empty converge config uses desk-scale defaults") {
    const RunConfig c = parse_config("{}", Command::Converge);
    REQUIRE(c.objective == "ackley");
    REQUIRE(c.dimension == 2);
    REQUIRE(c.method == Method::CboIsotropic);
    REQUIRE(c.beta == 3.0);
    REQUIRE(c.sigma == 0.2);
    REQUIRE(c.theta() == Catch::Approx(0.02).margin(1e-15));
    REQUIRE(c.dt == 0.01);
    REQUIRE(c.final_time == 1.0);
    REQUIRE(c.count_inf == 32768);
    REQUIRE(c.realizations == 20);
    REQUIRE(c.moment_exponent == 2.0);
    REQUIRE(c.fit_min_size == 160);
    REQUIRE(c.subsystem_sizes.size() == 10);
    REQUIRE(c.subsystem_sizes.front() == 10);
    REQUIRE(c.subsystem_sizes.back() == 5120);
    REQUIRE(c.grid().steps == 100);
}

TEST_CASE("sample command defaults to cbs sampling of the quadratic") {
    const RunConfig c = parse_config("{}", Command::Sample);
    REQUIRE(c.method == Method::CbsSampling);
    REQUIRE(c.objective == "quadratic");
}

TEST_CASE("bad values are rejected with the key named") {
    REQUIRE_THROWS_WITH(parse_config(R"({"beta": -1})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("beta"));
    REQUIRE_THROWS_WITH(parse_config(R"({"dt": 0})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("dt"));
    REQUIRE_THROWS_WITH(parse_config(R"({"J": 2.5})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("J"));
    REQUIRE_THROWS_WITH(parse_config(R"({"seed": -3})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("seed"));
    REQUIRE_THROWS_WITH(parse_config(R"({"method": "sgd"})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("method"));
    REQUIRE_THROWS_AS(parse_config(R"({"objective": "rosenbrock"})",
                                   Command::Optimize),
                      std::invalid_argument);
}

TEST_CASE("unknown keys are rejected") {
    REQUIRE_THROWS_WITH(parse_config(R"({"gamma": 1})", Command::Optimize),
                        Catch::Matchers::ContainsSubstring("gamma"));
    REQUIRE_THROWS_AS(parse_config("[]", Command::Optimize), ConfigError);
    REQUIRE_THROWS_AS(parse_config("not json", Command::Optimize), ConfigError);
}

TEST_CASE("converge guards the J_list against J_inf and ordering") {
    REQUIRE_THROWS_WITH(
        parse_config(R"({"J_list": [10, 100], "J_inf": 50})", Command::Converge),
        Catch::Matchers::ContainsSubstring("J_inf"));
    REQUIRE_THROWS_WITH(parse_config(R"({"J_list": [100, 10]})", Command::Converge),
                        Catch::Matchers::ContainsSubstring("ascending"));
    REQUIRE_THROWS_AS(parse_config(R"({"J_list": []})", Command::Converge),
                      ConfigError);
}

TEST_CASE("T must be a multiple of dt") {
    const RunConfig c = parse_config(R"({"dt": 0.3, "T": 1.0})", Command::Optimize);
    REQUIRE_THROWS_AS(c.grid(), ConfigError);
}

TEST_CASE("serialization round-trips and hashing ignores threads") {
    RunConfig c = parse_config(R"({"beta": 7.5, "seed": 42, "J": 64})",
                               Command::Optimize);
    const std::string text = serialize_config(c);
    const RunConfig back = parse_config(text, Command::Optimize);
    REQUIRE(serialize_config(back) == text);
    REQUIRE(config_hash(back) == config_hash(c));

    RunConfig threaded = c;
    threaded.threads = 8;
    REQUIRE(config_hash(threaded) == config_hash(c));

    RunConfig other = c;
    other.beta = 8.0;
    REQUIRE(config_hash(other) != config_hash(c));
}
