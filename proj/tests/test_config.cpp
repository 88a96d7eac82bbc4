#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "ssnet/config.hpp"
#include "ssnet/error.hpp"

using namespace ssnet;

namespace {

TrainConfig parse(const std::string& text)
{
    std::istringstream is(text);
    return parse_config(is);
}

std::string bad_config_message(const std::string& text)
{
    try {
        parse(text);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::bad_config);
        return e.what();
    }
    FAIL("accepted: " << text);
    return {};
}

} // namespace

TEST_CASE("every key is documented and unique")
{
    const auto keys = config_keys();
    std::set<std::string> names;
    for (const auto& k : keys) {
        CHECK_FALSE(k.help.empty());
        CHECK(names.insert(k.name).second);
        CHECK(k.name.find('.') != std::string::npos);
    }
    for (const char* required : {"adv.epsilon", "ramp.lambda_max_cs", "data.labeled_fraction", "proto.k",
                                 "proto.threshold", "adv.xi", "ramp.lambda_max_lds", "net.d_proj", "train.lr0"})
        CHECK(names.count(required) == 1);
}

TEST_CASE("empty input yields the defaults and the dump lists every key")
{
    CHECK(parse("") == TrainConfig{});
    CHECK(parse("# only a comment\n\n   \n") == TrainConfig{});
    const std::string dump = dump_config(TrainConfig{});
    std::istringstream is(dump);
    std::size_t lines = 0;
    for (std::string l; std::getline(is, l);) ++lines;
    CHECK(lines == config_keys().size());
}

TEST_CASE("canonical dump re-parses to an equal config")
{
    TrainConfig cfg;
    cfg.total_iters = 123;
    cfg.lr0 = 0.1 + 0.2; // not a short decimal
    cfg.adv.epsilon = 1.0 / 3.0;
    cfg.adv.kind = DiscrepancyKind::kl;
    cfg.proto.detach = false;
    cfg.weighting = WeightScaling::unit_sum;
    cfg.net.arch = Arch::conv_only;
    cfg.net.leaky_slope = 0.2f;
    cfg.data.kind = "two-moons";
    cfg.data.train_dir = "/tmp/some dir/train";
    cfg.data.data_seed = 18446744073709551615ull;
    cfg.augment = false;
    const TrainConfig back = parse(dump_config(cfg));
    CHECK(back == cfg);
    CHECK(dump_config(back) == dump_config(cfg));
    for (const auto& k : config_keys()) CHECK(get_config_value(back, k.name) == get_config_value(cfg, k.name));
}

TEST_CASE("values, whitespace and comments")
{
    const TrainConfig c = parse("  adv.epsilon=2.5   # trailing comment\n"
                                "ramp.lambda_max_cs = 0.25\r\n"
                                "data.labeled_fraction\t=\t0.1\n"
                                "train.deterministic = 0\n");
    CHECK(c.adv.epsilon == 2.5);
    CHECK(c.ramp.lambda_max_cs == 0.25);
    CHECK(c.data.labeled_fraction == 0.1);
    CHECK_FALSE(c.deterministic);

    TrainConfig s;
    set_config_value(s, "proto.k", "5");
    CHECK(s.proto.k == 5);
    CHECK(get_config_value(s, "proto.k") == "5");
}

TEST_CASE("errors name the offending key")
{
    CHECK(bad_config_message("adv.epsilom = 1\n").find("adv.epsilom") != std::string::npos);
    CHECK(bad_config_message("proto.k = -3\n").find("proto.k") != std::string::npos);
    CHECK(bad_config_message("adv.epsilon = ten\n").find("adv.epsilon") != std::string::npos);
    CHECK(bad_config_message("train.augment = maybe\n").find("train.augment") != std::string::npos);
    CHECK(bad_config_message("net.arch = resnet\n").find("net.arch") != std::string::npos);
    CHECK(bad_config_message("just words\n").find("line 1") != std::string::npos);
    CHECK(bad_config_message("train.lr0 = 0\n").find("lr0") != std::string::npos);
    CHECK(bad_config_message("train.decay_factor = 1.5\n").find("decay_factor") != std::string::npos);

    try {
        load_config("/nonexistent/run.cfg");
        FAIL("expected IoFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io_failure);
    }
}
