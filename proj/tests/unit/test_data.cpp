#include <cmath>
#include <sstream>

#include "doctest.h"
#include "lbs/data.hpp"
#include "lbs/error.hpp"
#include "lbs/pipeline.hpp"
#include "lbs/textcodec.hpp"

using namespace lbs;
using namespace lbs::data;

namespace {

std::vector<Observation> parse(const std::string& s) {
    std::istringstream in(s);
    return parse_jsonl(in);
}

std::vector<Observation> series(std::size_t n) {
    std::vector<Observation> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<long>(i), "", static_cast<double>(i), {}, {}});
    return out;
}

}  // namespace

TEST_CASE("jsonl loading") {
    SUBCASE("empty input") {
        CHECK(parse("").empty());
        CHECK(parse("\n  \n").empty());
    }
    SUBCASE("fields") {
        auto obs = parse(R"({"t":0,"date":"2014-01-01","value":1.5,"text":"calm"}
{"t":1,"date":"2014-01-02","value":-2,"text":null}
{"t":3,"value":4}
)");
        REQUIRE(obs.size() == 3);
        CHECK(obs[0].text == "calm");
        CHECK_FALSE(obs[1].text.has_value());
        CHECK(obs[1].value == -2.0);
        CHECK(obs[2].date.empty());
    }
    SUBCASE("missing value names the field and the line") {
        try {
            parse("{\"t\":0,\"value\":1}\n{\"t\":1,\"date\":\"x\"}\n");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("line 2") != std::string::npos);
            CHECK(msg.find("'value'") != std::string::npos);
        }
    }
    SUBCASE("malformed JSON") {
        CHECK_THROWS_WITH_AS(parse("{\"t\":0,\"value\":1}\n{oops\n"), doctest::Contains("line 2"), FormatError);
    }
    SUBCASE("out-of-order t is an error, never reordered") {
        CHECK_THROWS_AS(parse("{\"t\":2,\"value\":1}\n{\"t\":1,\"value\":1}\n"), DataError);
        CHECK_THROWS_AS(parse("{\"t\":2,\"value\":1}\n{\"t\":2,\"value\":1}\n"), DataError);
    }
    SUBCASE("separate series keep separate orderings") {
        auto obs = parse("{\"t\":5,\"value\":1,\"series\":\"a\"}\n{\"t\":0,\"value\":1,\"series\":\"b\"}\n");
        CHECK(obs.size() == 2);
    }
    SUBCASE("write then load") {
        std::vector<Observation> obs{{0, "2014-01-01", 0.1, "some text \"quoted\" \xc3\xa9", {}},
                                     {1, "2014-01-02", -1e-17, std::nullopt, {}},
                                     {7, "2014-01-08", 123456.789012345, "", {}}};
        std::ostringstream out;
        write_jsonl(out, obs);
        CHECK(parse(out.str()) == obs);
    }
}

TEST_CASE("8-1-1 split") {
    auto check = [](std::size_t n, std::size_t tr, std::size_t va, std::size_t te) {
        const auto s = series(n);
        const auto sp = split_811(s);
        CHECK(sp.train.size() == tr);
        CHECK(sp.val.size() == va);
        CHECK(sp.test.size() == te);
        std::vector<Observation> all = sp.train;
        all.insert(all.end(), sp.val.begin(), sp.val.end());
        all.insert(all.end(), sp.test.begin(), sp.test.end());
        CHECK(all == s);
    };
    check(100, 80, 10, 10);
    check(10, 8, 1, 1);
    check(4000, 3200, 400, 400);
    check(19, 15, 1, 3);
    CHECK_THROWS_AS(split_sizes(9), DataError);
}

TEST_CASE("normalization") {
    SUBCASE("constant series") {
        std::vector<Observation> s = series(12);
        for (auto& o : s) o.value = 3.5;
        const auto st = compute_norm_stats(s);
        CHECK(st.std == 1.0);
        CHECK(st.degenerate);
        for (const auto& o : s) CHECK(normalize(o.value, st) == 0.0);
    }
    SUBCASE("roundtrip") {
        Rng rng(3);
        std::vector<double> v(500);
        for (auto& x : v) x = rng.uniform(-100, 100);
        const NormStats st{12.5, 3.25, false};
        const auto back = denormalize(normalize(v, st), st);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(back[i] - v[i]) <= 1e-6);
    }
    SUBCASE("train split is standardized") {
        Rng rng(4);
        std::vector<Observation> s = series(1000);
        for (auto& o : s) o.value = 5 + 3 * rng.normal();
        const auto sp = split_811(s);
        const auto st = compute_norm_stats(sp.train);
        double m = 0, m2 = 0;
        for (const auto& o : sp.train) {
            const double z = normalize(o.value, st);
            m += z;
            m2 += z * z;
        }
        m /= static_cast<double>(sp.train.size());
        m2 /= static_cast<double>(sp.train.size());
        CHECK(std::abs(m) <= 1e-6);
        CHECK(std::abs(std::sqrt(m2 - m * m) - 1) <= 1e-6);
    }
    SUBCASE("prepared data uses train statistics only") {
        std::vector<Observation> s = series(100);
        for (auto& o : s) o.value = o.t < 80 ? 1.0 * (o.t % 2) : 1000.0;
        const auto d = prepare(s, false);
        CHECK(d.norm.mean == doctest::Approx(0.5));
        CHECK(d.norm.std == doctest::Approx(0.5));
        CHECK(d.sizes.train == 80);
        CHECK(d.test_begin() == 90);
        CHECK(d.inputs[95].y == doctest::Approx((1000.0 - 0.5) / 0.5));
    }
}

TEST_CASE("step inputs") {
    std::vector<Observation> s{{0, "d", 2.0, "ab", {}}, {1, "d", 4.0, std::nullopt, {}}};
    const NormStats st{3, 1, false};
    const auto with = to_step_inputs(s, st, true);
    CHECK(with[0].y == -1.0f);
    CHECK(with[0].tokens == text::tokenize("ab"));
    CHECK_FALSE(with[1].tokens.has_value());
    const auto without = to_step_inputs(s, st, false);
    CHECK_FALSE(without[0].tokens.has_value());
}

TEST_CASE("synthetic generator") {
    SUBCASE("noise-free sinusoid") {
        SynthConfig c;
        c.steps = 300;
        c.event_rate = 0;
        c.noise_lo = c.noise_hi = 0;
        c.slope = 0;
        const auto ds = synth_generate(c);
        for (const auto& o : ds.observations)
            CHECK(std::abs(o.value - c.amplitude * std::sin(2 * std::numbers::pi * static_cast<double>(o.t) / c.period)) <= 1e-6);
    }
    SUBCASE("same seed, same dataset") {
        SynthConfig c;
        c.steps = 500;
        const auto a = synth_generate(c), b = synth_generate(c);
        CHECK(a.observations == b.observations);
        CHECK(a.labels.event_fired == b.labels.event_fired);
        c.seed = 2;
        CHECK_FALSE(synth_generate(c).observations == a.observations);
    }
    SUBCASE("event frequency") {
        SynthConfig c;
        c.steps = 5000;
        c.event_rate = 0.05;
        const auto ds = synth_generate(c);
        double n = 0;
        for (int e : ds.labels.event_fired) n += e;
        const double se = std::sqrt(5000 * 0.05 * 0.95);
        CHECK(std::abs(n - 250) <= 3 * se);
    }
    SUBCASE("forewarnings appear exactly at events, and shifts follow them") {
        SynthConfig c;
        c.steps = 2000;
        c.event_rate = 0.1;
        c.event_lead = 3;
        c.event_shift = 1.0;
        const auto ds = synth_generate(c);
        for (std::size_t t = 0; t < ds.observations.size(); ++t) {
            const bool warned = ds.observations[t].text->find("alert:") != std::string::npos;
            REQUIRE(warned == (ds.labels.event_fired[t] == 1));
            bool active = false;
            for (std::size_t k = 1; k <= 3 && k <= t; ++k) active |= ds.labels.event_fired[t - k] == 1;
            REQUIRE(active == (ds.labels.shift_active[t] == 1));
        }
    }
    SUBCASE("regimes split each period in half") {
        SynthConfig c;
        c.steps = 80;
        c.period = 40;
        const auto ds = synth_generate(c);
        CHECK(ds.labels.regime[0] == 0);
        CHECK(ds.labels.regime[19] == 0);
        CHECK(ds.labels.regime[20] == 1);
        CHECK(ds.labels.regime[39] == 1);
        CHECK(ds.labels.regime[40] == 0);
    }
    SUBCASE("text is lossless through the tokenizer and dated") {
        SynthConfig c;
        c.steps = 400;
        const auto ds = synth_generate(c);
        for (const auto& o : ds.observations) {
            REQUIRE(text::detokenize(text::tokenize(*o.text)) == *o.text);
            REQUIRE(o.text->rfind("DATE=" + o.date + " ", 0) == 0);
        }
        CHECK(ds.observations[31].date == "2014-02-01");
    }
    SUBCASE("invalid configurations") {
        SynthConfig c;
        c.steps = 0;
        CHECK_THROWS_AS(synth_generate(c), UsageError);
        c = {};
        c.event_rate = 1.5;
        CHECK_THROWS_AS(c.validate(), UsageError);
        c = {};
        c.period = 1;
        CHECK_THROWS_AS(c.validate(), UsageError);
    }
}

TEST_CASE("calendar arithmetic") {
    CHECK(add_days("2014-01-01", 0) == "2014-01-01");
    CHECK(add_days("2016-02-28", 1) == "2016-02-29");
    CHECK(add_days("2015-02-28", 1) == "2015-03-01");
    CHECK(add_days("2014-12-31", 1) == "2015-01-01");
    CHECK(add_days("2014-01-01", 365 * 4 + 1) == "2018-01-01");
    CHECK_THROWS_AS(add_days("yesterday", 1), FormatError);
}
