#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <sstream>

#include "fedsso/data.hpp"

using namespace fedsso;

TEST_CASE("libsvm parsing basics", "[data]") {
    std::istringstream in("1 1:0.5 3:2.0\n-1 2:1.0\n\n# comment line\n");
    auto samples = parse_libsvm(in, 3);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].label == 1);
    CHECK(samples[0].features == std::vector<double>{0.5, 0.0, 2.0});
    CHECK(samples[1].label == 0);  // -1 remapped
    CHECK(samples[1].features == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("libsvm error contracts", "[data]") {
    {
        std::istringstream in("1 a:b\n");
        CHECK_THROWS_MATCHES(parse_libsvm(in, 3), ParseError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("line 1")));
    }
    {
        std::istringstream in("1 4:2.0\n");
        CHECK_THROWS_AS(parse_libsvm(in, 3), IndexOutOfRange);
    }
    {
        std::istringstream in("1.5 1:2.0\n");
        CHECK_THROWS_AS(parse_libsvm(in, 3), LabelError);
    }
    {
        std::istringstream in("-3 1:2.0\n");
        CHECK_THROWS_AS(parse_libsvm(in, 3), LabelError);
    }
}

TEST_CASE("libsvm round trip preserves content", "[data]") {
    auto samples = synth_blobs(3, 3, 5, 40, 0.5);
    std::ostringstream out;
    emit_libsvm(samples, out);
    std::istringstream in(out.str());
    auto back = parse_libsvm(in, 5);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].label == samples[i].label);
        for (int f = 0; f < 5; ++f)
            CHECK(back[i].features[f] == Catch::Approx(samples[i].features[f]).margin(0.0));
    }
}

TEST_CASE("csv parsing with optional header", "[data]") {
    std::istringstream with_header("label,f1,f2\n0,1.5,2\n1,0,-3.25\n");
    auto a = parse_csv(with_header);
    REQUIRE(a.size() == 2);
    CHECK(a[0].features == std::vector<double>{1.5, 2.0});
    CHECK(a[1].label == 1);

    std::istringstream no_header("0,1,2\n1,3,4\n");
    auto b = parse_csv(no_header);
    REQUIRE(b.size() == 2);

    std::istringstream ragged("0,1,2\n1,3\n");
    CHECK_THROWS_AS(parse_csv(ragged), ParseError);
}

TEST_CASE("synthetic blobs are deterministic and balanced", "[data]") {
    auto a = synth_blobs(5, 3, 4, 10, 0.2);
    auto b = synth_blobs(5, 3, 4, 10, 0.2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].features == b[i].features);  // bitwise
    }
    std::map<int, int> counts;
    for (const auto& s : a) counts[s.label]++;
    CHECK(counts[0] == 4);
    CHECK(counts[1] == 3);
    CHECK(counts[2] == 3);

    CHECK_THROWS_AS(synth_blobs(5, 3, 4, 10, 0.0), InvalidParam);
    CHECK_THROWS_AS(synth_blobs(5, 3, 4, 2, 0.5), InvalidParam);
}

TEST_CASE("label-skew partition conserves samples and respects budgets", "[data]") {
    auto samples = synth_blobs(9, 5, 4, 500, 0.5);
    auto shards = partition_label_skew(samples, 10, 2, 123);
    REQUIRE(shards.size() == 10);

    std::size_t total = 0;
    double wsum = 0.0;
    std::multiset<std::string> seen, want;
    for (const auto& s : samples) {
        std::string key = std::to_string(s.label);
        for (double f : s.features) key += "," + std::to_string(f);
        want.insert(key);
    }
    for (const auto& shard : shards) {
        CHECK_FALSE(shard.samples.empty());
        std::set<int> labels;
        for (const auto& s : shard.samples) {
            labels.insert(s.label);
            std::string key = std::to_string(s.label);
            for (double f : s.features) key += "," + std::to_string(f);
            seen.insert(key);
        }
        CHECK(labels.size() <= 2);
        total += shard.samples.size();
        wsum += shard.weight;
        CHECK(shard.weight ==
              Catch::Approx(shard.samples.size() / 500.0).epsilon(1e-12));
    }
    CHECK(total == samples.size());
    CHECK(wsum == Catch::Approx(1.0).margin(1e-12));
    CHECK(seen == want);  // multiset identity: conservation
}

TEST_CASE("single-client partition holds everything", "[data]") {
    auto samples = synth_blobs(2, 3, 3, 30, 0.5);
    auto shards = partition_label_skew(samples, 1, 3, 1);
    REQUIRE(shards.size() == 1);
    CHECK(shards[0].samples.size() == 30);
    CHECK(shards[0].weight == Catch::Approx(1.0));
}

TEST_CASE("infeasible partitions are rejected", "[data]") {
    auto samples = synth_blobs(2, 5, 3, 50, 0.5);
    CHECK_THROWS_AS(partition_label_skew(samples, 2, 2, 1), InfeasiblePartition);
}

TEST_CASE("manifest partition replays published distributions", "[data]") {
    // the ijcnn-style client 2 row: labels {0,7,8}, sizes {580, 7293, 2787}
    std::vector<Sample> samples;
    auto add = [&](int label, int count) {
        for (int i = 0; i < count; ++i) {
            Sample s;
            s.features = {static_cast<double>(i)};
            s.label = label;
            samples.push_back(s);
        }
    };
    add(0, 7000);
    add(1, 1298);
    add(7, 7293);
    add(8, 6900);
    add(9, 3396);

    std::istringstream manifest_text(
        "# ijcnn-style manifest\n"
        "client 1: 1:1298 9:3396\n"
        "client 2: 0:580 7:7293 8:2787\n");
    auto manifest = parse_manifest(manifest_text);
    auto shards = partition_by_manifest(samples, manifest);
    REQUIRE(shards.size() == 2);
    CHECK(shards[0].client_id == 1);
    CHECK(shards[0].samples.size() == 1298 + 3396);
    CHECK(shards[1].client_id == 2);
    CHECK(shards[1].samples.size() == 580 + 7293 + 2787);
    std::map<int, int> by_label;
    for (const auto& s : shards[1].samples) by_label[s.label]++;
    CHECK(by_label[0] == 580);
    CHECK(by_label[7] == 7293);
    CHECK(by_label[8] == 2787);

    // asking for more than the pool holds fails
    std::istringstream bad("client 3: 9:99999\n");
    auto m2 = parse_manifest(bad);
    CHECK_THROWS_AS(partition_by_manifest(samples, m2), InfeasiblePartition);
}

TEST_CASE("train/test split shapes and determinism", "[data]") {
    auto samples = synth_blobs(4, 2, 3, 100, 0.5);
    auto [train, test] = train_test_split(samples, 0.75, 11);
    CHECK(train.size() == 75);
    CHECK(test.size() == 25);

    auto [t2, s2] = train_test_split(samples, 0.75, 11);
    REQUIRE(t2.size() == train.size());
    for (std::size_t i = 0; i < t2.size(); ++i) CHECK(t2[i].features == train[i].features);

    std::vector<Sample> two(samples.begin(), samples.begin() + 2);
    auto [a, b] = train_test_split(two, 0.5, 1);
    CHECK(a.size() == 1);
    CHECK(b.size() == 1);

    std::vector<Sample> one(samples.begin(), samples.begin() + 1);
    CHECK_THROWS_AS(train_test_split(one, 0.5, 1), TooFewSamples);
    CHECK_THROWS_AS(train_test_split(samples, 0.0, 1), InvalidParam);
}

TEST_CASE("near-zero spread blobs are linearly separable", "[data]") {
    auto samples = synth_blobs(8, 2, 4, 80, 1e-6);
    ModelSpec m = ModelSpec::mclr(2, 4, 0.0);
    ParamVector w(m.dim(), 0.0);
    for (int it = 0; it < 2000; ++it) vec::axpy(-2.0, grad(m, w, samples), w);
    CHECK(accuracy(m, w, samples) >= 0.99);
}
