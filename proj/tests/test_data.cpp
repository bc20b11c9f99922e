#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "squat/data.hpp"
#include "squat/rng.hpp"

using namespace squat;

TEST_CASE("two moons with zero noise lies on the half-circles") {
    Dataset ds = gen_two_moons(400, 0.0, 3);
    for (std::size_t i = 0; i < ds.n(); ++i) {
        double x = ds.features.data[i * 2], y = ds.features.data[i * 2 + 1];
        double r2 = ds.labels[i] == 0 ? x * x + y * y
                                      : (x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5);
        CHECK(r2 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("generation is deterministic per seed") {
    Dataset a = gen_two_moons(200, 0.1, 9);
    Dataset b = gen_two_moons(200, 0.1, 9);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
    CHECK(a.train_idx == b.train_idx);
    Dataset c = gen_two_moons(200, 0.1, 10);
    CHECK(a.features.data != c.features.data);
}

TEST_CASE("blobs with far centers are linearly separable (perceptron oracle)") {
    Dataset ds = gen_blobs(300, 2, 0.3, 5);
    // brute-force perceptron on the raw points
    double w0 = 0, w1 = 0, b = 0;
    bool separated = false;
    for (int epoch = 0; epoch < 200 && !separated; ++epoch) {
        separated = true;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            double x = ds.features.data[i * 2], y = ds.features.data[i * 2 + 1];
            int target = ds.labels[i] == 0 ? -1 : 1;
            double score = w0 * x + w1 * y + b;
            if (target * score <= 0) {
                separated = false;
                w0 += target * x;
                w1 += target * y;
                b += target;
            }
        }
    }
    CHECK(separated);
}

TEST_CASE("splits are disjoint and covering, 80/20") {
    Dataset ds = gen_blobs(100, 3, 0.5, 1);
    CHECK(ds.train_idx.size() == 80);
    CHECK(ds.eval_idx.size() == 20);
    std::vector<bool> seen(100, false);
    for (std::size_t i : ds.train_idx) seen[i] = true;
    for (std::size_t i : ds.eval_idx) {
        CHECK(!seen[i]);
        seen[i] = true;
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool x) { return x; }));
}

TEST_CASE("csv round trip preserves f64 values") {
    Dataset ds = gen_two_moons(50, 0.2, 21);
    std::string path = "test_roundtrip.csv";
    save_csv(ds, path);
    Dataset back = load_csv(path);
    CHECK(back.features.data == ds.features.data);
    CHECK(back.labels == ds.labels);
    std::remove(path.c_str());
}

TEST_CASE("csv rejects malformed input with line numbers") {
    std::string path = "test_bad.csv";
    {
        std::ofstream f(path);
        f << "f0,f1,label\n1.0,2.0,0\nNaN,1.0,1\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains(":3"), std::runtime_error);
    {
        std::ofstream f(path);
        f << "";
    }
    CHECK_THROWS_AS(load_csv(path), std::runtime_error);
    {
        std::ofstream f(path);
        f << "f0,f1,label\n1.0,2.0\n";
    }
    CHECK_THROWS_AS(load_csv(path), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("csv parses a small fixture") {
    std::string path = "test_fixture.csv";
    {
        std::ofstream f(path);
        f << "f0,f1,f2,label\n1,2,3,0\n4,5,6,1\n7,8,9,1\n";
    }
    Dataset ds = load_csv(path);
    CHECK(ds.n() == 3);
    CHECK(ds.dim() == 3);
    CHECK(ds.labels == std::vector<int>{0, 1, 1});
    CHECK(ds.features.data[4] == 5.0);
    std::remove(path.c_str());
}

TEST_CASE("batches: multiset identity and determinism") {
    Dataset ds = gen_blobs(97, 3, 0.5, 2);
    auto bs = train_batches(ds, 32, 4, 0);
    CHECK(bs.size() == 3);  // 77 train rows -> 32+32+13
    std::size_t total = 0;
    std::map<std::vector<double>, int> seen;
    for (const auto& b : bs) {
        total += b.size();
        for (std::size_t i = 0; i < b.size(); ++i)
            seen[{b.x.data[i * 2], b.x.data[i * 2 + 1]}]++;
    }
    CHECK(total == ds.train_idx.size());
    std::map<std::vector<double>, int> expect;
    for (std::size_t r : ds.train_idx)
        expect[{ds.features.data[r * 2], ds.features.data[r * 2 + 1]}]++;
    CHECK(seen == expect);

    auto bs2 = train_batches(ds, 32, 4, 0);
    for (std::size_t i = 0; i < bs.size(); ++i) CHECK(bs[i].x.data == bs2[i].x.data);
    auto bs3 = train_batches(ds, 32, 4, 1);  // different epoch, different order
    bool any_diff = false;
    for (std::size_t i = 0; i < bs.size(); ++i)
        if (bs[i].x.data != bs3[i].x.data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("oversized batch keeps the full multiset") {
    Dataset ds = gen_blobs(40, 2, 0.5, 2);
    auto bs = train_batches(ds, 1000, 4, 0);
    CHECK(bs.size() == 1);
    CHECK(bs[0].size() == ds.train_idx.size());
}
