#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "flashread/infotheory.hpp"
#include "flashread/ldpc.hpp"
#include "flashread/rng.hpp"

using namespace flashread;

namespace {

std::vector<std::uint8_t> random_message(const CodeSpec& code, Rng& rng) {
    std::vector<std::uint8_t> msg(code.message_length());
    for (auto& b : msg) b = static_cast<std::uint8_t>(rng.next_u64() & 1);
    return msg;
}

}  // namespace

TEST_CASE("build_regular_code degree contract") {
    CodeSpec code = build_regular_code(16, 3, 6, 1);
    CHECK(code.m == 8);
    for (const auto& col : code.cols) CHECK(col.size() == 3);
    // No duplicate edges.
    for (const auto& col : code.cols) {
        std::set<int> uniq(col.begin(), col.end());
        CHECK(uniq.size() == col.size());
    }
    CHECK_THROWS_AS(build_regular_code(8, 3, 2, 1), ConstructionError);
}

TEST_CASE("build determinism per seed") {
    CodeSpec a = build_regular_code(128, 3, 6, 42);
    CodeSpec b = build_regular_code(128, 3, 6, 42);
    CodeSpec c = build_regular_code(128, 3, 6, 43);
    CHECK(a.rows == b.rows);
    CHECK(a.rows != c.rows);
}

TEST_CASE("desk-scale code rate") {
    CodeSpec code = build_regular_code(4096, 3, 17, 7);
    CHECK(std::abs(code.rate() - (1.0 - 3.0 / 17.0)) < 0.01);
    // Row weights near-uniform.
    std::size_t min_w = 1000, max_w = 0;
    for (const auto& row : code.rows) {
        min_w = std::min(min_w, row.size());
        max_w = std::max(max_w, row.size());
    }
    CHECK(max_w <= 17);
    CHECK(min_w + 2 >= max_w);
}

TEST_CASE("no 4-cycles at moderate density") {
    CodeSpec code = build_regular_code(512, 3, 6, 5);
    // Two checks may share at most one variable.
    for (int v = 0; v < code.n; ++v) {
        for (std::size_t i = 0; i < code.cols[v].size(); ++i) {
            for (std::size_t j = i + 1; j < code.cols[v].size(); ++j) {
                const auto& r1 = code.rows[code.cols[v][i]];
                const auto& r2 = code.rows[code.cols[v][j]];
                int shared = 0;
                for (int w : r1) {
                    if (std::find(r2.begin(), r2.end(), w) != r2.end()) ++shared;
                }
                CHECK(shared == 1);  // only v itself
            }
        }
    }
}

TEST_CASE("encode produces codewords, systematic on free columns") {
    Rng rng(9);
    CodeSpec code = build_regular_code(256, 3, 8, 2);
    std::vector<std::uint8_t> zero(code.message_length(), 0);
    std::vector<std::uint8_t> zc = encode(code, zero);
    for (auto b : zc) CHECK(b == 0);

    for (int i = 0; i < 20; ++i) {
        auto msg = random_message(code, rng);
        auto cw = encode(code, msg);
        CHECK(syndrome_ok(code, cw));
        CHECK(extract_message(code, cw) == msg);
    }
}

TEST_CASE("min-sum decodes noiseless LLRs in at most one iteration") {
    Rng rng(10);
    CodeSpec code = build_regular_code(256, 3, 8, 3);
    auto cw = encode(code, random_message(code, rng));
    std::vector<double> llrs(code.n);
    for (int i = 0; i < code.n; ++i) llrs[i] = cw[i] ? -kLlrMax : kLlrMax;
    DecodeResult res = min_sum_decode(code, llrs);
    CHECK(res.converged);
    CHECK(res.iterations <= 1);
    CHECK(res.bits == cw);
}

TEST_CASE("decoder output always satisfies the checks when converged") {
    Rng rng(12);
    CodeSpec code = build_regular_code(512, 3, 9, 4);
    for (int trial = 0; trial < 30; ++trial) {
        auto cw = encode(code, random_message(code, rng));
        std::vector<double> llrs(code.n);
        for (int i = 0; i < code.n; ++i) {
            double mag = 2.0 + 4.0 * rng.uniform01();
            if (rng.uniform01() < 0.04) mag = -mag;  // 4% flipped signs
            llrs[i] = (cw[i] ? -mag : mag);
        }
        DecodeResult res = min_sum_decode(code, llrs);
        if (res.converged) CHECK(syndrome_ok(code, res.bits));
    }
}

TEST_CASE("min-sum is invariant to positive LLR scaling") {
    Rng rng(13);
    CodeSpec code = build_regular_code(512, 3, 9, 8);
    auto cw = encode(code, random_message(code, rng));
    std::vector<double> base(code.n);
    for (int i = 0; i < code.n; ++i) {
        double mag = 0.5 + 4.0 * rng.uniform01();
        if (rng.uniform01() < 0.05) mag = -mag;
        base[i] = (cw[i] ? -mag : mag);
    }
    std::vector<std::vector<std::uint8_t>> outs;
    for (double scale : {0.5, 1.0, 2.0}) {
        std::vector<double> llrs(code.n);
        for (int i = 0; i < code.n; ++i) llrs[i] = scale * base[i];
        outs.push_back(min_sum_decode(code, llrs).bits);
    }
    CHECK(outs[0] == outs[1]);
    CHECK(outs[1] == outs[2]);
}

TEST_CASE("operating points: low flip rate decodes, heavy noise fails") {
    CodeSpec code = build_regular_code(4096, 3, 17, 7);
    code.max_iterations = 20;
    int ok = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(derive_seed(100, trial));
        auto cw = encode(code, random_message(code, rng));
        std::vector<double> llrs(code.n);
        for (int i = 0; i < code.n; ++i) {
            double mag = (rng.uniform01() < 0.005) ? -4.0 : 4.0;
            llrs[i] = (cw[i] ? -mag : mag);
        }
        DecodeResult res = min_sum_decode(code, llrs);
        if (res.converged && res.bits == cw) ++ok;
    }
    CHECK(static_cast<double>(ok) / trials > 0.99);

    int ok_heavy = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(derive_seed(200, trial));
        auto cw = encode(code, random_message(code, rng));
        std::vector<double> llrs(code.n);
        for (int i = 0; i < code.n; ++i) {
            double mag = (rng.uniform01() < 0.2) ? -4.0 : 4.0;
            llrs[i] = (cw[i] ? -mag : mag);
        }
        DecodeResult res = min_sum_decode(code, llrs);
        if (res.converged && res.bits == cw) ++ok_heavy;
    }
    CHECK(ok_heavy == 0);
}

TEST_CASE("code file roundtrip") {
    CodeSpec code = build_regular_code(64, 3, 6, 21);
    save_code(code, "test_code.tmp");
    CodeSpec loaded = load_code("test_code.tmp");
    CHECK(loaded.n == code.n);
    CHECK(loaded.m == code.m);
    CHECK(loaded.rows == code.rows);
    CHECK(loaded.rank == code.rank);
    std::remove("test_code.tmp");
    CHECK_THROWS_AS(load_code("missing_code.tmp"), FileFormatError);
}
