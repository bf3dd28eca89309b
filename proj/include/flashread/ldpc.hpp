#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flashread/errors.hpp"

namespace flashread {

// Raised when a parity-check graph with the requested degrees cannot be built.
struct ConstructionError : Error {
    using Error::Error;
};

// Sparse binary parity-check code with a precomputed systematic encoder.
struct CodeSpec {
    int n = 0;  // codeword bits
    int m = 0;  // parity checks
    int max_iterations = 20;
    std::vector<std::vector<int>> rows;  // check -> variable indices
    std::vector<std::vector<int>> cols;  // variable -> check indices

    // Encoder data derived by GF(2) elimination of H.
    int rank = 0;
    std::vector<int> pivot_cols;            // rank entries
    std::vector<int> free_cols;             // n - rank entries (message slots)
    std::vector<std::vector<std::uint64_t>> rref;  // rank rows, n-bit bitsets

    int message_length() const { return n - rank; }
    double rate() const { return 1.0 - static_cast<double>(rank) / n; }
};

// Pseudo-random (col_weight, row_weight)-regular code by progressive edge
// growth: column weights are exact, row weights near-uniform, 4-cycles are
// avoided whenever the local graph allows it. Deterministic per seed.
CodeSpec build_regular_code(int n, int col_weight, int row_weight, std::uint64_t seed);

// Systematic encoding: message bits land on the free columns, H*c = 0.
std::vector<std::uint8_t> encode(const CodeSpec& spec, std::span<const std::uint8_t> message);

// Extract the message back out of a codeword's systematic positions.
std::vector<std::uint8_t> extract_message(const CodeSpec& spec,
                                          std::span<const std::uint8_t> codeword);

bool syndrome_ok(const CodeSpec& spec, std::span<const std::uint8_t> bits);

struct DecodeResult {
    std::vector<std::uint8_t> bits;
    bool converged = false;
    int iterations = 0;
};

// Plain min-sum message passing. Input LLRs use the log(P(bit=0)/P(bit=1))
// convention: positive means bit 0. Early exit once all checks pass; the
// converged flag is false after max_iterations without a valid codeword.
DecodeResult min_sum_decode(const CodeSpec& spec, std::span<const double> channel_llrs);

// Coordinate text format: header then one "row col" pair per edge.
void save_code(const CodeSpec& spec, const std::string& path);
CodeSpec load_code(const std::string& path);

}  // namespace flashread
