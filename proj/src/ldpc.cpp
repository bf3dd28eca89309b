#include "flashread/ldpc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "flashread/rng.hpp"

namespace flashread {

namespace {

// Break 4-cycles by degree-preserving edge swaps: when two variables share a
// pair of checks, one offending edge is swapped with a random non-conflicting
// edge. Residual cycles may remain at extreme densities.
void repair_four_cycles(CodeSpec& spec, Rng& rng, int max_rounds) {
    auto adjacent = [&](int v, int c) {
        return std::find(spec.cols[v].begin(), spec.cols[v].end(), c) != spec.cols[v].end();
    };
    for (int round = 0; round < max_rounds; ++round) {
        // Find one variable per duplicated check pair.
        std::vector<std::pair<std::uint64_t, int>> pairs;
        for (int v = 0; v < spec.n; ++v) {
            const auto& cs = spec.cols[v];
            for (std::size_t i = 0; i < cs.size(); ++i) {
                for (std::size_t j = i + 1; j < cs.size(); ++j) {
                    pairs.emplace_back((static_cast<std::uint64_t>(cs[i]) << 32) |
                                           static_cast<std::uint32_t>(cs[j]),
                                       v);
                }
            }
        }
        std::sort(pairs.begin(), pairs.end());
        std::vector<std::pair<int, int>> offenders;  // (variable, check to move)
        for (std::size_t i = 1; i < pairs.size(); ++i) {
            if (pairs[i].first == pairs[i - 1].first) {
                offenders.emplace_back(pairs[i].second,
                                       static_cast<int>(pairs[i].first & 0xffffffffu));
            }
        }
        if (offenders.empty()) return;
        for (auto [v, c] : offenders) {
            if (!adjacent(v, c)) continue;  // already rewired this round
            // Swap (v,c) with a random edge (w,d): degrees stay untouched.
            bool done = false;
            for (int tries = 0; tries < 64 && !done; ++tries) {
                const int w = static_cast<int>(rng.below(static_cast<std::uint32_t>(spec.n)));
                if (w == v) continue;
                const auto& wc = spec.cols[w];
                const int d = wc[rng.below(static_cast<std::uint32_t>(wc.size()))];
                if (d == c || adjacent(v, d) || adjacent(w, c)) continue;
                *std::find(spec.cols[v].begin(), spec.cols[v].end(), c) = d;
                *std::find(spec.cols[w].begin(), spec.cols[w].end(), d) = c;
                *std::find(spec.rows[c].begin(), spec.rows[c].end(), v) = w;
                *std::find(spec.rows[d].begin(), spec.rows[d].end(), w) = v;
                done = true;
            }
        }
    }
}

// GF(2) elimination of H into reduced row-echelon form; fills rank/pivots and
// the encoder rows.
void derive_encoder(CodeSpec& spec) {
    const int words = (spec.n + 63) / 64;
    std::vector<std::vector<std::uint64_t>> mat(spec.m,
                                                std::vector<std::uint64_t>(words, 0));
    for (int r = 0; r < spec.m; ++r) {
        for (int c : spec.rows[r]) {
            mat[r][c >> 6] ^= 1ULL << (c & 63);
        }
    }
    std::vector<int> pivot_of_row;
    int row = 0;
    for (int col = 0; col < spec.n && row < spec.m; ++col) {
        int sel = -1;
        for (int r = row; r < spec.m; ++r) {
            if ((mat[r][col >> 6] >> (col & 63)) & 1ULL) {
                sel = r;
                break;
            }
        }
        if (sel < 0) continue;
        std::swap(mat[sel], mat[row]);
        for (int r = 0; r < spec.m; ++r) {
            if (r != row && ((mat[r][col >> 6] >> (col & 63)) & 1ULL)) {
                for (int w = 0; w < words; ++w) mat[r][w] ^= mat[row][w];
            }
        }
        pivot_of_row.push_back(col);
        ++row;
    }
    spec.rank = row;
    spec.pivot_cols = pivot_of_row;
    spec.rref.assign(mat.begin(), mat.begin() + spec.rank);

    std::vector<char> is_pivot(spec.n, 0);
    for (int c : spec.pivot_cols) is_pivot[c] = 1;
    spec.free_cols.clear();
    for (int c = 0; c < spec.n; ++c) {
        if (!is_pivot[c]) spec.free_cols.push_back(c);
    }
}

}  // namespace

CodeSpec build_regular_code(int n, int col_weight, int row_weight, std::uint64_t seed) {
    if (n < 2 || col_weight < 2 || row_weight <= col_weight) {
        throw ConstructionError("build_regular_code: need n >= 2, col_weight >= 2, "
                                "row_weight > col_weight");
    }
    const long long edges = static_cast<long long>(n) * col_weight;
    const int m = static_cast<int>((edges + row_weight - 1) / row_weight);
    if (m >= n || m < col_weight) {
        throw ConstructionError("build_regular_code: infeasible degree combination");
    }

    CodeSpec spec;
    spec.n = n;
    spec.m = m;
    spec.rows.assign(m, {});
    spec.cols.assign(n, {});

    Rng rng(seed);
    std::vector<int> check_degree(m, 0);

    // Progressive edge growth: each new edge goes to an unreachable check of
    // minimum degree, or failing that to a check as far from v as possible.
    // Min-degree selection keeps row weights near-uniform.
    std::vector<char> reached(m, 0);
    std::vector<char> var_seen(n, 0);
    for (int v = 0; v < n; ++v) {
        for (int e = 0; e < col_weight; ++e) {
            std::fill(reached.begin(), reached.end(), 0);
            std::fill(var_seen.begin(), var_seen.end(), 0);
            std::vector<int> last_layer;
            if (e > 0) {
                // Level-by-level BFS from v; checks appearing in the final
                // layer are the most distant reachable ones.
                var_seen[v] = 1;
                std::vector<int> layer;
                for (int c : spec.cols[v]) {
                    if (!reached[c]) {
                        reached[c] = 1;
                        layer.push_back(c);
                    }
                }
                while (!layer.empty()) {
                    last_layer = layer;
                    std::vector<int> next;
                    for (int c : layer) {
                        for (int w : spec.rows[c]) {
                            if (var_seen[w]) continue;
                            var_seen[w] = 1;
                            for (int c2 : spec.cols[w]) {
                                if (!reached[c2]) {
                                    reached[c2] = 1;
                                    next.push_back(c2);
                                }
                            }
                        }
                    }
                    layer = std::move(next);
                }
            }
            int best_deg = std::numeric_limits<int>::max();
            std::vector<int> pool;
            auto consider = [&](int c) {
                if (check_degree[c] < best_deg) {
                    best_deg = check_degree[c];
                    pool.clear();
                    pool.push_back(c);
                } else if (check_degree[c] == best_deg) {
                    pool.push_back(c);
                }
            };
            auto not_adjacent = [&](int c) {
                return std::find(spec.cols[v].begin(), spec.cols[v].end(), c) ==
                       spec.cols[v].end();
            };
            // Preference order: unreachable checks below the degree cap, the
            // farthest layer below the cap, then any sub-cap check regardless
            // of distance; degrees above the cap only as a last resort.
            for (int pass = 0; pass < 4 && pool.empty(); ++pass) {
                best_deg = std::numeric_limits<int>::max();
                if (pass == 0) {
                    for (int c = 0; c < m; ++c) {
                        if (!reached[c] && check_degree[c] < row_weight) consider(c);
                    }
                } else if (pass == 1) {
                    for (int c : last_layer) {
                        if (not_adjacent(c) && check_degree[c] < row_weight) consider(c);
                    }
                } else if (pass == 2) {
                    for (int c = 0; c < m; ++c) {
                        if (not_adjacent(c) && check_degree[c] < row_weight) consider(c);
                    }
                } else {
                    for (int c = 0; c < m; ++c) {
                        if (not_adjacent(c)) consider(c);
                    }
                }
            }
            if (pool.empty()) {
                throw ConstructionError("build_regular_code: no attachable check left");
            }
            std::sort(pool.begin(), pool.end());
            int c = pool[rng.below(static_cast<std::uint32_t>(pool.size()))];
            spec.rows[c].push_back(v);
            spec.cols[v].push_back(c);
            ++check_degree[c];
        }
    }
    repair_four_cycles(spec, rng, 50);
    for (auto& r : spec.rows) std::sort(r.begin(), r.end());
    for (auto& c : spec.cols) std::sort(c.begin(), c.end());

    derive_encoder(spec);
    if (spec.message_length() <= 0) {
        throw ConstructionError("build_regular_code: code has no free message bits");
    }
    return spec;
}

std::vector<std::uint8_t> encode(const CodeSpec& spec, std::span<const std::uint8_t> message) {
    if (static_cast<int>(message.size()) != spec.message_length()) {
        throw PreconditionError("encode: message length must be n - rank(H)");
    }
    const int words = (spec.n + 63) / 64;
    std::vector<std::uint64_t> c(words, 0);
    for (std::size_t i = 0; i < message.size(); ++i) {
        if (message[i]) {
            int col = spec.free_cols[i];
            c[col >> 6] ^= 1ULL << (col & 63);
        }
    }
    // RREF row i: c[pivot_i] = parity of the row's free-column overlap.
    for (int i = 0; i < spec.rank; ++i) {
        std::uint64_t parity = 0;
        for (int w = 0; w < words; ++w) parity ^= spec.rref[i][w] & c[w];
        if (std::popcount(parity) & 1) {
            int col = spec.pivot_cols[i];
            c[col >> 6] ^= 1ULL << (col & 63);
        }
    }
    std::vector<std::uint8_t> out(spec.n);
    for (int i = 0; i < spec.n; ++i) out[i] = (c[i >> 6] >> (i & 63)) & 1ULL;
    return out;
}

std::vector<std::uint8_t> extract_message(const CodeSpec& spec,
                                          std::span<const std::uint8_t> codeword) {
    if (static_cast<int>(codeword.size()) != spec.n) {
        throw PreconditionError("extract_message: codeword length mismatch");
    }
    std::vector<std::uint8_t> msg(spec.free_cols.size());
    for (std::size_t i = 0; i < spec.free_cols.size(); ++i) {
        msg[i] = codeword[spec.free_cols[i]];
    }
    return msg;
}

bool syndrome_ok(const CodeSpec& spec, std::span<const std::uint8_t> bits) {
    if (static_cast<int>(bits.size()) != spec.n) return false;
    for (const auto& row : spec.rows) {
        int parity = 0;
        for (int v : row) parity ^= bits[v];
        if (parity) return false;
    }
    return true;
}

DecodeResult min_sum_decode(const CodeSpec& spec, std::span<const double> channel_llrs) {
    if (static_cast<int>(channel_llrs.size()) != spec.n) {
        throw PreconditionError("min_sum_decode: one LLR per codeword bit required");
    }

    // Edge-indexed messages, grouped by check row.
    std::vector<int> row_start(spec.m + 1, 0);
    for (int r = 0; r < spec.m; ++r) {
        row_start[r + 1] = row_start[r] + static_cast<int>(spec.rows[r].size());
    }
    const int n_edges = row_start[spec.m];
    std::vector<double> r_msg(n_edges, 0.0);   // check -> variable
    std::vector<double> posterior(spec.n);

    DecodeResult result;
    result.bits.resize(spec.n);

    auto hard_decide = [&]() {
        for (int v = 0; v < spec.n; ++v) result.bits[v] = posterior[v] < 0.0 ? 1 : 0;
    };

    for (int v = 0; v < spec.n; ++v) posterior[v] = channel_llrs[v];
    hard_decide();

    for (int iter = 0; iter < spec.max_iterations; ++iter) {
        if (syndrome_ok(spec, result.bits)) {
            result.converged = true;
            result.iterations = iter;
            return result;
        }
        // Check-node update from the current extrinsic variable messages.
        for (int r = 0; r < spec.m; ++r) {
            const auto& vars = spec.rows[r];
            const int base = row_start[r];
            double min1 = std::numeric_limits<double>::infinity();
            double min2 = min1;
            int min_idx = -1;
            int sign_all = 0;
            for (std::size_t k = 0; k < vars.size(); ++k) {
                const double q = posterior[vars[k]] - r_msg[base + static_cast<int>(k)];
                const double a = std::abs(q);
                if (a < min1) {
                    min2 = min1;
                    min1 = a;
                    min_idx = static_cast<int>(k);
                } else if (a < min2) {
                    min2 = a;
                }
                if (q < 0.0) sign_all ^= 1;
            }
            for (std::size_t k = 0; k < vars.size(); ++k) {
                const double q = posterior[vars[k]] - r_msg[base + static_cast<int>(k)];
                int sign = sign_all ^ (q < 0.0 ? 1 : 0);
                double mag = (static_cast<int>(k) == min_idx) ? min2 : min1;
                double new_r = (sign ? -mag : mag);
                posterior[vars[k]] += new_r - r_msg[base + static_cast<int>(k)];
                r_msg[base + static_cast<int>(k)] = new_r;
            }
        }
        hard_decide();
        result.iterations = iter + 1;
    }
    result.converged = syndrome_ok(spec, result.bits);
    return result;
}

void save_code(const CodeSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FileFormatError("code file: cannot write " + path);
    out << "ldpc 1\n";
    out << "n " << spec.n << " m " << spec.m << " max_iterations " << spec.max_iterations << "\n";
    long long edges = 0;
    for (const auto& r : spec.rows) edges += static_cast<long long>(r.size());
    out << "edges " << edges << "\n";
    for (int r = 0; r < spec.m; ++r) {
        for (int v : spec.rows[r]) out << r << " " << v << "\n";
    }
}

CodeSpec load_code(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError("code file: cannot open " + path);
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "ldpc" || version != 1) {
        throw FileFormatError("code file: bad header in " + path);
    }
    CodeSpec spec;
    std::string key;
    long long edges = -1;
    while (in >> key) {
        if (key == "n") in >> spec.n;
        else if (key == "m") in >> spec.m;
        else if (key == "max_iterations") in >> spec.max_iterations;
        else if (key == "edges") {
            in >> edges;
            break;
        } else {
            throw FileFormatError("code file: unknown key '" + key + "'");
        }
    }
    if (spec.n <= 0 || spec.m <= 0 || edges < 0) {
        throw FileFormatError("code file: missing dimensions");
    }
    spec.rows.assign(spec.m, {});
    spec.cols.assign(spec.n, {});
    for (long long e = 0; e < edges; ++e) {
        int r, v;
        if (!(in >> r >> v)) throw FileFormatError("code file: truncated edge list");
        if (r < 0 || r >= spec.m || v < 0 || v >= spec.n) {
            throw FileFormatError("code file: edge out of range");
        }
        spec.rows[r].push_back(v);
        spec.cols[v].push_back(r);
    }
    derive_encoder(spec);
    return spec;
}

}  // namespace flashread
