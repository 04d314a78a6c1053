#pragma once

#include <array>
#include <string>
#include <vector>

#include "uniptms/tensor.hpp"

namespace uniptms {

// Canonical residue ordering used by every local encoder.
inline constexpr char kAminoAcids[21] = "ARNDCQEGHILKMFPSTWYV";

// Index into kAminoAcids; -1 for the 'X' pad, throws InputError otherwise.
int aa_index(char c);
bool is_window_char(char c);

// 20x20 substitution scores in kAminoAcids order.
const std::array<std::array<int, 20>, 20>& blosum62_matrix();

// Row i is the BLOSUM62 row of residue i; 'X' rows are zero.
Tensor encode_blosum62(const std::string& window);  // [L,20]

struct AaIndexEntry {
    std::string id;
    std::string description;
    std::array<double, 20> values;  // kAminoAcids order, raw published scale
};

// Bundled physicochemical indices (31 entries).
const std::vector<AaIndexEntry>& aaindex_table();
std::vector<std::string> default_aaindex_ids();
const AaIndexEntry& aaindex_entry(const std::string& id);  // ConfigError if unknown

// Each selected index is z-normalized over the 20 residues; zero-variance
// indices encode as zero columns. 'X' rows are zero.
Tensor encode_aaindex(const std::string& window,
                      const std::vector<std::string>& index_ids);  // [L,N]

// Classic pseudo amino-acid composition of the window (20 frequencies plus
// lambda sequence-order factors over hydrophobicity / hydrophilicity /
// side-chain mass), tiled across all rows. Components sum to 1.
Tensor encode_pseaac(const std::string& window, int lambda_rank = 5,
                     double weight = 0.05);  // [L, 20+lambda]

// Throws InputError naming the offending position; expected_len 0 skips the
// length check, center 0 skips the center check.
void validate_window(const std::string& window, int expected_len = 0,
                     char center = 0);

// Linear projection to `target` followed by a k=3 same-conv block with GELU
// and a residual connection. Target is paper-fixed to 256 or 512.
struct AlignParams {
    Tensor w;       // [d_in, target]
    Tensor b;       // [target]
    Tensor conv_k;  // [3, target, target]
    Tensor conv_b;  // [target]
};
Tensor align_dims(const Tensor& x, int target, const AlignParams& p);

}  // namespace uniptms
