#pragma once

#include <string>
#include <vector>

#include "uniptms/error.hpp"

namespace uniptms {

struct SampleRecord {
    std::string id;
    std::string window;   // length L_w, center = candidate site
    char center_residue;  // window[L_w/2]
    int label = 0;        // 0 or 1
    std::string origin_protein;  // optional
    int origin_pos = 0;          // 1-based, 0 when absent
};

// UTF-8 TSV with header "id\twindow\tlabel". expected_window_len 0 accepts
// any length. Errors name the file and line.
std::vector<SampleRecord> load_dataset_tsv(const std::string& path,
                                           int expected_window_len = 0);
void write_dataset_tsv(const std::string& path,
                       const std::vector<SampleRecord>& records);

struct FastaRecord {
    std::string id;
    std::string sequence;
};

// Standard '>'-header FASTA; wrapped sequence lines allowed.
std::vector<FastaRecord> load_fasta(const std::string& path);

}  // namespace uniptms
