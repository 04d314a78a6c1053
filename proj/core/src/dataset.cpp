#include "uniptms/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "uniptms/encoders.hpp"

namespace uniptms {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::vector<SampleRecord> load_dataset_tsv(const std::string& path,
                                           int expected_window_len) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line))
        throw InputError(path + ": empty file, expected header id\twindow\tlabel");
    ++lineno;
    line = strip_cr(line);
    if (split_tabs(line) != std::vector<std::string>{"id", "window", "label"})
        throw InputError(path + ": line 1: expected header id\twindow\tlabel");

    std::vector<SampleRecord> records;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        std::string where = path + ": line " + std::to_string(lineno);
        if (cols.size() != 3)
            throw InputError(where + ": expected 3 tab-separated fields, got " +
                             std::to_string(cols.size()));
        SampleRecord rec;
        rec.id = cols[0];
        rec.window = cols[1];
        std::transform(rec.window.begin(), rec.window.end(), rec.window.begin(),
                       [](unsigned char c) { return std::toupper(c); });
        if (cols[2] != "0" && cols[2] != "1")
            throw InputError(where + ": label must be 0 or 1, got '" + cols[2] +
                             "'");
        rec.label = cols[2] == "1" ? 1 : 0;
        try {
            validate_window(rec.window, expected_window_len);
        } catch (const InputError& e) {
            throw InputError(where + ": " + e.what());
        }
        rec.center_residue = rec.window[rec.window.size() / 2];
        records.push_back(std::move(rec));
    }
    return records;
}

void write_dataset_tsv(const std::string& path,
                       const std::vector<SampleRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "id\twindow\tlabel\n";
    for (const auto& r : records)
        out << r.id << '\t' << r.window << '\t' << r.label << '\n';
    if (!out) throw IoError("short write to '" + path + "'");
}

std::vector<FastaRecord> load_fasta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open FASTA '" + path + "'");
    std::vector<FastaRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        if (line[0] == '>') {
            FastaRecord rec;
            std::string header = line.substr(1);
            size_t sp = header.find_first_of(" \t");
            rec.id = header.substr(0, sp);
            if (rec.id.empty())
                throw InputError(path + ": line " + std::to_string(lineno) +
                                 ": empty FASTA header");
            out.push_back(std::move(rec));
        } else {
            if (out.empty())
                throw InputError(path + ": line " + std::to_string(lineno) +
                                 ": sequence before first '>' header");
            for (char c : line) {
                char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                if (aa_index(u) == -2)
                    throw InputError(path + ": line " + std::to_string(lineno) +
                                     ": invalid residue '" + std::string(1, c) +
                                     "'");
                out.back().sequence.push_back(u);
            }
        }
    }
    return out;
}

}  // namespace uniptms
