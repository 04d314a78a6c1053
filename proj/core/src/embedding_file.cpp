#include "uniptms/embedding_file.hpp"

#include <cstring>
#include <fstream>
#include <iostream>

namespace uniptms {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Cursor {
    const std::string& data;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n, const char* what) const {
        if (pos + n > data.size())
            throw IoError(path + ": truncated " + what + ": need " +
                          std::to_string(n) + " bytes at offset " +
                          std::to_string(pos) + ", file has " +
                          std::to_string(data.size()) + " bytes");
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos + i]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void EmbeddingFileWriter::add(const std::string& id, uint32_t rows,
                              uint32_t cols,
                              const std::vector<double>& values) {
    if (values.size() != static_cast<size_t>(rows) * cols)
        throw UsageError("EmbeddingFileWriter: payload size mismatch for '" +
                         id + "'");
    EmbeddingRecord rec;
    rec.id = id;
    rec.rows = rows;
    rec.cols = cols;
    rec.data.reserve(values.size());
    for (double v : values) rec.data.push_back(static_cast<float>(v));
    add_record(std::move(rec));
}

void EmbeddingFileWriter::add_record(EmbeddingRecord rec) {
    for (const auto& r : records_)
        if (r.id == rec.id)
            throw UsageError("EmbeddingFileWriter: duplicate id '" + rec.id +
                             "'");
    records_.push_back(std::move(rec));
}

void EmbeddingFileWriter::write(const std::string& path) const {
    std::string buf;
    buf += "UPTM";
    put_u32(buf, kEmbeddingVersion);
    put_u32(buf, kEmbeddingDtypeF32);
    put_u32(buf, static_cast<uint32_t>(records_.size()));
    for (const auto& r : records_) {
        put_u32(buf, static_cast<uint32_t>(r.id.size()));
        buf += r.id;
        put_u32(buf, r.rows);
        put_u32(buf, r.cols);
        for (float v : r.data) put_f32(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

EmbeddingFileReader::EmbeddingFileReader(const std::string& path)
    : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    Cursor cur{data, 0, path_};

    std::string magic = cur.bytes(4, "magic");
    if (magic != "UPTM")
        throw IoError(path + ": bad magic at offset 0: expected 'UPTM'");
    uint32_t version = cur.u32("version");
    if (version != kEmbeddingVersion)
        throw IoError(path + ": unsupported version " + std::to_string(version));
    uint32_t dtype = cur.u32("dtype");
    if (dtype != kEmbeddingDtypeF32)
        throw IoError(path + ": unsupported dtype code " + std::to_string(dtype));
    uint32_t count = cur.u32("record count");

    for (uint32_t i = 0; i < count; ++i) {
        uint32_t id_len = cur.u32("record id length");
        EmbeddingRecord rec;
        rec.id = cur.bytes(id_len, "record id");
        rec.rows = cur.u32("record rows");
        rec.cols = cur.u32("record cols");
        size_t n = static_cast<size_t>(rec.rows) * rec.cols;
        cur.need(n * 4, "record payload");
        rec.data.resize(n);
        for (size_t j = 0; j < n; ++j) {
            uint32_t bits = cur.u32("payload");
            float f;
            std::memcpy(&f, &bits, 4);
            rec.data[j] = f;
        }
        if (index_.count(rec.id))
            throw IoError(path + ": duplicate record id '" + rec.id + "'");
        index_.emplace(rec.id, std::move(rec));
    }
}

bool EmbeddingFileReader::has(const std::string& id) const {
    return index_.count(id) != 0;
}

std::vector<std::string> EmbeddingFileReader::ids() const {
    std::vector<std::string> out;
    out.reserve(index_.size());
    for (const auto& [k, v] : index_) out.push_back(k);
    return out;
}

const EmbeddingRecord& EmbeddingFileReader::record(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end())
        throw IoError(path_ + ": no record with id '" + id + "'");
    return it->second;
}

Tensor EmbeddingFileReader::load(const std::string& id, int expected_cols,
                                 MissingIdPolicy policy,
                                 int fallback_rows) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
        if (policy == MissingIdPolicy::Zeros) {
            std::cerr << "warning: " << path_ << ": id '" << id
                      << "' missing, substituting zeros\n";
            return Tensor::zeros(Shape::of(fallback_rows, expected_cols));
        }
        throw IoError(path_ + ": no record with id '" + id + "'");
    }
    const EmbeddingRecord& rec = it->second;
    if (static_cast<int>(rec.cols) != expected_cols)
        throw IoError(path_ + ": record '" + id + "' has " +
                      std::to_string(rec.cols) + " columns, expected " +
                      std::to_string(expected_cols));
    std::vector<double> vals(rec.data.begin(), rec.data.end());
    return Tensor::from(Shape::of(static_cast<int>(rec.rows), expected_cols),
                        std::move(vals));
}

}  // namespace uniptms
