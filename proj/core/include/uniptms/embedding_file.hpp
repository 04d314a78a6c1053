#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uniptms/tensor.hpp"

namespace uniptms {

// Binary container for per-sample feature matrices (and, reusing the same
// layout, for model checkpoints keyed by parameter path).
//
// Little-endian layout:
//   magic   4 bytes "UPTM"
//   version u32      (1)
//   dtype   u32      (1 = float32)
//   count   u32      number of records
//   records, each:
//     id_len u32, id bytes (UTF-8)
//     rows u32, cols u32
//     rows*cols float32 payload
inline constexpr uint32_t kEmbeddingVersion = 1;
inline constexpr uint32_t kEmbeddingDtypeF32 = 1;

struct EmbeddingRecord {
    std::string id;
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<float> data;  // rows*cols, row-major
};

class EmbeddingFileWriter {
  public:
    void add(const std::string& id, uint32_t rows, uint32_t cols,
             const std::vector<double>& values);
    void add_record(EmbeddingRecord rec);
    // Writes the whole container; IoError on failure.
    void write(const std::string& path) const;

  private:
    std::vector<EmbeddingRecord> records_;
};

enum class MissingIdPolicy { Error, Zeros };

class EmbeddingFileReader {
  public:
    // Parses header and index eagerly; throws IoError with byte offsets on
    // malformed input.
    explicit EmbeddingFileReader(const std::string& path);

    bool has(const std::string& id) const;
    std::vector<std::string> ids() const;
    const EmbeddingRecord& record(const std::string& id) const;

    // Returns the stored matrix as [rows, expected_cols]. A missing id
    // yields zeros of [fallback_rows, expected_cols] under the Zeros policy
    // (with a stderr warning) and throws otherwise.
    Tensor load(const std::string& id, int expected_cols,
                MissingIdPolicy policy = MissingIdPolicy::Error,
                int fallback_rows = 0) const;

  private:
    std::string path_;
    std::map<std::string, EmbeddingRecord> index_;
};

}  // namespace uniptms
