#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uqh/numerics.hpp"

namespace uqh {

struct EmbeddingDataset {
  Matrix embeddings;                  // n x dim
  std::optional<std::vector<std::uint8_t>> labels;
  std::string source_note;            // e.g. encoder identifier

  std::size_t n() const noexcept { return embeddings.rows(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }
  bool has_labels() const noexcept { return labels.has_value(); }
  Vector label_vector() const;
};

// Shape and label checks plus the finite-values rule; throws FormatError.
void validate_dataset(const EmbeddingDataset& dataset);

// UQEB layout, all little-endian:
//   "UQEB" | version u32 = 1 | n u64 | dim u32 | labels-present u8 |
//   note length u32 | note bytes | n*dim f32 row-major | n label bytes (if present)
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
std::size_t embedding_header_size(std::size_t note_bytes);

void write_embedding_file(const std::filesystem::path& path, const EmbeddingDataset& dataset);
EmbeddingDataset read_embedding_file(const std::filesystem::path& path);

// One JSON object per line: {"embedding": [...], "label": 0|1}; label optional
// but must be present on all lines or none.
EmbeddingDataset read_jsonl_dataset(const std::filesystem::path& path);

// Dispatches on the file's first bytes: UQEB magic or JSON lines.
EmbeddingDataset load_dataset(const std::filesystem::path& path);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle of 0..n-1; test = first floor(0.2 n), val = floor(0.2 * rest)
// of the remainder, train = everything else.
SplitIndices split_dataset(std::size_t n, std::uint64_t seed);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);
Vector gather(std::span<const double> v, std::span<const std::size_t> rows);

}  // namespace uqh
