#include "uqh/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "uqh/training.hpp"

namespace uqh {

namespace {

constexpr std::array<char, 4> kMagic{'U', 'Q', 'E', 'B'};

template <class UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class UInt>
UInt get_le(const unsigned char* p) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(p[i]) << (8 * i);
  return v;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file", path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed", path.string());
  return bytes;
}

[[noreturn]] void truncated(const std::filesystem::path& path, std::size_t expected, std::size_t actual) {
  std::ostringstream os;
  os << "truncated embedding file " << path.string() << ": expected " << expected << " bytes, found " << actual;
  throw FormatError(os.str());
}

}  // namespace

Vector EmbeddingDataset::label_vector() const {
  if (!labels) throw ArgumentError("dataset has no labels");
  return Vector(labels->begin(), labels->end());
}

void validate_dataset(const EmbeddingDataset& dataset) {
  if (dataset.labels) {
    if (dataset.labels->size() != dataset.n()) {
      throw FormatError("dataset: label count does not match row count");
    }
    for (std::size_t i = 0; i < dataset.labels->size(); ++i) {
      if ((*dataset.labels)[i] > 1) {
        throw FormatError("dataset: label at row " + std::to_string(i) + " is not 0 or 1");
      }
    }
  }
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    auto row = dataset.embeddings.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!std::isfinite(row[c])) {
        std::ostringstream os;
        os << "dataset: non-finite embedding value at row " << i << ", column " << c;
        throw FormatError(os.str());
      }
    }
  }
}

std::size_t embedding_header_size(std::size_t note_bytes) {
  return 4 + 4 + 8 + 4 + 1 + 4 + note_bytes;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingDataset& dataset) {
  if (dataset.dim() > UINT32_MAX) throw ArgumentError("write_embedding_file: dim exceeds 32 bits");
  if (dataset.source_note.size() > UINT32_MAX) throw ArgumentError("write_embedding_file: note too long");
  if (dataset.labels && dataset.labels->size() != dataset.n()) {
    throw ArgumentError("write_embedding_file: label count does not match row count");
  }
  const std::size_t n = dataset.n();
  const std::size_t dim = dataset.dim();
  std::string out;
  out.reserve(embedding_header_size(dataset.source_note.size()) + 4 * n * dim + (dataset.labels ? n : 0));
  out.append(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kEmbeddingFormatVersion);
  put_le<std::uint64_t>(out, n);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  out.push_back(dataset.labels ? 1 : 0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.source_note.size()));
  out += dataset.source_note;
  for (double v : dataset.embeddings.values()) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (dataset.labels) {
    for (std::uint8_t l : *dataset.labels) out.push_back(static_cast<char>(l));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open file for writing", path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed", path.string());
}

EmbeddingDataset read_embedding_file(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  const std::size_t fixed = embedding_header_size(0);
  if (size < 4 || std::memcmp(p, kMagic.data(), 4) != 0) {
    throw FormatError("bad magic in embedding file " + path.string() + " (expected \"UQEB\")");
  }
  if (size < fixed) truncated(path, fixed, size);
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kEmbeddingFormatVersion) {
    throw VersionError("unsupported embedding file version " + std::to_string(version) + " in " + path.string());
  }
  const auto n = get_le<std::uint64_t>(p + 8);
  const auto dim = get_le<std::uint32_t>(p + 16);
  const std::uint8_t has_labels = p[20];
  if (has_labels > 1) throw FormatError("embedding file " + path.string() + ": invalid labels-present byte");
  const auto note_len = get_le<std::uint32_t>(p + 21);
  const std::size_t header = embedding_header_size(note_len);
  // Guard the size arithmetic against absurd headers.
  if (dim != 0 && n > (SIZE_MAX / 8) / dim) throw FormatError("embedding file " + path.string() + ": n*dim overflows");
  const std::size_t expected = header + 4 * n * dim + (has_labels ? n : 0);
  if (size != expected) {
    if (size < expected) truncated(path, expected, size);
    std::ostringstream os;
    os << "embedding file " << path.string() << " has trailing bytes: expected " << expected << ", found " << size;
    throw FormatError(os.str());
  }

  EmbeddingDataset ds;
  ds.source_note.assign(bytes.data() + fixed, note_len);
  ds.embeddings = Matrix(n, dim);
  const unsigned char* payload = p + header;
  auto values = ds.embeddings.values();
  for (std::size_t k = 0; k < values.size(); ++k) {
    values[k] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(payload + 4 * k)));
  }
  if (has_labels) {
    const unsigned char* lp = payload + 4 * n * dim;
    ds.labels.emplace(lp, lp + n);
  }
  return ds;
}

EmbeddingDataset read_jsonl_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file", path.string());
  EmbeddingDataset ds;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  std::size_t dim = 0;
  std::size_t rows = 0;
  std::optional<bool> labelled;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("embedding") || !obj["embedding"].is_array()) {
      throw FormatError(where + ": expected an object with an \"embedding\" array");
    }
    const auto& emb = obj["embedding"];
    if (rows == 0) {
      dim = emb.size();
    } else if (emb.size() != dim) {
      throw FormatError(where + ": embedding length " + std::to_string(emb.size()) + " differs from " +
                        std::to_string(dim));
    }
    for (const auto& v : emb) {
      if (!v.is_number()) throw FormatError(where + ": non-numeric embedding entry");
      values.push_back(v.get<double>());
    }
    const bool has = obj.contains("label");
    if (labelled && *labelled != has) throw FormatError(where + ": labels must be present on all lines or none");
    labelled = has;
    if (has) {
      const auto& l = obj["label"];
      if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
        throw FormatError(where + ": label must be 0 or 1");
      }
      labels.push_back(static_cast<std::uint8_t>(l.get<int>()));
    }
    ++rows;
  }
  ds.embeddings = Matrix(rows, dim, std::move(values));
  if (labelled.value_or(false)) ds.labels = std::move(labels);
  ds.source_note = "jsonl:" + path.filename().string();
  return ds;
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file", path.string());
  char head[4] = {};
  in.read(head, 4);
  if (in.gcount() == 4 && std::memcmp(head, kMagic.data(), 4) == 0) return read_embedding_file(path);
  return read_jsonl_dataset(path);
}

SplitIndices split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw ArgumentError("split_dataset: need at least 5 rows to populate all splits, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Fisher-Yates with an exactly uniform draw.
  RngStream rng = derive_stream(seed, Stream::Split);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(idx[i], idx[j]);
  }
  const std::size_t n_test = n / 5;
  const std::size_t rest = n - n_test;
  const std::size_t n_val = rest / 5;
  SplitIndices s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test),
               idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), idx.end());
  return s;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

Vector gather(std::span<const double> v, std::span<const std::size_t> rows) {
  Vector out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v.size()) throw DimensionError("gather: index out of range");
    out[i] = v[rows[i]];
  }
  return out;
}

}  // namespace uqh
