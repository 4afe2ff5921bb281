#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "popdiff/csv.hpp"
#include "popdiff/error.hpp"
#include "popdiff/ndarray.hpp"

namespace popdiff {

struct Attribute {
  std::string name;
  std::vector<std::string> categories;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

/// Half-open index range [start, end) into the global vocabulary.
struct CategorySpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
  friend bool operator==(const CategorySpan&, const CategorySpan&) = default;
};

/// Ordered attributes and the global category vocabulary. The vocabulary is
/// the concatenation of the attributes' category lists in attribute order.
class AttributeSchema {
 public:
  explicit AttributeSchema(std::vector<Attribute> attributes)
      : attributes_(std::move(attributes)) {
    if (attributes_.empty()) throw SchemaError("schema needs at least one attribute");
    std::size_t k = 0;
    for (const auto& a : attributes_) {
      if (a.categories.empty()) {
        throw SchemaError("attribute '" + a.name + "' has no categories");
      }
      std::unordered_map<std::string, std::size_t> lookup;
      for (std::size_t c = 0; c < a.categories.size(); ++c) {
        if (!lookup.emplace(a.categories[c], k + c).second) {
          throw SchemaError("attribute '" + a.name + "' repeats category '" +
                            a.categories[c] + "'");
        }
      }
      spans_.push_back({k, k + a.categories.size()});
      lookup_.push_back(std::move(lookup));
      k += a.categories.size();
    }
    vocab_size_ = k;
  }

  std::size_t num_attributes() const { return attributes_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }
  const std::vector<Attribute>& attributes() const { return attributes_; }
  const Attribute& attribute(std::size_t d) const { return attributes_.at(d); }
  const std::vector<CategorySpan>& spans() const { return spans_; }
  const CategorySpan& span(std::size_t d) const { return spans_.at(d); }

  /// Global index of a category label, or nullopt if unknown.
  std::optional<std::size_t> find(std::size_t d, const std::string& label) const {
    const auto& m = lookup_.at(d);
    auto it = m.find(label);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  const std::string& label(std::size_t d, std::size_t global_index) const {
    const auto& s = span(d);
    if (!s.contains(global_index)) {
      throw SchemaError("index " + std::to_string(global_index) +
                        " outside span of attribute '" + attribute(d).name + "'");
    }
    return attributes_[d].categories[global_index - s.start];
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& a : attributes_) out.push_back(a.name);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json attrs = nlohmann::json::array();
    for (std::size_t d = 0; d < attributes_.size(); ++d) {
      attrs.push_back({{"name", attributes_[d].name},
                       {"categories", attributes_[d].categories},
                       {"span", {spans_[d].start, spans_[d].end}}});
    }
    return {{"D", num_attributes()}, {"K", vocab_size()}, {"attributes", attrs}};
  }

  static AttributeSchema from_json(const nlohmann::json& j) {
    std::vector<Attribute> attrs;
    try {
      for (const auto& a : j.at("attributes")) {
        attrs.push_back({a.at("name").get<std::string>(),
                         a.at("categories").get<std::vector<std::string>>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("schema json: ") + e.what());
    }
    AttributeSchema schema(std::move(attrs));
    if (j.contains("K") && j["K"].get<std::size_t>() != schema.vocab_size()) {
      throw SchemaError("schema json: K does not match category lists");
    }
    return schema;
  }

  /// Canonical serialized form; identical schemas give identical bytes.
  std::string serialize() const { return to_json().dump(); }

  /// 64-bit FNV-1a of the canonical serialization.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const AttributeSchema& a, const AttributeSchema& b) {
    return a.attributes_ == b.attributes_;
  }

 private:
  std::vector<Attribute> attributes_;
  std::vector<CategorySpan> spans_;
  std::vector<std::unordered_map<std::string, std::size_t>> lookup_;
  std::size_t vocab_size_ = 0;
};

using SchemaPtr = std::shared_ptr<const AttributeSchema>;

/// One individual: values[d] is a global vocabulary index inside span(d).
struct Record {
  std::vector<std::size_t> values;

  friend bool operator==(const Record&, const Record&) = default;
  friend auto operator<=>(const Record&, const Record&) = default;
};

struct RecordHash {
  std::size_t operator()(const Record& r) const noexcept {
    std::size_t h = 0x9e3779b97f4a7c15ULL;
    for (std::size_t v : r.values) {
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};

inline void validate(const Record& r, const AttributeSchema& schema) {
  if (r.values.size() != schema.num_attributes()) {
    throw SchemaError("record has " + std::to_string(r.values.size()) +
                      " values, schema has " +
                      std::to_string(schema.num_attributes()) + " attributes");
  }
  for (std::size_t d = 0; d < r.values.size(); ++d) {
    if (!schema.span(d).contains(r.values[d])) {
      throw SchemaError("value " + std::to_string(r.values[d]) +
                        " outside span of attribute '" + schema.attribute(d).name + "'");
    }
  }
}

/// Multiset of records sharing one schema.
class Population {
 public:
  explicit Population(SchemaPtr schema, std::vector<Record> records = {})
      : schema_(std::move(schema)), records_(std::move(records)) {
    if (!schema_) throw SchemaError("population without schema");
    for (const auto& r : records_) validate(r, *schema_);
  }

  const AttributeSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }

  friend bool operator==(const Population& a, const Population& b) {
    return *a.schema_ == *b.schema_ && a.records_ == b.records_;
  }

 private:
  SchemaPtr schema_;
  std::vector<Record> records_;
};

/// Categories per column in order of first appearance.
inline AttributeSchema build_schema(const TextTable& table) {
  if (table.header.empty()) throw SchemaError("build_schema: table has no columns");
  if (table.rows.empty()) throw SchemaError("build_schema: table has no rows");
  const std::size_t D = table.header.size();
  std::vector<Attribute> attrs(D);
  std::vector<std::unordered_map<std::string, bool>> seen(D);
  for (std::size_t d = 0; d < D; ++d) attrs[d].name = table.header[d];
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != D) {
      throw SchemaError("build_schema: row " + std::to_string(r + 1) + " has " +
                        std::to_string(row.size()) + " cells, expected " +
                        std::to_string(D));
    }
    for (std::size_t d = 0; d < D; ++d) {
      if (row[d].empty()) {
        throw SchemaError("build_schema: empty cell at row " + std::to_string(r + 1) +
                          ", column '" + table.header[d] + "'");
      }
      if (seen[d].emplace(row[d], true).second) attrs[d].categories.push_back(row[d]);
    }
  }
  return AttributeSchema(std::move(attrs));
}

/// D x K one-hot matrix, row-major.
inline NdArray<double> encode(const Record& record, const AttributeSchema& schema) {
  validate(record, schema);
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size();
  NdArray<double> m({D, K});
  for (std::size_t d = 0; d < D; ++d) m[d * K + record.values[d]] = 1.0;
  return m;
}

/// Encodes a batch into one [N, D, K] array.
template <typename T>
NdArray<T> encode_batch(const std::vector<Record>& records,
                        const AttributeSchema& schema) {
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size();
  NdArray<T> out({records.size(), D, K});
  for (std::size_t n = 0; n < records.size(); ++n) {
    validate(records[n], schema);
    for (std::size_t d = 0; d < D; ++d) {
      out[(n * D + d) * K + records[n].values[d]] = T(1);
    }
  }
  return out;
}

enum class DecodeMode { kMasked, kGlobal };

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "masked") return DecodeMode::kMasked;
  if (s == "global") return DecodeMode::kGlobal;
  throw ConfigError("decode mode must be 'masked' or 'global', got '" + s + "'");
}

/// Decodes one D x K matrix stored at `row_major`. Masked mode takes the
/// argmax within each attribute's span; global mode takes it over all K and
/// returns nullopt when the winner is outside the row's span. Ties go to the
/// lowest index.
template <typename T>
std::optional<Record> try_decode(std::span<const T> row_major,
                                 const AttributeSchema& schema, DecodeMode mode) {
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size();
  if (row_major.size() != D * K) {
    throw ShapeError("decode: expected " + std::to_string(D * K) + " values, got " +
                     std::to_string(row_major.size()));
  }
  Record r;
  r.values.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto& s = schema.span(d);
    const std::size_t lo = mode == DecodeMode::kMasked ? s.start : 0;
    const std::size_t hi = mode == DecodeMode::kMasked ? s.end : K;
    std::size_t best = lo;
    for (std::size_t k = lo + 1; k < hi; ++k) {
      if (row_major[d * K + k] > row_major[d * K + best]) best = k;
    }
    if (!s.contains(best)) return std::nullopt;
    r.values[d] = best;
  }
  return r;
}

template <typename T>
Record decode(const NdArray<T>& matrix, const AttributeSchema& schema,
              DecodeMode mode = DecodeMode::kMasked) {
  const Shape expected{schema.num_attributes(), schema.vocab_size()};
  if (matrix.shape() != expected) {
    throw ShapeError("decode: expected shape " + shape_str(expected) + ", got " +
                     shape_str(matrix.shape()));
  }
  auto r = try_decode<T>(matrix.data(), schema, mode);
  if (!r) throw UndecodableError("decode: global argmax fell outside an attribute span");
  return *r;
}

struct DecodedBatch {
  std::vector<Record> records;
  std::size_t undecodable = 0;
};

/// Decodes every [D, K] slice of an [N, D, K] array, discarding (and
/// counting) undecodable samples.
template <typename T>
DecodedBatch decode_batch(const NdArray<T>& batch, const AttributeSchema& schema,
                          DecodeMode mode) {
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size();
  if (batch.rank() != 3 || batch.dim(1) != D || batch.dim(2) != K) {
    throw ShapeError("decode_batch: expected [N," + std::to_string(D) + "," +
                     std::to_string(K) + "], got " + shape_str(batch.shape()));
  }
  DecodedBatch out;
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    auto r = try_decode<T>(batch.data().subspan(n * D * K, D * K), schema, mode);
    if (r) {
      out.records.push_back(std::move(*r));
    } else {
      ++out.undecodable;
    }
  }
  return out;
}

/// Maps a text table onto `schema`; names the offending row and column for
/// unknown categories.
inline Population population_from_table(const TextTable& table, SchemaPtr schema,
                                        const std::string& source = "table") {
  const auto names = schema->names();
  if (table.header != names) {
    for (std::size_t d = 0; d < std::max(names.size(), table.header.size()); ++d) {
      const std::string got = d < table.header.size() ? table.header[d] : "<missing>";
      const std::string want = d < names.size() ? names[d] : "<none>";
      if (got != want) {
        throw SchemaError(source + ": header mismatch at column " + std::to_string(d + 1) +
                          ": expected attribute '" + want + "', found '" + got + "'");
      }
    }
  }
  std::vector<Record> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != names.size()) {
      throw SchemaError(source + ": row " + std::to_string(r + 1) + " has " +
                        std::to_string(row.size()) + " cells, expected " +
                        std::to_string(names.size()));
    }
    Record rec;
    rec.values.resize(names.size());
    for (std::size_t d = 0; d < names.size(); ++d) {
      auto idx = schema->find(d, row[d]);
      if (!idx) {
        throw SchemaError(source + ": unknown category '" + row[d] + "' at row " +
                          std::to_string(r + 1) + ", column '" + names[d] + "'");
      }
      rec.values[d] = *idx;
    }
    records.push_back(std::move(rec));
  }
  return Population(std::move(schema), std::move(records));
}

/// Loads a header-first CSV. Without a schema one is built from the file.
inline Population load_population_csv(const std::filesystem::path& path,
                                      SchemaPtr schema = nullptr) {
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  TextTable table = csv::read_table(path);
  if (!schema) schema = std::make_shared<const AttributeSchema>(build_schema(table));
  return population_from_table(table, std::move(schema), path.string());
}

inline TextTable population_to_table(const Population& pop) {
  TextTable t;
  t.header = pop.schema().names();
  for (const auto& r : pop.records()) {
    std::vector<std::string> row;
    for (std::size_t d = 0; d < r.values.size(); ++d) {
      row.push_back(pop.schema().label(d, r.values[d]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string format_population_csv(const Population& pop) {
  return csv::format_table(population_to_table(pop));
}

inline void write_population_csv(const std::filesystem::path& path,
                                 const Population& pop) {
  csv::write_file_atomic(path, format_population_csv(pop));
}

}  // namespace popdiff
