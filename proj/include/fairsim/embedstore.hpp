#pragma once

// Embedding stores: validated, immutable row-aligned embeddings with binary
// attribute labels, the FEMB on-disk format, the metadata JSONL sidecar, and
// read-only views (subsets, splits, re-represented rows).

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fairsim/error.hpp"
#include "fairsim/random.hpp"

namespace fairsim {

static_assert(std::endian::native == std::endian::little,
              "FEMB/FRRM I/O assumes a little-endian host");

enum class Label : std::int8_t { Negative = -1, Unlabeled = 0, Positive = 1 };

inline double label_value(Label l) { return static_cast<double>(l); }

// ---------------------------------------------------------------------------
// Binary helpers shared by FEMB and FRRM.

namespace detail {

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Writes via a temp file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "rename to " + path.string() + ": " + ec.message());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FEMB: "FEMB" | u16 version=1 | u32 dim | u64 count | count*dim f32.

inline constexpr std::uint16_t kFembVersion = 1;
inline constexpr std::size_t kFembHeaderSize = 4 + 2 + 4 + 8;

struct FembData {
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::vector<float> values;  // row-major
};

inline std::string encode_femb(std::uint32_t dim, std::span<const float> values) {
  if (dim == 0) fail(ErrorCode::DimZero, "FEMB dim must be positive");
  if (values.size() % dim != 0)
    fail(ErrorCode::RowCountMismatch, "value count not a multiple of dim");
  std::string out;
  out.reserve(kFembHeaderSize + values.size() * sizeof(float));
  out.append("FEMB", 4);
  detail::put<std::uint16_t>(out, kFembVersion);
  detail::put<std::uint32_t>(out, dim);
  detail::put<std::uint64_t>(out, values.size() / dim);
  out.append(reinterpret_cast<const char*>(values.data()),
             values.size() * sizeof(float));
  return out;
}

inline FembData decode_femb(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "FEMB")
    fail(ErrorCode::MagicMismatch, "missing FEMB magic");
  if (bytes.size() < kFembHeaderSize)
    fail(ErrorCode::TruncatedHeader, "FEMB header shorter than 18 bytes");
  const auto version = detail::get<std::uint16_t>(bytes, 4);
  if (version != kFembVersion)
    fail(ErrorCode::UnsupportedVersion, "FEMB version " + std::to_string(version));
  FembData data;
  data.dim = detail::get<std::uint32_t>(bytes, 6);
  data.count = detail::get<std::uint64_t>(bytes, 10);
  if (data.dim == 0) fail(ErrorCode::DimZero, "FEMB header dim is 0");
  const std::size_t body = bytes.size() - kFembHeaderSize;
  const std::size_t row_bytes = std::size_t{data.dim} * sizeof(float);
  if (data.count > body / row_bytes || body != data.count * row_bytes) {
    fail(ErrorCode::RowCountMismatch,
         "header count " + std::to_string(data.count) + " but body holds " +
             std::to_string(body / row_bytes) + " rows (" +
             std::to_string(body % row_bytes) + " stray bytes)");
  }
  data.values.resize(data.count * data.dim);
  std::memcpy(data.values.data(), bytes.data() + kFembHeaderSize, body);
  return data;
}

inline FembData read_femb(const std::filesystem::path& path) {
  return decode_femb(detail::read_file(path));
}

inline void write_femb(const std::filesystem::path& path, std::uint32_t dim,
                       std::span<const float> values) {
  detail::write_file_atomic(path, encode_femb(dim, values));
}

// ---------------------------------------------------------------------------

/// Immutable set of embeddings. Construction validates every invariant, so a
/// live instance is always well formed.
class EmbeddingStore {
 public:
  using AttributeMap = std::map<std::string, std::vector<Label>>;

  EmbeddingStore(std::size_t dim, std::vector<float> values,
                 std::vector<std::string> ids, AttributeMap attrs)
      : dim_(dim), values_(std::move(values)), ids_(std::move(ids)),
        attrs_(std::move(attrs)) {
    if (dim_ == 0) fail(ErrorCode::DimZero, "store dim must be positive");
    if (values_.size() % dim_ != 0)
      fail(ErrorCode::RowCountMismatch, "values not a multiple of dim");
    const std::size_t n = values_.size() / dim_;
    if (ids_.size() != n)
      fail(ErrorCode::RowCountMismatch, "ids length " + std::to_string(ids_.size()) +
                                            " != row count " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (float x : row(i)) {
        if (!std::isfinite(x))
          fail(ErrorCode::NonFiniteVector, "row " + std::to_string(i));
        sq += double{x} * double{x};
      }
      if (sq == 0.0) fail(ErrorCode::ZeroNormVector, "row " + std::to_string(i));
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) fail(ErrorCode::DuplicateId, id);
    }
    for (const auto& [name, labels] : attrs_) {
      if (labels.size() != n)
        fail(ErrorCode::RowCountMismatch, "attribute " + name + " length mismatch");
      for (Label l : labels) {
        auto v = static_cast<int>(l);
        if (v < -1 || v > 1) fail(ErrorCode::BadLabelValue, name);
      }
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return ids_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const AttributeMap& attributes() const noexcept { return attrs_; }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }

  bool has_attribute(std::string_view name) const {
    return attrs_.find(std::string(name)) != attrs_.end();
  }

  const std::vector<Label>& labels(std::string_view name) const {
    auto it = attrs_.find(std::string(name));
    if (it == attrs_.end()) fail(ErrorCode::UnknownAttribute, std::string(name));
    return it->second;
  }

 private:
  std::size_t dim_;
  std::vector<float> values_;
  std::vector<std::string> ids_;
  AttributeMap attrs_;
};

using StorePtr = std::shared_ptr<const EmbeddingStore>;

// ---------------------------------------------------------------------------
// Metadata JSONL: {"row": u64, "id": str, "attrs": {"name": -1|1, ...}}

struct MetaRow {
  std::string id;
  std::map<std::string, Label> attrs;
};

inline std::map<std::size_t, MetaRow> parse_meta(std::istream& in,
                                                 std::size_t count) {
  std::map<std::size_t, MetaRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "meta line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::MalformedMeta, where + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("row") || !obj["row"].is_number_unsigned())
      fail(ErrorCode::MalformedMeta, where + ": missing unsigned \"row\"");
    const auto row = obj["row"].get<std::uint64_t>();
    if (row >= count)
      fail(ErrorCode::RowOutOfRange, where + ": row " + std::to_string(row));
    MetaRow meta;
    if (obj.contains("id")) {
      if (!obj["id"].is_string()) fail(ErrorCode::MalformedMeta, where + ": id");
      meta.id = obj["id"].get<std::string>();
    } else {
      meta.id = "row-" + std::to_string(row);
    }
    if (obj.contains("attrs")) {
      const auto& attrs = obj["attrs"];
      if (!attrs.is_object()) fail(ErrorCode::MalformedMeta, where + ": attrs");
      for (const auto& [name, value] : attrs.items()) {
        if (value.is_null()) {
          meta.attrs[name] = Label::Unlabeled;
          continue;
        }
        if (!value.is_number_integer())
          fail(ErrorCode::BadLabelValue, where + ": " + name + "=" + value.dump());
        const auto v = value.get<std::int64_t>();
        if (v != 1 && v != -1)
          fail(ErrorCode::BadLabelValue, where + ": " + name + "=" + std::to_string(v));
        meta.attrs[name] = v == 1 ? Label::Positive : Label::Negative;
      }
    }
    if (!rows.emplace(row, std::move(meta)).second)
      fail(ErrorCode::DuplicateRow, where + ": row " + std::to_string(row));
  }
  return rows;
}

inline EmbeddingStore assemble_store(FembData data,
                                     const std::map<std::size_t, MetaRow>& meta) {
  const std::size_t n = data.count;
  std::vector<std::string> ids(n);
  EmbeddingStore::AttributeMap attrs;
  for (const auto& [row, m] : meta)
    for (const auto& [name, _] : m.attrs) attrs.try_emplace(name, n, Label::Unlabeled);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = meta.find(i);
    if (it == meta.end()) {
      ids[i] = "row-" + std::to_string(i);
      continue;
    }
    ids[i] = it->second.id;
    for (const auto& [name, label] : it->second.attrs) attrs[name][i] = label;
  }
  return EmbeddingStore(data.dim, std::move(data.values), std::move(ids),
                        std::move(attrs));
}

inline EmbeddingStore ingest(const std::filesystem::path& embeddings_file,
                             const std::filesystem::path& meta_file) {
  FembData data = read_femb(embeddings_file);
  std::ifstream in(meta_file);
  if (!in) fail(ErrorCode::Io, "cannot open " + meta_file.string());
  auto meta = parse_meta(in, data.count);
  return assemble_store(std::move(data), meta);
}

/// Canonical metadata: one line per row in row order, labelled attributes only.
inline std::string meta_jsonl(const EmbeddingStore& store) {
  std::string out;
  for (std::size_t i = 0; i < store.count(); ++i) {
    nlohmann::json attrs = nlohmann::json::object();
    for (const auto& [name, labels] : store.attributes()) {
      if (labels[i] != Label::Unlabeled) attrs[name] = static_cast<int>(labels[i]);
    }
    nlohmann::json line = {{"row", i}, {"id", store.ids()[i]}, {"attrs", attrs}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline void export_store(const EmbeddingStore& store,
                         const std::filesystem::path& embeddings_file,
                         const std::filesystem::path& meta_file) {
  write_femb(embeddings_file, static_cast<std::uint32_t>(store.dim()), store.values());
  detail::write_file_atomic(meta_file, meta_jsonl(store));
}

// ---------------------------------------------------------------------------

/// Read-only window onto a store: a row subset plus an optional linear
/// re-representation applied on read (row vector times `transform`).
class StoreView {
 public:
  StoreView() = default;

  static StoreView all(StorePtr store) {
    std::vector<std::size_t> rows(store->count());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return StoreView(std::move(store), std::move(rows), nullptr);
  }

  static StoreView of_rows(StorePtr store, std::vector<std::size_t> rows) {
    for (std::size_t r : rows)
      if (r >= store->count()) fail(ErrorCode::RowOutOfRange, std::to_string(r));
    return StoreView(std::move(store), std::move(rows), nullptr);
  }

  const EmbeddingStore& store() const { return *store_; }
  const StorePtr& store_ptr() const { return store_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  std::span<const std::size_t> rows() const noexcept { return rows_; }
  std::size_t row(std::size_t k) const { return rows_[k]; }
  std::size_t input_dim() const { return store_->dim(); }
  std::size_t dim() const {
    return transform_ ? static_cast<std::size_t>(transform_->cols()) : store_->dim();
  }
  const Eigen::MatrixXd* transform() const { return transform_.get(); }

  Label label(std::string_view attribute, std::size_t k) const {
    return store_->labels(attribute)[rows_[k]];
  }

  Eigen::VectorXd raw_vector(std::size_t k) const {
    auto r = store_->row(rows_[k]);
    Eigen::VectorXd v(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) v[static_cast<Eigen::Index>(j)] = r[j];
    return v;
  }

  /// Row k as seen through the view, in 64-bit.
  Eigen::VectorXd vector(std::size_t k) const {
    Eigen::VectorXd v = raw_vector(k);
    if (!transform_) return v;
    return transform_->transpose() * v;
  }

  /// All rows as a size x dim matrix (transform applied).
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(size()),
                        static_cast<Eigen::Index>(input_dim()));
    for (std::size_t k = 0; k < size(); ++k) {
      auto r = store_->row(rows_[k]);
      for (std::size_t j = 0; j < r.size(); ++j)
        raw(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = r[j];
    }
    if (!transform_) return raw;
    Eigen::MatrixXd out(raw.rows(), transform_->cols());
    for (Eigen::Index k = 0; k < raw.rows(); ++k)
      out.row(k) = (transform_->transpose() * raw.row(k).transpose()).transpose();
    return out;
  }

  StoreView with_rows(std::vector<std::size_t> rows) const {
    return StoreView(store_, std::move(rows), transform_);
  }

  /// Composes `t` after any transform already on the view.
  StoreView with_transform(const Eigen::MatrixXd& t) const {
    if (static_cast<std::size_t>(t.rows()) != dim())
      fail(ErrorCode::DimMismatch, "transform rows " + std::to_string(t.rows()) +
                                       " != view dim " + std::to_string(dim()));
    auto composed = transform_ ? std::make_shared<const Eigen::MatrixXd>(*transform_ * t)
                               : std::make_shared<const Eigen::MatrixXd>(t);
    return StoreView(store_, rows_, std::move(composed));
  }

  StoreView without_transform() const { return StoreView(store_, rows_, nullptr); }

 private:
  StoreView(StorePtr store, std::vector<std::size_t> rows,
            std::shared_ptr<const Eigen::MatrixXd> transform)
      : store_(std::move(store)), rows_(std::move(rows)),
        transform_(std::move(transform)) {}

  StorePtr store_;
  std::vector<std::size_t> rows_;
  std::shared_ptr<const Eigen::MatrixXd> transform_;
};

// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.3;
  std::uint64_t seed = 0;
};

struct Split {
  StoreView train;
  StoreView test;
  std::vector<bool> in_train;  // per store row
};

/// Deterministic train/test partition. Each row draws a hash of (seed, row);
/// the round(fraction * count) smallest draws go to train.
inline Split split(const StorePtr& store, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    fail(ErrorCode::InvalidArgument, "train_fraction must be in (0, 1)");
  const std::size_t n = store->count();
  if (n == 0) fail(ErrorCode::EmptyStore, "cannot split an empty store");
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) keyed[i] = {mix_seed(spec.seed, i), i};
  std::sort(keyed.begin(), keyed.end());
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  Split out;
  out.in_train.assign(n, false);
  for (std::size_t k = 0; k < n_train; ++k) out.in_train[keyed[k].second] = true;
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < n; ++i)
    (out.in_train[i] ? train_rows : test_rows).push_back(i);
  auto base = StoreView::all(store);
  out.train = base.with_rows(std::move(train_rows));
  out.test = base.with_rows(std::move(test_rows));
  return out;
}

inline StoreView subset_by_attr(const StoreView& view, std::string_view attribute,
                                Label label) {
  if (label == Label::Unlabeled)
    fail(ErrorCode::BadLabelValue, "subset label must be -1 or +1");
  const auto& labels = view.store().labels(attribute);
  std::vector<std::size_t> rows;
  for (std::size_t r : view.rows())
    if (labels[r] == label) rows.push_back(r);
  return view.with_rows(std::move(rows));
}

/// Rows of `view` that carry a label for `attribute`.
inline StoreView labeled_rows(const StoreView& view, std::string_view attribute) {
  const auto& labels = view.store().labels(attribute);
  std::vector<std::size_t> rows;
  for (std::size_t r : view.rows())
    if (labels[r] != Label::Unlabeled) rows.push_back(r);
  return view.with_rows(std::move(rows));
}

}  // namespace fairsim
