#pragma once

// On-disk artifacts that decouple the pipeline from any model framework:
// a JSON manifest, little-endian binary feature banks (flat "PRFB" and
// ragged "PRFG"), line-oriented vocabularies and JSON candidate tables.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prophet/error.hpp"
#include "prophet/util.hpp"

namespace prophet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Sample {
  std::string id;
  std::string question;
  std::string caption;
  std::optional<std::vector<std::string>> ocr_tokens;
  std::optional<std::string> hint;
  std::optional<std::vector<std::string>> choices;
  std::optional<std::vector<std::string>> tags;
  std::vector<std::string> answers;
  std::optional<std::string> category;
  Split split = Split::train;

  bool operator==(const Sample&) const = default;
};

enum class BankKind : std::uint8_t { fused = 0, question = 1, image = 2, answer_logits = 3 };

inline std::string_view to_string(BankKind k) {
  switch (k) {
    case BankKind::fused: return "fused";
    case BankKind::question: return "question";
    case BankKind::image: return "image";
    case BankKind::answer_logits: return "answer_logits";
  }
  return "?";
}

inline BankKind parse_bank_kind(std::string_view s) {
  if (s == "fused") return BankKind::fused;
  if (s == "question") return BankKind::question;
  if (s == "image") return BankKind::image;
  if (s == "answer_logits") return BankKind::answer_logits;
  throw ArtifactError("unknown bank kind '" + std::string(s) + "'");
}

struct AnswerCandidate {
  std::string answer;
  double score = 0.0;

  bool operator==(const AnswerCandidate&) const = default;
};

// ---------------------------------------------------------------------------
// Feature banks

class FeatureBank {
 public:
  FeatureBank() = default;
  FeatureBank(BankKind kind, std::size_t dim, std::vector<std::string> ids, std::vector<float> rows)
      : kind_(kind), dim_(dim), ids_(std::move(ids)), rows_(std::move(rows)) {
    if (dim_ == 0) throw ArtifactError("feature bank dim must be positive");
    if (ids_.empty()) throw ArtifactError("feature bank count must be positive");
    if (rows_.size() != ids_.size() * dim_) {
      throw ArtifactError("feature bank rows do not match count x dim");
    }
    index_ids();
    for (std::size_t r = 0; r < count(); ++r) {
      for (float v : row(r)) {
        if (!std::isfinite(v)) {
          throw ArtifactError("non-finite value in feature bank row " + std::to_string(r));
        }
      }
    }
  }

  BankKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> data() const { return rows_; }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(rows_).subspan(i * dim_, dim_);
  }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const float> row(std::string_view id) const {
    auto i = find(id);
    if (!i) throw ArtifactError("id '" + std::string(id) + "' not in " + std::string(to_string(kind_)) + " bank");
    return row(*i);
  }

  bool operator==(const FeatureBank& o) const {
    return kind_ == o.kind_ && dim_ == o.dim_ && ids_ == o.ids_ && rows_ == o.rows_;
  }

 private:
  void index_ids() {
    by_id_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!by_id_.emplace(ids_[i], i).second) {
        throw ArtifactError("duplicate id '" + ids_[i] + "' in feature bank");
      }
    }
  }

  BankKind kind_ = BankKind::fused;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> rows_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// A contiguous block of L rows of dimension d.
struct GroupView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

class GroupedFeatureBank {
 public:
  GroupedFeatureBank() = default;
  GroupedFeatureBank(BankKind kind, std::size_t dim, std::vector<std::string> ids,
                     std::vector<std::uint64_t> offsets, std::vector<float> rows)
      : kind_(kind), dim_(dim), ids_(std::move(ids)), offsets_(std::move(offsets)), rows_(std::move(rows)) {
    if (dim_ == 0) throw ArtifactError("grouped bank dim must be positive");
    if (ids_.empty()) throw ArtifactError("grouped bank count must be positive");
    if (offsets_.size() != ids_.size() + 1) throw ArtifactError("grouped bank needs count+1 offsets");
    if (offsets_.front() != 0) throw ArtifactError("grouped bank offsets[0] must be 0");
    for (std::size_t i = 0; i + 1 < offsets_.size(); ++i) {
      if (offsets_[i + 1] < offsets_[i]) {
        throw ArtifactError("grouped bank offsets are not monotone at index " + std::to_string(i + 1));
      }
      if (offsets_[i + 1] == offsets_[i]) {
        throw ArtifactError("grouped bank group " + std::to_string(i) + " is empty");
      }
    }
    if (offsets_.back() * dim_ != rows_.size()) {
      throw ArtifactError("grouped bank offsets[count] does not match total rows");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!by_id_.emplace(ids_[i], i).second) {
        throw ArtifactError("duplicate id '" + ids_[i] + "' in grouped bank");
      }
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (!std::isfinite(rows_[i])) {
        throw ArtifactError("non-finite value in grouped bank row " + std::to_string(i / dim_));
      }
    }
  }

  BankKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  std::size_t total_rows() const { return offsets_.back(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  std::span<const float> data() const { return rows_; }

  GroupView group(std::size_t i) const {
    const auto begin = offsets_[i], end = offsets_[i + 1];
    return {std::span<const float>(rows_).subspan(begin * dim_, (end - begin) * dim_), end - begin, dim_};
  }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const GroupedFeatureBank& o) const {
    return kind_ == o.kind_ && dim_ == o.dim_ && ids_ == o.ids_ && offsets_ == o.offsets_ && rows_ == o.rows_;
  }

 private:
  BankKind kind_ = BankKind::fused;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::uint64_t> offsets_{0};
  std::vector<float> rows_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Binary bank codec

namespace detail {

inline constexpr std::uint16_t kBankVersion = 1;

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void put_cstr(std::string_view s) {
    put_bytes(s);
    buf_.push_back(0);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_cstr() {
    auto it = std::find(bytes_.begin() + pos_, bytes_.end(), std::uint8_t{0});
    if (it == bytes_.end()) throw ArtifactError(what_ + ": unterminated id string");
    std::string s(bytes_.begin() + pos_, it);
    pos_ = static_cast<std::size_t>(it - bytes_.begin()) + 1;
    return s;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ArtifactError(what_ + ": truncated header");
  }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_file_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_file(const fs::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void write_header(ByteWriter& w, std::string_view magic, BankKind kind, std::size_t dim,
                         std::span<const std::string> ids) {
  w.put_bytes(magic);
  w.put<std::uint16_t>(kBankVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  w.put<std::uint64_t>(ids.size());
  for (const auto& id : ids) {
    if (id.find('\0') != std::string::npos) throw ArtifactError("bank id contains NUL");
    w.put_cstr(id);
  }
}

struct Header {
  BankKind kind;
  std::size_t dim;
  std::vector<std::string> ids;
};

inline Header read_header(ByteReader& r, std::string_view magic, const std::string& what) {
  if (r.remaining() < 4 || r.get_bytes(4) != magic) {
    throw ArtifactError(what + ": bad magic (expected " + std::string(magic) + ")");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kBankVersion) throw ArtifactError(what + ": unsupported version " + std::to_string(version));
  const auto kind = r.get<std::uint8_t>();
  if (kind > 3) throw ArtifactError(what + ": unknown kind code " + std::to_string(kind));
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (dim == 0) throw ArtifactError(what + ": dim must be positive");
  if (count == 0) throw ArtifactError(what + ": count must be positive");
  if (count > r.remaining()) throw ArtifactError(what + ": count exceeds payload length");
  Header h{static_cast<BankKind>(kind), dim, {}};
  h.ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) h.ids.push_back(r.get_cstr());
  return h;
}

inline void verify_crc(std::span<const std::uint8_t> bytes, const std::string& what) {
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.subspan(body), what);
  const auto stored = tail.get<std::uint32_t>();
  if (stored != crc32(bytes.first(body))) throw ArtifactError(what + ": checksum mismatch");
}

inline std::vector<float> read_rows(ByteReader& r, std::size_t n_floats, std::size_t dim, const std::string& what) {
  std::vector<float> rows(n_floats);
  for (std::size_t i = 0; i < n_floats; ++i) {
    rows[i] = r.get_f32();
    if (!std::isfinite(rows[i])) {
      throw ArtifactError(what + ": non-finite value in row " + std::to_string(i / dim));
    }
  }
  return rows;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_feature_bank(const FeatureBank& bank) {
  detail::ByteWriter w;
  detail::write_header(w, "PRFB", bank.kind(), bank.dim(), bank.ids());
  for (float f : bank.data()) w.put_f32(f);
  w.put<std::uint32_t>(crc32(w.bytes()));
  return std::move(w.bytes());
}

inline FeatureBank decode_feature_bank(std::span<const std::uint8_t> bytes, const std::string& what = "feature bank") {
  detail::ByteReader r(bytes, what);
  auto h = detail::read_header(r, "PRFB", what);
  const std::size_t n_floats = h.ids.size() * h.dim;
  if (r.remaining() != n_floats * 4 + 4) {
    throw ArtifactError(what + ": payload length " + std::to_string(r.remaining()) +
                        " does not match dim/count (expected " + std::to_string(n_floats * 4 + 4) + ")");
  }
  detail::verify_crc(bytes, what);
  auto rows = detail::read_rows(r, n_floats, h.dim, what);
  return FeatureBank(h.kind, h.dim, std::move(h.ids), std::move(rows));
}

inline void write_feature_bank(const fs::path& path, const FeatureBank& bank) {
  detail::write_file(path, encode_feature_bank(bank));
}

inline FeatureBank load_feature_bank(const fs::path& path) {
  return decode_feature_bank(detail::read_file_bytes(path), path.string());
}

inline std::vector<std::uint8_t> encode_grouped_bank(const GroupedFeatureBank& bank) {
  detail::ByteWriter w;
  detail::write_header(w, "PRFG", bank.kind(), bank.dim(), bank.ids());
  for (auto o : bank.offsets()) w.put<std::uint64_t>(o);
  for (float f : bank.data()) w.put_f32(f);
  w.put<std::uint32_t>(crc32(w.bytes()));
  return std::move(w.bytes());
}

inline GroupedFeatureBank decode_grouped_bank(std::span<const std::uint8_t> bytes,
                                              const std::string& what = "grouped bank") {
  detail::ByteReader r(bytes, what);
  auto h = detail::read_header(r, "PRFG", what);
  std::vector<std::uint64_t> offsets(h.ids.size() + 1);
  for (auto& o : offsets) o = r.get<std::uint64_t>();
  if (offsets.front() != 0) throw ArtifactError(what + ": offsets[0] must be 0");
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] < offsets[i - 1]) {
      throw ArtifactError(what + ": offsets are not monotone at index " + std::to_string(i));
    }
  }
  const std::uint64_t total = offsets.back();
  if (total > r.remaining() || r.remaining() != total * h.dim * 4 + 4) {
    throw ArtifactError(what + ": offsets[count] = " + std::to_string(total) +
                        " does not match the number of rows in the payload");
  }
  detail::verify_crc(bytes, what);
  auto rows = detail::read_rows(r, total * h.dim, h.dim, what);
  return GroupedFeatureBank(h.kind, h.dim, std::move(h.ids), std::move(offsets), std::move(rows));
}

inline void write_grouped_bank(const fs::path& path, const GroupedFeatureBank& bank) {
  detail::write_file(path, encode_grouped_bank(bank));
}

inline GroupedFeatureBank load_grouped_bank(const fs::path& path) {
  return decode_grouped_bank(detail::read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::string_view kBos = "[BOS]";
inline constexpr std::string_view kEos = "[EOS]";

class AnswerVocabulary {
 public:
  enum class Type { discriminative, generative };

  AnswerVocabulary() = default;
  AnswerVocabulary(Type type, std::vector<std::string> entries) : type_(type), entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!index_.emplace(entries_[i], i).second) {
        throw ArtifactError("duplicate vocabulary entry '" + entries_[i] + "'");
      }
    }
    if (entries_.empty()) throw ArtifactError("vocabulary is empty");
    if (type_ == Type::generative && (!index_.contains(std::string(kBos)) || !index_.contains(std::string(kEos)))) {
      throw ArtifactError("generative vocabulary must contain [BOS] and [EOS]");
    }
  }

  Type type() const { return type_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& operator[](std::size_t i) const { return entries_.at(i); }
  const std::vector<std::string>& entries() const { return entries_; }

  std::optional<std::size_t> find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t bos() const { return index_.at(std::string(kBos)); }
  std::size_t eos() const { return index_.at(std::string(kEos)); }
  bool has_eos() const { return index_.contains(std::string(kEos)); }

 private:
  Type type_ = Type::discriminative;
  std::vector<std::string> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline AnswerVocabulary parse_vocabulary(std::string_view text, AnswerVocabulary::Type type) {
  std::vector<std::string> entries;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) throw ArtifactError("empty vocabulary line " + std::to_string(entries.size() + 1));
    entries.emplace_back(line);
    pos = nl + 1;
  }
  return AnswerVocabulary(type, std::move(entries));
}

inline AnswerVocabulary load_vocabulary(const fs::path& path, AnswerVocabulary::Type type) {
  return parse_vocabulary(detail::read_file_text(path), type);
}

inline void write_vocabulary(const fs::path& path, const AnswerVocabulary& vocab) {
  std::string text;
  for (const auto& e : vocab.entries()) text += e + "\n";
  detail::write_file(path, text);
}

// ---------------------------------------------------------------------------
// Candidate tables

class CandidateTable {
 public:
  CandidateTable() = default;
  explicit CandidateTable(std::size_t k_max) : k_max_(k_max) {}

  void set(const std::string& id, std::vector<AnswerCandidate> cands) {
    if (cands.size() > k_max_) {
      throw ArtifactError("candidate list for '" + id + "' exceeds K_max=" + std::to_string(k_max_));
    }
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double s = cands[i].score;
      if (!(std::isfinite(s) && s > 0.0 && s <= 1.0)) {
        throw ArtifactError("candidate score for '" + id + "' outside (0,1]");
      }
      if (cands[i].answer.empty()) throw ArtifactError("empty candidate answer for '" + id + "'");
      if (i > 0 && s > cands[i - 1].score) {
        throw ArtifactError("candidate scores for '" + id + "' are not non-increasing");
      }
    }
    if (!table_.contains(id)) order_.push_back(id);
    table_[id] = std::move(cands);
  }

  const std::vector<AnswerCandidate>* find(std::string_view id) const {
    auto it = table_.find(std::string(id));
    return it == table_.end() ? nullptr : &it->second;
  }

  const std::vector<AnswerCandidate>& at(std::string_view id) const {
    if (auto* c = find(id)) return *c;
    throw ArtifactError("no candidates for sample '" + std::string(id) + "'");
  }

  std::size_t k_max() const { return k_max_; }
  std::size_t size() const { return order_.size(); }
  const std::vector<std::string>& ids() const { return order_; }

 private:
  std::size_t k_max_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::vector<AnswerCandidate>> table_;
};

inline ordered_json candidate_table_to_json(const CandidateTable& t) {
  ordered_json j;
  j["version"] = 1;
  j["k_max"] = t.k_max();
  j["entries"] = ordered_json::array();
  for (const auto& id : t.ids()) {
    ordered_json e;
    e["id"] = id;
    e["candidates"] = ordered_json::array();
    for (const auto& c : t.at(id)) e["candidates"].push_back({{"answer", c.answer}, {"score", c.score}});
    j["entries"].push_back(std::move(e));
  }
  return j;
}

inline CandidateTable candidate_table_from_json(const nlohmann::json& j) {
  try {
    CandidateTable t(j.at("k_max").get<std::size_t>());
    for (const auto& e : j.at("entries")) {
      std::vector<AnswerCandidate> cands;
      for (const auto& c : e.at("candidates")) {
        cands.push_back({c.at("answer").get<std::string>(), c.at("score").get<double>()});
      }
      t.set(e.at("id").get<std::string>(), std::move(cands));
    }
    return t;
  } catch (const nlohmann::json::exception& ex) {
    throw ArtifactError(std::string("candidate table: ") + ex.what());
  }
}

inline void write_candidate_table(const fs::path& path, const CandidateTable& t) {
  detail::write_file(path, candidate_table_to_json(t).dump(2) + "\n");
}

inline CandidateTable load_candidate_table(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ArtifactError(path.string() + ": " + ex.what());
  }
  return candidate_table_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifest

struct BankRef {
  BankKind kind = BankKind::fused;
  std::string path;
  bool grouped = false;
  std::optional<bool> complete;  // absent means complete

  bool operator==(const BankRef&) const = default;
};

struct VocabRef {
  AnswerVocabulary::Type type = AnswerVocabulary::Type::discriminative;
  std::string path;

  bool operator==(const VocabRef&) const = default;
};

// Where stage-1 candidates come from: a stored table, or top-K over the
// answer_logits bank computed on demand.
struct CandidateSource {
  enum class Mode { precomputed, logits };
  Mode mode = Mode::logits;
  std::string path;

  bool operator==(const CandidateSource&) const = default;
};

struct Manifest {
  int version = 1;
  std::string dataset_name;
  std::vector<Sample> samples;
  std::vector<BankRef> banks;
  VocabRef vocab;
  std::optional<CandidateSource> candidates;

  bool operator==(const Manifest&) const = default;
};

namespace detail {

// Line number (1-based) at which each element of the top-level array `key`
// begins. Used only to point schema errors at a line.
inline std::vector<int> array_element_lines(std::string_view text, std::string_view key) {
  std::vector<int> lines;
  int line = 1, depth = 0, array_depth = -1;
  bool in_string = false, escape = false, expect_array = false;
  std::string last_string;
  std::string current;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escape) {
        escape = false;
      } else if (c == '\\') {
        escape = true;
      } else if (c == '"') {
        in_string = false;
        last_string = current;
      } else {
        current += c;
      }
      continue;
    }
    if (expect_array && c != '[' && !is_space(c)) expect_array = false;
    switch (c) {
      case '"':
        in_string = true;
        current.clear();
        break;
      case ':':
        expect_array = depth == 1 && last_string == key;
        break;
      case '[':
        if (expect_array && array_depth == -1) array_depth = depth + 1;
        expect_array = false;
        ++depth;
        break;
      case '{':
        if (array_depth >= 0 && depth == array_depth) lines.push_back(line);
        ++depth;
        break;
      case ']':
      case '}':
        --depth;
        if (array_depth >= 0 && depth < array_depth) array_depth = -2;
        break;
      default:
        break;
    }
  }
  return lines;
}

}  // namespace detail

inline ordered_json sample_to_json(const Sample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["question"] = s.question;
  j["caption"] = s.caption;
  if (s.ocr_tokens) j["ocr"] = *s.ocr_tokens;
  if (s.hint) j["hint"] = *s.hint;
  if (s.choices) j["choices"] = *s.choices;
  if (s.tags) j["tags"] = *s.tags;
  j["answers"] = s.answers;
  if (s.category) j["category"] = *s.category;
  j["split"] = to_string(s.split);
  return j;
}

inline ordered_json manifest_to_json(const Manifest& m) {
  ordered_json j;
  j["version"] = m.version;
  j["dataset_name"] = m.dataset_name;
  j["samples"] = ordered_json::array();
  for (const auto& s : m.samples) j["samples"].push_back(sample_to_json(s));
  j["banks"] = ordered_json::array();
  for (const auto& b : m.banks) {
    ordered_json bj{{"kind", to_string(b.kind)}, {"path", b.path}, {"grouped", b.grouped}};
    if (b.complete) bj["complete"] = *b.complete;
    j["banks"].push_back(std::move(bj));
  }
  j["vocab"] = {{"type", m.vocab.type == AnswerVocabulary::Type::generative ? "generative" : "discriminative"},
                {"path", m.vocab.path}};
  if (m.candidates) {
    j["candidates"] = {{"mode", m.candidates->mode == CandidateSource::Mode::precomputed ? "precomputed" : "logits"},
                       {"path", m.candidates->path}};
  }
  return j;
}

inline std::string serialize_manifest(const Manifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

inline Manifest parse_manifest(std::string_view text, const std::string& what = "manifest") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ArtifactError(what + ": " + ex.what());
  }
  const auto sample_lines = detail::array_element_lines(text, "samples");
  std::string where = what;
  auto fail = [&](const std::string& msg) -> void { throw ArtifactError(where + ": " + msg); };
  auto require = [&](const nlohmann::json& obj, const char* field) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(field)) fail(std::string("missing field '") + field + "'");
    return obj.at(field);
  };
  auto str_list = [&](const nlohmann::json& v, const char* field) {
    if (!v.is_array()) fail(std::string("field '") + field + "' must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(std::string("field '") + field + "' must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  auto str = [&](const nlohmann::json& obj, const char* field) {
    const auto& v = require(obj, field);
    if (!v.is_string()) fail(std::string("field '") + field + "' must be a string");
    return v.get<std::string>();
  };

  Manifest m;
  if (!j.is_object()) fail("top level must be an object");
  const auto& version = require(j, "version");
  if (!version.is_number_integer()) fail("field 'version' must be an integer");
  m.version = version.get<int>();
  m.dataset_name = str(j, "dataset_name");

  const auto& samples = require(j, "samples");
  if (!samples.is_array()) fail("field 'samples' must be an array");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    where = what + ":" + (i < sample_lines.size() ? std::to_string(sample_lines[i]) : std::string("?")) +
            ": samples[" + std::to_string(i) + "]";
    const auto& sj = samples[i];
    Sample s;
    s.id = str(sj, "id");
    s.question = str(sj, "question");
    s.caption = str(sj, "caption");
    if (sj.contains("ocr")) s.ocr_tokens = str_list(sj["ocr"], "ocr");
    if (sj.contains("hint")) s.hint = str(sj, "hint");
    if (sj.contains("choices")) {
      s.choices = str_list(sj["choices"], "choices");
      if (s.choices->size() < 2) fail("field 'choices' needs at least 2 entries");
    }
    if (sj.contains("tags")) s.tags = str_list(sj["tags"], "tags");
    s.answers = str_list(require(sj, "answers"), "answers");
    if (sj.contains("category")) s.category = str(sj, "category");
    const auto split = str(sj, "split");
    if (split == "train") {
      s.split = Split::train;
    } else if (split == "test") {
      s.split = Split::test;
    } else {
      fail("field 'split' must be 'train' or 'test'");
    }
    if (s.split == Split::train && s.answers.empty()) fail("train sample '" + s.id + "' has no answers");
    if (!seen.insert(s.id).second) fail("duplicate id '" + s.id + "'");
    m.samples.push_back(std::move(s));
  }
  where = what;

  const auto& banks = require(j, "banks");
  if (!banks.is_array()) fail("field 'banks' must be an array");
  for (const auto& bj : banks) {
    BankRef b;
    b.kind = parse_bank_kind(str(bj, "kind"));
    b.path = str(bj, "path");
    const auto& g = require(bj, "grouped");
    if (!g.is_boolean()) fail("field 'grouped' must be a boolean");
    b.grouped = g.get<bool>();
    if (bj.contains("complete")) {
      if (!bj["complete"].is_boolean()) fail("field 'complete' must be a boolean");
      b.complete = bj["complete"].get<bool>();
    }
    m.banks.push_back(std::move(b));
  }

  const auto& vj = require(j, "vocab");
  const auto vtype = str(vj, "type");
  if (vtype == "discriminative") {
    m.vocab.type = AnswerVocabulary::Type::discriminative;
  } else if (vtype == "generative") {
    m.vocab.type = AnswerVocabulary::Type::generative;
  } else {
    fail("field 'vocab.type' must be 'discriminative' or 'generative'");
  }
  m.vocab.path = str(vj, "path");

  if (j.contains("candidates")) {
    const auto& cj = j["candidates"];
    CandidateSource c;
    const auto mode = str(cj, "mode");
    if (mode == "precomputed") {
      c.mode = CandidateSource::Mode::precomputed;
    } else if (mode == "logits") {
      c.mode = CandidateSource::Mode::logits;
    } else {
      fail("field 'candidates.mode' must be 'precomputed' or 'logits'");
    }
    c.path = cj.contains("path") ? str(cj, "path") : std::string();
    m.candidates = std::move(c);
  }
  return m;
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  detail::write_file(path, serialize_manifest(m));
}

// ---------------------------------------------------------------------------
// Dataset handle: manifest plus everything it references, resolved and
// cross-checked. Immutable once constructed.

class Dataset {
 public:
  Dataset(Manifest manifest, const fs::path& base_dir) : manifest_(std::move(manifest)), base_dir_(base_dir) {
    for (std::size_t i = 0; i < manifest_.samples.size(); ++i) {
      const auto& s = manifest_.samples[i];
      by_id_.emplace(s.id, i);
      (s.split == Split::train ? train_ids_ : test_ids_).push_back(s.id);
    }
    for (const auto& ref : manifest_.banks) {
      const auto path = resolve(ref.path);
      const std::vector<std::string>* ids = nullptr;
      if (ref.grouped) {
        auto [it, fresh] = grouped_.emplace(ref.kind, load_grouped_bank(path));
        if (!fresh) throw ArtifactError("manifest declares two grouped " + std::string(to_string(ref.kind)) + " banks");
        if (it->second.kind() != ref.kind) throw ArtifactError(path.string() + ": kind differs from manifest");
        ids = &it->second.ids();
      } else {
        auto [it, fresh] = flat_.emplace(ref.kind, load_feature_bank(path));
        if (!fresh) throw ArtifactError("manifest declares two " + std::string(to_string(ref.kind)) + " banks");
        if (it->second.kind() != ref.kind) throw ArtifactError(path.string() + ": kind differs from manifest");
        ids = &it->second.ids();
      }
      check_cross_refs(*ids, ref.complete.value_or(true), path.string());
    }
    vocab_ = load_vocabulary(resolve(manifest_.vocab.path), manifest_.vocab.type);
    if (auto* logits = bank(BankKind::answer_logits); logits && logits->dim() != vocab_.size()) {
      throw ArtifactError("answer_logits bank dim " + std::to_string(logits->dim()) +
                          " differs from vocabulary size " + std::to_string(vocab_.size()));
    }
    if (manifest_.candidates && manifest_.candidates->mode == CandidateSource::Mode::precomputed) {
      candidates_ = load_candidate_table(resolve(manifest_.candidates->path));
      std::vector<std::string> ids = candidates_->ids();
      check_cross_refs(ids, false, manifest_.candidates->path);
    }
  }

  const Manifest& manifest() const { return manifest_; }
  const fs::path& base_dir() const { return base_dir_; }
  const std::vector<Sample>& samples() const { return manifest_.samples; }
  const std::vector<std::string>& train_ids() const { return train_ids_; }
  const std::vector<std::string>& test_ids() const { return test_ids_; }
  const AnswerVocabulary& vocab() const { return vocab_; }
  const CandidateTable* precomputed_candidates() const { return candidates_ ? &*candidates_ : nullptr; }

  const Sample& sample(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) throw ArtifactError("unknown sample id '" + std::string(id) + "'");
    return manifest_.samples[it->second];
  }
  bool contains(std::string_view id) const { return by_id_.contains(std::string(id)); }

  const FeatureBank* bank(BankKind kind) const {
    auto it = flat_.find(kind);
    return it == flat_.end() ? nullptr : &it->second;
  }
  const GroupedFeatureBank* grouped_bank(BankKind kind) const {
    auto it = grouped_.find(kind);
    return it == grouped_.end() ? nullptr : &it->second;
  }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir_ / path;
  }

 private:
  void check_cross_refs(const std::vector<std::string>& ids, bool complete, const std::string& what) const {
    std::unordered_set<std::string> present;
    for (const auto& id : ids) {
      if (!by_id_.contains(id)) throw ArtifactError(what + ": dangling sample_id '" + id + "' not in manifest");
      present.insert(id);
    }
    if (complete) {
      for (const auto& s : manifest_.samples) {
        if (!present.contains(s.id)) throw ArtifactError(what + ": manifest id '" + s.id + "' missing from bank");
      }
    }
  }

  Manifest manifest_;
  fs::path base_dir_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::string> train_ids_, test_ids_;
  std::map<BankKind, FeatureBank> flat_;
  std::map<BankKind, GroupedFeatureBank> grouped_;
  AnswerVocabulary vocab_;
  std::optional<CandidateTable> candidates_;
};

inline Dataset load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ArtifactError("manifest '" + path.string() + "' does not exist");
  auto m = parse_manifest(detail::read_file_text(path), path.string());
  return Dataset(std::move(m), path.parent_path());
}

}  // namespace prophet
