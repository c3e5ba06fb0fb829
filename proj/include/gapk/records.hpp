#pragma once

// Sample/token data model and the line-delimited JSON record format.
//
// A corpus file is UTF-8 JSON Lines. An optional first line starting with
// {"_meta": holds string metadata; every other non-blank line is one sample:
//
//   {"sample_id": "a", "label": "member"|"nonmember"|null, "text": str|null,
//    "tokens": [[target, top1, mean, std], ...], "neighbor_losses": [..]|null}
//
// Files may be gzip-compressed; detection is by magic bytes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <zlib.h>

#include "json.hpp"

namespace gapk {

/// Log-probabilities are natural log (nats) throughout.
inline constexpr double kClampTolerance = 1e-6;

enum class Label { member, nonmember };

inline std::string_view to_string(Label label) {
  return label == Label::member ? "member" : "nonmember";
}

/// Summary of the model's next-token distribution at one predicted position.
struct TokenStats {
  double target_logprob = 0.0;  // log p(x_t | x_<t)
  double top1_logprob = 0.0;    // max_v log p(v | x_<t)
  double mean_logprob = 0.0;    // E_{z~p}[log p(z | x_<t)]
  double std_logprob = 0.0;     // sqrt(E_{z~p}[(log p(z) - mean)^2])

  friend bool operator==(const TokenStats&, const TokenStats&) = default;
};

struct SampleRecord {
  std::string sample_id;
  std::optional<Label> label;
  std::optional<std::string> text;
  std::vector<TokenStats> tokens;
  std::optional<std::vector<double>> neighbor_losses;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Corpus {
  std::vector<SampleRecord> records;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// One located problem found while reading a corpus file. line is 1-based.
struct Diagnostic {
  std::size_t line = 0;
  std::string field;
  std::string message;

  std::string describe() const {
    std::ostringstream os;
    os << "line " << line;
    if (!field.empty()) os << ", field '" << field << "'";
    os << ": " << message;
    return os.str();
  }
};

/// Input data could not be used: malformed file, invariant violation, or a
/// missing precondition such as "no labeled samples".
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusError : public DataError {
 public:
  explicit CorpusError(std::vector<Diagnostic> diagnostics)
      : DataError(summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string summarize(const std::vector<Diagnostic>& diags) {
    std::string out = std::to_string(diags.size()) + " invalid record(s)";
    if (!diags.empty()) out += "; first: " + diags.front().describe();
    return out;
  }

  std::vector<Diagnostic> diagnostics_;
};

/// Checks TokenStats invariants, clamping float noise up to kClampTolerance.
/// Returns an empty string on success, otherwise the violated invariant.
inline std::string validate_token(TokenStats& t) {
  if (!std::isfinite(t.target_logprob) || !std::isfinite(t.top1_logprob) ||
      !std::isfinite(t.mean_logprob) || !std::isfinite(t.std_logprob)) {
    return "all statistics must be finite";
  }
  if (t.top1_logprob > 0.0) {
    if (t.top1_logprob > kClampTolerance) return "top1_logprob <= 0 violated";
    t.top1_logprob = 0.0;
  }
  if (t.target_logprob > t.top1_logprob) {
    if (t.target_logprob - t.top1_logprob > kClampTolerance)
      return "target_logprob <= top1_logprob violated";
    t.target_logprob = t.top1_logprob;
  }
  if (t.mean_logprob > t.top1_logprob) {
    if (t.mean_logprob - t.top1_logprob > kClampTolerance)
      return "mean_logprob <= top1_logprob violated";
    t.mean_logprob = t.top1_logprob;
  }
  if (t.std_logprob < 0.0) return "std_logprob >= 0 violated";
  return {};
}

namespace detail {

inline bool has_gzip_magic(std::string_view bytes) {
  return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
         static_cast<unsigned char>(bytes[1]) == 0x8b;
}

inline std::string gunzip(std::string_view compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw std::runtime_error("inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());

  std::string out;
  char buffer[1 << 15];
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt gzip stream");
    }
    out.append(buffer, sizeof(buffer) - zs.avail_out);
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("read failure on " + path.string());
  std::string bytes = std::move(ss).str();
  return has_gzip_magic(bytes) ? gunzip(bytes) : bytes;
}

inline bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline double number_field(const nlohmann::json& j, const char* field) {
  if (!j.is_number()) throw Diagnostic{0, field, "expected a number"};
  return j.get<double>();
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Diagnostic{0, "", "record must be a JSON object"};

  SampleRecord r;
  auto id = j.find("sample_id");
  if (id == j.end() || !id->is_string()) throw Diagnostic{0, "sample_id", "missing or not a string"};
  r.sample_id = id->get<std::string>();

  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (*it == "member") r.label = Label::member;
    else if (*it == "nonmember") r.label = Label::nonmember;
    else throw Diagnostic{0, "label", "expected \"member\", \"nonmember\" or null"};
  }
  if (auto it = j.find("text"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Diagnostic{0, "text", "expected a string or null"};
    r.text = it->get<std::string>();
  }

  auto tokens = j.find("tokens");
  if (tokens == j.end() || !tokens->is_array()) throw Diagnostic{0, "tokens", "missing or not an array"};
  if (tokens->empty()) throw Diagnostic{0, "tokens", "must contain at least one position"};
  r.tokens.reserve(tokens->size());
  for (std::size_t i = 0; i < tokens->size(); ++i) {
    const auto& tup = (*tokens)[i];
    const std::string field = "tokens[" + std::to_string(i) + "]";
    if (!tup.is_array() || tup.size() != 4)
      throw Diagnostic{0, field, "expected [target, top1, mean, std]"};
    TokenStats t;
    try {
      t.target_logprob = number_field(tup[0], "");
      t.top1_logprob = number_field(tup[1], "");
      t.mean_logprob = number_field(tup[2], "");
      t.std_logprob = number_field(tup[3], "");
    } catch (const Diagnostic& d) {
      throw Diagnostic{0, field, d.message};
    }
    if (auto err = validate_token(t); !err.empty()) throw Diagnostic{0, field, err};
    r.tokens.push_back(t);
  }

  if (auto it = j.find("neighbor_losses"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Diagnostic{0, "neighbor_losses", "expected an array or null"};
    if (it->empty()) throw Diagnostic{0, "neighbor_losses", "must be non-empty when present"};
    std::vector<double> losses;
    for (const auto& v : *it) {
      const double x = number_field(v, "neighbor_losses");
      if (!std::isfinite(x)) throw Diagnostic{0, "neighbor_losses", "values must be finite"};
      losses.push_back(x);
    }
    r.neighbor_losses = std::move(losses);
  }
  return r;
}

}  // namespace detail

struct ParseResult {
  Corpus corpus;
  std::vector<Diagnostic> diagnostics;
};

/// Parses corpus text, keeping valid records and reporting every invalid one.
inline ParseResult parse_corpus_text(std::string_view content) {
  ParseResult result;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool first_content_line = true;

  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (detail::is_blank(line)) continue;

    const bool meta_candidate = first_content_line;
    first_content_line = false;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.diagnostics.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
      continue;
    }

    if (j.is_object() && j.contains("_meta")) {
      if (!meta_candidate) {
        result.diagnostics.push_back({line_no, "_meta", "metadata allowed only on the first line"});
        continue;
      }
      const auto& meta = j["_meta"];
      if (!meta.is_object()) {
        result.diagnostics.push_back({line_no, "_meta", "expected an object"});
        continue;
      }
      for (const auto& [key, value] : meta.items())
        result.corpus.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
      continue;
    }

    try {
      SampleRecord r = detail::record_from_json(j);
      if (!seen.insert(r.sample_id).second) {
        result.diagnostics.push_back({line_no, "sample_id", "duplicate sample_id '" + r.sample_id + "'"});
        continue;
      }
      result.corpus.records.push_back(std::move(r));
    } catch (Diagnostic& d) {
      d.line = line_no;
      result.diagnostics.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      result.diagnostics.push_back({line_no, "", e.what()});
    }
  }
  return result;
}

inline ParseResult parse_corpus_lenient(const std::filesystem::path& path) {
  return parse_corpus_text(detail::read_file(path));
}

/// Reads and validates a corpus; throws CorpusError listing every bad line.
inline Corpus parse_corpus(const std::filesystem::path& path) {
  ParseResult r = parse_corpus_lenient(path);
  if (!r.diagnostics.empty()) throw CorpusError(std::move(r.diagnostics));
  return std::move(r.corpus);
}

inline nlohmann::ordered_json record_to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["label"] = r.label ? nlohmann::ordered_json(std::string(to_string(*r.label))) : nullptr;
  j["text"] = r.text ? nlohmann::ordered_json(*r.text) : nullptr;
  auto tokens = nlohmann::ordered_json::array();
  for (const auto& t : r.tokens)
    tokens.push_back({t.target_logprob, t.top1_logprob, t.mean_logprob, t.std_logprob});
  j["tokens"] = std::move(tokens);
  j["neighbor_losses"] = r.neighbor_losses ? nlohmann::ordered_json(*r.neighbor_losses) : nullptr;
  return j;
}

inline std::string corpus_to_text(const Corpus& corpus) {
  std::string out;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : corpus.metadata) meta[k] = v;
  out += nlohmann::ordered_json{{"_meta", meta}}.dump();
  out += '\n';
  for (const auto& r : corpus.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

/// Writes the canonical format; a ".gz" extension produces a gzip file.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const std::string body = corpus_to_text(corpus);
  if (path.extension() == ".gz") {
    gzFile gz = gzopen(path.string().c_str(), "wb");
    if (!gz) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const int written = gzwrite(gz, body.data(), static_cast<unsigned>(body.size()));
    const int rc = gzclose(gz);
    if (written != static_cast<int>(body.size()) || rc != Z_OK)
      throw std::runtime_error("write failure on " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << body;
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

}  // namespace gapk
