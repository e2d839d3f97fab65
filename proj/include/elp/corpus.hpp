#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "elp/error.hpp"

namespace elp {

enum class Impression { low, medium, high };

std::string_view to_string(Impression level);
std::optional<Impression> parse_impression(std::string_view token);

struct SerpResult {
  std::string title;
  std::string url;
  std::string snippet;

  bool operator==(const SerpResult&) const = default;
};

inline constexpr std::size_t kMaxSerpResults = 10;
inline constexpr std::size_t kMinAnswers = 2;
inline constexpr std::size_t kMaxAnswers = 5;
inline constexpr int kMaxEngagement = 10;

struct Serp {
  std::vector<SerpResult> results;

  bool operator==(const Serp&) const = default;
};

// One query with its clarification pane and engagement labels.
struct ClarificationRecord {
  std::string query;
  std::string question;
  std::vector<std::string> answers;
  Impression impression = Impression::low;
  int engagement = 0;
  std::optional<std::vector<double>> answer_click_probs;
  std::optional<Serp> serp;

  bool operator==(const ClarificationRecord&) const = default;
};

// Throws Error(InvalidLabel) when a record violates the type invariants.
void validate(const ClarificationRecord& record);

struct SourceFile {
  std::string path;
  std::string hash;

  bool operator==(const SourceFile&) const = default;
};

struct ParseCounts {
  std::size_t rows_read = 0;
  std::size_t accepted = 0;
  std::size_t malformed = 0;
  std::size_t invalid = 0;

  bool operator==(const ParseCounts&) const = default;
};

struct JoinStats {
  std::size_t matched = 0;
  std::size_t unmatched = 0;

  bool operator==(const JoinStats&) const = default;
};

struct Provenance {
  std::vector<SourceFile> sources;
  ParseCounts click_log;
  std::optional<JoinStats> join;
  std::vector<std::string> notes;

  bool operator==(const Provenance&) const = default;
};

struct PaneGroup {
  std::string query;
  std::vector<std::size_t> records;
};

// Immutable collection of records. The multi-pane index groups records by
// exact query string in first-appearance order.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<ClarificationRecord> records, Provenance provenance = {});

  const std::vector<ClarificationRecord>& records() const { return records_; }
  const ClarificationRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const Provenance& provenance() const { return provenance_; }
  const std::vector<PaneGroup>& pane_groups() const { return pane_groups_; }
  const std::vector<std::size_t>* panes_for(const std::string& query) const;

  // Records at the given indices, in the given order; provenance is kept.
  Corpus subset(std::span<const std::size_t> indices) const;

  // Hash over the canonical serialized records.
  std::string hash() const;

 private:
  std::vector<ClarificationRecord> records_;
  Provenance provenance_;
  std::vector<PaneGroup> pane_groups_;
  std::unordered_map<std::string, std::size_t> group_of_query_;
};

// Column names in the click log. Defaults follow the MIMICS release.
struct ClickLogFormat {
  std::string query = "query";
  std::string question = "question";
  std::vector<std::string> answers = {"option_1", "option_2", "option_3", "option_4", "option_5"};
  std::string impression = "impression_level";
  std::string engagement = "engagement_level";
  std::vector<std::string> click_probs = {"option_cctr_1", "option_cctr_2", "option_cctr_3",
                                          "option_cctr_4", "option_cctr_5"};
};

Corpus parse_click_log(const std::filesystem::path& path, const ClickLogFormat& format = {});

struct SerpDump {
  std::unordered_map<std::string, Serp> serps;
  std::size_t lines_read = 0;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t truncated = 0;
  std::size_t results_dropped = 0;
  SourceFile source;
};

// JSON-lines dump: {"query": ..., "results": [{"title","url","snippet"}, ...]}.
SerpDump parse_serp_dump(const std::filesystem::path& path);

struct JoinOptions {
  bool case_fold = false;
};

Corpus join(const Corpus& corpus, const std::unordered_map<std::string, Serp>& serps,
            const JoinOptions& options = {});

struct FieldStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

FieldStats field_stats(std::vector<double> values);

struct CorpusStats {
  FieldStats query_length;
  FieldStats question_length;
  std::optional<FieldStats> title_length;
  std::optional<FieldStats> snippet_length;
  FieldStats answers_per_query;
  std::optional<FieldStats> results_per_query;
  std::size_t records = 0;
  std::size_t records_with_serp = 0;
};

CorpusStats compute_stats(const Corpus& corpus);

Corpus filter_el_only(const Corpus& corpus);

struct Split {
  Corpus train;
  Corpus test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

Split holdout_split(const Corpus& corpus, double test_fraction, std::uint64_t seed);

// Native cache: one JSON document with a format-version field.
inline constexpr int kCorpusFormatVersion = 1;
std::string serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(std::string_view data);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

// Writers for the two raw input formats, so that generated corpora can be
// ingested like real ones. Tabs and newlines inside fields become spaces.
void write_click_log(const Corpus& corpus, const std::filesystem::path& path,
                     const ClickLogFormat& format = {});
void write_serp_dump(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace elp
