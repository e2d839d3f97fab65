#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "elp/corpus.hpp"

namespace elp {

// The six input compositions of the SERP ablation, in table order.
enum class InputSetting {
  query,
  query_pane,
  query_titles,
  query_snippets,
  query_pane_titles,
  query_pane_snippets,
};

inline constexpr std::array<InputSetting, 6> kAllSettings = {
    InputSetting::query,          InputSetting::query_pane,
    InputSetting::query_titles,   InputSetting::query_snippets,
    InputSetting::query_pane_titles, InputSetting::query_pane_snippets,
};

std::string_view to_string(InputSetting setting);
std::optional<InputSetting> parse_setting(std::string_view name);

enum class SerpField { titles, snippets };

bool includes_pane(InputSetting setting);
std::optional<SerpField> serp_field(InputSetting setting);
inline bool needs_serp(InputSetting s) { return serp_field(s).has_value(); }

enum class SegmentKind { query, question, answers, serp };

struct Segment {
  SegmentKind kind;
  std::vector<std::string> parts;  // answers or per-result texts; one part otherwise

  // Parts joined by single spaces.
  std::string text() const;
};

struct ModelInput {
  std::vector<Segment> segments;
  InputSetting setting = InputSetting::query;
  int max_results = 10;

  // All segment texts joined by single spaces; what the bag-of-words sees.
  std::string joined_text() const;
};

// Segments appear in the order query, question, answers, SERP. A SERP
// segment is omitted when no result falls within max_results.
ModelInput compose_input(const ClarificationRecord& record, InputSetting setting,
                         int max_results = 10);

// Composes every record; throws MissingSerp on the first record lacking a
// SERP when the setting needs one.
std::vector<ModelInput> compose_all(const Corpus& corpus, InputSetting setting,
                                    int max_results = 10);

// ---------------------------------------------------------------------------
// tf-idf

struct VocabularyOptions {
  bool lowercase = true;
  int min_df = 1;
  std::optional<std::size_t> max_features;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return terms_.size(); }
  std::size_t documents() const { return n_docs_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<int>& document_frequencies() const { return df_; }
  const VocabularyOptions& options() const { return options_; }
  const std::string& fitted_hash() const { return fitted_hash_; }

  std::optional<int> index(std::string_view term) const;
  // ln((1+N)/(1+df)) + 1
  double idf(int index) const;

  // Stable identifier of the fitted vocabulary (terms, dfs and options).
  std::string id() const;

  // Text artifact: a version line, then "term\tindex\tdf" per term.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string to_text() const;
  static Vocabulary from_text(std::string_view data);

  friend Vocabulary fit_vocabulary(std::span<const ModelInput> docs,
                                   const VocabularyOptions& options);

 private:
  std::vector<std::string> terms_;
  std::vector<int> df_;
  std::unordered_map<std::string, int> lookup_;
  std::size_t n_docs_ = 0;
  VocabularyOptions options_;
  std::string fitted_hash_;

  void rebuild_lookup();
};

// Terms receive dense indices in lexicographic order. max_features keeps the
// terms with the highest total count, ties broken lexicographically.
Vocabulary fit_vocabulary(std::span<const ModelInput> docs, const VocabularyOptions& options = {});
Vocabulary fit_vocabulary(const Corpus& corpus, InputSetting setting,
                          const VocabularyOptions& options = {}, int max_results = 10);

struct BowVector {
  std::vector<std::pair<int, double>> weights;  // sorted by term index
  std::string vocabulary_id;

  double norm() const;
};

BowVector transform_bow(const ModelInput& input, const Vocabulary& vocab);

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Rows are the L2-normalized tf-idf vectors of the inputs.
SparseRows bow_matrix(std::span<const ModelInput> inputs, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Encoder tokenization

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

class EncoderTokenizer {
 public:
  virtual ~EncoderTokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual int cls_id() const = 0;
  virtual int sep_id() const = 0;
  virtual int unk_id() const = 0;
  virtual std::vector<std::string> vocabulary() const = 0;
};

// Word-level tokenizer whose vocabulary is collected from training text.
// Ids: 0 [PAD], 1 [UNK], 2 [CLS], 3 [SEP], then words in lexicographic order.
class WordTokenizer final : public EncoderTokenizer {
 public:
  explicit WordTokenizer(std::vector<std::string> words);
  static WordTokenizer fit(std::span<const ModelInput> inputs, int min_count = 1);

  std::vector<int> encode(std::string_view text) const override;
  std::size_t vocab_size() const override { return words_.size(); }
  int cls_id() const override { return 2; }
  int sep_id() const override { return 3; }
  int unk_id() const override { return 1; }
  std::vector<std::string> vocabulary() const override { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> lookup_;
};

// Greedy longest-match-first subword tokenizer over a BERT-style vocab.txt.
class WordPieceTokenizer final : public EncoderTokenizer {
 public:
  explicit WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase = true);
  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_txt,
                                      bool lowercase = true);

  std::vector<int> encode(std::string_view text) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }
  int cls_id() const override { return cls_; }
  int sep_id() const override { return sep_; }
  int unk_id() const override { return unk_; }
  std::vector<std::string> vocabulary() const override { return vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> lookup_;
  bool lowercase_;
  int cls_ = -1, sep_ = -1, unk_ = -1;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> segment_of;  // -1 for the classification marker
  std::size_t truncated_tokens = 0;
};

inline constexpr std::size_t kEncoderBudget = 512;

// [CLS] seg1 [SEP] seg2 [SEP] ... with a separator between individual
// answers. Over budget, content is removed from the end of the last segment
// first and then from earlier segments right to left; the classification
// marker and at least one query token are always kept.
TokenSequence tokenize_for_encoder(const ModelInput& input, const EncoderTokenizer& tokenizer,
                                   std::size_t budget = kEncoderBudget);

}  // namespace elp
