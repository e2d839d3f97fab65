// elp: command-line front end for ingesting clarification click logs and
// running the engagement-prediction experiments.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "elp/corpus.hpp"
#include "elp/error.hpp"
#include "elp/experiments.hpp"
#include "elp/neural.hpp"
#include "elp/predictor.hpp"
#include "elp/text.hpp"

#ifndef ELP_VERSION
#define ELP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using elp::Error;
using elp::ErrorKind;
using elp::Json;

namespace {

enum Exit { kOk = 0, kInputError = 2, kEmptyCorpus = 3, kConfigInvalid = 4, kRuntimeFailure = 5 };

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::MalformedRow:
    case ErrorKind::MalformedEntry:
    case ErrorKind::InvalidLabel:
    case ErrorKind::EmbeddingUnavailable:
      return kInputError;
    case ErrorKind::EmptyCorpus:
      return kEmptyCorpus;
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidSpec:
    case ErrorKind::InvalidHyperparameter:
    case ErrorKind::EncoderUnavailable:
    case ErrorKind::EmptyGrid:
      return kConfigInvalid;
    default:
      return kRuntimeFailure;
  }
}

void log(std::string_view level, const std::string& msg) {
  std::cerr << "elp level=" << level << ' ' << msg << '\n';
}

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); }

// ---------------------------------------------------------------------------
// Configuration

const std::set<std::string> kConfigKeys = {
    "click_log", "serp_dump", "corpus", "case_fold_join", "dataset", "setting", "settings",
    "max_results", "test_fraction", "split_seed", "train_seeds", "seed", "models", "metrics",
    "significance_loss", "cv_folds", "scoring", "sweep", "axes", "analysis_scope", "rerank",
    "synthetic", "model_path", "out", "length_buckets", "diversity_edges"};

const std::set<std::string> kPathKeys = {"click_log", "serp_dump", "corpus", "model_path", "out"};

struct RunConfig {
  Json snapshot;  // effective configuration, paths absolute
  std::optional<fs::path> click_log, serp_dump, corpus, model_path;
  bool case_fold_join = false;
  fs::path out = "elp-out";
  elp::ExperimentSpec spec;
  bool settings_given = false;
  std::vector<int> sweep_counts;
  elp::SweepMode sweep_mode = elp::SweepMode::retrain;
  std::vector<elp::InputSetting> sweep_settings{std::begin(elp::kSweepSettings), std::end(elp::kSweepSettings)};
  bool sweep = false;
  std::vector<elp::BucketAxis> axes{elp::BucketAxis::impression, elp::BucketAxis::query_length,
                                    elp::BucketAxis::coverage, elp::BucketAxis::diversity};
  std::string analysis_scope = "test";
  elp::RerankOptions rerank;
  std::optional<fs::path> rerank_corpus;
  elp::SyntheticSpec synthetic;
  elp::BucketOptions buckets;
};

Json read_json_file(const fs::path& path) {
  const std::string data = elp::read_file(path);
  try {
    return Json::parse(data);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

void require_exists(const fs::path& p, const std::string& key) {
  if (!fs::exists(p)) throw Error(ErrorKind::Io, key + ": cannot read '" + p.string() + "'");
}

RunConfig parse_config(Json j, const std::string& command) {
  if (!j.is_object()) config_error("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kConfigKeys.count(key)) config_error("unknown config key '" + key + "'");

  RunConfig c;
  try {
    if (j.contains("seed")) {
      const auto seed = j["seed"].get<std::uint64_t>();
      j["split_seed"] = seed;
      j["train_seeds"] = Json::array({seed});
      if (j.contains("synthetic")) j["synthetic"]["seed"] = seed;
      else j["synthetic"] = {{"seed", seed}};
    }
    if (j.contains("setting")) {
      if (j.contains("settings")) j.erase("settings");
      j["settings"] = Json::array({j["setting"]});
    }
    c.snapshot = j;

    auto path_of = [&](const char* key) -> std::optional<fs::path> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      return fs::path(j[key].get<std::string>());
    };
    c.click_log = path_of("click_log");
    c.serp_dump = path_of("serp_dump");
    c.corpus = path_of("corpus");
    c.model_path = path_of("model_path");
    if (auto o = path_of("out")) c.out = *o;
    if (j.contains("case_fold_join")) c.case_fold_join = j["case_fold_join"].get<bool>();

    Json spec = Json::object();
    for (const char* key : {"dataset", "models", "settings", "test_fraction", "split_seed", "train_seeds",
                            "metrics", "significance_loss", "max_results", "cv_folds", "scoring"})
      if (j.contains(key)) spec[key] = j[key];
    c.spec = elp::ExperimentSpec::from_json(spec);
    c.settings_given = j.contains("settings");
    if (!c.settings_given && command == "ablate")
      c.spec.settings.assign(elp::kAllSettings.begin(), elp::kAllSettings.end());
    if (c.spec.roster.empty()) {
      if (command == "evaluate") {
        for (const char* m : {"mean", "median", "normal", "linear_regression", "svr", "random_forest"})
          c.spec.roster.push_back(elp::ModelSpec{m});
      } else {
        c.spec.roster.push_back(elp::ModelSpec{"linear_regression"});
      }
    }

    if (j.contains("sweep")) {
      c.sweep = true;
      for (const auto& [key, value] : j["sweep"].items()) {
        if (key == "counts") c.sweep_counts = value.get<std::vector<int>>();
        else if (key == "mode") {
          const auto m = value.get<std::string>();
          if (m == "retrain") c.sweep_mode = elp::SweepMode::retrain;
          else if (m == "recompose") c.sweep_mode = elp::SweepMode::recompose;
          else config_error("sweep.mode must be 'retrain' or 'recompose'");
        } else if (key == "settings") {
          c.sweep_settings.clear();
          for (const auto& s : value) {
            auto parsed = elp::parse_setting(s.get<std::string>());
            if (!parsed) config_error("unknown setting '" + s.get<std::string>() + "' in sweep.settings");
            c.sweep_settings.push_back(*parsed);
          }
        } else {
          config_error("unknown config key 'sweep." + key + "'");
        }
      }
      if (c.sweep_counts.empty())
        for (int i = 1; i <= 10; ++i) c.sweep_counts.push_back(i);
    }
    if (j.contains("axes")) {
      c.axes.clear();
      for (const auto& a : j["axes"]) {
        auto axis = elp::parse_axis(a.get<std::string>());
        if (!axis) config_error("unknown analysis axis '" + a.get<std::string>() + "'");
        c.axes.push_back(*axis);
      }
    }
    if (j.contains("analysis_scope")) {
      c.analysis_scope = j["analysis_scope"].get<std::string>();
      if (c.analysis_scope != "test" && c.analysis_scope != "corpus")
        config_error("analysis_scope must be 'test' or 'corpus'");
    }
    if (j.contains("length_buckets")) c.buckets.length_buckets = j["length_buckets"].get<std::vector<int>>();
    if (j.contains("diversity_edges")) c.buckets.diversity_edges = j["diversity_edges"].get<std::vector<double>>();
    if (j.contains("rerank")) {
      for (const auto& [key, value] : j["rerank"].items()) {
        if (key == "ks") c.rerank.ks = value.get<std::vector<int>>();
        else if (key == "shuffles") c.rerank.random_shuffles = value.get<int>();
        else if (key == "seed") c.rerank.seed = value.get<std::uint64_t>();
        else if (key == "exclude_zero_queries")
          c.rerank.ndcg.zero_queries =
              value.get<bool>() ? elp::ZeroQueryPolicy::exclude : elp::ZeroQueryPolicy::count_as_one;
        else if (key == "gain") {
          const auto g = value.get<std::string>();
          if (g == "linear") c.rerank.ndcg.gain = elp::GainKind::linear;
          else if (g == "exponential") c.rerank.ndcg.gain = elp::GainKind::exponential;
          else config_error("rerank.gain must be 'linear' or 'exponential'");
        } else if (key == "corpus") c.rerank_corpus = fs::path(value.get<std::string>());
        else config_error("unknown config key 'rerank." + key + "'");
      }
    }
    if (j.contains("synthetic")) c.synthetic = elp::SyntheticSpec::from_json(j["synthetic"]);
  } catch (const Json::exception& e) {
    config_error(std::string("bad config value: ") + e.what());
  }

  if (command != "synth" && command != "ingest") c.spec.validate();
  if (command == "synth") c.synthetic.validate();
  for (auto* p : {&c.click_log, &c.serp_dump, &c.corpus, &c.model_path, &c.rerank_corpus})
    if (*p) require_exists(**p, "path");
  return c;
}

// Relative paths in a config file are resolved against its directory.
void absolutize(Json& j, const fs::path& base) {
  for (const auto& key : kPathKeys)
    if (j.contains(key) && j[key].is_string()) j[key] = fs::absolute(base / j[key].get<std::string>()).lexically_normal().string();
  if (j.contains("rerank") && j["rerank"].contains("corpus"))
    j["rerank"]["corpus"] = fs::absolute(base / j["rerank"]["corpus"].get<std::string>()).lexically_normal().string();
}

// ---------------------------------------------------------------------------
// Corpus loading

std::optional<fs::path> cache_dir() {
  const char* dir = std::getenv("ELP_CACHE_DIR");
  if (!dir || !*dir) return std::nullopt;
  return fs::path(dir);
}

elp::Corpus ingest_raw(const fs::path& click_log, const std::optional<fs::path>& serp_dump, bool case_fold) {
  std::string key = "click=" + elp::text::content_hash(elp::read_file(click_log));
  if (serp_dump) key += ";serp=" + elp::text::content_hash(elp::read_file(*serp_dump));
  key += case_fold ? ";fold" : "";
  const auto dir = cache_dir();
  const fs::path cached = dir ? *dir / ("corpus-" + elp::text::content_hash(key) + ".json") : fs::path{};
  if (dir && fs::exists(cached)) {
    log("info", "event=cache_hit path=" + cached.string());
    return elp::load_corpus(cached);
  }
  elp::Corpus corpus = elp::parse_click_log(click_log);
  const auto& counts = corpus.provenance().click_log;
  log("info", "event=parsed rows=" + std::to_string(counts.rows_read) + " accepted=" +
                  std::to_string(counts.accepted) + " malformed=" + std::to_string(counts.malformed) +
                  " invalid=" + std::to_string(counts.invalid));
  if (serp_dump) {
    const auto dump = elp::parse_serp_dump(*serp_dump);
    log("info", "event=serp_dump lines=" + std::to_string(dump.lines_read) + " malformed=" +
                    std::to_string(dump.malformed) + " duplicates=" + std::to_string(dump.duplicates));
    corpus = elp::join(corpus, dump.serps, {case_fold});
  } else {
    log("warn", "event=no_serp_dump msg=\"ingesting without SERP results\"");
  }
  if (dir) {
    fs::create_directories(*dir);
    elp::save_corpus(corpus, cached);
    log("info", "event=cache_store path=" + cached.string());
  }
  return corpus;
}

elp::Corpus load_input_corpus(const RunConfig& c) {
  if (c.corpus) return elp::load_corpus(*c.corpus);
  if (c.click_log) return ingest_raw(*c.click_log, c.serp_dump, c.case_fold_join);
  config_error("no corpus configured: set 'corpus' or 'click_log' (or --corpus)");
}

// ---------------------------------------------------------------------------
// Outputs

struct Outputs {
  fs::path dir;
  bool overwrite = false;
  std::vector<std::pair<std::string, std::string>> written;  // name, hash

  void check(const std::vector<std::string>& names) const {
    if (overwrite) return;
    for (const auto& n : names)
      if (fs::exists(dir / n))
        throw Error(ErrorKind::Io, "refusing to overwrite '" + (dir / n).string() + "' (pass --overwrite)");
  }

  void write(const std::string& name, const std::string& data) {
    fs::create_directories(dir);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / name).string());
    out << data;
    written.emplace_back(name, elp::text::content_hash(data));
    log("info", "event=wrote path=" + (dir / name).string());
  }
};

std::string stats_report(const elp::Corpus& corpus, const elp::ReportMetadata& meta) {
  const auto s = elp::compute_stats(corpus);
  elp::TsvTable t;
  t.header = {"field", "count", "mean", "std", "median", "min", "max"};
  auto add = [&](const std::string& name, const std::optional<elp::FieldStats>& f) {
    if (!f) {
      t.rows.push_back({name, "0", "-", "-", "-", "-", "-"});
      return;
    }
    t.rows.push_back({name, std::to_string(f->count), elp::format_number(f->mean, 4), elp::format_number(f->std, 4),
                      elp::format_number(f->median, 2), elp::format_number(f->min, 0),
                      elp::format_number(f->max, 0)});
  };
  add("query_length", s.query_length);
  add("question_length", s.question_length);
  add("answers_per_query", s.answers_per_query);
  add("title_length", s.title_length);
  add("snippet_length", s.snippet_length);
  add("results_per_query", s.results_per_query);
  elp::ReportMetadata m = meta;
  m.extra.emplace_back("records", std::to_string(s.records));
  m.extra.emplace_back("records_with_serp", std::to_string(s.records_with_serp));
  const auto& p = corpus.provenance();
  m.extra.emplace_back("rows_read", std::to_string(p.click_log.rows_read));
  m.extra.emplace_back("malformed_rows", std::to_string(p.click_log.malformed));
  m.extra.emplace_back("invalid_rows", std::to_string(p.click_log.invalid));
  if (p.join) {
    m.extra.emplace_back("serp_matched", std::to_string(p.join->matched));
    m.extra.emplace_back("serp_unmatched", std::to_string(p.join->unmatched));
  }
  return elp::write_tsv(t, m);
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

std::string predictions_report(const elp::Corpus& test, const Eigen::VectorXd& pred,
                               const std::vector<std::size_t>& indices, const elp::ReportMetadata& meta) {
  elp::TsvTable t;
  t.header = {"record", "query", "engagement", "prediction"};
  for (std::size_t i = 0; i < test.size(); ++i)
    t.rows.push_back({std::to_string(indices[i]), one_line(test[i].query), std::to_string(test[i].engagement),
                      elp::format_number(pred(static_cast<Eigen::Index>(i)), 6)});
  return elp::write_tsv(t, meta);
}

std::string scores_report(const std::string& model, elp::InputSetting setting,
                          const elp::RegressionScores<double>& s, const elp::ReportMetadata& meta) {
  elp::TsvTable t;
  t.header = {"model", "setting", "mae", "mse", "r2", "n"};
  t.rows.push_back({model, std::string(elp::to_string(setting)), elp::format_number(s.mae),
                    elp::format_number(s.mse), s.r2_defined ? elp::format_number(s.r2) : "nan", std::to_string(s.n)});
  return elp::write_tsv(t, meta);
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands

struct Context {
  std::string command;
  RunConfig config;
  Outputs out;
  std::string corpus_hash;
  elp::ReportMetadata meta(const std::string& report) const {
    return {report, config.spec.hash(), corpus_hash, seeds(), {{"command", command}}};
  }
  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s{config.spec.split_seed};
    s.insert(s.end(), config.spec.train_seeds.begin(), config.spec.train_seeds.end());
    return s;
  }
};

void start_log(const Context& ctx) {
  std::ostringstream seeds;
  for (auto s : ctx.seeds()) seeds << (seeds.tellp() > 0 ? "," : "") << s;
  log("info", "event=start command=" + ctx.command + " seeds=" + seeds.str() +
                  " config_hash=" + elp::text::content_hash(ctx.config.snapshot.dump()) +
                  " spec_hash=" + ctx.config.spec.hash() + " out=" + ctx.out.dir.string());
}

void cmd_ingest(Context& ctx) {
  const auto& c = ctx.config;
  if (!c.click_log) config_error("ingest needs a click log (--click-log or 'click_log')");
  ctx.out.check({"corpus.json", "stats.tsv", "manifest.json"});
  const elp::Corpus corpus = ingest_raw(*c.click_log, c.serp_dump, c.case_fold_join);
  ctx.corpus_hash = corpus.hash();
  log("info", "event=corpus records=" + std::to_string(corpus.size()) + " corpus_hash=" + ctx.corpus_hash);
  ctx.out.write("corpus.json", elp::serialize_corpus(corpus));
  ctx.out.write("stats.tsv", stats_report(corpus, ctx.meta("stats")));
}

void cmd_stats(Context& ctx) {
  ctx.out.check({"stats.tsv", "manifest.json"});
  const elp::Corpus corpus = elp::select_dataset(load_input_corpus(ctx.config), ctx.config.spec.dataset);
  ctx.corpus_hash = corpus.hash();
  ctx.out.write("stats.tsv", stats_report(corpus, ctx.meta("stats")));
}

void cmd_synth(Context& ctx) {
  ctx.out.check({"corpus.json", "click_log.tsv", "serp.jsonl", "stats.tsv", "manifest.json"});
  const auto& spec = ctx.config.synthetic;
  const elp::Corpus corpus = elp::generate_synthetic(spec);
  ctx.corpus_hash = corpus.hash();
  log("info", "event=synthetic records=" + std::to_string(corpus.size()) + " seed=" + std::to_string(spec.seed) +
                  " ceiling=" + elp::format_number(elp::variance_ratio_ceiling(spec), 4) +
                  " corpus_hash=" + ctx.corpus_hash);
  ctx.out.write("corpus.json", elp::serialize_corpus(corpus));
  const fs::path tmp_dir = ctx.out.dir;
  elp::write_click_log(corpus, tmp_dir / "click_log.tsv");
  ctx.out.written.emplace_back("click_log.tsv", elp::text::content_hash(elp::read_file(tmp_dir / "click_log.tsv")));
  elp::write_serp_dump(corpus, tmp_dir / "serp.jsonl");
  ctx.out.written.emplace_back("serp.jsonl", elp::text::content_hash(elp::read_file(tmp_dir / "serp.jsonl")));
  auto meta = ctx.meta("stats");
  meta.seeds = {spec.seed};
  meta.extra.emplace_back("variance_ratio_ceiling", elp::format_number(elp::variance_ratio_ceiling(spec), 6));
  ctx.out.write("stats.tsv", stats_report(corpus, meta));
}

void cmd_train(Context& ctx) {
  ctx.out.check({"model.json", "scores.tsv", "predictions.tsv", "train_report.txt", "manifest.json"});
  const auto& c = ctx.config;
  const elp::Corpus corpus = load_input_corpus(c);
  ctx.corpus_hash = corpus.hash();
  const auto setting = c.spec.settings.front();
  const auto prepared = elp::prepare_split(corpus, c.spec, elp::needs_serp(setting));
  const auto& split = prepared.split;
  const auto& model = c.spec.roster.front();
  log("info", "event=split train=" + std::to_string(split.train.size()) + " test=" + std::to_string(split.test.size()) +
                  " excluded_missing_serp=" + std::to_string(prepared.excluded_missing_serp));

  const auto train_in = elp::compose_all(split.train, setting, c.spec.max_results);
  const auto test_in = elp::compose_all(split.test, setting, c.spec.max_results);
  const Eigen::VectorXd y_train = elp::engagement_labels(split.train);
  const std::uint64_t seed = c.spec.train_seeds.front();
  std::unique_ptr<elp::Predictor> p;
  std::string report;
  if (model.grid && !model.grid->empty()) {
    const Json base = model.hyperparameters;
    elp::PredictorFactory factory = [&](const Json& cand) {
      Json hp = base;
      hp.update(cand);
      return elp::make_predictor(model.name, hp);
    };
    auto gs = elp::grid_search_cv(factory, *model.grid, train_in, y_train, c.spec.cv_folds, c.spec.scoring, seed);
    report = gs.score_table();
    p = std::move(gs.best_model);
  } else {
    p = elp::make_predictor(model.name, model.hyperparameters);
    p->fit(train_in, y_train, seed);
  }
  if (auto* n = dynamic_cast<const elp::NeuralPredictor*>(p.get())) {
    report = n->report().to_lines();
    std::istringstream lines(report);
    for (std::string line; std::getline(lines, line);) log("info", "event=epoch " + line);
  }
  const Eigen::VectorXd pred = p->predict(test_in);
  const auto scores = elp::regression_scores(elp::engagement_labels(split.test), pred);
  Json container = p->to_json();
  container["setting"] = std::string(elp::to_string(setting));
  container["max_results"] = c.spec.max_results;
  ctx.out.write("model.json", container.dump() + "\n");
  ctx.out.write("scores.tsv", scores_report(p->name(), setting, scores, ctx.meta("scores")));
  ctx.out.write("predictions.tsv", predictions_report(split.test, pred, split.test_indices, ctx.meta("predictions")));
  ctx.out.write("train_report.txt", report);
}

void cmd_evaluate(Context& ctx) {
  const auto& c = ctx.config;
  const elp::Corpus corpus = load_input_corpus(c);
  ctx.corpus_hash = corpus.hash();
  if (c.model_path) {
    ctx.out.check({"scores.tsv", "predictions.tsv", "manifest.json"});
    const Json j = read_json_file(*c.model_path);
    auto p = elp::predictor_from_json(j);
    elp::InputSetting setting = c.spec.settings.front();
    if (!c.settings_given && j.contains("setting"))
      if (auto s = elp::parse_setting(j["setting"].get<std::string>())) setting = *s;
    const int max_results = j.value("max_results", c.spec.max_results);
    const auto prepared = elp::prepare_split(corpus, c.spec, elp::needs_serp(setting));
    const auto& test = prepared.split.test;
    const Eigen::VectorXd pred = p->predict(elp::compose_all(test, setting, max_results));
    const auto scores = elp::regression_scores(elp::engagement_labels(test), pred);
    ctx.out.write("scores.tsv", scores_report(p->name(), setting, scores, ctx.meta("scores")));
    ctx.out.write("predictions.tsv",
                  predictions_report(test, pred, prepared.split.test_indices, ctx.meta("predictions")));
    return;
  }
  ctx.out.check({"main.tsv", "manifest.json"});
  const auto table = elp::run_main_comparison(corpus, c.spec);
  auto meta = ctx.meta("main");
  meta.extra.emplace_back("n_train", std::to_string(table.n_train));
  meta.extra.emplace_back("n_test", std::to_string(table.n_test));
  meta.extra.emplace_back("excluded_missing_serp", std::to_string(table.excluded_missing_serp));
  meta.extra.emplace_back("markers", "dagger: p<0.01 vs every static baseline; double dagger: p<0.01 vs every classical model");
  ctx.out.write("main.tsv", elp::write_tsv(table.to_table(c.spec.metrics), meta));
}

void cmd_ablate(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<std::string> names = {"ablation.tsv", "manifest.json"};
  if (c.sweep) names.push_back("sweep.tsv");
  ctx.out.check(names);
  const elp::Corpus corpus = load_input_corpus(c);
  ctx.corpus_hash = corpus.hash();
  const auto table = elp::run_ablation(corpus, c.spec);
  auto meta = ctx.meta("ablation");
  meta.extra.emplace_back("model", c.spec.roster.front().name);
  meta.extra.emplace_back("n_train", std::to_string(table.n_train));
  meta.extra.emplace_back("n_test", std::to_string(table.n_test));
  meta.extra.emplace_back("excluded_missing_serp", std::to_string(table.excluded_missing_serp));
  meta.extra.emplace_back("markers", "dagger: p<0.05 vs query; double dagger: p<0.05 vs query+pane");
  ctx.out.write("ablation.tsv", elp::write_tsv(table.to_table(c.spec.metrics), meta));
  if (c.sweep) {
    const auto sweep = elp::sweep_result_count(corpus, c.spec, c.sweep_counts, c.sweep_settings, c.sweep_mode);
    auto smeta = ctx.meta("sweep");
    smeta.extra.emplace_back("mode", c.sweep_mode == elp::SweepMode::retrain ? "retrain" : "recompose");
    ctx.out.write("sweep.tsv", elp::write_tsv(sweep.to_series(), smeta));
  }
}

// Fits roster[0] on the train split and returns test predictions.
struct Fitted {
  elp::PreparedSplit prepared;
  std::unique_ptr<elp::Predictor> model;
  Eigen::VectorXd test_predictions;
};

Fitted fit_first_model(const RunConfig& c, const elp::Corpus& corpus) {
  const auto setting = c.spec.settings.front();
  Fitted f{elp::prepare_split(corpus, c.spec, elp::needs_serp(setting)), nullptr, {}};
  const auto& model = c.spec.roster.front();
  const auto train_in = elp::compose_all(f.prepared.split.train, setting, c.spec.max_results);
  f.model = elp::make_predictor(model.name, model.hyperparameters);
  f.model->fit(train_in, elp::engagement_labels(f.prepared.split.train), c.spec.train_seeds.front());
  f.test_predictions = f.model->predict(elp::compose_all(f.prepared.split.test, setting, c.spec.max_results));
  return f;
}

void cmd_analyze(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<std::string> names = {"manifest.json"};
  for (auto a : c.axes) names.push_back("analysis_" + std::string(elp::to_string(a)) + ".tsv");
  ctx.out.check(names);
  const elp::Corpus corpus = load_input_corpus(c);
  ctx.corpus_hash = corpus.hash();
  elp::Corpus records;
  Eigen::VectorXd pred;
  if (c.analysis_scope == "corpus") {
    records = elp::select_dataset(corpus, c.spec.dataset);
  } else {
    auto f = fit_first_model(c, corpus);
    records = f.prepared.split.test;
    pred = f.test_predictions;
  }
  for (auto axis : c.axes) {
    const auto report = elp::analyze_by_bucket(elp::as_span(pred), records, axis, c.buckets);
    auto meta = ctx.meta("analysis");
    meta.extra.emplace_back("axis", std::string(elp::to_string(axis)));
    meta.extra.emplace_back("scope", c.analysis_scope);
    if (c.analysis_scope == "test") meta.extra.emplace_back("model", c.spec.roster.front().name);
    if (axis == elp::BucketAxis::diversity) meta.extra.emplace_back("tagger", "heuristic (approximate)");
    ctx.out.write("analysis_" + std::string(elp::to_string(axis)) + ".tsv", elp::write_tsv(report.to_table(), meta));
  }
}

void cmd_rerank(Context& ctx) {
  const auto& c = ctx.config;
  ctx.out.check({"rerank.tsv", "manifest.json"});
  const elp::Corpus corpus = load_input_corpus(c);
  ctx.corpus_hash = corpus.hash();
  auto f = fit_first_model(c, corpus);
  elp::RerankReport report;
  if (c.rerank_corpus) {
    const elp::Corpus panes = elp::load_corpus(*c.rerank_corpus);
    report = elp::run_pane_reranking(*f.model, c.spec.settings.front(), panes, c.rerank, c.spec.max_results);
  } else {
    report = elp::run_pane_reranking(elp::as_span(f.test_predictions), f.prepared.split.test, c.rerank,
                                     f.model->name());
  }
  auto meta = ctx.meta("rerank");
  meta.extra.emplace_back("queries", std::to_string(report.queries));
  meta.extra.emplace_back("random_shuffles", std::to_string(c.rerank.random_shuffles));
  ctx.out.write("rerank.tsv", elp::write_tsv(report.to_table(), meta));
}

// ---------------------------------------------------------------------------

struct Flags {
  std::string config;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool overwrite = false;
  std::string dataset;
  std::string setting;
  std::optional<int> max_results;
  std::string corpus;
  std::string click_log;
  std::string serp_dump;
  bool case_fold = false;
  std::string model;
  std::string model_path;
};

int run(const std::string& command, const Flags& flags) {
  const auto started = std::chrono::steady_clock::now();
  Json j = Json::object();
  if (!flags.manifest.empty()) {
    const Json m = read_json_file(flags.manifest);
    if (m.value("format", "") != "elp-manifest") config_error(flags.manifest + " is not an elp manifest");
    if (m.at("command").get<std::string>() != command)
      config_error("manifest was written by '" + m.at("command").get<std::string>() + "', not '" + command + "'");
    j = m.at("config");
    j.erase("out");
  } else if (!flags.config.empty()) {
    j = read_json_file(flags.config);
    if (!j.is_object()) config_error("config must be a JSON object");
    absolutize(j, fs::path(flags.config).parent_path());
  }
  const fs::path cwd = fs::current_path();
  auto set_path = [&](const char* key, const std::string& v) {
    if (!v.empty()) j[key] = fs::absolute(cwd / v).lexically_normal().string();
  };
  if (flags.seed) j["seed"] = *flags.seed;
  if (!flags.dataset.empty()) {
    if (!elp::parse_dataset(flags.dataset)) config_error("--dataset must be 'full' or 'el-only'");
    j["dataset"] = flags.dataset;
  }
  if (!flags.setting.empty()) j["setting"] = flags.setting;
  if (flags.max_results) j["max_results"] = *flags.max_results;
  if (!flags.model.empty()) j["models"] = Json::array({flags.model});
  set_path("out", flags.out);
  set_path("corpus", flags.corpus);
  set_path("click_log", flags.click_log);
  set_path("serp_dump", flags.serp_dump);
  set_path("model_path", flags.model_path);
  if (flags.case_fold) j["case_fold_join"] = true;
  if (j.contains("out") && j["out"].is_string())
    j["out"] = fs::absolute(j["out"].get<std::string>()).lexically_normal().string();

  Context ctx{command, parse_config(j, command), {}, {}};
  ctx.out.dir = ctx.config.out;
  ctx.out.overwrite = flags.overwrite;
  start_log(ctx);

  if (command == "ingest") cmd_ingest(ctx);
  else if (command == "stats") cmd_stats(ctx);
  else if (command == "synth") cmd_synth(ctx);
  else if (command == "train") cmd_train(ctx);
  else if (command == "evaluate") cmd_evaluate(ctx);
  else if (command == "ablate") cmd_ablate(ctx);
  else if (command == "analyze") cmd_analyze(ctx);
  else if (command == "rerank") cmd_rerank(ctx);

  Json artifacts = Json::array();
  for (const auto& [name, hash] : ctx.out.written) artifacts.push_back({{"path", name}, {"hash", hash}});
  Json snapshot = ctx.config.snapshot;
  snapshot["out"] = fs::absolute(ctx.out.dir).lexically_normal().string();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const Json manifest = {{"format", "elp-manifest"},
                         {"format_version", 1},
                         {"command", command},
                         {"config", snapshot},
                         {"corpus_hash", ctx.corpus_hash},
                         {"code_version", ELP_VERSION},
                         {"started_at", iso_now()},
                         {"wall_clock_seconds", wall},
                         {"artifacts", artifacts}};
  ctx.out.write("manifest.json", manifest.dump(2) + "\n");
  log("info", "event=done command=" + command + " corpus_hash=" + ctx.corpus_hash +
                  " seconds=" + elp::format_number(wall, 3));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Engagement-level prediction for search clarification panes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ELP_VERSION);
  Flags flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration");
    sub->add_option("--seed", flags.seed, "Seed for the split, training and synthesis");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_flag("--overwrite", flags.overwrite, "Replace existing outputs");
    sub->add_option("--dataset", flags.dataset, "full or el-only");
    sub->add_option("--setting", flags.setting, "Input setting, e.g. query+pane+titles");
    sub->add_option("--max-results", flags.max_results, "SERP results used per query (0-10)");
    sub->add_option("--manifest", flags.manifest, "Replay the configuration stored in a run manifest");
  };

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"ingest", "Parse a click log and SERP dump into a corpus cache and stats report"},
      {"stats", "Descriptive statistics of a corpus"},
      {"train", "Fit one model on the training split and save it"},
      {"evaluate", "Main comparison over the model roster, or score a saved model"},
      {"ablate", "Compare input settings, optionally with a result-count sweep"},
      {"analyze", "Bucketed error and label analyses"},
      {"rerank", "Clarification pane re-ranking by nDCG"},
      {"synth", "Generate a synthetic corpus with a planted signal"}};
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub);
    const std::string name = cmd.name;
    if (name == "ingest") {
      sub->add_option("--click-log", flags.click_log, "Click-log TSV");
      sub->add_option("--serp-dump", flags.serp_dump, "SERP JSONL dump");
      sub->add_flag("--case-fold", flags.case_fold, "Case-insensitive query join");
    } else if (name != "synth") {
      sub->add_option("--corpus", flags.corpus, "Corpus cache written by ingest or synth");
      sub->add_option("--click-log", flags.click_log, "Click-log TSV (parsed on the fly)");
      sub->add_option("--serp-dump", flags.serp_dump, "SERP JSONL dump");
    }
    if (name == "train" || name == "evaluate" || name == "ablate" || name == "analyze" || name == "rerank")
      sub->add_option("--model", flags.model, "Model name (replaces the configured roster)");
    if (name == "evaluate") sub->add_option("--model-path", flags.model_path, "Saved model to score");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  std::string command;
  for (const auto* sub : app.get_subcommands()) command = sub->get_name();
  try {
    return run(command, flags);
  } catch (const Error& e) {
    log("error", "kind=" + std::string(elp::to_string(e.kind())) + " msg=\"" + e.what() + "\"");
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    log("error", std::string("kind=Io msg=\"") + e.what() + "\"");
    return kInputError;
  } catch (const std::exception& e) {
    log("error", std::string("kind=Runtime msg=\"") + e.what() + "\"");
    return kRuntimeFailure;
  }
}
