#include "instyle/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "instyle/error.hpp"
#include "instyle/evaluator.hpp"
#include "instyle/iemb.hpp"
#include "instyle/matcher.hpp"
#include "instyle/parallel.hpp"
#include "instyle/pipeline.hpp"
#include "instyle/styler.hpp"
#include "instyle/synthgen.hpp"
#include "instyle/trainer.hpp"

namespace instyle {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad invocation that is not a library error: missing inputs, unreadable
// config, inconsistent flag combinations.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Settings {
  PipelineConfig pipe;
  synth::SynthConfig synth;
  std::size_t threads = 0;
};

// One key=value line on stderr. Values with spaces are quoted.
class Log {
 public:
  Log(std::ostream& err, const std::string& event) : err_(err) { line_ << "event=" << event; }
  ~Log() { err_ << line_.str() << '\n'; }

  template <class T>
  Log& kv(const std::string& key, const T& value) {
    std::ostringstream v;
    v << value;
    auto s = v.str();
    if (s.find(' ') != std::string::npos) s = '"' + s + '"';
    line_ << ' ' << key << '=' << s;
    return *this;
  }

 private:
  std::ostream& err_;
  std::ostringstream line_;
};

void require_file(const std::string& path) {
  if (path.empty()) throw UsageError("missing input path");
  if (!fs::is_regular_file(path)) throw UsageError("input file not found: " + path);
}

void require_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw UsageError("input directory not found: " + path);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad threshold list: " + text);
    }
  }
  if (out.empty()) throw UsageError("empty threshold list");
  return out;
}

class Driver {
 public:
  Driver(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args);

 private:
  // Flag that, when given, overwrites a config value after --config is read.
  template <class T, class Apply>
  CLI::Option* overridable(CLI::App* app, const std::string& name, const std::string& desc, Apply apply) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(name, *value, desc);
    overrides_.push_back([opt, value, apply](Settings& s) {
      if (opt->count() > 0) apply(s, *value);
    });
    return opt;
  }

  void add_shared(CLI::App* app);
  void add_training(CLI::App* app);
  void add_synth(CLI::App* app);
  Settings settings();

  void cmd_synth();
  void cmd_match();
  void cmd_stylize();
  void cmd_filter();
  void cmd_sweep();
  void cmd_train();
  void cmd_eval();
  void cmd_pipeline();

  std::ostream& out_;
  std::ostream& err_;
  std::vector<std::function<void(Settings&)>> overrides_;

  std::string config_path_;
  bool deterministic_ = false;

  std::string out_path_;
  std::string data_dir_;
  std::string queries_;
  std::string clips_;
  std::string pairs_;
  std::string styled_;
  std::string style_out_;
  std::string tag_ = "style";
  std::size_t style_index_ = 0;
  std::string thresholds_ = "0.26,0.27,0.28,0.29,0.30";
  std::vector<std::string> generated_;
  std::vector<std::string> styled_sets_;
  std::string mode_ = "in_style";
  std::string log_path_;
  std::string candidates_;
  std::string truth_;
  std::string model_;
  bool zero_shot_ = false;
  bool with_ranks_ = false;
  std::string ranks_path_;
};

void Driver::add_shared(CLI::App* app) {
  app->add_option("--config", config_path_, "JSON config; flags override its values");
  overridable<std::uint64_t>(app, "--seed", "master seed", [](Settings& s, std::uint64_t v) {
    s.pipe.seed = v;
    s.synth.seed = v;
  });
  overridable<std::size_t>(app, "--threads", "worker cap (0 = all cores)",
                           [](Settings& s, std::size_t v) { s.threads = v; });
  app->add_flag("--deterministic", deterministic_, "require bit-reproducible output");
}

void Driver::add_training(CLI::App* app) {
  overridable<double>(app, "--tau", "contrastive temperature", [](Settings& s, double v) { s.pipe.tau = v; });
  overridable<std::size_t>(app, "--batch-size", "pairs per minibatch",
                           [](Settings& s, std::size_t v) { s.pipe.batch_size = v; });
  overridable<double>(app, "--lr", "SGD learning rate", [](Settings& s, double v) { s.pipe.learning_rate = v; });
  overridable<double>(app, "--momentum", "SGD momentum", [](Settings& s, double v) { s.pipe.momentum = v; });
  overridable<std::size_t>(app, "--epochs", "passes over the generated pairs",
                           [](Settings& s, std::size_t v) { s.pipe.epochs = v; });
  overridable<std::size_t>(app, "--queue", "negative queue capacity per style (0 = off)",
                           [](Settings& s, std::size_t v) { s.pipe.queue_capacity = v; });
}

void Driver::add_synth(CLI::App* app) {
  overridable<std::size_t>(app, "--styles", "number of query styles",
                           [](Settings& s, std::size_t v) { s.synth.n_styles = v; });
  overridable<std::size_t>(app, "--queries-per-style", "queries per style",
                           [](Settings& s, std::size_t v) { s.synth.queries_per_style = v; });
  overridable<std::size_t>(app, "--pool-size", "uncurated clips",
                           [](Settings& s, std::size_t v) { s.synth.pool_size = v; });
  overridable<std::size_t>(app, "--dim", "embedding dimension", [](Settings& s, std::size_t v) { s.synth.dim = v; });
  overridable<std::size_t>(app, "--content-dim", "latent content dimension",
                           [](Settings& s, std::size_t v) { s.synth.content_dim = v; });
  overridable<double>(app, "--style-strength", "0 = no style, 1 = full",
                      [](Settings& s, double v) { s.synth.style_strength = v; });
  overridable<double>(app, "--cross-modal-noise", "per-modality noise norm",
                      [](Settings& s, double v) { s.synth.cross_modal_noise = v; });
  overridable<double>(app, "--held-out", "held-out fraction of each style",
                      [](Settings& s, double v) { s.synth.held_out_fraction = v; });
}

Settings Driver::settings() {
  Settings s;
  if (!config_path_.empty()) {
    require_file(config_path_);
    json j;
    try {
      std::ifstream in(config_path_);
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigInvalid, config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, config_path_ + ": expected a JSON object");
    s.pipe = PipelineConfig::from_json(j, s.pipe);
    if (j.contains("synth")) s.synth = synth::SynthConfig::from_json(j.at("synth"));
    if (j.contains("seed") && !(j.contains("synth") && j.at("synth").contains("seed"))) s.synth.seed = s.pipe.seed;
    try {
      s.threads = j.value("threads", s.threads);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigInvalid, std::string("threads: ") + e.what());
    }
  }
  for (auto& apply : overrides_) apply(s);
  if (deterministic_) s.pipe.deterministic = true;
  s.pipe.validate();
  set_thread_count(s.threads);
  return s;
}

void Driver::cmd_synth() {
  auto s = settings();
  s.synth.validate();
  const auto data = synth::generate(s.synth);
  synth::write_dataset(out_path_, data);
  Log(err_, "synth")
      .kv("out", out_path_)
      .kv("styles", data.styles.size())
      .kv("pool", data.pool.size())
      .kv("test_items", data.test_clips.size())
      .kv("seed", s.synth.seed);
}

void Driver::cmd_match() {
  require_file(queries_);
  require_file(clips_);
  const auto s = settings();
  const auto q = iemb::load_embeddings(queries_);
  const auto c = iemb::load_embeddings(clips_);
  auto pairs = match_exclusive(q, c, s.pipe.match);
  pairs.query_set = tag_;
  pairs.clip_set = fs::path(clips_).stem().string();
  ensure_parent(out_path_);
  save_pseudo_pairs(out_path_, pairs);
  double mean = 0.0;
  for (const auto& p : pairs.pairs) mean += p.sim;
  if (!pairs.pairs.empty()) mean /= static_cast<double>(pairs.pairs.size());
  Log(err_, "match")
      .kv("queries", q.size())
      .kv("clips", c.size())
      .kv("pairs", pairs.pairs.size())
      .kv("mean_sim", mean)
      .kv("order", to_string(s.pipe.match.order));
}

void Driver::cmd_stylize() {
  require_file(pairs_);
  require_file(queries_);
  require_file(clips_);
  const auto s = settings();
  const auto pseudo = load_pseudo_pairs(pairs_);
  const auto q = iemb::load_embeddings(queries_);
  const auto c = iemb::load_embeddings(clips_);
  const auto fit = fit_style(pseudo, q, c, s.pipe.ridge_lambda, s.pipe.noise_sigma, tag_);
  const auto styled = generate_styled(c, fit.transform, stylize_seed(s.pipe.seed, style_index_));
  if (!style_out_.empty()) {
    ensure_parent(style_out_);
    save_style(style_out_, fit.transform);
  }
  ensure_parent(out_path_);
  iemb::save_embeddings(out_path_, styled);
  Log(err_, "stylize")
      .kv("pairs", fit.pair_count)
      .kv("residual_rms", fit.residual_rms)
      .kv("styled", styled.size())
      .kv("tag", tag_);
}

void Driver::cmd_filter() {
  require_file(styled_);
  require_file(clips_);
  const auto s = settings();
  const auto styled = iemb::load_embeddings(styled_);
  const auto c = iemb::load_embeddings(clips_);
  const auto gen = filter_pairs(styled, c, s.pipe.threshold, tag_);
  ensure_parent(out_path_);
  save_generated_pairs(out_path_, gen);
  Log(err_, "filter")
      .kv("threshold", s.pipe.threshold)
      .kv("candidates", gen.candidates)
      .kv("retained", gen.pairs.size())
      .kv("rate", gen.retention_rate());
  if (gen.pairs.empty()) Log(err_, "warning").kv("msg", "empty generated pair set");
}

void Driver::cmd_sweep() {
  require_file(styled_);
  require_file(clips_);
  settings();
  const auto styled = iemb::load_embeddings(styled_);
  const auto c = iemb::load_embeddings(clips_);
  json rows = json::array();
  for (const auto& r : threshold_sweep(styled, c, parse_thresholds(thresholds_))) {
    rows.push_back({{"threshold", r.threshold}, {"retained", r.retained}, {"rate", r.rate}});
  }
  out_ << json{{"candidates", styled.size()}, {"sweep", rows}}.dump(2) << '\n';
}

void Driver::cmd_train() {
  if (generated_.size() != styled_sets_.size()) {
    throw UsageError("--pairs and --styled must be given the same number of times");
  }
  for (const auto& p : generated_) require_file(p);
  for (const auto& p : styled_sets_) require_file(p);
  require_file(clips_);
  const auto s = settings();
  const ScheduleMode mode = parse_schedule_mode(mode_);

  const auto clips = iemb::load_embeddings(clips_);
  std::vector<GeneratedPairSet> sets;
  std::vector<EmbeddingSet> styled;
  for (std::size_t i = 0; i < generated_.size(); ++i) {
    sets.push_back(load_generated_pairs(generated_[i]));
    styled.push_back(iemb::load_embeddings(styled_sets_[i]));
  }
  std::vector<StyleData> data;
  for (std::size_t i = 0; i < sets.size(); ++i) data.push_back({&sets[i], &styled[i], &clips});

  Trainer trainer(AdapterModel::identity(clips.dim(), s.pipe.tau),
                  {s.pipe.learning_rate, s.pipe.momentum, s.pipe.queue_capacity});
  std::vector<LossLogEntry> log;
  for (std::size_t e = 0; e < s.pipe.epochs; ++e) {
    const auto plan = plan_epoch(sets, s.pipe.batch_size, mode, epoch_seed(s.pipe.seed, e));
    auto steps = trainer.run(plan, data);
    double mean = 0.0;
    for (const auto& l : steps) mean += l.loss;
    if (!steps.empty()) mean /= static_cast<double>(steps.size());
    Log(err_, "epoch").kv("epoch", e).kv("steps", steps.size()).kv("mean_loss", mean).kv("mode", mode_);
    log.insert(log.end(), steps.begin(), steps.end());
  }
  ensure_parent(out_path_);
  save_adapter(out_path_, trainer.model());
  if (!log_path_.empty()) {
    ensure_parent(log_path_);
    save_loss_log(log_path_, log);
  }
  Log(err_, "train").kv("steps", log.size()).kv("out", out_path_);
}

void Driver::cmd_eval() {
  if (zero_shot_ == !model_.empty()) throw UsageError("give exactly one of --zero-shot or --model");
  require_file(queries_);
  require_file(candidates_);
  require_file(truth_);
  if (!model_.empty()) require_file(model_);
  settings();
  const auto q = iemb::load_embeddings(queries_);
  const auto cand = iemb::load_embeddings(candidates_);
  const auto truth = synth::read_truth(truth_).truth;
  std::optional<AdapterModel> model;
  if (!model_.empty()) model = load_adapter(model_);
  const auto ranks = rank_queries(model ? &*model : nullptr, q, cand, truth);
  const auto rep = report(ranks);
  if (!ranks_path_.empty()) {
    ensure_parent(ranks_path_);
    save_ranks_csv(ranks_path_, q.ids(), ranks);
  }
  Log(err_, "eval").kv("queries", rep.query_count).kv("r1", rep.r1).kv("median_rank", rep.median_rank);
  out_ << to_json(rep, with_ranks_).dump(2) << '\n';
}

void Driver::cmd_pipeline() {
  if (!data_dir_.empty()) require_dir(data_dir_);
  const auto s = settings();
  const fs::path out(out_path_);
  fs::create_directories(out);

  synth::SynthDataset data;
  if (!data_dir_.empty()) {
    data = synth::read_dataset(data_dir_);
    Log(err_, "load").kv("data", data_dir_).kv("styles", data.styles.size());
  } else {
    s.synth.validate();
    data = synth::generate(s.synth);
    synth::write_dataset(out / "data", data);
    Log(err_, "synth").kv("styles", data.styles.size()).kv("pool", data.pool.size()).kv("seed", s.synth.seed);
  }

  auto run = run_pipeline(data, s.pipe);
  for (std::size_t i = 0; i < run.stages.size(); ++i) {
    const auto& st = run.stages[i];
    const std::string stem = "style" + std::to_string(i);
    save_pseudo_pairs(out / (stem + "_pseudo.jsonl"), st.pseudo);
    save_style(out / (stem + ".styl"), st.fit.transform);
    iemb::save_embeddings(out / (stem + "_styled.iemb"), st.styled);
    save_generated_pairs(out / (stem + "_generated.jsonl"), st.generated);
    Log(err_, "style")
        .kv("tag", data.styles[i].tag)
        .kv("pseudo", st.pseudo.pairs.size())
        .kv("generated", st.generated.pairs.size());
  }
  for (const auto& [mode, trained] : run.adapters) {
    save_adapter(out / ("adapter_" + to_string(mode) + ".adpt"), trained.model);
    save_loss_log(out / ("loss_" + to_string(mode) + ".csv"), trained.log);
    Log(err_, "trained")
        .kv("mode", to_string(mode))
        .kv("steps", trained.log.size())
        .kv("mean_r1", run.report.at(to_string(mode)).at("mean_r1").get<double>());
  }
  const auto text = run.report.dump(2);
  {
    std::ofstream f(out / "report.json", std::ios::binary);
    f << text << '\n';
    if (!f) throw Error(ErrorCode::IoError, (out / "report.json").string());
  }
  out_ << text << '\n';
}

int Driver::run(const std::vector<std::string>& args) {
  CLI::App app{"In-Style embedding-space pipeline for unpaired text-video retrieval", "instyle"};
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic multi-style dataset");
  add_shared(synth_cmd);
  add_synth(synth_cmd);
  synth_cmd->add_option("--out", out_path_, "output directory")->required();

  auto* match_cmd = app.add_subcommand("match", "exclusive pseudo-matching of queries to clips");
  add_shared(match_cmd);
  match_cmd->add_option("--queries", queries_, "query IEMB")->required();
  match_cmd->add_option("--clips", clips_, "clip IEMB")->required();
  match_cmd->add_option("--out", out_path_, "pseudo pair JSONL")->required();
  match_cmd->add_option("--tag", tag_, "query set name");
  overridable<std::string>(match_cmd, "--order", "query_id | global_greedy",
                           [](Settings& s, const std::string& v) { s.pipe.match.order = parse_match_order(v); });
  overridable<std::size_t>(match_cmd, "--shortlist", "per-query candidate shortlist",
                           [](Settings& s, std::size_t v) { s.pipe.match.shortlist = v; });

  auto* stylize_cmd = app.add_subcommand("stylize", "fit a style map and caption every clip");
  add_shared(stylize_cmd);
  stylize_cmd->add_option("--pairs", pairs_, "pseudo pair JSONL")->required();
  stylize_cmd->add_option("--queries", queries_, "query IEMB")->required();
  stylize_cmd->add_option("--clips", clips_, "clip IEMB")->required();
  stylize_cmd->add_option("--out", out_path_, "styled caption IEMB")->required();
  stylize_cmd->add_option("--style-out", style_out_, "fitted style map");
  stylize_cmd->add_option("--tag", tag_, "style tag");
  stylize_cmd->add_option("--style-index", style_index_, "selects the noise stream");
  overridable<double>(stylize_cmd, "--ridge", "ridge penalty", [](Settings& s, double v) { s.pipe.ridge_lambda = v; });
  overridable<double>(stylize_cmd, "--noise-sigma", "generation noise",
                      [](Settings& s, double v) { s.pipe.noise_sigma = v; });

  auto* filter_cmd = app.add_subcommand("filter", "keep styled captions close to their clip");
  add_shared(filter_cmd);
  filter_cmd->add_option("--styled", styled_, "styled caption IEMB")->required();
  filter_cmd->add_option("--clips", clips_, "clip IEMB")->required();
  filter_cmd->add_option("--out", out_path_, "generated pair JSONL")->required();
  filter_cmd->add_option("--tag", tag_, "style tag");
  overridable<double>(filter_cmd, "--threshold", "similarity threshold (strict)",
                      [](Settings& s, double v) { s.pipe.threshold = v; });

  auto* sweep_cmd = app.add_subcommand("sweep", "retention over a threshold grid");
  add_shared(sweep_cmd);
  sweep_cmd->add_option("--styled", styled_, "styled caption IEMB")->required();
  sweep_cmd->add_option("--clips", clips_, "clip IEMB")->required();
  sweep_cmd->add_option("--thresholds", thresholds_, "ascending comma-separated list");

  auto* train_cmd = app.add_subcommand("train", "train the adapter heads");
  add_shared(train_cmd);
  add_training(train_cmd);
  train_cmd->add_option("--pairs", generated_, "generated pair JSONL, one per style")->required();
  train_cmd->add_option("--styled", styled_sets_, "styled caption IEMB, one per style")->required();
  train_cmd->add_option("--clips", clips_, "clip IEMB")->required();
  train_cmd->add_option("--out", out_path_, "adapter file")->required();
  train_cmd->add_option("--mode", mode_, "in_style | mixed");
  train_cmd->add_option("--log", log_path_, "loss CSV");

  auto* eval_cmd = app.add_subcommand("eval", "text-to-video retrieval metrics");
  add_shared(eval_cmd);
  eval_cmd->add_option("--queries", queries_, "query IEMB")->required();
  eval_cmd->add_option("--candidates", candidates_, "candidate IEMB")->required();
  eval_cmd->add_option("--truth", truth_, "truth JSONL")->required();
  eval_cmd->add_option("--model", model_, "adapter file");
  eval_cmd->add_flag("--zero-shot", zero_shot_, "raw cosine similarities");
  eval_cmd->add_flag("--ranks", with_ranks_, "include per-query ranks in the report");
  eval_cmd->add_option("--ranks-csv", ranks_path_, "per-query ranks CSV");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "end-to-end run with a comparison report");
  add_shared(pipeline_cmd);
  add_training(pipeline_cmd);
  add_synth(pipeline_cmd);
  pipeline_cmd->add_option("--data", data_dir_, "dataset directory (default: synthesize)");
  pipeline_cmd->add_option("--out", out_path_, "output directory")->required();
  overridable<double>(pipeline_cmd, "--threshold", "similarity threshold (strict)",
                      [](Settings& s, double v) { s.pipe.threshold = v; });
  overridable<std::string>(pipeline_cmd, "--order", "query_id | global_greedy",
                           [](Settings& s, const std::string& v) { s.pipe.match.order = parse_match_order(v); });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out_, err_);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::pair<CLI::App*, void (Driver::*)()> table[] = {
      {synth_cmd, &Driver::cmd_synth},   {match_cmd, &Driver::cmd_match},   {stylize_cmd, &Driver::cmd_stylize},
      {filter_cmd, &Driver::cmd_filter}, {sweep_cmd, &Driver::cmd_sweep},   {train_cmd, &Driver::cmd_train},
      {eval_cmd, &Driver::cmd_eval},     {pipeline_cmd, &Driver::cmd_pipeline}};
  for (const auto& [cmd, fn] : table) {
    if (!cmd->parsed()) continue;
    try {
      (this->*fn)();
      return kExitOk;
    } catch (const UsageError& e) {
      Log(err_, "error").kv("command", cmd->get_name()).kv("kind", "usage").kv("msg", e.what());
      return kExitUsage;
    } catch (const Error& e) {
      Log(err_, "error").kv("command", cmd->get_name()).kv("kind", error_name(e.code())).kv("msg", e.detail());
      return e.code() == ErrorCode::ConfigInvalid ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
      Log(err_, "error").kv("command", cmd->get_name()).kv("kind", "internal").kv("msg", e.what());
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Driver driver(out, err);
  return driver.run(args);
}

}  // namespace instyle
