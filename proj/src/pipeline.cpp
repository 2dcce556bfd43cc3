#include "instyle/pipeline.hpp"

#include <cmath>

#include "instyle/error.hpp"
#include "instyle/rng.hpp"

namespace instyle {

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); };
  if (!(threshold > -1.0 && threshold < 1.0)) fail("threshold must lie in (-1, 1)");
  if (batch_size < 2) fail("batch size must be >= 2");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) fail("ridge_lambda must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
  if (match.shortlist == 0) fail("match shortlist must be positive");
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"threshold", threshold},
          {"tau", tau},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"epochs", epochs},
          {"queue_capacity", queue_capacity},
          {"match_order", to_string(match.order)},
          {"shortlist", match.shortlist},
          {"ridge_lambda", ridge_lambda},
          {"noise_sigma", noise_sigma},
          {"seed", seed},
          {"deterministic", deterministic}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, PipelineConfig c) {
  try {
    c.threshold = j.value("threshold", c.threshold);
    c.tau = j.value("tau", c.tau);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.epochs = j.value("epochs", c.epochs);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    if (j.contains("match_order")) c.match.order = parse_match_order(j.at("match_order").get<std::string>());
    c.match.shortlist = j.value("shortlist", c.match.shortlist);
    c.ridge_lambda = j.value("ridge_lambda", c.ridge_lambda);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("pipeline config: ") + e.what());
  }
  return c;
}

std::uint64_t stylize_seed(std::uint64_t seed, std::size_t style) { return mix_seed(seed, 0x5700 + style); }
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) { return mix_seed(seed, 0xE000 + epoch); }

namespace {

// Re-raises library errors with the failing stage prepended.
template <class F>
auto in_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage ") + stage + ": " + e.detail());
  }
}

}  // namespace

StyleStages run_style_stages(const EmbeddingSet& queries, const EmbeddingSet& pool,
                             const PipelineConfig& cfg, const std::string& tag, std::size_t style) {
  StyleStages st;
  st.pseudo = in_stage("match", [&] { return match_exclusive(queries, pool, cfg.match); });
  st.pseudo.query_set = tag;
  st.pseudo.clip_set = "pool";
  st.fit = in_stage("stylize", [&] { return fit_style(st.pseudo, queries, pool, cfg.ridge_lambda, cfg.noise_sigma, tag); });
  st.styled = in_stage("stylize", [&] { return generate_styled(pool, st.fit.transform, stylize_seed(cfg.seed, style)); });
  st.generated = in_stage("filter", [&] { return filter_pairs(st.styled, pool, cfg.threshold, tag); });
  return st;
}

TrainedAdapter train_adapter(const std::vector<StyleStages>& stages, const EmbeddingSet& pool,
                             const PipelineConfig& cfg, ScheduleMode mode) {
  std::vector<GeneratedPairSet> sets;
  std::vector<StyleData> data;
  for (const auto& st : stages) sets.push_back(st.generated);
  for (std::size_t s = 0; s < stages.size(); ++s) data.push_back({&sets[s], &stages[s].styled, &pool});

  Trainer trainer(AdapterModel::identity(pool.dim(), cfg.tau),
                  {cfg.learning_rate, cfg.momentum, cfg.queue_capacity});
  TrainedAdapter out;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto plan = plan_epoch(sets, cfg.batch_size, mode, epoch_seed(cfg.seed, e));
    auto log = trainer.run(plan, data);
    out.log.insert(out.log.end(), log.begin(), log.end());
  }
  out.model = trainer.model();
  return out;
}

nlohmann::json evaluate_sets(const AdapterModel* model, const std::vector<HeldOutSet>& sets) {
  nlohmann::json per_style = nlohmann::json::array();
  double sum_r1 = 0.0;
  for (const auto& s : sets) {
    const auto rep = report(rank_queries(model, *s.queries, *s.candidates, *s.truth));
    auto j = to_json(rep);
    j["style"] = s.tag;
    per_style.push_back(j);
    sum_r1 += rep.r1;
  }
  return {{"per_style", per_style},
          {"mean_r1", sets.empty() ? 0.0 : sum_r1 / static_cast<double>(sets.size())}};
}

PipelineRun run_pipeline(const synth::SynthDataset& data, const PipelineConfig& cfg) {
  cfg.validate();
  PipelineRun run;
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t s = 0; s < data.styles.size(); ++s) {
    run.stages.push_back(run_style_stages(data.styles[s].train_queries, data.pool, cfg, data.styles[s].tag, s));
    const auto& st = run.stages.back();
    pairs.push_back({{"style", data.styles[s].tag},
                     {"pseudo_pairs", st.pseudo.pairs.size()},
                     {"generated_pairs", st.generated.pairs.size()},
                     {"retention_rate", st.generated.retention_rate()},
                     {"fit_residual_rms", st.fit.residual_rms}});
  }

  std::vector<HeldOutSet> held_out;
  for (const auto& s : data.styles) held_out.push_back({s.tag, &s.test_queries, &data.test_clips, &data.truth});

  auto& out = run.report;
  out["config"] = cfg.to_json();
  out["synth"] = data.config.to_json();
  out["pairs"] = pairs;
  out["zero_shot"] = in_stage("eval", [&] { return evaluate_sets(nullptr, held_out); });

  std::vector<ScheduleMode> modes{ScheduleMode::InStyle};
  if (data.styles.size() > 1) modes.push_back(ScheduleMode::Mixed);
  for (ScheduleMode mode : modes) {
    auto trained = in_stage("train", [&] { return train_adapter(run.stages, data.pool, cfg, mode); });
    auto section = in_stage("eval", [&] { return evaluate_sets(&trained.model, held_out); });
    section["steps"] = trained.log.size();
    section["first_loss"] = trained.log.empty() ? 0.0 : trained.log.front().loss;
    section["last_loss"] = trained.log.empty() ? 0.0 : trained.log.back().loss;
    out[to_string(mode)] = section;
    run.adapters.emplace_back(mode, std::move(trained));
  }
  return run;
}

}  // namespace instyle
