#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vif/importance.hpp"
#include "vif/serialize.hpp"

namespace vif {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Flat key = value file: '#' comments, bare scalars, comma-separated lists.
struct KeyValues {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  }

  double num(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  long integer(const std::string& key, long fallback) const {
    const double v = num(key, static_cast<double>(fallback));
    const long r = static_cast<long>(std::llround(v));
    if (static_cast<double>(r) != v)
      throw ConfigError("config: key '" + key + "' is not an integer");
    return r;
  }

  std::vector<double> grid(const std::string& key, const std::vector<double>& fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has a non-numeric entry: " + cell);
      }
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
  }
};

inline KeyValues parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file: " + path);
  KeyValues out;
  std::string line;
  long lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ConfigError("config: line " + std::to_string(lineno) + " has no key");
    out.kv[key] = value;
  }
  return out;
}

struct ExperimentConfig {
  std::string experiment;
  std::string model = "mlp";       // mlp | gbdt
  std::uint64_t seed = 1;
  long replicates = -1;            // -1: per-experiment default
  std::string out_dir;
  std::string data_path;           // real-csv input
  std::string target_column = "target";
  KeyValues extra;
};

// Model configuration for an experiment, honoring config-file overrides.
inline ModelConfig experiment_model_config(const ExperimentConfig& cfg, std::size_t p) {
  if (cfg.model == "mlp") {
    MlpConfig m;
    m.widths = {p, static_cast<std::size_t>(cfg.extra.integer("width", 256)), 1};
    m.eta0 = cfg.extra.num("eta0", 0.3);
    m.sigma_w = cfg.extra.num("sigma_w", std::sqrt(2.0));
    m.sigma_b = cfg.extra.num("sigma_b", 0.1);
    m.activation = cfg.extra.str("activation", "relu") == "relu" ? Activation::relu
                                                                 : Activation::softplus;
    m.parameterization = cfg.extra.str("parameterization", "ntk") == "ntk"
                             ? Parameterization::ntk
                             : Parameterization::standard;
    return m;
  }
  if (cfg.model == "gbdt") {
    GbdtConfig g;
    g.depth = static_cast<int>(cfg.extra.integer("depth", 2));
    g.borders = static_cast<int>(cfg.extra.integer("borders", 32));
    g.beta = cfg.extra.num("beta", 10000.0);
    g.epsilon = cfg.extra.num("epsilon", 0.3);
    g.lambda = cfg.extra.num("lambda", 0.0);
    return g;
  }
  throw ConfigError("unknown model '" + cfg.model + "' (expected mlp or gbdt)");
}

inline StopPolicy experiment_stop_policy(const ExperimentConfig& cfg) {
  return StopPolicy::patience_rule(static_cast<int>(cfg.extra.integer("patience", 10)),
                                   cfg.extra.num("q_val", 0.75),
                                   static_cast<int>(cfg.extra.integer("max_epochs", 2000)));
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string experiment;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> params;
  std::map<std::string, double> metrics;
  double wall_ms = 0.0;

  void validate() const {
    for (const auto& [k, v] : metrics)
      if (!std::isfinite(v))
        throw NumericOverflowError("RunRecord: metric '" + k + "' is not finite");
  }
};

// Deterministic record payload. Wall-clock times are written to a separate
// timings file so a rerun with the same seed reproduces these bytes exactly.
inline nlohmann::ordered_json records_to_json(const std::vector<RunRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const RunRecord& r : records) {
    nlohmann::ordered_json j;
    j["experiment"] = r.experiment;
    j["seed"] = r.seed;
    nlohmann::ordered_json params;
    for (const auto& [k, v] : r.params) params[k] = v;
    j["params"] = std::move(params);
    nlohmann::ordered_json metrics;
    for (const auto& [k, v] : r.metrics) metrics[k] = v;
    j["metrics"] = std::move(metrics);
    arr.push_back(std::move(j));
  }
  return arr;
}

inline void write_records(const std::vector<RunRecord>& records, const std::string& out_dir,
                          const std::string& stem) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (const RunRecord& r : records) r.validate();

  {
    std::ofstream out(fs::path(out_dir) / (stem + ".json"));
    out << records_to_json(records).dump(2) << '\n';
  }

  // CSV mirror: union of parameter and metric keys as columns.
  std::vector<std::string> pkeys, mkeys;
  for (const RunRecord& r : records) {
    for (const auto& [k, v] : r.params)
      if (std::find(pkeys.begin(), pkeys.end(), k) == pkeys.end()) pkeys.push_back(k);
    for (const auto& [k, v] : r.metrics)
      if (std::find(mkeys.begin(), mkeys.end(), k) == mkeys.end()) mkeys.push_back(k);
  }
  std::sort(pkeys.begin(), pkeys.end());
  std::sort(mkeys.begin(), mkeys.end());
  {
    std::ofstream out(fs::path(out_dir) / (stem + ".csv"));
    out << "experiment,seed";
    for (const auto& k : pkeys) out << ',' << k;
    for (const auto& k : mkeys) out << ',' << k;
    out << '\n';
    for (const RunRecord& r : records) {
      out << r.experiment << ',' << r.seed;
      for (const auto& k : pkeys)
        out << ',' << (r.params.count(k) ? r.params.at(k) : "");
      for (const auto& k : mkeys)
        out << ',' << (r.metrics.count(k) ? format_double(r.metrics.at(k)) : "");
      out << '\n';
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / (stem + "_timings.csv"));
    out << "experiment,seed,wall_ms\n";
    for (const RunRecord& r : records)
      out << r.experiment << ',' << r.seed << ',' << format_double(r.wall_ms) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> parse_methods(const std::string& spec) {
  std::vector<std::string> out;
  std::stringstream ss(spec);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell != "earlystop" && cell != "dropout" && cell != "retrain")
      throw ConfigError("unknown method '" + cell + "'");
    out.push_back(cell);
  }
  if (out.empty()) throw ConfigError("empty method list");
  return out;
}

inline std::uint64_t replicate_seed(std::uint64_t base, long rep) {
  return base * 1000003ULL + static_cast<std::uint64_t>(rep);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Correlated linear model (closed-form truth) experiment
// ---------------------------------------------------------------------------

inline std::vector<RunRecord> run_corr_linear(const ExperimentConfig& cfg) {
  const std::vector<double> rhos = cfg.extra.grid("rhos", {0.0, 0.25, 0.5, 0.75, 1.0});
  const std::size_t n = static_cast<std::size_t>(cfg.extra.integer("n", 5000));
  const long reps = cfg.replicates > 0 ? cfg.replicates : 10;
  const double sigma_eps = cfg.extra.num("sigma_eps", 1.0);
  const std::vector<std::string> methods =
      detail::parse_methods(cfg.extra.str("methods", "earlystop,dropout,retrain"));
  const std::vector<double> beta = {1.5, 1.2, 1.0, 0.0, 0.0, 0.0};
  const ModelConfig model_cfg = experiment_model_config(cfg, beta.size());
  const StopPolicy policy = experiment_stop_policy(cfg);

  std::vector<RunRecord> out;
  for (std::size_t ri = 0; ri < rhos.size(); ++ri) {
    const double rho = rhos[ri];
    for (long rep = 0; rep < reps; ++rep) {
      const std::uint64_t rep_seed = detail::replicate_seed(cfg.seed, rep);
      RngStream rng = RngStream(rep_seed).substream("corr-linear").substream(ri);

      const auto gen = gen_correlated_linear(rho, beta, 1.0, sigma_eps, n, rng.substream("data"));
      auto [train, holdout] = split(gen.data, SplitPlan(0.75, rng.substream("split")));

      const double t0 = detail::now_ms();
      const FittedModel full = train_full_model(model_cfg, train, policy, rng.substream("full"));
      const double full_ms = detail::now_ms() - t0;

      RunRecord rec;
      rec.experiment = "corr-linear";
      rec.seed = rep_seed;
      rec.params["rho"] = format_double(rho);
      rec.params["n"] = std::to_string(n);
      rec.params["model"] = cfg.model;
      rec.metrics["truth"] = gen.true_vi_1;
      rec.metrics["full_train_ms"] = full_ms;

      for (const std::string& method : methods) {
        ViEstimate est;
        if (method == "earlystop")
          est = estimate_vi_earlystop(full, train, holdout, {0}, policy, rng.substream("es"));
        else if (method == "dropout")
          est = estimate_vi_dropout(full, train, holdout, {0});
        else
          est = estimate_vi_retrain(full, train, holdout, {0}, model_cfg, policy,
                                    rng.substream("rt"));
        rec.metrics["vi_" + method] = est.vi_hat;
        rec.metrics["err_" + method] = est.vi_hat - gen.true_vi_1;
        rec.metrics["wall_" + method] = est.wall_ms;
      }
      rec.wall_ms = detail::now_ms() - t0;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wald confidence-interval coverage
// ---------------------------------------------------------------------------

inline std::vector<RunRecord> run_wald_coverage(const ExperimentConfig& cfg) {
  const std::vector<double> rhos = cfg.extra.grid("rhos", {0.0, 0.2, 0.5, 0.8, 1.0});
  const std::size_t n = static_cast<std::size_t>(cfg.extra.integer("n", 2000));
  const long reps = cfg.replicates > 0 ? cfg.replicates : 100;
  const double alpha = cfg.extra.num("alpha", 0.05);
  const double sigma_eps = cfg.extra.num("sigma_eps", 1.0);
  const std::vector<double> beta = {1.5, 1.2, 1.0, 0.0, 0.0, 0.0};
  const ModelConfig model_cfg = experiment_model_config(cfg, beta.size());
  const StopPolicy policy = experiment_stop_policy(cfg);

  std::vector<RunRecord> out;
  for (std::size_t ri = 0; ri < rhos.size(); ++ri) {
    const double rho = rhos[ri];
    for (long rep = 0; rep < reps; ++rep) {
      const std::uint64_t rep_seed = detail::replicate_seed(cfg.seed, rep);
      RngStream rng = RngStream(rep_seed).substream("wald").substream(ri);
      const auto gen = gen_correlated_linear(rho, beta, 1.0, sigma_eps, n, rng.substream("data"));
      auto [train, holdout] = split(gen.data, SplitPlan(0.75, rng.substream("split")));
      const double t0 = detail::now_ms();
      const FittedModel full = train_full_model(model_cfg, train, policy, rng.substream("full"));
      const ViEstimate est = wald_ci(
          estimate_vi_earlystop(full, train, holdout, {0}, policy, rng.substream("es")), alpha);

      RunRecord rec;
      rec.experiment = "wald-coverage";
      rec.seed = rep_seed;
      rec.params["rho"] = format_double(rho);
      rec.params["n"] = std::to_string(n);
      rec.params["model"] = cfg.model;
      rec.metrics["truth"] = gen.true_vi_1;
      rec.metrics["vi"] = est.vi_hat;
      rec.metrics["tau"] = est.tau_hat;
      rec.metrics["ci_lower"] = est.ci->lower;
      rec.metrics["ci_upper"] = est.ci->upper;
      rec.metrics["cover"] =
          (gen.true_vi_1 >= est.ci->lower && gen.true_vi_1 <= est.ci->upper) ? 1.0 : 0.0;
      rec.wall_ms = detail::now_ms() - t0;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// High-dimensional timing / accuracy comparison
// ---------------------------------------------------------------------------

inline std::vector<RunRecord> run_highdim(const ExperimentConfig& cfg) {
  const std::size_t p = static_cast<std::size_t>(cfg.extra.integer("p", 50));
  const std::size_t n = static_cast<std::size_t>(cfg.extra.integer("n", 2000));
  const long reps = cfg.replicates > 0 ? cfg.replicates : 5;
  const ModelConfig model_cfg = experiment_model_config(cfg, p);
  const StopPolicy policy = experiment_stop_policy(cfg);
  const HighDimKind kind = cfg.model == "mlp" ? HighDimKind::nn_teacher : HighDimKind::linear;

  std::vector<RunRecord> out;
  for (long rep = 0; rep < reps; ++rep) {
    const std::uint64_t rep_seed = detail::replicate_seed(cfg.seed, rep);
    RngStream rng = RngStream(rep_seed).substream("highdim");
    const Dataset data = gen_highdim(kind, p, n, rng.substream("data"));
    auto [train, holdout] = split(data, SplitPlan(0.75, rng.substream("split")));

    const double t0 = detail::now_ms();
    const FittedModel full = train_full_model(model_cfg, train, policy, rng.substream("full"));

    RunRecord rec;
    rec.experiment = "highdim";
    rec.seed = rep_seed;
    rec.params["p"] = std::to_string(p);
    rec.params["n"] = std::to_string(n);
    rec.params["model"] = cfg.model;

    const ViEstimate es =
        estimate_vi_earlystop(full, train, holdout, {0}, policy, rng.substream("es"));
    const ViEstimate dr = estimate_vi_dropout(full, train, holdout, {0});
    const ViEstimate rt = estimate_vi_retrain(full, train, holdout, {0}, model_cfg, policy,
                                              rng.substream("rt"));
    rec.metrics["vi_earlystop"] = es.vi_hat;
    rec.metrics["vi_dropout"] = dr.vi_hat;
    rec.metrics["vi_retrain"] = rt.vi_hat;
    rec.metrics["wall_earlystop"] = es.wall_ms;
    rec.metrics["wall_retrain"] = rt.wall_ms;
    rec.metrics["err_vs_retrain_earlystop"] = std::abs(es.vi_hat - rt.vi_hat);
    rec.metrics["err_vs_retrain_dropout"] = std::abs(dr.vi_hat - rt.vi_hat);

    // A feature with zero coefficient, independent of everything else.
    const ViEstimate irr =
        estimate_vi_earlystop(full, train, holdout, {p - 1}, policy, rng.substream("irr"));
    rec.metrics["vi_irrelevant_earlystop"] = irr.vi_hat;
    rec.wall_ms = detail::now_ms() - t0;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence-rate verification with the spectral stopping threshold
// ---------------------------------------------------------------------------

namespace detail {

struct RateData {
  Dataset data;                    // features + noisy response
  std::vector<double> true_red;    // reduced-model target at the design rows
};

// Discrete-uniform features: feature j takes values {j, .., j+3} (0-based j),
// response = table(x2, x3) + beta1 * x1 + noise. The table teacher lies in the
// span of depth-2 trees once the quantizer resolves all value borders.
inline RateData gen_rate_gbdt(std::size_t n, double beta1, double sigma, const Matrix& table,
                              RngStream& rng) {
  RngStream xs = rng.substream("data");
  RngStream es = rng.substream("noise");
  RateData out;
  out.data.x = Matrix(n, 3);
  out.data.y.resize(n);
  out.true_red.resize(n);
  const double mu1 = 1.5;   // mean of {0,1,2,3}
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j)
      out.data.x(i, j) = static_cast<double>(j + xs.below(4));
    const int c2 = static_cast<int>(out.data.x(i, 1) - 1.0);
    const int c3 = static_cast<int>(out.data.x(i, 2) - 2.0);
    const double f = table(c2, c3);
    out.true_red[i] = f + beta1 * mu1;
    out.data.y[i] = f + beta1 * out.data.x(i, 0) + sigma * es.normal();
  }
  return out;
}

inline RateData gen_rate_mlp(std::size_t n, double beta1, double sigma, const MlpModel& teacher,
                             RngStream& rng) {
  RngStream xs = rng.substream("data");
  RngStream es = rng.substream("noise");
  RateData out;
  out.data.x = Matrix(n, 3);
  out.data.y.resize(n);
  for (auto& v : out.data.x.data()) v = xs.normal();
  Matrix reduced(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    reduced(i, 0) = out.data.x(i, 1);
    reduced(i, 1) = out.data.x(i, 2);
  }
  out.true_red = mlp_forward(teacher, reduced);   // E[X1] = 0 drops the beta1 term
  for (std::size_t i = 0; i < n; ++i)
    out.data.y[i] = out.true_red[i] + beta1 * out.data.x(i, 0) + sigma * es.normal();
  return out;
}

inline double mean_sq_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace detail

inline std::vector<RunRecord> run_rate_experiment(const ExperimentConfig& cfg) {
  const bool is_gbdt = cfg.model == "gbdt";
  const std::vector<double> default_grid =
      is_gbdt ? std::vector<double>{200, 400, 800, 1600} : std::vector<double>{100, 200, 400};
  const std::vector<double> n_grid = cfg.extra.grid("n_grid", default_grid);
  const long reps = cfg.replicates > 0 ? cfg.replicates : (is_gbdt ? 10 : 5);
  const double sigma = cfg.extra.num("sigma", 0.5);
  const double beta1 = cfg.extra.num("beta1", 3.0);
  const std::size_t n_eval = static_cast<std::size_t>(cfg.extra.integer("n_eval", 2000));
  const StopPolicy full_policy = experiment_stop_policy(cfg);

  ExperimentConfig model_knobs = cfg;
  if (is_gbdt && !cfg.extra.has("borders")) model_knobs.extra.kv["borders"] = "3";
  if (is_gbdt && !cfg.extra.has("epsilon")) model_knobs.extra.kv["epsilon"] = "0.2";
  if (!is_gbdt && !cfg.extra.has("width")) model_knobs.extra.kv["width"] = "128";
  if (!is_gbdt && !cfg.extra.has("eta0")) model_knobs.extra.kv["eta0"] = "0.25";
  const ModelConfig model_cfg = experiment_model_config(model_knobs, 3);

  std::vector<RunRecord> out;
  for (const double n_real : n_grid) {
    const std::size_t n = static_cast<std::size_t>(n_real);
    for (long rep = 0; rep < reps; ++rep) {
      const std::uint64_t rep_seed = detail::replicate_seed(cfg.seed, rep);
      RngStream rng = RngStream(rep_seed).substream("rate");

      // Teacher for this replicate (shared across the N grid through the seed).
      detail::RateData rd, rd_eval;
      MlpModel mlp_teacher;
      Matrix table;
      if (is_gbdt) {
        table = Matrix(4, 4);
        RngStream ts = rng.substream("teacher");
        for (auto& v : table.data()) v = ts.normal();
        rd = detail::gen_rate_gbdt(n, beta1, sigma, table, rng);
        RngStream ev = rng.substream("eval");
        rd_eval = detail::gen_rate_gbdt(n_eval, beta1, 0.0, table, ev);
      } else {
        MlpConfig tcfg;
        tcfg.widths = {2, 64, 1};
        mlp_teacher = mlp_init(tcfg, rng.substream("teacher"));
        rd = detail::gen_rate_mlp(n, beta1, sigma, mlp_teacher, rng);
        RngStream ev = rng.substream("eval");
        rd_eval = detail::gen_rate_mlp(n_eval, beta1, 0.0, mlp_teacher, ev);
      }

      // Full model on all features, then drop the first feature.
      const FittedModel full =
          train_full_model(model_cfg, rd.data, full_policy, rng.substream("full"));
      const DropSpec spec = DropSpec::from_training_means(rd.data, {0});
      const Dataset dropped = drop_features(rd.data, spec);
      const std::vector<double> warm_preds = predict(full, dropped.x);

      // Kernel spectrum, RKHS distance to the true reduced target, threshold.
      std::vector<double> c(n);
      for (std::size_t i = 0; i < n; ++i) c[i] = warm_preds[i] - rd.true_red[i];
      std::vector<double> eigenvalues;
      double c_h = 0.0;
      double step = 0.0;
      if (is_gbdt) {
        const GbdtConfig& gc = std::get<GbdtConfig>(model_cfg);
        const PatternKernel pk = stationary_kernel_compressed(dropped.x, gc);
        eigenvalues = pk.padded_eigenvalues();
        c_h = std::sqrt(pk.quad_form_pinv(c) / static_cast<double>(n));
        step = gc.epsilon;
      } else {
        const KernelMatrix k = model_kernel(full, dropped);
        eigenvalues = k.eigenvalues();
        c_h = hilbert_distance(k, c);
        step = std::get<MlpConfig>(model_cfg).eta0;
      }
      const long t_stop = t_max(eigenvalues, c_h, sigma, step);

      // Warm-started continuation for exactly t_stop iterations, tracking the
      // design-point error against the true reduced target.
      const Dataset dropped_eval = drop_features(
          Dataset{rd_eval.data.x, rd_eval.data.y, {}},
          DropSpec{{0}, {spec.replacement[0]}});
      double err_at_1 = detail::mean_sq_diff(warm_preds, rd.true_red);
      double err_design = err_at_1;
      double err_pop = 0.0;
      auto run_continuation = [&](auto trainer) {
        for (long t = 1; t <= t_stop; ++t) {
          trainer.step();
          if (t == 1)
            err_at_1 = detail::mean_sq_diff(trainer.train_pred(), rd.true_red);
        }
        trainer.mark();
        err_design = t_stop >= 1 ? detail::mean_sq_diff(trainer.train_pred(), rd.true_red)
                                 : err_at_1;
        err_pop = detail::mean_sq_diff(trainer.eval_pred(dropped_eval.x), rd_eval.true_red);
      };

      if (is_gbdt) {
        struct Runner {
          GbdtTrainerAdapter ad;
          std::vector<double> pred_cache;
          void step() { ad.step(); }
          void mark() { ad.mark_best(); }
          const std::vector<double>& train_pred() {
            pred_cache = predictions();
            return pred_cache;
          }
          std::vector<double> predictions() {
            return predict(ad.current_model(), x_ref->x);
          }
          std::vector<double> eval_pred(const Matrix& x) {
            return predict(ad.current_model(), x);
          }
          const Dataset* x_ref;
        };
        Runner r{GbdtTrainerAdapter(std::get<GbdtEnsemble>(full), dropped.x, dropped.y,
                                    rng.substream("cont")),
                 {},
                 &dropped};
        run_continuation(std::move(r));
      } else {
        struct Runner {
          MlpTrainerAdapter ad;
          std::vector<double> pred_cache;
          void step() { ad.step(); }
          void mark() { ad.mark_best(); }
          const std::vector<double>& train_pred() {
            pred_cache = ad.current_train_predictions();
            return pred_cache;
          }
          std::vector<double> eval_pred(const Matrix& x) {
            return predict(ad.current_model(), x);
          }
        };
        Runner r{MlpTrainerAdapter(std::get<MlpModel>(full), dropped.x, dropped.y), {}};
        run_continuation(std::move(r));
      }

      RunRecord rec;
      rec.experiment = "rate";
      rec.seed = rep_seed;
      rec.params["n"] = std::to_string(n);
      rec.params["model"] = cfg.model;
      rec.metrics["t_max"] = static_cast<double>(t_stop);
      rec.metrics["c_h"] = c_h;
      rec.metrics["err_design"] = err_design;
      rec.metrics["err_design_at_1"] = err_at_1;
      rec.metrics["err_population"] = err_pop;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shapley values on the logistic fixture
// ---------------------------------------------------------------------------

inline std::vector<RunRecord> run_shapley_logistic(const ExperimentConfig& cfg) {
  const std::size_t p = static_cast<std::size_t>(cfg.extra.integer("p", 10));
  const std::size_t n = static_cast<std::size_t>(cfg.extra.integer("n", 5000));
  const int m = static_cast<int>(cfg.extra.integer("samples", 50));
  const long reps = cfg.replicates > 0 ? cfg.replicates : 10;
  const std::vector<std::string> methods =
      detail::parse_methods(cfg.extra.str("methods", "earlystop,dropout,retrain"));
  const ModelConfig model_cfg = experiment_model_config(cfg, p);
  const StopPolicy policy = experiment_stop_policy(cfg);

  std::vector<RunRecord> out;
  for (long rep = 0; rep < reps; ++rep) {
    const std::uint64_t rep_seed = detail::replicate_seed(cfg.seed, rep);
    RngStream rng = RngStream(rep_seed).substream("shapley-logistic");
    const Dataset data = gen_logistic(p, n, rng.substream("data"));
    auto [train, holdout] = split(data, SplitPlan(0.75, rng.substream("split")));

    for (const std::string& method : methods) {
      const ViMethod vm = method == "earlystop"  ? ViMethod::early_stop
                          : method == "dropout" ? ViMethod::dropout
                                                : ViMethod::retrain;
      const double t0 = detail::now_ms();
      const ShapleyEstimate est = shapley(train, holdout, model_cfg, m, ShapleyMode::sampled, vm,
                                          policy, rng.substream(method));
      const double wall = detail::now_ms() - t0;
      for (std::size_t j = 0; j < p; ++j) {
        RunRecord rec;
        rec.experiment = "shapley-logistic";
        rec.seed = rep_seed;
        rec.params["model"] = cfg.model;
        rec.params["method"] = method;
        rec.params["feature"] = "x" + std::to_string(j + 1);
        rec.metrics["phi"] = est.phi[j];
        rec.metrics["std_err"] = est.std_err[j];
        rec.metrics["m"] = static_cast<double>(est.m_samples);
        rec.wall_ms = wall;
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Real CSV pipeline
// ---------------------------------------------------------------------------

namespace detail {

// Column standardization fit on the training rows only (gradient descent on
// raw sensor scales conditions terribly); applied consistently everywhere.
struct Standardizer {
  std::vector<double> mean, scale;
  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean.resize(x.cols());
    s.scale.resize(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const std::vector<double> col = x.column(j);
      s.mean[j] = vif::mean(col);
      const double sd = std::sqrt(sample_variance(col));
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }
  Dataset apply(const Dataset& d) const {
    Dataset out = d;
    for (std::size_t j = 0; j < d.p(); ++j)
      for (std::size_t i = 0; i < d.n(); ++i)
        out.x(i, j) = (d.x(i, j) - mean[j]) / scale[j];
    return out;
  }
};

}  // namespace detail

inline std::vector<RunRecord> run_real_csv(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("real-csv: --data is required");
  const Dataset raw = load_csv(cfg.data_path, cfg.target_column);
  RngStream rng = RngStream(cfg.seed).substream("real-csv");
  auto [train_raw, holdout_raw] = split(raw, SplitPlan(0.75, rng.substream("split")));

  Dataset train = train_raw, holdout = holdout_raw;
  if (cfg.model == "mlp") {
    const detail::Standardizer st = detail::Standardizer::fit(train_raw.x);
    train = st.apply(train_raw);
    holdout = st.apply(holdout_raw);
  }

  const ModelConfig model_cfg = experiment_model_config(cfg, raw.p());
  const StopPolicy policy = experiment_stop_policy(cfg);
  const int m = static_cast<int>(cfg.extra.integer("samples", 20));
  const std::vector<std::string> methods =
      detail::parse_methods(cfg.extra.str("methods", "earlystop,dropout,retrain"));

  const double t0 = detail::now_ms();
  const FittedModel full = train_full_model(model_cfg, train, policy, rng.substream("full"));
  const double full_ms = detail::now_ms() - t0;

  std::vector<RunRecord> out;
  std::map<std::string, ShapleyEstimate> shap;
  for (const std::string& method : methods) {
    const ViMethod vm = method == "earlystop"  ? ViMethod::early_stop
                        : method == "dropout" ? ViMethod::dropout
                                              : ViMethod::retrain;
    const CachedDropValue val(make_model_value_fn(vm, full, train, holdout, model_cfg, policy,
                                                  rng.substream("shap-" + method)));
    shap.emplace(method, shapley_sampled(train.p(), m, val,
                                         rng.substream("subset-sampling-" + method)));
  }

  for (std::size_t j = 0; j < raw.p(); ++j) {
    const std::string feature =
        j < raw.feature_names.size() ? raw.feature_names[j] : "x" + std::to_string(j + 1);
    for (const std::string& method : methods) {
      RunRecord rec;
      rec.experiment = "real-csv";
      rec.seed = cfg.seed;
      rec.params["feature"] = feature;
      rec.params["method"] = method;
      rec.params["model"] = cfg.model;

      ViEstimate est;
      double wall = 0.0;
      if (method == "earlystop") {
        est = wald_ci(estimate_vi_earlystop(full, train, holdout, {j}, policy,
                                            rng.substream("es").substream(j)),
                      0.05);
        wall = est.wall_ms;
      } else if (method == "dropout") {
        est = wald_ci(estimate_vi_dropout(full, train, holdout, {j}), 0.05);
      } else {
        est = wald_ci(estimate_vi_retrain(full, train, holdout, {j}, model_cfg, policy,
                                          rng.substream("rt").substream(j)),
                      0.05);
        wall = est.wall_ms;
      }
      rec.metrics["vi"] = est.vi_hat;
      rec.metrics["tau"] = est.tau_hat;
      rec.metrics["ci_lower"] = est.ci->lower;
      rec.metrics["ci_upper"] = est.ci->upper;
      rec.metrics["phi"] = shap.at(method).phi[j];
      rec.metrics["phi_std_err"] = shap.at(method).std_err[j];
      rec.wall_ms = wall + (j == 0 && method == methods.front() ? full_ms : 0.0);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment == "rate") return run_rate_experiment(cfg);
  if (cfg.experiment == "corr-linear") return run_corr_linear(cfg);
  if (cfg.experiment == "highdim") return run_highdim(cfg);
  if (cfg.experiment == "wald-coverage") return run_wald_coverage(cfg);
  if (cfg.experiment == "shapley-logistic") return run_shapley_logistic(cfg);
  if (cfg.experiment == "real-csv") return run_real_csv(cfg);
  throw ConfigError("unknown experiment '" + cfg.experiment + "'");
}

// Least-squares slope of y against x; the rate criterion fits log error
// against log sample size.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace vif
