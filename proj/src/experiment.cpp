#include "bbnn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

#include "bbnn/errors.hpp"
#include "bbnn/io.hpp"
#include "bbnn/metrics.hpp"

namespace bbnn {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Value parsing

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::size_t to_size(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(std::stoull(v));
}

double to_real(const std::string& v) {
  const double d = parse_double(v);
  if (!std::isfinite(d)) throw std::invalid_argument("expected a finite number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true/false, got '" + v + "'");
}

BetaMode to_beta_mode(const std::string& v) {
  if (v == "constant") return BetaMode::kConstant;
  if (v == "one_over_batches") return BetaMode::kOneOverBatches;
  throw std::invalid_argument("expected constant or one_over_batches, got '" + v + "'");
}

LambdaRule to_lambda_rule(const std::string& v) {
  if (v == "fixed_schedule") return LambdaRule::kFixedSchedule;
  if (v == "line_search") return LambdaRule::kLineSearch;
  throw std::invalid_argument("expected fixed_schedule or line_search, got '" + v + "'");
}

std::vector<double> to_reals(const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_real(s));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

void add_bbb_keys(std::map<std::string, Setter>& m, const std::string& sec,
                  BbbConfig ExperimentConfig::*field) {
  auto f = [field](ExperimentConfig& c) -> BbbConfig& { return c.*field; };
  m[sec + ".epochs"] = [f](auto& c, auto& v) { f(c).epochs = to_size(v); };
  m[sec + ".batch_size"] = [f](auto& c, auto& v) { f(c).batch_size = to_size(v); };
  m[sec + ".learning_rate"] = [f](auto& c, auto& v) { f(c).learning_rate = to_real(v); };
  m[sec + ".momentum"] = [f](auto& c, auto& v) { f(c).momentum = to_real(v); };
  m[sec + ".beta_mode"] = [f](auto& c, auto& v) { f(c).beta_mode = to_beta_mode(v); };
  m[sec + ".beta"] = [f](auto& c, auto& v) { f(c).beta = to_real(v); };
  m[sec + ".train_samples"] = [f](auto& c, auto& v) { f(c).train_samples = to_size(v); };
  m[sec + ".val_samples"] = [f](auto& c, auto& v) { f(c).val_samples = to_size(v); };
  m[sec + ".early_stopping"] = [f](auto& c, auto& v) { f(c).early_stopping = to_bool(v); };
  m[sec + ".patience"] = [f](auto& c, auto& v) { f(c).patience = to_size(v); };
  m[sec + ".init_mean_std"] = [f](auto& c, auto& v) { f(c).init_mean_std = to_real(v); };
  m[sec + ".init_sigma"] = [f](auto& c, auto& v) { f(c).init_sigma = to_real(v); };
}

void add_boost_keys(std::map<std::string, Setter>& m, const std::string& sec,
                    const std::function<BoostConfig&(ExperimentConfig&)>& f) {
  m[sec + ".rounds"] = [f](auto& c, auto& v) { f(c).rounds = to_size(v); };
  m[sec + ".lambda_rule"] = [f](auto& c, auto& v) { f(c).lambda_rule = to_lambda_rule(v); };
  m[sec + ".grid"] = [f](auto& c, auto& v) { f(c).grid = to_reals(v); };
  m[sec + ".entropy_reg"] = [f](auto& c, auto& v) { f(c).entropy_reg = to_real(v); };
  m[sec + ".elbo_samples"] = [f](auto& c, auto& v) { f(c).elbo_samples = to_size(v); };
  m[sec + ".reject_se"] = [f](auto& c, auto& v) { f(c).reject_se = to_real(v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> m = [] {
    std::map<std::string, Setter> s;
    s["experiment.dataset"] = [](auto& c, auto& v) { c.dataset = v; };
    s["experiment.dataset_path"] = [](auto& c, auto& v) { c.dataset_path = v; };
    s["experiment.data_dir"] = [](auto& c, auto& v) { c.data_dir = v; };
    s["experiment.datasets"] = [](auto& c, auto& v) { c.datasets = split_list(v); };
    s["experiment.method"] = [](auto& c, auto& v) { c.method = v; };
    s["experiment.methods"] = [](auto& c, auto& v) { c.methods = split_list(v); };
    s["experiment.hidden"] = [](auto& c, auto& v) {
      c.hidden.clear();
      for (const auto& h : split_list(v)) c.hidden.push_back(to_size(h));
    };
    s["experiment.seeds"] = [](auto& c, auto& v) {
      c.seeds.clear();
      for (const auto& h : split_list(v)) c.seeds.push_back(to_size(h));
    };
    s["experiment.out"] = [](auto& c, auto& v) { c.out_dir = v; };
    s["experiment.ratios"] = [](auto& c, auto& v) {
      const auto r = to_reals(v);
      if (r.size() != 3) throw std::invalid_argument("expected three ratios");
      c.ratios = {r[0], r[1], r[2]};
    };
    s["experiment.kfold"] = [](auto& c, auto& v) { c.kfold = to_size(v); };
    s["experiment.fold"] = [](auto& c, auto& v) { c.fold = to_size(v); };
    s["experiment.ece_bins"] = [](auto& c, auto& v) { c.ece_bins = to_size(v); };
    s["experiment.eval_samples"] = [](auto& c, auto& v) { c.eval_samples = to_size(v); };
    s["experiment.threads"] = [](auto& c, auto& v) { c.threads = static_cast<int>(to_size(v)); };
    s["experiment.repetitions"] = [](auto& c, auto& v) { c.repetitions = to_size(v); };

    s["classical.epochs"] = [](auto& c, auto& v) { c.classical.epochs = to_size(v); };
    s["classical.batch_size"] = [](auto& c, auto& v) { c.classical.batch_size = to_size(v); };
    s["classical.learning_rate"] = [](auto& c, auto& v) { c.classical.learning_rate = to_real(v); };
    s["classical.momentum"] = [](auto& c, auto& v) { c.classical.momentum = to_real(v); };
    s["classical.l2"] = [](auto& c, auto& v) { c.classical.l2 = to_real(v); };
    s["classical.dropout"] = [](auto& c, auto& v) { c.classical.dropout = to_real(v); };
    s["classical.early_stopping"] = [](auto& c, auto& v) { c.classical.early_stopping = to_bool(v); };
    s["classical.patience"] = [](auto& c, auto& v) { c.classical.patience = to_size(v); };

    add_bbb_keys(s, "vi", &ExperimentConfig::vi);
    add_boost_keys(s, "bbnn", [](ExperimentConfig& c) -> BoostConfig& { return c.bbnn; });
    s["bbnn.init_spread"] = [](auto& c, auto& v) { c.bbnn.network_init_spread = to_real(v); };

    add_boost_keys(s, "toy", [](ExperimentConfig& c) -> BoostConfig& { return c.toy.boost; });
    s["toy.target"] = [](auto& c, auto& v) { c.toy.target = v; };
    s["toy.seed"] = [](auto& c, auto& v) { c.toy.boost.seed = to_size(v); };
    s["toy.init_mean"] = [](auto& c, auto& v) { c.toy.boost.init_mean = to_real(v); };
    s["toy.init_sigma"] = [](auto& c, auto& v) { c.toy.boost.init_sigma = to_real(v); };
    s["toy.iterations"] = [](auto& c, auto& v) { c.toy.boost.component.iterations = to_size(v); };
    s["toy.samples"] = [](auto& c, auto& v) { c.toy.boost.component.samples = to_size(v); };
    s["toy.learning_rate"] = [](auto& c, auto& v) { c.toy.boost.component.learning_rate = to_real(v); };
    s["toy.restarts"] = [](auto& c, auto& v) { c.toy.boost.component.restarts = to_size(v); };
    s["toy.init_spread"] = [](auto& c, auto& v) { c.toy.boost.component.init_spread = to_real(v); };
    s["toy.component_sigma"] = [](auto& c, auto& v) { c.toy.boost.component.init_sigma = to_real(v); };
    return s;
  }();
  return m;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

const char* beta_mode_name(BetaMode m) { return m == BetaMode::kConstant ? "constant" : "one_over_batches"; }
const char* lambda_rule_name(LambdaRule r) {
  return r == LambdaRule::kFixedSchedule ? "fixed_schedule" : "line_search";
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> seen;
  std::string section = "experiment";
  std::istringstream is(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = "line " + std::to_string(no) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') {
        errors.push_back(where + "malformed section header '" + t + "'");
        continue;
      }
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      static const std::vector<std::string> known = {"experiment", "classical", "vi", "bbnn", "toy"};
      if (std::find(known.begin(), known.end(), section) == known.end())
        errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value, got '" + t + "'");
      continue;
    }
    const std::string key = section + "." + trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (auto s = seen.find(key); s != seen.end()) {
      errors.push_back(where + "duplicate key '" + key + "' (first set on line " + std::to_string(s->second) + ")");
      continue;
    }
    seen[key] = no;
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      errors.push_back(where + key + ": " + e.what());
    }
  }
  if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path));
}

namespace {

json bbb_json(const BbbConfig& c) {
  return {{"epochs", c.epochs},           {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"beta_mode", beta_mode_name(c.beta_mode)}, {"beta", c.beta},
          {"effective_beta", effective_beta(c)}, {"train_samples", c.train_samples},
          {"eval_samples", c.eval_samples}, {"val_samples", c.val_samples},
          {"early_stopping", c.early_stopping}, {"patience", c.patience},
          {"init_mean_std", c.init_mean_std}, {"init_sigma", c.init_sigma}};
}

json boost_json(const BoostConfig& c) {
  return {{"rounds", c.rounds},           {"lambda_rule", lambda_rule_name(c.lambda_rule)},
          {"grid", c.grid},               {"entropy_reg", c.entropy_reg},
          {"elbo_samples", c.elbo_samples}, {"reject_se", c.reject_se}};
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json toy = boost_json(c.toy.boost);
  toy["target"] = c.toy.target;
  toy["seed"] = c.toy.boost.seed;
  toy["init_mean"] = c.toy.boost.init_mean;
  toy["init_sigma"] = c.toy.boost.init_sigma;
  toy["iterations"] = c.toy.boost.component.iterations;
  toy["samples"] = c.toy.boost.component.samples;
  toy["learning_rate"] = c.toy.boost.component.learning_rate;
  toy["restarts"] = c.toy.boost.component.restarts;
  toy["init_spread"] = c.toy.boost.component.init_spread;
  toy["component_sigma"] = c.toy.boost.component.init_sigma;
  json bbnn = boost_json(c.bbnn);
  bbnn["init_spread"] = c.bbnn.network_init_spread;
  return {{"experiment",
           {{"dataset", c.dataset},
            {"dataset_path", c.dataset_path.string()},
            {"data_dir", c.data_dir.string()},
            {"datasets", c.datasets},
            {"method", c.method},
            {"methods", c.methods},
            {"hidden", c.hidden},
            {"seeds", c.seeds},
            {"out", c.out_dir.string()},
            {"ratios", c.ratios},
            {"kfold", c.kfold},
            {"fold", c.fold},
            {"ece_bins", c.ece_bins},
            {"eval_samples", c.eval_samples},
            {"threads", c.threads},
            {"repetitions", c.repetitions}}},
          {"classical",
           {{"epochs", c.classical.epochs},
            {"batch_size", c.classical.batch_size},
            {"learning_rate", c.classical.learning_rate},
            {"momentum", c.classical.momentum},
            {"l2", c.classical.l2},
            {"dropout", c.classical.dropout},
            {"early_stopping", c.classical.early_stopping},
            {"patience", c.classical.patience}}},
          {"vi", bbb_json(c.vi)},
          {"bbnn", bbnn},
          {"toy", toy}};
}

void validate(const ExperimentConfig& c) {
  std::vector<std::string> e;
  static const std::vector<std::string> methods = {"classical", "vi", "bbnn"};
  auto known_method = [&](const std::string& m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };
  if (!known_method(c.method)) e.push_back("method must be classical, vi or bbnn (got '" + c.method + "')");
  if (c.methods.empty()) e.push_back("methods list is empty");
  for (const auto& m : c.methods)
    if (!known_method(m)) e.push_back("unknown method '" + m + "' in methods list");
  for (const auto& d : c.datasets) {
    try {
      find_dataset(d);
    } catch (const ConfigError& err) {
      e.push_back(err.what());
    }
  }
  if (c.seeds.empty()) e.push_back("seeds list is empty");
  double rs = 0.0;
  for (double r : c.ratios) {
    if (!(r > 0.0)) e.push_back("split ratios must be positive");
    rs += r;
  }
  if (std::abs(rs - 1.0) > 1e-9) e.push_back("split ratios must sum to 1");
  if (c.kfold != 0 && c.kfold < 3) e.push_back("kfold must be 0 or at least 3");
  if (c.kfold != 0 && c.fold >= c.kfold) e.push_back("fold must be below kfold");
  if (c.ece_bins < 1) e.push_back("ece_bins must be >= 1");
  if (c.eval_samples < 1) e.push_back("eval_samples must be >= 1");
  if (c.threads < 1) e.push_back("threads must be >= 1");
  if (c.repetitions < 1) e.push_back("repetitions must be >= 1");
  for (std::size_t h : c.hidden)
    if (h == 0) e.push_back("hidden layer widths must be positive");
  if (c.classical.batch_size < 1) e.push_back("classical.batch_size must be >= 1");
  if (!(c.classical.learning_rate > 0.0)) e.push_back("classical.learning_rate must be > 0");
  if (c.classical.l2 < 0.0) e.push_back("classical.l2 must be >= 0");
  if (c.classical.dropout < 0.0 || c.classical.dropout >= 1.0) e.push_back("classical.dropout must lie in [0, 1)");
  if (c.vi.batch_size < 1) e.push_back("vi.batch_size must be >= 1");
  if (!(c.vi.learning_rate > 0.0)) e.push_back("vi.learning_rate must be > 0");
  if (c.vi.train_samples < 1) e.push_back("vi.train_samples must be >= 1");
  if (c.vi.val_samples < 1) e.push_back("vi.val_samples must be >= 1");
  if (c.vi.beta_mode == BetaMode::kConstant && !(c.vi.beta > 0.0)) e.push_back("vi.beta must be > 0");
  if (!(c.vi.init_sigma > 0.0)) e.push_back("vi.init_sigma must be > 0");
  for (const BoostConfig* b : {&c.bbnn, &c.toy.boost}) {
    const std::string sec = b == &c.bbnn ? "bbnn" : "toy";
    if (b->rounds < 1) e.push_back(sec + ".rounds must be >= 1");
    if (b->entropy_reg < 0.0) e.push_back(sec + ".entropy_reg must be >= 0");
    if (b->elbo_samples < 2) e.push_back(sec + ".elbo_samples must be >= 2");
    for (double g : b->grid)
      if (!(g > 0.0 && g <= 1.0)) e.push_back(sec + ".grid values must lie in (0, 1]");
  }
  const auto names = toy_target_names();
  if (std::find(names.begin(), names.end(), c.toy.target) == names.end())
    e.push_back("unknown toy target '" + c.toy.target + "' (available: " + join(names, ", ") + ")");
  if (!e.empty()) throw ConfigError("invalid config:\n  " + join(e, "\n  "));
}

fs::path resolve_dataset_path(const ExperimentConfig& cfg, const std::string& name) {
  const DatasetInfo& info = find_dataset(name);
  if (!cfg.dataset_path.empty() && name == cfg.dataset) return cfg.dataset_path;
  if (!cfg.data_dir.empty()) return cfg.data_dir / info.file_name;
  if (const char* env = std::getenv("BBNN_DATA_DIR"); env != nullptr && *env != '\0')
    return fs::path(env) / info.file_name;
  return fs::path("data") / info.file_name;
}

// ---------------------------------------------------------------------------
// Dumps

std::string predictions_csv(std::span<const std::size_t> ids, std::span<const int> labels,
                            const Matrix& probs) {
  std::ostringstream os;
  os << "sample_id,label";
  for (std::size_t k = 0; k < probs.cols(); ++k) os << ",p_" << k;
  os << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    os << ids[i] << ',' << labels[i];
    for (double p : probs.row(i)) os << ',' << format_double(p);
    os << '\n';
  }
  return os.str();
}

std::string draws_csv(std::span<const std::size_t> ids, const PredictiveSamples& ps) {
  std::ostringstream os;
  const std::size_t k = ps.mean.cols();
  os << "sample_id,draw,weight";
  for (std::size_t c = 0; c < k; ++c) os << ",p_" << c;
  os << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ps.draws.size(); ++j) {
      os << ids[i] << ',' << j << ',' << format_double(ps.weights[j]);
      for (double p : ps.draws[j].row(i)) os << ',' << format_double(p);
      os << '\n';
    }
  return os.str();
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Runs

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Model {
  std::string method;
  MlpArchitecture arch;
  Vector weights;
  GaussianMixture mixture;  // vi: one component

  PredictiveSamples predict(const Matrix& x, std::size_t s, RngStream& rng, int threads) const {
    if (method == "classical") {
      PredictiveSamples p;
      p.mean = predict_proba(arch, weights, x);
      return p;
    }
    if (method == "vi") return predictive_samples(mixture.components().front(), arch, x, s, rng, threads);
    return mixture_predictive_samples(mixture, arch, x, s, rng, threads);
  }

  json to_checkpoint() const {
    json j = {{"method", method}, {"architecture", to_json(arch)}};
    if (method == "classical")
      j["weights"] = weights;
    else if (method == "vi")
      j["posterior"] = to_json(mixture.components().front());
    else
      j["posterior"] = to_json(mixture);
    return j;
  }

  static Model from_checkpoint(const json& j) {
    Model m;
    m.method = j.at("method").get<std::string>();
    m.arch = architecture_from_json(j.at("architecture"));
    if (m.method == "classical")
      m.weights = j.at("weights").get<Vector>();
    else if (m.method == "vi")
      m.mixture = GaussianMixture(gaussian_from_json(j.at("posterior")));
    else if (m.method == "bbnn")
      m.mixture = mixture_from_json(j.at("posterior"));
    else
      throw ConfigError("checkpoint has unknown method '" + m.method + "'");
    return m;
  }
};

Split make_split(const std::vector<int>& labels, std::size_t k, const ExperimentConfig& cfg,
                 std::uint64_t seed) {
  if (cfg.kfold != 0) return stratified_kfold(labels, k, cfg.kfold, seed).at(cfg.fold);
  return stratified_split(labels, k, cfg.ratios, seed);
}

json split_json(const Split& s, const ExperimentConfig& cfg) {
  return {{"seed", s.seed}, {"ratios", s.ratios}, {"kfold", cfg.kfold}, {"fold", cfg.fold},
          {"sizes", {s.train.size(), s.val.size(), s.test.size()}}};
}

// Evaluates val and test parts, writes dumps, returns the "parts" object and
// the test-set inference time.
json evaluate_parts(const Model& model, const Matrix& features, const std::vector<int>& labels,
                    const Split& split, std::uint64_t seed, const ExperimentConfig& cfg,
                    const fs::path& dir, double& test_inference_seconds) {
  json parts = json::object();
  const std::pair<const char*, const std::vector<std::size_t>*> list[] = {{"val", &split.val},
                                                                          {"test", &split.test}};
  std::uint64_t stream = 0xE7A10ull;
  for (const auto& [name, rows] : list) {
    RngStream rng(seed, stream++);
    if (rows->empty()) continue;
    const Matrix x = features.select_rows(*rows);
    std::vector<int> y(rows->size());
    for (std::size_t i = 0; i < rows->size(); ++i) y[i] = labels[(*rows)[i]];
    const auto t0 = Clock::now();
    PredictiveSamples ps = model.predict(x, cfg.eval_samples, rng, cfg.threads);
    const double secs = since(t0);
    if (std::string(name) == "test") test_inference_seconds = secs;

    const PredictionSet set{ps.mean, y};
    const CalibrationReport cal = ece(set, cfg.ece_bins);
    const std::string pred_file = std::string("predictions_") + name + ".csv";
    write_file_atomic(dir / pred_file, predictions_csv(*rows, y, ps.mean));
    {
      std::ostringstream os;
      write_bins_csv(os, cal.bins);
      write_file_atomic(dir / (std::string("calibration_") + name + ".csv"), os.str());
    }
    json part = {{"n", rows->size()},
                 {"accuracy", cal.accuracy},
                 {"accuracy_percent", 100.0 * cal.accuracy},
                 {"nll", cal.nll},
                 {"ece", cal.ece},
                 {"ece_bins", cfg.ece_bins},
                 {"bins", to_json(cal)["bins"]},
                 {"predictions", pred_file},
                 {"inference_seconds", secs}};
    if (ps.draws.size() >= 2) {
      const std::string draw_file = std::string("draws_") + name + ".csv";
      write_file_atomic(dir / draw_file, draws_csv(*rows, ps));
      const auto dec = decompose_samples(ps.draws, ps.weights);
      double al = 0.0, ep = 0.0;
      for (const auto& d : dec) {
        al += d.aleatoric_total;
        ep += d.epistemic_total;
      }
      part["draws"] = draw_file;
      part["draw_count"] = ps.draws.size();
      part["decomposition"] = {{"aleatoric_mean", al / static_cast<double>(dec.size())},
                               {"epistemic_mean", ep / static_cast<double>(dec.size())}};
    } else {
      part["decomposition"] = nullptr;
    }
    parts[name] = part;
  }
  return parts;
}

std::string write_trace(const std::vector<EpochRecord>& t) {
  std::ostringstream os;
  write_train_trace_csv(os, t);
  return os.str();
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg, const std::string& dataset,
                         const std::string& method, std::uint64_t seed, const fs::path& dir) {
  const DatasetInfo& info = find_dataset(dataset);
  const fs::path path = resolve_dataset_path(cfg, dataset);
  const RawTable raw = load_registered(info, path);
  const Split split = make_split(raw.labels, raw.class_names.size(), cfg, seed);
  const Dataset data = preprocess(raw, split.train, dataset);

  Model model;
  model.method = method;
  model.arch.layer_sizes.push_back(data.features.cols());
  for (std::size_t h : cfg.hidden) model.arch.layer_sizes.push_back(h);
  model.arch.layer_sizes.push_back(data.class_count);
  model.arch.validate();
  fs::create_directories(dir);

  json training;
  const auto t0 = Clock::now();
  if (method == "classical") {
    ClassicalConfig c = cfg.classical;
    c.seed = seed;
    ClassicalResult r = train_classical(model.arch, data, split, c);
    model.weights = std::move(r.weights);
    training = {{"best_epoch", r.best_epoch}, {"epochs_run", r.trace.size()},
                {"stopped_early", r.stopped_early}, {"early_stopping", c.early_stopping}};
    write_file_atomic(dir / "trace.csv", write_trace(r.trace));
  } else if (method == "vi") {
    BbbConfig c = cfg.vi;
    c.seed = seed;
    c.threads = cfg.threads;
    BbbResult r = train_bbb(model.arch, data, split, c);
    model.mixture = GaussianMixture(r.posterior);
    training = {{"best_epoch", r.best_epoch}, {"epochs_run", r.trace.size()},
                {"stopped_early", r.stopped_early}, {"early_stopping", c.early_stopping},
                {"final_kl", kl_diag_to_std_normal(r.posterior)}};
    write_file_atomic(dir / "trace.csv", write_trace(r.trace));
  } else if (method == "bbnn") {
    BoostConfig b = cfg.bbnn;
    b.seed = seed;
    b.inner = cfg.vi;
    b.inner.seed = seed;
    b.inner.threads = cfg.threads;
    BbnnResult r = train_bbnn(model.arch, data, split, b);
    model.mixture = r.mixture;
    std::size_t accepted = 0;
    for (const auto& rec : r.trace) accepted += rec.accepted ? 1 : 0;
    training = {{"rounds", b.rounds}, {"accepted_rounds", accepted},
                {"components", r.mixture.size()}, {"weights", r.mixture.weights()},
                {"round0_best_epoch", r.round0.best_epoch}, {"early_stopping", b.inner.early_stopping}};
    std::ostringstream os;
    write_boost_trace_csv(os, r.trace);
    write_file_atomic(dir / "boost_trace.csv", os.str());
    for (std::size_t k = 0; k < r.component_traces.size(); ++k)
      write_file_atomic(dir / ("trace_round_" + std::to_string(k) + ".csv"), write_trace(r.component_traces[k]));
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  RunReport rep;
  rep.train_seconds = since(t0);
  rep.dir = dir;

  json parts = evaluate_parts(model, data.features, data.labels, split, seed, cfg, dir, rep.inference_seconds);

  json ckpt = model.to_checkpoint();
  ckpt["format"] = "bbnn-checkpoint";
  ckpt["version"] = 1;
  ckpt["dataset"] = dataset;
  ckpt["seed"] = seed;
  ckpt["split"] = split_json(split, cfg);
  ckpt["manifest"] = data.manifest;
  write_file_atomic(dir / "checkpoint.json", ckpt.dump(1));
  write_file_atomic(dir / "manifest.json", data.manifest.dump(2));

  rep.json = {{"dataset", dataset},
              {"dataset_path", path.string()},
              {"method", method},
              {"seed", seed},
              {"software_version", kSoftwareVersion},
              {"architecture", model.arch.describe()},
              {"split", split_json(split, cfg)},
              {"parts", parts},
              {"training", training},
              {"timing", {{"train_seconds", rep.train_seconds}, {"inference_seconds", rep.inference_seconds}}},
              {"warnings", raw.warnings},
              {"config", to_json(cfg)}};
  write_file_atomic(dir / "report.json", rep.json.dump(2));
  return rep;
}

std::vector<RunReport> cmd_train(const ExperimentConfig& cfg) {
  validate(cfg);
  std::vector<std::string> errors;
  if (cfg.dataset.empty()) errors.push_back("no dataset given (--dataset or experiment.dataset)");
  else {
    try {
      const fs::path p = resolve_dataset_path(cfg, cfg.dataset);
      if (!fs::exists(p)) errors.push_back("dataset file not found: " + p.string());
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
  std::vector<RunReport> out;
  for (std::uint64_t seed : cfg.seeds)
    out.push_back(run_experiment(cfg, cfg.dataset, cfg.method, seed,
                                 cfg.out_dir / cfg.dataset / cfg.method / ("seed_" + std::to_string(seed))));
  return out;
}

RunReport cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& dir) {
  validate(cfg);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  json ck;
  try {
    ck = json::parse(read_file(checkpoint));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + checkpoint.string() + " is not valid JSON: " + e.what());
  }
  const Model model = Model::from_checkpoint(ck);
  const std::string dataset = ck.at("dataset");
  const std::uint64_t seed = ck.at("seed");
  const DatasetInfo& info = find_dataset(dataset);
  const fs::path path = resolve_dataset_path(cfg, dataset);
  const RawTable raw = load_registered(info, path);
  ExperimentConfig c = cfg;
  const json& sp = ck.at("split");
  c.ratios = sp.at("ratios").get<std::array<double, 3>>();
  c.kfold = sp.at("kfold");
  c.fold = sp.at("fold");
  const Split split = make_split(raw.labels, raw.class_names.size(), c, sp.at("seed"));
  const Matrix features = apply_manifest(raw, ck.at("manifest"));
  if (features.cols() != model.arch.input_dim())
    throw ConfigError("checkpoint architecture expects " + std::to_string(model.arch.input_dim()) +
                      " features, data gives " + std::to_string(features.cols()));
  fs::create_directories(dir);
  RunReport rep;
  rep.dir = dir;
  json parts = evaluate_parts(model, features, raw.labels, split, seed, c, dir, rep.inference_seconds);
  rep.json = {{"dataset", dataset},
              {"dataset_path", path.string()},
              {"method", model.method},
              {"seed", seed},
              {"software_version", kSoftwareVersion},
              {"architecture", model.arch.describe()},
              {"split", split_json(split, c)},
              {"parts", parts},
              {"evaluated_from", checkpoint.string()},
              {"timing", {{"train_seconds", nullptr}, {"inference_seconds", rep.inference_seconds}}},
              {"warnings", raw.warnings},
              {"config", to_json(c)}};
  write_file_atomic(dir / "report.json", rep.json.dump(2));
  return rep;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

std::vector<std::string> table_datasets(const ExperimentConfig& cfg) {
  if (!cfg.datasets.empty()) return cfg.datasets;
  if (!cfg.dataset.empty()) return {cfg.dataset};
  std::vector<std::string> out;
  for (const auto& d : dataset_registry()) out.push_back(d.name);
  return out;
}

std::string cell(const std::vector<double>& v, bool absent) {
  if (absent || v.empty()) return "absent,absent";
  const auto [m, s] = mean_std(v);
  return format_double(m) + "," + format_double(s);
}

}  // namespace

TablesResult cmd_reproduce_tables(const ExperimentConfig& cfg) {
  validate(cfg);
  TablesResult res;
  res.cells = json::object();
  const auto datasets = table_datasets(cfg);
  static const std::vector<std::string> order = {"classical", "vi", "bbnn"};
  std::vector<std::string> methods;
  for (const auto& m : order)
    if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) methods.push_back(m);

  struct Cell {
    bool absent = true;
    std::vector<double> acc, nll, ece, train, infer;
  };
  std::map<std::string, std::map<std::string, Cell>> cells;
  for (const auto& ds : datasets) {
    const fs::path p = resolve_dataset_path(cfg, ds);
    const bool present = fs::exists(p);
    for (const auto& m : methods) {
      Cell& c = cells[ds][m];
      c.absent = !present;
      json per_seed = json::array();
      if (present) {
        for (std::uint64_t seed : cfg.seeds) {
          const RunReport r = run_experiment(cfg, ds, m, seed,
                                             cfg.out_dir / ds / m / ("seed_" + std::to_string(seed)));
          const json& t = r.json.at("parts").at("test");
          c.acc.push_back(t.at("accuracy_percent"));
          c.nll.push_back(t.at("nll"));
          c.ece.push_back(t.at("ece"));
          c.train.push_back(r.train_seconds);
          c.infer.push_back(r.inference_seconds);
          per_seed.push_back({{"seed", seed}, {"report", (r.dir / "report.json").string()},
                              {"accuracy_percent", c.acc.back()}, {"nll", c.nll.back()},
                              {"ece", c.ece.back()}, {"train_seconds", c.train.back()},
                              {"inference_seconds", c.infer.back()}});
        }
        res.cells[ds][m] = per_seed;
      } else {
        res.cells[ds][m] = "absent";
      }
    }
  }

  std::ostringstream t2, t3, t4;
  t2 << "dataset";
  for (const auto& m : methods) t2 << ',' << m << "_accuracy_mean," << m << "_accuracy_std";
  t2 << '\n';
  std::vector<std::string> unc;
  for (const auto& m : methods)
    if (m != "classical") unc.push_back(m);
  t3 << "dataset";
  for (const auto& m : unc) t3 << ',' << m << "_nll_mean," << m << "_nll_std";
  for (const auto& m : unc) t3 << ',' << m << "_ece_mean," << m << "_ece_std";
  t3 << '\n';
  t4 << "dataset,model,train_seconds_mean,train_seconds_std,inference_seconds_mean,inference_seconds_std\n";
  for (const auto& ds : datasets) {
    t2 << ds;
    for (const auto& m : methods) t2 << ',' << cell(cells[ds][m].acc, cells[ds][m].absent);
    t2 << '\n';
    t3 << ds;
    for (const auto& m : unc) t3 << ',' << cell(cells[ds][m].nll, cells[ds][m].absent);
    for (const auto& m : unc) t3 << ',' << cell(cells[ds][m].ece, cells[ds][m].absent);
    t3 << '\n';
    for (const auto& m : methods)
      t4 << ds << ',' << m << ',' << cell(cells[ds][m].train, cells[ds][m].absent) << ','
         << cell(cells[ds][m].infer, cells[ds][m].absent) << '\n';
  }
  res.accuracy_csv = cfg.out_dir / "accuracy.csv";
  res.uncertainty_csv = cfg.out_dir / "uncertainty.csv";
  res.timing_csv = cfg.out_dir / "timing.csv";
  write_file_atomic(res.accuracy_csv, t2.str());
  write_file_atomic(res.uncertainty_csv, t3.str());
  write_file_atomic(res.timing_csv, t4.str());
  write_file_atomic(cfg.out_dir / "tables.json", res.cells.dump(2));
  return res;
}

// ---------------------------------------------------------------------------
// Toy boosting and benchmarks

ToyResult cmd_boost_toy(const ToyConfig& cfg, const fs::path& out_dir) {
  const TargetDensity target = toy_target(cfg.target);
  if (cfg.boost.rounds < 1) throw ConfigError("boost-toy: rounds must be >= 1");
  ToyResult res;
  res.boost = boost(target, target.dim, cfg.boost);
  fs::create_directories(out_dir);
  std::ostringstream kl;
  kl << "round,kl\n";
  for (std::size_t i = 0; i < res.boost.history.size(); ++i) {
    const GaussianMixture& m = res.boost.history[i];
    res.kl.push_back(quadrature_kl(m, target));
    kl << i << ',' << format_double(res.kl.back()) << '\n';
    std::ostringstream os;
    write_density_csv(os, m, target);
    const fs::path f = out_dir / ("density_round_" + std::to_string(i) + ".csv");
    write_file_atomic(f, os.str());
    res.density_files.push_back(f);
  }
  write_file_atomic(out_dir / "kl_trace.csv", kl.str());
  std::ostringstream bt;
  write_boost_trace_csv(bt, res.boost.trace);
  write_file_atomic(out_dir / "boost_trace.csv", bt.str());
  write_file_atomic(out_dir / "mixture.json", to_json(res.boost.mixture).dump(2));
  return res;
}

json cmd_bench(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto datasets = table_datasets(cfg);
  json out = {{"repetitions", cfg.repetitions}, {"seed", cfg.seeds.front()},
              {"software_version", kSoftwareVersion}, {"datasets", json::object()}};
  if (cfg.repetitions < 2) out["note"] = "no variance estimate (single repetition)";
  for (const auto& ds : datasets) {
    const fs::path p = resolve_dataset_path(cfg, ds);
    if (!fs::exists(p)) {
      out["datasets"][ds] = "absent";
      continue;
    }
    for (const auto& m : cfg.methods) {
      std::vector<double> tr, inf;
      for (std::size_t r = 0; r < cfg.repetitions; ++r) {
        const RunReport rep = run_experiment(cfg, ds, m, cfg.seeds.front(),
                                             cfg.out_dir / "bench" / ds / m / ("rep_" + std::to_string(r)));
        tr.push_back(rep.train_seconds);
        inf.push_back(rep.inference_seconds);
      }
      json e = {{"train_seconds_median", median(tr)}, {"inference_seconds_median", median(inf)},
                {"train_seconds", tr}, {"inference_seconds", inf}};
      if (cfg.repetitions < 2) e["variance"] = "no variance estimate";
      out["datasets"][ds][m] = e;
    }
  }
  write_file_atomic(cfg.out_dir / "bench.json", out.dump(2));
  return out;
}

// ---------------------------------------------------------------------------
// Verification

namespace {

struct CsvRows {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvRows read_csv_rows(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("missing dump " + p.string());
  CsvRows out;
  std::istringstream is(read_file(p));
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string c;
    std::istringstream ls(line);
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (first) {
      out.header = cells;
      first = false;
    } else {
      out.rows.push_back(std::move(cells));
    }
  }
  return out;
}

}  // namespace

VerifyResult verify_report(const fs::path& report_path) {
  if (!fs::exists(report_path)) throw ConfigError("report not found: " + report_path.string());
  const json rep = json::parse(read_file(report_path));
  const fs::path dir = report_path.parent_path();
  VerifyResult res;
  auto check = [&](bool eq, const std::string& what) {
    ++res.checked;
    if (!eq) {
      res.ok = false;
      res.mismatches.push_back(what);
    }
  };
  for (const auto& [name, part] : rep.at("parts").items()) {
    const CsvRows pr = read_csv_rows(dir / part.at("predictions").get<std::string>());
    const std::size_t k = pr.header.size() - 2;
    PredictionSet set;
    set.probs = Matrix(pr.rows.size(), k);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < pr.rows.size(); ++i) {
      ids.push_back(pr.rows[i][0]);
      set.labels.push_back(static_cast<int>(to_size(pr.rows[i][1])));
      for (std::size_t c = 0; c < k; ++c) set.probs(i, c) = parse_double(pr.rows[i][2 + c]);
    }
    const CalibrationReport cal = ece(set, part.at("ece_bins").get<std::size_t>());
    check(cal.accuracy == part.at("accuracy").get<double>(), name + ".accuracy");
    check(100.0 * cal.accuracy == part.at("accuracy_percent").get<double>(), name + ".accuracy_percent");
    check(cal.nll == part.at("nll").get<double>(), name + ".nll");
    check(cal.ece == part.at("ece").get<double>(), name + ".ece");
    check(part.at("n").get<std::size_t>() == set.labels.size(), name + ".n");
    const json& bins = part.at("bins");
    check(bins.size() == cal.bins.size(), name + ".bins.size");
    for (std::size_t b = 0; b < std::min(bins.size(), cal.bins.size()); ++b) {
      const std::string w = name + ".bins[" + std::to_string(b) + "]";
      check(bins[b].at("count").get<std::size_t>() == cal.bins[b].count, w + ".count");
      check(bins[b].at("acc").get<double>() == cal.bins[b].accuracy, w + ".acc");
      check(bins[b].at("conf").get<double>() == cal.bins[b].confidence, w + ".conf");
      check(bins[b].at("lo").get<double>() == cal.bins[b].lo, w + ".lo");
      check(bins[b].at("hi").get<double>() == cal.bins[b].hi, w + ".hi");
    }
    if (part.contains("draws")) {
      const CsvRows dr = read_csv_rows(dir / part.at("draws").get<std::string>());
      const std::size_t s = part.at("draw_count").get<std::size_t>();
      check(dr.rows.size() == s * ids.size(), name + ".draws.rows");
      if (dr.rows.size() != s * ids.size()) continue;
      std::vector<Matrix> draws(s, Matrix(ids.size(), k));
      Vector weights(s);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const auto& row = dr.rows[i * s + j];
          if (row[0] != ids[i]) check(false, name + ".draws.sample_id");
          weights[j] = parse_double(row[2]);
          for (std::size_t c = 0; c < k; ++c) draws[j](i, c) = parse_double(row[3 + c]);
        }
      Matrix mean(ids.size(), k);
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t e = 0; e < mean.data().size(); ++e) mean.data()[e] += weights[j] * draws[j].data()[e];
      check(mean.data() == set.probs.data(), name + ".predictive_mean");
      const auto dec = decompose_samples(draws, weights);
      double al = 0.0, ep = 0.0;
      for (const auto& d : dec) {
        al += d.aleatoric_total;
        ep += d.epistemic_total;
      }
      const json& dj = part.at("decomposition");
      check(al / static_cast<double>(dec.size()) == dj.at("aleatoric_mean").get<double>(),
            name + ".decomposition.aleatoric_mean");
      check(ep / static_cast<double>(dec.size()) == dj.at("epistemic_mean").get<double>(),
            name + ".decomposition.epistemic_mean");
    }
  }
  return res;
}

}  // namespace bbnn
