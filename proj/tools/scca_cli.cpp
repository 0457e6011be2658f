// Command-line harness: toy training and evaluation on synthetic or saved
// episodes, pseudo-mask tooling, gradient checking, and the analytic cost
// model. Exit codes: 0 success, 1 validation failure, 2 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "scca/config.hpp"
#include "scca/cost.hpp"
#include "scca/gradcheck.hpp"
#include "scca/io.hpp"
#include "scca/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CliOptions {
  scca::RunConfig cfg;
  std::string checkpoint;
  std::string config_file;
  std::map<std::string, CLI::Option*> flags;  // config key -> option

  bool flag_given(const std::string& key) const {
    const auto it = flags.find(key);
    return it != flags.end() && it->second->count() > 0;
  }
};

void add_common_options(CLI::App* cmd, CliOptions& opt) {
  auto& f = opt.flags;
  f["blocks"] = cmd->add_option("--blocks", opt.cfg.blocks, "number of attention blocks");
  f["window"] = cmd->add_option("--window", opt.cfg.window, "window size K");
  f["heads"] = cmd->add_option("--heads", opt.cfg.heads, "attention heads");
  f["dim"] = cmd->add_option("--dim", opt.cfg.dim, "embedding dimension");
  f["mlp-ratio"] = cmd->add_option("--mlp-ratio", opt.cfg.mlp_ratio, "FFN hidden ratio");
  f["shots"] = cmd->add_option("--shots", opt.cfg.shots, "support shots k");
  f["seed"] = cmd->add_option("--seed", opt.cfg.seed, "random seed");
  f["epochs"] = cmd->add_option("--epochs", opt.cfg.epochs, "training epochs");
  f["lr"] = cmd->add_option("--lr", opt.cfg.lr, "learning rate");
  f["dtype"] = cmd->add_option("--dtype", opt.cfg.dtype, "f32 or f64");
  f["pma-threshold"] =
      cmd->add_option("--pma-threshold", opt.cfg.pma_threshold, "binarization threshold");
  f["episodes"] = cmd->add_option("--episodes", opt.cfg.episodes,
                                  "episode directory or synth:<spec>");
  f["out"] = cmd->add_option("--out", opt.cfg.out, "output directory");
  cmd->add_option("--config", opt.config_file, "key=value config file");
}

// Config-file values fill in everything the command line left at its
// default: flags > file > defaults.
void apply_config_file(CliOptions& opt) {
  if (opt.config_file.empty()) return;
  std::ifstream in(opt.config_file);
  if (!in) throw scca::IoError("cannot open config file " + opt.config_file);
  auto& cfg = opt.cfg;
  std::map<std::string, std::function<void(const std::string&)>> setters{
      {"blocks", [&](const std::string& v) { cfg.blocks = std::stoull(v); }},
      {"window", [&](const std::string& v) { cfg.window = std::stoull(v); }},
      {"heads", [&](const std::string& v) { cfg.heads = std::stoull(v); }},
      {"dim", [&](const std::string& v) { cfg.dim = std::stoull(v); }},
      {"mlp-ratio", [&](const std::string& v) { cfg.mlp_ratio = std::stoull(v); }},
      {"shots", [&](const std::string& v) { cfg.shots = std::stoull(v); }},
      {"seed", [&](const std::string& v) { cfg.seed = std::stoull(v); }},
      {"epochs", [&](const std::string& v) { cfg.epochs = std::stoull(v); }},
      {"lr", [&](const std::string& v) { cfg.lr = std::stod(v); }},
      {"dtype", [&](const std::string& v) { cfg.dtype = v; }},
      {"pma-threshold", [&](const std::string& v) { cfg.pma_threshold = std::stod(v); }},
      {"episodes", [&](const std::string& v) { cfg.episodes = v; }},
      {"out", [&](const std::string& v) { cfg.out = v; }},
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw scca::ContractError(opt.config_file + ":" + std::to_string(lineno) +
                                ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    for (auto& ch : key)
      if (ch == '_') ch = '-';
    const std::string value = line.substr(eq + 1);
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw scca::ContractError(opt.config_file + ":" + std::to_string(lineno) +
                                ": unknown key '" + key + "'");
    }
    if (opt.flag_given(key)) continue;  // explicit flag wins
    try {
      it->second(value);
    } catch (const scca::ValidationError&) {
      throw;
    } catch (...) {
      throw scca::ContractError(opt.config_file + ":" + std::to_string(lineno) +
                                ": bad value for '" + key + "'");
    }
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw scca::IoError("cannot write " + path.string());
  out << text;
}

template <typename T>
std::size_t probe_in_channels(const scca::EpisodeProvider<T>& provider) {
  return provider.eval_episode(0).query_feat.shape()[0];
}

template <typename T>
int run_train(const CliOptions& opt) {
  const auto& cfg = opt.cfg;
  auto provider = scca::EpisodeProvider<T>::from_config(cfg);
  const std::size_t in_channels = probe_in_channels(provider);
  auto params = scca::init_model_params<T>(in_channels, cfg.dim, cfg.blocks, cfg.heads,
                                           cfg.mlp_ratio, cfg.window, cfg.seed);
  std::cout << "config: " << cfg.echo() << "\n";
  std::cout << "model: " << params.parameter_count() << " parameters, " << in_channels
            << " input channels\n";

  std::string epoch_log = "config: " + cfg.echo() + "\n";
  if (cfg.epochs > 0) {
    auto history = scca::train_loop(params, provider, cfg, std::cout);
    for (const auto& e : history) {
      epoch_log += "epoch=" + std::to_string(e.epoch) + " loss=" + std::to_string(e.mean_loss) +
                   " miou=" + std::to_string(e.train_miou) + "\n";
    }
  } else {
    std::cout << "epochs=0: writing the untrained checkpoint and evaluating\n";
  }

  fs::create_directories(cfg.out);
  scca::save_checkpoint((fs::path(cfg.out) / "checkpoint").string(), params);
  write_text_file(fs::path(cfg.out) / "epochs.txt", epoch_log);

  auto metrics = scca::evaluate(params, provider, cfg, provider.count());
  const std::string report = "config: " + cfg.echo() + "\n" + scca::metrics_text_report(metrics);
  std::cout << report;
  write_text_file(fs::path(cfg.out) / "metrics.txt", report);
  write_text_file(fs::path(cfg.out) / "metrics.kv", scca::metrics_kv_report(metrics));
  std::cout << "checkpoint and reports written to " << cfg.out << "\n";
  return 0;
}

template <typename T>
int run_eval(const CliOptions& opt) {
  const auto& cfg = opt.cfg;
  const std::string ckpt =
      opt.checkpoint.empty() ? (fs::path(cfg.out) / "checkpoint").string() : opt.checkpoint;
  auto params = scca::load_checkpoint<T>(ckpt);
  if ((opt.flag_given("dim") && cfg.dim != params.dim) ||
      (opt.flag_given("blocks") && cfg.blocks != params.blocks.size()) ||
      (opt.flag_given("heads") && cfg.heads != params.heads) ||
      (opt.flag_given("window") && cfg.window != params.window)) {
    throw scca::ContractError("checkpoint geometry disagrees with the requested flags");
  }
  scca::RunConfig effective = cfg;
  effective.dim = params.dim;
  effective.blocks = params.blocks.size();
  effective.heads = params.heads;
  effective.window = params.window;

  auto provider = scca::EpisodeProvider<T>::from_config(effective);
  const std::size_t in_channels = probe_in_channels(provider);
  if (in_channels != params.in_channels) {
    throw scca::ContractError("episodes carry " + std::to_string(in_channels) +
                              " channels but the checkpoint expects " +
                              std::to_string(params.in_channels));
  }
  auto metrics = scca::evaluate(params, provider, effective, provider.count());
  const std::string report =
      "config: " + effective.echo() + "\n" + scca::metrics_text_report(metrics);
  std::cout << report;
  fs::create_directories(effective.out);
  write_text_file(fs::path(effective.out) / "metrics.txt", report);
  write_text_file(fs::path(effective.out) / "metrics.kv", scca::metrics_kv_report(metrics));
  return 0;
}

template <typename T>
double binary_iou(const scca::Tensor<T>& a, const scca::Tensor<T>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.values()[i] == T(1), pb = b.values()[i] == T(1);
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
int run_pma(const CliOptions& opt) {
  const auto& cfg = opt.cfg;
  auto provider = scca::EpisodeProvider<T>::from_config(cfg);
  auto ep = provider.eval_episode(0);
  if (!ep.high_feats) {
    throw scca::ContractError("pma requires high-level features (query_high/support_high)");
  }
  auto support = scca::kshot_average(ep.support_feats, ep.support_masks);
  auto aggregated = scca::aggregate_pseudo_mask(ep.high_feats->first, ep.high_feats->second,
                                                support.binary_mask);
  auto max_sim = scca::max_similarity_prior(ep.high_feats->first, ep.high_feats->second,
                                            support.binary_mask);
  const T thr = static_cast<T>(cfg.pma_threshold);
  auto agg_bin = scca::binarize(aggregated, thr);
  auto max_bin = scca::binarize(max_sim, thr);

  fs::create_directories(cfg.out);
  const fs::path out(cfg.out);
  scca::write_tensor((out / "pma_aggregated.mask").string(), aggregated.values);
  scca::write_tensor((out / "pma_max_similarity.mask").string(), max_sim.values);
  scca::write_tensor((out / "pma_aggregated_bin.mask").string(), agg_bin);
  scca::write_tensor((out / "pma_max_similarity_bin.mask").string(), max_bin);

  std::string report = "config: " + cfg.echo() + "\n";
  report += "threshold: " + std::to_string(cfg.pma_threshold) + "\n";
  report += "aggregated_iou=" + std::to_string(binary_iou(agg_bin, ep.query_mask)) + "\n";
  report += "max_similarity_iou=" + std::to_string(binary_iou(max_bin, ep.query_mask)) + "\n";
  std::cout << report;
  write_text_file(out / "pma_report.txt", report);
  std::cout << "mask tensors written to " << cfg.out << "\n";
  return 0;
}

int run_gradcheck(const CliOptions& opt) {
  // Gradient checks run in f64 regardless of --dtype; small dims enforced.
  const auto& cfg = opt.cfg;
  if (cfg.dim > 16) {
    throw scca::ContractError("gradcheck: dim must be <= 16 (got " + std::to_string(cfg.dim) +
                              ")");
  }
  scca::RunConfig probe_cfg = cfg;
  if (probe_cfg.episodes.empty()) {
    probe_cfg.episodes = "synth:C=4,H=4,W=4,classes=2,blob=2,noise=0.3,count=1";
  }
  auto provider = scca::EpisodeProvider<double>::from_config(probe_cfg);
  auto ep = provider.eval_episode(0);
  const std::size_t h = ep.query_feat.shape()[1], w = ep.query_feat.shape()[2];
  if (h > 8 || w > 8) {
    throw scca::ContractError("gradcheck: episode maps must be at most 8x8, got " +
                              std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t in_channels = ep.query_feat.shape()[0];
  std::cout << "config: " << probe_cfg.echo() << "\n";
  std::cout << "gradcheck runs in f64 (h=1e-5, tol=1e-4)\n";

  bool all_passed = true;
  auto report_result = [&](const char* name, const scca::GradCheckResult& r) {
    std::cout << name << ": max_rel_err=" << r.max_rel_err
              << (r.passed ? " PASS" : " FAIL");
    if (!r.passed) std::cout << " (worst: " << r.worst_param << "[" << r.worst_index << "])";
    if (!r.failure_note.empty()) std::cout << " " << r.failure_note;
    std::cout << "\n";
    for (const auto& [group, err] : r.group_errors) {
      std::cout << "  " << group << ": " << err << "\n";
    }
    all_passed = all_passed && r.passed;
  };

  scca::Rng rng(scca::derive_seed(probe_cfg.seed, 0x6adc8ecull));
  const scca::BlockSettings settings{probe_cfg.heads, true};

  // fusion alone
  {
    auto params = scca::init_model_params<double>(in_channels, probe_cfg.dim, 1, probe_cfg.heads,
                                                  probe_cfg.mlp_ratio, probe_cfg.window,
                                                  probe_cfg.seed);
    auto support = scca::kshot_average(ep.support_feats, ep.support_masks);
    auto proto = scca::support_prototype(support.features, support.binary_mask);
    std::vector<double> pw(probe_cfg.dim * h * w);
    for (auto& v : pw) v = rng.uniform(-1, 1);
    auto probe = scca::Tensor<double>::from({probe_cfg.dim, h, w}, std::move(pw));
    auto f = [&] {
      auto fused = scca::fuse(ep.query_feat, proto, ep.query_mask, params.fusion, true);
      return scca::sum_all(scca::mul(fused, probe));
    };
    report_result("fusion", scca::finite_diff_check(
                                f, {{"fusion.query_weight", &params.fusion.query_weight},
                                    {"fusion.query_bias", &params.fusion.query_bias}}));
  }

  // one SCCA block
  {
    auto params = scca::init_model_params<double>(in_channels, probe_cfg.dim, 1, probe_cfg.heads,
                                                  probe_cfg.mlp_ratio, probe_cfg.window,
                                                  probe_cfg.seed + 1);
    std::vector<double> qv(probe_cfg.dim * h * w), sv(probe_cfg.dim * h * w);
    for (auto& v : qv) v = rng.uniform(-1, 1);
    for (auto& v : sv) v = rng.uniform(-1, 1);
    auto fq = scca::Tensor<double>::from({probe_cfg.dim, h, w}, std::move(qv));
    auto fs0 = scca::Tensor<double>::from({probe_cfg.dim, h, w}, std::move(sv));
    std::vector<double> pw(probe_cfg.dim * h * w);
    for (auto& v : pw) v = rng.uniform(-1, 1);
    auto probe = scca::Tensor<double>::from({probe_cfg.dim, h, w}, std::move(pw));
    auto& blk = params.blocks[0];
    auto f = [&] {
      auto out = scca::scca_block_forward(fq, fs0, ep.support_masks[0], blk, settings,
                                          probe_cfg.window, true);
      return scca::sum_all(scca::mul(out, probe));
    };
    report_result("scca_block",
                  scca::finite_diff_check(f, {{"wq", &blk.wq},
                                              {"wk", &blk.wk},
                                              {"wv", &blk.wv},
                                              {"wo", &blk.wo},
                                              {"ffn_w1", &blk.ffn_w1},
                                              {"ffn_b1", &blk.ffn_b1},
                                              {"ffn_w2", &blk.ffn_w2},
                                              {"ffn_b2", &blk.ffn_b2},
                                              {"norm1_gamma", &blk.norm1_gamma},
                                              {"norm1_beta", &blk.norm1_beta},
                                              {"norm2_gamma", &blk.norm2_gamma},
                                              {"norm2_beta", &blk.norm2_beta}}));
  }

  // full 2-block model through the dice loss
  {
    auto params = scca::init_model_params<double>(in_channels, probe_cfg.dim, 2, probe_cfg.heads,
                                                  probe_cfg.mlp_ratio, probe_cfg.window,
                                                  probe_cfg.seed + 2);
    auto f = [&] {
      auto result = scca::forward_episode(params, ep, settings);
      return scca::episode_loss(result.probs, ep.query_mask);
    };
    report_result("model_2block", scca::finite_diff_check(f, params.named_parameters()));
  }

  if (!all_passed) {
    std::cerr << "gradcheck failed\n";
    return 2;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

int run_cost(const CliOptions& opt) {
  const auto& cfg = opt.cfg;
  std::size_t h = 60, w = 60;
  if (cfg.episodes.rfind("synth:", 0) == 0) {
    const auto spec = scca::parse_synth_spec(cfg.episodes.substr(6), cfg.shots);
    h = spec.height;
    w = spec.width;
  }
  auto report = scca::cost_model(h, w, cfg);
  std::cout << "config: " << cfg.echo() << "\n" << scca::cost_text_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"windowed self-calibrated cross attention for few-shot segmentation"};
  app.require_subcommand(1);

  CliOptions opt;
  auto* train = app.add_subcommand("train", "train on episodes and write a checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* pma = app.add_subcommand("pma", "emit pseudo-mask priors for an episode");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  auto* cost = app.add_subcommand("cost", "analytic FLOP and memory model");
  for (auto* cmd : {train, eval, pma, gradcheck, cost}) add_common_options(cmd, opt);
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint directory (default <out>/checkpoint)");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_config_file(opt);
    opt.cfg.validate();
    const bool f64 = opt.cfg.dtype == "f64";
    if (train->parsed()) return f64 ? run_train<double>(opt) : run_train<float>(opt);
    if (eval->parsed()) return f64 ? run_eval<double>(opt) : run_eval<float>(opt);
    if (pma->parsed()) return f64 ? run_pma<double>(opt) : run_pma<float>(opt);
    if (gradcheck->parsed()) return run_gradcheck(opt);
    if (cost->parsed()) return run_cost(opt);
  } catch (const scca::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const scca::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
