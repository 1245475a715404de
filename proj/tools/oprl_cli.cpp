#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "oprl/config.hpp"
#include "oprl/errors.hpp"
#include "oprl/pipeline.hpp"
#include "oprl/service.hpp"

using namespace oprl;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const config::RunConfig& cfg, const std::string& command) {
  const fs::path out = cfg.get("out");
  fs::create_directories(out);
  config::write_manifest({command, cfg, pipeline::run_seeds(cfg)}, out);
  return out;
}

int cmd_gen_data(const config::RunConfig& cfg) {
  const fs::path out = prepare_out(cfg, "gen-data");
  const OfflineDataset ds = pipeline::generate_dataset(cfg);
  save_dataset(ds, out / "dataset.jsonl");
  std::cout << "wrote " << ds.trajectories.size() << " trajectories (" << ds.transition_count()
            << " transitions) to " << (out / "dataset.jsonl").string() << "\n";
  return 0;
}

int cmd_serve(const config::RunConfig& cfg) {
  const fs::path out = prepare_out(cfg, "serve");
  service::LabelingSession session(pipeline::acquire_dataset(cfg), cfg);
  service::HttpServer server(session);
  const int port = server.bind(cfg.get("host"), static_cast<int>(cfg.count("port")));
  session.start(out);
  std::cout << "serving " << session.run_id() << " on http://" << cfg.get("host") << ":" << port
            << "\n" << std::flush;
  std::thread watcher([&] {
    session.wait();
    std::cout << "labeling finished; reward model in " << (out / "reward").string() << "\n"
              << std::flush;
  });
  server.listen();
  session.stop();
  watcher.join();
  return 0;
}

int cmd_learn_reward(const config::RunConfig& cfg) {
  if (cfg.get("labeler") == "human") return cmd_serve(cfg);
  if (cfg.get("labeler") != "oracle") throw InvalidConfig("labeler must be oracle or human");
  const fs::path out = prepare_out(cfg, "learn-reward");
  const OfflineDataset ds = pipeline::acquire_dataset(cfg);
  const std::uint64_t seed = cfg.u64("seed");
  auto setup = pipeline::prepare_queries(ds, cfg, seed);
  auto oracle = pipeline::make_oracle(ds, cfg, seed);
  pipeline::LoopOptions opts;
  opts.out = out;
  opts.on_round = [](const acquisition::RoundRecord& r, const reward::RewardPosterior&) {
    std::cout << "round " << r.round << ": " << r.labels_total << " labels";
    if (r.heldout_accuracy) std::cout << ", held-out accuracy " << *r.heldout_accuracy;
    std::cout << "\n" << std::flush;
  };
  const auto result = pipeline::learn_reward(ds, cfg, seed, setup, *oracle, opts);
  write_json(out / "report.json", {{"command", "learn-reward"},
                                   {"method", cfg.get("method")},
                                   {"labels", result.labels.size()},
                                   {"heldout_pairs", setup.heldout.pairs.size()},
                                   {"accuracy", result.accuracy}});
  return 0;
}

int cmd_train_policy(const config::RunConfig& cfg) {
  const fs::path out = prepare_out(cfg, "train-policy");
  const OfflineDataset ds = pipeline::acquire_dataset(cfg);
  const std::string sel = cfg.get("selector");
  std::optional<reward::RewardPosterior> post;
  if (sel == "predicted") {
    if (cfg.is_empty("reward")) {
      bool has = !ds.trajectories.empty() && ds.has_predicted();
      if (!has) throw InvalidConfig("selector predicted needs --reward or a relabeled dataset");
    } else {
      post = reward::load_posterior(cfg.get("reward"));
    }
  }
  const auto art =
      pipeline::train_policy(ds, cfg, cfg.u64("seed"), sel, post ? &*post : nullptr);
  rl::save_policy(art, out / "policy");
  nlohmann::json report{{"command", "train-policy"}, {"selector", art.selector}};
  if (!art.log.value_loss.empty()) report["final_value_loss"] = art.log.value_loss.back();
  if (!art.log.policy_loss.empty()) report["final_policy_loss"] = art.log.policy_loss.back();
  write_json(out / "report.json", report);
  std::cout << "policy written to " << (out / "policy").string() << "\n";
  return 0;
}

int cmd_evaluate(const config::RunConfig& cfg) {
  if (cfg.is_empty("policy")) throw InvalidConfig("evaluate needs --policy");
  const fs::path out = prepare_out(cfg, "evaluate");
  const auto art = rl::load_policy(cfg.get("policy"));
  const auto summary = pipeline::evaluate(cfg, art);
  nlohmann::json report{{"command", "evaluate"},
                        {"env", cfg.get("env")},
                        {"task", cfg.get("task")},
                        {"policy", art.selector},
                        {"episodes", summary.returns.size()},
                        {"returns", summary.returns},
                        {"mean", summary.mean},
                        {"iqm", summary.iqm}};
  char buf[256];
  std::string table;
  std::snprintf(buf, sizeof buf, "%-24s %-16s %10s %10s\n", "TASK", "POLICY", "MEAN", "IQM");
  table += buf;
  std::snprintf(buf, sizeof buf, "%-24s %-16s %10.2f %10.2f\n",
                (cfg.get("env") + "/" + cfg.get("task")).c_str(), art.selector.c_str(),
                summary.mean, summary.iqm);
  table += buf;
  if (cfg.env() == EnvId::cartpole) {
    const auto trajs = metrics::rollout_policy(cfg.env(), art, cfg.count("eval-episodes"),
                                               metrics::kBehaviorEpisodeLen,
                                               pipeline::eval_seed(cfg));
    nlohmann::json beh = nlohmann::json::object();
    table += "\nBEHAVIOR STEPS (of 200)\n";
    for (const auto& b : pipeline::cartpole_behaviors(trajs)) {
      beh[b.behavior] = b.mean;
      std::snprintf(buf, sizeof buf, "%-16s %10.2f\n", b.behavior.c_str(), b.mean);
      table += buf;
    }
    report["behavior_steps"] = beh;
  }
  write_json(out / "report.json", report);
  write_text(out / "report.txt", table);
  std::cout << table;
  return 0;
}

int cmd_audit(const config::RunConfig& cfg) {
  const fs::path out = prepare_out(cfg, "audit");
  const OfflineDataset ds = pipeline::acquire_dataset(cfg);
  const auto report = pipeline::audit(ds, cfg);
  const std::string table = metrics::format_audit_table({report.row});
  write_json(out / "report.json", pipeline::audit_to_json(report));
  write_text(out / "report.txt", table);
  std::cout << table;
  return 0;
}

int cmd_sweep(const config::RunConfig& cfg) {
  const fs::path out = prepare_out(cfg, "sweep");
  const OfflineDataset ds = pipeline::acquire_dataset(cfg);
  const auto report = pipeline::sweep(ds, cfg);
  const std::string table = pipeline::format_sweep_table(report);
  write_json(out / "report.json", pipeline::sweep_to_json(report));
  write_text(out / "report.txt", table);
  std::cout << table;
  return 0;
}

int cmd_layout(const config::RunConfig& cfg) {
  std::cout << envs::layout_for(cfg.env()).to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline preference-based reward learning"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& k : config::known_keys()) {
    opts[k.name] = app.add_option("--" + k.name, flags[k.name], k.help + " [" +
                                  (k.default_value.empty() ? "unset" : k.default_value) + "]");
  }

  const std::map<std::string, std::function<int(const config::RunConfig&)>> commands{
      {"gen-data", cmd_gen_data},       {"learn-reward", cmd_learn_reward},
      {"train-policy", cmd_train_policy}, {"evaluate", cmd_evaluate},
      {"audit", cmd_audit},             {"sweep", cmd_sweep},
      {"serve", cmd_serve},             {"layout", cmd_layout}};
  const std::map<std::string, std::string> descriptions{
      {"gen-data", "generate an offline dataset"},
      {"learn-reward", "active preference-based reward learning"},
      {"train-policy", "offline RL (AWR) on a reward channel"},
      {"evaluate", "roll out a policy and report returns"},
      {"audit", "GT / AVG / ZERO / RANDOM masking audit"},
      {"sweep", "vary one acquisition parameter"},
      {"serve", "human labeling service"},
      {"layout", "print a maze layout"}};
  for (const auto& [name, desc] : descriptions) app.add_subcommand(name, desc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    std::map<std::string, std::string> file;
    if (!config_file.empty()) file = config::load_config_file(config_file);
    std::map<std::string, std::string> overrides;
    for (const auto& [name, opt] : opts) {
      if (opt->count() > 0) overrides[name] = flags[name];
    }
    const config::RunConfig cfg = config::merge(file, overrides);
    for (auto* sub : app.get_subcommands()) return commands.at(sub->get_name())(cfg);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
