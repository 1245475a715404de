#include "oprl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "oprl/errors.hpp"

namespace oprl::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys{
      {"env", "open-maze", "umaze | medium-maze | open-maze | cartpole"},
      {"task", "goal-reach", "goal-reach | ccw-orbit | balance | windmill-cw | windmill-ccw"},
      {"behavior", "auto", "random-policy | random-waypoints (auto: waypoints on mazes)"},
      {"steps", "auto", "offline dataset size in transitions"},
      {"episode-len", "auto", "300 on mazes, 200 on cartpole"},
      {"seed", "0", "base seed for every random stream"},
      {"seeds", "3", "number of training seeds for evaluate / audit / sweep"},
      {"data", "", "dataset file"},
      {"out", "run", "output directory"},
      {"method", "ensemdis", "random | ensemdis | enseminfo | dropdis | dropinfo"},
      {"posterior", "auto", "ensemble | dropout (auto: from method)"},
      {"ensemble-size", "7", "ensemble members M"},
      {"dropout-passes", "30", "Monte-Carlo dropout passes"},
      {"dropout-rate", "0.5", "dropout probability on the last hidden layer"},
      {"reward-hidden", "64,64", "reward network hidden sizes"},
      {"initial", "auto", "initial random queries (5 on mazes, 50 on cartpole)"},
      {"per-round", "auto", "queries per round (1 on mazes, 10 on cartpole)"},
      {"rounds", "10", "acquisition rounds"},
      {"epochs-initial", "5", "reward epochs after the initial queries"},
      {"epochs-per-round", "1", "reward epochs after each round"},
      {"reward-batch", "1", "reward minibatch size, 0 for full batch"},
      {"reward-lr", "3e-3", "reward learning rate"},
      {"bt-beta", "1", "Bradley-Terry rationality"},
      {"snippet-len", "auto", "30 on mazes, 50 on cartpole"},
      {"snippets", "4000", "snippets sampled for the query pool"},
      {"pool-pairs", "10000", "pairs in the query pool"},
      {"heldout-fraction", "0.2", "fraction of pool pairs held out for accuracy"},
      {"scan-budget", "0", "pairs scored per selection, 0 scans the pool"},
      {"labeler", "oracle", "oracle | human"},
      {"label-task", "auto", "task the oracle labels by (auto: task)"},
      {"oracle-noise-beta", "", "sample oracle labels from Bradley-Terry with this beta"},
      {"precollect", "0", "human mode: answer this many random queries before training"},
      {"labels", "", "earlier label file to resume from"},
      {"reward", "", "reward model directory"},
      {"gamma", "auto", "AWR discount"},
      {"awr-beta", "auto", "AWR advantage temperature"},
      {"weight-cap", "20", "AWR weight cap"},
      {"value-iters", "2000", "value regression steps"},
      {"policy-iters", "4000", "policy steps"},
      {"awr-batch", "256", "AWR minibatch size"},
      {"policy-hidden", "64,64", "policy and value hidden sizes"},
      {"sigma", "0.2", "Gaussian policy standard deviation"},
      {"selector", "predicted", "gt | predicted | zero | avg | random"},
      {"policy", "", "policy directory"},
      {"eval-episodes", "auto", "20 on mazes, 50 on cartpole"},
      {"eval-len", "auto", "rollout length (episode-len)"},
      {"param", "", "sweep parameter: initial | per-round | ensemble-size | dropout-passes"},
      {"values", "", "comma separated sweep values"},
      {"host", "127.0.0.1", "service address"},
      {"port", "8080", "service port"},
      {"heatmap-resolution", "4", "heatmap samples per cell side"},
  };
  return keys;
}

bool is_known_key(const std::string& key) {
  for (const auto& k : known_keys()) {
    if (k.name == key) return true;
  }
  return false;
}

RunConfig::RunConfig() {
  for (const auto& k : known_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) throw InvalidConfig("unknown config key: " + key);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidConfig("unknown config key: " + key);
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidConfig(key + ": expected a number, got '" + v + "'");
  }
}

std::size_t RunConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(u64(key));
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  std::uint64_t out = 0;
  if (!parse_u64(get(key), out)) {
    throw InvalidConfig(key + ": expected a non-negative integer, got '" + get(key) + "'");
  }
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no" || v.empty()) return false;
  throw InvalidConfig(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : list(key)) {
    std::uint64_t v = 0;
    if (!parse_u64(item, v)) throw InvalidConfig(key + ": bad count '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::optional<double> RunConfig::optional_real(const std::string& key) const {
  if (get(key).empty()) return std::nullopt;
  return real(key);
}

EnvId RunConfig::env() const {
  try {
    return parse_env(get("env"));
  } catch (const Error& e) {
    throw InvalidConfig(e.what());
  }
}

void RunConfig::resolve() {
  const EnvId e = env();
  const bool maze = is_maze(e);
  auto fill = [&](const std::string& key, const std::string& v) {
    if (is_auto(key)) values_[key] = v;
  };
  fill("behavior", maze ? "random-waypoints" : "random-policy");
  fill("steps", maze ? "60000" : "50000");
  fill("episode-len", maze ? "300" : "200");
  fill("initial", maze ? "5" : "50");
  fill("per-round", maze ? "1" : "10");
  fill("snippet-len", maze ? "30" : "50");
  fill("gamma", maze ? "0.9" : "0.95");
  fill("awr-beta", "0.3");
  fill("eval-episodes", maze ? "20" : "50");
  fill("eval-len", get("episode-len"));
  fill("label-task", get("task"));
  if (is_auto("posterior")) {
    const std::string& m = get("method");
    values_["posterior"] = (m == "dropdis" || m == "dropinfo") ? "dropout" : "ensemble";
  }
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", no);
    const std::string key = trim(line.substr(0, eq));
    if (!is_known_key(key)) throw ParseError("unknown config key: " + key, no);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig merge(const std::map<std::string, std::string>& file,
                const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : file) cfg.set(k, v);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.resolve();
  return cfg;
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : known_keys()) out += k.name + " = " + cfg.get(k.name) + "\n";
  return out;
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : m.config.values()) cfg[k] = v;
  return {{"command", m.command}, {"config", cfg}, {"seeds", m.seeds}};
}

void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream j(dir / "manifest.json");
  std::ofstream c(dir / "manifest.cfg");
  if (!j || !c) throw IoError("cannot write manifest in " + dir.string());
  j << manifest_to_json(m).dump(2) << "\n";
  c << "# " << m.command << "\n" << to_config_text(m.config);
}

}  // namespace oprl::config
