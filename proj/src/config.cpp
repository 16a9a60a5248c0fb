#include "stratmed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stratmed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" +
                      value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  hyper.seed = s;
}

void RunConfig::validate_source() const {
  if (has_file_source && has_synth_source)
    throw ConfigError("config: both data.path and synth.* given; pick one data source");
  if (!has_file_source && !has_synth_source)
    throw ConfigError("config: no data source; set data.path or synth.* keys");
  if (has_file_source && ddi_path.empty())
    throw ConfigError("config: data.path requires data.ddi_path");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"data.path",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.dataset_path = v;
         c.has_file_source = true;
       }},
      {"data.ddi_path",
       [](RunConfig& c, const std::string&, const std::string& v) { c.ddi_path = v; }},
      {"synth.num_patients",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.num_patients = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.num_diag",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.num_diag = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.num_proc",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.num_proc = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.num_med",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.num_med = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.visit_mean",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.visit_mean = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"synth.diag_min",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.diag_min = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.diag_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.diag_max = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.proc_min",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.proc_min = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.proc_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.proc_max = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.zipf_diag",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.zipf_diag = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"synth.zipf_proc",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.zipf_proc = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"synth.zipf_med",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.zipf_med = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"synth.meds_per_diag",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.meds_per_diag = parse_u64(k, v);
         c.has_synth_source = true;
       }},
      {"synth.noise_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.noise_rate = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"synth.ddi_density",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.ddi_density = parse_double(k, v);
         c.has_synth_source = true;
       }},
      {"strat.q_mm", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.strat.q_mm = parse_u64(k, v); }},
      {"strat.q_md", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.strat.q_md = parse_u64(k, v); }},
      {"strat.q_mp", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.strat.q_mp = parse_u64(k, v); }},
      {"strat.k", [](RunConfig& c, const std::string& k,
                     const std::string& v) { c.strat.k = parse_double(k, v); }},
      {"strat.theta_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.strat.theta_fraction = parse_double(k, v);
       }},
      {"strat.rho_md", [](RunConfig& c, const std::string& k,
                          const std::string& v) { c.strat.rho_md = parse_double(k, v); }},
      {"strat.rho_mp", [](RunConfig& c, const std::string& k,
                          const std::string& v) { c.strat.rho_mp = parse_double(k, v); }},
      {"train.dim", [](RunConfig& c, const std::string& k,
                       const std::string& v) { c.hyper.dim = parse_u64(k, v); }},
      {"train.delta", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.hyper.delta = parse_double(k, v); }},
      {"train.beta", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.hyper.beta = parse_double(k, v); }},
      {"train.gamma", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.hyper.gamma = parse_double(k, v); }},
      {"train.lr", [](RunConfig& c, const std::string& k,
                      const std::string& v) { c.hyper.lr = parse_double(k, v); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.hyper.weight_decay = parse_double(k, v);
       }},
      {"train.epochs", [](RunConfig& c, const std::string& k,
                          const std::string& v) { c.hyper.epochs = parse_u64(k, v); }},
      {"train.dropout", [](RunConfig& c, const std::string& k,
                           const std::string& v) { c.hyper.dropout = parse_double(k, v); }},
      {"train.kp", [](RunConfig& c, const std::string& k,
                      const std::string& v) { c.kp = parse_double(k, v); }},
      {"train.wo_p", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.ablation.wo_p = parse_bool(k, v); }},
      {"train.wo_s", [](RunConfig& c, const std::string& k,
                        const std::string& v) { c.ablation.wo_s = parse_bool(k, v); }},
      {"train.wo_sg", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.ablation.wo_sg = parse_bool(k, v); }},
      {"boot.rounds", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.bootstrap.rounds = parse_u64(k, v); }},
      {"boot.fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.bootstrap.fraction = parse_double(k, v);
       }},
      {"study.seeds", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.study_seeds = parse_u64(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k,
                  const std::string& v) { c.apply_seed(parse_u64(k, v)); }},
  };

  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                        "'");
    it->second(cfg, key, value);
  }
  if (cfg.ablation.wo_sg) cfg.ablation.wo_s = true;  // wo_sg subsumes wo_s
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string RunConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "data.path=" << dataset_path.string() << "\n";
  os << "data.ddi_path=" << ddi_path.string() << "\n";
  os << "synth=" << has_synth_source << "," << synth.num_patients << "," << synth.num_diag
     << "," << synth.num_proc << "," << synth.num_med << "," << synth.visit_mean << ","
     << synth.diag_min << "," << synth.diag_max << "," << synth.proc_min << ","
     << synth.proc_max << "," << synth.zipf_diag << "," << synth.zipf_proc << ","
     << synth.zipf_med << "," << synth.meds_per_diag << "," << synth.noise_rate << ","
     << synth.ddi_density << "," << synth.seed << "\n";
  os << "strat=" << strat.q_mm << "," << strat.q_md << "," << strat.q_mp << "," << strat.k
     << "," << strat.theta_fraction << "," << strat.rho_md << "," << strat.rho_mp << "\n";
  os << "train=" << hyper.dim << "," << hyper.delta << "," << hyper.beta << ","
     << hyper.gamma << "," << hyper.lr << "," << hyper.weight_decay << "," << hyper.epochs
     << "," << hyper.dropout << "," << hyper.seed << "\n";
  os << "ablation=" << ablation.wo_p << "," << ablation.wo_s << "," << ablation.wo_sg
     << "\n";
  os << "boot=" << bootstrap.rounds << "," << bootstrap.fraction << "\n";
  os << "study.seeds=" << study_seeds << "\n";
  os << "seed=" << seed << "\n";
  return os.str();
}

}  // namespace stratmed
