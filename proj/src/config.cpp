#include "cra/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "cra/common.hpp"

namespace cra {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int n = std::stoi(v, &used);
    check<ConfigError>(used == v.size(), "");
    return n;
  } catch (const ConfigError&) {
  } catch (const std::exception&) {
  }
  throw ConfigError(cat("key '", key, "' needs an integer, got '", v, "'"));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    check<ConfigError>(used == v.size(), "");
    return d;
  } catch (const ConfigError&) {
  } catch (const std::exception&) {
  }
  throw ConfigError(cat("key '", key, "' needs a number, got '", v, "'"));
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string s = lower(v);
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError(cat("key '", key, "' needs a boolean, got '", v, "'"));
}

std::vector<int> to_int_list(const std::string& key, const std::string& v,
                             char sep) {
  std::vector<int> out;
  if (lower(trim(v)) == "none") return out;
  std::istringstream in(v);
  std::string part;
  while (std::getline(in, part, sep)) out.push_back(to_int(key, trim(part)));
  check<ConfigError>(!out.empty(), "key '", key, "' needs a list");
  return out;
}

AttentionVariant to_variant(const std::string& v) {
  const std::string s = lower(v);
  if (s == "none") return AttentionVariant::None;
  if (s == "cra") return AttentionVariant::CRA;
  if (s == "sra") return AttentionVariant::SRA;
  if (s == "ca") return AttentionVariant::CA;
  throw ConfigError(cat("unknown attention variant '", v,
                        "' (none|cra|sra|ca)"));
}

OrderKind to_order(const std::string& v) {
  const std::string s = lower(v);
  if (s == "forward") return OrderKind::Forward;
  if (s == "reverse") return OrderKind::Reverse;
  if (s == "random") return OrderKind::RandomShuffle;
  if (s == "fixed") return OrderKind::FixedPermutation;
  throw ConfigError(cat("unknown sequence order '", v,
                        "' (forward|reverse|random|fixed)"));
}

CellKind to_cell(const std::string& v) {
  const std::string s = lower(v);
  if (s == "lstm") return CellKind::LSTM;
  if (s == "bilstm") return CellKind::BiLSTM;
  throw ConfigError(cat("unknown cell '", v, "' (lstm|bilstm)"));
}

PoolKind to_pooling(const std::string& v) {
  const std::string s = lower(v);
  if (s == "avg") return PoolKind::AvgOnly;
  if (s == "max") return PoolKind::MaxOnly;
  if (s == "combined") return PoolKind::Combined;
  throw ConfigError(cat("unknown pooling '", v, "' (avg|max|combined)"));
}

void apply(RunConfig& cfg, const std::string& section, const std::string& key,
           const std::string& value) {
  auto unknown = [&]() -> ConfigError {
    return ConfigError(cat("unknown key '", key, "' in [", section, "]"));
  };
  if (section == "model") {
    if (key == "input") {
      std::vector<int> dims = to_int_list(key, value, 'x');
      check<ConfigError>(dims.size() == 3, "model input must be CxHxW");
      cfg.model.in_channels = dims[0];
      cfg.model.in_h = dims[1];
      cfg.model.in_w = dims[2];
    } else if (key == "stages") {
      cfg.model.stages = to_int_list(key, value, ',');
    } else if (key == "attach") {
      cfg.model.attach = to_int_list(key, value, ',');
    } else if (key == "dv") {
      cfg.model.dv = to_int(key, value);
    } else {
      throw unknown();
    }
  } else if (section == "attention") {
    if (key == "variant")
      cfg.model.attention.variant = to_variant(value);
    else if (key == "d")
      cfg.model.attention.d = to_int(key, value);
    else if (key == "cell")
      cfg.model.attention.cell = to_cell(value);
    else if (key == "order")
      cfg.model.attention.order.kind = to_order(value);
    else if (key == "order_seed")
      cfg.model.attention.order.seed = (uint64_t)to_int(key, value);
    else
      throw unknown();
  } else if (section == "agg") {
    if (key == "pooling")
      cfg.model.agg.pooling = to_pooling(value);
    else if (key == "r")
      cfg.model.agg.r = to_int(key, value);
    else if (key == "share_weights")
      cfg.model.agg.share_weights = to_bool(key, value);
    else
      throw unknown();
  } else if (section == "data") {
    if (key == "num_ids")
      cfg.data.num_ids = to_int(key, value);
    else if (key == "clips_per_id")
      cfg.data.clips_per_id = to_int(key, value);
    else if (key == "frames_per_clip")
      cfg.data.frames_per_clip = to_int(key, value);
    else if (key == "cameras")
      cfg.data.cameras = to_int(key, value);
    else if (key == "noise_std")
      cfg.data.noise_std = to_double(key, value);
    else if (key == "occlusion_prob")
      cfg.data.occlusion_prob = to_double(key, value);
    else if (key == "jitter")
      cfg.data.jitter_pixels = to_int(key, value);
    else
      throw unknown();
  } else if (section == "train") {
    if (key == "epochs")
      cfg.train.epochs = to_int(key, value);
    else if (key == "lr")
      cfg.train.lr = to_double(key, value);
    else if (key == "milestones")
      cfg.train.milestones = to_int_list(key, value, ',');
    else if (key == "margin")
      cfg.train.margin = to_double(key, value);
    else if (key == "p")
      cfg.train.p = to_int(key, value);
    else if (key == "k")
      cfg.train.k = to_int(key, value);
    else if (key == "squared")
      cfg.train.squared = to_bool(key, value);
    else if (key == "iters_per_epoch")
      cfg.train.iters_per_epoch = to_int(key, value);
    else
      throw unknown();
  } else if (section == "run") {
    if (key == "seed")
      cfg.seed = (uint64_t)to_int(key, value);
    else if (key == "out")
      cfg.out_dir = value;
    else
      throw unknown();
  } else {
    throw ConfigError(cat("unknown section [", section, "]"));
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      check<ConfigError>(line.back() == ']', "line ", lineno,
                         ": unterminated section header");
      section = lower(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    size_t eq = line.find('=');
    check<ConfigError>(eq != std::string::npos, "line ", lineno,
                       ": expected 'key = value', got '", line, "'");
    check<ConfigError>(!section.empty(), "line ", lineno,
                       ": key outside any section");
    apply(cfg, section, lower(trim(line.substr(0, eq))),
          trim(line.substr(eq + 1)));
  }
  sync_derived(cfg);
  return cfg;
}

void sync_derived(RunConfig& cfg) {
  cfg.data.channels = cfg.model.in_channels;
  cfg.data.height = cfg.model.in_h;
  cfg.data.width = cfg.model.in_w;
  cfg.data.seed = cfg.seed;
  cfg.model.t = cfg.data.frames_per_clip;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  check<IoError>(in.good(), "cannot open config file ", path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

double schedule_lr(double base, const std::vector<int>& milestones,
                   int epoch) {
  double lr = base;
  for (int m : milestones)
    if (epoch >= m) lr *= 0.1;
  return lr;
}

}  // namespace cra
