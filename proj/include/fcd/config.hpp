#pragma once

// Training configuration and its flat "key = value" text form.
//
//   lr                     1e-4     AdamW learning rate at epoch 0
//   optimizer.weight_decay 0.01
//   optimizer.beta1        0.9
//   optimizer.beta2        0.999
//   epochs                 300      cosine-annealed to 0 on the last epoch
//   batch_size             8
//   seed                   0
//   text_encoder           stub     "stub", "pretrained" (path from FCD_TEXT_ENCODER_WEIGHTS) or a table path
//   augment.flips          false
//   encoder.channels       32,64,128,256
//   encoder.block          ssm      ssm | conv
//   encoder.depth          2
//   encoder.state_dim      4
//   encoder.mlp_ratio      2
//   decoder.channels       32,32,32,32
//   decoder.groups         4
//   decoder.msde / dpse / drsa   true
//   cmla.enable            true
//   cmla.text_dim          512
//   cmla.alpha_init        0.1
//   cmla.gamma_init        10
//   cmla.channel_gate      false
//   loss.tau               0.8
//   loss.lambda_aux        0.4
//   loss.ce_weight         0.5
//   loss.dice_weight       0.5
//   loss.dice_smooth       1
//   loss.epsilon           1e-6
//
// Lines starting with '#' and blank lines are ignored.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/cmla.hpp"
#include "fcd/decoder.hpp"
#include "fcd/encoder.hpp"
#include "fcd/objective.hpp"
#include "fcd/optim.hpp"

namespace fcd {

struct ModelConfig {
  EncoderConfig encoder;
  std::array<int, 4> decoder_channels = {32, 32, 32, 32};
  int decoder_groups = 4;
  bool msde = true, dpse = true, drsa = true;
  bool use_cmla = true;
  CmlaConfig cmla;

  std::array<FGDABlockConfig, 4> fgda_configs() const {
    auto cfgs = make_fgda_configs(encoder.stage_channels, decoder_channels, msde, dpse, drsa);
    for (auto& c : cfgs) c.groups = decoder_groups;
    return cfgs;
  }

  void validate() const {
    encoder.validate();
    for (const auto& c : fgda_configs()) c.validate();
    if (cmla.text_dim < 8) throw std::invalid_argument("cmla.text_dim must be >= 8");
  }
};

struct TrainConfig {
  double lr = 1e-4;
  AdamWConfig optimizer;
  int epochs = 300;
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::string text_encoder = "stub";
  bool augment_flips = false;
  ModelConfig model;
  LossConfig loss;

  void validate() const {
    if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    model.validate();
    loss.validate();
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size()) throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::array<int, 4> to_int4(const std::string& key, const std::string& v) {
  std::array<int, 4> out{};
  std::stringstream ss(v);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) break;
    out[i++] = static_cast<int>(to_int(key, trim(item)));
  }
  if (i != 4 || std::getline(ss, item, ',')) throw std::invalid_argument("config: " + key + " expects 4 comma-separated integers");
  return out;
}

inline std::string from_int4(const std::array<int, 4>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
}

}  // namespace config_detail

/// Sets one field by its dotted path. Unknown keys are an error.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace config_detail;
  const std::string v = trim(value);
  auto& m = c.model;
  if (key == "lr") c.lr = to_double(key, v);
  else if (key == "optimizer.weight_decay") c.optimizer.weight_decay = to_double(key, v);
  else if (key == "optimizer.beta1") c.optimizer.beta1 = to_double(key, v);
  else if (key == "optimizer.beta2") c.optimizer.beta2 = to_double(key, v);
  else if (key == "epochs") c.epochs = static_cast<int>(to_int(key, v));
  else if (key == "batch_size") c.batch_size = static_cast<int>(to_int(key, v));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "text_encoder") c.text_encoder = v;
  else if (key == "augment.flips") c.augment_flips = to_bool(key, v);
  else if (key == "encoder.channels") m.encoder.stage_channels = to_int4(key, v);
  else if (key == "encoder.block") {
    if (v == "ssm") m.encoder.block = BlockKind::ReferenceSsm;
    else if (v == "conv") m.encoder.block = BlockKind::ConvOnly;
    else throw std::invalid_argument("config: encoder.block must be ssm or conv");
  }
  else if (key == "encoder.depth") m.encoder.depth = static_cast<int>(to_int(key, v));
  else if (key == "encoder.state_dim") m.encoder.state_dim = static_cast<int>(to_int(key, v));
  else if (key == "encoder.mlp_ratio") m.encoder.mlp_ratio = static_cast<int>(to_int(key, v));
  else if (key == "decoder.channels") m.decoder_channels = to_int4(key, v);
  else if (key == "decoder.groups") m.decoder_groups = static_cast<int>(to_int(key, v));
  else if (key == "decoder.msde") m.msde = to_bool(key, v);
  else if (key == "decoder.dpse") m.dpse = to_bool(key, v);
  else if (key == "decoder.drsa") m.drsa = to_bool(key, v);
  else if (key == "cmla.enable") m.use_cmla = to_bool(key, v);
  else if (key == "cmla.text_dim") m.cmla.text_dim = static_cast<int>(to_int(key, v));
  else if (key == "cmla.alpha_init") m.cmla.alpha_init = to_double(key, v);
  else if (key == "cmla.gamma_init") m.cmla.gamma_init = to_double(key, v);
  else if (key == "cmla.channel_gate") m.cmla.channel_gate = to_bool(key, v);
  else if (key == "loss.tau") c.loss.tau = to_double(key, v);
  else if (key == "loss.lambda_aux") c.loss.lambda_aux = to_double(key, v);
  else if (key == "loss.ce_weight") c.loss.ce_weight = to_double(key, v);
  else if (key == "loss.dice_weight") c.loss.dice_weight = to_double(key, v);
  else if (key == "loss.dice_smooth") c.loss.dice_smooth = to_double(key, v);
  else if (key == "loss.epsilon") c.loss.epsilon = to_double(key, v);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Every field in a fixed order; feeding the result back through set_config_value reproduces `c`.
inline std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& c) {
  using config_detail::fmt;
  using config_detail::from_int4;
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  const auto& m = c.model;
  return {
      {"lr", fmt(c.lr)},
      {"optimizer.weight_decay", fmt(c.optimizer.weight_decay)},
      {"optimizer.beta1", fmt(c.optimizer.beta1)},
      {"optimizer.beta2", fmt(c.optimizer.beta2)},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"seed", std::to_string(c.seed)},
      {"text_encoder", c.text_encoder},
      {"augment.flips", b(c.augment_flips)},
      {"encoder.channels", from_int4(m.encoder.stage_channels)},
      {"encoder.block", m.encoder.block == BlockKind::ReferenceSsm ? "ssm" : "conv"},
      {"encoder.depth", std::to_string(m.encoder.depth)},
      {"encoder.state_dim", std::to_string(m.encoder.state_dim)},
      {"encoder.mlp_ratio", std::to_string(m.encoder.mlp_ratio)},
      {"decoder.channels", from_int4(m.decoder_channels)},
      {"decoder.groups", std::to_string(m.decoder_groups)},
      {"decoder.msde", b(m.msde)},
      {"decoder.dpse", b(m.dpse)},
      {"decoder.drsa", b(m.drsa)},
      {"cmla.enable", b(m.use_cmla)},
      {"cmla.text_dim", std::to_string(m.cmla.text_dim)},
      {"cmla.alpha_init", fmt(m.cmla.alpha_init)},
      {"cmla.gamma_init", fmt(m.cmla.gamma_init)},
      {"cmla.channel_gate", b(m.cmla.channel_gate)},
      {"loss.tau", fmt(c.loss.tau)},
      {"loss.lambda_aux", fmt(c.loss.lambda_aux)},
      {"loss.ce_weight", fmt(c.loss.ce_weight)},
      {"loss.dice_weight", fmt(c.loss.dice_weight)},
      {"loss.dice_smooth", fmt(c.loss.dice_smooth)},
      {"loss.epsilon", fmt(c.loss.epsilon)},
  };
}

inline std::string format_config(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_items(c)) out += k + " = " + v + "\n";
  return out;
}

/// Parses text on top of `base`. A "preset = NAME" line, if any, must come first.
inline TrainConfig preset_config(const std::string& name);

inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        if (!first) throw std::invalid_argument("config: preset must be the first entry");
        base = preset_config(value);
      } else {
        set_config_value(base, key, value);
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
    first = false;
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// "full": full-scale widths and schedule; "synthetic": 20 epochs at desk scale; "small": the overfit configuration.
inline TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  if (name == "full") {
    c.model.encoder.stage_channels = {48, 96, 192, 384};
    c.model.decoder_channels = {64, 64, 64, 64};
    return c;
  }
  c.model.encoder.stage_channels = {16, 24, 32, 48};
  c.model.decoder_channels = {16, 16, 16, 16};
  if (name == "synthetic") {
    c.epochs = 20;
    return c;
  }
  if (name == "small") {
    c.lr = 6e-3;
    c.epochs = 100;
    c.seed = 7;
    return c;
  }
  if (name == "default") return TrainConfig{};
  throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace fcd
