#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlnet/loss.hpp"
#include "mlnet/network.hpp"
#include "mlnet/optimizer.hpp"

// Flat "key = value" run configuration. Keys mirror the model, loss and
// optimizer defaults; unknown keys are rejected with the list of valid ones.
// '#' starts a comment; blank lines are ignored.

namespace mlnet {

struct RunConfig {
  ModelConfig model;  // full-scale defaults unless preset/keys say otherwise
  LossConfig loss;
  SgdNesterov::Options optimizer;
  bool lambda_auto = true;   // lambda = 1/(w'*h') unless set explicitly
  double blur_sigma = 0.0;   // fixation-map blur for dataset preparation
  bool gt_from_fixations = false;

  // Resolves the auto lambda against the model's prior mask extents.
  LossConfig resolved_loss() const {
    LossConfig out = loss;
    if (lambda_auto) {
      out.lambda = 1.0 / static_cast<double>(model.prior_width() *
                                             model.prior_height());
    }
    return out;
  }
};

namespace detail {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "preset",          "input_width",      "input_height",
      "stage_channels",  "encode_channels",  "dropout_retain",
      "channel_mean_r",  "channel_mean_g",   "channel_mean_b",
      "prior_normalized", "seed",            "alpha",
      "lambda",          "batch_size",       "grad_through_max",
      "learning_rate",   "momentum",         "weight_decay",
      "blur_sigma",      "gt_from_fixations"};
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValueError("config key '" + key + "': not a number: '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValueError("config key '" + key + "': not an integer: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValueError("config key '" + key + "': not a boolean: '" + v + "'");
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValueError("config line " + std::to_string(line_no) +
                       ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "preset") {
      if (value == "full") {
        const std::uint64_t seed = cfg.model.seed;
        cfg.model = ModelConfig::full_scale();
        cfg.model.seed = seed;
      } else if (value == "desk") {
        const std::uint64_t seed = cfg.model.seed;
        cfg.model = ModelConfig::desk();
        cfg.model.seed = seed;
      } else {
        throw ValueError("config key 'preset': expected full or desk, got '" +
                         value + "'");
      }
    } else if (key == "input_width") {
      cfg.model.input_width = detail::parse_int(key, value);
    } else if (key == "input_height") {
      cfg.model.input_height = detail::parse_int(key, value);
    } else if (key == "stage_channels") {
      std::array<std::int64_t, 5> ch{};
      std::stringstream ss(value);
      std::string tok;
      std::size_t idx = 0;
      while (std::getline(ss, tok, ',')) {
        if (idx >= 5) break;
        ch[idx++] = detail::parse_int(key, detail::trim(tok));
      }
      if (idx != 5 || std::getline(ss, tok, ',')) {
        throw ValueError(
            "config key 'stage_channels': expected 5 comma-separated values");
      }
      cfg.model.stage_channels = ch;
    } else if (key == "encode_channels") {
      cfg.model.encode_channels = detail::parse_int(key, value);
    } else if (key == "dropout_retain") {
      cfg.model.dropout_retain = detail::parse_double(key, value);
    } else if (key == "channel_mean_r") {
      cfg.model.channel_means[0] = detail::parse_double(key, value);
    } else if (key == "channel_mean_g") {
      cfg.model.channel_means[1] = detail::parse_double(key, value);
    } else if (key == "channel_mean_b") {
      cfg.model.channel_means[2] = detail::parse_double(key, value);
    } else if (key == "prior_normalized") {
      cfg.model.prior_normalized = detail::parse_bool(key, value);
    } else if (key == "seed") {
      cfg.model.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    } else if (key == "alpha") {
      cfg.loss.alpha = detail::parse_double(key, value);
    } else if (key == "lambda") {
      if (value == "auto") {
        cfg.lambda_auto = true;
      } else {
        cfg.lambda_auto = false;
        cfg.loss.lambda = detail::parse_double(key, value);
      }
    } else if (key == "batch_size") {
      cfg.loss.batch_size = detail::parse_int(key, value);
    } else if (key == "grad_through_max") {
      cfg.loss.grad_through_max = detail::parse_bool(key, value);
    } else if (key == "learning_rate") {
      cfg.optimizer.learning_rate = detail::parse_double(key, value);
    } else if (key == "momentum") {
      cfg.optimizer.momentum = detail::parse_double(key, value);
    } else if (key == "weight_decay") {
      cfg.optimizer.weight_decay = detail::parse_double(key, value);
    } else if (key == "blur_sigma") {
      cfg.blur_sigma = detail::parse_double(key, value);
    } else if (key == "gt_from_fixations") {
      cfg.gt_from_fixations = detail::parse_bool(key, value);
    } else {
      std::string valid;
      for (const std::string& k : detail::config_keys()) {
        valid += valid.empty() ? k : ", " + k;
      }
      throw ValueError("unknown config key '" + key + "' on line " +
                       std::to_string(line_no) + "; valid keys: " + valid);
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ValueError& e) {
    throw ValueError(path.string() + ": " + e.what());
  }
}

}  // namespace mlnet
