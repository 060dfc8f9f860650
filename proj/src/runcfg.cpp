// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include "duplex/runcfg.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "duplex/text.hpp"
#include "json.hpp"

namespace duplex {

namespace {

using nlohmann::json;

json parse_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string(what) + ": " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw Error("BadConfig",
                  std::string("unknown key in ") + where + ": " + key);
  }
}

ModelConfig model_from(const json& j) {
  if (!j.is_object())
    throw Error("BadConfig", "\"model\" must be an object");
  ModelConfig base = ModelConfig{};
  if (j.contains("preset"))
    base = ModelConfig::preset(j.at("preset").get<std::string>());
  json merged = parse_or_throw(model_config_to_json(base), "model preset");
  json over = j;
  over.erase("preset");
  for (const auto& [key, value] : over.items()) {
    (void)value;
    if (!merged.contains(key))
      throw Error("BadConfig", "unknown key in model: " + key);
  }
  merged.update(over);
  return model_config_from_json(merged.dump());
}

MelConfig mel_from(const json& j) {
  check_keys(j, {"n_fft", "hop", "win", "n_mels", "fmin", "fmax", "log_floor",
                 "sample_rate"},
             "mel");
  MelConfig m{};
  m.n_fft = j.value("n_fft", m.n_fft);
  m.hop = j.value("hop", m.hop);
  m.win = j.value("win", m.win);
  m.n_mels = j.value("n_mels", m.n_mels);
  m.fmin = j.value("fmin", m.fmin);
  m.fmax = j.value("fmax", m.fmax);
  m.log_floor = j.value("log_floor", m.log_floor);
  m.sample_rate = j.value("sample_rate", m.sample_rate);
  return m;
}

DecodeConfig decode_from(const json& j) {
  check_keys(j, {"beam", "ctc_weight", "stop_threshold"}, "decode");
  DecodeConfig d{};
  d.beam = j.value("beam", d.beam);
  d.ctc_weight = j.value("ctc_weight", d.ctc_weight);
  d.stop_threshold = j.value("stop_threshold", d.stop_threshold);
  return d;
}

}  // namespace

std::string interpolate_env(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
      const std::size_t end = text.find('}', i + 2);
      if (end == std::string::npos)
        throw Error("BadConfig", "unterminated ${ reference in config");
      const std::string name = text.substr(i + 2, end - i - 2);
      bool ok = !name.empty() && (std::isalpha(static_cast<unsigned char>(
                                      name[0])) ||
                                  name[0] == '_');
      for (char c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
          ok = false;
      if (!ok)
        throw Error("BadConfig", "bad environment variable name: " + name);
      const char* value = std::getenv(name.c_str());
      if (!value)
        throw Error("BadConfig", "environment variable not set: " + name);
      out += value;
      i = end + 1;
    } else {
      out += text[i++];
    }
  }
  return out;
}

RunConfig run_config_from_json(const std::string& json_text) {
  const json j = parse_or_throw(json_text, "run config");
  try {
    if (!j.is_object()) throw Error("Parse", "run config: not a JSON object");
    check_keys(j,
               {"model", "schedule", "data", "mel", "decode", "symbols",
                "dtype", "seed", "train"},
               "run config");
    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_from(j.at("model"));
    if (j.contains("mel")) cfg.mel = mel_from(j.at("mel"));
    if (j.contains("decode")) cfg.decode = decode_from(j.at("decode"));
    cfg.symbols = j.value("symbols", cfg.symbols);
    cfg.dtype = j.value("dtype", cfg.dtype);
    cfg.seed = j.value("seed", cfg.seed);
    const json data = j.value("data", json::object());
    if (!data.is_object())
      throw Error("BadConfig", "\"data\" must map task names to paths");
    for (const auto& [name, path] : data.items()) {
      if (!path.is_string() || path.get<std::string>().empty())
        throw Error("BadConfig", "data." + name + " must be a non-empty path");
      cfg.data[task_from_name(name)] = path.get<std::string>();
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t,
                 {"out_dir", "ckpt_every", "val_every", "max_tokens",
                  "eval_rows"},
                 "train");
      cfg.out_dir = t.value("out_dir", cfg.out_dir);
      cfg.ckpt_every = t.value("ckpt_every", cfg.ckpt_every);
      cfg.val_every = t.value("val_every", cfg.val_every);
      cfg.max_tokens = t.value("max_tokens", cfg.max_tokens);
      cfg.eval_rows = t.value("eval_rows", cfg.eval_rows);
    }
    if (j.contains("schedule")) {
      json sj = j.at("schedule");
      // Stages may leave datasets implicit; fill them from the run-level
      // data map for the tasks each stage mixes.
      if (sj.is_object() && sj.contains("stages") && sj["stages"].is_array()) {
        for (json& st : sj["stages"]) {
          if (!st.is_object() || st.contains("datasets") ||
              !st.contains("task_mix") || !st["task_mix"].is_object())
            continue;
          json ds = json::object();
          for (const auto& [tname, weight] : st["task_mix"].items()) {
            (void)weight;
            if (data.contains(tname)) ds[tname] = data.at(tname);
          }
          if (!ds.empty()) st["datasets"] = std::move(ds);
        }
      }
      cfg.schedule = train_schedule_from_json(sj.dump());
    }
    cfg.validate();
    return cfg;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("run config: ") + e.what());
  }
}

void RunConfig::validate() const {
  model.validate();
  mel.validate();
  schedule.validate();
  if (dtype != "f32" && dtype != "f64")
    throw Error("BadConfig", "dtype must be \"f32\" or \"f64\"");
  const Vocab vocab = Vocab::from_symbols(symbols);
  if (vocab.size() > model.vocab_size)
    throw Error("BadConfig",
                "vocab needs " + std::to_string(vocab.size()) +
                    " entries but the model embedding table has " +
                    std::to_string(model.vocab_size));
  for (const auto& st : schedule.stages)
    for (const auto& [task, weight] : st.task_mix) {
      (void)weight;
      if (!model.has_task(task))
        throw Error("BadConfig", std::string("schedule trains task ") +
                                     task_name(task) +
                                     " absent from the model task_set");
    }
  if (mel.n_mels != model.n_mels)
    throw Error("BadConfig", "mel.n_mels differs from model.n_mels");
  if (decode.beam < 1) throw Error("BadConfig", "decode.beam must be >= 1");
  if (!(decode.ctc_weight >= 0.0 && decode.ctc_weight <= 1.0))
    throw Error("BadConfig", "decode.ctc_weight must lie in [0, 1]");
  if (!(decode.stop_threshold > 0.0 && decode.stop_threshold < 1.0))
    throw Error("BadConfig", "decode.stop_threshold must lie in (0, 1)");
  for (const auto& [task, path] : data) {
    (void)task;
    if (path.empty()) throw Error("BadConfig", "empty manifest path in data");
  }
  if (ckpt_every < 0 || val_every < 0)
    throw Error("BadConfig", "ckpt_every and val_every must be >= 0");
  if (max_tokens < 1) throw Error("BadConfig", "max_tokens must be >= 1");
  if (eval_rows < 1) throw Error("BadConfig", "eval_rows must be >= 1");
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = parse_or_throw(model_config_to_json(cfg.model), "model");
  j["schedule"] =
      parse_or_throw(train_schedule_to_json(cfg.schedule), "schedule");
  json data = json::object();
  for (const auto& [task, path] : cfg.data) data[task_name(task)] = path;
  j["data"] = std::move(data);
  j["mel"] = {{"n_fft", cfg.mel.n_fft},      {"hop", cfg.mel.hop},
              {"win", cfg.mel.win},          {"n_mels", cfg.mel.n_mels},
              {"fmin", cfg.mel.fmin},        {"fmax", cfg.mel.fmax},
              {"log_floor", cfg.mel.log_floor},
              {"sample_rate", cfg.mel.sample_rate}};
  j["decode"] = {{"beam", cfg.decode.beam},
                 {"ctc_weight", cfg.decode.ctc_weight},
                 {"stop_threshold", cfg.decode.stop_threshold}};
  j["symbols"] = cfg.symbols;
  j["dtype"] = cfg.dtype;
  j["seed"] = cfg.seed;
  j["train"] = {{"out_dir", cfg.out_dir},
                {"ckpt_every", cfg.ckpt_every},
                {"val_every", cfg.val_every},
                {"max_tokens", cfg.max_tokens},
                {"eval_rows", cfg.eval_rows}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Io", "cannot open run config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(interpolate_env(ss.str()));
}

}  // namespace duplex
