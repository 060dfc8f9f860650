// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include "duplex/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace duplex {

using nlohmann::json;

namespace {

void check_lr(const LrConfig& cfg) {
  if (!(cfg.peak > 0.0))
    throw Error("BadConfig", "lr peak must be positive");
  double sum = 0.0;
  for (double r : cfg.phase_ratios) {
    if (r < 0.0) throw Error("BadConfig", "lr phase ratios must be >= 0");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error("BadConfig", "lr phase ratios must sum to 1");
  if (!(cfg.init_scale > 0.0) || cfg.init_scale > 1.0 ||
      !(cfg.final_scale > 0.0) || cfg.final_scale > 1.0)
    throw Error("BadConfig", "lr scales must lie in (0, 1]");
}

std::string json_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double tri_stage_lr(std::int64_t update, const LrConfig& cfg,
                    std::int64_t total) {
  check_lr(cfg);
  if (total < 0) throw Error("BadConfig", "total updates must be >= 0");
  if (update < 0 || update > total)
    throw Error("BadConfig", "update index outside [0, total]");
  const std::int64_t warm = std::llround(cfg.phase_ratios[0] * double(total));
  std::int64_t hold = std::llround(cfg.phase_ratios[1] * double(total));
  hold = std::min(hold, total - warm);
  const std::int64_t decay = total - warm - hold;
  if (update < warm) {
    const double frac = double(update) / double(warm);
    return cfg.peak * (cfg.init_scale + (1.0 - cfg.init_scale) * frac);
  }
  if (update < warm + hold) return cfg.peak;
  const double t =
      decay > 0 ? double(update - warm - hold) / double(decay) : 1.0;
  return cfg.peak * std::exp(std::log(cfg.final_scale) * t);
}

void TrainSchedule::validate() const {
  if (total_updates < 0)
    throw Error("BadConfig", "total_updates must be >= 0");
  if (update_frequency < 1)
    throw Error("BadConfig", "update_frequency must be >= 1");
  check_lr(lr);
  if (!(optimizer.beta1 >= 0.0) || optimizer.beta1 >= 1.0 ||
      !(optimizer.beta2 >= 0.0) || optimizer.beta2 >= 1.0)
    throw Error("BadConfig", "adam betas must lie in [0, 1)");
  if (!(optimizer.eps > 0.0))
    throw Error("BadConfig", "adam eps must be positive");
  if (!(optimizer.clip_norm > 0.0))
    throw Error("BadConfig", "clip_norm must be positive");
  if (total_updates == 0) {
    if (!stages.empty())
      throw Error("BadConfig", "a 0-update schedule must have no stages");
    return;
  }
  if (stages.empty())
    throw Error("BadConfig", "schedule with updates needs at least one stage");
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const TrainStage& st = stages[i];
    if (st.until <= prev)
      throw Error("BadConfig", "stage ranges must be ascending and non-empty");
    prev = st.until;
    if (st.task_mix.empty())
      throw Error("BadConfig", "stage has an empty task_mix");
    for (const auto& [t, w] : st.task_mix)
      if (!(w > 0.0) || !std::isfinite(w))
        throw Error("BadConfig", "task_mix weights must be positive");
    for (const auto& [t, w] : st.task_mix)
      if (!st.datasets.count(t))
        throw Error("BadConfig", std::string("stage lacks a dataset for ") +
                                     task_name(t));
    for (const auto& [t, p] : st.datasets)
      if (!st.task_mix.count(t))
        throw Error("BadConfig",
                    std::string("stage has a dataset for inactive task ") +
                        task_name(t));
    for (const auto& [t, n] : st.caps) {
      if (!st.task_mix.count(t))
        throw Error("BadConfig", "cap given for a task outside the mix");
      if (n < 1) throw Error("BadConfig", "caps must be >= 1");
    }
    for (const auto& [t, names] : st.loss_set) {
      if (!st.task_mix.count(t))
        throw Error("BadConfig", "loss_set given for a task outside the mix");
      if (names.empty())
        throw Error("BadConfig", "loss_set subsets may not be empty");
      for (const std::string& n : names) {
        const bool asr_term = n == "ce" || n == "ctc";
        const bool tts_term = n == "l1" || n == "bce" || n == "attn";
        if (t == TaskId::ASR ? !asr_term : !tts_term)
          throw Error("BadConfig",
                      "loss term '" + n + "' does not belong to task " +
                          task_name(t));
      }
    }
  }
  if (prev != total_updates)
    throw Error("BadConfig", "stages must cover [0, total_updates) exactly");
}

int TrainSchedule::stage_index_at(std::int64_t update) const {
  for (std::size_t i = 0; i < stages.size(); ++i)
    if (update < stages[i].until) return int(i);
  throw Error("BadConfig", "update index past the final stage");
}

LossFlags loss_flags_for(const TrainStage& st, TaskId task) {
  LossFlags lf;
  auto it = st.loss_set.find(task);
  if (it == st.loss_set.end()) return lf;
  lf = LossFlags{false, false, false, false, false};
  for (const std::string& n : it->second) {
    if (n == "ce") lf.ce = true;
    if (n == "ctc") lf.ctc = true;
    if (n == "l1") lf.l1 = true;
    if (n == "bce") lf.bce = true;
    if (n == "attn") lf.attn = true;
  }
  return lf;
}

TrainSchedule train_schedule_from_json(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    TrainSchedule s;
    s.total_updates = j.at("total_updates").get<std::int64_t>();
    s.update_frequency = j.value("update_frequency", 1);
    if (j.contains("lr")) {
      const json& lr = j.at("lr");
      s.lr.peak = lr.at("peak").get<double>();
      if (lr.contains("phase_ratios")) {
        const json& pr = lr.at("phase_ratios");
        if (!pr.is_array() || pr.size() != 3)
          throw Error("BadConfig", "phase_ratios must be an array of 3");
        for (int i = 0; i < 3; ++i)
          s.lr.phase_ratios[std::size_t(i)] = pr.at(i).get<double>();
      }
      s.lr.init_scale = lr.value("init_scale", s.lr.init_scale);
      s.lr.final_scale = lr.value("final_scale", s.lr.final_scale);
    }
    if (j.contains("optimizer")) {
      const json& op = j.at("optimizer");
      s.optimizer.beta1 = op.value("beta1", s.optimizer.beta1);
      s.optimizer.beta2 = op.value("beta2", s.optimizer.beta2);
      s.optimizer.eps = op.value("eps", s.optimizer.eps);
      s.optimizer.clip_norm = op.value("clip_norm", s.optimizer.clip_norm);
    }
    for (const json& js : j.value("stages", json::array())) {
      TrainStage st;
      st.until = js.at("until").get<std::int64_t>();
      for (const auto& [k, v] : js.at("task_mix").items())
        st.task_mix[task_from_name(k)] = v.get<double>();
      for (const auto& [k, v] : js.at("datasets").items())
        st.datasets[task_from_name(k)] = v.get<std::string>();
      if (js.contains("caps"))
        for (const auto& [k, v] : js.at("caps").items())
          st.caps[task_from_name(k)] = v.get<std::int64_t>();
      if (js.contains("loss_set"))
        for (const auto& [k, v] : js.at("loss_set").items())
          st.loss_set[task_from_name(k)] =
              v.get<std::vector<std::string>>();
      st.frozen_groups =
          js.value("frozen_groups", std::vector<std::string>{});
      s.stages.push_back(std::move(st));
    }
    s.validate();
    return s;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("bad schedule JSON: ") + e.what());
  }
}

std::string train_schedule_to_json(const TrainSchedule& s) {
  json j;
  j["total_updates"] = s.total_updates;
  j["update_frequency"] = s.update_frequency;
  j["lr"] = {{"peak", s.lr.peak},
             {"phase_ratios", s.lr.phase_ratios},
             {"init_scale", s.lr.init_scale},
             {"final_scale", s.lr.final_scale}};
  j["optimizer"] = {{"beta1", s.optimizer.beta1},
                    {"beta2", s.optimizer.beta2},
                    {"eps", s.optimizer.eps},
                    {"clip_norm", s.optimizer.clip_norm}};
  j["stages"] = json::array();
  for (const TrainStage& st : s.stages) {
    json js;
    js["until"] = st.until;
    js["task_mix"] = json::object();
    for (const auto& [t, w] : st.task_mix) js["task_mix"][task_name(t)] = w;
    js["datasets"] = json::object();
    for (const auto& [t, p] : st.datasets) js["datasets"][task_name(t)] = p;
    if (!st.caps.empty()) {
      js["caps"] = json::object();
      for (const auto& [t, n] : st.caps) js["caps"][task_name(t)] = n;
    }
    if (!st.loss_set.empty()) {
      js["loss_set"] = json::object();
      for (const auto& [t, v] : st.loss_set) js["loss_set"][task_name(t)] = v;
    }
    js["frozen_groups"] = st.frozen_groups;
    j["stages"].push_back(std::move(js));
  }
  return j.dump(2);
}

TrainSchedule load_train_schedule(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Io", "cannot open schedule file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return train_schedule_from_json(ss.str());
}

std::string ValMetrics::to_json() const {
  json j;
  j["asr_acc"] = asr_acc ? json(*asr_acc) : json(nullptr);
  j["tts_l1"] = tts_l1 ? json(*tts_l1) : json(nullptr);
  j["vc_l1"] = vc_l1 ? json(*vc_l1) : json(nullptr);
  return j.dump();
}

namespace detail {

namespace {

std::uint64_t avalanche(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c) {
  Fnv1a h;
  const std::uint64_t w[4] = {seed, a, b, c};
  h.update(w, sizeof w);
  return avalanche(h.digest());
}

double inclusion_u01(std::uint64_t seed, std::int64_t update, int micro,
                     TaskId task) {
  const std::uint64_t x =
      mix_seed(seed ^ 0x1A5C1B5Du, std::uint64_t(update),
               std::uint64_t(micro), std::uint64_t(task));
  return double(x >> 11) * 0x1.0p-53;
}

std::string metrics_line(std::int64_t update, double lr,
                         const LossReport* rep, bool skipped,
                         std::int64_t skipped_total, const ValMetrics* val) {
  std::ostringstream os;
  os << "{\"update\":" << update << ",\"lr\":" << json_num(lr) << ",\"loss\":"
     << (rep ? rep->to_json() : std::string("null"))
     << ",\"skipped\":" << (skipped ? "true" : "false")
     << ",\"skipped_total\":" << skipped_total;
  if (val) os << ",\"val\":" << val->to_json();
  os << "}";
  return os.str();
}

std::string stage_line(std::int64_t update, int stage,
                       const std::vector<TaskId>& tasks) {
  json names = json::array();
  for (TaskId t : tasks) names.push_back(task_name(t));
  std::ostringstream os;
  os << "{\"update\":" << update << ",\"stage\":" << stage
     << ",\"tasks\":" << names.dump() << "}";
  return os.str();
}

}  // namespace detail

}  // namespace duplex
