// Copyright (c) 2026 The Duplex Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "duplex/model.hpp"

#include "json.hpp"

namespace duplex {

constexpr int ConvStackSpec::kKernels[];
constexpr int ConvStackSpec::kStrides[];

void ModelConfig::validate() const {
  if (d_model <= 0 || d_ffn <= 0 || enc_layers <= 0 || dec_layers <= 0)
    throw Error("BadConfig", "model dimensions must be positive");
  if (heads <= 0 || d_model % heads != 0)
    throw Error("BadConfig", "d_model must be divisible by heads");
  if (vocab_size <= Vocab::kNumSpecials)
    throw Error("BadConfig", "vocab_size must exceed the special tokens");
  if (n_mels <= 0 || d_task <= 0 || d_spk <= 0)
    throw Error("BadConfig", "feature dims must be positive");
  if (task_set.empty()) throw Error("BadConfig", "task_set is empty");
  for (std::size_t i = 0; i < task_set.size(); ++i)
    for (std::size_t j = i + 1; j < task_set.size(); ++j)
      if (task_set[i] == task_set[j])
        throw Error("BadConfig", "duplicate task in task_set");
  if (reduction_factor < 1)
    throw Error("BadConfig", "reduction_factor must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw Error("BadConfig", "dropout must be in [0, 1)");
  if (postnet_layers < 1 || postnet_kernel < 1 || postnet_kernel % 2 == 0)
    throw Error("BadConfig", "postnet needs an odd kernel and >= 1 layer");
}

ModelConfig ModelConfig::paper_shared() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_y() {
  ModelConfig cfg;
  cfg.decoder_topology = DecoderTopology::YDecoder;
  return cfg;
}

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.d_ffn = 256;
  cfg.enc_layers = 3;
  cfg.dec_layers = 2;
  cfg.heads = 4;
  cfg.vocab_size = 16;
  cfg.d_task = 16;
  cfg.d_spk = 32;
  cfg.conv_channels = 64;
  return cfg;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "paper_shared") return paper_shared();
  if (name == "paper_y") return paper_y();
  if (name == "toy") return toy();
  throw Error("BadConfig", "unknown model preset '" + name + "'");
}

std::int64_t speech_prenet_out_len(std::int64_t samples) {
  std::int64_t len = samples;
  for (int i = 0; i < ConvStackSpec::kLayers; ++i) {
    if (len < ConvStackSpec::kKernels[i]) return 0;
    len = (len - ConvStackSpec::kKernels[i]) / ConvStackSpec::kStrides[i] + 1;
  }
  return len;
}

namespace {

std::size_t linear_count(std::size_t in, std::size_t out) {
  return in * out + out;
}
std::size_t ln_count(std::size_t d) { return 2 * d; }
std::size_t mha_count(std::size_t d) { return 4 * linear_count(d, d); }
std::size_t conv_count(std::size_t k, std::size_t cin, std::size_t cout) {
  return k * cin * cout + cout;
}

std::size_t enc_stack_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.d_ffn);
  const std::size_t per =
      mha_count(d) + 2 * ln_count(d) + linear_count(d, f) + linear_count(f, d);
  return static_cast<std::size_t>(c.enc_layers) * per + ln_count(d);
}

std::size_t dec_stack_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.d_ffn);
  const std::size_t per = 2 * mha_count(d) + 3 * ln_count(d) +
                          linear_count(d, f) + linear_count(f, d);
  return static_cast<std::size_t>(c.dec_layers) * per + ln_count(d);
}

}  // namespace

CountBreakdown count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t c = static_cast<std::size_t>(cfg.conv_channels);
  const std::size_t r = static_cast<std::size_t>(cfg.reduction_factor);
  CountBreakdown out;

  if (cfg.needs_speech_input()) {
    std::size_t n = 0;
    std::size_t cin = 1;
    for (int i = 0; i < ConvStackSpec::kLayers; ++i) {
      n += conv_count(static_cast<std::size_t>(ConvStackSpec::kKernels[i]),
                      cin, c);
      cin = c;
    }
    n += ln_count(c) + linear_count(c, d);
    out.items.emplace_back("speech_enc_prenet", n);
  }

  out.items.emplace_back("text_emb", v * d + v);  // table + output bias
  out.items.emplace_back("encoder", enc_stack_count(cfg));

  if (cfg.decoder_topology == DecoderTopology::Shared) {
    out.items.emplace_back("decoder", dec_stack_count(cfg));
  } else {
    out.items.emplace_back("decoder_text", dec_stack_count(cfg));
    out.items.emplace_back("decoder_speech", dec_stack_count(cfg));
  }

  if (cfg.uses_fusion())
    out.items.emplace_back(
        "fusion", linear_count(d + static_cast<std::size_t>(cfg.d_task), d) +
                      cfg.task_set.size() *
                          static_cast<std::size_t>(cfg.d_task));

  if (cfg.needs_speech_output()) {
    const std::size_t h = static_cast<std::size_t>(cfg.prenet_hidden);
    const std::size_t m = static_cast<std::size_t>(cfg.n_mels);
    out.items.emplace_back(
        "speech_dec_prenet",
        linear_count(m, h) + linear_count(h, h) + linear_count(h, d) +
            linear_count(d + static_cast<std::size_t>(cfg.d_spk), d));
    const std::size_t k = static_cast<std::size_t>(cfg.postnet_kernel);
    const std::size_t p = static_cast<std::size_t>(cfg.postnet_channels);
    std::size_t post = linear_count(d, m * r) + linear_count(d, r);
    std::size_t pin = m;
    for (int i = 0; i < cfg.postnet_layers; ++i) {
      const std::size_t pout = (i + 1 == cfg.postnet_layers) ? m : p;
      post += conv_count(k, pin, pout);
      pin = pout;
    }
    out.items.emplace_back("speech_dec_postnet", post);
  }

  if (cfg.has_task(TaskId::ASR))
    out.items.emplace_back("ctc", linear_count(d, v));

  for (const auto& [name, n] : out.items) out.total += n;
  return out;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["d_model"] = cfg.d_model;
  j["d_ffn"] = cfg.d_ffn;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["heads"] = cfg.heads;
  j["vocab_size"] = cfg.vocab_size;
  j["n_mels"] = cfg.n_mels;
  j["d_task"] = cfg.d_task;
  j["d_spk"] = cfg.d_spk;
  j["conv_channels"] = cfg.conv_channels;
  j["prenet_hidden"] = cfg.prenet_hidden;
  j["postnet_channels"] = cfg.postnet_channels;
  j["postnet_kernel"] = cfg.postnet_kernel;
  j["postnet_layers"] = cfg.postnet_layers;
  std::vector<std::string> tasks;
  for (TaskId t : cfg.task_set) tasks.emplace_back(task_name(t));
  j["task_set"] = tasks;
  j["fusion_position"] = cfg.fusion_position == FusionPosition::PreEncoder
                             ? "pre_encoder"
                             : "post_encoder";
  j["decoder_topology"] =
      cfg.decoder_topology == DecoderTopology::YDecoder ? "y" : "shared";
  j["reduction_factor"] = cfg.reduction_factor;
  j["dropout"] = cfg.dropout;
  j["ctc_on_fused"] = cfg.ctc_on_fused;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("model config json: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.d_ffn = j.at("d_ffn").get<int>();
    cfg.enc_layers = j.at("enc_layers").get<int>();
    cfg.dec_layers = j.at("dec_layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.n_mels = j.at("n_mels").get<int>();
    cfg.d_task = j.at("d_task").get<int>();
    cfg.d_spk = j.at("d_spk").get<int>();
    cfg.conv_channels = j.at("conv_channels").get<int>();
    cfg.prenet_hidden = j.at("prenet_hidden").get<int>();
    cfg.postnet_channels = j.at("postnet_channels").get<int>();
    cfg.postnet_kernel = j.at("postnet_kernel").get<int>();
    cfg.postnet_layers = j.at("postnet_layers").get<int>();
    cfg.task_set.clear();
    for (const auto& t : j.at("task_set"))
      cfg.task_set.push_back(task_from_name(t.get<std::string>()));
    const auto fusion = j.at("fusion_position").get<std::string>();
    if (fusion == "pre_encoder") {
      cfg.fusion_position = FusionPosition::PreEncoder;
    } else if (fusion == "post_encoder") {
      cfg.fusion_position = FusionPosition::PostEncoder;
    } else {
      throw Error("Parse", "unknown fusion_position '" + fusion + "'");
    }
    const auto topo = j.at("decoder_topology").get<std::string>();
    if (topo == "y") {
      cfg.decoder_topology = DecoderTopology::YDecoder;
    } else if (topo == "shared") {
      cfg.decoder_topology = DecoderTopology::Shared;
    } else {
      throw Error("Parse", "unknown decoder_topology '" + topo + "'");
    }
    cfg.reduction_factor = j.at("reduction_factor").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.ctc_on_fused = j.at("ctc_on_fused").get<bool>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("model config fields: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace duplex
