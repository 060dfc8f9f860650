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

#include "duplex/ckpt.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace duplex {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'T', '1'};

std::uint64_t fnv1a_bytes(const std::vector<char>& bytes) {
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  return h.digest();
}

}  // namespace

void write_stt1(const std::string& path, const std::string& header_json,
                const std::vector<char>& payload) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_json);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("checkpoint header: ") + e.what());
  }
  header["payload_fnv1a"] = fnv1a_bytes(payload);
  const std::string packed = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("Io", "cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  const std::uint64_t len = packed.size();
  char lenb[8];
  for (int i = 0; i < 8; ++i) lenb[i] = char((len >> (8 * i)) & 0xFF);
  out.write(lenb, 8);
  out.write(packed.data(), std::streamsize(packed.size()));
  out.write(payload.data(), std::streamsize(payload.size()));
  if (!out) throw Error("Io", "write failed for '" + path + "'");
}

RawCheckpoint read_stt1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Io", "cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error("Parse", "'" + path + "' is not an STT1 checkpoint");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= std::uint64_t(static_cast<unsigned char>(bytes[4 + std::size_t(i)]))
           << (8 * i);
  if (12 + len > bytes.size())
    throw Error("Parse", "checkpoint header is truncated");
  RawCheckpoint raw;
  raw.header_json.assign(bytes.data() + 12, len);
  raw.payload.assign(bytes.begin() + 12 + std::ptrdiff_t(len), bytes.end());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.header_json);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("checkpoint header: ") + e.what());
  }
  if (!header.contains("payload_fnv1a") ||
      header["payload_fnv1a"].get<std::uint64_t>() !=
          fnv1a_bytes(raw.payload))
    throw Error("Parse", "checkpoint payload checksum mismatch, refusing "
                         "to resume from '" + path + "'");
  return raw;
}

std::string build_ckpt_header(const std::string& dtype,
                              const ModelConfig& config,
                              const TrainStateBlob* train,
                              const std::vector<TensorEntry>& table) {
  nlohmann::json j;
  j["dtype"] = dtype;
  j["model"] = nlohmann::json::parse(model_config_to_json(config));
  if (train) {
    nlohmann::json t;
    t["global_update"] = train->global_update;
    t["micro_step"] = train->micro_step;
    t["stage_index"] = train->stage_index;
    t["adam_step"] = train->adam_step;
    t["skipped_updates"] = train->skipped_updates;
    t["rng_state"] = train->rng_state;
    t["kv"] = train->kv;
    j["train"] = t;
  } else {
    j["train"] = nullptr;
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : table)
    tensors.push_back({{"name", e.name},
                       {"rows", e.rows},
                       {"cols", e.cols},
                       {"offset", e.offset}});
  j["tensors"] = tensors;
  return j.dump();
}

ParsedCkptHeader parse_ckpt_header(const std::string& header_json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header_json);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("checkpoint header: ") + e.what());
  }
  ParsedCkptHeader out;
  try {
    out.dtype = j.at("dtype").get<std::string>();
    out.config = model_config_from_json(j.at("model").dump());
    if (!j.at("train").is_null()) {
      const auto& t = j.at("train");
      out.has_train = true;
      out.train.global_update = t.at("global_update").get<std::int64_t>();
      out.train.micro_step = t.at("micro_step").get<int>();
      out.train.stage_index = t.at("stage_index").get<std::int64_t>();
      out.train.adam_step = t.at("adam_step").get<std::int64_t>();
      out.train.skipped_updates = t.at("skipped_updates").get<std::int64_t>();
      out.train.rng_state = t.at("rng_state").get<std::string>();
      out.train.kv =
          t.at("kv").get<std::map<std::string, std::string>>();
    }
    for (const auto& e : j.at("tensors")) {
      TensorEntry te;
      te.name = e.at("name").get<std::string>();
      te.rows = e.at("rows").get<std::int64_t>();
      te.cols = e.at("cols").get<std::int64_t>();
      te.offset = e.at("offset").get<std::int64_t>();
      out.table.push_back(std::move(te));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("checkpoint header fields: ") + e.what());
  }
  return out;
}

}  // namespace duplex
