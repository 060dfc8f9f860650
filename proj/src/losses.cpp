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

#include "duplex/losses.hpp"

#include <cmath>

#include "json.hpp"

namespace duplex {

namespace {

nlohmann::json opt_field(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw Error("NonFinite", std::string(what) + " is not finite");
}

}  // namespace

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["ce"] = opt_field(ce);
  j["ctc"] = opt_field(ctc);
  j["l1"] = opt_field(l1);
  j["bce"] = opt_field(bce);
  j["attn"] = opt_field(attn);
  j["asr_total"] = asr_total;
  j["tts_total"] = tts_total;
  j["joint"] = joint;
  j["n_asr"] = n_asr;
  j["n_tts"] = n_tts;
  return j.dump();
}

LossReport asr_sample_report(double ce, double ctc) {
  check_finite(ce, "ce");
  check_finite(ctc, "ctc");
  LossReport r;
  r.ce = ce;
  r.ctc = ctc;
  r.asr_total = ce + ctc;
  r.joint = r.asr_total;
  r.n_asr = 1;
  return r;
}

LossReport tts_sample_report(double l1, double bce, double attn) {
  check_finite(l1, "l1");
  check_finite(bce, "bce");
  check_finite(attn, "attn");
  LossReport r;
  r.l1 = l1;
  r.bce = bce;
  r.attn = attn;
  r.tts_total = l1 + bce + attn;
  r.joint = r.tts_total;
  r.n_tts = 1;
  return r;
}

LossReport joint_loss(const std::vector<LossReport>& asr_reports,
                      const std::vector<LossReport>& tts_reports) {
  if (asr_reports.empty() && tts_reports.empty())
    throw Error("EmptyStep", "joint_loss got no samples for either task");

  LossReport out;
  out.n_asr = static_cast<int>(asr_reports.size());
  out.n_tts = static_cast<int>(tts_reports.size());

  if (!asr_reports.empty()) {
    double ce = 0.0, ctc = 0.0;
    for (const auto& r : asr_reports) {
      check_finite(r.asr_total, "asr_total");
      ce += r.ce.value_or(0.0);
      ctc += r.ctc.value_or(0.0);
    }
    out.ce = ce / out.n_asr;
    out.ctc = ctc / out.n_asr;
    out.asr_total = *out.ce + *out.ctc;
  }
  if (!tts_reports.empty()) {
    double l1 = 0.0, bce = 0.0, attn = 0.0;
    for (const auto& r : tts_reports) {
      check_finite(r.tts_total, "tts_total");
      l1 += r.l1.value_or(0.0);
      bce += r.bce.value_or(0.0);
      attn += r.attn.value_or(0.0);
    }
    out.l1 = l1 / out.n_tts;
    out.bce = bce / out.n_tts;
    out.attn = attn / out.n_tts;
    out.tts_total = *out.l1 + *out.bce + *out.attn;
  }
  out.joint = out.asr_total + out.tts_total;
  return out;
}

}  // namespace duplex
