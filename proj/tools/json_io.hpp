#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "corss/pipeline.hpp"
#include "corss/synth.hpp"

namespace corss::io {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != static_cast<std::size_t>(m.cols())) throw Error(ErrorCode::parse_error, "ragged matrix");
    for (std::size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

inline json spec_to_json(const SynthSpec& s) {
  json j = {{"task", to_string(s.task)},
            {"channels", s.n_ch},
            {"sources", s.n_sources},
            {"duration_s", s.duration_s},
            {"sample_rate", s.sample_rate},
            {"seed", s.seed}};
  if (s.task == Task::semg_decomposition) {
    j["firing_rate_hz"] = {s.firing_rate_lo_hz, s.firing_rate_hi_hz};
  } else {
    j["breath_rate_bpm"] = s.breath_rate_bpm;
    j["ecg_rate_bpm"] = s.ecg_rate_bpm;
    j["ecg_gain"] = s.ecg_gain;
  }
  if (std::isinf(s.snr_db)) {
    j["snr_db"] = nullptr;
  } else {
    j["snr_db"] = s.snr_db;
  }
  return j;
}

inline json truth_to_json(const GroundTruth& t, const SynthSpec& spec) {
  json j = {{"task", to_string(t.task)}, {"sample_rate", t.sample_rate},
            {"mixing", matrix_to_json(t.mixing)}, {"spec", spec_to_json(spec)}};
  json trains = json::array();
  for (const auto& s : t.spike_trains) trains.push_back({{"source_id", s.source_id}, {"spike_samples", s.spike_samples}});
  j["spike_trains"] = std::move(trains);
  if (!t.gating_curve.empty()) {
    j["gating_curve"] = t.gating_curve;
    j["breath_onsets"] = t.breath_onsets.onset_samples;
    j["ecg_onsets"] = t.ecg_onsets.onset_samples;
  }
  return j;
}

inline GroundTruth truth_from_json(const json& j) {
  try {
    GroundTruth t;
    t.task = parse_task(j.at("task").get<std::string>());
    t.sample_rate = j.at("sample_rate").get<double>();
    t.mixing = matrix_from_json(j.at("mixing"));
    for (const auto& s : j.value("spike_trains", json::array())) {
      t.spike_trains.push_back({s.at("source_id").get<int>(), s.at("spike_samples").get<std::vector<std::int64_t>>(),
                                t.sample_rate});
    }
    if (j.contains("gating_curve")) {
      t.gating_curve = j.at("gating_curve").get<std::vector<double>>();
      t.breath_onsets = {j.at("breath_onsets").get<std::vector<std::int64_t>>(), t.sample_rate};
      t.ecg_onsets = {j.at("ecg_onsets").get<std::vector<std::int64_t>>(), t.sample_rate};
    }
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("ground truth: ") + e.what());
  }
}

inline json schedule_to_json(const ForgettingSchedule& s) {
  return {{"mode", to_string(s.mode)}, {"lambda0", s.lambda0}, {"gamma", s.gamma}, {"lambda_min", s.lambda_min}};
}

inline json config_to_json(const PipelineConfig& c) {
  return {{"task", to_string(c.task)},
          {"algorithm", to_string(c.algorithm)},
          {"block_size", c.block_size},
          {"whiten_schedule", schedule_to_json(c.whiten_schedule)},
          {"separate_schedule", schedule_to_json(c.separate_schedule)},
          {"nonlinearity", {{"kind", to_string(c.nonlinearity.kind)}, {"a0", c.nonlinearity.a0}, {"a1", c.nonlinearity.a1}}},
          {"normalization", to_string(c.normalization)},
          {"block_rule", to_string(c.block_rule)},
          {"remove_mean", c.remove_mean},
          {"k_sigma", c.pulses.detect.k_sigma},
          {"refractory_ms", c.pulses.detect.refractory_ms},
          {"envelope_window_ms", c.envelope.window_ms},
          {"envelope_hop_ms", c.envelope.hop_ms}};
}

inline json identification_to_json(const Identification& id) {
  json j = {{"task", to_string(id.task)}, {"samples_seen", id.samples_seen}, {"from_sample", id.from_sample}};
  if (id.task == Task::semg_decomposition) {
    j["selected"] = id.selected;
    json trains = json::array();
    for (const auto& s : id.spike_trains) trains.push_back({{"source_id", s.source_id}, {"spike_samples", s.spike_samples}});
    j["spike_trains"] = std::move(trains);
  } else {
    j["respiratory_source"] = id.respiratory_source;
    j["envelope"] = {{"window_ms", id.envelope.window_ms}, {"hop_ms", id.envelope.hop_ms}, {"values", id.envelope.values}};
    j["triggers"] = id.triggers.onset_samples;
  }
  return j;
}

inline Identification identification_from_json(const json& j, double sample_rate) {
  try {
    Identification id;
    id.task = parse_task(j.at("task").get<std::string>());
    id.samples_seen = j.at("samples_seen").get<std::int64_t>();
    id.from_sample = j.at("from_sample").get<std::int64_t>();
    if (id.task == Task::semg_decomposition) {
      id.selected = j.at("selected").get<std::vector<int>>();
      for (const auto& s : j.at("spike_trains")) {
        id.spike_trains.push_back({s.at("source_id").get<int>(), s.at("spike_samples").get<std::vector<std::int64_t>>(),
                                   sample_rate});
      }
    } else {
      id.respiratory_source = j.at("respiratory_source").get<int>();
      const auto& e = j.at("envelope");
      id.envelope = {e.at("values").get<std::vector<double>>(), e.at("window_ms").get<double>(),
                     e.at("hop_ms").get<double>(), sample_rate};
      id.triggers = {j.at("triggers").get<std::vector<std::int64_t>>(), sample_rate};
    }
    return id;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("identification: ") + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_json_atomic(const std::filesystem::path& path, const json& j) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out.flush()) throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace corss::io
