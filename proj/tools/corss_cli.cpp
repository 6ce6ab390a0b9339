// corss: synthesize recordings, run the streaming separator, evaluate and
// benchmark it.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "corss/metrics.hpp"
#include "corss/pipeline.hpp"
#include "corss/signal_file.hpp"
#include "corss/synth.hpp"
#include "json_io.hpp"

namespace fs = std::filesystem;
using corss::Error;
using corss::ErrorCode;
using corss::io::json;

namespace {

fs::path sidecar_path(const fs::path& signal) {
  auto p = signal;
  p.replace_extension(".truth.json");
  return p;
}

// ----------------------------------------------------------------- synth

struct SynthArgs {
  std::string task = "semg";
  std::optional<int> channels, sources;
  std::optional<double> duration, rate, snr;
  std::optional<double> firing_lo, firing_hi, breath_rate, ecg_rate, ecg_gain;
  std::uint64_t seed = 0;
  bool no_noise = false;
  std::string out = "recording.sig";
};

int cmd_synth(const SynthArgs& a) {
  const auto task = corss::parse_task(a.task);
  auto spec = task == corss::Task::semg_decomposition ? corss::SynthSpec::mu_default(a.seed)
                                                      : corss::SynthSpec::emgdi_default(a.seed);
  if (a.channels) spec.n_ch = *a.channels;
  if (a.sources) spec.n_sources = *a.sources;
  if (a.duration) spec.duration_s = *a.duration;
  if (a.rate) spec.sample_rate = *a.rate;
  if (a.snr) spec.snr_db = *a.snr;
  if (a.no_noise) spec.snr_db = std::numeric_limits<double>::infinity();
  if (a.firing_lo) spec.firing_rate_lo_hz = *a.firing_lo;
  if (a.firing_hi) spec.firing_rate_hi_hz = *a.firing_hi;
  if (a.breath_rate) spec.breath_rate_bpm = *a.breath_rate;
  if (a.ecg_rate) spec.ecg_rate_bpm = *a.ecg_rate;
  if (a.ecg_gain) spec.ecg_gain = *a.ecg_gain;

  const auto rec = corss::generate(spec);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  corss::write_signal_file(out, rec.data);
  corss::io::write_json_atomic(sidecar_path(out), corss::io::truth_to_json(rec.truth, spec));
  std::cout << out.string() << '\n' << sidecar_path(out).string() << '\n';
  return 0;
}

// ------------------------------------------------------------------- run

struct RunArgs {
  std::string input;
  std::string out_dir = "run";
  std::string algorithm = "corss";
  std::string task = "semg";
  std::int64_t block = 200;
  std::optional<double> lambda0, gamma, lambda_min, a0, a1, k_sigma;
  std::string block_rule = "recursive";
  std::string normalization = "orthonormal";
  std::int64_t burn_in = -1;
  std::int64_t checkpoint_blocks = 0;
};

corss::PipelineConfig make_config(const RunArgs& a) {
  auto cfg = corss::PipelineConfig::preset(corss::parse_task(a.task), corss::parse_algorithm(a.algorithm));
  cfg.block_size = a.block;
  auto apply = [&](corss::ForgettingSchedule& s) {
    if (a.lambda0) s.lambda0 = *a.lambda0;
    if (a.gamma) s.gamma = *a.gamma;
    if (a.lambda_min) s.lambda_min = *a.lambda_min;
  };
  apply(cfg.whiten_schedule);
  apply(cfg.separate_schedule);
  if (a.a0 || a.a1) {
    cfg.nonlinearity = corss::NonlinearityConfig::constrained(a.a0.value_or(1.0), a.a1.value_or(4.0));
  }
  if (a.k_sigma) cfg.pulses.detect.k_sigma = *a.k_sigma;
  if (a.block_rule == "recursive") {
    cfg.block_rule = corss::BlockRule::recursive;
  } else if (a.block_rule == "as-printed") {
    cfg.block_rule = corss::BlockRule::as_printed;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown block rule '" + a.block_rule + "'");
  }
  if (a.normalization == "orthonormal") {
    cfg.normalization = corss::Normalization::orthonormal;
  } else if (a.normalization == "unit-rows") {
    cfg.normalization = corss::Normalization::unit_rows;
  } else if (a.normalization == "none") {
    cfg.normalization = corss::Normalization::none;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown normalization '" + a.normalization + "'");
  }
  cfg.burn_in_samples = a.burn_in;
  cfg.checkpoint_every_blocks = a.checkpoint_blocks;
  cfg.validate();
  return cfg;
}

json latency_json(const corss::LatencyReport& r) {
  return {{"block_size", r.block_size}, {"mean_s", r.mean_s}, {"std_s", r.std_s},
          {"max_s", r.max_s}, {"realtime_ratio", r.realtime_ratio}};
}

int cmd_run(const RunArgs& a) {
  const auto cfg = make_config(a);
  // a summary only ever describes a run that finished
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  fs::remove(dir / "summary.json");

  corss::SignalReader reader(a.input);
  const auto& h = reader.header();

  corss::Pipeline pipe(cfg, h.n_ch, h.sample_rate);
  corss::SignalWriter sources(dir / "sources.sig", h.n_ch, h.sample_rate);
  std::ofstream blocks(dir / "blocks.csv", std::ios::trunc);
  std::ofstream global(dir / "global.csv", std::ios::trunc);
  if (!blocks || !global) throw Error(ErrorCode::io_error, "cannot write into " + dir.string());
  blocks << "block_index,start_sample,length,elapsed_s,skipped,row_norm_min,row_norm_max\n";
  global.precision(17);
  global << "block_index";
  for (int i = 0; i < h.n_ch; ++i)
    for (int j = 0; j < h.n_ch; ++j) global << ",g" << i << '_' << j;
  global << '\n';

  std::vector<double> timings;
  while (auto block = reader.next(cfg.block_size)) {
    const auto out = pipe.process(*block);
    timings.push_back(out.elapsed_s);
    sources.append(out.sources.samples);
    blocks << out.block_index << ',' << out.sources.start_index << ',' << out.sources.length() << ','
           << out.elapsed_s << ',' << out.skipped << ',' << out.row_norms.minCoeff() << ','
           << out.row_norms.maxCoeff() << '\n';
    global << out.block_index;
    for (Eigen::Index i = 0; i < out.global.rows(); ++i)
      for (Eigen::Index j = 0; j < out.global.cols(); ++j) global << ',' << out.global(i, j);
    global << '\n';
    blocks.flush();
    global.flush();
  }
  sources.close();

  const auto id = pipe.identify();
  json ident = corss::io::identification_to_json(id);
  json checkpoints = json::array();
  for (const auto& c : pipe.checkpoints()) {
    json cj = {{"samples_seen", c.samples_seen}};
    if (c.task == corss::Task::semg_decomposition) {
      cj["selected"] = c.selected.size();
    } else {
      cj["respiratory_source"] = c.respiratory_source;
      cj["triggers"] = c.triggers.onset_samples.size();
    }
    checkpoints.push_back(std::move(cj));
  }
  ident["checkpoints"] = std::move(checkpoints);
  corss::io::write_json_atomic(dir / "identification.json", ident);

  if (id.task == corss::Task::emgdi_monitoring) {
    std::ofstream env(dir / "envelope.csv", std::ios::trunc);
    env << "frame,time_s,value\n";
    env.precision(12);
    for (std::size_t i = 0; i < id.envelope.values.size(); ++i) {
      env << i << ',' << static_cast<double>(id.envelope.frame_center(i)) / h.sample_rate << ','
          << id.envelope.values[i] << '\n';
    }
  }

  json summary = {{"input", fs::path(a.input).filename().string()},
                  {"channels", h.n_ch},
                  {"sample_rate", h.sample_rate},
                  {"samples", pipe.samples_seen()},
                  {"blocks", pipe.blocks_seen()},
                  {"burn_in_samples", pipe.burn_in()},
                  {"skipped_samples", pipe.separator().skipped_samples},
                  {"config", corss::io::config_to_json(cfg)},
                  {"final_global", corss::io::matrix_to_json(pipe.separator().unmixing * pipe.whitener().whitening)}};
  if (id.task == corss::Task::semg_decomposition) {
    summary["selected_sources"] = id.selected;
  } else {
    summary["respiratory_source"] = id.respiratory_source;
    summary["triggers"] = id.triggers.onset_samples.size();
  }
  if (!timings.empty()) summary["latency"] = latency_json(corss::latency_stats(timings, cfg.block_size, h.sample_rate));
  corss::io::write_json_atomic(dir / "summary.json", summary);
  std::cout << (dir / "summary.json").string() << '\n';
  return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string run_dir;
  std::string truth;
  std::string reference;
  double tolerance_ms = 0.5;
  double trigger_tolerance_ms = 300.0;
  std::string out;
  std::string trace_csv;
  std::int64_t trace_every = 1;
  double trace_window_s = 10.0;
};

struct LoadedRun {
  json summary;
  corss::Identification id;
  double sample_rate = 0.0;
  corss::EnvelopeConfig envelope;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.summary = corss::io::read_json(dir / "summary.json");
  try {
    r.sample_rate = r.summary.at("sample_rate").get<double>();
    const auto& c = r.summary.at("config");
    r.envelope.window_ms = c.at("envelope_window_ms").get<double>();
    r.envelope.hop_ms = c.at("envelope_hop_ms").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, (dir / "summary.json").string() + ": " + e.what());
  }
  r.id = corss::io::identification_from_json(corss::io::read_json(dir / "identification.json"), r.sample_rate);
  return r;
}

std::vector<corss::BlockOutput> load_block_outputs(const fs::path& dir) {
  corss::SignalReader reader(dir / "sources.sig");
  const int n = reader.header().n_ch;
  std::ifstream blocks(dir / "blocks.csv"), global(dir / "global.csv");
  if (!blocks || !global) throw Error(ErrorCode::io_error, "run directory lacks blocks.csv or global.csv");
  std::string bl, gl;
  std::getline(blocks, bl);
  std::getline(global, gl);
  std::vector<corss::BlockOutput> out;
  while (std::getline(blocks, bl) && std::getline(global, gl)) {
    std::vector<std::string> bf, gf;
    std::stringstream bs(bl), gs(gl);
    std::string cell;
    while (std::getline(bs, cell, ',')) bf.push_back(cell);
    while (std::getline(gs, cell, ',')) gf.push_back(cell);
    if (bf.size() != 7 || gf.size() != static_cast<std::size_t>(1 + n * n)) {
      throw Error(ErrorCode::parse_error, "malformed block diagnostics");
    }
    corss::BlockOutput o;
    o.block_index = std::stoll(bf[0]);
    const auto len = std::stoll(bf[2]);
    auto b = reader.next(len);
    if (!b || b->length() != len) throw Error(ErrorCode::stream_corrupt, "sources.sig shorter than blocks.csv");
    o.sources = *b;
    o.elapsed_s = std::stod(bf[3]);
    o.global.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) o.global(i, j) = std::stod(gf[static_cast<std::size_t>(1 + i * n + j)]);
    out.push_back(std::move(o));
  }
  return out;
}

json eval_against_truth(const LoadedRun& run, const corss::GroundTruth& truth, const EvalArgs& a) {
  json m = {{"reference", "truth"}, {"tolerance_ms", a.tolerance_ms}};
  if (run.id.task == corss::Task::semg_decomposition) {
    const auto s = corss::score_decomposition(run.id.spike_trains, truth, run.id.from_sample, a.tolerance_ms);
    m["per_source_mr"] = s.per_source_mr;
    m["assigned_output"] = s.assigned_output;
    m["recovered"] = s.recovered;
    m["mean_mr"] = s.mean_mr;
  } else {
    const auto s = corss::score_monitoring(run.id, truth, run.envelope, a.trigger_tolerance_ms);
    m["corr"] = s.corr;
    m["rmse_percent"] = s.rmse_percent;
    m["gain"] = s.gain;
    m["trigger_mr"] = s.triggers.mr;
    m["triggers_detected"] = s.triggers.n_a;
    m["triggers_true"] = s.triggers.n_b;
    m["triggers_matched"] = s.triggers.n_common;
  }
  return m;
}

json eval_against_run(const LoadedRun& run, const LoadedRun& ref, const EvalArgs& a) {
  json m = {{"reference", "run"}, {"tolerance_ms", a.tolerance_ms}};
  if (run.id.task != ref.id.task) throw Error(ErrorCode::invalid_argument, "runs were made for different tasks");
  if (run.id.task == corss::Task::semg_decomposition) {
    std::vector<double> per(ref.id.spike_trains.size(), 0.0);
    for (const auto& p : corss::best_assignment(run.id.spike_trains, ref.id.spike_trains, a.tolerance_ms))
      per[p.reference] = p.match.mr;
    double mean = 0.0;
    for (double v : per) mean += v;
    const bool both_empty = per.empty() && run.id.spike_trains.empty();
    m["per_source_mr"] = per;
    m["mean_mr"] = per.empty() ? (both_empty ? 1.0 : 0.0) : mean / static_cast<double>(per.size());
  } else {
    const auto hop = ref.id.envelope.hop_samples();
    const auto s = corss::score_envelope(run.id.envelope, ref.id.envelope,
                                         static_cast<std::size_t>((ref.id.from_sample + hop - 1) / hop));
    m["corr"] = s.corr;
    m["rmse_percent"] = s.rmse_percent;
    m["gain"] = s.gain;
    m["trigger_mr"] = corss::matching_rate(corss::as_spike_train(run.id.triggers),
                                           corss::as_spike_train(ref.id.triggers), a.trigger_tolerance_ms).mr;
  }
  return m;
}

void write_trace_csv(const fs::path& path, const std::vector<corss::TracePoint>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.precision(10);
  out << "block_index,sample_end,time_s,amari,corr,rmse_percent,mean_mr\n";
  auto cell = [&](double v) -> std::ostream& {
    if (std::isnan(v)) return out;
    return out << v;
  };
  for (const auto& p : trace) {
    out << p.block_index << ',' << p.sample_end << ',' << p.time_s << ',';
    cell(p.amari) << ',';
    cell(p.corr) << ',';
    cell(p.rmse_percent) << ',';
    cell(p.mean_mr) << '\n';
  }
}

int cmd_eval(const EvalArgs& a) {
  if (a.truth.empty() == a.reference.empty()) {
    throw Error(ErrorCode::invalid_argument, "give exactly one of --truth or --reference");
  }
  const fs::path dir(a.run_dir);
  const auto run = load_run(dir);
  json metrics;
  if (!a.truth.empty()) {
    const auto truth = corss::io::truth_from_json(corss::io::read_json(a.truth));
    if (truth.sample_rate != run.sample_rate) {
      throw Error(ErrorCode::invalid_argument, "sample rates differ: run " + std::to_string(run.sample_rate) +
                                                   " Hz, truth " + std::to_string(truth.sample_rate) + " Hz");
    }
    metrics = eval_against_truth(run, truth, a);
    if (!a.trace_csv.empty()) {
      corss::TraceOptions opt;
      opt.every_blocks = a.trace_every;
      opt.window_s = a.trace_window_s;
      opt.envelope = run.envelope;
      opt.tolerance_ms = a.tolerance_ms;
      write_trace_csv(a.trace_csv, corss::convergence_trace(load_block_outputs(dir), truth, opt));
      metrics["trace_csv"] = fs::path(a.trace_csv).filename().string();
    }
  } else {
    const auto ref = load_run(a.reference);
    if (ref.sample_rate != run.sample_rate) {
      throw Error(ErrorCode::invalid_argument, "sample rates differ between runs");
    }
    metrics = eval_against_run(run, ref, a);
  }
  const fs::path out = a.out.empty() ? dir / "metrics.json" : fs::path(a.out);
  corss::io::write_json_atomic(out, metrics);
  std::cout << metrics.dump(2) << '\n';
  return 0;
}

// ----------------------------------------------------------------- bench

struct BenchArgs {
  std::string input;
  std::vector<std::int64_t> blocks{100, 200, 400, 500, 1000, 2000};
  std::string algorithm = "corss";
  std::string task = "semg";
  std::int64_t warmup = 3;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  const auto rec = corss::read_signal_file(a.input);
  std::ostringstream table;
  table << "block_size,blocks,mean_s,std_s,max_s,realtime_ratio\n";
  for (auto size : a.blocks) {
    RunArgs ra;
    ra.algorithm = a.algorithm;
    ra.task = a.task;
    ra.block = size;
    auto cfg = make_config(ra);
    cfg.checkpoint_every_blocks = std::numeric_limits<std::int64_t>::max();
    corss::Pipeline pipe(cfg, rec.channels(), rec.sample_rate);
    std::vector<double> timings;
    std::int64_t index = 0;
    for (const auto& b : corss::split_blocks(rec, size)) {
      const auto out = pipe.process(b);
      if (index++ >= a.warmup && b.length() == size) timings.push_back(out.elapsed_s);
    }
    if (timings.empty()) {
      throw Error(ErrorCode::empty_input, "recording too short for block size " + std::to_string(size) +
                                              " after " + std::to_string(a.warmup) + " warm-up blocks");
    }
    const auto r = corss::latency_stats(timings, size, rec.sample_rate);
    table << size << ',' << timings.size() << ',' << r.mean_s << ',' << r.std_s << ',' << r.max_s << ','
          << r.realtime_ratio << '\n';
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + a.out);
    out << table.str();
  }
  return 0;
}

// --------------------------------------------------------------- convert

int cmd_convert(const std::string& in, const std::string& out, double rate) {
  const fs::path src(in), dst(out);
  if (src.extension() == ".csv") {
    if (!(rate > 0.0)) throw Error(ErrorCode::invalid_argument, "--rate is required when reading CSV");
    corss::write_signal_file(dst, corss::read_csv_signal(src, rate));
  } else {
    corss::write_csv_signal(dst, corss::read_signal_file(src));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming blind source separation for multichannel EMG"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic recording and its ground truth");
  synth->add_option("--task", sa.task, "semg or emgdi")->capture_default_str();
  synth->add_option("--channels", sa.channels);
  synth->add_option("--sources", sa.sources);
  synth->add_option("--duration", sa.duration, "seconds");
  synth->add_option("--rate", sa.rate, "Hz");
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--snr", sa.snr, "dB");
  synth->add_flag("--no-noise", sa.no_noise, "disable sensor noise");
  synth->add_option("--firing-lo", sa.firing_lo, "Hz");
  synth->add_option("--firing-hi", sa.firing_hi, "Hz");
  synth->add_option("--breath-rate", sa.breath_rate, "breaths/min");
  synth->add_option("--ecg-rate", sa.ecg_rate, "beats/min");
  synth->add_option("--ecg-gain", sa.ecg_gain, "QRS peak / EMGdi RMS");
  synth->add_option("-o,--out", sa.out, "signal file; truth goes to <stem>.truth.json")->capture_default_str();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Stream a recording through the separator");
  run->add_option("input", ra.input)->required();
  run->add_option("-o,--out", ra.out_dir, "output directory")->capture_default_str();
  run->add_option("--algorithm", ra.algorithm, "corss or orica")->capture_default_str();
  run->add_option("--task", ra.task, "semg or emgdi")->capture_default_str();
  run->add_option("--block", ra.block, "block length L")->capture_default_str();
  run->add_option("--lambda0", ra.lambda0);
  run->add_option("--gamma", ra.gamma);
  run->add_option("--lambda-min", ra.lambda_min);
  run->add_option("--a0", ra.a0);
  run->add_option("--a1", ra.a1);
  run->add_option("--k-sigma", ra.k_sigma);
  run->add_option("--block-rule", ra.block_rule, "recursive or as-printed")->capture_default_str();
  run->add_option("--normalization", ra.normalization, "orthonormal, unit-rows or none")->capture_default_str();
  run->add_option("--burn-in", ra.burn_in, "samples, -1 for 25*n_ch^2")->capture_default_str();
  run->add_option("--checkpoint-blocks", ra.checkpoint_blocks, "0 for every 5 s")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a run against ground truth or another run");
  eval->add_option("run_dir", ea.run_dir)->required();
  eval->add_option("--truth", ea.truth, "ground truth JSON");
  eval->add_option("--reference", ea.reference, "reference run directory");
  eval->add_option("--tolerance-ms", ea.tolerance_ms)->capture_default_str();
  eval->add_option("--trigger-tolerance-ms", ea.trigger_tolerance_ms)->capture_default_str();
  eval->add_option("-o,--out", ea.out, "metrics JSON (default <run_dir>/metrics.json)");
  eval->add_option("--trace-csv", ea.trace_csv, "write a convergence trace");
  eval->add_option("--trace-every", ea.trace_every, "blocks between trace points")->capture_default_str();
  eval->add_option("--trace-window", ea.trace_window_s, "trailing window, seconds")->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Per-block latency for several block sizes");
  bench->add_option("input", ba.input)->required();
  bench->add_option("--blocks", ba.blocks, "block sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--algorithm", ba.algorithm)->capture_default_str();
  bench->add_option("--task", ba.task)->capture_default_str();
  bench->add_option("--warmup", ba.warmup, "blocks excluded per size")->capture_default_str();
  bench->add_option("-o,--out", ba.out, "CSV table");

  std::string conv_in, conv_out;
  double conv_rate = 0.0;
  auto* convert = app.add_subcommand("convert", "Convert between CSV and signal files");
  convert->add_option("input", conv_in)->required();
  convert->add_option("output", conv_out)->required();
  convert->add_option("--rate", conv_rate, "sample rate for CSV input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: invalid-argument: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*run) return cmd_run(ra);
    if (*eval) return cmd_eval(ea);
    if (*bench) return cmd_bench(ba);
    if (*convert) return cmd_convert(conv_in, conv_out, conv_rate);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::logic_error& e) {
    std::cerr << "error: parse-error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: io-error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
