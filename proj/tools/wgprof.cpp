#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wgprof/config.hpp"
#include "wgprof/instrument.hpp"
#include "wgprof/ir.hpp"
#include "wgprof/lower.hpp"
#include "wgprof/perfmodel.hpp"
#include "wgprof/pipeline.hpp"
#include "wgprof/trace.hpp"
#include "wgprof/vgpu.hpp"

namespace {

void emit(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-")
    std::cout << data;
  else
    wgprof::write_file(path, data);
}

wgprof::PipelineConfig load_pipeline_config(const std::string& path) {
  return wgprof::make_pipeline_config(wgprof::load_config(path));
}

int cmd_parse(const std::string& kernel, const std::string& out) {
  auto program = wgprof::parse_program(wgprof::read_file(kernel));
  emit(out, wgprof::print_program(program));
  return 0;
}

int cmd_instrument(const std::string& kernel, const std::string& config,
                   const std::string& out) {
  auto pc = load_pipeline_config(config);
  auto program = wgprof::parse_program(wgprof::read_file(kernel));
  auto handle = wgprof::patch(program, pc.request);
  emit(out, wgprof::print_program(handle.program));
  return 0;
}

int cmd_lower(const std::string& kernel, const std::string& config,
              const std::string& out) {
  auto pc = load_pipeline_config(config);
  auto program = wgprof::parse_program(wgprof::read_file(kernel));
  auto handle = wgprof::patch(program, pc.request);
  auto device = wgprof::lower(handle.program, pc.lowering);
  emit(out, wgprof::print_device_program(device));
  return 0;
}

int cmd_run(const std::string& config) {
  auto pc = load_pipeline_config(config);
  auto rr = wgprof::run_pipeline(pc);
  wgprof::write_artifacts(rr, pc);
  std::cout << "kernel " << rr.kernel.name << ": total "
            << rr.sim.total_cycles << " cycles, vanilla "
            << rr.sim.vanilla_cycles << ", records " << rr.sim.records_written
            << "\n"
            << "artifacts: " << pc.raw_trace_path << ", "
            << pc.chrome_trace_path << ", " << pc.replay_report_path << ", "
            << pc.model_report_path << "\n";
  return 0;
}

wgprof::DeviceProgram load_device(const std::string& path) {
  return wgprof::parse_device_program(wgprof::read_file(path));
}

wgprof::GlobalTraceImage load_image(const std::string& path) {
  const std::string raw = wgprof::read_file(path);
  return wgprof::deserialize_image(
      std::vector<std::uint8_t>(raw.begin(), raw.end()));
}

int cmd_decode(const std::string& trace, const std::string& device,
               const std::string& out) {
  auto dp = load_device(device);
  auto img = load_image(trace);
  std::ostringstream os;
  for (const auto& stream : wgprof::decode_image(img, dp.plan)) {
    os << "block " << stream.block_index << " wg " << stream.warp_group;
    if (stream.dropped_records)
      os << " (dropped " << stream.dropped_records << " oldest)";
    os << "\n";
    std::size_t pos = 0;
    for (const auto& r : stream.records) {
      const std::uint32_t id = r.region_id();
      os << "  [" << pos++ << "] " << (r.is_start() ? "start" : "end  ")
         << " region " << id << " \""
         << (id < dp.plan.region_labels.size() ? dp.plan.region_labels[id]
                                               : "?")
         << "\" clock " << r.payload;
      if (r.signature())
        os << " sig 0x" << std::hex << r.signature() << std::dec;
      os << "\n";
    }
  }
  emit(out, os.str());
  return 0;
}

int cmd_replay(const std::string& trace, const std::string& device,
               std::uint64_t record_cost, const std::string& out) {
  auto dp = load_device(device);
  auto img = load_image(trace);
  auto replayed = wgprof::replay_image(img, dp.plan, record_cost);
  auto cp = wgprof::analyze_critical_path(replayed.events, dp);
  wgprof::SimResult empty_sim; // replay from a trace file has no sim totals
  auto report = wgprof::make_replay_report(dp.name, empty_sim, replayed, cp,
                                           record_cost);
  emit(out, report.dump(2) + "\n");
  return 0;
}

int cmd_export(const std::string& trace, const std::string& device,
               std::uint64_t record_cost, double cycles_per_us,
               const std::string& out) {
  auto dp = load_device(device);
  auto img = load_image(trace);
  auto replayed = wgprof::replay_image(img, dp.plan, record_cost);
  emit(out, wgprof::export_chrome_trace(replayed.events, cycles_per_us));
  return 0;
}

int cmd_model(const std::string& stages_path, std::uint32_t pipe,
              std::uint32_t wgs, std::uint64_t loop) {
  std::ifstream is(stages_path);
  if (!is)
    throw wgprof::Error(wgprof::ErrorKind::Io,
                        "cannot open '" + stages_path + "'");
  wgprof::SwpInput in;
  in.n_warp_groups = wgs;
  in.n_pipe_stages = pipe;
  in.n_loop = loop;
  in.stages = wgprof::load_stage_table(is);
  auto res = wgprof::swp_latency(in);
  std::cout << "stages: " << in.stages.size() << ", delta " << res.delta
            << ", latency " << res.latency << " cycles\n";
  return 0;
}

int cmd_compare(const std::string& report_a, const std::string& report_b) {
  auto ja = nlohmann::ordered_json::parse(wgprof::read_file(report_a));
  auto jb = nlohmann::ordered_json::parse(wgprof::read_file(report_b));
  std::cout << wgprof::compare_reports(ja, jb);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"region-based intra-kernel timing on a virtual GPU"};
  app.require_subcommand(1);

  std::string kernel, config, trace, device, out, report_a, report_b;
  std::string stages_path;
  std::uint64_t record_cost = 33;
  std::uint64_t loop = 1;
  std::uint32_t pipe = 1, wgs = 1;
  double cycles_per_us = 1000.0;

  auto* parse = app.add_subcommand("parse", "parse and pretty-print a kernel");
  parse->add_option("kernel", kernel, "kernel IR file")->required();
  parse->add_option("-o,--out", out, "output path (default stdout)");

  auto* instrument =
      app.add_subcommand("instrument", "insert record markers per the config");
  instrument->add_option("kernel", kernel)->required();
  instrument->add_option("-c,--config", config)->required();
  instrument->add_option("-o,--out", out);

  auto* lower = app.add_subcommand(
      "lower", "instrument and lower to the device program form");
  lower->add_option("kernel", kernel)->required();
  lower->add_option("-c,--config", config)->required();
  lower->add_option("-o,--out", out);

  auto* run = app.add_subcommand(
      "run", "full pipeline: instrument, lower, simulate, replay, export");
  run->add_option("-c,--config", config)->required();

  auto* decode =
      app.add_subcommand("decode", "dump the records of a raw trace");
  decode->add_option("trace", trace, "raw trace file")->required();
  decode->add_option("-d,--device", device, "device program file")->required();
  decode->add_option("-o,--out", out);

  auto* replay =
      app.add_subcommand("replay", "replay-correct a raw trace into a report");
  replay->add_option("trace", trace)->required();
  replay->add_option("-d,--device", device)->required();
  replay->add_option("--record-cost", record_cost, "cycles per record");
  replay->add_option("-o,--out", out);

  auto* exp = app.add_subcommand("export", "export a raw trace to Chrome Trace");
  exp->add_option("trace", trace)->required();
  exp->add_option("-d,--device", device)->required();
  exp->add_option("--record-cost", record_cost);
  exp->add_option("--cycles-per-us", cycles_per_us);
  exp->add_option("-o,--out", out);

  auto* model = app.add_subcommand(
      "model", "software pipelining model from a stage table");
  model->add_option("stages", stages_path, "stage table file")->required();
  model->add_option("--pipe", pipe, "pipeline stages");
  model->add_option("--wgs", wgs, "warp groups");
  model->add_option("--loop", loop, "loop iterations");

  auto* compare =
      app.add_subcommand("compare", "diff two replay reports by region");
  compare->add_option("report_a", report_a)->required();
  compare->add_option("report_b", report_b)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (parse->parsed())
      return cmd_parse(kernel, out);
    if (instrument->parsed())
      return cmd_instrument(kernel, config, out);
    if (lower->parsed())
      return cmd_lower(kernel, config, out);
    if (run->parsed())
      return cmd_run(config);
    if (decode->parsed())
      return cmd_decode(trace, device, out);
    if (replay->parsed())
      return cmd_replay(trace, device, record_cost, out);
    if (exp->parsed())
      return cmd_export(trace, device, record_cost, cycles_per_us, out);
    if (model->parsed())
      return cmd_model(stages_path, pipe, wgs, loop);
    if (compare->parsed())
      return cmd_compare(report_a, report_b);
  } catch (const wgprof::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
