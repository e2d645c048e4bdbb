// fwscope command-line frontend.
//
//   fwscope analyze IMAGE [options]     run the analysis pipeline
//   fwscope disasm IMAGE                linear-sweep disassembly
//   fwscope lift IMAGE --at ADDR        lifted IR of one block
//   fwscope fixture TEMPLATE --out BIN  write a synthetic firmware image
//
// Exit codes: 0 consistent, 1 anomalous or flagged, 2 incomplete, 3 usage.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>

#include "CLI11.hpp"
#include "fwscope/fwkit.hpp"
#include "fwscope/isa.hpp"
#include "fwscope/lifter.hpp"
#include "fwscope/report.hpp"

using namespace fwscope;

namespace {

constexpr int kUsage = 3;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw report::IoError("cannot read " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw report::IoError("cannot write " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw report::IoError("error writing " + path);
}

uint32_t parse_number(const std::string& s) {
  size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw report::ConfigInvalid("bad number '" + s + "'");
  return static_cast<uint32_t>(v);
}

void print_summary(const report::AnalysisReport& r) {
  std::printf("verdict: %s (%s)\n", std::string(report::verdict_name(r.verdict)).c_str(), r.status.c_str());
  if (r.ep0) {
    std::printf("ep0:");
    for (auto a : r.ep0->ep0) std::printf(" %s", report::hex16(a).c_str());
    std::printf("\n");
  }
  if (r.query1)
    for (const auto& t : r.query1->targets)
      std::printf("target %s: %s\n", report::hex16(t.target).c_str(), t.reached ? "reached" : "not reached");
  for (const auto& reason : r.identity.reasons) std::printf("anomaly: %s\n", reason.detail.c_str());
  for (const auto& q : r.query2)
    for (const auto& rk : q.ranking)
      if (rk.rank == 1) {
        std::string label;
        for (const auto& f : q.flags)
          if (f.address == rk.address && !f.label.empty()) label = " [" + f.label + "]";
        std::printf("%s write to %s: %zu distinct constant values%s\n", q.algorithm.c_str(),
                    report::hex16(rk.address).c_str(), rk.score, label.c_str());
      }
  for (const auto& d : r.diagnostics) std::printf("note: %s\n", d.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic query engine for 8051 USB firmware", "fwscope"};
  app.set_version_flag("--version", FWSCOPE_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with an [analyze] section; command-line flags take precedence");

  report::RunConfig rc;
  std::string expected = rc.expected, query = "both", policy = "auto", setup_base;
  bool quiet = false;
  auto* analyze = app.add_subcommand("analyze", "Analyze a firmware image");
  analyze->add_option("image", rc.image_path, "Flat 8051 code image")->required();
  analyze->add_option("--expected", expected, "Expected device class")
      ->check(CLI::IsMember({"hid", "mass-storage", "composite", "unknown", "audio", "cdc", "printer", "hub",
                             "video", "wireless", "vendor"}));
  analyze->add_option("--query", query, "identity, consistency or both")
      ->check(CLI::IsMember({"identity", "consistency", "both"}));
  analyze->add_option("--policy", policy, "Symbolic policy: full, partial or auto")
      ->check(CLI::IsMember({"full", "partial", "auto"}));
  analyze->add_option("--tau", rc.tau, "Discovery iterations per interrupt")->capture_default_str();
  analyze->add_option("--max-ep", rc.max_ep, "Endpoint buffers considered past EP0")->capture_default_str();
  analyze->add_option("--seed", rc.seed, "Exploration seed")->capture_default_str();
  analyze->add_option("--time-limit", rc.time_limit, "Seconds per exploration run")->capture_default_str();
  analyze->add_option("--state-limit", rc.state_limit, "States per exploration run")->capture_default_str();
  analyze->add_option("--loop-threshold", rc.loop_threshold, "Block visits before a path is pruned")
      ->capture_default_str();
  analyze->add_option("--precondition", rc.preconditions, "REGION:ADDR:REL:VAL, repeatable");
  analyze->add_option("--setup-base", setup_base, "XRAM address of the setup packet, for naming constraints");
  analyze->add_option("--signatures", rc.signatures_path, "Descriptor signature file");
  analyze->add_option("--ruledb", rc.ruledb_path, "Driver match rule file");
  analyze->add_option("--report", rc.report_path, "Write the JSON report here instead of stdout");
  analyze->add_flag("--timings", rc.timings, "Include wall times in the report");
  analyze->add_flag("-q,--quiet", quiet, "No summary on stdout");

  std::string disasm_image;
  uint32_t disasm_start = 0;
  auto* disasm = app.add_subcommand("disasm", "Linear-sweep disassembly");
  disasm->add_option("image", disasm_image)->required();
  disasm->add_option("--start", disasm_start, "Start address");

  std::string lift_image, lift_at = "0";
  auto* lift = app.add_subcommand("lift", "Print the lifted block at an address");
  lift->add_option("image", lift_image)->required();
  lift->add_option("--at", lift_at, "Block address")->capture_default_str();

  std::string fx_template, fx_out, fx_manifest, fx_source;
  uint32_t fx_threshold = 0;
  auto* fixture = app.add_subcommand("fixture", "Generate a synthetic firmware image");
  fixture->add_option("template", fx_template, "benign-hid, injector-hid, storage-claiming-hid, straightline, branchy")
      ->required();
  fixture->add_option("--out", fx_out, "Image output path")->required();
  fixture->add_option("--manifest", fx_manifest, "Manifest output path (JSON)");
  fixture->add_option("--source", fx_source, "Assembly source output path");
  fixture->add_option("--threshold", fx_threshold, "Injection threshold for injector-hid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc_exit = app.exit(e);
    return rc_exit == 0 ? 0 : kUsage;
  }

  try {
    if (*analyze) {
      rc.expected = expected;
      rc.query = *report::query_selection_from_name(query);
      rc.policy = *report::policy_mode_from_name(policy);
      if (!setup_base.empty()) rc.setup_base = static_cast<uint16_t>(parse_number(setup_base));
      const auto r = report::run_pipeline(rc);
      if (rc.report_path.empty()) {
        std::fputs(r.dump().c_str(), stdout);
      } else {
        report::emit_report(r, rc.report_path);
        if (!quiet) print_summary(r);
      }
      return r.exit_code();
    }
    if (*disasm) {
      const auto image = read_file(disasm_image);
      const auto sweep = isa::disassemble_sweep(image, disasm_start);
      for (const auto& in : sweep.instructions) {
        std::string raw;
        char b[4];
        for (auto x : in.bytes()) {
          std::snprintf(b, sizeof b, "%02X ", x);
          raw += b;
        }
        std::printf("%04X  %-9s %s\n", in.address, raw.c_str(), isa::format_instruction(in).c_str());
      }
      for (const auto& d : sweep.diagnostics) std::fprintf(stderr, "%04X: %s\n", d.address, d.message.c_str());
      return 0;
    }
    if (*lift) {
      lifter::Program program(read_file(lift_image));
      std::fputs(ir::format_block(program.block(static_cast<uint16_t>(parse_number(lift_at)))).c_str(), stdout);
      return 0;
    }
    if (*fixture) {
      auto t = fwkit::template_from_name(fx_template);
      if (!t) throw report::ConfigInvalid("unknown template '" + fx_template + "'");
      fwkit::FixtureSpec spec;
      spec.kind = *t;
      if (fx_threshold) spec.injection_threshold = fx_threshold;
      const auto f = fwkit::generate_fixture(spec);
      write_file(fx_out, {reinterpret_cast<const char*>(f.image.data()), f.image.size()});
      if (!fx_manifest.empty()) write_file(fx_manifest, f.manifest.to_json().dump(2) + "\n");
      if (!fx_source.empty()) write_file(fx_source, f.source);
      return 0;
    }
  } catch (const report::ConfigInvalid& e) {
    std::fprintf(stderr, "fwscope: invalid configuration: %s\n", e.what());
    return kUsage;
  } catch (const report::ImageTooLarge& e) {
    std::fprintf(stderr, "fwscope: %s\n", e.what());
    return kUsage;
  } catch (const report::IoError& e) {
    std::fprintf(stderr, "fwscope: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fwscope: %s\n", e.what());
    return 2;
  }
  return kUsage;
}
