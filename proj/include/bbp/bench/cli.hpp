#pragma once

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bbp/bench/bench.hpp"

namespace bbp::bench {

// `bench run|overhead|scale`. CSV goes to --csv when given, else to `out`.
inline int bench_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Benchmark driver for the block runtime and its DSL kits", "bench"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key=value file; flags override it");

  BenchConfig c;
  std::string region = "512x512";
  std::string mmat = "off";
  app.add_option("--kit", c.kit, "sgrid | usgrid-c | usgrid-r | particle")->check(CLI::IsMember(kits()));
  app.add_option("--region", region, "grid region WxH (grid kits)");
  app.add_option("--particles", c.particles, "particle count (particle kit)");
  app.add_option("--loops", c.loops, "timed steps");
  app.add_option("--layers", c.layers, "layer stack, outermost first, e.g. mp:2,sm:4");
  app.add_option("--mmat", mmat, "access memoization")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--pool-mb", c.pool_mb, "memory pool size per Env copy in MiB");
  app.add_option("--seed", c.seed, "seed for initial data and permutations");
  app.add_option("--init", c.init, "constant | hotspot | random")
      ->check(CLI::IsMember({"constant", "hotspot", "random"}));
  app.add_option("--alpha", c.alpha, "stencil self weight");
  app.add_option("--beta", c.beta, "stencil neighbor weight");
  app.add_flag("--verify", c.verify, "compare the checksum with the serial baseline");
  app.add_option("--csv", c.csv, "write CSV here instead of stdout");
  app.add_flag("--trace", c.trace, "log every advice firing");

  auto* run = app.add_subcommand("run", "one platform run");
  auto* overhead = app.add_subcommand("overhead", "platform overhead relative to the handwritten baseline");
  auto* scale = app.add_subcommand("scale", "strong or weak scaling over sm and mp stacks");
  std::string mode = "strong";
  std::vector<std::size_t> parallelisms{1, 2, 4};
  scale->add_option("--mode", mode, "strong | weak")->check(CLI::IsMember({"strong", "weak"}));
  scale->add_option("--parallelisms", parallelisms, "task counts, first must be 1")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    const auto [w, h] = parse_region(region);
    c.width = w;
    c.height = h;
    c.mmat = mmat == "on";

    std::ofstream file;
    std::ostream* csv = &out;
    if (!c.csv.empty()) {
      file.open(c.csv);
      if (!file) throw Error(ErrorCode::InvalidConfig, "cannot write " + c.csv);
      csv = &file;
    }
    if (*run) return cmd_run(c, *csv, err);
    if (*overhead) return cmd_overhead(c, *csv, err);
    if (*scale) return cmd_scale(c, mode == "weak" ? ScaleMode::Weak : ScaleMode::Strong, parallelisms, *csv, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace bbp::bench
