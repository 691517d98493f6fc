#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bbp/dsl/particle.hpp"
#include "bbp/dsl/sgrid.hpp"
#include "bbp/dsl/usgrid.hpp"
#include "bbp/error.hpp"
#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"
#include "bbp/runtime.hpp"

namespace bbp::bench {

struct BenchConfig {
  std::string kit = "sgrid";
  Coord width = 512;
  Coord height = 512;
  std::size_t particles = 1u << 14;
  std::size_t loops = 10;
  std::string layers;
  bool mmat = false;
  std::size_t pool_mb = 300;
  std::uint64_t seed = 1;
  bool verify = false;
  std::string csv;
  bool trace = false;
  std::string init = "hotspot";
  double alpha = 0.0;
  double beta = 0.25;
};

inline const std::vector<std::string>& kits() {
  static const std::vector<std::string> k{"sgrid", "usgrid-c", "usgrid-r", "particle"};
  return k;
}

// "" or "serial" is the empty stack; otherwise comma separated kind:n tokens,
// outermost first.
inline LayerStack parse_layers(const std::string& text) {
  std::vector<std::shared_ptr<Layer>> layers;
  if (text.empty() || text == "serial" || text == "none") return LayerStack{};
  std::string list = text;
  std::replace(list.begin(), list.end(), '+', ',');
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "layer '" + tok + "' is not kind:n");
    const std::string kind = tok.substr(0, colon);
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoul(tok.substr(colon + 1), &used);
      if (used != tok.size() - colon - 1) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "bad parallelism in layer '" + tok + "'");
    }
    if (kind == "mp") {
      layers.push_back(std::make_shared<MessagePassingLayer>(n));
    } else if (kind == "sm") {
      layers.push_back(std::make_shared<SharedMemoryLayer>(n));
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown layer kind '" + kind + "'");
    }
  }
  return LayerStack(std::move(layers));
}

inline std::pair<Coord, Coord> parse_region(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    const long w = std::stol(s.substr(0, x), &a);
    const long h = std::stol(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1 || w <= 0 || h <= 0) throw std::invalid_argument(s);
    return {static_cast<Coord>(w), static_cast<Coord>(h)};
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "region '" + s + "' is not WxH");
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Measurement {
  std::string stack;
  std::string mmat;
  RunReport report;
  std::string region;
};

inline dsl::SGridParams sgrid_params(const BenchConfig& c) {
  dsl::SGridParams p;
  p.width = c.width;
  p.height = c.height;
  p.block_x = std::min<Coord>(256, c.width);
  p.block_y = std::min<Coord>(256, c.height);
  p.alpha = c.alpha;
  p.beta = c.beta;
  p.init = dsl::parse_init(c.init);
  p.seed = c.seed;
  p.loops = c.loops;
  p.pool_bytes = c.pool_mb << 20;
  return p;
}

inline dsl::USGridParams usgrid_params(const BenchConfig& c) {
  dsl::USGridParams p;
  p.width = c.width;
  p.height = c.height;
  p.block_x = std::min<Coord>(256, c.width);
  p.block_y = std::min<Coord>(256, c.height);
  p.alpha = c.alpha;
  p.beta = c.beta;
  p.init = dsl::parse_init(c.init);
  p.seed = c.seed;
  p.perm_seed = c.seed;
  p.topology = c.kit == "usgrid-r" ? dsl::USGridCase::R : dsl::USGridCase::C;
  p.loops = c.loops;
  p.pool_bytes = c.pool_mb << 20;
  return p;
}

inline dsl::ParticleParams particle_params(const BenchConfig& c) {
  auto p = dsl::ParticleParams::for_count(c.particles);
  p.seed = c.seed;
  p.loops = c.loops;
  p.pool_bytes = c.pool_mb << 20;
  return p;
}

inline void check_kit(const BenchConfig& c) {
  for (const auto& k : kits()) {
    if (k == c.kit) return;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown kit '" + c.kit + "'");
}

inline std::string region_of(const BenchConfig& c) {
  if (c.kit == "particle") {
    const auto p = particle_params(c);
    return std::to_string(p.buckets_x) + "x" + std::to_string(p.buckets_y);
  }
  return std::to_string(c.width) + "x" + std::to_string(c.height);
}

inline Measurement run_platform(const BenchConfig& c, const LayerStack& stack, std::ostream* trace = nullptr) {
  check_kit(c);
  RuntimeOptions o;
  o.mmat = c.mmat;
  o.trace = c.trace;
  o.trace_echo = trace;
  Measurement m;
  m.stack = stack.describe();
  m.mmat = c.mmat ? "on" : "off";
  m.region = region_of(c);
  if (c.kit == "sgrid") {
    m.report = dsl::run_sgrid(sgrid_params(c), stack, o).report;
  } else if (c.kit == "particle") {
    m.report = dsl::run_particle(particle_params(c), stack, o).report;
  } else {
    m.report = dsl::run_usgrid(usgrid_params(c), stack, o).report;
  }
  return m;
}

// Handwritten serial baseline; timings and the checksum in the platform's
// block order.
inline Measurement run_handwritten(const BenchConfig& c) {
  check_kit(c);
  using Clock = std::chrono::steady_clock;
  auto ms = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  Measurement m;
  m.stack = "handwritten";
  m.mmat = "off";
  m.region = region_of(c);
  auto bench = [&](auto make, auto domain, auto block) {
    const auto t0 = Clock::now();
    auto b = make();
    const auto t1 = Clock::now();
    b.run(c.loops);
    const auto t2 = Clock::now();
    m.report.hash = dsl::blocked_hash(b.state(), domain, block);
    m.report.t_init_ms = ms(t0, t1);
    m.report.t_proc_ms = ms(t1, t2);
    m.report.t_fin_ms = ms(t2, Clock::now());
  };
  if (c.kit == "sgrid") {
    const auto p = sgrid_params(c);
    bench([&] { return dsl::SGridBaseline(p); }, p.domain(), p.block());
  } else if (c.kit == "particle") {
    const auto p = particle_params(c);
    bench([&] { return dsl::ParticleBaseline(p); }, p.domain(), p.block());
  } else {
    const auto p = usgrid_params(c);
    bench([&] { return dsl::USGridBaseline(p); }, p.domain(), p.block());
  }
  return m;
}

inline std::string csv_header(bool normalized) {
  std::string h =
      "kit,region,loops,stack,mmat,seed,t_init_ms,t_proc_ms,t_fin_ms,env_searches,mmat_hits,pages_fetched,reexecs,"
      "messages,pool_used_b,pool_free_b,checksum";
  if (normalized) h += ",normalized";
  return h;
}

inline std::string csv_row(const BenchConfig& c, const Measurement& m, std::optional<double> normalized = {}) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  const auto& r = m.report;
  // Layer lists are comma separated; keep the field a single CSV cell.
  std::string stack = m.stack;
  std::replace(stack.begin(), stack.end(), ',', '+');
  os << c.kit << ',' << m.region << ',' << c.loops << ',' << stack << ',' << m.mmat << ',' << c.seed << ','
     << r.t_init_ms << ',' << r.t_proc_ms << ',' << r.t_fin_ms << ',' << r.env_searches << ',' << r.mmat_hits << ','
     << r.pages_fetched << ',' << r.reexecs << ',' << r.messages << ',' << r.pool.used_bytes << ','
     << r.pool.free_bytes << ',' << hex64(r.hash);
  if (normalized) os << ',' << *normalized;
  return os.str();
}

// One platform run; with `verify`, exit status reports checksum equality
// with the serial baseline.
inline int cmd_run(const BenchConfig& c, std::ostream& csv, std::ostream& log) {
  const LayerStack stack = parse_layers(c.layers);
  const auto m = run_platform(c, stack, c.trace ? &log : nullptr);
  csv << csv_header(false) << '\n' << csv_row(c, m) << '\n';
  if (!c.verify) return 0;
  const auto base = run_handwritten(c);
  if (base.report.hash != m.report.hash) {
    log << "verify: checksum " << hex64(m.report.hash) << " differs from baseline " << hex64(base.report.hash)
        << '\n';
    return 1;
  }
  log << "verify: ok (" << hex64(base.report.hash) << ")\n";
  return 0;
}

// Handwritten, serial platform, sm:1 and mp:1, each with MMAT off and on;
// processing time as a percentage of the handwritten time.
inline int cmd_overhead(const BenchConfig& c, std::ostream& csv, std::ostream& log) {
  csv << csv_header(true) << '\n';
  const auto hand = run_handwritten(c);
  const double base = std::max(hand.report.t_proc_ms, 1e-9);
  csv << csv_row(c, hand, 100.0) << '\n';
  int status = 0;
  for (const std::string layers : {"", "sm:1", "mp:1"}) {
    for (const bool mmat : {false, true}) {
      BenchConfig k = c;
      k.mmat = mmat;
      k.layers = layers;
      const auto m = run_platform(k, parse_layers(layers));
      csv << csv_row(k, m, 100.0 * m.report.t_proc_ms / base) << '\n';
      if (m.report.hash != hand.report.hash) {
        log << "overhead: " << m.stack << " mmat=" << m.mmat << " checksum differs from baseline\n";
        status = 1;
      }
    }
  }
  return status;
}

enum class ScaleMode { Strong, Weak };

// Stack kinds sm and mp over `parallelisms`; time relative to one task
// (strong: ratio, weak: percent). Weak mode grows the region per task along y.
inline int cmd_scale(const BenchConfig& c, ScaleMode mode, const std::vector<std::size_t>& parallelisms,
                     std::ostream& csv, std::ostream& /*log*/) {
  if (parallelisms.empty() || parallelisms.front() != 1) {
    throw Error(ErrorCode::InvalidConfig, "scale needs parallelisms starting at 1");
  }
  csv << csv_header(true) << '\n';
  for (const std::string kind : {"sm", "mp"}) {
    double t1 = 0;
    for (std::size_t n : parallelisms) {
      BenchConfig k = c;
      k.layers = kind + ":" + std::to_string(n);
      if (mode == ScaleMode::Weak && k.kit != "particle") k.height = static_cast<Coord>(k.height * n);
      Measurement m;
      if (k.kit == "particle" && mode == ScaleMode::Weak) {
        // Weak particle runs keep the bucket width and stack more rows.
        auto p = particle_params(c);
        p.buckets_y = static_cast<Coord>(p.buckets_y * n);
        RuntimeOptions o;
        o.mmat = k.mmat;
        const LayerStack stack = parse_layers(k.layers);
        m.stack = stack.describe();
        m.mmat = k.mmat ? "on" : "off";
        m.region = std::to_string(p.buckets_x) + "x" + std::to_string(p.buckets_y);
        m.report = dsl::run_particle(p, stack, o).report;
      } else {
        m = run_platform(k, parse_layers(k.layers));
      }
      if (n == 1) t1 = std::max(m.report.t_proc_ms, 1e-9);
      const double ratio = m.report.t_proc_ms / t1;
      csv << csv_row(k, m, mode == ScaleMode::Strong ? ratio : 100.0 * ratio) << '\n';
    }
  }
  return 0;
}

}  // namespace bbp::bench
