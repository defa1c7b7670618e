// tubetrack: phantom generation, training, tracking, evaluation and export.

#include <cfloat>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tubetrack/env/environment.hpp"
#include "tubetrack/errors.hpp"
#include "tubetrack/eval/metrics.hpp"
#include "tubetrack/geodesic/geodesic.hpp"
#include "tubetrack/grid/io.hpp"
#include "tubetrack/net/checkpoint.hpp"
#include "tubetrack/parallel.hpp"
#include "tubetrack/phantom/phantom.hpp"
#include "tubetrack/ppo/ppo.hpp"
#include "tubetrack/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tubetrack;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = default_thread_count();
  bool verbose = false;
  bool json_out = false;
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

// Resolved configuration goes to stderr so stdout stays machine-readable.
void print_config(const std::string& command, const json& cfg) {
  std::cerr << command << " config: " << cfg.dump() << '\n';
}

void emit(const Globals& g, const json& result, const std::string& human) {
  if (g.json_out) {
    std::cout << result.dump(2) << '\n';
  } else {
    std::cout << human << '\n';
  }
}

// Cases listed in <dir>/manifest.json, or every subdirectory with a
// meta.json in name order.
std::vector<fs::path> case_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  if (fs::exists(dir / "manifest.json")) {
    const json m = read_json_file(dir / "manifest.json");
    try {
      for (const auto& c : m.at("cases")) out.push_back(dir / c.at("dir").get<std::string>());
    } catch (const json::exception& e) {
      throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    return out;
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::shared_ptr<const PreparedCase>> load_prepared(const fs::path& dir,
                                                               const WallConfig& wall,
                                                               int threads) {
  const auto dirs = case_dirs(dir);
  std::vector<std::shared_ptr<const PreparedCase>> out(dirs.size());
  parallel_for(dirs.size(), threads, [&](std::size_t i) {
    out[i] = prepare_case(std::make_shared<const TrackingCase>(load_case(dirs[i])), wall);
  });
  return out;
}

int cmd_generate(const Globals& g, const fs::path& config, int count,
                 const std::string& annotation, const fs::path& out_dir) {
  PhantomConfig base;
  if (!config.empty()) base = phantom_config_from_json(read_json_file(config));
  if (count < 0) throw ConfigError("--count must be >= 0");
  const std::uint64_t seed = g.seed.value_or(base.seed);

  int n_path = 0;
  if (annotation == "path") {
    n_path = count;
  } else if (annotation == "segm") {
    n_path = 0;
  } else if (annotation.rfind("mixed:", 0) == 0) {
    const std::string spec = annotation.substr(6);
    const auto comma = spec.find(',');
    int p = -1, s = -1;
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      std::size_t used = 0;
      p = std::stoi(spec.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
      s = std::stoi(spec.substr(comma + 1), &used);
      if (used != spec.size() - comma - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("--annotation mixed:<p>,<s> expects two integers, got '" + annotation + "'");
    }
    if (p < 0 || s < 0 || p + s == 0) throw ConfigError("mixed:<p>,<s> needs p, s >= 0, p + s > 0");
    n_path = static_cast<int>(std::lround(static_cast<double>(count) * p / (p + s)));
  } else {
    throw ConfigError("--annotation must be path, segm or mixed:<p>,<s>");
  }

  json resolved = {{"phantom", to_json(base)}, {"count", count}, {"annotation", annotation},
                   {"seed", seed}, {"out", out_dir.string()}};
  print_config("generate", resolved);
  fs::create_directories(out_dir);
  json cases = json::array();
  std::vector<json> entries(static_cast<std::size_t>(count));
  parallel_for(entries.size(), g.threads, [&](std::size_t i) {
    PhantomConfig cfg = base;
    cfg.seed = derive_seed(seed, i);
    const Annotation ann =
        static_cast<int>(i) < n_path ? Annotation::PathAnnotated : Annotation::SegmOnly;
    const TrackingCase c = generate_case(cfg, ann);
    char name[32];
    std::snprintf(name, sizeof(name), "case_%03zu", i);
    save_case(c, out_dir / name);
    entries[i] = {{"dir", name}, {"annotation", to_string(ann)}, {"seed", cfg.seed},
                  {"length_mm", c.gt_path ? c.gt_path->length() : cfg.target_length_mm}};
    if (g.verbose) std::cerr << "generated " << name << '\n';
  });
  for (auto& e : entries) cases.push_back(std::move(e));
  const json manifest = {{"seed", seed}, {"phantom", to_json(base)}, {"cases", cases}};
  write_json_file(manifest, out_dir / "manifest.json");
  emit(g, manifest, "wrote " + std::to_string(count) + " cases to " + out_dir.string());
  return 0;
}

int cmd_train(const Globals& g, const fs::path& cases_dir, const fs::path& config,
              const fs::path& out_dir, const fs::path& validation_dir, bool resume) {
  RunConfig cfg;
  if (!config.empty()) cfg = run_config_from_json(read_json_file(config));
  if (g.seed) cfg.train.seed = *g.seed;
  print_config("train", to_json(cfg));

  CaseSets sets;
  for (auto& pc : load_prepared(cases_dir, cfg.wall, g.threads)) {
    (pc->tracking_case().annotation == Annotation::PathAnnotated ? sets.path : sets.segm)
        .push_back(pc);
  }
  std::vector<std::shared_ptr<const PreparedCase>> validation;
  if (!validation_dir.empty()) validation = load_prepared(validation_dir, cfg.wall, g.threads);
  if (g.verbose) {
    std::cerr << "loaded " << sets.path.size() << " path-annotated and " << sets.segm.size()
              << " segmentation-only cases\n";
  }
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume = resume;
  opts.threads = g.threads;
  if (g.verbose) {
    opts.on_update = [](const nlohmann::ordered_json& line) { std::cerr << line.dump() << '\n'; };
  }
  const TrainResult r = train(cfg, sets, validation, opts);
  const json result = {{"out", out_dir.string()},
                       {"first_update", r.first_update},
                       {"total_updates", cfg.train.total_updates},
                       {"last_checkpoint", checkpoint_path(out_dir, r.last_checkpoint).string()}};
  emit(g, result, "trained to update " + std::to_string(cfg.train.total_updates) +
                      ", last checkpoint " + result["last_checkpoint"].get<std::string>());
  return 0;
}

int cmd_track(const Globals& g, const fs::path& case_dir, const fs::path& ckpt_path,
              const fs::path& out, const std::string& start, const fs::path& trace_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  if (ck.extra.is_object() && !ck.extra.empty()) {
    json j = ck.extra;
    j.erase("derived");
    cfg = run_config_from_json(j);
  }
  const StartMode mode = start_mode_from_string(start);
  if (mode == StartMode::Middle) throw ConfigError("--start must be pylorus or end");
  print_config("track", {{"case", case_dir.string()}, {"checkpoint", ckpt_path.string()},
                         {"start", start}, {"env", to_json(cfg.env)},
                         {"reward", to_json(cfg.reward)}});
  auto pc = prepare_case(std::make_shared<const TrackingCase>(load_case(case_dir)), cfg.wall);
  const Network actor = actor_from_checkpoint(ck);
  const Environment env = run_deterministic_episode(pc, actor, cfg.env, cfg.reward, mode);
  const Polyline path = env.tracked_path();
  save_polyline(path, pc->tracking_case().spacing_mm(), out);
  if (!trace_path.empty()) {
    std::ofstream t(trace_path);
    if (!t) throw DataError("cannot write " + trace_path.string());
    write_trace_jsonl(env.trace(), t);
  }
  const json result = {{"out", out.string()},
                       {"steps", env.steps()},
                       {"points", path.size()},
                       {"length_mm", path.length()},
                       {"coverage", env.coverage()},
                       {"done", env.done() ? to_string(*env.done()) : "none"}};
  emit(g, result, "tracked " + std::to_string(env.steps()) + " steps (" +
                      result["done"].get<std::string>() + "), coverage " +
                      std::to_string(env.coverage()));
  return 0;
}

int cmd_eval(const std::vector<std::string>& preds,
             const std::vector<std::string>& gts, double tolerance, const std::string& case_dir) {
  if (preds.size() != gts.size()) throw ConfigError("--pred and --gt must be given in pairs");
  EvalConfig cfg{tolerance};
  cfg.validate();
  print_config("eval", {{"tolerance_mm", tolerance}, {"pairs", preds.size()}});
  std::optional<TrackingCase> tc;
  if (!case_dir.empty()) tc = load_case(case_dir);
  json per_case = json::array();
  std::vector<double> scores;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Polyline pred = load_polyline(preds[i]);
    const Polyline gt = load_polyline(gts[i]);
    const double score = max_tracked_length(pred, gt, cfg);
    scores.push_back(score);
    json row = {{"pred", preds[i]}, {"gt", gts[i]}, {"max_tracked_length", score},
                {"gt_length", gt.length()}};
    if (tc) row["coverage"] = coverage(pred, tc->segmentation);
    per_case.push_back(row);
  }
  json report = {{"tolerance_mm", tolerance}, {"cases", per_case}};
  if (!scores.empty()) report["summary"] = to_json(summarize(scores));
  // eval always reports JSON.
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_export(const Globals& g, const fs::path& case_dir, const std::string& what,
               const fs::path& out, const std::string& start, double sigma) {
  print_config("export", {{"case", case_dir.string()}, {"what", what}, {"start", start},
                          {"wall_sigma_mm", sigma}});
  const TrackingCase c = load_case(case_dir);
  if (what == "segmentation") {
    save_volume(c.segmentation, out);
  } else if (what == "wall") {
    WallConfig w;
    w.sigma_mm = sigma;
    save_volume(meijering_wall_response(c.intensity, w), out);
  } else if (what == "gdt") {
    const StartMode mode = start_mode_from_string(start);
    if (mode == StartMode::Middle) throw ConfigError("--start must be pylorus or end");
    GdtConfig gc;
    gc.cell_length = c.spacing_mm();
    const Vec3& seed = mode == StartMode::Pylorus ? c.start_mm : c.end_mm;
    RealVolume gdt = gdt_for_case(c, c.segmentation.to_voxel(seed), gc);
    for (float& v : gdt.storage()) {
      if (!std::isfinite(v)) v = FLT_MAX;
    }
    save_volume(gdt, out);
  } else {
    throw ConfigError("--what must be wall, gdt or segmentation");
  }
  emit(g, {{"out", out.string()}, {"what", what}}, "wrote " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tubetrack: reinforcement-learning path tracking on tubular phantoms"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Base random seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "Progress on stderr");
  app.add_flag("--json", g.json_out, "Machine-readable JSON on stdout");

  auto* gen = app.add_subcommand("generate", "Generate phantom cases");
  std::string gen_config, gen_out, gen_ann = "mixed:1,1";
  int gen_count = 1;
  gen->add_option("--config", gen_config, "Phantom config JSON");
  gen->add_option("--count", gen_count, "Number of cases")->required();
  gen->add_option("--annotation", gen_ann, "path | segm | mixed:<p>,<s>");
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train actor and critic with PPO");
  std::string tr_cases, tr_config, tr_out, tr_val;
  bool tr_resume = false;
  tr->add_option("--cases", tr_cases, "Case directory")->required();
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--validation", tr_val, "Validation case directory");
  tr->add_flag("--resume", tr_resume, "Continue from the newest checkpoint in --out");

  auto* tk = app.add_subcommand("track", "Run one deterministic tracking episode");
  std::string tk_case, tk_ckpt, tk_out, tk_start = "pylorus", tk_trace;
  tk->add_option("--case", tk_case, "Case directory")->required();
  tk->add_option("--checkpoint", tk_ckpt, "checkpoint_<n>.json")->required();
  tk->add_option("--out", tk_out, "Output polyline JSON")->required();
  tk->add_option("--start", tk_start, "pylorus | end");
  tk->add_option("--trace", tk_trace, "Episode trace (JSON lines)");

  auto* ev = app.add_subcommand("eval", "Score predicted paths against GT");
  std::vector<std::string> ev_pred, ev_gt;
  double ev_tol = 10.0;
  std::string ev_case;
  ev->add_option("--pred", ev_pred, "Predicted polyline JSON (repeatable)")->required();
  ev->add_option("--gt", ev_gt, "GT polyline JSON (repeatable)")->required();
  ev->add_option("--tolerance-mm", ev_tol, "Distance tolerance");
  ev->add_option("--case", ev_case, "Case directory, adds coverage");

  auto* ex = app.add_subcommand("export", "Export a derived volume as NRRD");
  std::string ex_case, ex_what, ex_out, ex_start = "pylorus";
  double ex_sigma = WallConfig{}.sigma_mm;
  ex->add_option("--case", ex_case, "Case directory")->required();
  ex->add_option("--what", ex_what, "wall | gdt | segmentation")->required();
  ex->add_option("--out", ex_out, "Output NRRD")->required();
  ex->add_option("--start", ex_start, "GDT seed end: pylorus | end");
  ex->add_option("--wall-sigma-mm", ex_sigma, "Wall filter scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (gen->parsed()) return cmd_generate(g, gen_config, gen_count, gen_ann, gen_out);
    if (tr->parsed()) return cmd_train(g, tr_cases, tr_config, tr_out, tr_val, tr_resume);
    if (tk->parsed()) return cmd_track(g, tk_case, tk_ckpt, tk_out, tk_start, tk_trace);
    if (ev->parsed()) return cmd_eval(ev_pred, ev_gt, ev_tol, ev_case);
    if (ex->parsed()) return cmd_export(g, ex_case, ex_what, ex_out, ex_start, ex_sigma);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
