#include "dropclass/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "dropclass/datagen.hpp"
#include "dropclass/eval.hpp"
#include "dropclass/gradcheck.hpp"
#include "dropclass/hash.hpp"
#include "dropclass/tensor_io.hpp"
#include "dropclass/trainer.hpp"

#ifndef DROPCLASS_VERSION
#define DROPCLASS_VERSION "0.0.0"
#endif

namespace dropclass {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  int threads = 1;

  // Subcommand-specific.
  std::string data;
  std::string train_data;
  std::string checkpoint;
  std::string reference;
  std::string mode;
  std::optional<Index> iterations;
  std::optional<Index> samples;
  std::string split;
  Index index = 0;
  int cls = 0;
  int coordinates = 40;
  std::string manifest;
};

/// Collects what a run read and wrote, then writes `<out>/manifest.cfg`.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args, fs::path out)
      : command_(std::move(command)), out_(std::move(out)) {
    kv_.set("tool.version", DROPCLASS_VERSION);
    kv_.set("command", command_);
    kv_.set("argv.count", std::int64_t(args.size()));
    for (std::size_t i = 0; i < args.size(); ++i) kv_.set("argv." + std::to_string(i), args[i]);
    kv_.set("cwd", fs::current_path().string());
  }

  void seed(std::uint64_t s) { kv_.set("seed", s); }
  void config(const KeyValues& c) { kv_.merge(c, "config."); }
  void note(const std::string& key, const std::string& value) { kv_.set("run." + key, value); }

  void input(const std::string& name, const fs::path& path) {
    kv_.set("input." + name + ".path", path.string());
    kv_.set("input." + name + ".sha256", fs::is_directory(path) ? sha256_directory(path) : sha256_file(path));
  }

  /// Writes `contents` atomically below the output directory and records its hash.
  void output(const std::string& relative, const std::string& contents) {
    write_file_atomic(out_ / relative, contents);
    kv_.set("output." + relative + ".sha256", sha256_hex(contents));
  }

  void output_file(const std::string& relative) {
    kv_.set("output." + relative + ".sha256", sha256_file(out_ / relative));
  }

  void write() { write_file_atomic(out_ / "manifest.cfg", kv_.serialize()); }

 private:
  std::string command_;
  fs::path out_;
  KeyValues kv_;
};

std::uint64_t resolve_seed(const Options& o, const KeyValues& config) {
  if (o.seed) return *o.seed;
  if (config.has("seed")) return config.get_uint("seed", 0);
  if (const char* env = std::getenv("DROPCLASS_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ContractError("cli", std::string("DROPCLASS_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

KeyValues load_config(const Options& o) { return o.config.empty() ? KeyValues{} : KeyValues::load(o.config); }

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ContractError("cli", "--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ContractError("cli", std::string(flag) + " is required");
}

int cmd_gen_data(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const KeyValues config = load_config(o);
  const fs::path dir = require_out(o);
  const SceneSpec spec = SceneSpec::from_keyvalues(config.with_prefix("scene."));
  const std::uint64_t seed = resolve_seed(o, config);
  const Index n = o.samples ? *o.samples : config.get_int("samples", 2000);
  const Split split = parse_split(o.split.empty() ? config.get_string("split", "train") : o.split);
  if (n < 1) throw ContractError("cli", "samples must be >= 1");

  Manifest m("gen-data", args, dir);
  if (!o.config.empty()) m.input("config", o.config);
  m.seed(seed);
  const Dataset ds = generate_dataset(spec, n, seed, split);
  const std::string sub = to_string(split);
  save_dataset(ds, dir / sub);
  for (const auto& e : fs::directory_iterator(dir / sub)) m.output_file(sub + "/" + e.path().filename().string());
  const auto freq = pixel_frequencies(ds);
  std::string csv = "class,name,frequency\n";
  for (std::size_t c = 0; c < freq.size(); ++c) {
    csv += std::to_string(c) + "," + spec.classes[c].name + "," + format_double(freq[c]) + "\n";
  }
  m.output("frequencies.csv", csv);
  m.write();
  out << "wrote " << n << " " << to_string(split) << " samples to " << (dir / sub).string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  KeyValues config = load_config(o);
  require(o.data, "--data");
  const fs::path dir = require_out(o);
  if (!o.mode.empty()) config.set("mode", o.mode);
  if (o.iterations) config.set("iterations", std::int64_t(*o.iterations));
  config.set("seed", resolve_seed(o, config));
  config.set("threads", o.threads);
  TrainConfig tc = TrainConfig::from_keyvalues(config);
  tc.dump_dir = dir / "nonfinite_batch";
  if (tc.threads > 1) {
    err << "note: --threads " << tc.threads
        << " splits batch items across threads; gradients are reduced in batch order, so results match a "
           "single-threaded run\n";
  }

  Manifest m("train", args, dir);
  if (!o.config.empty()) m.input("config", o.config);
  m.input("data", o.data);
  m.seed(tc.seed);
  KeyValues resolved = tc.to_keyvalues();
  resolved.erase("threads");
  m.config(resolved);

  const Dataset ds = load_dataset(o.data);
  const Index every = std::max<Index>(1, tc.iterations / 20);
  const TrainReport report = train(ds, tc, [&](const StepRecord& r) {
    if (o.verbose && (r.iteration % every == 0 || r.iteration + 1 == tc.iterations)) {
      err << "step " << r.iteration << "/" << tc.iterations << " l_total=" << format_double(r.loss.l_total)
          << " lambda=" << format_double(r.lambda) << "\n";
    }
  });
  m.output("checkpoint.dcm", serialize_checkpoint(report.model));
  m.output("loss_trace.csv", loss_trace_csv(report.trace));
  m.output("train_config.cfg", resolved.serialize());
  m.note("wall_seconds", format_double(report.wall_seconds));
  m.write();
  const auto& last = report.trace.back().loss;
  out << "trained " << to_string(tc.mode) << " for " << tc.iterations << " steps; final l_total "
      << format_double(last.l_total) << "\n";
  return kExitOk;
}

std::vector<double> training_frequencies(const Options& o, const Dataset& fallback, Manifest& m) {
  if (o.train_data.empty()) return pixel_frequencies(fallback);
  m.input("train_data", o.train_data);
  return pixel_frequencies(load_dataset(o.train_data));
}

int cmd_eval(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require(o.checkpoint, "--checkpoint");
  require(o.data, "--data");
  const fs::path dir = require_out(o);
  Manifest m("eval", args, dir);
  m.input("checkpoint", o.checkpoint);
  m.input("data", o.data);
  const Dataset ds = load_dataset(o.data);
  const Model model = load_checkpoint(o.checkpoint, ds.spec.num_classes());
  const auto freq = training_frequencies(o, ds, m);
  const IoUReport report = evaluate(model_predictor(model), ds, freq);
  const std::string csv = iou_csv(report, ds.spec);
  m.output("iou.csv", csv);
  m.write();
  out << csv;
  return kExitOk;
}

int cmd_erase_bench(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require(o.checkpoint, "--checkpoint");
  require(o.data, "--data");
  const fs::path dir = require_out(o);
  Manifest m("erase-bench", args, dir);
  m.input("checkpoint", o.checkpoint);
  m.input("data", o.data);
  const Dataset ds = load_dataset(o.data);
  const Model model = load_checkpoint(o.checkpoint, ds.spec.num_classes());
  ErasureReport report;
  if (o.reference.empty()) {
    report = erasure_benchmark(model_predictor(model), ds);
  } else {
    m.input("reference", o.reference);
    const Model ref = load_checkpoint(o.reference, ds.spec.num_classes());
    const ErasureReport ref_report = erasure_benchmark(model_predictor(ref), ds);
    m.output("reference_erasure.csv", erasure_csv(ref_report, ds.spec));
    report = erasure_benchmark(model_predictor(model), ds, ref_report.reference);
  }
  const std::string csv = erasure_csv(report, ds.spec);
  m.output("erasure.csv", csv);
  m.write();
  out << csv;
  return kExitOk;
}

int cmd_correlate(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require(o.checkpoint, "--checkpoint");
  const fs::path dir = require_out(o);
  Manifest m("correlate", args, dir);
  m.input("checkpoint", o.checkpoint);
  const Model model = load_checkpoint(o.checkpoint);
  const KeyValues config = load_config(o);
  SceneSpec spec = SceneSpec::from_keyvalues(config.with_prefix("scene."));
  const std::string csv = correlation_csv(weight_correlation(model), spec);
  m.output("correlation.csv", csv);
  m.write();
  out << csv;
  return kExitOk;
}

int cmd_gradcam(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require(o.checkpoint, "--checkpoint");
  require(o.data, "--data");
  const fs::path dir = require_out(o);
  Manifest m("gradcam", args, dir);
  m.input("checkpoint", o.checkpoint);
  m.input("data", o.data);
  const Dataset ds = load_dataset(o.data);
  if (o.index < 0 || o.index >= ds.size()) throw ContractError("cli", "--index outside the dataset");
  const Model model = load_checkpoint(o.checkpoint, ds.spec.num_classes());
  const Tensor map = gradcam_map(model, ds.samples[std::size_t(o.index)].image, o.cls);
  const std::string stem = "gradcam_" + std::to_string(o.index) + "_" + std::to_string(o.cls);
  export_gradcam(map, dir / stem);
  m.output_file(stem + ".pgm");
  m.output_file(stem + ".csv");
  m.write();
  out << "wrote " << (dir / stem).string() << ".{pgm,csv}\n";
  return kExitOk;
}

int cmd_grad_check(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(o, load_config(o));
  const auto results = run_grad_check_suite(seed, o.coordinates);
  bool ok = true;
  std::string csv = "check,coordinates,passed,max_relative_error,status\n";
  for (const auto& r : results) {
    ok = ok && r.ok();
    const char* status = r.ok() ? "PASS" : "FAIL";
    out << status << " " << r.name << ": " << r.passed << "/" << r.coordinates
        << " coordinates within 1e-3, max relative error " << format_double(r.max_relative_error) << "\n";
    csv += r.name + "," + std::to_string(r.coordinates) + "," + std::to_string(r.passed) + "," +
           format_double(r.max_relative_error) + "," + status + "\n";
  }
  if (!o.out.empty()) {
    const fs::path dir = require_out(o);
    Manifest m("grad-check", args, dir);
    m.seed(seed);
    m.output("grad_check.csv", csv);
    m.write();
  }
  return ok ? kExitOk : kExitDomainError;
}

int dispatch(const std::string& command, const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_replay(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.manifest, "--manifest");
  const fs::path target = fs::absolute(require_out(o));
  const KeyValues kv = KeyValues::load(o.manifest);
  const std::string command = kv.get_string("command");
  if (command == "replay") throw ProtocolError("cli", "cannot replay a replay manifest");

  std::vector<std::string> args;
  for (std::int64_t i = 0; i < kv.get_int("argv.count"); ++i) args.push_back(kv.get_string("argv." + std::to_string(i)));
  // Point --out at the replay directory.
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") {
      args[i + 1] = target.string();
      replaced = true;
    }
  }
  if (!replaced) throw ProtocolError("cli", "manifest has no --out argument to redirect");

  const fs::path previous = fs::current_path();
  fs::current_path(kv.get_string("cwd"));
  struct Restore {
    fs::path p;
    ~Restore() { fs::current_path(p); }
  } restore{previous};

  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("input.", 0) != 0 || key.size() < 7 || key.substr(key.size() - 7) != ".sha256") continue;
    const std::string name = key.substr(6, key.size() - 6 - 7);
    const fs::path path = kv.get_string("input." + name + ".path");
    if (!fs::exists(path)) {
      throw ProtocolError("cli", "input '" + name + "' missing at " + path.string() + "; expected sha256 " + value);
    }
    const std::string actual = fs::is_directory(path) ? sha256_directory(path) : sha256_file(path);
    if (actual != value) {
      throw ProtocolError("cli", "input '" + name + "' hash mismatch: manifest " + value + ", found " + actual);
    }
  }

  const int status = dispatch(command, args, out, err);
  if (status != kExitOk) return status;

  int checked = 0;
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("output.", 0) != 0) continue;
    const std::string rel = key.substr(7, key.size() - 7 - 7);
    const std::string actual = sha256_file(target / rel);
    if (actual != value) {
      throw ProtocolError("cli", "replayed output '" + rel + "' differs: manifest " + value + ", replay " + actual);
    }
    ++checked;
  }
  out << "replay ok: " << checked << " outputs identical\n";
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "Flat key = value config file");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--seed", o.seed, "Seed; wins over the config and DROPCLASS_SEED");
  sub->add_flag("--verbose,-v", o.verbose, "Progress on stderr");
  sub->add_option("--threads", o.threads, "Batch-item threads")->check(CLI::PositiveNumber);
}

int parse_and_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(const std::string& command, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> full{command};
  full.insert(full.end(), args.begin(), args.end());
  return parse_and_run(full, out, err);
}

int parse_and_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DropClass segmentation laboratory", "dropclass"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", DROPCLASS_VERSION);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  add_common(gen, o);
  gen->add_option("--samples", o.samples, "Number of samples");
  gen->add_option("--split", o.split, "train, val or test");

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, o);
  tr->add_option("--data", o.data, "Dataset directory");
  tr->add_option("--mode", o.mode, "baseline, dropclass, ablation_no_sup or ablation_label_drop");
  tr->add_option("--iterations", o.iterations, "Training steps");

  auto* ev = app.add_subcommand("eval", "Per-class IoU of a checkpoint");
  add_common(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  ev->add_option("--data", o.data, "Evaluation dataset directory");
  ev->add_option("--train-data", o.train_data, "Training dataset used for the class frequencies");

  auto* eb = app.add_subcommand("erase-bench", "Class-erasure benchmark");
  add_common(eb, o);
  eb->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  eb->add_option("--data", o.data, "Evaluation dataset directory");
  eb->add_option("--reference", o.reference, "Checkpoint whose Top-3 erasers are reused");

  auto* co = app.add_subcommand("correlate", "Cosine similarity of classifier weight rows");
  add_common(co, o);
  co->add_option("--checkpoint", o.checkpoint, "Model checkpoint");

  auto* gc = app.add_subcommand("gradcam", "Export a class activation map");
  add_common(gc, o);
  gc->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  gc->add_option("--data", o.data, "Dataset directory");
  gc->add_option("--index", o.index, "Sample index");
  gc->add_option("--class", o.cls, "Class index");

  auto* gk = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  add_common(gk, o);
  gk->add_option("--coordinates", o.coordinates, "Sampled coordinates per check")->check(CLI::Range(30, 100000));

  auto* rp = app.add_subcommand("replay", "Re-run a manifest and compare output hashes");
  add_common(rp, o);
  rp->add_option("--manifest", o.manifest, "manifest.cfg of an earlier run");

  std::vector<const char*> argv{"dropclass"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << DROPCLASS_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'dropclass --help' for usage\n";
    return kExitUsage;
  }

  const std::vector<std::string> sub_args(args.begin() + 1, args.end());
  if (gen->parsed()) return cmd_gen_data(o, sub_args, out);
  if (tr->parsed()) return cmd_train(o, sub_args, out, err);
  if (ev->parsed()) return cmd_eval(o, sub_args, out);
  if (eb->parsed()) return cmd_erase_bench(o, sub_args, out);
  if (co->parsed()) return cmd_correlate(o, sub_args, out);
  if (gc->parsed()) return cmd_gradcam(o, sub_args, out);
  if (gk->parsed()) return cmd_grad_check(o, sub_args, out);
  return cmd_replay(o, out, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return parse_and_run(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return kExitDomainError;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace dropclass
