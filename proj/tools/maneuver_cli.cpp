// maneuver: generate synthetic sessions, train and evaluate behavior
// detectors, and run the gradient verification suite.
//
// Exit status: 0 success, 1 validation or I/O error, 2 verification failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maneuver/maneuver.hpp"

namespace fs = std::filesystem;
using namespace maneuver;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitVerify = 2;

constexpr const char* kRunConfig = "run_config.json";
constexpr const char* kTrainLog = "train_log.csv";
constexpr const char* kCheckpointDir = "checkpoint";
constexpr const char* kReportText = "report.txt";
constexpr const char* kReportCsv = "report.csv";

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  cmd->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t& s) { c.seed = s; c.seed_set = true; },
                                          "random seed");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

Json load_config(const Common& c) {
  if (c.config.empty()) return Json::object();
  try {
    return Json::parse(io::read_text(c.config));
  } catch (const Json::exception& e) {
    fail(ErrorKind::InvalidConfig, c.config + ": " + e.what());
  }
}

Json section(const Json& j, const char* key) { return j.contains(key) ? j.at(key) : Json::object(); }

void write_run_config(const fs::path& dir, const Json& j) {
  io::ensure_directory(dir);
  io::write_text(dir / kRunConfig, j.dump(2) + "\n");
}

// Returns `root/sub` when it holds sessions, else `root`.
fs::path data_root(const fs::path& root, const char* sub) {
  return fs::is_directory(root / sub) ? root / sub : root;
}

std::vector<Session> load_sessions(const fs::path& root) {
  std::vector<std::string> warnings;
  auto sessions = ingest::read_sessions(root, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (sessions.empty()) fail(ErrorKind::NoSessions, "no sessions under " + root.string());
  return sessions;
}

// ---- gen-data ---------------------------------------------------------------

struct GenFlags {
  Common common;
  std::optional<int> sessions, frames, variants;
  std::optional<double> fg_fraction, zipf, noise;
  std::optional<bool> cross_modal;
  std::optional<double> eval_fraction;
};

int cmd_gen_data(const GenFlags& f) {
  const Json cfg = load_config(f.common);
  auto gen = config_from_json<datagen::GeneratorConfig>(section(cfg, "generator"));
  double eval_fraction = cfg.value("eval_fraction", 0.2);
  if (f.common.seed_set) gen.seed = f.common.seed;
  if (f.sessions) gen.n_sessions = *f.sessions;
  if (f.frames) gen.frames_per_session = *f.frames;
  if (f.variants) gen.intra_class_variants = *f.variants;
  if (f.fg_fraction) gen.foreground_fraction_target = *f.fg_fraction;
  if (f.zipf) gen.zipf_exponent = *f.zipf;
  if (f.noise) gen.noise_sigma = *f.noise;
  if (f.cross_modal) gen.cross_modal = *f.cross_modal;
  if (f.eval_fraction) eval_fraction = *f.eval_fraction;

  const auto sessions = datagen::generate_dataset(gen);
  const auto split = split_dataset(sessions, eval_fraction, gen.seed);
  const fs::path out = f.common.out;
  for (const auto& s : split.train) ingest::write_session(s, out / "train" / s.session_id);
  for (const auto& s : split.eval) ingest::write_session(s, out / "eval" / s.session_id);
  write_run_config(out, {{"command", "gen-data"}, {"generator", to_json(gen)}, {"eval_fraction", eval_fraction}});

  std::printf("sessions: %zu train, %zu eval\n", split.train.size(), split.eval.size());
  std::printf("%-3s %-22s %s\n", "id", "class", "frames");
  for (const auto& [id, n] : datagen::class_frequency_report(sessions)) {
    std::printf("%-3d %-22s %zu\n", id, std::string(class_name(id)).c_str(), n);
  }
  std::printf("foreground_fraction: %.4f\n", datagen::foreground_fraction(sessions));
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainFlags {
  Common common;
  std::string data;
  std::string variant;
  std::optional<int> epochs, segment_length, lanes, hidden;
  std::optional<double> lr, gamma, alpha_background;
};

// Stream shapes and CAN width come from the data; a variant whose streams the
// data lacks is rejected before a model is built.
void fit_model_to_data(model::ModelConfig& mc, const std::vector<Session>& sessions) {
  const auto& first = sessions.front().frames.front();
  mc.stream_shapes.clear();
  for (const auto& [name, x] : first.features) mc.stream_shapes[name] = x.shape();
  mc.can_dim = static_cast<int>(first.can.size());
  for (const auto& s : model::variant_streams(mc.variant)) {
    if (!mc.stream_shapes.contains(s)) {
      fail(ErrorKind::StreamMismatch, std::string(model::variant_name(mc.variant)) + " needs stream '" + s +
                                          "' which the data does not provide");
    }
  }
}

int cmd_train(const TrainFlags& f) {
  const Json cfg = load_config(f.common);
  auto mc = config_from_json<model::ModelConfig>(section(cfg, "model"));
  auto tc = config_from_json<train::TrainConfig>(section(cfg, "train"));
  std::uint64_t model_seed = cfg.value("model_seed", tc.seed);
  if (f.common.seed_set) {
    tc.seed = f.common.seed;
    model_seed = f.common.seed;
  }
  if (!f.variant.empty()) {
    const auto v = model::parse_variant(f.variant);
    if (!v) fail(ErrorKind::InvalidConfig, "unknown variant '" + f.variant + "'");
    mc.variant = *v;
  }
  if (f.epochs) tc.epochs = *f.epochs;
  if (f.segment_length) tc.segment_length = *f.segment_length;
  if (f.lanes) tc.n_lanes = *f.lanes;
  if (f.hidden) mc.hidden_size = *f.hidden;
  if (f.lr) tc.optimizer.lr = *f.lr;
  if (f.gamma) tc.loss.gamma = *f.gamma;
  if (f.alpha_background) tc.loss.alpha_background = *f.alpha_background;
  train::validate(tc);

  const fs::path data = data_root(f.data.empty() ? cfg.value("data", "") : f.data, "train");
  if (data.empty()) fail(ErrorKind::InvalidConfig, "no --data given and none in the config");
  const auto sessions = load_sessions(data);
  fit_model_to_data(mc, sessions);
  auto m = model::build_model(mc, model_seed);
  const auto plan = train::make_batch_plan(sessions, static_cast<std::size_t>(tc.n_lanes),
                                           static_cast<std::size_t>(tc.segment_length), tc.seed);
  std::printf("variant %s: %zu parameters, %zu sessions, %zu steps/epoch\n",
              std::string(model::variant_name(mc.variant)).c_str(), m.parameter_count(), sessions.size(),
              plan.steps());
  int reported_epoch = -1;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  const auto log = train::train(m, sessions, plan, tc, [&](const train::LogEntry& e) {
    if (e.epoch != reported_epoch) {
      reported_epoch = e.epoch;
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
    epoch_sum += e.mean_loss;
    if (++epoch_steps == plan.steps()) {
      std::printf("epoch %d mean_loss %.6f\n", e.epoch, epoch_sum / static_cast<double>(epoch_steps));
      std::fflush(stdout);
    }
  });

  const fs::path out = f.common.out;
  io::ensure_directory(out);
  train::save_checkpoint(m, static_cast<std::int64_t>(log.entries.size()), out / kCheckpointDir);
  io::write_text(out / kTrainLog, log.to_text());
  write_run_config(out, {{"command", "train"},
                         {"data", data.string()},
                         {"model", to_json(mc)},
                         {"model_seed", model_seed},
                         {"train", to_json(tc)}});
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalFlags {
  Common common;
  std::string data;
  std::vector<std::string> ckpts;
};

fs::path checkpoint_dir(const fs::path& p) {
  return fs::exists(p / train::kCheckpointManifest) ? p : p / kCheckpointDir;
}

// The checkpoint's model must find every stream it consumes in the data,
// with the shape it was trained on.
void check_checkpoint_fits(const model::Model& m, const std::vector<Session>& sessions, const fs::path& ckpt) {
  const auto& first = sessions.front().frames.front();
  for (const auto& s : m.required_streams()) {
    const auto it = first.features.find(s);
    if (it == first.features.end() || it->second.shape() != m.config().stream_shapes.at(s)) {
      fail(ErrorKind::ConfigMismatch, ckpt.string() + ": variant " + std::string(model::variant_name(m.config().variant)) +
                                          " does not match the streams of the eval data ('" + s + "')");
    }
  }
  if (first.can.size() != static_cast<std::size_t>(m.config().can_dim)) {
    fail(ErrorKind::ConfigMismatch, ckpt.string() + ": CAN width differs from the eval data");
  }
}

int cmd_eval(const EvalFlags& f) {
  const Json cfg = load_config(f.common);
  const fs::path data = data_root(f.data.empty() ? cfg.value("data", "") : f.data, "eval");
  if (data.empty()) fail(ErrorKind::InvalidConfig, "no --data given and none in the config");
  auto ckpt_paths = f.ckpts;
  if (ckpt_paths.empty() && cfg.contains("checkpoints")) ckpt_paths = cfg.at("checkpoints").get<std::vector<std::string>>();
  if (ckpt_paths.empty()) fail(ErrorKind::InvalidConfig, "no --ckpt given and none in the config");
  const auto sessions = load_sessions(data);
  eval::NamedReports table, csv;
  Json ckpts = Json::array();
  for (const auto& c : ckpt_paths) {
    const auto dir = checkpoint_dir(c);
    auto loaded = train::load_checkpoint(dir);
    check_checkpoint_fits(loaded.model, sessions, dir);
    const auto report = eval::evaluate(loaded.model, sessions);
    table.emplace_back(std::string(model::variant_heading(loaded.model.config().variant)), report);
    csv.emplace_back(std::string(model::variant_name(loaded.model.config().variant)), report);
    ckpts.push_back(dir.string());
  }
  const auto text = eval::render_table(table);
  const fs::path out = f.common.out;
  io::ensure_directory(out);
  io::write_text(out / kReportText, text);
  io::write_text(out / kReportCsv, eval::render_csv(csv));
  write_run_config(out, {{"command", "eval"}, {"data", data.string()}, {"checkpoints", ckpts}});
  std::fputs(text.c_str(), stdout);
  std::string absent;
  for (auto c : csv.front().second.absent_classes()) absent += (absent.empty() ? "" : ", ") + std::string(class_name(c));
  if (!absent.empty()) std::printf("no positive frames (excluded from the mean): %s\n", absent.c_str());
  return kExitOk;
}

// ---- report -----------------------------------------------------------------

struct ReportFlags {
  Common common;
  std::vector<std::string> runs;
};

int cmd_report(const ReportFlags& f) {
  std::string out;
  for (const auto& r : f.runs) {
    const fs::path run = r;
    bool found = false;
    out += "== " + run.string() + "\n";
    if (fs::exists(run / kTrainLog)) {
      found = true;
      train::TrainingLog log;
      log.entries = train::parse_log(io::read_text(run / kTrainLog));
      const auto losses = log.epoch_mean_losses();
      char buf[96];
      out += "epoch  mean_loss\n";
      for (std::size_t e = 0; e < losses.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%5zu  %.6f\n", e, losses[e]);
        out += buf;
      }
      if (losses.size() > 1) {
        std::snprintf(buf, sizeof buf, "last/first: %.4f\n", losses.back() / losses.front());
        out += buf;
      }
    }
    if (fs::exists(run / kReportText)) {
      found = true;
      out += io::read_text(run / kReportText);
    }
    if (!found) fail(ErrorKind::IoFailure, run.string() + " holds neither " + kTrainLog + " nor " + kReportText);
  }
  std::fputs(out.c_str(), stdout);
  if (!f.common.out.empty()) {
    io::ensure_directory(f.common.out);
    io::write_text(fs::path(f.common.out) / "summary.txt", out);
  }
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckFlags {
  Common common;
  std::string fault = "none";
};

int cmd_gradcheck(const GradcheckFlags& f) {
  const auto fault = verify::parse_fault(f.fault);
  const auto lines = verify::run_suite(f.common.seed, fault);
  std::string text;
  for (const auto& l : lines) text += verify::format_check(l) + "\n";
  const bool ok = verify::all_passed(lines);
  text += ok ? "all checks passed\n" : "verification FAILED\n";
  std::fputs(text.c_str(), stdout);
  if (!f.common.out.empty()) {
    io::ensure_directory(f.common.out);
    io::write_text(fs::path(f.common.out) / "gradcheck.txt", text);
  }
  return ok ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactical driver behavior detection: data, training, evaluation"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic sessions into OUT/train and OUT/eval");
  add_common(gen_cmd, gen.common, true);
  gen_cmd->add_option("--sessions", gen.sessions, "number of sessions");
  gen_cmd->add_option("--frames", gen.frames, "frames per session");
  gen_cmd->add_option("--variants", gen.variants, "intra-class variants");
  gen_cmd->add_option("--fg-fraction", gen.fg_fraction, "target foreground frame fraction");
  gen_cmd->add_option("--zipf", gen.zipf, "Zipf exponent of the class law");
  gen_cmd->add_option("--noise", gen.noise, "observation noise sigma");
  gen_cmd->add_option("--cross-modal", gen.cross_modal, "split class identity across depth and seg");
  gen_cmd->add_option("--eval-fraction", gen.eval_fraction, "fraction of sessions held out");

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "train one variant; writes OUT/checkpoint and OUT/train_log.csv");
  add_common(train_cmd, tr.common, true);
  train_cmd->add_option("--data", tr.data, "data directory (uses DATA/train when present)");
  train_cmd->add_option("--variant", tr.variant, "baseline-image-can, recon-can, depth-can, seg-can, fusion-all");
  train_cmd->add_option("--epochs", tr.epochs, "passes over the data");
  train_cmd->add_option("--segment-length", tr.segment_length, "ticks per truncated segment");
  train_cmd->add_option("--lanes", tr.lanes, "parallel session lanes");
  train_cmd->add_option("--hidden", tr.hidden, "LSTM hidden size");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--gamma", tr.gamma, "focal loss gamma (0 is cross-entropy)");
  train_cmd->add_option("--alpha-bg", tr.alpha_background, "loss weight of the background class");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "per-class AP of one or more checkpoints");
  add_common(eval_cmd, ev.common, true);
  eval_cmd->add_option("--data", ev.data, "data directory (uses DATA/eval when present)");
  eval_cmd->add_option("--ckpt", ev.ckpts, "checkpoint or training run directory; repeatable");

  ReportFlags rep;
  auto* report_cmd = app.add_subcommand("report", "summarize training and evaluation runs");
  add_common(report_cmd, rep.common, false);
  report_cmd->add_option("--run", rep.runs, "run directory; repeatable")->required();

  GradcheckFlags gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference verification of every layer and the model");
  add_common(gc_cmd, gc.common, false);
  gc_cmd->add_option("--inject-fault", gc.fault, "corrupt a backward pass on purpose (none, dense)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (report_cmd->parsed()) return cmd_report(rep);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
