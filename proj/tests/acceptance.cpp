// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// argv[1] is the path to the maneuver executable.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "maneuver/maneuver.hpp"

namespace fs = std::filesystem;
using namespace maneuver;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.passed) ++g_failures;
  std::printf("%s %2d %-22s %s\n", o.passed ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("maneuver_acceptance_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// --- gradient and state checks -------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto lines = verify::run_suite(0);
  const double elapsed = seconds_since(t0);
  std::string detail;
  bool ok = elapsed < 60.0;
  double worst = 0.0;
  for (const auto& l : lines) {
    if (l.name == "model_truncation" || l.name == "state_carry") continue;
    worst = std::max(worst, l.value);
    ok = ok && l.passed;
    if (!l.passed) detail += l.name + " ";
  }
  return {ok, detail + fmt("max_rel_error=%.3g runtime=%.1fs", worst, elapsed)};
}

Outcome state_carry() {
  const auto l = verify::check_state_carry(0, 200);
  return {l.passed, fmt("max_abs_diff=%.3g over 200 sessions", l.value)};
}

Outcome truncation() {
  const auto l = verify::check_model_truncation(0);
  return {l.passed, fmt("max_rel_error=%.3g", l.value)};
}

Outcome loss_degeneracy() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z(kNumClasses);
    for (auto& v : z) v = u(rng);
    const auto p = nn::softmax(z);
    const int t = static_cast<int>(rng() % kNumClasses);
    const std::vector<double> ones(kNumClasses, 1.0);
    const double focal = nn::focal_loss(p, t, 0.0, ones).loss;
    worst = std::max(worst, std::abs(focal - nn::cross_entropy(std::span<const double>(p), t)));
  }
  const std::vector<double> half{0.5, 0.5}, ninety{0.9, 0.1}, one{};
  const double ln2 = nn::focal_loss(half, 0, 0.0, one).loss;
  const double easy = nn::focal_loss(ninety, 0, 2.0, one).loss;
  const auto sig6 = [](double v, double want) { return std::stod(fmt("%.6g", v)) == want; };
  const bool ok = worst < 1e-9 && sig6(ln2, 0.693147) && sig6(easy, 0.00105361);
  return {ok, fmt("max|focal-ce|=%.3g ln2=%.6g p0.9,g2=%.6g", worst, ln2, easy)};
}

// --- average precision ---------------------------------------------------

// Rank of each frame counted pairwise; precision accumulated over positives
// in rank order.
double oracle_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank[i];
  std::vector<std::size_t> positive_ranks;
  for (std::size_t i = 0; i < n; ++i)
    if (y[i]) positive_ranks.push_back(rank[i]);
  std::sort(positive_ranks.begin(), positive_ranks.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < positive_ranks.size(); ++k) {
    sum += static_cast<double>(k + 1) / static_cast<double>(positive_ranks[k]);
  }
  return sum / static_cast<double>(positive_ranks.size());
}

Outcome ap_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t cases = 0, mismatches = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    const int draws = n <= 4 ? 200 : 40;
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = (mask >> i) & 1u;
      for (int d = 0; d < draws; ++d) {
        std::vector<double> s(n);
        for (auto& v : s) v = u(rng);
        ++cases;
        if (eval::average_precision(s, y) != oracle_ap(s, y)) ++mismatches;
      }
    }
  }
  return {cases >= 10000 && mismatches == 0, fmt("%zu cases, %zu mismatches", cases, mismatches)};
}

// --- published table -----------------------------------------------------

using Column = std::array<std::optional<double>, kNumForeground>;

Outcome table_arithmetic() {
  const Column baseline{35.72, 25.48, 7.27, 20.00, 0.74, 73.52, 73.95, 15.78, 74.12, 4.04, 6.35};
  const Column ours{34.45, 28.06, 5.40, 43.05, 2.10, 75.07, 75.82, 26.40, 77.70, 13.14, 16.42};
  const auto b = eval::EvaluationReport::from_percentages(baseline);
  const auto o = eval::EvaluationReport::from_percentages(ours);
  const auto table = eval::render_table({{"Image+CAN", b}, {"Depth+Seg+CAN", o}});
  const bool ok = std::abs(*b.mean_ap - 30.63) <= 0.005 && std::abs(*o.mean_ap - 36.15) <= 0.005 &&
                  table.find("30.63") != std::string::npos && table.find("36.15") != std::string::npos;
  return {ok, fmt("baseline=%.4f ours=%.4f", *b.mean_ap, *o.mean_ap)};
}

// --- generator -----------------------------------------------------------

Outcome generator_statistics() {
  datagen::GeneratorConfig g;
  g.seed = 7;
  const auto sessions = datagen::generate_dataset(g);
  const double fg = datagen::foreground_fraction(sessions);
  const auto counts = datagen::class_frequency_report(sessions);
  int inversions = 0;
  for (ClassId a = 1; a < kNumClasses; ++a)
    for (ClassId b = a + 2; b < kNumClasses; ++b)
      if (counts.at(b) > counts.at(a)) ++inversions;
  const bool ok = sessions.size() == 10 && std::abs(fg - 0.15) <= 0.03 && inversions == 0;
  return {ok, fmt("foreground=%.4f non-adjacent inversions=%d", fg, inversions)};
}

// --- training ------------------------------------------------------------

const std::map<std::string, Shape> kStreams{{"depth", {4, 4, 8}}, {"seg", {4, 4, 8}}};

struct Setup {
  double zipf, noise;
  int epochs;
};

DatasetSplit make_split(std::uint64_t seed, const Setup& s) {
  datagen::GeneratorConfig g;
  g.seed = seed;
  g.n_sessions = 20;
  g.frames_per_session = 1000;
  g.zipf_exponent = s.zipf;
  g.noise_sigma = s.noise;
  g.stream_shapes = kStreams;
  return split_dataset(datagen::generate_dataset(g), 0.4, seed);
}

eval::EvaluationReport fit_and_evaluate(const DatasetSplit& split, model::Variant v, double gamma, int epochs,
                                        std::uint64_t seed) {
  model::ModelConfig mc;
  mc.variant = v;
  mc.stream_shapes = kStreams;
  mc.reduce_channels = {{"depth", 4}, {"seg", 4}};
  mc.can_feature_dim = 16;
  mc.hidden_size = 32;
  auto m = model::build_model(mc, seed);
  train::TrainConfig tc;
  tc.segment_length = 30;
  tc.n_lanes = 4;
  tc.epochs = epochs;
  tc.optimizer.lr = 3e-3;
  tc.loss.gamma = gamma;
  if (gamma == 0.0) tc.loss.alpha_background = 1.0;
  train::train(m, split.train, train::make_batch_plan(split.train, tc.n_lanes, tc.segment_length, seed), tc);
  return eval::evaluate(m, split.eval);
}

Outcome fusion_advantage() {
  const auto t0 = Clock::now();
  const Setup setup{1.0, 0.5, 8};
  std::vector<double> over_depth, over_seg;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto split = make_split(seed, setup);
    const double f = *fit_and_evaluate(split, model::Variant::FusionAll, 2.0, setup.epochs, seed).mean_ap;
    const double d = *fit_and_evaluate(split, model::Variant::DepthCan, 2.0, setup.epochs, seed).mean_ap;
    const double s = *fit_and_evaluate(split, model::Variant::SegCan, 2.0, setup.epochs, seed).mean_ap;
    over_depth.push_back(f - d);
    over_seg.push_back(f - s);
    detail += fmt("[%.1f/%.1f/%.1f] ", f, d, s);
  }
  const double elapsed = seconds_since(t0);
  const double md = median3(over_depth), ms = median3(over_seg);
  return {md >= 5.0 && ms >= 5.0 && elapsed < 600.0,
          detail + fmt("median margin depth=%.1f seg=%.1f runtime=%.0fs", md, ms, elapsed)};
}

// Mean AP over the three classes with the fewest training frames among those
// present in the evaluation split.
double rarest_mean_ap(const DatasetSplit& split, const eval::EvaluationReport& r) {
  const auto freq = datagen::class_frequency_report(split.train);
  std::vector<ClassId> present;
  for (ClassId c = 1; c < kNumClasses; ++c)
    if (r.per_class_ap[c]) present.push_back(c);
  std::stable_sort(present.begin(), present.end(), [&](ClassId a, ClassId b) { return freq.at(a) < freq.at(b); });
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) sum += *r.per_class_ap[present.at(i)];
  return sum / 3.0;
}

Outcome imbalance_handling() {
  const Setup setup{1.3, 1.5, 4};
  std::vector<double> margins;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto split = make_split(seed, setup);
    const double focal =
        rarest_mean_ap(split, fit_and_evaluate(split, model::Variant::FusionAll, 2.0, setup.epochs, seed));
    const double ce = rarest_mean_ap(split, fit_and_evaluate(split, model::Variant::FusionAll, 0.0, setup.epochs, seed));
    margins.push_back(focal - ce);
    detail += fmt("[%.1f vs %.1f] ", focal, ce);
  }
  const double m = median3(margins);
  return {m > 0.0, detail + fmt("median margin=%.2f", m)};
}

// --- CLI reproducibility -------------------------------------------------

int shell(const std::string& cmd) {
  const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::map<std::string, std::vector<std::uint8_t>> tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

Outcome reproducibility(const std::string& cli) {
  const auto root = scratch("repro");
  io::write_text(root / "config.json", R"({
  "generator": {"stream_shapes": {"depth": [2, 2, 6], "seg": [2, 2, 6]}, "can_dim": 4, "noise_sigma": 0.3},
  "model": {"reduce_channels": {"depth": 3, "seg": 3}, "can_feature_dim": 4, "hidden_size": 8},
  "train": {"segment_length": 10, "n_lanes": 2, "epochs": 3}
})");
  const std::string exe = "'" + cli + "'";
  const std::string cfg = " --config '" + (root / "config.json").string() + "'";
  const auto dir = root / "run";
  const std::string d = "'" + dir.string() + "'";
  // Both passes use the same paths so recorded run configs compare too.
  std::vector<std::map<std::string, std::vector<std::uint8_t>>> trees;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(dir);
    if (shell(exe + " gen-data" + cfg + " --seed 5 --sessions 4 --frames 150 --out " + d + "/data") != 0 ||
        shell(exe + " train" + cfg + " --seed 5 --data " + d + "/data --out " + d + "/train") != 0 ||
        shell(exe + " eval --data " + d + "/data --ckpt " + d + "/train --out " + d + "/eval") != 0) {
      fs::remove_all(root);
      return {false, fmt("pipeline failed in pass %d", pass + 1)};
    }
    trees.push_back(tree(dir));
  }
  const auto& a = trees[0];
  const auto& b = trees[1];
  const bool has_all = a.contains("train/train_log.csv") && a.contains("train/checkpoint/params.bin") &&
                       a.contains("eval/report.csv");
  fs::remove_all(root);
  return {has_all && a == b, fmt("%zu files compared", a.size())};
}

// --- file formats --------------------------------------------------------

bool frames_bit_equal(const Session& x, const Session& y) {
  if (x.session_id != y.session_id || x.size() != y.size()) return false;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto &a = x.frames[t], &b = y.frames[t];
    if (a.label != b.label || a.can.size() != b.can.size() || a.features.size() != b.features.size()) return false;
    if (std::memcmp(a.can.data(), b.can.data(), a.can.size() * sizeof(float)) != 0) return false;
    for (const auto& [name, tensor] : a.features) {
      const auto it = b.features.find(name);
      if (it == b.features.end() || it->second.shape() != tensor.shape()) return false;
      if (std::memcmp(tensor.values().data(), it->second.values().data(), tensor.size() * sizeof(float)) != 0)
        return false;
    }
  }
  return true;
}

template <class F>
std::optional<ErrorKind> error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

Outcome format_integrity() {
  const auto root = scratch("format");
  datagen::GeneratorConfig g;
  g.seed = 11;
  g.n_sessions = 2;
  g.frames_per_session = 200;
  const auto sessions = datagen::generate_dataset(g);
  bool round_trip = true;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto dir = root / ("s" + std::to_string(i));
    ingest::write_session(sessions[i], dir);
    round_trip = round_trip && frames_bit_equal(sessions[i], ingest::read_session(dir));
  }

  // Payload shortened by a few bytes, then lengthened.
  const auto victim = root / "s0";
  const auto specs = ingest::stream_specs(sessions[0]);
  bool rejected = true;
  for (const auto& spec : specs) {
    const auto original = io::read_file(victim / spec.file);
    auto shorter = original;
    shorter.resize(original.size() - 3);
    auto longer = original;
    longer.push_back(0);
    for (const auto* bytes : {&shorter, &longer}) {
      io::write_file(victim / spec.file, *bytes);
      rejected = rejected && error_kind_of([&] { ingest::read_session(victim); }) == ErrorKind::ShapeMismatch;
    }
    io::write_file(victim / spec.file, original);
  }

  // Checkpoint payload with a value missing.
  model::ModelConfig mc;
  mc.variant = model::Variant::FusionAll;
  mc.stream_shapes = {{"depth", {2, 2, 3}}, {"seg", {2, 2, 3}}};
  mc.reduce_channels = {{"depth", 2}, {"seg", 2}};
  mc.can_feature_dim = 3;
  mc.hidden_size = 4;
  const auto m = model::build_model(mc, 3);
  const auto ckpt = root / "ckpt";
  train::save_checkpoint(m, 0, ckpt);
  auto payload = io::read_file(ckpt / train::kCheckpointPayload);
  payload.resize(payload.size() - 8);
  io::write_file(ckpt / train::kCheckpointPayload, payload);
  const bool ckpt_rejected =
      error_kind_of([&] { train::load_checkpoint(ckpt); }) == ErrorKind::ConfigMismatch;

  fs::remove_all(root);
  return {round_trip && rejected && ckpt_rejected,
          fmt("round_trip=%s truncated_rejected=%s checkpoint_rejected=%s", round_trip ? "bit-exact" : "differs",
              rejected ? "yes" : "no", ckpt_rejected ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path to maneuver executable>\n");
    return 1;
  }
  const std::string cli = argv[1];
  report(1, "gradient_correctness", gradients);
  report(2, "state_carry", state_carry);
  report(3, "truncation", truncation);
  report(4, "loss_degeneracy", loss_degeneracy);
  report(5, "ap_oracle", ap_oracle);
  report(6, "table_arithmetic", table_arithmetic);
  report(7, "generator_statistics", generator_statistics);
  report(8, "fusion_advantage", fusion_advantage);
  report(9, "imbalance_handling", imbalance_handling);
  report(10, "reproducibility", [&] { return reproducibility(cli); });
  report(11, "format_integrity", format_integrity);
  std::printf("%d of 11 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
