#pragma once

// Experiment commands behind the mrunet tool. Every command takes a fully
// resolved RunSpec, writes its files under RunSpec::out and throws the
// library's error types; mapping them to exit codes is the caller's job.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrunet/data.hpp"
#include "mrunet/gradcheck.hpp"
#include "mrunet/models.hpp"
#include "mrunet/network.hpp"
#include "mrunet/train.hpp"

namespace mrunet {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"summary", "gradcheck", "train", "eval", "kfold", "compare", "synth"};
  return names;
}

struct RunSpec {
  std::string command;
  std::string arch = "multiresunet";
  std::string variant = "multires";
  std::size_t rank = 2;
  std::string input = "256x256x3";
  std::size_t u_base = default_u_base;
  double alpha = default_alpha;
  double bn_momentum = NetworkOptions{}.bn_momentum;
  TrainConfig train;
  std::string data;
  std::size_t synth = 0;
  std::string challenge = "clean";
  std::optional<std::uint64_t> data_seed;
  std::string out = "out";
  std::size_t k = 5;
  std::size_t fold = 0;
  std::string checkpoint;
  std::string ops = "all";
  std::string compare_arch;
  std::string challenges = "faint_boundary,perturbed";
  std::string seeds = "0,1,2";

  std::uint64_t resolved_data_seed() const { return data_seed.value_or(train.seed); }

  void validate() const {
    if (std::find(command_names().begin(), command_names().end(), command) == command_names().end())
      throw usage_error("unknown command '" + command + "'");
    parse_architecture(arch);
    parse_variant(variant);
    if (rank != 2 && rank != 3) throw usage_error("--rank must be 2 or 3");
    if (!(alpha > 0.0)) throw usage_error("--alpha must be positive");
    if (u_base < 1) throw usage_error("--ubase must be positive");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw usage_error("--bn-momentum must lie in (0, 1)");
    if (!compare_arch.empty()) parse_architecture(compare_arch);
    parse_challenge(challenge);
    train.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"command", command},
                        {"arch", arch},
                        {"variant", variant},
                        {"rank", rank},
                        {"input", input},
                        {"ubase", u_base},
                        {"alpha", alpha},
                        {"bn_momentum", bn_momentum},
                        {"epochs", train.epochs},
                        {"batch", train.batch_size},
                        {"lr", train.learning_rate},
                        {"beta1", train.beta1},
                        {"beta2", train.beta2},
                        {"epsilon_adam", train.epsilon_adam},
                        {"seed", train.seed},
                        {"data", data},
                        {"synth", synth},
                        {"challenge", challenge},
                        {"data_seed", resolved_data_seed()},
                        {"out", out},
                        {"k", k},
                        {"fold", fold}};
    if (command == "eval") j["checkpoint"] = checkpoint;
    if (command == "gradcheck") j["ops"] = ops;
    if (command == "kfold") j["compare"] = compare_arch;
    if (command == "compare") {
      j["challenges"] = challenges;
      j["seeds"] = seeds;
    }
    return j;
  }
};

/// "256x256x3" -> {256, 256, 3}; the last number is the channel count.
inline std::vector<std::size_t> parse_input(const std::string& text, std::size_t rank) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw usage_error("--input '" + text + "': expected extents like 64x64x3");
    dims.push_back(std::stoul(part));
    if (dims.back() == 0) throw usage_error("--input '" + text + "': extents must be positive");
  }
  if (dims.size() != rank + 1)
    throw usage_error("--input '" + text + "': rank " + std::to_string(rank) + " needs " + std::to_string(rank + 1) +
                      " numbers");
  return dims;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

inline ModelGraph build_from_spec(const RunSpec& spec, const std::string& arch) {
  auto dims = parse_input(spec.input, spec.rank);
  const std::size_t channels = dims.back();
  dims.pop_back();
  return build_model(parse_architecture(arch), spec.rank, dims, channels, spec.u_base, spec.alpha,
                     parse_variant(spec.variant));
}

/// The dataset named by --data (resized to --input) or the synthetic corpus
/// named by --synth / --challenge.
inline Dataset load_data(const RunSpec& spec) {
  if (spec.rank != 2) throw unsupported_rank_error("training and evaluation need --rank 2");
  const auto dims = parse_input(spec.input, 2);
  if (!spec.data.empty() && spec.synth > 0) throw usage_error("--data and --synth are mutually exclusive");
  if (spec.synth > 0) {
    SynthSpec s;
    s.n = spec.synth;
    s.height = dims[0];
    s.width = dims[1];
    s.channels = dims[2];
    s.challenge = parse_challenge(spec.challenge);
    s.seed = spec.resolved_data_seed();
    return synth_generate(s).dataset;
  }
  if (spec.data.empty()) throw usage_error("need --data <dir> or --synth <count>");
  if (!std::filesystem::exists(spec.data)) throw io_error(spec.data + ": no such dataset directory");
  Dataset d = load_dataset(spec.data);
  for (auto& s : d.samples) {
    s = resize(s, dims[0], dims[1]);
    const std::size_t c = s.image.extent(2);
    if (c == dims[2]) continue;
    if (c != 1) throw format_error(s.id + ": image has " + std::to_string(c) + " channels, --input asks for " +
                                   std::to_string(dims[2]));
    Tensor<float> wide(Shape{dims[0], dims[1], dims[2]});
    for (std::size_t p = 0; p < dims[0] * dims[1]; ++p)
      for (std::size_t ch = 0; ch < dims[2]; ++ch) wide[p * dims[2] + ch] = s.image[p];
    s.image = std::move(wide);
  }
  return d;
}

namespace detail {

inline std::filesystem::path prepare_out(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) throw io_error("cannot create output directory " + out);
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw io_error("write failed: " + path.string());
}

inline std::string fmt(double v, int precision = 9) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean and standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

inline std::vector<std::string> ids_of(const Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& s : d.samples) ids.push_back(s.id);
  return ids;
}

}  // namespace detail

inline const char* history_header = "epoch,train_loss,val_loss,val_jaccard\n";

/// Trains one network and leaves history.csv, checkpoint.bin and report.json
/// in `dir`. History rows are flushed as epochs finish.
inline RunReport train_into(const RunSpec& spec, const std::string& arch, const Dataset& train_set,
                            const Dataset& val_set, const std::filesystem::path& dir, std::ostream* log) {
  detail::prepare_out(dir.string());
  Network<float> net(build_from_spec(spec, arch), spec.train.seed, {spec.bn_momentum, NetworkOptions{}.bn_epsilon});
  std::ofstream history(dir / "history.csv", std::ios::binary);
  if (!history) throw io_error("cannot open " + (dir / "history.csv").string());
  history << history_header << std::flush;
  const auto checkpoint = dir / "checkpoint.bin";

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    history << r.epoch << ',' << detail::fmt(r.train_loss) << ',' << detail::fmt(r.val_loss) << ','
            << detail::fmt(r.val_jaccard) << '\n'
            << std::flush;
    if (!history) throw io_error("write failed: " + (dir / "history.csv").string());
    if (log)
      *log << arch << " epoch " << r.epoch << "/" << spec.train.epochs << "  train_loss " << detail::fmt(r.train_loss, 6)
           << "  val_loss " << detail::fmt(r.val_loss, 6) << "  val_jaccard " << detail::fixed(r.val_jaccard, 4)
           << std::endl;
  };
  hooks.on_best = [&](const EpochRecord&) { net.save_checkpoint(checkpoint.string()); };

  const RunReport rep = train(net, train_set, val_set, spec.train, hooks);

  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : rep.history)
    hist.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                    {"val_jaccard", r.val_jaccard}});
  RunSpec resolved = spec;
  resolved.arch = arch;
  const nlohmann::json report = {{"runspec", resolved.to_json()},
                                 {"architecture", arch},
                                 {"total_params", count_parameters(net.graph()).total},
                                 {"train_samples", train_set.size()},
                                 {"val_ids", detail::ids_of(val_set)},
                                 {"best_epoch", rep.best_epoch},
                                 {"best_val_jaccard", rep.best_val_jaccard},
                                 {"history", hist}};
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  return rep;
}

// ---------------------------------------------------------------- commands

inline int cmd_summary(const RunSpec& spec, std::ostream& out) {
  const ModelGraph g = build_from_spec(spec, spec.arch);
  nlohmann::json j = summary_json(g);
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [name, n] : group_parameters(count_parameters(g))) groups.push_back({{"group", name}, {"params", n}});
  j["param_groups"] = groups;
  j["runspec"] = spec.to_json();
  const std::string text = j.dump(2) + "\n";
  out << text;
  if (!spec.out.empty()) detail::write_text(detail::prepare_out(spec.out) / "summary.json", text);
  return 0;
}

/// 0 when every selected case passes, 1 otherwise.
inline int cmd_gradcheck(const RunSpec& spec, std::ostream& out) {
  const auto wanted = split_list(spec.ops);
  if (wanted.empty()) throw usage_error("gradcheck: empty op list");
  const auto suite = gradcheck_suite();
  std::vector<const GradCheckCase*> selected;
  if (wanted.size() == 1 && wanted[0] == "all") {
    for (const auto& c : suite) selected.push_back(&c);
  } else {
    for (const auto& name : wanted) {
      auto it = std::find_if(suite.begin(), suite.end(), [&](const GradCheckCase& c) { return c.name == name; });
      if (it == suite.end()) throw usage_error("gradcheck: unknown op '" + name + "'");
      selected.push_back(&*it);
    }
  }
  std::vector<GradCheckResult> results;
  for (const auto* c : selected) results.push_back(c->run(spec.train.seed));
  print_gradcheck_table(out, results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const GradCheckResult& r) { return r.passed; });
  out << (ok ? "all passed" : "FAILURES") << '\n';
  return ok ? 0 : 1;
}

struct TrainValSplit {
  Dataset train;
  Dataset val;
};

inline TrainValSplit split_for(const RunSpec& spec, const Dataset& d) {
  const FoldSplit split = kfold_split(d.size(), spec.k, spec.train.seed);
  if (spec.fold >= split.k()) throw usage_error("--fold must be below --k");
  return {d.subset(split.training_indices(spec.fold)), d.subset(split.folds[spec.fold])};
}

inline int cmd_train(const RunSpec& spec, std::ostream& out) {
  const Dataset d = load_data(spec);
  const auto [tr, va] = split_for(spec, d);
  const RunReport rep = train_into(spec, spec.arch, tr, va, detail::prepare_out(spec.out), &out);
  out << "best_epoch " << rep.best_epoch << "  best_val_jaccard " << detail::fmt(rep.best_val_jaccard) << '\n';
  return 0;
}

inline int cmd_eval(const RunSpec& spec, std::ostream& out) {
  const Dataset d = load_data(spec);
  const auto [tr, va] = split_for(spec, d);
  const std::string ckpt =
      spec.checkpoint.empty() ? (std::filesystem::path(spec.out) / "checkpoint.bin").string() : spec.checkpoint;
  Network<float> net(build_from_spec(spec, spec.arch), spec.train.seed, {spec.bn_momentum, NetworkOptions{}.bn_epsilon});
  net.load_checkpoint(ckpt);
  const Evaluation ev = evaluate(net, va, spec.train.batch_size);
  RunSpec resolved = spec;
  resolved.checkpoint = ckpt;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t i = 0; i < va.size(); ++i) per[va.samples[i].id] = ev.per_sample[i];
  const nlohmann::json j = {{"runspec", resolved.to_json()},
                            {"val_loss", ev.loss},
                            {"val_jaccard", ev.jaccard},
                            {"per_sample_jaccard", per}};
  detail::write_text(detail::prepare_out(spec.out) / "eval.json", j.dump(2) + "\n");
  out << "val_loss " << detail::fmt(ev.loss) << "  val_jaccard " << detail::fmt(ev.jaccard) << '\n';
  return 0;
}

/// Per-fold training for one or two architectures on the same folds.
/// kfold.csv: one row per fold and architecture, then a mean row (with the
/// standard deviation) per architecture, all in percent.
inline int cmd_kfold(const RunSpec& spec, std::ostream& out) {
  const Dataset d = load_data(spec);
  const FoldSplit split = kfold_split(d.size(), spec.k, spec.train.seed);
  const auto dir = detail::prepare_out(spec.out);
  std::vector<std::string> archs{spec.arch};
  if (!spec.compare_arch.empty() && spec.compare_arch != spec.arch) archs.push_back(spec.compare_arch);

  std::ostringstream csv;
  csv << "architecture,fold,best_epoch,jaccard_pct,std_pct\n";
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t f = 0; f < split.k(); ++f) {
    std::vector<std::string> ids;
    for (auto i : split.folds[f]) ids.push_back(d.samples[i].id);
    folds.push_back({{"fold", f + 1}, {"val_ids", ids}});
  }
  nlohmann::json results = nlohmann::json::object();
  std::vector<double> means;
  for (const auto& arch : archs) {
    std::vector<double> scores;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t f = 0; f < split.k(); ++f) {
      const Dataset tr = d.subset(split.training_indices(f));
      const Dataset va = d.subset(split.folds[f]);
      const auto fold_dir = dir / arch / ("fold" + std::to_string(f + 1));
      const RunReport rep = train_into(spec, arch, tr, va, fold_dir, nullptr);
      const double pct = as_percent(rep.best_val_jaccard);
      scores.push_back(pct);
      csv << arch << ',' << f + 1 << ',' << rep.best_epoch << ',' << detail::fixed(pct) << ",\n";
      rows.push_back({{"fold", f + 1}, {"best_epoch", rep.best_epoch}, {"jaccard_pct", pct}});
      out << arch << " fold " << f + 1 << "/" << split.k() << "  best_epoch " << rep.best_epoch << "  jaccard "
          << detail::fixed(pct) << "%" << std::endl;
    }
    const auto ms = detail::mean_std(scores);
    means.push_back(ms.mean);
    csv << arch << ",mean,," << detail::fixed(ms.mean) << ',' << detail::fixed(ms.std) << '\n';
    results[arch] = {{"folds", rows}, {"mean_pct", ms.mean}, {"std_pct", ms.std}};
    out << arch << "  " << detail::fixed(ms.mean) << " ± " << detail::fixed(ms.std) << " %\n";
  }
  nlohmann::json j = {{"runspec", spec.to_json()}, {"k", split.k()}, {"folds", folds}, {"results", results}};
  if (archs.size() == 2) {
    const double rel = relative_improvement(means[0], means[1]);
    j["relative_improvement_pct"] = rel;
    csv << archs[0] << "_vs_" << archs[1] << ",relative_improvement,," << detail::fixed(rel) << ",\n";
    out << "relative improvement " << archs[0] << " over " << archs[1] << ": " << detail::fixed(rel) << " %\n";
  }
  detail::write_text(dir / "kfold.csv", csv.str());
  detail::write_text(dir / "kfold.json", j.dump(2) + "\n");
  return 0;
}

/// Both architectures on each challenge corpus for several training seeds.
/// The corpus is fixed by the data seed; only initialisation and shuffling
/// change between seeds. Writes compare.csv and compare.json.
inline int cmd_compare(const RunSpec& spec, std::ostream& out) {
  const auto challenges = split_list(spec.challenges);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(spec.seeds)) {
    if (s.find_first_not_of("0123456789") != std::string::npos) throw usage_error("--seeds: '" + s + "' is not a seed");
    seeds.push_back(std::stoull(s));
  }
  if (challenges.empty() || seeds.empty()) throw usage_error("compare: need at least one challenge and one seed");
  if (spec.synth == 0) throw usage_error("compare: needs --synth <count>");
  const auto dir = detail::prepare_out(spec.out);
  const std::vector<std::string> archs{"multiresunet", "unet"};

  std::ostringstream csv;
  csv << "challenge,seed,architecture,best_epoch,best_val_jaccard\n";
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& ch : challenges) {
    RunSpec base = spec;
    base.challenge = ch;
    base.data_seed = spec.resolved_data_seed();
    const Dataset d = load_data(base);
    nlohmann::json per_arch = nlohmann::json::object();
    for (const auto& arch : archs) {
      std::vector<double> scores;
      for (auto seed : seeds) {
        RunSpec run = base;
        run.train.seed = seed;
        const auto [tr, va] = split_for(run, d);
        const RunReport rep =
            train_into(run, arch, tr, va, dir / ch / arch / ("seed" + std::to_string(seed)), nullptr);
        scores.push_back(rep.best_val_jaccard);
        csv << ch << ',' << seed << ',' << arch << ',' << rep.best_epoch << ',' << detail::fmt(rep.best_val_jaccard)
            << '\n';
        out << ch << "  " << arch << "  seed " << seed << "  best_val_jaccard " << detail::fixed(rep.best_val_jaccard, 4)
            << std::endl;
      }
      const auto ms = detail::mean_std(scores);
      per_arch[arch] = {{"scores", scores}, {"mean", ms.mean}, {"std", ms.std}};
    }
    const double a = per_arch["multiresunet"]["mean"], b = per_arch["unet"]["mean"];
    per_arch["ordering"] = a > b ? "multiresunet > unet" : a < b ? "multiresunet < unet" : "tie";
    per_arch["relative_improvement_pct"] = relative_improvement(a, b);
    summary[ch] = per_arch;
    out << ch << "  mean multiresunet " << detail::fixed(a, 4) << "  unet " << detail::fixed(b, 4) << "  ("
        << per_arch["ordering"].get<std::string>() << ")\n";
  }
  detail::write_text(dir / "compare.csv", csv.str());
  detail::write_text(dir / "compare.json", nlohmann::json{{"runspec", spec.to_json()}, {"results", summary}}.dump(2) + "\n");
  return 0;
}

/// Writes the synthetic corpus as images/ and masks/ under --out.
inline int cmd_synth(const RunSpec& spec, std::ostream& out) {
  if (spec.synth == 0) throw usage_error("synth: needs --synth <count>");
  const Dataset d = load_data(spec);
  save_dataset(d, detail::prepare_out(spec.out).string());
  out << "wrote " << d.size() << " samples to " << spec.out << '\n';
  return 0;
}

inline int run_command(const RunSpec& spec, std::ostream& out) {
  spec.validate();
  if (spec.command == "summary") return cmd_summary(spec, out);
  if (spec.command == "gradcheck") return cmd_gradcheck(spec, out);
  if (spec.command == "train") return cmd_train(spec, out);
  if (spec.command == "eval") return cmd_eval(spec, out);
  if (spec.command == "kfold") return cmd_kfold(spec, out);
  if (spec.command == "compare") return cmd_compare(spec, out);
  return cmd_synth(spec, out);
}

}  // namespace mrunet
