#include <iostream>

#include <CLI11.hpp>

#include "mrunet.hpp"

namespace {

enum ExitCode { ok = 0, check_failed = 1, usage = 2, io = 3, numeric = 4 };

std::string command_list() {
  std::string s;
  for (const auto& c : mrunet::command_names()) s += (s.empty() ? "" : ", ") + c;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  mrunet::RunSpec spec;
  std::uint64_t data_seed = 0;

  CLI::App app{"MultiResUNet / U-Net segmentation experiments"};
  app.set_config("--config", "", "flat key=value file; command-line flags win");
  app.add_option("command", spec.command, "one of: " + command_list())->required();
  app.add_option("--arch", spec.arch, "unet | multiresunet")->capture_default_str();
  app.add_option("--variant", spec.variant, "multires | factorized_sequence | inception_parallel")->capture_default_str();
  app.add_option("--rank", spec.rank, "2 or 3")->capture_default_str();
  app.add_option("--input", spec.input, "input extents and channels, e.g. 64x64x3")->capture_default_str();
  app.add_option("--ubase", spec.u_base, "filters of the first U-Net level")->capture_default_str();
  app.add_option("--alpha", spec.alpha, "MultiRes width coefficient")->capture_default_str();
  app.add_option("--bn-momentum", spec.bn_momentum, "batch-norm running-statistics momentum")->capture_default_str();
  app.add_option("--epochs", spec.train.epochs)->capture_default_str();
  app.add_option("--batch", spec.train.batch_size)->capture_default_str();
  app.add_option("--lr", spec.train.learning_rate)->capture_default_str();
  app.add_option("--seed", spec.train.seed, "initialisation, shuffling and split seed")->capture_default_str();
  app.add_option("--data", spec.data, "dataset directory with images/ and masks/");
  app.add_option("--synth", spec.synth, "number of synthetic samples instead of --data");
  app.add_option("--challenge", spec.challenge, "synthetic corpus flavour")->capture_default_str();
  auto* ds = app.add_option("--data-seed", data_seed, "synthetic corpus seed (defaults to --seed)");
  app.add_option("--out", spec.out, "output directory")->capture_default_str();
  app.add_option("--k", spec.k, "number of folds")->capture_default_str();
  app.add_option("--fold", spec.fold, "held-out fold for train/eval (0-based)")->capture_default_str();
  app.add_option("--checkpoint", spec.checkpoint, "checkpoint for eval (default <out>/checkpoint.bin)");
  app.add_option("--ops", spec.ops, "comma-separated gradcheck cases or 'all'")->capture_default_str();
  app.add_option("--compare", spec.compare_arch, "second architecture for kfold");
  app.add_option("--challenges", spec.challenges, "comma-separated corpora for compare")->capture_default_str();
  app.add_option("--seeds", spec.seeds, "comma-separated training seeds for compare")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }
  if (ds->count() > 0) spec.data_seed = data_seed;

  try {
    return mrunet::run_command(spec, std::cout);
  } catch (const mrunet::training_aborted& e) {
    std::cerr << "numeric failure at epoch " << e.epoch() << ": " << e.what() << '\n';
    return numeric;
  } catch (const mrunet::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return numeric;
  } catch (const mrunet::io_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  } catch (const mrunet::format_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  } catch (const mrunet::pairing_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  } catch (const mrunet::error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return check_failed;
  }
}
