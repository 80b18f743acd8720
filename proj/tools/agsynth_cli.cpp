// agsynth: train, synthesize, refine, evaluate, make-toy-data.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage,
// 3 validation, 4 ingestion, 5 numerical, 6 checkpoint, 7 I/O.

#include <CLI11.hpp>

#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "agsynth/agsynth.hpp"

namespace fs = std::filesystem;
using namespace agsynth;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void log(const std::string& line) { std::cerr << "[agsynth] " << line << '\n'; }

struct TrainArgs {
  fs::path data, config, out, resume;
  bool toy = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_g_steps;
  std::int64_t log_every = 100;
};

int run_train(const TrainArgs& a) {
  const auto manifest = load_manifest(a.data);
  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer::load_checkpoint(a.resume));
    log("resumed from " + a.resume.string() + " at d_steps=" +
        std::to_string(trainer->counters().d_steps));
  } else {
    const auto m = manifest.vocabulary.size();
    TrainConfig base = a.toy ? TrainConfig::toy(m) : TrainConfig{};
    base.generator.num_attributes = m;
    base.discriminator.num_attributes = m;
    base.refinement = manifest.side_mode == SideMode::kImage;
    auto cfg = a.config.empty() ? base : load_train_config(a.config, base);
    if (a.seed) cfg.seed = *a.seed;
    if (a.max_g_steps) cfg.max_generator_steps = *a.max_g_steps;
    trainer.emplace(cfg, manifest.vocabulary);
  }
  fs::create_directories(a.out);
  {
    std::ofstream cfg_out(a.out / "config.json");
    cfg_out << to_json(trainer->config()).dump(2) << '\n';
  }
  torch::set_num_threads(1);
  DataSource data(manifest, trainer->config().image_size);
  FitOptions opts;
  opts.metrics_path = a.out / "metrics.jsonl";
  opts.checkpoint_dir = a.out / "checkpoints";
  opts.on_step = [&](const std::string& phase, const LossReport& r, const TrainCounters& c) {
    if (phase == "g" && a.log_every > 0 && c.g_steps % a.log_every == 0) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "epoch %lld g_step %lld total_g %.4f identity %.4f cls_fake %.4f",
                    static_cast<long long>(c.epoch), static_cast<long long>(c.g_steps), r.total_g,
                    r.identity, r.cls_fake);
      log(buf);
    }
  };
  const auto summary = trainer->fit(data, opts);
  log("done: d_steps=" + std::to_string(summary.counters.d_steps) +
      " g_steps=" + std::to_string(summary.counters.g_steps) + ", checkpoint " +
      (opts.checkpoint_dir / "latest.ckpt").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-guided face image synthesis"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "Train generator and critic on a dataset directory");
  cmd_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  cmd_train->add_option("--out", train.out, "Output directory (checkpoints, metrics.jsonl, config.json)")->required();
  cmd_train->add_option("--config", train.config, "JSON training config")->check(CLI::ExistingFile);
  cmd_train->add_flag("--toy", train.toy, "Start from the 32x32 toy recipe instead of the full-size defaults");
  cmd_train->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  cmd_train->add_option("--seed", train.seed, "Override the config seed");
  cmd_train->add_option("--max-generator-steps", train.max_g_steps, "Stop after this many generator steps");
  cmd_train->add_option("--log-every", train.log_every, "Generator steps between progress lines");

  SynthesisRequest synth;
  std::string synth_attrs = "all";
  auto* cmd_synth = app.add_subcommand("synthesize", "Write an attribute-transfer grid");
  cmd_synth->add_option("--checkpoint", synth.checkpoint_path)->required()->check(CLI::ExistingFile);
  cmd_synth->add_option("--input", synth.input_image_path, "Input face image")->required()->check(CLI::ExistingFile);
  cmd_synth->add_option("--landmarks", synth.landmark_path, "Landmark file (heatmap checkpoints)");
  cmd_synth->add_option("--side", synth.side_image_path, "Side image (refinement checkpoints)");
  cmd_synth->add_option("--attributes", synth_attrs, "Comma-separated attribute names, or 'all'");
  cmd_synth->add_option("--output", synth.output_path, "Output PNG")->required();

  RefinementRequest refine_req;
  std::string refine_attr;
  auto* cmd_refine = app.add_subcommand("refine", "Refine a synthetic frontal face with a real side image");
  cmd_refine->add_option("--checkpoint", refine_req.checkpoint_path)->required()->check(CLI::ExistingFile);
  cmd_refine->add_option("--input", refine_req.synthetic_frontal_path, "Synthetic frontal image x")->required()->check(CLI::ExistingFile);
  cmd_refine->add_option("--side", refine_req.real_side_image_path, "Real side image s")->required()->check(CLI::ExistingFile);
  cmd_refine->add_option("--attribute", refine_attr, "Target attribute (default: inferred by the critic)");
  cmd_refine->add_option("--output", refine_req.output_path, "Output PNG; metadata goes to <output>.json")->required();

  fs::path eval_ckpt, eval_data, eval_out;
  std::string eval_counts = "0,200,1000";
  OracleOptions oracle;
  auto* cmd_eval = app.add_subcommand("evaluate", "Oracle accuracy, fake-attribute accuracy and augmentation sweep");
  cmd_eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("--data", eval_data, "Labeled dataset directory")->required()->check(CLI::ExistingDirectory);
  cmd_eval->add_option("--out", eval_out, "Output directory (report.json, augmentation.png)")->required();
  cmd_eval->add_option("--counts", eval_counts, "Comma-separated synthetic images per class");
  cmd_eval->add_option("--seed", oracle.seed);
  cmd_eval->add_option("--epochs", oracle.epochs, "Classifier training epochs");

  ToyDatasetOptions toy;
  fs::path toy_out;
  auto* cmd_toy = app.add_subcommand("make-toy-data", "Write a procedural toy face dataset");
  cmd_toy->add_option("--out", toy_out, "Dataset directory")->required();
  cmd_toy->add_option("--samples", toy.num_samples);
  cmd_toy->add_option("--attributes", toy.num_attributes, "1 to 4 expressions");
  cmd_toy->add_option("--size", toy.image_size);
  cmd_toy->add_option("--seed", toy.seed);
  cmd_toy->add_flag("--refinement", toy.refinement, "Gray faces in images/, colored originals in side/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    torch::set_num_threads(1);
    if (*cmd_train) return run_train(train);
    if (*cmd_synth) {
      synth.target_attributes = split_commas(synth_attrs);
      auto r = synthesize_grid(synth);
      for (std::size_t i = 0; i < r.attributes.size(); ++i) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s: mean |x' - x| = %.6f", r.attributes[i].c_str(), r.mean_abs_diff[i]);
        log(buf);
      }
      if (r.clamped_landmarks > 0) log(std::to_string(r.clamped_landmarks) + " landmark(s) clamped into the frame");
      log("wrote " + synth.output_path.string());
      return 0;
    }
    if (*cmd_refine) {
      if (!refine_attr.empty()) refine_req.target_attribute = refine_attr;
      auto r = refine(refine_req);
      log("attribute " + r.attribute + (r.attribute_inferred ? " (inferred)" : ""));
      log("palette distance to side " + std::to_string(r.palette_distance_to_side) + ", to input " +
          std::to_string(r.palette_distance_to_input));
      log("wrote " + refine_req.output_path.string() + " and " + r.metadata_path.string());
      return 0;
    }
    if (*cmd_eval) {
      std::vector<std::int64_t> counts;
      for (const auto& c : split_commas(eval_counts)) {
        try {
          counts.push_back(std::stoll(c));
        } catch (const std::exception&) {
          throw ConfigError("bad count '" + c + "' in --counts");
        }
      }
      const auto model = load_inference_model(eval_ckpt);
      const DataSource data(load_manifest(eval_data), model.image_size());
      check_compatible(model, data);
      auto base = train_oracle_classifier(data, model.config.discriminator, oracle);
      log("oracle held-out accuracy " + std::to_string(base.test_accuracy));
      auto fake = fake_attribute_accuracy(model, base.classifier, data, base.split.test);
      log("fake attribute accuracy " + std::to_string(fake.accuracy));
      EvalReport report;
      report.vocabulary = model.vocabulary.names();
      report.real_test_accuracy = base.test_accuracy;
      report.fake_attribute_accuracy = fake.accuracy;
      report.per_class_confusion = fake.confusion;
      report.augmentation_curve = augmentation_sweep(model, data, counts, oracle);
      for (const auto& p : report.augmentation_curve) {
        log("sweep " + std::to_string(p.num_synthetic) + " per class: accuracy " + std::to_string(p.accuracy));
      }
      write_report(report, eval_out / "report.json");
      write_plot(report.augmentation_curve, eval_out / "augmentation.png");
      log("wrote " + (eval_out / "report.json").string() + " and " + (eval_out / "augmentation.png").string());
      return 0;
    }
    if (*cmd_toy) {
      auto m = generate_toy_dataset(toy_out, toy);
      log("wrote " + std::to_string(m.size()) + " samples to " + toy_out.string());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
