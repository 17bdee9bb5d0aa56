#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "roadseg/data.hpp"
#include "roadseg/eval.hpp"
#include "roadseg/model.hpp"
#include "roadseg/parallel.hpp"
#include "roadseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace roadseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string data_dir;
  std::string model;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int threads = 0;

  // train
  int epochs = 80;
  int batch_size = 125;
  float lr = 1e-4f;
  double val_fraction = 0.015;
  std::string aug = "resize";  // resize | grid | both
  int far_crops = 0;
  double noise_sigma = 2e-4;

  // infer / eval
  std::string pyramid = "on";
  std::string fusion = "union";

  // synth
  int count = 50;
  int width = 1242;
  int height = 375;
  std::string style = "standard";

  std::vector<std::string> images;
};

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::vector<RawScene> load_scenes(const std::string& data_dir, int threads,
                                  std::vector<std::string>* ids = nullptr) {
  const auto paths = scan_dataset(data_dir);
  if (paths.empty()) {
    throw DataError("no image/gt pairs found under " + data_dir +
                    " (expected image_2/*.png|ppm with gt_image_2 counterparts)");
  }
  std::vector<RawScene> scenes(paths.size());
  parallel_for(static_cast<int>(paths.size()), threads, [&](int i) {
    scenes[static_cast<std::size_t>(i)] =
        load_scene(paths[static_cast<std::size_t>(i)].image, paths[static_cast<std::size_t>(i)].gt);
  });
  if (ids) {
    for (const auto& p : paths) ids->push_back(p.id);
  }
  return scenes;
}

PyramidOptions pyramid_options(const Options& o) {
  PyramidOptions p;
  p.enabled = o.pyramid == "on";
  p.fusion = o.fusion == "intersection" ? FusionMode::intersection : FusionMode::union_or;
  return p;
}

std::string find_gt_for_image(const std::string& image_path) {
  const fs::path img(image_path);
  if (img.parent_path().filename() != "image_2") return {};
  const std::string stem = img.stem().string();
  const auto us = stem.find('_');
  const std::string gt_stem = us == std::string::npos
                                  ? stem + "_road"
                                  : stem.substr(0, us) + "_road" + stem.substr(us);
  const fs::path gt_dir = img.parent_path().parent_path() / "gt_image_2";
  for (const char* ext : {".png", ".ppm"}) {
    const fs::path cand = gt_dir / (gt_stem + ext);
    if (fs::exists(cand)) return cand.string();
  }
  return {};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
  if (!os) throw IoError("failed writing " + path);
}

void print_metrics_table(const std::string& label, const MetricsReport& r) {
  std::printf("%-24s  F1 %7.4f  AP %7.4f  PRE %7.4f  REC %7.4f  FPR %7.4f  FNR %7.4f%s\n",
              label.c_str(), r.f1, r.ap, r.precision, r.recall, r.fpr, r.fnr,
              r.degenerate ? "  [degenerate]" : "");
}

std::string metrics_csv_row(const std::string& id, const MetricsReport& r) {
  char line[256];
  std::snprintf(line, sizeof(line), "%s,%llu,%llu,%llu,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d\n",
                id.c_str(), static_cast<unsigned long long>(r.counts.tp),
                static_cast<unsigned long long>(r.counts.fp),
                static_cast<unsigned long long>(r.counts.tn),
                static_cast<unsigned long long>(r.counts.fn), r.f1, r.ap, r.precision, r.recall,
                r.fpr, r.fnr, r.degenerate ? 1 : 0);
  return line;
}

int cmd_train(const Options& o) {
  ensure_out_dir(o.out_dir);
  std::vector<RawScene> scenes = load_scenes(o.data_dir, o.threads);
  SamplePlan plan;
  plan.resize_view = o.aug == "resize" || o.aug == "both";
  plan.window_grid = o.aug == "grid" || o.aug == "both";
  plan.far_crops = o.far_crops;
  plan.noise_sigma = o.noise_sigma;
  std::vector<Sample> samples;
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    auto s = build_samples(scenes[static_cast<std::size_t>(i)], i, plan,
                           Rng::mix(o.seed, static_cast<std::uint64_t>(i)));
    for (auto& x : s) samples.push_back(std::move(x));
  }
  scenes.clear();
  std::printf("training on %zu samples\n", samples.size());

  TrainConfig cfg;
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.val_fraction = o.val_fraction;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.verbose = true;

  const std::string best_path = (fs::path(o.out_dir) / "checkpoint_best.rsgru").string();
  const std::string final_path = (fs::path(o.out_dir) / "checkpoint_final.rsgru").string();
  const std::string csv_path = (fs::path(o.out_dir) / "loss_history.csv").string();

  try {
    TrainResult result = train(samples, cfg, [&](const TrainResult& partial) {
      // keep the best checkpoint and the CSV current while training runs
      if (!partial.history.empty() && partial.best_epoch == partial.history.back().epoch) {
        save_checkpoint(partial.best, best_path);
      }
      write_text(csv_path, loss_history_csv(partial.history));
    });
    save_checkpoint(result.best, best_path);
    save_checkpoint(result.final_params, final_path);
    write_text(csv_path, loss_history_csv(result.history));
    std::printf("best epoch %d (val_mae %.6f)\nwrote %s, %s, %s\n", result.best_epoch,
                result.best_val_mae, best_path.c_str(), final_path.c_str(), csv_path.c_str());
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\nlast good checkpoint: %s\n", e.what(),
                 fs::exists(best_path) ? best_path.c_str() : "(none written)");
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_infer(const Options& o) {
  ensure_out_dir(o.out_dir);
  const ModelParams<float> params = load_checkpoint<float>(o.model);
  const PyramidOptions popt = pyramid_options(o);
  std::ofstream jsonl((fs::path(o.out_dir) / "boundaries.jsonl").string(), std::ios::binary);
  for (const std::string& path : o.images) {
    const ImageU8 image = read_image(path);
    const BoundaryPrediction<float> pred = predict_boundaries(image, params);
    const Mask mask = pyramid_predict(image, params, popt);
    const std::string stem = fs::path(path).stem().string();
    const std::string mask_path = (fs::path(o.out_dir) / (stem + "_mask.pgm")).string();
    write_pgm(mask_path, mask_to_gray(mask));

    json line;
    line["image"] = path;
    line["mask"] = mask_path;
    line["left"] = pred.left;
    line["right"] = pred.right;
    line["top"] = pred.top;
    jsonl << line.dump() << '\n';

    const std::string gt_path = find_gt_for_image(path);
    if (!gt_path.empty()) {
      const ImageU8 gt_img = read_image(gt_path);
      const Mask gt = mask_from_gt_image(gt_img);
      if (gt.h == mask.h && gt.w == mask.w) {
        write_ppm((fs::path(o.out_dir) / (stem + "_confusion.ppm")).string(),
                  confusion_image(mask, gt, &image));
      }
    }
    std::printf("%s -> %s\n", path.c_str(), mask_path.c_str());
  }
  return kExitOk;
}

int cmd_eval(const Options& o) {
  ensure_out_dir(o.out_dir);
  const ModelParams<float> params = load_checkpoint<float>(o.model);
  const PyramidOptions popt = pyramid_options(o);
  std::vector<std::string> ids;
  const std::vector<RawScene> scenes = load_scenes(o.data_dir, o.threads, &ids);

  std::vector<MetricsReport> reports(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), o.threads, [&](int i) {
    const auto& scene = scenes[static_cast<std::size_t>(i)];
    const Mask pred = pyramid_predict(scene.image, params, popt);
    reports[static_cast<std::size_t>(i)] = compute_metrics(pred, scene.gt_mask);
  });

  std::string csv = "image,tp,fp,tn,fn,f1,ap,precision,recall,fpr,fnr,degenerate\n";
  MetricsCounts pooled;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    pooled += reports[i].counts;
    csv += metrics_csv_row(ids[i], reports[i]);
  }
  const MetricsReport aggregate = metrics_from_counts(pooled);
  csv += metrics_csv_row("aggregate", aggregate);
  write_text((fs::path(o.out_dir) / "metrics.csv").string(), csv);

  // column order follows the benchmark table: F1, AP, PRE, REC, FPR, FNR
  for (std::size_t i = 0; i < reports.size(); ++i) print_metrics_table(ids[i], reports[i]);
  print_metrics_table("aggregate (pixel-pooled)", aggregate);
  return kExitOk;
}

int cmd_synth(const Options& o) {
  const fs::path image_dir = fs::path(o.out_dir) / "image_2";
  const fs::path gt_dir = fs::path(o.out_dir) / "gt_image_2";
  ensure_out_dir(image_dir.string());
  ensure_out_dir(gt_dir.string());
  const SynthStyle style = o.style == "thin" ? SynthStyle::thin_far() : SynthStyle::standard();
  for (int i = 0; i < o.count; ++i) {
    const RawScene scene = synth_scene(Rng::mix(o.seed, static_cast<std::uint64_t>(i)), o.width,
                                       o.height, style);
    char name[64];
    std::snprintf(name, sizeof(name), "synth_%06d.ppm", i);
    write_ppm((image_dir / name).string(), scene.image);
    // KITTI-style gt encoding: road in the blue channel, valid area in red
    ImageU8 gt(scene.gt_mask.h, scene.gt_mask.w, 3);
    for (int y = 0; y < gt.h; ++y) {
      for (int x = 0; x < gt.w; ++x) {
        gt.at(y, x, 0) = 255;
        gt.at(y, x, 2) = scene.gt_mask.at(y, x) ? 255 : 0;
      }
    }
    std::snprintf(name, sizeof(name), "synth_road_%06d.ppm", i);
    write_ppm((gt_dir / name).string(), gt);
  }
  std::printf("wrote %d scenes under %s\n", o.count, o.out_dir.c_str());
  return kExitOk;
}

int cmd_heatmap(const Options& o) {
  ensure_out_dir(o.out_dir);
  const std::vector<RawScene> scenes = load_scenes(o.data_dir, o.threads);
  HeatmapAccumulator acc;
  for (const RawScene& s : scenes) acc.add(s.gt_mask);
  const Tensor<float> mean = acc.mean();
  ImageU8 img(kInputHeight, kInputWidth, 1);
  for (std::int64_t i = 0; i < mean.numel(); ++i) {
    img.data[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(std::clamp(mean[i], 0.0f, 1.0f) * 255.0f));
  }
  const std::string path = (fs::path(o.out_dir) / "heatmap.pgm").string();
  write_pgm(path, img);
  std::printf("wrote %s from %d masks\n", path.c_str(), acc.count());
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->set_config("--config", "", "flat key=value config file; command-line flags override");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--threads", o.threads, "worker threads (0 = hardware concurrency)");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road-boundary segmentation: train / infer / eval / synth / heatmap"};
  app.require_subcommand(1);
  Options o;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a KITTI-layout dataset");
  add_common(train_cmd, o);
  train_cmd->add_option("--data-dir", o.data_dir, "dataset directory")->required();
  train_cmd->add_option("--epochs", o.epochs, "training epochs");
  train_cmd->add_option("--batch-size", o.batch_size, "mini-batch size");
  train_cmd->add_option("--lr", o.lr, "Adam learning rate");
  train_cmd->add_option("--val-fraction", o.val_fraction, "scene fraction held out for validation");
  train_cmd->add_option("--aug", o.aug, "sample generation: resize | grid | both")
      ->check(CLI::IsMember({"resize", "grid", "both"}));
  train_cmd->add_option("--far-crops", o.far_crops,
                        "extra native-resolution crops around the road top per scene");
  train_cmd->add_option("--noise-sigma", o.noise_sigma, "Gaussian RGB noise sigma on [0,1]");

  CLI::App* infer_cmd = app.add_subcommand("infer", "predict masks for images");
  add_common(infer_cmd, o);
  infer_cmd->add_option("--model", o.model, "checkpoint path")->required();
  infer_cmd->add_option("--pyramid", o.pyramid, "near+far pyramid scheme: on | off")
      ->check(CLI::IsMember({"on", "off"}));
  infer_cmd->add_option("--fusion", o.fusion, "near/far mask fusion: union | intersection")
      ->check(CLI::IsMember({"union", "intersection"}));
  infer_cmd->add_option("images", o.images, "input images")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model against ground truth");
  add_common(eval_cmd, o);
  eval_cmd->add_option("--data-dir", o.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--model", o.model, "checkpoint path")->required();
  eval_cmd->add_option("--pyramid", o.pyramid, "near+far pyramid scheme: on | off")
      ->check(CLI::IsMember({"on", "off"}));
  eval_cmd->add_option("--fusion", o.fusion, "near/far mask fusion: union | intersection")
      ->check(CLI::IsMember({"union", "intersection"}));

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic road dataset");
  add_common(synth_cmd, o);
  synth_cmd->add_option("--count", o.count, "number of scenes");
  synth_cmd->add_option("--width", o.width, "scene width in pixels");
  synth_cmd->add_option("--height", o.height, "scene height in pixels");
  synth_cmd->add_option("--style", o.style, "scene style: standard | thin")
      ->check(CLI::IsMember({"standard", "thin"}));

  CLI::App* heatmap_cmd = app.add_subcommand("heatmap", "mean road-occupancy map of a dataset");
  add_common(heatmap_cmd, o);
  heatmap_cmd->add_option("--data-dir", o.data_dir, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (infer_cmd->parsed()) return cmd_infer(o);
    if (eval_cmd->parsed()) return cmd_eval(o);
    if (synth_cmd->parsed()) return cmd_synth(o);
    if (heatmap_cmd->parsed()) return cmd_heatmap(o);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
