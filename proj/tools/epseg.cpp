#include "epseg/checkpoint.hpp"
#include "epseg/service.hpp"
#include "epseg/synthetic.hpp"
#include "epseg/trainer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace epseg;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Flag combinations rejected before any data is touched.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write '" + path + "'");
}

// "x1,y1,...,x4,y4" -> four points; empty on a malformed list.
std::optional<std::array<Eigen::Vector2d, 4>> parse_points(const std::string& text) {
  std::vector<double> values;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    double v;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) return std::nullopt;
    values.push_back(v);
    p = next;
    if (p < end && *p++ != ',') return std::nullopt;
    if (p == end && text.back() == ',') return std::nullopt;
  }
  if (values.size() != 8) return std::nullopt;
  std::array<Eigen::Vector2d, 4> pts;
  for (int k = 0; k < 4; ++k) pts[k] = {values[2 * k], values[2 * k + 1]};
  return pts;
}

const CLI::Validator kPointList(
    [](std::string& s) -> std::string {
      return parse_points(s) ? "" : "expected exactly 4 points as x1,y1,x2,y2,x3,y3,x4,y4";
    },
    "X1,Y1,..,X4,Y4");

struct TrainArgs {
  std::string data, out, history;
  bool ep = true;
  std::string loss = "avg_distance";
  double lr = 1e-3;
  int batch = 32, epochs = 100, patience = 10;
  std::uint64_t seed = 0;
  int size = 128, base_width = 16, levels = 5;
  std::string conv_block = "standard";
  bool no_augment = false;
  double margin = kDefaultMargin;
  int ep_radius = kDefaultEpRadius;
};

int run_train(const TrainArgs& a) {
  TrainConfig tc;
  tc.lr = a.lr;
  tc.batch_size = a.batch;
  tc.max_epochs = a.epochs;
  tc.patience = a.patience;
  tc.loss.kind = loss_kind_from_string(a.loss);
  tc.augment = !a.no_augment;
  tc.augmentation.ep_radius = a.ep_radius;
  tc.seed = a.seed;
  tc.unet.base_width = a.base_width;
  tc.unet.levels = a.levels;
  tc.unet.input_size = a.size;
  tc.unet.input_channels = a.ep ? 4 : 3;
  tc.unet.conv_block = conv_block_from_string(a.conv_block);
  tc.unet.seed = a.seed;
  tc.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %3d  loss %.5f  val_aIoU %.4f  %.2fs\n", r.epoch, r.train_loss, r.val_aiou, r.seconds);
    std::fflush(stdout);
  };
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const DatasetIndex index = load_dataset(a.data);
  DataConfig dc{a.size, a.margin, a.ep_radius};
  const auto train_set = load_samples(index, "train", dc);
  const auto val_set = load_samples(index, "val", dc);
  if (train_set.empty()) throw DataError("dataset '" + a.data + "' has no train samples");
  if (val_set.empty()) throw DataError("dataset '" + a.data + "' has no val samples");
  const TrainResult result = train(train_set, val_set, tc);
  save_checkpoint(result.network, result.meta, a.out);
  write_text(a.history.empty() ? a.out + ".history.json" : a.history, result.history.to_json());
  std::printf("best epoch %d, val aIoU %.4f -> %s\n", result.meta.epoch, result.meta.val_aiou, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, report, split = "val";
  std::optional<bool> ep;  // data channel mode; defaults to the checkpoint's
  float threshold = 0.5f;
  double bin_width = 1.0, margin = kDefaultMargin;
  int batch = 32, ep_radius = kDefaultEpRadius;
};

int run_eval(const EvalArgs& a) {
  const LoadedCheckpoint ckpt = load_checkpoint(a.ckpt);
  const DatasetIndex index = load_dataset(a.data);
  const auto samples = load_samples(index, a.split, {ckpt.network.config().input_size, a.margin, a.ep_radius});
  if (samples.empty()) throw DataError("dataset '" + a.data + "' has no '" + a.split + "' samples");
  EvalOptions opts;
  opts.batch_size = a.batch;
  opts.threshold = a.threshold;
  opts.bin_width = a.bin_width;
  for (const auto& [name, id] : index.classes) opts.class_names[id] = name;
  const Network<float>& net = ckpt.network;
  const bool with_ep = a.ep.value_or(net.config().input_channels == 4);
  const EvalReport report =
      evaluate([&net](const Tensor<float>& batch, std::size_t) { return net.forward(batch); }, samples, with_ep, opts);
  write_text(a.report, report_to_json(report));

  std::printf("%-16s %8s\n", "metric", "value");
  std::printf("%-16s %8.4f\n", "aIoU", report.aiou);
  std::printf("%-16s %8.4f\n", "mIoU", report.miou);
  std::printf("%-16s %8.4f\n", "iIoU", report.iiou);
  for (const auto& [name, iou] : report.per_class) std::printf("  %-14s %8.4f\n", name.c_str(), iou);
  std::printf("%zu instances, %zu degenerate\n", report.instances, report.degenerate);
  return 0;
}

struct InferArgs {
  std::string ckpt, image, points, out;
  SegmentOptions opts;
};

int run_infer(const InferArgs& a) {
  const LoadedCheckpoint ckpt = load_checkpoint(a.ckpt);
  const Image image = read_png(a.image, 3);
  const SegmentResult r = segment(ckpt.network, image, *parse_points(a.points), a.opts);
  write_text(a.out, polygon_to_json(r.polygon) + "\n");
  std::printf("%zu vertices, confidence %.4f, inference %.2f ms\n", r.polygon.points.size(), r.confidence,
              r.inference_ms);
  return 0;
}

struct ServeArgs {
  std::string checkpoint;
  ServiceConfig config;
};

int run_serve(const ServeArgs& a) {
  Service service(a.config);
  if (!a.checkpoint.empty()) {
    service.set_model(std::make_shared<const Network<float>>(load_checkpoint(a.checkpoint).network));
  }
  const int port = service.bind();
  if (port < 0) throw std::runtime_error("cannot bind " + a.config.host + ":" + std::to_string(a.config.port));
  std::printf("listening on %s:%d (model %s)\n", a.config.host.c_str(), port,
              a.checkpoint.empty() ? "not loaded" : a.checkpoint.c_str());
  std::fflush(stdout);
  return service.run() ? 0 : kExitRuntime;
}

int run_report(const std::string& eval_path, const std::string& hist_path) {
  const EvalReport report = report_from_json(read_text(eval_path));
  write_text(hist_path, histogram_csv(report.border_histogram));
  return 0;
}

struct SynthArgs {
  std::string out;
  int count = 8, width = 96, height = 80;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  write_scene_dataset(a.out, overfit_scenes(a.count, a.seed, a.width, a.height), a.count, true);
  std::printf("wrote %d scenes to %s\n", a.count, a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extreme-points guided instance segmentation: train, evaluate, infer, serve."};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a network and write the best checkpoint");
  train_cmd->add_option("--data", ta.data, "Dataset directory holding index.json")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", ta.out, "Checkpoint output path")->required();
  train_cmd->add_option("--history", ta.history, "Training history JSON (default: <out>.history.json)");
  train_cmd->add_flag("--ep,!--no-ep", ta.ep, "Feed the extreme-points channel (default) or RGB only");
  train_cmd->add_option("--loss", ta.loss, "Loss function")
      ->check(CLI::IsMember({"avg_distance", "soft_iou", "bce_iou"}))
      ->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "Maximum epochs")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--patience", ta.patience, "Early-stop patience in epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "Seed for init, shuffling and augmentation")->capture_default_str();
  train_cmd->add_option("--size", ta.size, "Crop size S")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--base-width", ta.base_width, "First-level filter count f")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--levels", ta.levels, "Encoder levels")->check(CLI::Range(2, 16))->capture_default_str();
  train_cmd->add_option("--conv-block", ta.conv_block, "Convolution block")
      ->check(CLI::IsMember({"standard", "depthwise_separable"}))
      ->capture_default_str();
  train_cmd->add_flag("--no-augment", ta.no_augment, "Disable flip/rotation augmentation");
  train_cmd->add_option("--margin", ta.margin, "Crop margin per side, fraction of bbox size")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  train_cmd->add_option("--ep-radius", ta.ep_radius, "Extreme-point disk radius in crop pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write the metrics report");
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--report", ea.report, "Report JSON output path")->required();
  eval_cmd->add_option("--split", ea.split, "Split to evaluate")->capture_default_str();
  eval_cmd->add_flag("--ep,!--no-ep", ea.ep, "Data carries the extreme-points channel (default: as the checkpoint)");
  eval_cmd->add_option("--threshold", ea.threshold, "Binarization threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval_cmd->add_option("--bin-width", ea.bin_width, "Border-error histogram bin width (px)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_cmd->add_option("--batch", ea.batch, "Batch size for aIoU")->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--margin", ea.margin, "Crop margin per side")->check(CLI::NonNegativeNumber)->capture_default_str();
  eval_cmd->add_option("--ep-radius", ea.ep_radius, "Extreme-point disk radius")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Segment one object from four extreme points");
  infer_cmd->add_option("--ckpt", ia.ckpt, "Checkpoint path")->required();
  infer_cmd->add_option("--image", ia.image, "Input PNG")->required();
  infer_cmd->add_option("--points", ia.points, "Extreme points in image pixels")->required()->check(kPointList);
  infer_cmd->add_option("--out", ia.out, "Polygon JSON output path")->required();
  infer_cmd->add_option("--threshold", ia.opts.threshold, "Binarization threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  infer_cmd->add_option("--epsilon", ia.opts.epsilon, "Simplification tolerance (px)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  infer_cmd->add_option("--margin", ia.opts.margin, "Crop margin per side")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inference service");
  serve_cmd->add_option("--checkpoint", sa.checkpoint, "Checkpoint to load at startup");
  serve_cmd->add_option("--host", sa.config.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", sa.config.port, "Port (0 picks a free one)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  serve_cmd->add_option("--threshold", sa.config.defaults.threshold, "Default binarization threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  serve_cmd->add_option("--epsilon", sa.config.defaults.epsilon, "Default simplification tolerance (px)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve_cmd->add_option("--margin", sa.config.defaults.margin, "Crop margin per side")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve_cmd->add_option("--cors-origin", sa.config.cors_origin, "Access-Control-Allow-Origin value")
      ->capture_default_str();

  std::string eval_path, hist_path;
  auto* report_cmd = app.add_subcommand("report", "Export the border-error histogram of a report as CSV");
  report_cmd->add_option("--eval", eval_path, "Report JSON written by eval")->required();
  report_cmd->add_option("--hist", hist_path, "CSV output path (bin_start,count)")->required();

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic single-object dataset (val = train)");
  synth_cmd->add_option("--out", ya.out, "Output directory")->required();
  synth_cmd->add_option("--count", ya.count, "Number of scenes")->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--width", ya.width, "Image width")->check(CLI::Range(8, 4096))->capture_default_str();
  synth_cmd->add_option("--height", ya.height, "Image height")->check(CLI::Range(8, 4096))->capture_default_str();
  synth_cmd->add_option("--seed", ya.seed, "Scene seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*infer_cmd) return run_infer(ia);
    if (*serve_cmd) return run_serve(sa);
    if (*report_cmd) return run_report(eval_path, hist_path);
    if (*synth_cmd) return run_synth(ya);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
