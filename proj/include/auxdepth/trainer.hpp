#pragma once

// Training loop over a KITTI-layout dataset directory: deterministic batch
// schedule, per-image tapes with gradients accumulated in a fixed order,
// Adam with cosine annealing, CSV metrics, periodic checkpoints.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "auxdepth/checkpoint.hpp"
#include "auxdepth/inference.hpp"
#include "auxdepth/losses.hpp"
#include "auxdepth/model.hpp"
#include "auxdepth/synth.hpp"

namespace auxdepth {

struct TrainFrame {
  std::string id;
  std::vector<double> image;       // [3,H,W], normalized
  std::vector<int> cls_targets;    // per anchor
  std::vector<Index> positive_rows;
  std::vector<double> box_targets;  // [P, kRegressionDims]
  std::vector<int> depth_bins;      // per feature cell, kNoDepthTarget if none
  kitti::Calibration calib;
  std::vector<kitti::Label> labels;
};

struct StepLog {
  int step = 0;
  double lcls = 0.0, lreg = 0.0, ldepth = 0.0, ltotal = 0.0, lr = 0.0;
};

inline const char* kMetricsHeader = "step,lcls,lreg,ldepth,ltotal,lr";

namespace detail {

inline std::vector<std::string> frame_ids(const std::string& data_dir) {
  namespace fs = std::filesystem;
  const fs::path labels = fs::path(data_dir) / "label_2";
  if (!fs::is_directory(labels))
    fail(Error::Kind::Config, "dataset: " + labels.string() + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(labels))
    if (e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) fail(Error::Kind::Config, "dataset: no label files in " + labels.string());
  return ids;
}

}  // namespace detail

template <typename S>
class Trainer {
 public:
  Trainer(const RunConfig& rc)
      : rc_(rc),
        model_cfg_(ModelConfig::from_run_config(rc)),
        model_(model_cfg_, rc.seed),
        optimizer_(model_.params()),
        weights_{rc.loss_alpha, rc.loss_gamma, rc.loss_beta, rc.loss_lambda_reg,
                 rc.loss_lambda_depth} {
    anchors_ = generate_anchors(model_cfg_.feat_h(), model_cfg_.feat_w(),
                                model_cfg_.stride(), model_cfg_.head, model_cfg_.lid);
    load_dataset();
  }

  Model<S>& model() { return model_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  const std::vector<TrainFrame>& frames() const { return frames_; }
  std::int64_t start_step() const { return start_step_; }

  void resume_from(const std::string& base) {
    start_step_ = load_checkpoint(base, model_.params(), &optimizer_);
  }

  void save(const std::string& base, std::int64_t step) {
    save_checkpoint(base, model_.params(), &optimizer_, step);
  }

  /// Deterministic sample stream: position p draws from the epoch-p/N
  /// shuffle of the frame indices. Pure function of (seed, p), so resumed
  /// runs see the identical schedule.
  std::size_t sample_index(std::int64_t position) const {
    const std::int64_t n = static_cast<std::int64_t>(frames_.size());
    const std::int64_t epoch = position / n;
    const std::int64_t offset = position % n;
    std::vector<std::size_t> order(frames_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(rc_.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
    return order[static_cast<std::size_t>(offset)];
  }

  StepLog train_step(std::int64_t step) {
    model_.params().zero_grads();
    StepLog log;
    log.step = static_cast<int>(step);
    log.lr = cosine_lr(step, rc_.steps, rc_.lr, rc_.lr_min);
    const int batch = rc_.batch;
    for (int b = 0; b < batch; ++b) {
      const TrainFrame& frame =
          frames_[sample_index(step * static_cast<std::int64_t>(batch) + b)];
      Tape<S> tape;
      Tensor<S> image = image_tensor(frame);
      const ModelOutputs<S> out = model_.forward(image);

      Tensor<S> p = sigmoid(model_.cls_rows(out));
      Tensor<S> lcls = focal_loss(p, frame.cls_targets, static_cast<S>(weights_.alpha),
                                  static_cast<S>(weights_.gamma));

      Tensor<S> lreg;
      if (frame.positive_rows.empty()) {
        lreg = Tensor<S>::scalar(S(0));
      } else {
        Tensor<S> pred = gather_rows(model_.box_rows(out), frame.positive_rows);
        std::vector<S> target_vals(frame.box_targets.begin(), frame.box_targets.end());
        Tensor<S> target = Tensor<S>::from(
            {static_cast<Index>(frame.positive_rows.size()), Index(kRegressionDims)},
            std::move(target_vals));
        lreg = smooth_l1(pred, target, static_cast<S>(weights_.beta));
      }

      Tensor<S> ldepth = Tensor<S>::scalar(S(0));
      if (model_cfg_.use_adf) {
        const Index d = model_cfg_.adf.depth_bins;
        Tensor<S> logits = reshape(out.depth_logits, {d, model_cfg_.seq_len()});
        ldepth = depth_loss(logits, frame.depth_bins, static_cast<S>(weights_.gamma)).loss;
      }

      Tensor<S> total = total_loss(lcls, lreg, ldepth, weights_);
      Tensor<S> scaled = scalar_mul(total, S(1) / static_cast<S>(batch));
      if (scaled.requires_grad()) tape.backward(scaled);

      log.lcls += static_cast<double>(lcls.value()) / batch;
      log.lreg += static_cast<double>(lreg.value()) / batch;
      log.ldepth += static_cast<double>(ldepth.value()) / batch;
      log.ltotal += static_cast<double>(total.value()) / batch;
    }
    optimizer_.step(log.lr);
    return log;
  }

  /// Runs steps [start_step, rc.steps), streaming CSV rows and writing
  /// checkpoints every rc.checkpoint_every steps plus a final one.
  std::vector<StepLog> run(std::ostream* metrics,
                           const std::function<void(const StepLog&)>& on_step = {}) {
    namespace fs = std::filesystem;
    if (metrics && start_step_ == 0) *metrics << kMetricsHeader << "\n";
    std::vector<StepLog> logs;
    fs::create_directories(rc_.out_dir);
    for (std::int64_t step = start_step_; step < rc_.steps; ++step) {
      const StepLog log = train_step(step);
      logs.push_back(log);
      if (metrics && (step % rc_.log_every == 0 || step + 1 == rc_.steps)) {
        char row[160];
        std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g,%.9g", log.step, log.lcls,
                      log.lreg, log.ldepth, log.ltotal, log.lr);
        *metrics << row << "\n";
      }
      if (on_step) on_step(log);
      if (rc_.checkpoint_every > 0 && (step + 1) % rc_.checkpoint_every == 0)
        save((fs::path(rc_.out_dir) / ("ckpt_" + std::to_string(step + 1))).string(),
             step + 1);
    }
    save((fs::path(rc_.out_dir) / "ckpt_final").string(), rc_.steps);
    return logs;
  }

  /// Writes KITTI prediction files for every training frame.
  void write_predictions(const std::string& pred_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(pred_dir);
    for (const auto& frame : frames_) {
      const Tensor<S> image = image_tensor(frame);
      const auto dets = detect(model_, image, anchors_, frame.calib);
      std::vector<kitti::Label> rows;
      for (const auto& det : dets)
        rows.push_back(detection_to_label(det, model_cfg_.input_w, model_cfg_.input_h));
      kitti::write_label_file((fs::path(pred_dir) / (frame.id + ".txt")).string(), rows);
    }
  }

  Tensor<S> image_tensor(const TrainFrame& frame) const {
    std::vector<S> vals(frame.image.begin(), frame.image.end());
    return Tensor<S>::from({3, model_cfg_.input_h, model_cfg_.input_w}, std::move(vals));
  }

 private:
  void load_dataset() {
    namespace fs = std::filesystem;
    if (rc_.data_dir.empty()) fail(Error::Kind::Config, "train.data_dir is not set");
    const auto ids = detail::frame_ids(rc_.data_dir);
    kitti::PreprocessConfig pp;
    pp.crop_top = rc_.preprocess_crop_top;
    pp.out_w = rc_.preprocess_out_w;
    pp.out_h = rc_.preprocess_out_h;
    if (pp.out_w != model_cfg_.input_w || pp.out_h != model_cfg_.input_h)
      fail(Error::Kind::Config, "preprocess output size must match the model input size");
    for (const auto& id : ids) {
      TrainFrame frame;
      frame.id = id;
      Index h = 0, w = 0;
      const auto rgb =
          kitti::read_ppm((fs::path(rc_.data_dir) / "image_2" / (id + ".ppm")).string(), h, w);
      Tensor<double> raw = Tensor<double>::from({3, h, w}, rgb);
      Rng rng(rc_.seed);  // deterministic: trainer uses crop/resize/normalize only
      auto [img, applied] = kitti::preprocess(raw, kitti::PreprocessMode::Test, rng, pp);
      frame.image = img.values();

      frame.labels =
          kitti::read_label_file((fs::path(rc_.data_dir) / "label_2" / (id + ".txt")).string());
      kitti::Calibration calib = kitti::read_calib_file(
          (fs::path(rc_.data_dir) / "calib" / (id + ".txt")).string());
      // crop shifts the principal point, resize rescales the intrinsics
      calib.p2[6] -= static_cast<double>(applied.crop_top);
      calib = calib.scaled(applied.scale_x, applied.scale_y);
      frame.calib = calib;

      build_targets(frame, applied);

      Index dh = 0, dw = 0;
      const auto depth = kitti::read_depth(
          (fs::path(rc_.data_dir) / "depth" / (id + ".bin")).string(), dh, dw);
      build_depth_bins(frame, depth, dh, dw, applied);
      frames_.push_back(std::move(frame));
    }
  }

  void build_targets(TrainFrame& frame, const kitti::AppliedTransforms& applied) {
    std::vector<Box2D> gt_boxes;
    std::vector<const kitti::Label*> gt_labels;
    for (const auto& lb : frame.labels) {
      if (lb.type != "Car") continue;
      Box2D box{lb.x1, (lb.y1 - applied.crop_top), lb.x2, (lb.y2 - applied.crop_top)};
      box.x1 *= applied.scale_x;
      box.x2 *= applied.scale_x;
      box.y1 *= applied.scale_y;
      box.y2 *= applied.scale_y;
      gt_boxes.push_back(box);
      gt_labels.push_back(&lb);
    }
    const auto matches =
        match_anchors(anchors_, gt_boxes, model_cfg_.head.pos_iou, model_cfg_.head.neg_iou);
    frame.cls_targets.assign(anchors_.size(), kNegativeTarget);
    for (std::size_t a = 0; a < matches.size(); ++a) {
      switch (matches[a].label) {
        case AnchorMatch::Label::Positive: {
          frame.cls_targets[a] = 0;  // single Car class
          const kitti::Label& gt = *gt_labels[static_cast<std::size_t>(matches[a].gt)];
          BoxGeom geom;
          geom.box2d = gt_boxes[static_cast<std::size_t>(matches[a].gt)];
          const auto [u, v] = frame.calib.project(gt.x, gt.y - 0.5 * gt.h, gt.z);
          geom.u = u;
          geom.v = v;
          geom.z = gt.z;
          geom.w = gt.w;
          geom.h = gt.h;
          geom.l = gt.l;
          geom.ry = gt.ry;
          const auto deltas = encode_box(geom, anchors_[a]);
          frame.positive_rows.push_back(static_cast<Index>(a));
          frame.box_targets.insert(frame.box_targets.end(), deltas.begin(), deltas.end());
          break;
        }
        case AnchorMatch::Label::Ignore:
          frame.cls_targets[a] = kIgnoreTarget;
          break;
        case AnchorMatch::Label::Negative:
          frame.cls_targets[a] = kNegativeTarget;
          break;
      }
    }
  }

  void build_depth_bins(TrainFrame& frame, const std::vector<double>& depth, Index dh,
                        Index dw, const kitti::AppliedTransforms& applied) {
    const Index stride = model_cfg_.stride();
    frame.depth_bins.assign(static_cast<std::size_t>(model_cfg_.seq_len()), kNoDepthTarget);
    for (Index r = 0; r < model_cfg_.feat_h(); ++r)
      for (Index c = 0; c < model_cfg_.feat_w(); ++c) {
        // feature cell center, mapped back into the source depth map
        const double out_u = (static_cast<double>(c) + 0.5) * static_cast<double>(stride);
        const double out_v = (static_cast<double>(r) + 0.5) * static_cast<double>(stride);
        const Index su = static_cast<Index>(out_u / applied.scale_x);
        const Index sv = static_cast<Index>(out_v / applied.scale_y) + applied.crop_top;
        if (su < 0 || su >= dw || sv < 0 || sv >= dh) continue;
        const double d = depth[static_cast<std::size_t>(sv * dw + su)];
        if (!std::isfinite(d)) continue;
        frame.depth_bins[static_cast<std::size_t>(r * model_cfg_.feat_w() + c)] =
            lid::depth_to_bin(d, model_cfg_.lid);
      }
  }

  RunConfig rc_;
  ModelConfig model_cfg_;
  Model<S> model_;
  Adam<S> optimizer_;
  LossWeights weights_;
  std::vector<Anchor> anchors_;
  std::vector<TrainFrame> frames_;
  std::int64_t start_step_ = 0;
};

}  // namespace auxdepth
