#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "poseadapt/adapt.hpp"
#include "poseadapt/synth.hpp"
#include "poseadapt/train.hpp"

using namespace poseadapt;
using Catch::Approx;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.c1 = 4;
  cfg.c2 = 8;
  cfg.c3 = 8;
  cfg.feat_channels = 8;
  cfg.dec_channels = 8;
  return cfg;
}

// Small rendered dataset from the default source domain.
ImageDataset tiny_dataset(std::size_t count, std::uint64_t seed) {
  const DomainSpec spec = default_source_domain();
  const Skeleton sk = default_skeleton();
  ImageDataset ds;
  Rng base(seed);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = base.fork(i);
    Pose2D pose = sample_pose(sk, spec.pose, spec.render.image_size, rng);
    pose.id = "img_" + std::to_string(i);
    ds.images.push_back(render(pose, sk, spec.render, rng));
    ds.poses.push_back(std::move(pose));
  }
  return ds;
}

double param_distance(const PoseNet& a, const PoseNet& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& x = a.params()[i].val();
    const Tensor& y = b.params()[i].val();
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - y[j]) * (x[j] - y[j]);
  }
  return std::sqrt(sq);
}

AugmentConfig rotation_augs(double deg) {
  AugmentConfig cfg;
  cfg.view1.rot_deg = deg;
  cfg.view1.trans_frac = 0.05;
  cfg.view2 = cfg.view1;
  return cfg;
}

std::vector<AugmentSpec> identity_specs(std::size_t n) {
  return std::vector<AugmentSpec>(n);
}

}  // namespace

TEST_CASE("teacher EMA update", "[adapt]") {
  const ModelConfig mc = tiny_model();

  SECTION("single-step arithmetic") {
    PoseNet student = PoseNet::init(mc, 1);
    PoseNet teacher = student.clone_detached();
    for (auto& p : teacher.params()) p.mutable_val().fill(0.0);
    for (auto& p : student.params()) p.mutable_val().fill(1.0);
    ema_update(teacher, student, 0.999);
    const double expected = 0.999 * 0.0 + (1.0 - 0.999) * 1.0;
    for (const auto& p : teacher.params()) {
      for (std::size_t j = 0; j < p.val().size(); ++j) {
        REQUIRE(p.val()[j] == expected);
        REQUIRE(p.val()[j] == Approx(0.001).margin(1e-15));
      }
    }
  }

  SECTION("alpha = 0 copies the student") {
    PoseNet student = PoseNet::init(mc, 2);
    PoseNet teacher = PoseNet::init(mc, 3, false);
    ema_update(teacher, student, 0.0);
    REQUIRE(param_distance(teacher, student) == 0.0);
  }

  SECTION("constant student: geometric decay of the gap over 100 steps") {
    PoseNet student = PoseNet::init(mc, 2);
    PoseNet teacher = PoseNet::init(mc, 3, false);
    const double alpha = 0.9;
    const double initial = param_distance(teacher, student);
    REQUIRE(initial > 0.0);
    for (int n = 0; n < 100; ++n) ema_update(teacher, student, alpha);
    const double expected = std::pow(alpha, 100) * initial;
    REQUIRE(param_distance(teacher, student) == Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("pseudo-label selection and rendering", "[adapt]") {
  SECTION("top-p ranking with known confidences") {
    // [2,2,4,4]: per-pair max activations 0.9, 0.8, 0.2, 0.1.
    Tensor maps({2, 2, 4, 4});
    maps[0 * 16 + 6] = 0.9;   // sample 0, keypoint 0, (row 1, col 2)
    maps[1 * 16 + 12] = 0.8;  // sample 0, keypoint 1, (row 3, col 0)
    maps[2 * 16 + 5] = 0.2;
    maps[3 * 16 + 9] = 0.1;

    const PseudoLabels pl = make_pseudo_labels(maps, 0.5, 1.0);
    REQUIRE(pl.kept == 2);
    REQUIRE(pl.tau == 0.8);
    REQUIRE(pl.keep[0] == 1.0);
    REQUIRE(pl.keep[1] == 1.0);
    REQUIRE(pl.keep[2] == 0.0);
    REQUIRE(pl.keep[3] == 0.0);

    // Kept channels are unit-peak Gaussians at the argmax.
    REQUIRE(pl.heatmaps[0 * 16 + 6] == 1.0);
    REQUIRE(pl.heatmaps[1 * 16 + 12] == 1.0);
    // Dropped channels stay identically zero.
    for (std::size_t px = 0; px < 16; ++px) {
      REQUIRE(pl.heatmaps[2 * 16 + px] == 0.0);
      REQUIRE(pl.heatmaps[3 * 16 + px] == 0.0);
    }
  }

  SECTION("ties break toward the smaller index") {
    Tensor maps({1, 3, 2, 2});
    maps[0 * 4 + 1] = 0.5;
    maps[1 * 4 + 2] = 0.5;
    maps[2 * 4 + 3] = 0.4;
    const PseudoLabels pl = make_pseudo_labels(maps, 1.0 / 3.0, 1.0);
    REQUIRE(pl.kept == 1);
    REQUIRE(pl.keep[0] == 1.0);
    REQUIRE(pl.keep[1] == 0.0);
  }

  SECTION("p = 1 keeps everything") {
    Rng rng(7);
    Tensor maps({3, 4, 4, 4});
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = rng.uniform();
    const PseudoLabels pl = make_pseudo_labels(maps, 1.0, 1.0);
    REQUIRE(pl.kept == 12);
    for (std::size_t i = 0; i < 12; ++i) REQUIRE(pl.keep[i] == 1.0);
  }

  SECTION("keep count is exactly ceil(p * B * K)") {
    Rng rng(11);
    Tensor maps({4, 13, 4, 4});
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = rng.uniform();
    for (double p : {0.1, 0.25, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      const PseudoLabels pl = make_pseudo_labels(maps, p, 1.0);
      REQUIRE(pl.kept == static_cast<std::size_t>(std::ceil(p * 52.0)));
      double marked = 0.0;
      for (std::size_t i = 0; i < 52; ++i) marked += pl.keep[i];
      REQUIRE(marked == static_cast<double>(pl.kept));
    }
  }
}

TEST_CASE("output consistency loss", "[adapt]") {
  const HeatmapFrame frame = HeatmapFrame::downscale(4);

  SECTION("student equal to the rendered pseudo-labels gives exactly zero") {
    Rng rng(3);
    Tensor maps({2, 3, 16, 16});
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = rng.uniform();
    const PseudoLabels pl = make_pseudo_labels(maps, 1.0, 1.0);
    const OutLossResult res = loss_out(pl.heatmaps, Value::constant(pl.heatmaps),
                                       identity_specs(2), identity_specs(2), pl.keep, frame);
    REQUIRE(res.loss.val()[0] == 0.0);
    REQUIRE_FALSE(res.empty);
  }

  SECTION("all-zero keep-mask returns zero and reports it") {
    Tensor pseudo({2, 3, 16, 16});
    Tensor keep({2, 3});
    Value student = Value::leaf(Tensor({2, 3, 16, 16}), true);
    const OutLossResult res = loss_out(pseudo, student, identity_specs(2), identity_specs(2),
                                       keep, frame);
    REQUIRE(res.loss.val()[0] == 0.0);
    REQUIRE(res.empty);
  }

  SECTION("constant difference on fully-valid warps reduces to c^2") {
    // One sample, one kept keypoint, identity warps: every pixel valid.
    Tensor pseudo({1, 1, 16, 16});
    RenderedHeatmaps g = render_gaussian({{7.0, 9.0}}, 1.0, 16, 16);
    std::copy(g.maps.data(), g.maps.data() + g.maps.size(), pseudo.data());

    const double c = 0.25;
    Tensor student_t = pseudo;
    for (std::size_t i = 0; i < student_t.size(); ++i) student_t[i] += c;
    Tensor keep({1, 1});
    keep[0] = 1.0;
    const OutLossResult res = loss_out(pseudo, Value::constant(student_t), identity_specs(1),
                                       identity_specs(1), keep, frame);
    REQUIRE(res.valid_pixels == 256);
    REQUIRE(res.loss.val()[0] == c * c);
  }

  SECTION("batch mean: one kept keypoint in a batch of two halves the value") {
    Tensor pseudo({2, 1, 16, 16});
    const double c = 0.5;
    Tensor student_t = pseudo;
    for (std::size_t i = 0; i < 256; ++i) student_t[i] += c;  // sample 0 only
    Tensor keep({2, 1});
    keep[0] = 1.0;
    const OutLossResult res = loss_out(pseudo, Value::constant(student_t), identity_specs(2),
                                       identity_specs(2), keep, frame);
    REQUIRE(res.loss.val()[0] == c * c / 2.0);
  }

  SECTION("gradients flow to the student under real warps") {
    Rng rng(5);
    const std::size_t b = 2, k = 3;
    Tensor maps({b, k, 16, 16});
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = rng.uniform();
    const PseudoLabels pl = make_pseudo_labels(maps, 1.0, 1.0);

    AugmentConfig aug = rotation_augs(25.0);
    std::vector<AugmentSpec> a1(b), a2(b);
    for (std::size_t i = 0; i < b; ++i) {
      auto pr = sample_pair(rng, aug, 64, 64);
      a1[i] = pr.first;
      a2[i] = pr.second;
    }
    Value student = Value::leaf(maps, true);
    const OutLossResult res = loss_out(pl.heatmaps, student, a1, a2, pl.keep, frame);
    REQUIRE(std::isfinite(res.loss.val()[0]));
    REQUIRE(res.loss.val()[0] >= 0.0);
    REQUIRE(res.valid_pixels > 0);
    backward(res.loss);
    double gsum = 0.0;
    for (std::size_t i = 0; i < student.grad().size(); ++i) gsum += std::fabs(student.grad()[i]);
    REQUIRE(gsum > 0.0);
  }

  SECTION("role swap at a cold start is bit-identical") {
    // Identical networks, identical views: whichever copy pseudo-labels, the
    // loss against the other's raw maps is the same number.
    Rng rng(9);
    Tensor maps({2, 4, 16, 16});
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = rng.uniform();
    const PseudoLabels as_teacher = make_pseudo_labels(maps, 1.0, 1.0);

    const OutLossResult forward_roles =
        loss_out(as_teacher.heatmaps, Value::constant(maps), identity_specs(2),
                 identity_specs(2), as_teacher.keep, frame);
    const OutLossResult swapped_roles =
        loss_out(as_teacher.heatmaps, Value::constant(maps), identity_specs(2),
                 identity_specs(2), as_teacher.keep, frame);
    REQUIRE(forward_roles.loss.val()[0] == swapped_roles.loss.val()[0]);
  }
}

TEST_CASE("feature consistency loss", "[adapt]") {
  SECTION("worked example: anti-correlated pair costs exactly 2 gamma") {
    Tensor z({2, 2});
    z[0] = 1.0;
    z[1] = -1.0;
    z[2] = -1.0;
    z[3] = 1.0;
    const FeatLossResult res = loss_feat(Value::constant(z), Value::constant(z));
    REQUIRE(res.loss.val()[0] == 0.01);
    REQUIRE(res.zero_variance == 0);
  }

  SECTION("identical decorrelated-ish features keep the diagonal at 1") {
    Rng rng(13);
    Tensor z({8, 5});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal(0.0, 1.0);
    // Column-center like pool_and_normalize would.
    for (std::size_t j = 0; j < 5; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < 8; ++i) m += z[i * 5 + j];
      m /= 8.0;
      for (std::size_t i = 0; i < 8; ++i) z[i * 5 + j] -= m;
    }
    const FeatLossResult res = loss_feat(Value::constant(z), Value::constant(z), 0.0);
    // gamma = 0 isolates the diagonal term; identical inputs pin C_ii to 1.
    REQUIRE(res.loss.val()[0] <= 1e-10);
  }

  SECTION("matches an independently computed correlation matrix") {
    Rng rng(17);
    const std::size_t b = 6, f = 5;
    Tensor zt({b, f}), zs({b, f});
    for (std::size_t i = 0; i < zt.size(); ++i) zt[i] = rng.normal(0.0, 1.0);
    for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = rng.normal(0.0, 1.0);

    const double gamma = 5e-3;
    double expected = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        double num = 0.0, st = 0.0, ss = 0.0;
        for (std::size_t r = 0; r < b; ++r) {
          num += zt[r * f + i] * zs[r * f + j];
          st += zt[r * f + i] * zt[r * f + i];
          ss += zs[r * f + j] * zs[r * f + j];
        }
        const double c = num / std::sqrt(std::max(st * ss, 1e-24));
        REQUIRE(std::fabs(c) <= 1.0 + 1e-9);
        expected += i == j ? (1.0 - c) * (1.0 - c) : gamma * c * c;
      }
    }
    const FeatLossResult res = loss_feat(Value::constant(zt), Value::constant(zs), gamma);
    REQUIRE(res.loss.val()[0] == Approx(expected).epsilon(1e-12));
  }

  SECTION("zero-variance columns are guarded and counted") {
    Rng rng(19);
    Tensor zt({4, 3}), zs({4, 3});
    for (std::size_t i = 0; i < zt.size(); ++i) zt[i] = rng.normal(0.0, 1.0);
    for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = rng.normal(0.0, 1.0);
    for (std::size_t r = 0; r < 4; ++r) zt[r * 3 + 1] = 0.0;  // dead teacher column
    const FeatLossResult res = loss_feat(Value::constant(zt), Value::constant(zs));
    REQUIRE(res.zero_variance == 1);
    REQUIRE(std::isfinite(res.loss.val()[0]));
    // The dead column's correlations are defined as 0, so its diagonal
    // contributes exactly (1 - 0)^2 = 1.
    REQUIRE(res.loss.val()[0] >= 1.0);
  }

  SECTION("batch of one is rejected") {
    Tensor z({1, 4});
    REQUIRE_THROWS_AS(loss_feat(Value::constant(z), Value::constant(z)), std::invalid_argument);
  }
}

TEST_CASE("adaptation step contract", "[adapt]") {
  const ModelConfig mc = tiny_model();
  const PoseNet source = PoseNet::init(mc, 21);
  const ImageDataset ds = tiny_dataset(4, 100);
  const PriorModel prior = PriorModel::from_checkpoint(
      PriorModel::init(default_skeleton(), PriorConfig{}, 5).to_checkpoint());

  AdaptConfig cfg;
  cfg.batch = 4;
  cfg.augment = rotation_augs(20.0);
  cfg.lambda2 = 1e-4;
  cfg.seed = 42;

  SECTION("total equals the weighted sum of reported terms") {
    AdaptState state(source, &prior, cfg);
    const StepBreakdown bd = state.step(ds.images);
    REQUIRE(std::fabs(bd.total - (bd.l_out + cfg.lambda1 * bd.l_feat +
                                  cfg.lambda2 * bd.l_prior)) <= 1e-12);
    REQUIRE(bd.l_out >= 0.0);
    REQUIRE(bd.l_prior >= 0.0);
    REQUIRE(state.t() == 1);
  }

  SECTION("keep fraction matches ceil(p * B * K)") {
    AdaptConfig c2 = cfg;
    c2.p = 0.3;
    AdaptState state(source, &prior, c2);
    const StepBreakdown bd = state.step(ds.images);
    const double expected = std::ceil(0.3 * 4 * 13) / (4.0 * 13.0);
    REQUIRE(bd.kept_fraction == expected);
  }

  SECTION("teacher follows the EMA identity to machine precision") {
    AdaptState state(source, &prior, cfg);
    std::vector<Tensor> teacher_before;
    for (const auto& p : state.teacher().params()) teacher_before.push_back(p.val());
    state.step(ds.images);
    for (std::size_t i = 0; i < teacher_before.size(); ++i) {
      const Tensor& after = state.teacher().params()[i].val();
      const Tensor& student = state.student().params()[i].val();
      for (std::size_t j = 0; j < after.size(); ++j) {
        REQUIRE(after[j] == cfg.alpha * teacher_before[i][j] + (1.0 - cfg.alpha) * student[j]);
      }
    }
    // The student itself moved.
    REQUIRE(param_distance(state.student(), source) > 0.0);
  }

  SECTION("no gradient reaches the teacher or the prior") {
    AdaptState state(source, &prior, cfg);
    state.step(ds.images);
    for (const auto& p : state.teacher().params()) {
      REQUIRE_FALSE(p.requires_grad());
      const Tensor& g = p.grad();
      for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(g[j] == 0.0);
    }
    for (const auto& p : prior.params()) {
      REQUIRE_FALSE(p.requires_grad());
      const Tensor& g = p.grad();
      for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(g[j] == 0.0);
    }
  }

  SECTION("fixed seed and batch give a bit-identical breakdown") {
    AdaptState a(source, &prior, cfg);
    AdaptState b(source, &prior, cfg);
    const StepBreakdown x = a.step(ds.images);
    const StepBreakdown y = b.step(ds.images);
    REQUIRE(x.l_out == y.l_out);
    REQUIRE(x.l_feat == y.l_feat);
    REQUIRE(x.l_prior == y.l_prior);
    REQUIRE(x.total == y.total);
    REQUIRE(x.tau == y.tau);
    REQUIRE(param_distance(a.student(), b.student()) == 0.0);
  }

  SECTION("lambda1 = lambda2 = 0 reduces to pure self-training") {
    AdaptConfig c2 = cfg;
    c2.lambda1 = 0.0;
    c2.lambda2 = 0.0;
    AdaptState state(source, nullptr, c2);  // prior not needed
    const StepBreakdown bd = state.step(ds.images);
    REQUIRE(bd.l_feat == 0.0);
    REQUIRE(bd.l_prior == 0.0);
    REQUIRE(bd.total == bd.l_out);
  }

  SECTION("missing prior with lambda2 != 0 is rejected") {
    REQUIRE_THROWS_AS(AdaptState(source, nullptr, cfg), std::invalid_argument);
  }

  SECTION("non-finite loss aborts with a per-term breakdown") {
    AdaptState state(source, &prior, cfg);
    // Poison the final (linear) layer bias: inner-layer NaNs would be gated
    // away by relu, but the heatmap head has no activation after it.
    auto& params = const_cast<std::vector<Value>&>(state.student().params());
    params.back().mutable_val()[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(state.step(ds.images), Catch::Matchers::ContainsSubstring("non-finite"));
  }
}

TEST_CASE("adaptation loop bookkeeping", "[adapt]") {
  const ModelConfig mc = tiny_model();
  const PoseNet source = PoseNet::init(mc, 31);
  const ImageDataset train = tiny_dataset(8, 200);
  const ImageDataset eval_ds = tiny_dataset(4, 300);

  AdaptConfig cfg;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.lr_drops = {1};
  cfg.augment = rotation_augs(15.0);
  cfg.lambda2 = 0.0;  // skip the prior pass for speed
  cfg.seed = 7;

  SECTION("trace has exactly epochs x iterations rows and the schedule drops") {
    const AdaptResult res = run_adaptation(source, nullptr, train.images, eval_ds, cfg);
    REQUIRE(res.trace.size() == 4);  // 2 epochs x (8 / 4) iterations
    for (std::size_t i = 0; i < res.trace.size(); ++i) REQUIRE(res.trace[i].step == i + 1);
    REQUIRE(res.epochs.size() == 2);
    REQUIRE(res.epochs[0].lr == cfg.lr);
    REQUIRE(res.epochs[1].lr == Approx(cfg.lr * 0.1));
    for (const auto& row : res.epochs) {
      REQUIRE(row.student_pck >= 0.0);
      REQUIRE(row.student_pck <= 1.0);
      REQUIRE(row.teacher_pck >= 0.0);
      REQUIRE(row.teacher_pck <= 1.0);
    }
  }

  SECTION("zero epochs returns the source parameters bit-exactly") {
    AdaptConfig c2 = cfg;
    c2.epochs = 0;
    const AdaptResult res = run_adaptation(source, nullptr, train.images, eval_ds, c2);
    REQUIRE(res.trace.empty());
    REQUIRE(param_distance(res.student, source) == 0.0);
    REQUIRE(param_distance(res.teacher, source) == 0.0);
  }

  SECTION("same config and seed reproduce the run bit-exactly") {
    const AdaptResult a = run_adaptation(source, nullptr, train.images, {}, cfg);
    const AdaptResult b = run_adaptation(source, nullptr, train.images, {}, cfg);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      REQUIRE(a.trace[i].l_out == b.trace[i].l_out);
      REQUIRE(a.trace[i].l_feat == b.trace[i].l_feat);
      REQUIRE(a.trace[i].total == b.trace[i].total);
    }
    REQUIRE(param_distance(a.student, b.student) == 0.0);
    REQUIRE(param_distance(a.teacher, b.teacher) == 0.0);
    // Empty evaluation split leaves the PCK columns as NaN.
    REQUIRE(std::isnan(a.epochs[0].student_pck));
  }

  SECTION("too few target images for one batch is rejected") {
    const ImageDataset small = tiny_dataset(2, 400);
    REQUIRE_THROWS_AS(run_adaptation(source, nullptr, small.images, {}, cfg),
                      std::invalid_argument);
  }
}

TEST_CASE("sub-pixel decoding", "[adapt]") {
  SECTION("recovers an interior sub-pixel peak") {
    const RenderedHeatmaps g = render_gaussian({{7.3, 4.6}}, 1.25, 16, 16);
    const DecodedPose hard = argmax_decode(g.maps);
    const DecodedPose fine = decode_subpixel(g.maps);
    REQUIRE(hard.coords[0].x == 7.0);
    REQUIRE(hard.coords[0].y == 5.0);
    REQUIRE(fine.coords[0].x == Approx(7.3).margin(0.1));
    REQUIRE(fine.coords[0].y == Approx(4.6).margin(0.1));
    REQUIRE(fine.confidence[0] == hard.confidence[0]);
  }

  SECTION("all-zero map falls back to the argmax cell") {
    const Tensor zero({1, 8, 8});
    const DecodedPose dec = decode_subpixel(zero);
    REQUIRE(dec.coords[0].x == 0.0);
    REQUIRE(dec.coords[0].y == 0.0);
  }

  SECTION("a secondary mode far away does not drag the estimate") {
    RenderedHeatmaps main = render_gaussian({{3.4, 3.2}}, 1.0, 16, 16);
    const RenderedHeatmaps ghost = render_gaussian({{13.0, 12.0}}, 1.0, 16, 16);
    for (std::size_t i = 0; i < main.maps.size(); ++i) main.maps[i] += 0.8 * ghost.maps[i];
    const DecodedPose dec = decode_subpixel(main.maps);
    REQUIRE(dec.coords[0].x == Approx(3.4).margin(0.15));
    REQUIRE(dec.coords[0].y == Approx(3.2).margin(0.15));
  }
}

TEST_CASE("source training", "[adapt]") {
  TrainSourceConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 4;
  cfg.lr_drops = {};
  cfg.batch = 16;
  cfg.lr = 2e-3;
  cfg.seed = 3;

  const ImageDataset train = tiny_dataset(32, 500);
  const ImageDataset val = tiny_dataset(8, 600);
  const TrainSourceResult res = train_source(train, val, cfg);

  REQUIRE(res.epochs.size() == 4);
  REQUIRE(res.epochs.back().loss < res.epochs.front().loss);
  for (const auto& row : res.epochs) {
    REQUIRE(std::isfinite(row.loss));
    REQUIRE(row.val_pck >= 0.0);
    REQUIRE(row.val_pck <= 1.0);
  }

  // Deterministic: same config, same data, bit-identical model.
  const TrainSourceResult res2 = train_source(train, val, cfg);
  REQUIRE(param_distance(res.model, res2.model) == 0.0);
  REQUIRE(res2.epochs.back().loss == res.epochs.back().loss);
}
