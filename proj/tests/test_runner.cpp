#include <poseval/runner.hpp>
#include <poseval/synth.hpp>

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace poseval;
using poseval::testing::random_joints;
using poseval::testing::TempDir;
using poseval::testing::write_file;

namespace {

struct Fixture {
  std::vector<std::string> ids;
  std::vector<Joints3> gt;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed = 81) {
  std::mt19937_64 rng(seed);
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    f.ids.push_back("S1-A1-Q1-C1-F" + std::to_string(i));
    // float-representable so the archive round trip is exact
    f.gt.push_back(hip_center(random_joints(rng)).cast<float>().cast<double>());
  }
  return f;
}

PredictionError prediction_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const PredictionError& e) {
    return e;
  }
  ADD_FAILURE() << "no prediction error";
  return PredictionError(PredictionError::Kind::file, "");
}

SessionConfig echo(const std::vector<std::string>& args, int joints = 16) {
  SessionConfig c;
  c.command = {POSEVAL_ECHO_MODEL};
  c.command.insert(c.command.end(), args.begin(), args.end());
  c.num_joints = joints;
  c.timeout = std::chrono::milliseconds(5000);
  return c;
}

std::vector<Joints2> single(const Joints2& kp) { return {kp}; }

Joints2 keypoints(std::mt19937_64& rng, int joints = 16) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Joints2 k(joints, 2);
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = static_cast<double>(u(rng));
  return k;
}

}  // namespace

TEST(PredictionFile, GroundTruthCopyGivesZeroError) {
  TempDir dir;
  const Fixture f = make_fixture(50);
  write_prediction_file(dir.file("p.zip"), {f.ids, f.gt}, canonical16());
  const auto pred = load_prediction_file(dir.file("p.zip"), canonical16(), f.ids);
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_EQ(pred[i], f.gt[i]);
  EXPECT_EQ(mpjpe(pred, f.gt).mean_mm, 0.0);
}

TEST(PredictionFile, ShuffledRowsGiveIdenticalMetrics) {
  TempDir dir;
  const Fixture f = make_fixture(300);
  std::mt19937_64 rng(82);
  std::normal_distribution<double> noise(0.0, 20.0);
  std::vector<Joints3> pred = f.gt;
  for (auto& p : pred) {
    for (Eigen::Index r = 1; r < p.rows(); ++r)
      for (int c = 0; c < 3; ++c) p(r, c) = static_cast<float>(p(r, c) + noise(rng));
  }
  std::vector<std::size_t> perm(pred.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  PredictionBatch shuffled;
  for (auto i : perm) {
    shuffled.sample_ids.push_back(f.ids[i]);
    shuffled.joints_3d.push_back(pred[i]);
  }
  write_prediction_file(dir.file("sorted.zip"), {f.ids, pred}, canonical16());
  write_prediction_file(dir.file("shuffled.zip"), shuffled, canonical16());
  const auto a = evaluate_protocols(load_prediction_file(dir.file("sorted.zip"), canonical16(), f.ids), f.gt);
  const auto b = evaluate_protocols(load_prediction_file(dir.file("shuffled.zip"), canonical16(), f.ids), f.gt);
  EXPECT_EQ(a.mpjpe_mm, b.mpjpe_mm);
  EXPECT_EQ(a.pa_mpjpe_mm, b.pa_mpjpe_mm);
  EXPECT_EQ(a.per_joint_mpjpe_mm, b.per_joint_mpjpe_mm);
}

TEST(PredictionFile, StreamsInBatches) {
  TempDir dir;
  const Fixture f = make_fixture(10);
  write_prediction_file(dir.file("p.zip"), {f.ids, f.gt}, canonical16());
  PredictionFile file(dir.file("p.zip"), canonical16());
  PredictionBatch batch;
  std::vector<std::size_t> sizes;
  while (file.next(batch, 4)) sizes.push_back(batch.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
}

TEST(PredictionFile, IdMismatchesAreNamed) {
  TempDir dir;
  const Fixture f = make_fixture(5);
  write_prediction_file(dir.file("p.zip"), {f.ids, f.gt}, canonical16());

  std::vector<std::string> more = f.ids;
  more.push_back("S9-A1-Q1-C1-F0");
  const auto missing = prediction_error([&] { load_prediction_file(dir.file("p.zip"), canonical16(), more); });
  EXPECT_EQ(missing.kind, PredictionError::Kind::missing_id);
  EXPECT_NE(std::string(missing.what()).find("S9-A1-Q1-C1-F0"), std::string::npos);

  const std::vector<std::string> fewer(f.ids.begin(), f.ids.end() - 1);
  const auto extra = prediction_error([&] { load_prediction_file(dir.file("p.zip"), canonical16(), fewer); });
  EXPECT_EQ(extra.kind, PredictionError::Kind::extra_id);
  EXPECT_NE(std::string(extra.what()).find(f.ids.back()), std::string::npos);

  PredictionBatch dup{f.ids, f.gt};
  dup.sample_ids[3] = dup.sample_ids[1];
  EXPECT_EQ(prediction_error([&] { write_prediction_file(dir.file("d.zip"), dup, canonical16()); }).kind,
            PredictionError::Kind::duplicate_id);
  EXPECT_EQ(prediction_error([&] { dup.validate(16); }).error_class(), ErrorClass::prediction);
}

TEST(PredictionFile, ShapeCenteringAndFormatErrors) {
  TempDir dir;
  const Fixture f = make_fixture(4);
  write_prediction_file(dir.file("p16.zip"), {f.ids, f.gt}, canonical16());
  EXPECT_EQ(prediction_error([&] { load_prediction_file(dir.file("p16.zip"), canonical14(), f.ids); }).kind,
            PredictionError::Kind::shape);

  PredictionBatch off{f.ids, f.gt};
  off.joints_3d[2](0, 1) = 0.5;
  EXPECT_EQ(prediction_error([&] { off.validate(16); }).kind, PredictionError::Kind::not_centered);

  // bypass the writer's validation to store an uncentered row
  DatasetArchive a = read_archive(dir.file("p16.zip"));
  a.tensors.at("joints_3d").data[16 * 3 * 2 + 1] = 3.0f;
  write_archive(dir.file("uncentered.zip"), a);
  EXPECT_EQ(prediction_error([&] { load_prediction_file(dir.file("uncentered.zip"), canonical16(), f.ids); }).kind,
            PredictionError::Kind::not_centered);

  a = read_archive(dir.file("p16.zip"));
  a.manifest["kind"] = "dataset";
  write_archive(dir.file("kind.zip"), a);
  EXPECT_EQ(prediction_error([&] { PredictionFile(dir.file("kind.zip"), canonical16()); }).kind,
            PredictionError::Kind::file);
  write_file(dir.file("junk.zip"), "not an archive");
  EXPECT_EQ(prediction_error([&] { PredictionFile(dir.file("junk.zip"), canonical16()); }).kind,
            PredictionError::Kind::file);
  EXPECT_EQ(prediction_error([&] { PredictionFile(dir.file("absent.zip"), canonical16()); }).kind,
            PredictionError::Kind::file);
}

TEST(Oracle, ZeroSigmaIsExactAndSeedsAreDeterministic) {
  const Fixture f = make_fixture(20);
  EXPECT_EQ(mpjpe(oracle_with_noise(f.gt, 0.0, 3), f.gt).mean_mm, 0.0);
  EXPECT_EQ(oracle_with_noise(f.gt, 10.0, 3), oracle_with_noise(f.gt, 10.0, 3));
  EXPECT_NE(oracle_with_noise(f.gt, 10.0, 3), oracle_with_noise(f.gt, 10.0, 4));
  for (const auto& p : oracle_with_noise(f.gt, 10.0, 3)) EXPECT_EQ(p.row(0).norm(), 0.0);
  EXPECT_THROW(oracle_with_noise(f.gt, -1.0, 3), Error);
  EXPECT_THROW(oracle_with_noise(f.gt, std::nan(""), 3), Error);
}

TEST(Oracle, SigmaTenMatchesChiMean) {
  // mean of a chi(3) variable scaled by sigma: sigma * 2 * sqrt(2 / pi)
  const double expected = 10.0 * 2.0 * std::sqrt(2.0 / kPi);
  EXPECT_NEAR(expected, 15.96, 0.005);
  const Fixture f = make_fixture(1000);
  const auto s = mpjpe(oracle_with_noise(f.gt, 10.0, 11), f.gt);
  const double non_root = s.per_joint_mm.tail(15).mean();
  EXPECT_NEAR(non_root, expected, 0.01 * expected);
  EXPECT_NEAR(s.mean_mm, expected * 15.0 / 16.0, 0.01 * expected * 15.0 / 16.0);
}

TEST(Window, EdgeReplication) {
  EXPECT_EQ(window_indices(5, 0, 3), (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(window_indices(5, 4, 3), (std::vector<std::size_t>{3, 4, 4}));
  EXPECT_EQ(window_indices(5, 2, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(window_indices(5, 2, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(window_indices(1, 0, 5), (std::vector<std::size_t>(5, 0)));
  EXPECT_THROW(window_indices(3, 3, 1), Error);
}

TEST(ModelIO, NormalizationFollowsTrainingFlag) {
  CameraModel cam;
  cam.width = 1000;
  cam.height = 500;
  Joints2 kp(2, 2);
  kp << 500, 250, 1000, 0;
  ModelIO plain;
  EXPECT_EQ(plain.prepare(kp, cam), screen_normalize(kp, 1000, 500));

  ModelIO trained;
  trained.trained_on_normalized_data = true;
  EXPECT_THROW(trained.prepare(kp, cam), Error);
  ZScoreStats s2;
  s2.mean = RowMatrix::Constant(2, 2, 100.0);
  s2.std = RowMatrix::Constant(2, 2, 50.0);
  trained.stats_2d = s2;
  EXPECT_EQ(trained.prepare(kp, cam)(0, 0), 8.0);
  trained.normalize_2d = false;
  EXPECT_EQ(trained.prepare(kp, cam), screen_normalize(kp, 1000, 500));

  Joints3 out(2, 3);
  out << 1, 1, 1, 3, 3, 3;
  EXPECT_THROW(trained.finish(out), Error);
  ZScoreStats s3;
  s3.mean = RowMatrix::Constant(2, 3, 10.0);
  s3.std = RowMatrix::Constant(2, 3, 2.0);
  trained.stats_3d = s3;
  const Joints3 mm = trained.finish(out);
  EXPECT_EQ(mm.row(0).norm(), 0.0);
  EXPECT_EQ(mm.row(1), Eigen::RowVector3d(4, 4, 4));
  EXPECT_EQ(plain.finish(out).row(1), Eigen::RowVector3d(2, 2, 2));
}

TEST(Session, ZerosModelGivesZeroPredictions) {
  ModelSession s = external_session(echo({"--mode", "zeros"}));
  EXPECT_EQ(s.handshake().protocol, 1);
  EXPECT_EQ(s.handshake().num_joints, 16);
  std::mt19937_64 rng(83);
  std::vector<std::vector<Joints2>> windows;
  for (int i = 0; i < 20; ++i) windows.push_back(single(keypoints(rng)));
  const auto out = s.infer_batch(windows);
  ASSERT_EQ(out.size(), 20u);
  for (const auto& p : out) EXPECT_EQ(p, Joints3::Zero(16, 3));
  const Fixture f = make_fixture(20);
  const auto r = evaluate_protocols(out, f.gt);
  EXPECT_TRUE(std::isfinite(r.mpjpe_mm));
  EXPECT_EQ(r.pa_excluded, 20u);
}

TEST(Session, HandshakeDeclarationsMustMatch) {
  EXPECT_EQ(prediction_error([] { external_session(echo({"--joints", "17"})); }).kind, PredictionError::Kind::handshake);
  auto video = echo({"--video", "--frames", "3"});
  EXPECT_EQ(prediction_error([&] { external_session(video); }).kind, PredictionError::Kind::handshake);
  video.video_mode = true;
  EXPECT_EQ(prediction_error([&] { external_session(video); }).kind, PredictionError::Kind::handshake);
  video.num_frames = 3;
  EXPECT_EQ(external_session(video).handshake().num_frames, 3);
  auto normalized = echo({"--normalized"});
  const auto e = prediction_error([&] { external_session(normalized); });
  EXPECT_EQ(e.kind, PredictionError::Kind::handshake);
  EXPECT_NE(std::string(e.what()).find("trained_on_normalized_data"), std::string::npos);
  normalized.trained_on_normalized_data = true;
  EXPECT_TRUE(*external_session(normalized).handshake().trained_on_normalized_data);
}

TEST(Session, PipelinedOutOfOrderRepliesMatchSerial) {
  std::mt19937_64 rng(84);
  std::vector<std::vector<Joints2>> windows;
  for (int i = 0; i < 1000; ++i) windows.push_back(single(keypoints(rng)));

  ModelSession serial = external_session(echo({"--mode", "lift"}));
  std::vector<Joints3> one_by_one;
  for (const auto& w : windows) one_by_one.push_back(serial.infer(w));

  ModelSession shuffled = external_session(echo({"--mode", "shuffle"}));
  const auto pipelined = shuffled.infer_batch(windows);
  ASSERT_EQ(pipelined.size(), one_by_one.size());
  for (std::size_t i = 0; i < windows.size(); ++i) EXPECT_EQ(pipelined[i], one_by_one[i]) << i;

  std::vector<Joints3> gt;
  for (const auto& w : windows) {
    Joints3 g = Joints3::Zero(16, 3);
    g.leftCols(2) = w[0].rowwise() - w[0].row(0);
    g.col(2).setConstant(1.0);
    g.row(0).setZero();
    gt.push_back(g);
  }
  EXPECT_EQ(evaluate_protocols(pipelined, gt).mpjpe_mm, evaluate_protocols(one_by_one, gt).mpjpe_mm);
}

TEST(Session, CoordinatesRoundTripBitExactly) {
  std::mt19937_64 rng(85);
  ModelSession s = external_session(echo({"--mode", "lift"}));
  for (int trial = 0; trial < 50; ++trial) {
    Joints2 kp = keypoints(rng) * 1000.0;
    kp.row(0).setZero();
    const Joints3 out = s.infer(single(kp));
    EXPECT_EQ(Joints2(out.leftCols(2)), kp);
  }
}

TEST(Session, VideoWindowsUseCenterFrame) {
  auto cfg = echo({"--mode", "lift", "--video", "--frames", "3"});
  cfg.video_mode = true;
  cfg.num_frames = 3;
  ModelSession s = external_session(cfg);
  std::mt19937_64 rng(86);
  std::vector<Joints2> window{keypoints(rng), keypoints(rng), keypoints(rng)};
  const Joints3 out = s.infer(window);
  EXPECT_EQ(Joints2(out.leftCols(2)), Joints2(window[1].rowwise() - window[1].row(0)));
  EXPECT_THROW(s.infer({window[0]}), Error);
}

TEST(Session, FailuresAreDistinctAndCarryRequestIds) {
  std::mt19937_64 rng(87);
  std::vector<std::vector<Joints2>> windows;
  for (int i = 0; i < 5; ++i) windows.push_back(single(keypoints(rng)));

  {
    ModelSession s = external_session(echo({"--mode", "malformed"}));
    const auto e = prediction_error([&] {
      for (const auto& w : windows) s.infer(w);
    });
    EXPECT_EQ(e.kind, PredictionError::Kind::malformed);
    EXPECT_EQ(e.request_id, 1);
  }
  {
    ModelSession s = external_session(echo({"--mode", "wrong-id"}));
    const auto e = prediction_error([&] {
      for (const auto& w : windows) s.infer(w);
    });
    EXPECT_EQ(e.kind, PredictionError::Kind::malformed);
    EXPECT_EQ(e.request_id, 999999);
  }
  {
    ModelSession s = external_session(echo({"--mode", "exit"}));
    const auto e = prediction_error([&] {
      for (const auto& w : windows) s.infer(w);
    });
    EXPECT_EQ(e.kind, PredictionError::Kind::child_exit);
    EXPECT_EQ(e.request_id, 2);
  }
  {
    auto cfg = echo({"--mode", "silent"});
    cfg.timeout = std::chrono::milliseconds(300);
    ModelSession s = external_session(cfg);
    const auto e = prediction_error([&] { s.infer(windows[0]); });
    EXPECT_EQ(e.kind, PredictionError::Kind::timeout);
    EXPECT_EQ(e.request_id, 0);
  }
  {
    auto cfg = echo({"--mode", "no-handshake"});
    cfg.timeout = std::chrono::milliseconds(300);
    EXPECT_EQ(prediction_error([&] { external_session(cfg); }).kind, PredictionError::Kind::timeout);
  }
  SessionConfig missing;
  missing.command = {"/nonexistent/model-binary"};
  EXPECT_EQ(prediction_error([&] { external_session(missing); }).kind, PredictionError::Kind::child_exit);
  EXPECT_EQ(prediction_error([] { external_session(SessionConfig{}); }).kind, PredictionError::Kind::spawn);
}
