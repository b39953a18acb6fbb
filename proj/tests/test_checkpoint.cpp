#include "pdssl/checkpoint.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace pdssl;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.feature_dim = 16;
  d.encoder_hidden1 = 8;
  d.encoder_hidden2 = 8;
  d.decoder_hidden1 = 16;
  d.decoder_hidden2 = 8;
  d.regressor_hidden1 = 8;
  d.regressor_hidden2 = 4;
  d.completion_patches = 2;
  d.complete_points = 32;
  d.scan_points = 32;
  return d;
}

std::string expect_load_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const Error& e) {
    return e.what();
  }
  ADD_FAILURE() << "load succeeded";
  return {};
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesEncodings) {
  const auto dir = test::temp_dir("ckpt");
  ModelParams p = init_params(3, tiny_dims());
  p.content_encoder.visit_buffers("", [](const std::string&, nn::Matrix& m) { m.setConstant(0.25); });
  save_checkpoint(p, {"pr-only", 7}, dir / "a.bin");
  const LoadedCheckpoint l = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(l.meta.variant, "pr-only");
  EXPECT_EQ(l.meta.epoch, 7u);
  EXPECT_EQ(l.params.dims, p.dims);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const PointCloud c = test::random_ball(32, s);
    EXPECT_EQ(encode(c, l.params.content_encoder, FeatureRole::content).values,
              encode(c, p.content_encoder, FeatureRole::content).values);
    EXPECT_EQ(encode(c, l.params.pose_encoder, FeatureRole::pose).values,
              encode(c, p.pose_encoder, FeatureRole::pose).values);
  }
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(16, -1, 1);
  EXPECT_EQ(decode_morphing(f, l.params.completion_decoder), decode_morphing(f, p.completion_decoder));
}

TEST(Checkpoint, DimsJsonRoundTrip) {
  ModelDims d = tiny_dims();
  d.backbone = Backbone::edgeconv;
  EXPECT_EQ(dims_from_json(dims_to_json(d)), d);
}

TEST(Checkpoint, TruncatedFile) {
  const auto dir = test::temp_dir("ckpt_trunc");
  save_checkpoint(init_params(0, tiny_dims()), {}, dir / "a.bin");
  const auto size = std::filesystem::file_size(dir / "a.bin");
  std::filesystem::resize_file(dir / "a.bin", size - 100);
  EXPECT_NE(expect_load_error(dir / "a.bin").find("truncated"), std::string::npos);
  std::filesystem::resize_file(dir / "a.bin", 6);
  EXPECT_NE(expect_load_error(dir / "a.bin").find("version"), std::string::npos);
}

TEST(Checkpoint, CorruptionNamesField) {
  const auto dir = test::temp_dir("ckpt_corrupt");
  save_checkpoint(init_params(0, tiny_dims()), {}, dir / "a.bin");
  const auto size = std::filesystem::file_size(dir / "a.bin");
  {
    std::fstream f(dir / "a.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size) - 20);
    f.put('\x7f');
  }
  EXPECT_NE(expect_load_error(dir / "a.bin").find("checksum"), std::string::npos);
  {
    std::fstream f(dir / "a.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_NE(expect_load_error(dir / "a.bin").find("version"), std::string::npos);
  {
    std::ofstream f(dir / "b.bin", std::ios::binary);
    f << "NOPE";
  }
  EXPECT_NE(expect_load_error(dir / "b.bin").find("magic"), std::string::npos);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), Error);
}

TEST(Checkpoint, CorruptHeader) {
  const auto dir = test::temp_dir("ckpt_header");
  save_checkpoint(init_params(0, tiny_dims()), {}, dir / "a.bin");
  {
    std::fstream f(dir / "a.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16);
    f.put('#');
  }
  EXPECT_NE(expect_load_error(dir / "a.bin").find("header"), std::string::npos);
}
