#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "embedkit/checkpoint.hpp"
#include "temp_dir.hpp"

using namespace embedkit;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

Vec64 random_unit(Rng& rng, std::size_t n) {
  Vec64 v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return l2_normalize(v);
}

// Round every parameter to its f32 representation, matching file storage.
void round_f32(Vec64& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint scalar_ckpt(double value, std::uint64_t step = 0) {
  Checkpoint ck;
  ck.kind = ModelKind::embedding;
  ck.feature_dim = 1;
  ck.embed_dim = 1;
  ck.arch = ArchTag::linear;
  ck.step = step;
  ck.params_flat = {value};
  return ck;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("slerp endpoints are exact copies") {
  Vec64 a{0.3, -1.7, 2.2};
  Vec64 b{0.9, 0.1, -0.4};
  CHECK(slerp(a, b, 0.0) == a);
  CHECK(slerp(a, b, 1.0) == b);
}

TEST_CASE("slerp midpoint of a 60-degree arc") {
  // a and b are unit vectors pi/3 apart; the midpoint sits at pi/6 from a.
  Vec64 a{1.0, 0.0};
  Vec64 b{0.5, std::sqrt(3.0) / 2.0};
  Vec64 mid = slerp(a, b, 0.5);
  CHECK(mid[0] == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
  CHECK(mid[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("slerp of orthonormal vectors at t=0.5 is the scaled sum") {
  Vec64 a{1.0, 0.0, 0.0};
  Vec64 b{0.0, 1.0, 0.0};
  Vec64 mid = slerp(a, b, 0.5);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(mid[0] == doctest::Approx(inv_sqrt2).epsilon(1e-12));
  CHECK(mid[1] == doctest::Approx(inv_sqrt2).epsilon(1e-12));
  CHECK(mid[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("slerp preserves unit norm across a t grid") {
  Rng rng(Seed{21});
  for (int pair = 0; pair < 100; ++pair) {
    Vec64 a = random_unit(rng, 12);
    Vec64 b = random_unit(rng, 12);
    for (int k = 0; k <= 10; ++k) {
      double t = k / 10.0;
      Vec64 v = slerp(a, b, t);
      CHECK(l2_norm(v) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("slerp is symmetric under swapping endpoints") {
  Rng rng(Seed{22});
  for (int pair = 0; pair < 50; ++pair) {
    Vec64 a = random_unit(rng, 9);
    Vec64 b = random_unit(rng, 9);
    double t = rng.uniform(0.05, 0.95);
    Vec64 fwd = slerp(a, b, t);
    Vec64 rev = slerp(b, a, 1.0 - t);
    for (std::size_t i = 0; i < fwd.size(); ++i) {
      CHECK(fwd[i] == doctest::Approx(rev[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("slerp falls back to lerp for (anti)parallel inputs") {
  Vec64 a{2.0, 0.0};
  Vec64 scaled{4.0, 0.0};
  Vec64 got = slerp(a, scaled, 0.5);
  CHECK(got[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(got[1] == 0.0);

  Vec64 anti{-2.0, 0.0};
  Vec64 quarter = slerp(a, anti, 0.25);
  CHECK(quarter[0] == doctest::Approx(1.0).epsilon(1e-15));

  // Identical inputs stay exactly identical at every t.
  Vec64 same = slerp(a, a, 0.7);
  CHECK(same == a);
}

TEST_CASE("slerp validates its domain") {
  Vec64 a{1.0, 0.0};
  CHECK(kind_of([&] { slerp(a, Vec64{1.0}, 0.5); }) == ErrorKind::dimension);
  CHECK(kind_of([&] { slerp(a, a, -0.1); }) == ErrorKind::invalid_input);
  CHECK(kind_of([&] { slerp(a, a, 1.1); }) == ErrorKind::invalid_input);
  CHECK(kind_of([&] { slerp(a, Vec64{0.0, 0.0}, 0.5); }) ==
        ErrorKind::degenerate_input);
}

TEST_CASE("default t schedule is the harmonic chain") {
  CHECK(default_t_schedule(2) == std::vector<double>{0.5});
  CHECK(default_t_schedule(3) == std::vector<double>{0.5, 1.0 / 3.0});
  CHECK(default_t_schedule(4) ==
        std::vector<double>{0.5, 1.0 / 3.0, 0.25});
}

TEST_CASE("chained scalar merge equals the arithmetic mean") {
  // 1-d parameters are always parallel, so every hop is a lerp and the
  // harmonic schedule reduces to a running average.
  MergePlan plan;
  plan.inputs = {scalar_ckpt(3.0, 10), scalar_ckpt(6.0, 20),
                 scalar_ckpt(9.0, 30)};
  plan.t_schedule = default_t_schedule(3);
  Checkpoint merged = merge_checkpoints(plan);
  CHECK(merged.params_flat[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(merged.step == 30);
}

TEST_CASE("merging a checkpoint with itself is the identity") {
  EncoderParams p = init_params(Seed{8}, 256, 8, ArchTag::mlp1);
  Checkpoint ck = to_checkpoint(p, 5);
  MergePlan plan;
  plan.inputs = {ck, ck, ck};
  plan.t_schedule = default_t_schedule(3);
  Checkpoint merged = merge_checkpoints(plan);
  CHECK(merged.params_flat == ck.params_flat);
}

TEST_CASE("per-tensor merge matches whole-vector on a single segment") {
  // A linear encoder flattens to one tensor, so the two modes must agree
  // bitwise.
  EncoderParams a = init_params(Seed{1}, 256, 8, ArchTag::linear);
  EncoderParams b = init_params(Seed{2}, 256, 8, ArchTag::linear);
  MergePlan plan;
  plan.inputs = {to_checkpoint(a, 1), to_checkpoint(b, 2)};
  plan.t_schedule = {0.37};
  Checkpoint whole = merge_checkpoints(plan);
  plan.per_tensor = true;
  Checkpoint per = merge_checkpoints(plan);
  CHECK(whole.params_flat == per.params_flat);
}

TEST_CASE("per-tensor merge treats each tensor independently") {
  EncoderParams a = init_params(Seed{3}, 256, 8, ArchTag::mlp1);
  EncoderParams b = init_params(Seed{4}, 256, 8, ArchTag::mlp1);
  Checkpoint ca = to_checkpoint(a, 1);
  Checkpoint cb = to_checkpoint(b, 2);

  MergePlan plan;
  plan.inputs = {ca, cb};
  plan.t_schedule = {0.5};
  plan.per_tensor = true;
  Checkpoint merged = merge_checkpoints(plan);

  // Oracle: slerp each segment on its own and splice.
  auto bounds = tensor_segments(ca);
  REQUIRE(bounds.size() == 4);  // projection, hidden_w, hidden_b
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    std::size_t lo = bounds[s];
    std::size_t len = bounds[s + 1] - lo;
    Vec64 seg = slerp(
        std::span<const double>(ca.params_flat.data() + lo, len),
        std::span<const double>(cb.params_flat.data() + lo, len), 0.5);
    for (std::size_t i = 0; i < len; ++i) {
      CHECK(merged.params_flat[lo + i] == seg[i]);
    }
  }
}

TEST_CASE("merge validates the plan") {
  Checkpoint one = scalar_ckpt(1.0);
  MergePlan short_plan;
  short_plan.inputs = {one};
  CHECK(kind_of([&] { merge_checkpoints(short_plan); }) ==
        ErrorKind::invalid_input);

  MergePlan bad_schedule;
  bad_schedule.inputs = {one, one};
  bad_schedule.t_schedule = {0.5, 0.5};
  CHECK(kind_of([&] { merge_checkpoints(bad_schedule); }) ==
        ErrorKind::invalid_input);

  Checkpoint other = scalar_ckpt(1.0);
  other.arch = ArchTag::mlp1;
  MergePlan mixed;
  mixed.inputs = {one, other};
  mixed.t_schedule = {0.5};
  CHECK(kind_of([&] { merge_checkpoints(mixed); }) ==
        ErrorKind::incompatible_checkpoint);
}

TEST_CASE("save and load round-trip f32-exact parameters") {
  testutil::TempDir dir("ckpt_rt");
  EncoderParams p = init_params(Seed{77}, 512, 16, ArchTag::mlp1);
  Checkpoint ck = to_checkpoint(p, 4242);
  round_f32(ck.params_flat);

  const auto path = dir.path / "model.ckpt";
  save_checkpoint(ck, path);
  CHECK(std::filesystem::file_size(path) ==
        checkpoint_header_size() + 4 * ck.params_flat.size());

  Checkpoint back = load_checkpoint(path);
  CHECK(back.kind == ck.kind);
  CHECK(back.feature_dim == 512);
  CHECK(back.embed_dim == 16);
  CHECK(back.arch == ArchTag::mlp1);
  CHECK(back.ngram_lo == 2);
  CHECK(back.ngram_hi == 4);
  CHECK(back.joint_dim == 0);
  CHECK(back.step == 4242);
  CHECK(back.format_version == kCheckpointFormatVersion);
  CHECK(back.params_flat == ck.params_flat);

  // The file stores f32, so the loaded encoder matches the rounded source.
  EncoderParams q = encoder_from_checkpoint(back);
  EncoderParams rounded = p;
  unflatten_params(rounded, ck.params_flat);
  CHECK(q.projection.values == rounded.projection.values);
  CHECK(q.hidden_w.values == rounded.hidden_w.values);
  CHECK(q.hidden_b == rounded.hidden_b);
}

TEST_CASE("corrupted files fail with the matching error kind") {
  testutil::TempDir dir("ckpt_bad");
  Checkpoint ck = to_checkpoint(init_params(Seed{1}, 256, 8, ArchTag::linear),
                                7);
  const auto good = dir.path / "good.ckpt";
  save_checkpoint(ck, good);
  std::string bytes = read_bytes(good);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    const auto p = dir.path / "magic.ckpt";
    write_bytes(p, bad);
    CHECK(kind_of([&] { load_checkpoint(p); }) == ErrorKind::format_bad_magic);
  }

  SUBCASE("unsupported version") {
    std::string bad = bytes;
    bad[4] = 99;  // little-endian low byte of the version field
    const auto p = dir.path / "version.ckpt";
    write_bytes(p, bad);
    CHECK(kind_of([&] { load_checkpoint(p); }) == ErrorKind::format_version);
  }

  SUBCASE("shorter than the header") {
    const auto p = dir.path / "stub.ckpt";
    write_bytes(p, bytes.substr(0, checkpoint_header_size() - 1));
    CHECK(kind_of([&] { load_checkpoint(p); }) == ErrorKind::format_truncated);
  }

  SUBCASE("truncated parameter payload") {
    const auto p = dir.path / "cut.ckpt";
    write_bytes(p, bytes.substr(0, bytes.size() - 3));
    CHECK(kind_of([&] { load_checkpoint(p); }) == ErrorKind::format_truncated);
  }

  SUBCASE("missing file") {
    CHECK(kind_of([&] { load_checkpoint(dir.path / "absent.ckpt"); }) ==
          ErrorKind::io);
  }
}

TEST_CASE("encoder_from_checkpoint rejects reranker checkpoints") {
  Checkpoint ck = scalar_ckpt(1.0);
  ck.kind = ModelKind::reranker;
  CHECK(kind_of([&] { encoder_from_checkpoint(ck); }) ==
        ErrorKind::incompatible_checkpoint);
}

}  // TEST_SUITE
