#include "embedkit/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace embedkit {

Vec64 slerp(std::span<const double> a, std::span<const double> b, double t) {
  if (a.size() != b.size()) {
    raise(ErrorKind::dimension, "slerp: length mismatch");
  }
  if (t < 0.0 || t > 1.0) {
    raise(ErrorKind::invalid_input, "slerp: t must be in [0, 1]");
  }
  double na = l2_norm(a);
  double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    raise(ErrorKind::degenerate_input, "slerp: zero vector");
  }
  Vec64 out(a.size());
  if (t == 0.0) {
    std::copy(a.begin(), a.end(), out.begin());
    return out;
  }
  if (t == 1.0) {
    std::copy(b.begin(), b.end(), out.begin());
    return out;
  }
  double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  double theta = std::acos(c);
  constexpr double kParallelTol = 1e-7;
  if (theta < kParallelTol || theta > M_PI - kParallelTol) {
    // sin(theta) -> 0; std::lerp keeps a==b inputs exact.
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::lerp(a[i], b[i], t);
    return out;
  }
  double s = std::sin(theta);
  double ca = std::sin((1.0 - t) * theta) / s;
  double cb = std::sin(t * theta) / s;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ca * a[i] + cb * b[i];
  return out;
}

std::vector<double> default_t_schedule(std::size_t n_inputs) {
  std::vector<double> ts;
  for (std::size_t k = 2; k <= n_inputs; ++k) {
    ts.push_back(1.0 / static_cast<double>(k));
  }
  return ts;
}

std::vector<std::size_t> tensor_segments(const Checkpoint& ck) {
  std::vector<std::size_t> bounds{0};
  std::size_t fd = ck.feature_dim;
  std::size_t d = ck.embed_dim;
  bounds.push_back(fd * d);
  if (ck.arch == ArchTag::mlp1) {
    bounds.push_back(bounds.back() + d * d);
    bounds.push_back(bounds.back() + d);
  }
  if (ck.kind == ModelKind::reranker) {
    bounds.push_back(bounds.back() + 2 * static_cast<std::size_t>(ck.joint_dim));
  }
  return bounds;
}

namespace {

Vec64 slerp_checkpoint_pair(const Checkpoint& base, const Vec64& a,
                            const Vec64& b, double t, bool per_tensor) {
  if (!per_tensor) {
    return slerp(a, b, t);
  }
  Vec64 out(a.size());
  auto bounds = tensor_segments(base);
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    std::size_t lo = bounds[s];
    std::size_t len = bounds[s + 1] - lo;
    Vec64 seg = slerp(std::span<const double>(a.data() + lo, len),
                      std::span<const double>(b.data() + lo, len), t);
    std::copy(seg.begin(), seg.end(), out.begin() + lo);
  }
  return out;
}

}  // namespace

Checkpoint merge_checkpoints(const MergePlan& plan) {
  if (plan.inputs.size() < 2) {
    raise(ErrorKind::invalid_input, "merge: need at least 2 checkpoints");
  }
  if (plan.t_schedule.size() != plan.inputs.size() - 1) {
    raise(ErrorKind::invalid_input,
          "merge: t_schedule length must be inputs-1");
  }
  const Checkpoint& first = plan.inputs.front();
  for (const Checkpoint& ck : plan.inputs) {
    if (!ck.same_arch(first)) {
      raise(ErrorKind::incompatible_checkpoint,
            "merge: checkpoints disagree on model kind or arch");
    }
    if (ck.params_flat.size() != first.params_flat.size()) {
      raise(ErrorKind::incompatible_checkpoint,
            "merge: parameter counts differ");
    }
  }
  Checkpoint out = first;
  for (std::size_t i = 1; i < plan.inputs.size(); ++i) {
    out.params_flat =
        slerp_checkpoint_pair(first, out.params_flat,
                              plan.inputs[i].params_flat,
                              plan.t_schedule[i - 1], plan.per_tensor);
    out.step = std::max(out.step, plan.inputs[i].step);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'Q', '3', 'E', 'K'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::size_t checkpoint_header_size() {
  // magic + version + kind + 6 arch u32s + step + param count
  return 4 + 4 + 1 + 6 * 4 + 8 + 8;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(checkpoint_header_size() + 4 * ck.params_flat.size());
  buf.append(kMagic, 4);
  put_u32(buf, ck.format_version);
  buf.push_back(static_cast<char>(ck.kind));
  put_u32(buf, ck.feature_dim);
  put_u32(buf, ck.embed_dim);
  put_u32(buf, static_cast<std::uint32_t>(ck.arch));
  put_u32(buf, ck.ngram_lo);
  put_u32(buf, ck.ngram_hi);
  put_u32(buf, ck.joint_dim);
  put_u64(buf, ck.step);
  put_u64(buf, ck.params_flat.size());
  for (double x : ck.params_flat) {
    float f = static_cast<float>(x);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }

  // Write-temp-then-rename keeps partially written files from ever being
  // visible under the final name.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      raise(ErrorKind::io, "save_checkpoint: cannot open " + tmp.string());
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
      raise(ErrorKind::io, "save_checkpoint: write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    raise(ErrorKind::io, "save_checkpoint: rename failed: " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "load_checkpoint: cannot open " + path.string());
  }
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  const std::size_t header = checkpoint_header_size();
  if (buf.size() < header) {
    raise(ErrorKind::format_truncated,
          "load_checkpoint: file shorter than header: " + path.string());
  }
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (std::memcmp(p, kMagic, 4) != 0) {
    raise(ErrorKind::format_bad_magic,
          "load_checkpoint: bad magic bytes: " + path.string());
  }
  Checkpoint ck;
  ck.format_version = get_u32(p + 4);
  if (ck.format_version != kCheckpointFormatVersion) {
    raise(ErrorKind::format_version,
          "load_checkpoint: unsupported format version " +
              std::to_string(ck.format_version));
  }
  std::uint8_t kind = p[8];
  if (kind > 1) {
    raise(ErrorKind::format_bad_magic,
          "load_checkpoint: unknown model kind byte");
  }
  ck.kind = static_cast<ModelKind>(kind);
  ck.feature_dim = get_u32(p + 9);
  ck.embed_dim = get_u32(p + 13);
  std::uint32_t arch = get_u32(p + 17);
  if (arch > 1) {
    raise(ErrorKind::format_bad_magic, "load_checkpoint: unknown arch tag");
  }
  ck.arch = static_cast<ArchTag>(arch);
  ck.ngram_lo = get_u32(p + 21);
  ck.ngram_hi = get_u32(p + 25);
  ck.joint_dim = get_u32(p + 29);
  ck.step = get_u64(p + 33);
  std::uint64_t count = get_u64(p + 41);
  if (buf.size() != header + 4 * count) {
    raise(ErrorKind::format_truncated,
          "load_checkpoint: size mismatch (have " +
              std::to_string(buf.size()) + " bytes, expected " +
              std::to_string(header + 4 * count) + ")");
  }
  ck.params_flat.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t bits = get_u32(p + header + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    ck.params_flat[i] = static_cast<double>(f);
  }
  return ck;
}

Checkpoint to_checkpoint(const EncoderParams& params, std::uint64_t step) {
  Checkpoint ck;
  ck.kind = ModelKind::embedding;
  ck.feature_dim = params.feature_dim;
  ck.embed_dim = params.embed_dim;
  ck.arch = params.arch;
  ck.ngram_lo = params.ngram_lo;
  ck.ngram_hi = params.ngram_hi;
  ck.joint_dim = 0;
  ck.step = step;
  ck.params_flat = flatten_params(params);
  return ck;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != ModelKind::embedding) {
    raise(ErrorKind::incompatible_checkpoint,
          "encoder_from_checkpoint: checkpoint is not an embedding model");
  }
  EncoderParams p;
  p.feature_dim = ck.feature_dim;
  p.embed_dim = ck.embed_dim;
  p.arch = ck.arch;
  p.ngram_lo = ck.ngram_lo;
  p.ngram_hi = ck.ngram_hi;
  p.projection = Mat64(p.feature_dim, p.embed_dim);
  if (p.arch == ArchTag::mlp1) {
    p.hidden_w = Mat64(p.embed_dim, p.embed_dim);
    p.hidden_b.assign(p.embed_dim, 0.0);
  }
  unflatten_params(p, ck.params_flat);
  return p;
}

}  // namespace embedkit
