#pragma once

// Parameter storage, gradient records, finite-difference verification,
// optimizers and the checkpoint container.
//
// Every trainable quantity lives in a ParameterStore: an ordered table of
// named segments over one flat buffer. Gradients use the same layout, so a
// gradient can be mapped onto a store segment-by-segment without lookups.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "gen3d/errors.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

template <class Real>
class ParameterStore {
 public:
  using value_type = Real;

  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Segment&) const = default;
  };

  ParameterStore() = default;

  /// Appends a segment filled with `fill`. Names must be unique and non-empty.
  std::span<Real> add_segment(std::string name, std::size_t length, Real fill = Real(0)) {
    require(!name.empty(), "parameter segment name must be non-empty");
    require(find(name) == nullptr, "duplicate parameter segment '" + name + "'");
    const std::size_t offset = values_.size();
    segments_.push_back({std::move(name), offset, length});
    values_.resize(offset + length, fill);
    return {values_.data() + offset, length};
  }

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t total_len() const noexcept { return values_.size(); }

  std::span<Real> values() noexcept { return values_; }
  std::span<const Real> values() const noexcept { return values_; }

  const Segment* find(std::string_view name) const noexcept {
    for (const auto& s : segments_)
      if (s.name == name) return &s;
    return nullptr;
  }

  std::span<Real> segment(std::string_view name) {
    const auto& s = at(name);
    return {values_.data() + s.offset, s.length};
  }
  std::span<const Real> segment(std::string_view name) const {
    const auto& s = at(name);
    return {values_.data() + s.offset, s.length};
  }

  template <class Other>
  bool same_layout(const ParameterStore<Other>& other) const {
    if (segments_.size() != other.segments().size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments()[i];
      if (a.name != b.name || a.offset != b.offset || a.length != b.length) return false;
    }
    return true;
  }

  /// Same layout, all values zero.
  ParameterStore zeros_like() const {
    ParameterStore out = *this;
    std::fill(out.values_.begin(), out.values_.end(), Real(0));
    return out;
  }

  template <class Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& s : segments_) {
      auto dst = out.add_segment(s.name, s.length);
      for (std::size_t i = 0; i < s.length; ++i) dst[i] = static_cast<Other>(values_[s.offset + i]);
    }
    return out;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
  }

  /// Name of the segment holding flat index `i`.
  const std::string& segment_of(std::size_t i) const {
    for (const auto& s : segments_)
      if (i >= s.offset && i < s.offset + s.length) return s.name;
    throw ContractError("flat parameter index out of range");
  }

  bool operator==(const ParameterStore&) const = default;

 private:
  const Segment& at(std::string_view name) const {
    const Segment* s = find(name);
    if (s == nullptr) throw ContractError("no parameter segment named '" + std::string(name) + "'");
    return *s;
  }

  std::vector<Segment> segments_;
  // Aligned so vectorized kernels over segments take the same path in every run.
  std::vector<Real, Eigen::aligned_allocator<Real>> values_;
};

/// Gradient of a scalar loss, laid out exactly like the store it differentiates.
template <class Real>
struct GradientRecord {
  ParameterStore<Real> grads;
  double loss_value = 0.0;

  GradientRecord() = default;
  explicit GradientRecord(const ParameterStore<Real>& like) : grads(like.zeros_like()) {}

  /// Throws EvaluationError if the loss or any gradient entry is NaN/Inf.
  void check_finite(std::string_view what) const {
    if (!std::isfinite(loss_value))
      throw EvaluationError(std::string(what) + ": non-finite loss value");
    const auto v = grads.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i]))
        throw EvaluationError(std::string(what) + ": non-finite gradient in segment '" +
                              grads.segment_of(i) + "'");
  }

  GradientRecord& operator+=(const GradientRecord& o) {
    require(grads.same_layout(o.grads), "gradient layout mismatch");
    auto a = grads.values();
    auto b = o.grads.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    loss_value += o.loss_value;
    return *this;
  }

  GradientRecord& scale(double s) {
    for (auto& v : grads.values()) v = static_cast<Real>(v * s);
    loss_value *= s;
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Finite-difference verification

/// A loss over a double-precision store. `value` must be deterministic;
/// `gradient` returns the analytic gradient at the same point.
struct DiffObjective {
  std::function<double(const ParameterStore<double>&)> value;
  std::function<GradientRecord<double>(const ParameterStore<double>&)> gradient;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

/// Compares the analytic gradient against central differences on `samples`
/// distinct random coordinates (all coordinates if the store is smaller).
/// Error per coordinate is |analytic - fd| / max(1, |fd|).
inline FdReport finite_difference_check(const DiffObjective& objective,
                                        const ParameterStore<double>& params, double step,
                                        std::size_t samples, std::uint64_t rng_seed) {
  require(step > 0.0, "finite-difference step must be positive");
  const auto analytic = objective.gradient(params);
  require(analytic.grads.same_layout(params), "gradient layout does not match parameters");

  const std::size_t n = params.total_len();
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (samples < n) {
    Rng rng(rng_seed);
    for (std::size_t i = 0; i < samples; ++i) std::swap(coords[i], coords[i + rng.index(n - i)]);
    coords.resize(samples);
  }

  FdReport report;
  ParameterStore<double> probe = params;
  for (std::size_t idx : coords) {
    const double base = params.values()[idx];
    probe.values()[idx] = base + step;
    const double up = objective.value(probe);
    probe.values()[idx] = base - step;
    const double down = objective.value(probe);
    probe.values()[idx] = base;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw EvaluationError("non-finite loss while probing coordinate " + std::to_string(idx) +
                            " of segment '" + params.segment_of(idx) + "'");
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(analytic.grads.values()[idx] - fd) / std::max(1.0, std::abs(fd));
    if (err > report.max_rel_error || report.probes == 0) {
      report.max_rel_error = err;
      report.worst_index = idx;
    }
    ++report.probes;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Optimizer

enum class Direction { descent, ascent };

/// p <- p - lr*g (descent) or p + lr*g (ascent).
template <class Real, class G>
ParameterStore<Real> sgd_update(const ParameterStore<Real>& params, const GradientRecord<G>& grads,
                                double lr, Direction dir = Direction::descent) {
  require(params.same_layout(grads.grads), "sgd_update: gradient shape does not match parameters");
  require(std::isfinite(lr), "sgd_update: learning rate must be finite");
  ParameterStore<Real> out = params;
  const double sign = dir == Direction::descent ? -1.0 : 1.0;
  auto p = out.values();
  auto g = grads.grads.values();
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = static_cast<Real>(p[i] + sign * lr * static_cast<double>(g[i]));
  return out;
}

/// SGD with heavy-ball momentum. With momentum 0 this is exactly sgd_update.
template <class Real>
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, Direction dir)
      : lr_(lr), momentum_(momentum), dir_(dir) {
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  }

  ParameterStore<Real> step(const ParameterStore<Real>& params, const GradientRecord<Real>& grads) {
    if (momentum_ == 0.0) return sgd_update(params, grads, lr_, dir_);
    if (velocity_.total_len() == 0) velocity_ = params.zeros_like();
    require(velocity_.same_layout(grads.grads), "optimizer state does not match gradient layout");
    auto v = velocity_.values();
    auto g = grads.grads.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(momentum_ * v[i] + g[i]);
    GradientRecord<Real> smoothed;
    smoothed.grads = velocity_;
    return sgd_update(params, smoothed, lr_, dir_);
  }

  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  double momentum_;
  Direction dir_;
  ParameterStore<Real> velocity_;
};

/// Adam with bias correction. State is kept in double.
template <class Real>
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps, Direction dir)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), dir_(dir) {
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "adam: betas must lie in [0, 1)");
    require(eps > 0.0, "adam: eps must be positive");
  }

  ParameterStore<Real> step(const ParameterStore<Real>& params, const GradientRecord<Real>& grads) {
    require(params.same_layout(grads.grads), "adam: gradient shape does not match parameters");
    require(std::isfinite(lr_), "adam: learning rate must be finite");
    if (m_.empty()) {
      m_.assign(params.total_len(), 0.0);
      v_.assign(params.total_len(), 0.0);
    }
    require(m_.size() == params.total_len(), "adam: optimizer state does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double sign = dir_ == Direction::descent ? -1.0 : 1.0;
    ParameterStore<Real> out = params;
    auto p = out.values();
    const auto g = grads.grads.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gi;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gi * gi;
      const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      p[i] = static_cast<Real>(p[i] + sign * lr_ * update);
    }
    return out;
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  Direction dir_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

/// SGD (with optional momentum) or Adam, selected by config.
template <class Real>
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, double lr, Direction dir) {
    if (cfg.kind == OptimizerKind::sgd)
      sgd_.emplace(lr, cfg.momentum, dir);
    else
      adam_.emplace(lr, cfg.beta1, cfg.beta2, cfg.eps, dir);
  }

  ParameterStore<Real> step(const ParameterStore<Real>& params, const GradientRecord<Real>& grads) {
    return sgd_ ? sgd_->step(params, grads) : adam_->step(params, grads);
  }

 private:
  std::optional<SgdOptimizer<Real>> sgd_;
  std::optional<AdamOptimizer<Real>> adam_;
};

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   GEN3D-CHECKPOINT
//   version 1
//   segments <count>
//   <name> <offset> <length>     (one line per segment)
//   data <total_len>
//   <total_len little-endian IEEE-754 binary32 values>

inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << "GEN3D-CHECKPOINT\nversion " << kCheckpointVersion << "\nsegments "
      << store.segments().size() << "\n";
  for (const auto& s : store.segments()) out << s.name << ' ' << s.offset << ' ' << s.length << '\n';
  out << "data " << store.total_len() << '\n';
  std::vector<char> bytes(store.total_len() * 4);
  const auto v = store.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline ParameterStore<float> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  auto next_line = [&](const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw IoError(std::string("truncated checkpoint header at ") + what);
    return line;
  };
  if (next_line("magic") != "GEN3D-CHECKPOINT") throw IoError("not a checkpoint: " + path.string());
  int version = 0;
  std::size_t count = 0;
  {
    std::istringstream ls(next_line("version"));
    std::string tag;
    ls >> tag >> version;
    if (tag != "version" || version != kCheckpointVersion)
      throw IoError("unsupported checkpoint version in " + path.string());
  }
  {
    std::istringstream ls(next_line("segments"));
    std::string tag;
    ls >> tag >> count;
    if (tag != "segments") throw IoError("malformed segment count in " + path.string());
  }
  ParameterStore<float> store;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line("segment table"));
    std::string name;
    std::size_t offset = 0, length = 0;
    if (!(ls >> name >> offset >> length)) throw IoError("malformed segment row in " + path.string());
    if (offset != store.total_len()) throw IoError("non-contiguous segment table in " + path.string());
    store.add_segment(name, length);
  }
  std::size_t total = 0;
  {
    std::istringstream ls(next_line("data"));
    std::string tag;
    ls >> tag >> total;
    if (tag != "data" || total != store.total_len())
      throw IoError("data length does not match segment table in " + path.string());
  }
  std::vector<unsigned char> bytes(total * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated checkpoint data in " + path.string());
  auto v = store.values();
  for (std::size_t i = 0; i < total; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    v[i] = std::bit_cast<float>(bits);
  }
  return store;
}

}  // namespace gen3d
