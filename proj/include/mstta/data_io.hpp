#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mstta/core.hpp"
#include "mstta/errors.hpp"
#include "mstta/rng.hpp"

namespace mstta {

namespace detail {

inline void append_u32le(std::string& out, std::uint32_t u) {
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline void append_f32le(std::string& out, float v) {
  append_u32le(out, std::bit_cast<std::uint32_t>(v));
}

inline void append_i64le(std::string& out, std::int64_t v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  append_u32le(out, static_cast<std::uint32_t>(u & 0xffffffffu));
  append_u32le(out, static_cast<std::uint32_t>(u >> 32));
}

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float read_f32le(const unsigned char* p) {
  return std::bit_cast<float>(read_u32le(p));
}

inline std::int64_t read_i64le(const unsigned char* p) {
  const std::uint64_t u = static_cast<std::uint64_t>(read_u32le(p)) |
                          (static_cast<std::uint64_t>(read_u32le(p + 4)) << 32);
  return std::bit_cast<std::int64_t>(u);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

/// Shortest round-trip decimal form, for provenance strings and summaries.
inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

struct Manifest {
  int format_version = 1;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t c = 0;
  std::string dtype = "f32le";
  std::string features_file = "features.f32";
  std::string labels_file = "labels.i64";
  std::string text_file = "text.f32";
  std::vector<std::string> class_names;  // empty means absent
  std::string provenance;
};

/// Embeddings + labels + class text matrix. The 32-bit payloads are kept as
/// the authoritative serialized form; the unit-norm double-precision views
/// used by all math are derived from them, so write/read round-trips are
/// byte-exact by construction.
class EmbDataset {
 public:
  EmbDataset(std::size_t n, std::size_t d, std::size_t c, std::vector<float> features_f32,
             std::vector<std::int64_t> labels, std::vector<float> text_f32,
             std::vector<std::string> class_names = {}, std::string provenance = {})
      : n_(n),
        d_(d),
        c_(c),
        features_f32_(std::move(features_f32)),
        labels_(std::move(labels)),
        text_f32_(std::move(text_f32)),
        class_names_(std::move(class_names)),
        provenance_(std::move(provenance)) {
    if (n_ == 0) throw EmptyDatasetError("EmbDataset: no samples");
    if (d_ == 0) throw DimMismatchError("EmbDataset: dim must be positive");
    if (c_ < 2) throw OutOfRangeError("EmbDataset: at least 2 classes required");
    if (features_f32_.size() != n_ * d_) throw DimMismatchError("EmbDataset: feature payload size");
    if (labels_.size() != n_) throw DimMismatchError("EmbDataset: label count");
    if (text_f32_.size() != c_ * d_) throw DimMismatchError("EmbDataset: text payload size");
    if (!class_names_.empty() && class_names_.size() != c_) {
      throw DimMismatchError("EmbDataset: class_names count");
    }
    for (std::int64_t y : labels_) {
      if (y < 0 || static_cast<std::size_t>(y) >= c_) {
        throw LabelOutOfRangeError("EmbDataset: label " + std::to_string(y) + " outside [0, " +
                                   std::to_string(c_) + ")");
      }
    }
    features_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) features_.push_back(normalize_row(features_f32_, i));
    std::vector<Embedding> text_rows;
    text_rows.reserve(c_);
    for (std::size_t r = 0; r < c_; ++r) text_rows.push_back(normalize_row(text_f32_, r));
    text_.emplace(std::move(text_rows), class_names_);
  }

  std::size_t n() const { return n_; }
  std::size_t dim() const { return d_; }
  std::size_t num_classes() const { return c_; }
  const Embedding& feature(std::size_t i) const { return features_[i]; }
  std::int64_t label(std::size_t i) const { return labels_[i]; }
  const std::vector<std::int64_t>& labels() const { return labels_; }
  const TextClassMatrix& text_matrix() const { return *text_; }
  const std::vector<float>& features_f32() const { return features_f32_; }
  const std::vector<float>& text_f32() const { return text_f32_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::string& provenance() const { return provenance_; }

  /// True when any stored row deviated from unit norm by more than 1e-3
  /// before renormalization; surfaced in run reports.
  bool norm_warning() const { return norm_warning_; }

 private:
  Embedding normalize_row(const std::vector<float>& payload, std::size_t row) {
    std::vector<double> v(d_);
    for (std::size_t j = 0; j < d_; ++j) v[j] = static_cast<double>(payload[row * d_ + j]);
    detail::require_finite(v, "EmbDataset row");
    if (std::abs(detail::l2_norm(v) - 1.0) > 1e-3) norm_warning_ = true;
    return l2_normalize(std::move(v));
  }

  std::size_t n_, d_, c_;
  std::vector<float> features_f32_;
  std::vector<std::int64_t> labels_;
  std::vector<float> text_f32_;
  std::vector<std::string> class_names_;
  std::string provenance_;
  std::vector<Embedding> features_;
  std::optional<TextClassMatrix> text_;
  bool norm_warning_ = false;
};

namespace detail {

inline std::string features_bytes(const EmbDataset& ds) {
  std::string out;
  out.reserve(ds.features_f32().size() * 4);
  for (float v : ds.features_f32()) append_f32le(out, v);
  return out;
}

inline std::string labels_bytes(const EmbDataset& ds) {
  std::string out;
  out.reserve(ds.labels().size() * 8);
  for (std::int64_t v : ds.labels()) append_i64le(out, v);
  return out;
}

inline std::string text_bytes(const EmbDataset& ds) {
  std::string out;
  out.reserve(ds.text_f32().size() * 4);
  for (float v : ds.text_f32()) append_f32le(out, v);
  return out;
}

}  // namespace detail

/// FNV-1a over the serialized payloads (features, labels, text in that
/// order); stable across platforms because serialization is little-endian.
inline std::uint64_t dataset_checksum(const EmbDataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  h = detail::fnv1a(detail::features_bytes(ds), h);
  h = detail::fnv1a(detail::labels_bytes(ds), h);
  h = detail::fnv1a(detail::text_bytes(ds), h);
  return h;
}

inline void write_dataset(const EmbDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  Manifest m;
  m.n = ds.n();
  m.d = ds.dim();
  m.c = ds.num_classes();
  m.class_names = ds.class_names();
  m.provenance = ds.provenance();

  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["n"] = m.n;
  j["d"] = m.d;
  j["c"] = m.c;
  j["dtype"] = m.dtype;
  j["files"] = {{"features", m.features_file}, {"labels", m.labels_file}, {"text", m.text_file}};
  if (!m.class_names.empty()) j["class_names"] = m.class_names;
  j["provenance"] = m.provenance;

  detail::write_file(dir / m.features_file, detail::features_bytes(ds));
  detail::write_file(dir / m.labels_file, detail::labels_bytes(ds));
  detail::write_file(dir / m.text_file, detail::text_bytes(ds));
  detail::write_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const std::string raw = detail::read_file(dir / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestMismatchError("manifest.json: " + std::string(e.what()));
  }
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) {
      throw UnsupportedVersionError("manifest format_version " +
                                    std::to_string(m.format_version));
    }
    m.n = j.at("n").get<std::size_t>();
    m.d = j.at("d").get<std::size_t>();
    m.c = j.at("c").get<std::size_t>();
    m.dtype = j.at("dtype").get<std::string>();
    if (m.dtype != "f32le") throw UnsupportedVersionError("unsupported dtype " + m.dtype);
    const auto& files = j.at("files");
    m.features_file = files.at("features").get<std::string>();
    m.labels_file = files.at("labels").get<std::string>();
    m.text_file = files.at("text").get<std::string>();
    if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
    if (j.contains("provenance")) m.provenance = j["provenance"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestMismatchError("manifest.json: " + std::string(e.what()));
  }
  return m;
}

inline EmbDataset read_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  const std::string fb = detail::read_file(dir / m.features_file);
  const std::string lb = detail::read_file(dir / m.labels_file);
  const std::string tb = detail::read_file(dir / m.text_file);
  if (fb.size() != m.n * m.d * 4) {
    throw ManifestMismatchError(m.features_file + ": " + std::to_string(fb.size()) +
                                " bytes, manifest implies " + std::to_string(m.n * m.d * 4));
  }
  if (lb.size() != m.n * 8) {
    throw ManifestMismatchError(m.labels_file + ": " + std::to_string(lb.size()) +
                                " bytes, manifest implies " + std::to_string(m.n * 8));
  }
  if (tb.size() != m.c * m.d * 4) {
    throw ManifestMismatchError(m.text_file + ": " + std::to_string(tb.size()) +
                                " bytes, manifest implies " + std::to_string(m.c * m.d * 4));
  }
  std::vector<float> features(m.n * m.d);
  const auto* fp = reinterpret_cast<const unsigned char*>(fb.data());
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = detail::read_f32le(fp + i * 4);
  std::vector<std::int64_t> labels(m.n);
  const auto* lp = reinterpret_cast<const unsigned char*>(lb.data());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = detail::read_i64le(lp + i * 8);
  std::vector<float> text(m.c * m.d);
  const auto* tp = reinterpret_cast<const unsigned char*>(tb.data());
  for (std::size_t i = 0; i < text.size(); ++i) text[i] = detail::read_f32le(tp + i * 4);
  return EmbDataset(m.n, m.d, m.c, std::move(features), std::move(labels), std::move(text),
                    m.class_names, m.provenance);
}

/// Synthetic shift benchmark: orthonormal class directions, text anchors
/// rotated away from them by shift_angle (plus anchor noise at concentration
/// kappa_text), features scattered around the directions at kappa_test.
struct SynthSpec {
  std::size_t c = 10;
  std::size_t d = 64;
  std::size_t n_per_class = 200;
  double kappa_text = 20.0;
  double kappa_test = 20.0;
  double shift_angle = 0.3;
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (c < 2) throw InfeasibleSpecError("synth: at least 2 classes required");
    if (d < 2) throw InfeasibleSpecError("synth: dim must be at least 2");
    if (d < c) throw InfeasibleSpecError("synth: orthonormal class directions need d >= c");
    if (n_per_class == 0) throw InfeasibleSpecError("synth: n_per_class must be positive");
    if (!(kappa_text > 0.0)) throw InfeasibleSpecError("synth: kappa_text must be positive");
    if (!(kappa_test > 0.0)) throw InfeasibleSpecError("synth: kappa_test must be positive");
    if (!(shift_angle >= 0.0 && shift_angle < std::numbers::pi / 2)) {
      throw InfeasibleSpecError("synth: shift_angle must lie in [0, pi/2)");
    }
    if (!(label_noise >= 0.0 && label_noise < 1.0)) {
      throw InfeasibleSpecError("synth: label_noise must lie in [0, 1)");
    }
  }

  std::string describe() const {
    using detail::fmt_double;
    return "synth c=" + std::to_string(c) + " d=" + std::to_string(d) +
           " n_per_class=" + std::to_string(n_per_class) +
           " kappa_text=" + fmt_double(kappa_text) + " kappa_test=" + fmt_double(kappa_test) +
           " shift_angle=" + fmt_double(shift_angle) + " label_noise=" + fmt_double(label_noise) +
           " seed=" + std::to_string(seed);
  }
};

namespace detail {

// Draws a gaussian vector, removes its projections onto the given rows, and
// normalizes; redraws in the (astronomically unlikely) degenerate case.
inline std::vector<double> orthonormal_residual(Rng& rng, std::size_t d,
                                                const std::vector<std::vector<double>>& basis) {
  for (;;) {
    std::vector<double> v = rng.gaussian_vector(d);
    for (const auto& u : basis) {
      const double proj = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
    }
    const double nrm = l2_norm(v);
    if (nrm < 1e-6) continue;
    for (double& x : v) x /= nrm;
    return v;
  }
}

}  // namespace detail

inline EmbDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t C = spec.c;
  const std::size_t d = spec.d;

  std::vector<std::vector<double>> dirs;
  dirs.reserve(C);
  while (dirs.size() < C) dirs.push_back(detail::orthonormal_residual(rng, d, dirs));

  const double ca = std::cos(spec.shift_angle);
  const double sa = std::sin(spec.shift_angle);
  const double text_noise = 1.0 / std::sqrt(spec.kappa_text);
  std::vector<float> text_f32(C * d);
  for (std::size_t c = 0; c < C; ++c) {
    const std::vector<double> u = detail::orthonormal_residual(rng, d, {dirs[c]});
    std::vector<double> anchor(d);
    for (std::size_t i = 0; i < d; ++i) anchor[i] = ca * dirs[c][i] + sa * u[i];
    const std::vector<double> g = rng.gaussian_vector(d);
    for (std::size_t i = 0; i < d; ++i) anchor[i] += text_noise * g[i];
    const Embedding a = l2_normalize(std::move(anchor));
    for (std::size_t i = 0; i < d; ++i) text_f32[c * d + i] = static_cast<float>(a[i]);
  }

  const std::size_t n = C * spec.n_per_class;
  const double feat_noise = 1.0 / std::sqrt(spec.kappa_test);
  std::vector<std::vector<float>> rows;
  rows.reserve(n);
  std::vector<std::int64_t> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < spec.n_per_class; ++s) {
      std::vector<double> x = dirs[c];
      const std::vector<double> g = rng.gaussian_vector(d);
      for (std::size_t i = 0; i < d; ++i) x[i] += feat_noise * g[i];
      const Embedding e = l2_normalize(std::move(x));
      std::vector<float> row(d);
      for (std::size_t i = 0; i < d; ++i) row[i] = static_cast<float>(e[i]);
      rows.push_back(std::move(row));
      std::int64_t y = static_cast<std::int64_t>(c);
      if (spec.label_noise > 0.0 && rng.uniform01() < spec.label_noise) {
        y = static_cast<std::int64_t>((c + 1 + rng.integer_below(C - 1)) % C);
      }
      labels.push_back(y);
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<float> features(n * d);
  std::vector<std::int64_t> shuffled_labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(rows[order[i]].begin(), rows[order[i]].end(), features.begin() + i * d);
    shuffled_labels[i] = labels[order[i]];
  }

  std::vector<std::string> names;
  names.reserve(C);
  int width = 1;
  for (std::size_t v = C - 1; v >= 10; v /= 10) ++width;
  for (std::size_t c = 0; c < C; ++c) {
    std::string num = std::to_string(c);
    names.push_back("class_" + std::string(width - num.size(), '0') + num);
  }

  return EmbDataset(n, d, C, std::move(features), std::move(shuffled_labels), std::move(text_f32),
                    std::move(names), spec.describe());
}

}  // namespace mstta
