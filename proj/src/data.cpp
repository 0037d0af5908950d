#include "cetal/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "cetal/errors.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cetal {

namespace {

constexpr char kFeatureMagic[9] = "CETF0001";

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void AnnotatedSequence::validate() const {
  auto fail = [this](const std::string& why) {
    throw DataError("sequence '" + id + "': " + why);
  };
  if (channels == 0 || length == 0) fail("empty feature array");
  if (features.size() != channels * length) {
    fail("feature size " + std::to_string(features.size()) + " != channels*length");
  }
  if (rate_hz <= 0) fail("non-positive sampling rate");
  double dur = duration_s();
  for (const auto& s : segments) {
    if (!(s.end > s.start)) {
      fail("segment with end <= start (" + std::to_string(s.start) + ", " +
           std::to_string(s.end) + ")");
    }
    if (s.start < -1e-9 || s.end > dur + 1e-9) {
      fail("segment [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
           "] outside [0, " + std::to_string(dur) + "]");
    }
    if (s.label < 0) fail("negative label");
  }
}

// ---- feature files ------------------------------------------------------------

void save_features(const std::string& path, const AnnotatedSequence& seq) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write feature file '" + path + "'");
  os.write(kFeatureMagic, 8);
  json header = {{"channels", seq.channels},
                 {"length", seq.length},
                 {"rate", seq.rate_hz},
                 {"dtype", "f32"}};
  std::string hs = header.dump();
  write_u64(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  std::vector<float> f32(seq.features.begin(), seq.features.end());
  os.write(reinterpret_cast<const char*>(f32.data()),
           std::streamsize(f32.size() * sizeof(float)));
  if (!os) throw DataError("short write on feature file '" + path + "'");
}

void load_features(const std::string& path, AnnotatedSequence& seq) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing feature file '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0) {
    throw DataError("bad magic in feature file '" + path + "'");
  }
  std::uint64_t hlen = read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw DataError("bad header in feature file '" + path + "': " + e.what());
  }
  seq.channels = header.at("channels").get<std::size_t>();
  seq.length = header.at("length").get<std::size_t>();
  seq.rate_hz = header.at("rate").get<double>();
  if (header.at("dtype").get<std::string>() != "f32") {
    throw DataError("unsupported dtype in feature file '" + path + "'");
  }
  std::vector<float> f32(seq.channels * seq.length);
  is.read(reinterpret_cast<char*>(f32.data()),
          std::streamsize(f32.size() * sizeof(float)));
  if (!is) {
    throw DataError("truncated feature data in '" + path + "'");
  }
  seq.features.assign(f32.begin(), f32.end());
  if (seq.id.empty()) seq.id = path;
}

// ---- manifest ------------------------------------------------------------------

Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("missing manifest '" + manifest_path + "'");
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw DataError("bad manifest JSON '" + manifest_path + "': " + e.what());
  }
  Dataset ds;
  ds.num_classes = m.at("num_classes").get<std::size_t>();
  if (m.contains("labels")) ds.labels = m.at("labels").get<std::vector<std::string>>();
  fs::path base = fs::path(manifest_path).parent_path();
  for (const auto& js : m.at("sequences")) {
    AnnotatedSequence seq;
    std::string fpath = js.at("features").get<std::string>();
    fs::path full = fs::path(fpath).is_absolute() ? fs::path(fpath) : base / fpath;
    seq.id = fpath;
    seq.subject = js.value("subject", "");
    load_features(full.string(), seq);
    seq.rate_hz = js.value("rate_hz", seq.rate_hz);
    for (const auto& jseg : js.value("segments", json::array())) {
      Segment s;
      s.start = jseg.at("start_s").get<double>();
      s.end = jseg.at("end_s").get<double>();
      s.label = jseg.at("label").get<int>();
      s.score = 1.0;
      seq.segments.push_back(s);
    }
    seq.validate();
    for (const auto& s : seq.segments) {
      if (std::size_t(s.label) >= ds.num_classes) {
        throw DataError("sequence '" + seq.id + "': label " +
                        std::to_string(s.label) + " >= num_classes " +
                        std::to_string(ds.num_classes));
      }
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json m;
  m["num_classes"] = ds.num_classes;
  if (!ds.labels.empty()) m["labels"] = ds.labels;
  m["sequences"] = json::array();
  std::size_t idx = 0;
  for (const auto& seq : ds.sequences) {
    std::string fname = "seq_" + std::to_string(idx++) + ".cetf";
    save_features((fs::path(dir) / fname).string(), seq);
    json js;
    js["features"] = fname;
    js["rate_hz"] = seq.rate_hz;
    js["subject"] = seq.subject;
    js["segments"] = json::array();
    for (const auto& s : seq.segments) {
      js["segments"].push_back(
          {{"start_s", s.start}, {"end_s", s.end}, {"label", s.label}});
    }
    m["sequences"].push_back(js);
  }
  std::ofstream os((fs::path(dir) / "manifest.json").string());
  if (!os) throw DataError("cannot write manifest in '" + dir + "'");
  os << m.dump(2) << "\n";
}

// ---- windowing -----------------------------------------------------------------

std::vector<AnnotatedSequence> window(const AnnotatedSequence& seq,
                                      double clip_len_s, double overlap_frac) {
  if (clip_len_s <= 0) throw ConfigError("window: clip length must be > 0");
  if (overlap_frac < 0 || overlap_frac >= 1) {
    throw ConfigError("window: overlap must lie in [0,1)");
  }
  const std::size_t w = std::max<std::size_t>(
      1, std::size_t(std::llround(clip_len_s * seq.rate_hz)));
  const std::size_t stride = std::max<std::size_t>(
      1, std::size_t(std::llround((1.0 - overlap_frac) * double(w))));

  std::vector<std::size_t> starts;
  if (w >= seq.length) {
    starts.push_back(0);
  } else {
    for (std::size_t s = 0; s + w <= seq.length; s += stride) starts.push_back(s);
    if (starts.back() + w < seq.length) starts.push_back(seq.length - w);
  }

  std::vector<AnnotatedSequence> out;
  std::size_t wi = 0;
  for (std::size_t s0 : starts) {
    AnnotatedSequence win;
    win.id = seq.id + "#w" + std::to_string(wi++);
    win.subject = seq.subject;
    win.channels = seq.channels;
    win.length = w;
    win.rate_hz = seq.rate_hz;
    win.features.assign(seq.channels * w, 0.0);  // zero pad past the end
    std::size_t copy = std::min(w, seq.length - s0);
    for (std::size_t c = 0; c < seq.channels; ++c) {
      std::copy_n(seq.features.begin() + c * seq.length + s0, copy,
                  win.features.begin() + c * w);
    }
    double t0 = double(s0) / seq.rate_hz;
    double t1 = t0 + double(w) / seq.rate_hz;
    for (const auto& g : seq.segments) {
      double cs = std::max(g.start, t0);
      double ce = std::min(g.end, t1);
      if (ce - cs <= 1e-12) continue;  // clipped to zero length
      win.segments.push_back({cs - t0, ce - t0, g.label, 1.0});
    }
    out.push_back(std::move(win));
  }
  return out;
}

// ---- augmentation --------------------------------------------------------------

const std::array<std::array<int, 3>, 6> kAxisPermutations = {{
    {0, 1, 2},  // (x,y,z)
    {0, 2, 1},  // (x,z,y)
    {2, 1, 0},  // (z,y,x)
    {2, 0, 1},  // (z,x,y)
    {1, 0, 2},  // (y,x,z)
    {1, 2, 0},  // (y,z,x)
}};

std::vector<AnnotatedSequence> permute_axes(const AnnotatedSequence& seq) {
  if (seq.channels % 3 != 0) {
    throw ConfigError("permute_axes: channel count " +
                      std::to_string(seq.channels) + " is not a multiple of 3");
  }
  std::vector<AnnotatedSequence> out;
  const std::size_t triads = seq.channels / 3;
  int pi = 0;
  for (const auto& perm : kAxisPermutations) {
    AnnotatedSequence a = seq;
    a.id = seq.id + "#p" + std::to_string(pi++);
    for (std::size_t g = 0; g < triads; ++g) {
      for (int axis = 0; axis < 3; ++axis) {
        std::size_t dst = g * 3 + std::size_t(axis);
        std::size_t src = g * 3 + std::size_t(perm[axis]);
        std::copy_n(seq.features.begin() + src * seq.length, seq.length,
                    a.features.begin() + dst * seq.length);
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

AnnotatedSequence axis_normalize(const AnnotatedSequence& seq) {
  constexpr double kEps = 1e-8;
  AnnotatedSequence out = seq;
  for (std::size_t c = 0; c < seq.channels; ++c) {
    const double* row = seq.features.data() + c * seq.length;
    double m = 0.0;
    for (std::size_t t = 0; t < seq.length; ++t) m += row[t];
    m /= double(seq.length);
    double v = 0.0;
    for (std::size_t t = 0; t < seq.length; ++t) {
      double d = row[t] - m;
      v += d * d;
    }
    double sd = std::sqrt(v / double(seq.length));  // population std
    for (std::size_t t = 0; t < seq.length; ++t) {
      out.features[c * seq.length + t] = (row[t] - m) / (sd + kEps);
    }
  }
  return out;
}

TransformKind parse_transform(const std::string& name) {
  if (name == "downscale") return TransformKind::downscale;
  if (name == "magnify") return TransformKind::magnify;
  if (name == "invert") return TransformKind::invert;
  if (name == "noise") return TransformKind::noise;
  throw ConfigError("unknown transform '" + name + "'");
}

AnnotatedSequence transform(const AnnotatedSequence& seq, TransformKind op,
                            double param, std::uint64_t noise_seed) {
  AnnotatedSequence out = seq;
  switch (op) {
    case TransformKind::downscale:
      if (param <= 0 || param >= 1) {
        throw ConfigError("downscale factor must lie in (0,1)");
      }
      for (auto& v : out.features) v *= param;
      break;
    case TransformKind::magnify:
      if (param <= 1) throw ConfigError("magnify factor must be > 1");
      for (auto& v : out.features) v *= param;
      break;
    case TransformKind::invert:
      for (auto& v : out.features) v = -v;
      break;
    case TransformKind::noise: {
      if (param < 0) throw ConfigError("noise std must be >= 0");
      if (param > 0) {
        std::mt19937 rng{std::mt19937::result_type(noise_seed)};
        std::normal_distribution<double> d(0.0, param);
        for (auto& v : out.features) v += d(rng);
      }
      break;
    }
  }
  return out;
}

// ---- synthetic dataset -----------------------------------------------------------

std::vector<std::size_t> synth_signature_channels(const SynthSpec& spec, int label) {
  std::size_t group = std::max<std::size_t>(1, spec.channels / spec.num_classes);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < group; ++i) {
    out.push_back((std::size_t(label) * group + i) % spec.channels);
  }
  return out;
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.num_classes < 2) {
    throw ConfigError("synth: at least 2 classes are required");
  }
  if (spec.channels < 1 || spec.seq_len < 8) {
    throw ConfigError("synth: degenerate geometry");
  }
  std::mt19937 rng{std::mt19937::result_type(spec.seed)};
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    ds.labels.push_back("class_" + std::to_string(c));
  }

  for (std::size_t n = 0; n < spec.num_sequences; ++n) {
    AnnotatedSequence seq;
    seq.id = "synth_" + std::to_string(n);
    seq.subject = "sbj_" + std::to_string(n % 4);
    seq.channels = spec.channels;
    seq.length = spec.seq_len;
    seq.rate_hz = spec.rate_hz;
    seq.features.resize(spec.channels * spec.seq_len);
    for (auto& v : seq.features) v = noise(rng);

    // 1-2 non-overlapping activity bursts
    std::size_t count = 1 + (rng() % 2);
    std::size_t cursor = 2 + rng() % 4;
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t min_len = spec.seq_len / 5;
      std::size_t max_len = spec.seq_len / 3;
      std::size_t len = min_len + rng() % (max_len - min_len + 1);
      if (cursor + len + 2 > spec.seq_len) break;
      std::size_t start = cursor;
      int label = int(rng() % spec.num_classes);
      double freq = 2.0 + double(label);  // class-distinct oscillation, Hz
      double phase = unit(rng) * 2.0 * M_PI;
      for (std::size_t ch : synth_signature_channels(spec, label)) {
        for (std::size_t t = start; t < start + len; ++t) {
          double time_s = double(t) / spec.rate_hz;
          seq.features[ch * spec.seq_len + t] +=
              spec.signal_amplitude * std::sin(2.0 * M_PI * freq * time_s + phase);
        }
      }
      seq.segments.push_back({double(start) / spec.rate_hz,
                              double(start + len) / spec.rate_hz, label, 1.0});
      cursor = start + len + 3 + rng() % 5;
    }
    if (seq.segments.empty()) {
      // guarantee at least one labelled burst
      std::size_t len = spec.seq_len / 4;
      std::size_t start = spec.seq_len / 4;
      int label = int(n % spec.num_classes);
      double freq = 2.0 + double(label);
      for (std::size_t ch : synth_signature_channels(spec, label)) {
        for (std::size_t t = start; t < start + len; ++t) {
          double time_s = double(t) / spec.rate_hz;
          seq.features[ch * spec.seq_len + t] +=
              spec.signal_amplitude * std::sin(2.0 * M_PI * freq * time_s);
        }
      }
      seq.segments.push_back({double(start) / spec.rate_hz,
                              double(start + len) / spec.rate_hz, label, 1.0});
    }
    seq.validate();
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace cetal
