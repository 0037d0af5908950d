#pragma once

// Dataset ingestion, clip windowing, sensor-signal augmentation, and the
// synthetic channel-signature generator used for desk-scale experiments.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cetal/heads.hpp"

namespace cetal {

struct AnnotatedSequence {
  std::string id;
  std::string subject;
  std::size_t channels = 0;
  std::size_t length = 0;          // timesteps
  std::vector<double> features;    // row-major [channels][length]
  double rate_hz = 50.0;
  std::vector<Segment> segments;   // ground truth, seconds

  double duration_s() const { return double(length) / rate_hz; }
  void validate() const;  // throws DataError naming the sequence
};

struct Dataset {
  std::vector<AnnotatedSequence> sequences;
  std::size_t num_classes = 0;
  std::vector<std::string> labels;  // optional names, size num_classes when set
};

// ---- binary feature files (magic "CETF0001") -------------------------------

void save_features(const std::string& path, const AnnotatedSequence& seq);
// fills channels/length/features/rate_hz; id defaults to the path
void load_features(const std::string& path, AnnotatedSequence& seq);

// ---- manifest JSON ----------------------------------------------------------

Dataset load_dataset(const std::string& manifest_path);
// writes manifest.json plus one feature file per sequence into dir
void save_dataset(const std::string& dir, const Dataset& ds);

// ---- windowing ---------------------------------------------------------------

// Sliding windows of round(clip_len_s * rate) samples at stride
// (1-overlap_frac) * window. Ground truth is clipped to each window and
// re-based; zero-length clips are dropped. A window longer than the
// sequence yields one zero-padded window. A final tail window is added
// when the stride pattern would leave a gap at the end.
std::vector<AnnotatedSequence> window(const AnnotatedSequence& seq,
                                      double clip_len_s, double overlap_frac);

// ---- augmentation (labels and boundaries are never altered) -----------------

// The six orthogonal triad rotations applied to every (x,y,z) channel group.
extern const std::array<std::array<int, 3>, 6> kAxisPermutations;

std::vector<AnnotatedSequence> permute_axes(const AnnotatedSequence& seq);

// per-channel z-score over time (population std, eps=1e-8)
AnnotatedSequence axis_normalize(const AnnotatedSequence& seq);

enum class TransformKind { downscale, magnify, invert, noise };

TransformKind parse_transform(const std::string& name);

AnnotatedSequence transform(const AnnotatedSequence& seq, TransformKind op,
                            double param, std::uint64_t noise_seed = 0);

// ---- synthetic dataset --------------------------------------------------------

struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t channels = 12;
  double rate_hz = 50.0;
  std::size_t seq_len = 96;        // timesteps per sequence
  std::size_t num_sequences = 64;
  double signal_amplitude = 1.5;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

// Class identity is carried by which channels hold the oscillation, so the
// channel-weighting pathway is the discriminative signal.
Dataset synth_dataset(const SynthSpec& spec);

// signature channels of a class (round-robin grouping)
std::vector<std::size_t> synth_signature_channels(const SynthSpec& spec, int label);

}  // namespace cetal
