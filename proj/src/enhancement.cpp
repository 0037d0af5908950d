#include "cetal/enhancement.hpp"

#include <cmath>

#include "cetal/init.hpp"

namespace cetal {

namespace {

void check_channels(const Tensor& x, std::size_t c, const char* mod) {
  if (x.rank() != 3 || x.dim(1) != c) {
    throw ShapeError(std::string(mod) + ": expected [B," + std::to_string(c) +
                     ",T], got " + shape_str(x.shape()));
  }
}

Tensor near_identity_conv(std::size_t c, std::mt19937& rng,
                          const std::string& name) {
  std::normal_distribution<double> d(0.0, 1e-3);
  std::vector<double> w(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      w[i * c + j] = (i == j ? 1.0 : 0.0) + d(rng);
    }
  }
  Tensor t({c, c, 1}, std::move(w), true);
  t.set_name(name);
  return t;
}

}  // namespace

std::size_t bottleneck_width(std::size_t channels, std::size_t reduction) {
  std::size_t w = (channels + reduction - 1) / reduction;
  return w == 0 ? 1 : w;
}

// ---- ACE -------------------------------------------------------------------

AceModule::AceModule(const AceConfig& cfg, std::mt19937& rng,
                     const std::string& p)
    : cfg_(cfg) {
  if (cfg.channels < 1 || cfg.reduction < 1) {
    throw ConfigError("ace: channels and reduction must be >= 1");
  }
  std::size_t cb = bottleneck_width(cfg.channels, cfg.reduction);
  w1 = randn_param({cb, cfg.channels, 1}, rng, 1.0 / std::sqrt(double(cfg.channels)),
                   p + ".w1");
  b1 = zeros_param({cb}, p + ".b1");
  w2 = randn_param({cfg.channels, cb, 1}, rng, 1.0 / std::sqrt(double(cb)), p + ".w2");
  b2 = zeros_param({cfg.channels}, p + ".b2");
  beta = cfg.beta.learnable ? full_param({1}, cfg.beta.init, p + ".beta")
                            : Tensor::scalar(cfg.beta.init);
  wf = near_identity_conv(cfg.channels, rng, p + ".wf");
  bf = zeros_param({cfg.channels}, p + ".bf");
}

Tensor AceModule::channel_weights(const Tensor& x) const {
  check_channels(x, cfg_.channels, "ace");
  Tensor pooled = adaptive_avg_pool1d_to_one(x);
  Tensor h = swish(conv1d(pooled, w1, b1, 1, 0), beta);
  return sigmoid(conv1d(h, w2, b2, 1, 0));
}

Tensor AceModule::forward(const Tensor& x) const {
  Tensor wc = channel_weights(x);
  Tensor gated = mul(x, expand_time(wc, x.dim(2)));
  return conv1d(gated, wf, bf, 1, 0);
}

std::vector<Tensor> AceModule::parameters() const {
  std::vector<Tensor> ps = {w1, b1, w2, b2, wf, bf};
  if (cfg_.beta.learnable) ps.push_back(beta);
  return ps;
}

std::size_t AceModule::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

// ---- MCE -------------------------------------------------------------------

MceModule::MceModule(const MceConfig& cfg, std::mt19937& rng,
                     const std::string& p)
    : cfg_(cfg) {
  if (cfg.channels < 1 || cfg.reduction < 1 || cfg.kernel < 1 || cfg.stride < 1) {
    throw ConfigError("mce: invalid config");
  }
  std::size_t cb = bottleneck_width(cfg.channels, cfg.reduction);
  w1 = randn_param({cb, cfg.channels, 1}, rng, 1.0 / std::sqrt(double(cfg.channels)),
                   p + ".w1");
  b1 = zeros_param({cb}, p + ".b1");
  w2 = randn_param({cfg.channels, cb, 1}, rng, 1.0 / std::sqrt(double(cb)), p + ".w2");
  b2 = zeros_param({cfg.channels}, p + ".b2");
  beta = Tensor::scalar(1.0);
}

Tensor MceModule::forward(const Tensor& x) const {
  check_channels(x, cfg_.channels, "mce");
  Tensor xmax = max_pool1d(x, cfg_.kernel, cfg_.stride);
  Tensor h = swish(conv1d(xmax, w1, b1, 1, 0), beta);
  Tensor wc = sigmoid(conv1d(h, w2, b2, 1, 0));  // [B,C,L']
  Tensor y = linear_interpolate(wc, x.dim(2));
  return mul(x, y);
}

std::vector<Tensor> MceModule::parameters() const { return {w1, b1, w2, b2}; }

std::size_t MceModule::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

// ---- SE --------------------------------------------------------------------

SeModule::SeModule(std::size_t channels, std::size_t reduction, std::mt19937& rng,
                   const std::string& p)
    : channels_(channels) {
  std::size_t cb = bottleneck_width(channels, reduction);
  w1 = randn_param({cb, channels, 1}, rng, 1.0 / std::sqrt(double(channels)),
                   p + ".w1");
  b1 = zeros_param({cb}, p + ".b1");
  w2 = randn_param({channels, cb, 1}, rng, 1.0 / std::sqrt(double(cb)), p + ".w2");
  b2 = zeros_param({channels}, p + ".b2");
}

Tensor SeModule::channel_weights(const Tensor& x) const {
  check_channels(x, channels_, "se");
  Tensor pooled = adaptive_avg_pool1d_to_one(x);
  Tensor h = relu(conv1d(pooled, w1, b1, 1, 0));
  return sigmoid(conv1d(h, w2, b2, 1, 0));
}

Tensor SeModule::forward(const Tensor& x) const {
  return mul(x, expand_time(channel_weights(x), x.dim(2)));
}

std::vector<Tensor> SeModule::parameters() const { return {w1, b1, w2, b2}; }

std::size_t SeModule::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

// ---- counts ------------------------------------------------------------------

std::size_t se_param_count(std::size_t channels, std::size_t reduction) {
  std::size_t cb = bottleneck_width(channels, reduction);
  return cb * channels + cb + channels * cb + channels;
}

std::size_t ace_param_count(const AceConfig& cfg) {
  std::size_t n = se_param_count(cfg.channels, cfg.reduction);
  n += cfg.channels * cfg.channels + cfg.channels;  // trailing 1x1 conv
  if (cfg.beta.learnable) n += 1;
  return n;
}

std::size_t mce_param_count(const MceConfig& cfg) {
  return se_param_count(cfg.channels, cfg.reduction);
}

}  // namespace cetal
