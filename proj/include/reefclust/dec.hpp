#pragma once

#include "reefclust/core.hpp"
#include "reefclust/dsp.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace reefclust::dec {

/// Flat parameter storage. Over-aligned so Eigen views reduce in the same order on every run.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

inline constexpr int kImageRows = 90;  // frequency bins
inline constexpr int kImageCols = 20;  // time frames
inline constexpr int kImageSize = kImageRows * kImageCols;

enum class LayerKind { Conv, ConvTranspose, Dense };

struct Shape {
  int h = 1, w = 1, c = 1;
  int size() const noexcept { return h * w * c; }
  bool operator==(const Shape&) const = default;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int filters = 1;  // output channels, or units for dense layers
  bool relu = true;
};

/// A layer with resolved geometry. Strided (transposed) convolutions use
/// half padding, unit-stride ones use none.
struct LayerInfo {
  LayerSpec spec;
  Shape in, out;
  int pad_top = 0, pad_left = 0;
  std::size_t weight_offset = 0, weight_count = 0;
  std::size_t bias_offset = 0, bias_count = 0;
  // im2col table: for each small-grid position and kernel tap, the big-grid
  // position it touches or -1 when it falls in the padding.
  std::vector<int> gather;
  std::size_t param_count() const noexcept { return weight_count + bias_count; }
};

struct DecArchitecture {
  int latent_dim = 10;
  std::vector<LayerInfo> layers;
  std::size_t encoder_layers = 0;  // layers[0, encoder_layers) produce the latent vector
  std::size_t param_count = 0;

  static DecArchitecture build(int latent_dim);
  nlohmann::json to_json() const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamVector m, v;
  std::uint64_t step = 0;
  void resize(std::size_t n);
  void apply(ParamVector& params, const ParamVector& grad, const AdamConfig& cfg);
};

struct DecModel {
  DecArchitecture arch;
  int n_clusters = 2;
  std::uint64_t seed = 0;
  ParamVector params;  // all network weights and biases
  RowMatrix centroids;         // K x P, empty until init_clusters
  AdamState adam_net;
  AdamState adam_centroids;

  int latent_dim() const noexcept { return arch.latent_dim; }
  void validate() const;
};

/// Rows of a N x 1800 matrix, one flattened image per input.
RowMatrix stack_images(const std::vector<dsp::DecInput>& inputs);

/// Image of a whole simulated window (centred STFT, first 20 frames).
dsp::DecInput window_image(const TimeSeries& window, std::string event_id = {});

/// Table II network with latent size P, weights drawn from U(+-sqrt(6 / fan_in)).
DecModel build_model(int latent_dim, int n_clusters, std::uint64_t seed);

struct ForwardResult {
  RowMatrix latents;          // N x P
  RowMatrix reconstructions;  // N x 1800, row-major [90][20]
};

/// `images` is N x 1800 with each row a row-major 90 x 20 image.
ForwardResult forward(const DecModel& model, const RowMatrix& images);

/// Intermediate output shapes for one image, in layer order.
std::vector<Shape> shape_chain(const DecModel& model);

struct SoftAssignment {
  RowMatrix q;
  RowMatrix p;
};

/// Student-t soft assignment q and the sharpened target p.
SoftAssignment soft_assign(const RowMatrix& z, const RowMatrix& centroids);
RowMatrix target_distribution(const RowMatrix& q);

struct LossSpec {
  double w_kl = 0.0;
  double w_mse = 1.0;
  const RowMatrix* target = nullptr;  // B x K target p, needed when w_kl > 0
};

struct Gradients {
  ParamVector net;
  RowMatrix centroids;
  double loss = 0.0;
  double mse = 0.0;
  double kl = 0.0;
};

/// Exact gradients of w_kl * KL(p||q) + w_mse * MSE, both averaged over the batch.
Gradients gradients(const DecModel& model, const RowMatrix& batch, const LossSpec& loss);

/// Loss only, for finite-difference checks.
double loss_value(const DecModel& model, const RowMatrix& batch, const LossSpec& loss);

/// One Adam step on the batch. Centroids are updated only when w_kl > 0.
Gradients train_step(DecModel& model, const RowMatrix& batch, const LossSpec& loss, const AdamConfig& adam);

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 256;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainHistory {
  std::vector<double> loss;  // mean batch loss per epoch
};

TrainHistory pretrain(DecModel& model, const RowMatrix& images, const TrainConfig& cfg);

/// K-means on the latent vectors; throws NumericError when every latent is identical.
RowMatrix init_clusters(DecModel& model, const RowMatrix& images, int k, std::uint64_t seed);

struct JointConfig {
  int epochs = 20;
  int batch_size = 256;
  double w_kl = 0.1;
  double w_mse = 0.9;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct JointResult {
  std::vector<int> labels;
  RowMatrix q;
  TrainHistory history;
  std::vector<std::size_t> cluster_sizes;
  bool collapsed = false;  // some cluster received no points
};

JointResult train_joint(DecModel& model, const RowMatrix& images, const JointConfig& cfg);

/// Hard labels argmax_k q for the current model and centroids.
std::vector<int> assign(const DecModel& model, const RowMatrix& images);

struct SweepConfig {
  std::vector<int> latent_dims{2, 4, 6, 8, 10, 12, 16};
  std::vector<std::uint64_t> seeds{1};
  int k = 2;
  int pretrain_epochs = 200;
  int joint_epochs = 20;
  int batch_size = 256;
  std::function<void(const std::string&)> log;
};

struct SweepRow {
  int latent_dim = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  bool collapsed = false;
  double majority_fraction = 0.0;
  double final_pretrain_loss = 0.0;
};

std::vector<SweepRow> latent_sweep(const RowMatrix& images, const std::vector<int>& truth, const SweepConfig& cfg);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

/// Checkpoint: `<stem>.json` manifest plus `<stem>.rcwt` tensor blob.
void save_checkpoint(const DecModel& model, const std::filesystem::path& manifest_path);
DecModel load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace reefclust::dec
