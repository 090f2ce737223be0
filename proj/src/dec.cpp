#include "reefclust/dec.hpp"

#include "binio.hpp"
#include "reefclust/cluster.hpp"
#include "reefclust/features.hpp"
#include "reefclust/parallel.hpp"
#include "reefclust/rng.hpp"
#include "text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

namespace reefclust::dec {
namespace {

constexpr std::size_t kChunk = 32;

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

int conv_small(int big, int k, int s) { return (s > 1) ? (big + s - 1) / s : big - k + 1; }
int conv_big(int small, int k, int s) { return (s > 1) ? small * s : small + k - 1; }

void resolve_geometry(LayerInfo& l) {
  const auto& sp = l.spec;
  const bool strided = sp.sh > 1 || sp.sw > 1;
  // The convolution always maps a big grid onto a small grid; a transposed
  // convolution is its adjoint.
  const Shape big = sp.kind == LayerKind::Conv ? l.in : l.out;
  const Shape small = sp.kind == LayerKind::Conv ? l.out : l.in;
  if (strided) {
    l.pad_top = std::max((small.h - 1) * sp.sh + sp.kh - big.h, 0) / 2;
    l.pad_left = std::max((small.w - 1) * sp.sw + sp.kw - big.w, 0) / 2;
  }
  const int kk = sp.kh * sp.kw;
  l.gather.assign(static_cast<std::size_t>(small.h * small.w * kk), -1);
  for (int sy = 0; sy < small.h; ++sy)
    for (int sx = 0; sx < small.w; ++sx)
      for (int ky = 0; ky < sp.kh; ++ky)
        for (int kx = 0; kx < sp.kw; ++kx) {
          const int by = sy * sp.sh + ky - l.pad_top;
          const int bx = sx * sp.sw + kx - l.pad_left;
          if (by < 0 || by >= big.h || bx < 0 || bx >= big.w) continue;
          l.gather[static_cast<std::size_t>((sy * small.w + sx) * kk + ky * sp.kw + kx)] = by * big.w + bx;
        }
}

std::vector<LayerSpec> table2_specs(int latent_dim) {
  using K = LayerKind;
  return {
      {"conv1", K::Conv, 3, 3, 2, 2, 8, true},
      {"conv1b", K::Conv, 2, 1, 1, 1, 8, true},
      {"conv2", K::Conv, 3, 3, 2, 2, 16, true},
      {"conv2b", K::Conv, 1, 2, 1, 1, 16, true},
      {"conv3", K::Conv, 2, 1, 2, 1, 32, true},
      {"conv3b", K::Conv, 2, 1, 1, 1, 64, true},
      {"conv4", K::Conv, 2, 1, 2, 1, 64, true},
      {"encoded", K::Dense, 1, 1, 1, 1, latent_dim, true},
      {"dense", K::Dense, 1, 1, 1, 1, 0, true},  // width filled from the flatten size
      {"tconv4", K::ConvTranspose, 2, 1, 2, 1, 32, true},
      {"tconv4b", K::ConvTranspose, 2, 1, 1, 1, 32, true},
      {"tconv3", K::ConvTranspose, 2, 1, 2, 1, 16, true},
      {"tconv3b", K::ConvTranspose, 1, 2, 1, 1, 16, true},
      {"tconv2", K::ConvTranspose, 3, 3, 2, 2, 8, true},
      {"tconv2b", K::ConvTranspose, 2, 1, 1, 1, 8, true},
      {"tconv1", K::ConvTranspose, 3, 3, 2, 2, 1, false},
  };
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ConvTranspose: return "conv_transpose";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

ConstMap weight_of(const DecModel& m, const LayerInfo& l) {
  const auto& sp = l.spec;
  const int kk = sp.kh * sp.kw;
  const double* w = m.params.data() + l.weight_offset;
  switch (sp.kind) {
    case LayerKind::Conv: return ConstMap(w, kk * l.in.c, l.out.c);
    case LayerKind::ConvTranspose: return ConstMap(w, l.in.c, kk * l.out.c);
    case LayerKind::Dense: break;
  }
  return ConstMap(w, l.in.size(), l.out.size());
}

Eigen::Map<const Eigen::RowVectorXd> bias_of(const DecModel& m, const LayerInfo& l) {
  return {m.params.data() + l.bias_offset, static_cast<Eigen::Index>(l.bias_count)};
}

// Activations for one chunk. acts[0] is the input; acts[i + 1] is the output of
// layer i, stored as (B * h * w) x c for spatial layers and B x units for dense.
struct Workspace {
  std::vector<RowMatrix> acts;
  std::vector<RowMatrix> patches;  // im2col buffers for Conv layers
};

void relu_inplace(RowMatrix& y) { y = y.cwiseMax(0.0); }

void forward_chunk(const DecModel& m, const RowMatrix& x, Workspace& ws, std::size_t n_layers) {
  const auto& layers = m.arch.layers;
  const Eigen::Index b = x.rows();
  ws.acts.resize(n_layers + 1);
  ws.patches.resize(n_layers);
  ws.acts[0] = x;
  for (std::size_t li = 0; li < n_layers; ++li) {
    const LayerInfo& l = layers[li];
    const RowMatrix& in_raw = ws.acts[li];
    RowMatrix& y = ws.acts[li + 1];
    const auto w = weight_of(m, l);
    const auto bias = bias_of(m, l);
    const int kk = l.spec.kh * l.spec.kw;
    if (l.spec.kind == LayerKind::Dense) {
      const ConstMap in(in_raw.data(), b, l.in.size());
      y.noalias() = in * w;
    } else if (l.spec.kind == LayerKind::Conv) {
      const int nb = l.in.h * l.in.w, ns = l.out.h * l.out.w, cin = l.in.c;
      const ConstMap in(in_raw.data(), b * nb, cin);
      RowMatrix& p = ws.patches[li];
      p.setZero(b * ns, kk * cin);
      for (Eigen::Index s = 0; s < b; ++s)
        for (int pos = 0; pos < ns; ++pos)
          for (int k = 0; k < kk; ++k) {
            const int g = l.gather[static_cast<std::size_t>(pos * kk + k)];
            if (g >= 0) p.row(s * ns + pos).segment(k * cin, cin) = in.row(s * nb + g);
          }
      y.noalias() = p * w;
    } else {
      const int ns = l.in.h * l.in.w, nb = l.out.h * l.out.w, cout = l.out.c;
      const ConstMap in(in_raw.data(), b * ns, l.in.c);
      const RowMatrix cols = in * w;
      y.setZero(b * nb, cout);
      for (Eigen::Index s = 0; s < b; ++s)
        for (int pos = 0; pos < ns; ++pos)
          for (int k = 0; k < kk; ++k) {
            const int g = l.gather[static_cast<std::size_t>(pos * kk + k)];
            if (g >= 0) y.row(s * nb + g) += cols.row(s * ns + pos).segment(k * cout, cout);
          }
    }
    y.rowwise() += bias;
    if (l.spec.relu) relu_inplace(y);
  }
}

// Back-propagates from the output gradient of the last layer. `grad_latent`
// (B x P) is added where the encoder output is consumed.
void backward_chunk(const DecModel& m, const Workspace& ws, RowMatrix g, const RowMatrix* grad_latent,
                    ParamVector& grad) {
  const auto& layers = m.arch.layers;
  const Eigen::Index b = ws.acts[0].rows();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerInfo& l = layers[li];
    const RowMatrix& y = ws.acts[li + 1];
    if (li + 1 == m.arch.encoder_layers && grad_latent) g += *grad_latent;
    if (l.spec.relu) g = (y.array() > 0.0).select(g, 0.0);
    const auto w = weight_of(m, l);
    MutMap gw(grad.data() + l.weight_offset, w.rows(), w.cols());
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + l.bias_offset, static_cast<Eigen::Index>(l.bias_count));
    gb += g.colwise().sum();
    const bool need_input = li > 0;
    const RowMatrix& in_raw = ws.acts[li];
    const int kk = l.spec.kh * l.spec.kw;
    RowMatrix gin;
    if (l.spec.kind == LayerKind::Dense) {
      const ConstMap in(in_raw.data(), b, l.in.size());
      gw.noalias() += in.transpose() * g;
      if (need_input) gin.noalias() = g * w.transpose();
    } else if (l.spec.kind == LayerKind::Conv) {
      const int nb = l.in.h * l.in.w, ns = l.out.h * l.out.w, cin = l.in.c;
      const RowMatrix& p = ws.patches[li];
      gw.noalias() += p.transpose() * g;
      if (need_input) {
        const RowMatrix gp = g * w.transpose();
        gin.setZero(b * nb, cin);
        for (Eigen::Index s = 0; s < b; ++s)
          for (int pos = 0; pos < ns; ++pos)
            for (int k = 0; k < kk; ++k) {
              const int gi = l.gather[static_cast<std::size_t>(pos * kk + k)];
              if (gi >= 0) gin.row(s * nb + gi) += gp.row(s * ns + pos).segment(k * cin, cin);
            }
      }
    } else {
      const int ns = l.in.h * l.in.w, nb = l.out.h * l.out.w, cout = l.out.c;
      const ConstMap in(in_raw.data(), b * ns, l.in.c);
      RowMatrix gcols = RowMatrix::Zero(b * ns, kk * cout);
      for (Eigen::Index s = 0; s < b; ++s)
        for (int pos = 0; pos < ns; ++pos)
          for (int k = 0; k < kk; ++k) {
            const int gi = l.gather[static_cast<std::size_t>(pos * kk + k)];
            if (gi >= 0) gcols.row(s * ns + pos).segment(k * cout, cout) = g.row(s * nb + gi);
          }
      gw.noalias() += in.transpose() * gcols;
      if (need_input) gin.noalias() = gcols * w.transpose();
    }
    if (!need_input) break;
    // Reinterpret as the previous layer's storage shape.
    const RowMatrix& prev = ws.acts[li];
    g = ConstMap(gin.data(), prev.rows(), prev.cols());
  }
}

struct ChunkResult {
  ParamVector net;
  RowMatrix centroids;
  double mse_sum = 0.0;
  double kl_sum = 0.0;
};

// Loss terms for rows [r0, r1) of the batch, normalised by the full batch size.
void chunk_loss(const DecModel& m, const RowMatrix& batch, Eigen::Index r0, Eigen::Index r1, const LossSpec& loss,
                bool want_grad, ChunkResult& out) {
  const Eigen::Index nb = r1 - r0;
  const double inv_b = 1.0 / static_cast<double>(batch.rows());
  const RowMatrix x = batch.middleRows(r0, nb);
  Workspace ws;
  forward_chunk(m, x, ws, m.arch.layers.size());
  const RowMatrix& z = ws.acts[m.arch.encoder_layers];
  const ConstMap recon(ws.acts.back().data(), nb, kImageSize);

  const RowMatrix diff = recon - x;
  out.mse_sum = diff.squaredNorm() / kImageSize;
  RowMatrix g_recon;
  if (want_grad) {
    g_recon = diff * (2.0 * loss.w_mse * inv_b / kImageSize);
    g_recon.resize(nb * kImageSize, 1);
  }

  RowMatrix g_latent;
  const bool use_kl = loss.w_kl != 0.0;
  if (use_kl) {
    if (!loss.target) throw ConfigError("dec: KL loss requires a target distribution");
    if (m.centroids.rows() == 0) throw ConfigError("dec: KL loss requires initialised centroids");
    const RowMatrix p = loss.target->middleRows(r0, nb);
    const SoftAssignment sa = soft_assign(z, m.centroids);
    const Eigen::Index k = m.centroids.rows();
    for (Eigen::Index i = 0; i < nb; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        if (p(i, j) > 0.0) out.kl_sum += p(i, j) * std::log(p(i, j) / sa.q(i, j));
    if (want_grad) {
      g_latent = RowMatrix::Zero(nb, z.cols());
      out.centroids = RowMatrix::Zero(k, z.cols());
      const double scale = 2.0 * loss.w_kl * inv_b;
      for (Eigen::Index i = 0; i < nb; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::RowVectorXd d = z.row(i) - m.centroids.row(j);
          const double c = scale * (p(i, j) - sa.q(i, j)) / (1.0 + d.squaredNorm());
          g_latent.row(i) += c * d;
          out.centroids.row(j) -= c * d;
        }
    }
  }
  if (!want_grad) return;
  out.net.assign(m.params.size(), 0.0);
  backward_chunk(m, ws, std::move(g_recon), use_kl ? &g_latent : nullptr, out.net);
}

Gradients evaluate_batch(const DecModel& m, const RowMatrix& batch, const LossSpec& loss, bool want_grad) {
  if (batch.cols() != kImageSize) throw DataError("dec: batch rows must hold 90 x 20 images");
  const auto n = static_cast<std::size_t>(batch.rows());
  if (n == 0) throw DataError("dec: empty batch");
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  std::vector<ChunkResult> parts(n_chunks);
  parallel_for(n_chunks, [&](std::size_t c) {
    const auto r0 = static_cast<Eigen::Index>(c * kChunk);
    const auto r1 = static_cast<Eigen::Index>(std::min(n, (c + 1) * kChunk));
    chunk_loss(m, batch, r0, r1, loss, want_grad, parts[c]);
  });
  Gradients g;
  if (want_grad) {
    g.net.assign(m.params.size(), 0.0);
    g.centroids = RowMatrix::Zero(m.centroids.rows(), m.centroids.cols());
  }
  for (const auto& part : parts) {
    g.mse += part.mse_sum;
    g.kl += part.kl_sum;
    if (!want_grad) continue;
    for (std::size_t i = 0; i < g.net.size(); ++i) g.net[i] += part.net[i];
    if (part.centroids.size() > 0) g.centroids += part.centroids;
  }
  g.mse /= static_cast<double>(n);
  g.kl /= static_cast<double>(n);
  g.loss = loss.w_kl * g.kl + loss.w_mse * g.mse;
  return g;
}

RowMatrix gather_rows(const RowMatrix& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  RowMatrix out(static_cast<Eigen::Index>(end - begin), x.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

ParamVector flatten(const RowMatrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

RowMatrix stack_images(const std::vector<dsp::DecInput>& inputs) {
  RowMatrix out(static_cast<Eigen::Index>(inputs.size()), kImageSize);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& img = inputs[i].image;
    if (img.rows() != static_cast<std::size_t>(kImageRows) || img.cols() != static_cast<std::size_t>(kImageCols))
      throw DataError("stack_images: image " + std::to_string(i) + " is not 90 x 20");
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(img.data().data(), kImageSize);
  }
  return out;
}

dsp::DecInput window_image(const TimeSeries& window, std::string event_id) {
  const auto spec = dsp::stft(window, features::sim_stft_config());
  return dsp::dec_input(spec, window.t_start, window.t_start + window.duration(), std::move(event_id));
}

DecArchitecture DecArchitecture::build(int latent_dim) {
  if (latent_dim < 1) throw ConfigError("dec: latent dimension must be at least 1");
  DecArchitecture a;
  a.latent_dim = latent_dim;
  Shape cur{kImageRows, kImageCols, 1};
  Shape flattened_from;
  std::size_t offset = 0;
  for (auto& sp : table2_specs(latent_dim)) {
    LayerInfo l;
    l.in = cur;
    if (sp.kind == LayerKind::Dense) {
      if (sp.name == "encoded") {
        flattened_from = cur;
        l.out = Shape{1, 1, sp.filters};
      } else {
        sp.filters = flattened_from.size();
        l.out = flattened_from;  // reshaped back for the decoder convolutions
      }
      l.spec = sp;
      l.weight_count = static_cast<std::size_t>(l.in.size()) * static_cast<std::size_t>(l.out.size());
      l.bias_count = static_cast<std::size_t>(l.out.size());
    } else {
      l.spec = sp;
      if (sp.kind == LayerKind::Conv)
        l.out = Shape{conv_small(cur.h, sp.kh, sp.sh), conv_small(cur.w, sp.kw, sp.sw), sp.filters};
      else
        l.out = Shape{conv_big(cur.h, sp.kh, sp.sh), conv_big(cur.w, sp.kw, sp.sw), sp.filters};
      l.weight_count = static_cast<std::size_t>(sp.kh * sp.kw * cur.c * sp.filters);
      l.bias_count = static_cast<std::size_t>(sp.filters);
      resolve_geometry(l);
    }
    l.weight_offset = offset;
    offset += l.weight_count;
    l.bias_offset = offset;
    offset += l.bias_count;
    cur = l.out;
    a.layers.push_back(std::move(l));
    if (sp.name == "encoded") a.encoder_layers = a.layers.size();
  }
  a.param_count = offset;
  if (!(cur == Shape{kImageRows, kImageCols, 1})) throw NumericError("dec: decoder does not restore the input shape");
  return a;
}

nlohmann::json DecArchitecture::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers)
    layers_json.push_back({{"name", l.spec.name},
                           {"kind", kind_name(l.spec.kind)},
                           {"kernel", {l.spec.kh, l.spec.kw}},
                           {"stride", {l.spec.sh, l.spec.sw}},
                           {"activation", l.spec.relu ? "relu" : "linear"},
                           {"input_shape", {l.in.h, l.in.w, l.in.c}},
                           {"output_shape", {l.out.h, l.out.w, l.out.c}},
                           {"params", l.param_count()}});
  return {{"latent_dim", latent_dim}, {"input_shape", {kImageRows, kImageCols, 1}}, {"layers", layers_json},
          {"param_count", param_count}};
}

void AdamState::resize(std::size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  step = 0;
}

void AdamState::apply(ParamVector& params, const ParamVector& grad, const AdamConfig& cfg) {
  if (m.size() != params.size()) resize(params.size());
  ++step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    params[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
  }
}

void DecModel::validate() const {
  if (params.size() != arch.param_count) throw DataError("dec: parameter count does not match the architecture");
  if (!std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); }))
    throw NumericError("dec: non-finite parameter");
  if (centroids.size() > 0) {
    if (centroids.rows() != n_clusters || centroids.cols() != arch.latent_dim)
      throw DataError("dec: centroid matrix has the wrong shape");
    if (!centroids.allFinite()) throw NumericError("dec: non-finite centroid");
  }
}

DecModel build_model(int latent_dim, int n_clusters, std::uint64_t seed) {
  if (n_clusters < 2) throw ConfigError("dec: K must be at least 2");
  DecModel m;
  m.arch = DecArchitecture::build(latent_dim);
  m.n_clusters = n_clusters;
  m.seed = seed;
  m.params.assign(m.arch.param_count, 0.0);
  Rng rng(derive_seed(seed, 3, 0));
  for (const auto& l : m.arch.layers) {
    const int fan_in = l.spec.kind == LayerKind::Dense ? l.in.size() : l.spec.kh * l.spec.kw * l.in.c;
    const double limit = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < l.weight_count; ++i) m.params[l.weight_offset + i] = uniform(rng, -limit, limit);
  }
  m.adam_net.resize(m.params.size());
  return m;
}

ForwardResult forward(const DecModel& model, const RowMatrix& images) {
  if (images.cols() != kImageSize) throw DataError("dec: input rows must hold 90 x 20 images");
  const auto n = static_cast<std::size_t>(images.rows());
  ForwardResult r;
  r.latents.resize(images.rows(), model.latent_dim());
  r.reconstructions.resize(images.rows(), kImageSize);
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  parallel_for(n_chunks, [&](std::size_t c) {
    const auto r0 = static_cast<Eigen::Index>(c * kChunk);
    const auto nb = static_cast<Eigen::Index>(std::min(n, (c + 1) * kChunk)) - r0;
    Workspace ws;
    forward_chunk(model, images.middleRows(r0, nb), ws, model.arch.layers.size());
    r.latents.middleRows(r0, nb) = ws.acts[model.arch.encoder_layers];
    r.reconstructions.middleRows(r0, nb) = ConstMap(ws.acts.back().data(), nb, kImageSize);
  });
  return r;
}

std::vector<Shape> shape_chain(const DecModel& model) {
  // Shapes are taken from an actual forward pass rather than the layer table.
  Workspace ws;
  forward_chunk(model, RowMatrix::Zero(1, kImageSize), ws, model.arch.layers.size());
  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i) {
    const auto& l = model.arch.layers[i];
    const auto elems = ws.acts[i + 1].size();
    if (elems != l.out.size()) throw NumericError("dec: layer " + l.spec.name + " produced an unexpected size");
    shapes.push_back(l.out);
  }
  return shapes;
}

SoftAssignment soft_assign(const RowMatrix& z, const RowMatrix& centroids) {
  if (z.cols() != centroids.cols()) throw DataError("soft_assign: latent and centroid widths differ");
  if (!centroids.allFinite()) throw NumericError("soft_assign: non-finite centroid");
  SoftAssignment sa;
  sa.q.resize(z.rows(), centroids.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < centroids.rows(); ++j)
      sa.q(i, j) = 1.0 / (1.0 + (z.row(i) - centroids.row(j)).squaredNorm());
    sa.q.row(i) /= sa.q.row(i).sum();
  }
  sa.p = target_distribution(sa.q);
  return sa;
}

RowMatrix target_distribution(const RowMatrix& q) {
  const Eigen::RowVectorXd freq = q.colwise().sum();
  RowMatrix p(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) p(i, j) = q(i, j) * q(i, j) / freq[j];
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Gradients gradients(const DecModel& model, const RowMatrix& batch, const LossSpec& loss) {
  return evaluate_batch(model, batch, loss, true);
}

double loss_value(const DecModel& model, const RowMatrix& batch, const LossSpec& loss) {
  return evaluate_batch(model, batch, loss, false).loss;
}

Gradients train_step(DecModel& model, const RowMatrix& batch, const LossSpec& loss, const AdamConfig& adam) {
  Gradients g = gradients(model, batch, loss);
  if (!std::isfinite(g.loss)) throw NumericError("dec: loss is not finite");
  model.adam_net.apply(model.params, g.net, adam);
  if (loss.w_kl != 0.0 && model.centroids.size() > 0) {
    ParamVector c = flatten(model.centroids);
    model.adam_centroids.apply(c, flatten(g.centroids), adam);
    model.centroids = ConstMap(c.data(), model.centroids.rows(), model.centroids.cols());
  }
  return g;
}

TrainHistory pretrain(DecModel& model, const RowMatrix& images, const TrainConfig& cfg) {
  if (images.rows() == 0) throw DataError("pretrain: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size <= 0) throw ConfigError("pretrain: epochs and batch size must be positive");
  const auto n = static_cast<std::size_t>(images.rows());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  TrainHistory h;
  const LossSpec mse{0.0, 1.0, nullptr};
  if (model.adam_net.step == 0) {
    // A fresh model starts out predicting the mean image: output weights zero, output bias the data mean.
    const auto& out = model.arch.layers.back();
    std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(out.weight_offset), out.weight_count, 0.0);
    model.params[out.bias_offset] = images.mean();
  }
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const RowMatrix batch = gather_rows(images, order, b0, b1);
      Gradients g;
      try {
        g = train_step(model, batch, mse, cfg.adam);
      } catch (const NumericError&) {
        throw NumericError("pretrain diverged at epoch " + std::to_string(epoch));
      }
      total += g.loss * static_cast<double>(b1 - b0);
    }
    h.loss.push_back(total / static_cast<double>(n));
    if (cfg.on_epoch) cfg.on_epoch(epoch, h.loss.back());
  }
  return h;
}

RowMatrix init_clusters(DecModel& model, const RowMatrix& images, int k, std::uint64_t seed) {
  const RowMatrix z = forward(model, images).latents;
  bool distinct = false;
  for (Eigen::Index i = 1; i < z.rows() && !distinct; ++i) distinct = (z.row(i) - z.row(0)).squaredNorm() > 0.0;
  if (!distinct) throw NumericError("dec: latent collapse, every latent vector is identical");
  const auto res = cluster::kmeans(z, k, seed);
  model.n_clusters = k;
  model.centroids = res.centroids;
  model.adam_centroids.resize(static_cast<std::size_t>(model.centroids.size()));
  return model.centroids;
}

std::vector<int> assign(const DecModel& model, const RowMatrix& images) {
  const RowMatrix z = forward(model, images).latents;
  const RowMatrix q = soft_assign(z, model.centroids).q;
  std::vector<int> labels(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) q.row(i).maxCoeff(&labels[static_cast<std::size_t>(i)]);
  return labels;
}

JointResult train_joint(DecModel& model, const RowMatrix& images, const JointConfig& cfg) {
  if (model.centroids.rows() == 0) throw ConfigError("train_joint: centroids are not initialised");
  if (cfg.batch_size <= 0) throw ConfigError("train_joint: batch size must be positive");
  const auto n = static_cast<std::size_t>(images.rows());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  JointResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const RowMatrix p = soft_assign(forward(model, images).latents, model.centroids).p;
    const auto order = epoch_order(n, derive_seed(cfg.seed, 4, 0), epoch);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const RowMatrix batch = gather_rows(images, order, b0, b1);
      const RowMatrix target = gather_rows(p, order, b0, b1);
      const Gradients g = train_step(model, batch, LossSpec{cfg.w_kl, cfg.w_mse, &target}, cfg.adam);
      total += g.loss * static_cast<double>(b1 - b0);
    }
    res.history.loss.push_back(total / static_cast<double>(n));
    if (cfg.on_epoch) cfg.on_epoch(epoch, res.history.loss.back());
  }
  res.q = soft_assign(forward(model, images).latents, model.centroids).q;
  res.labels.resize(n);
  res.cluster_sizes.assign(static_cast<std::size_t>(model.centroids.rows()), 0);
  for (Eigen::Index i = 0; i < res.q.rows(); ++i) {
    res.q.row(i).maxCoeff(&res.labels[static_cast<std::size_t>(i)]);
    ++res.cluster_sizes[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
  }
  res.collapsed = std::any_of(res.cluster_sizes.begin(), res.cluster_sizes.end(), [](std::size_t c) { return c == 0; });
  return res;
}

std::vector<SweepRow> latent_sweep(const RowMatrix& images, const std::vector<int>& truth, const SweepConfig& cfg) {
  if (truth.size() != static_cast<std::size_t>(images.rows())) throw DataError("latent_sweep: label count mismatch");
  std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.k), 0);
  for (int t : truth) {
    if (t < 0 || t >= cfg.k) throw DataError("latent_sweep: truth label outside [0, K)");
    ++counts[static_cast<std::size_t>(t)];
  }
  const double majority =
      static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(truth.size());

  std::vector<SweepRow> rows;
  for (int p : cfg.latent_dims) {
    for (std::uint64_t seed : cfg.seeds) {
      SweepRow row;
      row.latent_dim = p;
      row.seed = seed;
      row.majority_fraction = majority;
      DecModel model = build_model(p, cfg.k, seed);
      TrainConfig tc;
      tc.epochs = cfg.pretrain_epochs;
      tc.batch_size = cfg.batch_size;
      tc.seed = seed;
      const auto hist = pretrain(model, images, tc);
      row.final_pretrain_loss = hist.loss.empty() ? 0.0 : hist.loss.back();
      std::vector<int> labels(truth.size(), 0);
      try {
        init_clusters(model, images, cfg.k, seed);
        JointConfig jc;
        jc.epochs = cfg.joint_epochs;
        jc.batch_size = cfg.batch_size;
        jc.seed = seed;
        const auto jr = train_joint(model, images, jc);
        labels = jr.labels;
        row.collapsed = jr.collapsed;
      } catch (const NumericError&) {
        row.collapsed = true;
      }
      const auto report = cluster::evaluate_aligned(labels, truth, cfg.k, 0);
      row.accuracy = report.accuracy;
      row.precision = report.precision;
      row.recall = report.recall;
      if (cfg.log)
        cfg.log("P=" + std::to_string(p) + " seed=" + std::to_string(seed) + " accuracy=" +
                detail::fmt_double(row.accuracy) + (row.collapsed ? " collapsed" : ""));
      rows.push_back(row);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? detail::fmt_double(*v) : std::string(); };
  os << "latent_dim,seed,accuracy,precision,recall,collapsed,majority_fraction,final_pretrain_loss\n";
  for (const auto& r : rows)
    os << r.latent_dim << ',' << r.seed << ',' << detail::fmt_double(r.accuracy) << ',' << opt(r.precision) << ','
       << opt(r.recall) << ',' << (r.collapsed ? 1 : 0) << ',' << detail::fmt_double(r.majority_fraction) << ','
       << detail::fmt_double(r.final_pretrain_loss) << '\n';
}

namespace {

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

void write_tensor(std::ostream& os, const std::string& name, const std::vector<std::uint32_t>& dims, const double* data) {
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  std::size_t count = 1;
  for (auto d : dims) {
    detail::write_le<std::uint32_t>(os, d);
    count *= d;
  }
  for (std::size_t i = 0; i < count; ++i) detail::write_le<double>(os, data[i]);
}

std::vector<std::uint32_t> weight_dims(const LayerInfo& l) {
  const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
  switch (l.spec.kind) {
    case LayerKind::Conv: return {u(l.spec.kh), u(l.spec.kw), u(l.in.c), u(l.out.c)};
    case LayerKind::ConvTranspose: return {u(l.in.c), u(l.spec.kh), u(l.spec.kw), u(l.out.c)};
    case LayerKind::Dense: break;
  }
  return {u(l.in.size()), u(l.out.size())};
}

ParamVector to_params(const std::vector<double>& v) { return {v.begin(), v.end()}; }

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".rcwt");
  return p;
}

}  // namespace

void save_checkpoint(const DecModel& model, const std::filesystem::path& manifest_path) {
  model.validate();
  const auto blob = blob_path(manifest_path);
  std::map<std::string, Tensor> tensors;
  {
    std::ofstream os(blob, std::ios::binary);
    if (!os) throw DataError("cannot write " + blob.string());
    std::uint32_t count = static_cast<std::uint32_t>(2 * model.arch.layers.size() + 4);
    if (model.centroids.size() > 0) ++count;
    detail::write_magic(os, "RCWT");
    detail::write_le<std::uint32_t>(os, count);
    for (const auto& l : model.arch.layers) {
      write_tensor(os, l.spec.name + ".weight", weight_dims(l), model.params.data() + l.weight_offset);
      write_tensor(os, l.spec.name + ".bias", {static_cast<std::uint32_t>(l.bias_count)},
                   model.params.data() + l.bias_offset);
    }
    if (model.centroids.size() > 0)
      write_tensor(os, "centroids",
                   {static_cast<std::uint32_t>(model.centroids.rows()), static_cast<std::uint32_t>(model.centroids.cols())},
                   model.centroids.data());
    const auto flat = [](const ParamVector& v) { return std::vector<std::uint32_t>{static_cast<std::uint32_t>(v.size())}; };
    write_tensor(os, "adam_net.m", flat(model.adam_net.m), model.adam_net.m.data());
    write_tensor(os, "adam_net.v", flat(model.adam_net.v), model.adam_net.v.data());
    write_tensor(os, "adam_centroids.m", flat(model.adam_centroids.m), model.adam_centroids.m.data());
    write_tensor(os, "adam_centroids.v", flat(model.adam_centroids.v), model.adam_centroids.v.data());
    if (!os) throw DataError("failed writing " + blob.string());
  }
  nlohmann::json j;
  j["format"] = "reefclust-dec";
  j["version"] = 1;
  j["latent_dim"] = model.latent_dim();
  j["n_clusters"] = model.n_clusters;
  j["seed"] = model.seed;
  j["adam_step_net"] = model.adam_net.step;
  j["adam_step_centroids"] = model.adam_centroids.step;
  j["architecture"] = model.arch.to_json();
  j["weights"] = blob.filename().string();
  std::ofstream os(manifest_path);
  if (!os) throw DataError("cannot write " + manifest_path.string());
  os << j.dump(2) << '\n';
}

DecModel load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot read " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "reefclust-dec") throw DataError("checkpoint manifest: unknown format");
  DecModel m = build_model(j.at("latent_dim").get<int>(), j.at("n_clusters").get<int>(), j.at("seed").get<std::uint64_t>());

  const auto blob = manifest_path.parent_path() / j.at("weights").get<std::string>();
  std::ifstream bs(blob, std::ios::binary);
  if (!bs) throw DataError("cannot read " + blob.string());
  detail::expect_magic(bs, "RCWT");
  const auto count = detail::read_le<std::uint32_t>(bs);
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = detail::read_le<std::uint32_t>(bs);
    std::string name(len, '\0');
    if (!bs.read(name.data(), len)) throw DataError("truncated checkpoint blob");
    Tensor tensor;
    const auto rank = detail::read_le<std::uint32_t>(bs);
    std::size_t elems = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      tensor.dims.push_back(detail::read_le<std::uint32_t>(bs));
      elems *= tensor.dims.back();
    }
    tensor.data.resize(elems);
    for (auto& v : tensor.data) v = detail::read_le<double>(bs);
    tensors[name] = std::move(tensor);
  }
  auto take = [&](const std::string& name) -> Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint blob lacks tensor " + name);
    return it->second;
  };
  for (const auto& l : m.arch.layers) {
    const Tensor& w = take(l.spec.name + ".weight");
    const Tensor& b = take(l.spec.name + ".bias");
    if (w.dims != weight_dims(l) || b.data.size() != l.bias_count)
      throw DataError("checkpoint tensor shape mismatch in layer " + l.spec.name);
    std::copy(w.data.begin(), w.data.end(), m.params.begin() + static_cast<std::ptrdiff_t>(l.weight_offset));
    std::copy(b.data.begin(), b.data.end(), m.params.begin() + static_cast<std::ptrdiff_t>(l.bias_offset));
  }
  if (auto it = tensors.find("centroids"); it != tensors.end()) {
    const Tensor& c = it->second;
    if (c.dims.size() != 2 || static_cast<int>(c.dims[1]) != m.latent_dim()) throw DataError("checkpoint centroids have the wrong shape");
    m.centroids = ConstMap(c.data.data(), c.dims[0], c.dims[1]);
    m.n_clusters = static_cast<int>(c.dims[0]);
  }
  m.adam_net.m = to_params(take("adam_net.m").data);
  m.adam_net.v = to_params(take("adam_net.v").data);
  m.adam_net.step = j.value("adam_step_net", std::uint64_t{0});
  m.adam_centroids.m = to_params(take("adam_centroids.m").data);
  m.adam_centroids.v = to_params(take("adam_centroids.v").data);
  m.adam_centroids.step = j.value("adam_step_centroids", std::uint64_t{0});
  m.validate();
  return m;
}

}  // namespace reefclust::dec
