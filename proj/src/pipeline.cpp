#include "reefclust/pipeline.hpp"

#include "reefclust/cluster.hpp"
#include "reefclust/dec.hpp"
#include "reefclust/detect.hpp"
#include "reefclust/dsp.hpp"
#include "reefclust/features.hpp"
#include "reefclust/plot.hpp"
#include "reefclust/scene.hpp"
#include "reefclust/sim.hpp"
#include "reefclust/tsne.hpp"

#include "reefclust/parallel.hpp"

#include "text.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace reefclust::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  const json& cfg;
  io::RunManifest& manifest;
  const Logger& log;
  fs::path out_dir;

  template <typename T>
  T get(const char* key) const {
    if (!cfg.contains(key) || cfg.at(key).is_null()) throw ConfigError(std::string("missing config field '") + key + "'");
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  }

  std::uint64_t seed() const { return get<std::uint64_t>("seed"); }

  fs::path input(const char* key) const {
    const fs::path p = get<std::string>(key);
    if (!fs::exists(p)) throw ConfigError(std::string(key) + ": no such file " + p.string());
    if (!fs::is_regular_file(p)) throw ConfigError(std::string(key) + ": not a regular file " + p.string());
    manifest.add_input(p);
    return p;
  }

  fs::path output(const std::string& name) const { return out_dir / name; }

  void wrote(const fs::path& p) const { manifest.add_output(p); }
  void wrote_plot(const fs::path& base) const {
    fs::path svg = base, csv = base;
    svg += ".svg";
    csv += ".csv";
    wrote(svg);
    wrote(csv);
  }

  void say(const std::string& msg) const {
    if (log) log(msg);
  }
};

void save_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
}

std::vector<sim::SimEvent> load_dataset(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot open " + p.string());
  return sim::read_dataset_jsonl(is);
}

std::string sim_event_id(std::size_t id) { return "s" + std::to_string(id); }

features::FeatureMatrix load_features(const Context& c, const char* key) {
  const fs::path p = c.input(key);
  fs::path stats_path = p;
  stats_path.replace_extension(".stats.json");
  std::ifstream is(p);
  if (fs::exists(stats_path)) {
    c.manifest.add_input(stats_path);
    const json stats = io::load_config(stats_path);
    return features::read_feature_csv(is, &stats);
  }
  return features::read_feature_csv(is);
}

void write_features(const Context& c, const features::FeatureMatrix& m, const std::string& name) {
  const fs::path p = c.output(name);
  std::ostringstream os;
  features::write_feature_csv(os, m);
  save_text(p, os.str());
  c.wrote(p);
  fs::path stats = p;
  stats.replace_extension(".stats.json");
  save_text(stats, features::standardization_json(m).dump(2) + "\n");
  c.wrote(stats);
}

void write_labels(const Context& c, const std::vector<std::string>& ids, const std::vector<int>& labels,
                  const std::string& name = "labels.csv") {
  std::ostringstream os;
  cluster::write_labels_csv(os, ids, labels);
  save_text(c.output(name), os.str());
  c.wrote(c.output(name));
}

RowMatrix dataset_images(const std::vector<sim::SimEvent>& events, std::vector<std::string>& ids, std::vector<int>& truth) {
  std::vector<dsp::DecInput> in;
  for (const auto& e : events) {
    ids.push_back(sim_event_id(e.event_id));
    truth.push_back(static_cast<int>(e.label));
    in.push_back(dec::window_image(e.timeseries, ids.back()));
  }
  return dec::stack_images(in);
}

// simulate ---------------------------------------------------------------

void cmd_simulate(const Context& c) {
  const auto seed = c.seed();
  if (c.get<bool>("scene")) {
    auto spec = sim::random_scene_spec(c.get<double>("scene_duration"), c.get<int>("scene_sources"), c.get<double>("snr_db"), seed);
    spec.clock_offset = c.get<double>("clock_offset");
    const auto scene = sim::gen_two_sensor_scene(spec, seed);
    const auto enc = io::encoding_from_name(c.get<std::string>("encoding"));
    const double fs_scale = c.get<double>("full_scale");
    io::write_wav(c.output("north.wav"), io::record_to_wav(scene.north, enc, fs_scale));
    io::write_wav(c.output("south.wav"), io::record_to_wav(scene.south, enc, fs_scale));
    std::ostringstream os;
    for (const auto& s : scene.sources) os << sim::to_json(s).dump() << '\n';
    save_text(c.output("sources.jsonl"), os.str());
    for (const char* f : {"north.wav", "south.wav", "sources.jsonl"}) c.wrote(c.output(f));
    c.say("scene with " + std::to_string(scene.sources.size()) + " planted sources");
    return;
  }
  sim::DatasetSpec spec;
  spec.n_total = c.get<std::size_t>("n");
  const int classes = c.get<int>("classes");
  const double whale = c.get<double>("whale_fraction");
  if (classes == 2) {
    if (!(whale > 0.0 && whale < 1.0)) throw ConfigError("whale_fraction must lie in (0, 1)");
    spec.class_mix = {{Label::Whale, whale}, {Label::Fish, 1.0 - whale}};
  } else if (classes == 3) {
    spec.class_mix = {{Label::Whale, 1.0 / 3}, {Label::Fish, 1.0 / 3}, {Label::Both, 1.0 / 3}};
  } else {
    throw ConfigError("classes must be 2 or 3");
  }
  const auto events = sim::sample_dataset(spec, seed);
  std::ostringstream os;
  sim::write_dataset_jsonl(os, events);
  save_text(c.output("dataset.jsonl"), os.str());
  c.wrote(c.output("dataset.jsonl"));
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& e : events) {
    ids.push_back(sim_event_id(e.event_id));
    labels.push_back(static_cast<int>(e.label));
  }
  write_labels(c, ids, labels, "truth.csv");
  c.say("simulated " + std::to_string(events.size()) + " events");
}

// detect -----------------------------------------------------------------

io::ChannelMap channel_map(const Context& c) {
  const auto v = c.get<std::vector<int>>("channel_map");
  if (v.size() != 3) throw ConfigError("channel_map needs three indices (pressure, vx, vy)");
  return {v[0], v[1], v[2]};
}

detect::DetectorConfig detector_config(const Context& c) {
  detect::DetectorConfig d;
  d.sector_width = c.get<double>("sector_width");
  d.bandwidth_threshold = c.get<double>("threshold");
  d.merge_gap = c.get<int>("merge_gap");
  d.max_duration = c.get<double>("max_duration");
  d.spatial_box = c.get<double>("spatial_box");
  d.chunk_seconds = c.get<double>("chunk_seconds");
  const auto clock = c.get<std::string>("clock");
  if (clock == "estimate") d.clock = detect::ClockSync::Estimate;
  else if (clock == "none") d.clock = detect::ClockSync::None;
  else throw ConfigError("clock must be 'estimate' or 'none'");
  d.validate();
  return d;
}

void cmd_detect(const Context& c) {
  const auto map = channel_map(c);
  const double full_scale = c.get<double>("full_scale");
  const auto north = io::ingest_wav(c.input("north"), map, full_scale, "N");
  const auto south = io::ingest_wav(c.input("south"), map, full_scale, "S");
  const auto cfg = detector_config(c);
  auto events = detect::spatial_filter(detect::scan(north, south, cfg));
  std::ostringstream os;
  detect::write_events_jsonl(os, events);
  save_text(c.output("events.jsonl"), os.str());
  c.wrote(c.output("events.jsonl"));
  c.say("detected " + std::to_string(events.size()) + " events");

  std::vector<features::FeatureRow> rows;
  for (const auto& e : events) {
    features::EventFeatureInput in;
    in.reference = &north;
    in.partner = &south;
    in.t1 = e.t1;
    in.t2 = e.t2;
    in.azimuth_reference = e.az_n;
    in.azimuth_partner = e.az_s;
    in.mask = &e.mask;
    rows.push_back({e.event_id, features::extract_event_features(in), std::nullopt});
  }
  if (!rows.empty())
    write_features(c, features::build_feature_matrix(rows, features::FeatureSet::Full6, c.get<bool>("standardize")), "features.csv");
}

// features ---------------------------------------------------------------

void cmd_features(const Context& c) {
  std::vector<features::FeatureRow> rows;
  features::FeatureSet set = features::FeatureSet::Sim3;
  if (c.cfg.contains("events") && !c.cfg.at("events").is_null()) {
    set = features::FeatureSet::Full6;
    const auto map = channel_map(c);
    const double full_scale = c.get<double>("full_scale");
    const auto north = io::ingest_wav(c.input("north"), map, full_scale, "N");
    const auto south = io::ingest_wav(c.input("south"), map, full_scale, "S");
    std::ifstream is(c.input("events"));
    for (const auto& e : detect::read_events_jsonl(is)) {
      features::EventFeatureInput in;
      in.reference = &north;
      in.partner = &south;
      in.t1 = e.t1;
      in.t2 = e.t2;
      in.azimuth_reference = e.az_n;
      in.azimuth_partner = e.az_s;
      rows.push_back({e.event_id, features::extract_event_features(in), std::nullopt});
    }
  } else {
    const auto events = load_dataset(c.input("dataset"));
    rows.resize(events.size());
    parallel_for(events.size(), [&](std::size_t i) {
      rows[i] = {sim_event_id(events[i].event_id), features::extract_sim_features(events[i].timeseries),
                 static_cast<int>(events[i].label)};
    });
  }
  const auto m = features::build_feature_matrix(rows, set, c.get<bool>("standardize"));
  write_features(c, m, "features.csv");
  c.say("feature matrix " + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) +
        (m.standardized ? " (standardised)" : " (raw)"));
}

// cluster ----------------------------------------------------------------

void cmd_cluster(const Context& c) {
  const auto m = load_features(c, "features");
  const int k = c.get<int>("k");
  const auto method = c.get<std::string>("method");
  std::vector<int> labels;
  if (method == "kmeans") {
    labels = cluster::kmeans(m.values, k, c.seed()).labels;
  } else if (method == "ward") {
    const auto merges = cluster::ward_linkage(m.values);
    labels = cluster::cut_tree(merges, m.rows(), k);
    save_text(c.output("dendrogram.json"), cluster::dendrogram_json(merges).dump() + "\n");
    c.wrote(c.output("dendrogram.json"));
  } else if (method == "em") {
    const auto em = cluster::em_gmm(m.values, k, c.seed());
    for (Eigen::Index i = 0; i < em.responsibilities.rows(); ++i) {
      Eigen::Index best = 0;
      em.responsibilities.row(i).maxCoeff(&best);
      labels.push_back(static_cast<int>(best));
    }
  } else {
    throw ConfigError("method must be kmeans, ward or em");
  }
  write_labels(c, m.event_ids, labels);
  if (!m.labels.empty()) {
    const auto report = cluster::evaluate_aligned(labels, m.labels, std::max(k, *std::max_element(m.labels.begin(), m.labels.end()) + 1), 0);
    save_text(c.output("eval.json"), cluster::to_json(report).dump(2) + "\n");
    c.wrote(c.output("eval.json"));
    c.say(method + " accuracy " + detail::fmt_double(report.accuracy));
  }
}

// tsne -------------------------------------------------------------------

void cmd_tsne(const Context& c) {
  const auto m = load_features(c, "features");
  tsne::TsneConfig cfg;
  cfg.perplexity = c.get<double>("perplexity");
  cfg.n_iter = c.get<int>("n_iter");
  cfg.learning_rate = c.get<double>("learning_rate");
  cfg.exaggerate = c.get<bool>("exaggerate");
  cfg.seed = c.seed();
  const auto emb = tsne::tsne(m.values, cfg);
  std::vector<int> colour = m.labels;
  if (c.cfg.contains("labels") && !c.cfg.at("labels").is_null()) colour = read_labels_csv(c.input("labels")).labels;
  std::ostringstream os;
  tsne::write_embedding_csv(os, m.event_ids, emb, colour);
  save_text(c.output("embedding.csv"), os.str());
  c.wrote(c.output("embedding.csv"));
  std::vector<double> x, y;
  for (Eigen::Index i = 0; i < emb.points.rows(); ++i) x.push_back(emb.points(i, 0)), y.push_back(emb.points(i, 1));
  plot::scatter2d(c.output("embedding_plot"), x, y, colour, "t-SNE embedding");
  c.wrote_plot(c.output("embedding_plot"));
  if (emb.clamped_rows > 0) c.say(std::to_string(emb.clamped_rows) + " rows could not reach the target perplexity");
  c.say("final KL " + detail::fmt_double(emb.kl));
}

// dec --------------------------------------------------------------------

void write_latents(const Context& c, const dec::DecModel& model, const RowMatrix& images, const std::vector<std::string>& ids,
                   const std::vector<int>& truth) {
  features::FeatureMatrix z;
  z.event_ids = ids;
  z.raw = dec::forward(model, images).latents;
  z.values = z.raw;
  z.standardized = false;
  z.means = Eigen::VectorXd::Zero(z.raw.cols());
  z.stds = Eigen::VectorXd::Ones(z.raw.cols());
  for (Eigen::Index j = 0; j < z.raw.cols(); ++j) z.columns.push_back("z" + std::to_string(j));
  z.labels = truth;
  write_features(c, z, "latents.csv");
}

void report_eval(const Context& c, const std::vector<int>& labels, const std::vector<int>& truth, int k) {
  const int kk = std::max(k, *std::max_element(truth.begin(), truth.end()) + 1);
  const auto report = cluster::evaluate_aligned(labels, truth, kk, 0);
  save_text(c.output("eval.json"), cluster::to_json(report).dump(2) + "\n");
  c.wrote(c.output("eval.json"));
  c.say("aligned accuracy " + detail::fmt_double(report.accuracy));
}

void cmd_dec_pretrain(const Context& c) {
  const auto events = load_dataset(c.input("dataset"));
  std::vector<std::string> ids;
  std::vector<int> truth;
  const RowMatrix images = dataset_images(events, ids, truth);
  auto model = dec::build_model(c.get<int>("latent_dim"), c.get<int>("k"), c.seed());
  dec::TrainConfig tc;
  tc.epochs = c.get<int>("epochs");
  tc.batch_size = c.get<int>("batch_size");
  tc.adam.lr = c.get<double>("learning_rate");
  tc.seed = c.seed();
  tc.on_epoch = [&](int e, double loss) {
    if ((e + 1) % 10 == 0) c.say("epoch " + std::to_string(e + 1) + " loss " + detail::fmt_double(loss));
  };
  const auto hist = dec::pretrain(model, images, tc);
  dec::init_clusters(model, images, model.n_clusters, c.seed());
  dec::save_checkpoint(model, c.output("model.json"));
  c.wrote(c.output("model.json"));
  c.wrote(c.output("model.rcwt"));
  plot::loss_curve(c.output("pretrain_loss"), hist.loss, "pretraining loss");
  c.wrote_plot(c.output("pretrain_loss"));
  write_labels(c, ids, dec::assign(model, images));
}

void cmd_dec_train(const Context& c) {
  const auto events = load_dataset(c.input("dataset"));
  std::vector<std::string> ids;
  std::vector<int> truth;
  const RowMatrix images = dataset_images(events, ids, truth);
  auto model = dec::load_checkpoint(c.input("model"));
  dec::JointConfig jc;
  jc.epochs = c.get<int>("epochs");
  jc.batch_size = c.get<int>("batch_size");
  jc.w_kl = c.get<double>("w_kl");
  jc.w_mse = c.get<double>("w_mse");
  jc.adam.lr = c.get<double>("learning_rate");
  jc.seed = c.seed();
  const auto res = dec::train_joint(model, images, jc);
  if (res.collapsed) c.say("warning: a cluster received no points");
  dec::save_checkpoint(model, c.output("model.json"));
  c.wrote(c.output("model.json"));
  c.wrote(c.output("model.rcwt"));
  plot::loss_curve(c.output("joint_loss"), res.history.loss, "joint training loss");
  c.wrote_plot(c.output("joint_loss"));
  write_labels(c, ids, res.labels);
  report_eval(c, res.labels, truth, model.n_clusters);
}

void cmd_dec_assign(const Context& c) {
  const auto events = load_dataset(c.input("dataset"));
  std::vector<std::string> ids;
  std::vector<int> truth;
  const RowMatrix images = dataset_images(events, ids, truth);
  const auto model = dec::load_checkpoint(c.input("model"));
  const auto labels = dec::assign(model, images);
  write_labels(c, ids, labels);
  write_latents(c, model, images, ids, truth);
  report_eval(c, labels, truth, model.n_clusters);
}

void cmd_dec_sweep(const Context& c) {
  const auto events = load_dataset(c.input("dataset"));
  std::vector<std::string> ids;
  std::vector<int> truth;
  const RowMatrix images = dataset_images(events, ids, truth);
  dec::SweepConfig sc;
  sc.latent_dims = c.get<std::vector<int>>("latent_dims");
  sc.seeds = c.get<std::vector<std::uint64_t>>("seeds");
  sc.k = c.get<int>("k");
  sc.pretrain_epochs = c.get<int>("pretrain_epochs");
  sc.joint_epochs = c.get<int>("joint_epochs");
  sc.batch_size = c.get<int>("batch_size");
  sc.log = c.log;
  const auto rows = dec::latent_sweep(images, truth, sc);
  std::ostringstream os;
  dec::write_sweep_csv(os, rows);
  save_text(c.output("sweep.csv"), os.str());
  c.wrote(c.output("sweep.csv"));
  std::map<std::uint64_t, plot::Line> lines;
  for (const auto& r : rows) {
    auto& l = lines[r.seed];
    l.name = "seed " + std::to_string(r.seed);
    l.x.push_back(r.latent_dim);
    l.y.push_back(r.accuracy);
  }
  std::vector<plot::Line> v;
  for (auto& [s, l] : lines) v.push_back(std::move(l));
  plot::timeseries(c.output("sweep_plot"), v, "accuracy vs latent dimension", "latent dimension P");
  c.wrote_plot(c.output("sweep_plot"));
}

// eval -------------------------------------------------------------------

void cmd_eval(const Context& c) {
  const auto pred = read_labels_csv(c.input("pred"));
  const auto truth = read_labels_csv(c.input("truth"));
  std::map<std::string, int> by_id;
  for (std::size_t i = 0; i < truth.event_ids.size(); ++i) by_id[truth.event_ids[i]] = truth.labels[i];
  std::vector<int> p, t;
  for (std::size_t i = 0; i < pred.event_ids.size(); ++i) {
    const auto it = by_id.find(pred.event_ids[i]);
    if (it == by_id.end()) throw DataError("eval: event " + pred.event_ids[i] + " has no truth label");
    p.push_back(pred.labels[i]);
    t.push_back(it->second);
  }
  if (p.empty()) throw DataError("eval: no labelled events");
  int k = c.get<int>("k");
  for (int v : p) k = std::max(k, v + 1);
  for (int v : t) k = std::max(k, v + 1);
  const auto report = c.get<bool>("align") ? cluster::evaluate_aligned(p, t, k, c.get<int>("positive"))
                                           : cluster::evaluate(p, t, k, c.get<int>("positive"));
  save_text(c.output("eval.json"), cluster::to_json(report).dump(2) + "\n");
  c.wrote(c.output("eval.json"));
  c.say("accuracy " + detail::fmt_double(report.accuracy));
}

// plot -------------------------------------------------------------------

void plot_fig1(const Context& c) {
  const auto seed = c.seed();
  const std::size_t n = c.get<std::size_t>("n_per_cluster");
  json summary;
  for (int d : {1, 2}) {
    auto spec = cluster::fig1_spec(d);
    spec.n_per_cluster = n;
    const auto pts = cluster::gen_gaussian_clusters(spec, seed);
    const auto mix = spec.mixture();
    const auto km = cluster::kmeans(pts.points, 3, seed);
    const auto perm = cluster::align_labels(km.labels, pts.labels, 3);
    const auto km_aligned = cluster::apply_permutation(km.labels, perm);
    std::size_t agree = 0;
    for (Eigen::Index i = 0; i < pts.points.rows(); ++i)
      agree += cluster::gaussian_ml_classify(pts.points.row(i).transpose(), mix) == km_aligned[static_cast<std::size_t>(i)];
    plot::RegionMap regions;
    regions.x_min = -10, regions.x_max = 30, regions.y_min = -18, regions.y_max = 12;
    const std::size_t g = 120;
    regions.labels = Grid<int>(g, g);
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t col = 0; col < g; ++col) {
        const Eigen::Vector2d x(regions.x_min + (regions.x_max - regions.x_min) * (col + 0.5) / g,
                                regions.y_min + (regions.y_max - regions.y_min) * (r + 0.5) / g);
        regions.labels(r, col) = cluster::gaussian_ml_classify(x, mix);
      }
    std::vector<double> x, y;
    for (Eigen::Index i = 0; i < pts.points.rows(); ++i) x.push_back(pts.points(i, 0)), y.push_back(pts.points(i, 1));
    const std::string base = "fig1_dataset" + std::to_string(d);
    plot::scatter2d(c.output(base), x, y, km_aligned, "dataset " + std::to_string(d) + ": K-means labels, ML regions", regions);
    c.wrote_plot(c.output(base));
    summary["dataset" + std::to_string(d)] = {{"kmeans_ml_agreement", static_cast<double>(agree) / static_cast<double>(x.size())}};
  }
  save_text(c.output("fig1_summary.json"), summary.dump(2) + "\n");
  c.wrote(c.output("fig1_summary.json"));
}

void plot_signals(const Context& c) {
  sim::FmSweepParams fm;
  fm.delta_f = c.get<double>("delta_f");
  fm.snr_db = 25.0;
  sim::PulseTrainParams pt;
  pt.n_peaks = 5;
  pt.snr_db = 25.0;
  const auto seed = c.seed();
  const auto whale = sim::add_noise_snr(sim::gen_fm_sweep(fm), fm.snr_db, sim::signal_power(fm), derive_seed(seed, 8, 0));
  const auto fish = sim::add_noise_snr(sim::gen_pulse_train(pt), pt.snr_db, sim::signal_power(pt), derive_seed(seed, 8, 1));
  for (const auto& [name, ts] : {std::pair{"whale", whale}, std::pair{"fish", fish}}) {
    plot::Line line{name, {}, ts.samples};
    for (std::size_t i = 0; i < ts.size(); ++i) line.x.push_back(ts.t_start + static_cast<double>(i) / ts.fs);
    const std::string b = std::string("signal_") + name;
    plot::timeseries(c.output(b + "_timeseries"), {line}, std::string(name) + " waveform");
    c.wrote_plot(c.output(b + "_timeseries"));
    const auto spec = dsp::stft(ts, features::sim_stft_config());
    Grid<double> db = spec.power();
    for (double& v : db.data()) v = 10.0 * std::log10(v + 1e-20);
    plot::spectrogram(c.output(b + "_spectrogram"), db, spec.df, spec.dt, spec.t_start, std::string(name) + " spectrogram");
    c.wrote_plot(c.output(b + "_spectrogram"));
  }
}

void plot_levels(const Context& c) {
  const auto m = load_features(c, "features");
  std::ifstream is(c.input("events"));
  std::map<std::string, double> t1;
  for (const auto& e : detect::read_events_jsonl(is)) t1[e.event_id] = e.t1;
  std::vector<double> times;
  for (const auto& id : m.event_ids) {
    const auto it = t1.find(id);
    if (it == t1.end()) throw DataError("levels: event " + id + " missing from the events file");
    times.push_back(it->second);
  }
  std::vector<std::vector<double>> cols(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j)
    for (std::size_t i = 0; i < m.rows(); ++i) cols[j].push_back(m.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  plot::feature_levels(c.output("feature_levels"), m.columns, times, cols, c.get<double>("bin_seconds"));
  c.wrote_plot(c.output("feature_levels"));
}

void plot_scatter(const Context& c) {
  const auto m = load_features(c, "features");
  if (m.cols() < 2) throw DataError("scatter needs at least two columns");
  std::vector<int> labels = m.labels;
  if (c.cfg.contains("labels") && !c.cfg.at("labels").is_null()) labels = read_labels_csv(c.input("labels")).labels;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < m.rows(); ++i) x.push_back(m.values(static_cast<Eigen::Index>(i), 0)), y.push_back(m.values(static_cast<Eigen::Index>(i), 1));
  plot::scatter2d(c.output("scatter"), x, y, labels, m.columns[0] + " vs " + m.columns[1]);
  c.wrote_plot(c.output("scatter"));
}

void cmd_plot(const Context& c) {
  const auto fig = c.get<std::string>("figure");
  if (fig == "fig1") plot_fig1(c);
  else if (fig == "signals") plot_signals(c);
  else if (fig == "levels") plot_levels(c);
  else if (fig == "scatter") plot_scatter(c);
  else throw ConfigError("figure must be fig1, signals, levels or scatter");
}

using Handler = void (*)(const Context&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h{
      {"simulate", cmd_simulate},         {"detect", cmd_detect},       {"features", cmd_features},
      {"cluster", cmd_cluster},           {"tsne", cmd_tsne},           {"dec-pretrain", cmd_dec_pretrain},
      {"dec-train", cmd_dec_train},       {"dec-assign", cmd_dec_assign}, {"dec-sweep", cmd_dec_sweep},
      {"eval", cmd_eval},                 {"plot", cmd_plot}};
  return h;
}

}  // namespace

std::vector<std::string> commands() {
  std::vector<std::string> out;
  for (const auto& [name, h] : handlers()) out.push_back(name);
  return out;
}

json default_config(const std::string& command) {
  json d = {{"out_dir", "."}};
  if (command == "simulate") {
    d.update({{"n", 2000}, {"classes", 2}, {"whale_fraction", 0.5}, {"scene", false}, {"scene_duration", 600.0},
              {"scene_sources", 20}, {"snr_db", 20.0}, {"clock_offset", 0.0}, {"encoding", "float32"}, {"full_scale", 1.0}});
  } else if (command == "detect") {
    d.update({{"channel_map", {0, 1, 2}}, {"full_scale", 1.0}, {"sector_width", 90.0}, {"threshold", 120.0},
              {"merge_gap", 1}, {"max_duration", 2.0}, {"spatial_box", 100.0}, {"chunk_seconds", 300.0},
              {"clock", "estimate"}, {"standardize", true}});
  } else if (command == "features") {
    d.update({{"standardize", true}, {"channel_map", {0, 1, 2}}, {"full_scale", 1.0}});
  } else if (command == "cluster") {
    d.update({{"method", "kmeans"}, {"k", 2}});
  } else if (command == "tsne") {
    d.update({{"perplexity", 30.0}, {"n_iter", 1000}, {"learning_rate", 200.0}, {"exaggerate", false}});
  } else if (command == "dec-pretrain") {
    d.update({{"latent_dim", 10}, {"k", 2}, {"epochs", 1000}, {"batch_size", 256}, {"learning_rate", 1e-3}});
  } else if (command == "dec-train") {
    d.update({{"epochs", 20}, {"batch_size", 256}, {"w_kl", 0.1}, {"w_mse", 0.9}, {"learning_rate", 1e-3}});
  } else if (command == "dec-sweep") {
    d.update({{"latent_dims", {2, 4, 6, 8, 10, 12, 16}}, {"seeds", {1}}, {"k", 2}, {"pretrain_epochs", 200},
              {"joint_epochs", 20}, {"batch_size", 256}});
  } else if (command == "eval") {
    d.update({{"k", 2}, {"positive", 0}, {"align", true}});
  } else if (command == "plot") {
    d.update({{"figure", "fig1"}, {"n_per_cluster", 6666}, {"delta_f", 100.0}, {"bin_seconds", 900.0}});
  } else if (command != "dec-assign") {
    throw ConfigError("unknown command '" + command + "'");
  }
  return d;
}

io::RunManifest run_pipeline(const std::string& command, const json& cfg, const Logger& log) {
  const auto it = handlers().find(command);
  if (it == handlers().end()) throw ConfigError("unknown command '" + command + "'");
  io::RunManifest manifest;
  manifest.tool_version = kToolVersion;
  manifest.command = command;
  manifest.config = cfg;
  Context ctx{cfg, manifest, log, fs::path(cfg.value("out_dir", "."))};
  fs::create_directories(ctx.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    it->second(ctx);
  } catch (const ConfigError& e) {
    throw ConfigError(command + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(command + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(command + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(command + ": " + e.what());
  }
  manifest.timings.emplace_back(command, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  manifest.write(ctx.out_dir / "manifest.json");
  return manifest;
}

LabelsFile read_labels_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || detail::split_csv_line(line) != std::vector<std::string>{"event_id", "label"})
    throw DataError(path.string() + ": expected header event_id,label");
  LabelsFile out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 2) throw DataError(path.string() + ": malformed row");
    out.event_ids.push_back(cells[0]);
    try {
      out.labels.push_back(std::stoi(cells[1]));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": non-integer label");
    }
  }
  return out;
}

}  // namespace reefclust::pipeline
