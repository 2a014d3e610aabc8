#include "sparselabel/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <stdexcept>

#include "sparselabel/image_io.hpp"
#include "sparselabel/rng.hpp"

namespace fs = std::filesystem;

namespace sparselabel {

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument("unknown config key '" + where + "." + key + "'");
    }
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const char* format_name(LabelFormat f) {
  switch (f) {
    case LabelFormat::boundary:
      return "boundary";
    case LabelFormat::indexed:
      return "indexed";
    case LabelFormat::channels:
      return "channels";
  }
  return "boundary";
}

LabelFormat parse_format(const std::string& s) {
  if (s == "boundary") return LabelFormat::boundary;
  if (s == "indexed") return LabelFormat::indexed;
  if (s == "channels") return LabelFormat::channels;
  throw std::invalid_argument("unknown label format '" + s + "'");
}

ImageGrid max_channel(const ImageGrid& img) {
  ImageGrid out(img.width(), img.height(), 1);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    double v = 0.0;
    for (int c = 0; c < img.channels(); ++c) v = std::max(v, img.data()[p * img.channels() + c]);
    out.data()[p] = v;
  }
  return out;
}

std::vector<ImageGrid> load_images(const std::vector<ManifestEntry>& entries) {
  std::vector<ImageGrid> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(read_image(e.image));
  return out;
}

void append_pairs(LabelPatchSet& into, LabelPatchSet&& from) {
  if (into.codes.empty()) {
    into = std::move(from);
    return;
  }
  if (into.side != from.side || into.channels != from.channels || into.feature_dim != from.feature_dim) {
    throw std::logic_error("inconsistent training pair sets");
  }
  std::move(from.codes.begin(), from.codes.end(), std::back_inserter(into.codes));
  into.patches.insert(into.patches.end(), from.patches.begin(), from.patches.end());
}

bool has_positive(const ImageGrid& target) {
  return std::any_of(target.data().begin(), target.data().end(), [](double v) { return v > 0.5; });
}

ModelBundle load_bundle_dictionaries(const fs::path& dir, const RunConfig& cfg) {
  ModelBundle b = load_bundle(dir);
  if (!(b.network == cfg.network)) throw std::invalid_argument("bundle network differs from the configured network");
  return b;
}

}  // namespace

std::vector<ManifestEntry> Manifest::split(const std::string& tag) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == tag) out.push_back(e);
  }
  return out;
}

void Manifest::validate() const {
  std::set<fs::path> train, test;
  for (const auto& e : entries) {
    if (e.split != "train" && e.split != "test") throw std::invalid_argument("invalid split tag '" + e.split + "'");
    if (!fs::exists(e.image)) throw std::runtime_error("missing image " + e.image.string());
    for (const auto& t : e.truths) {
      if (!fs::exists(t)) throw std::runtime_error("missing truth " + t.string());
    }
    (e.split == "train" ? train : test).insert(fs::weakly_canonical(e.image));
  }
  for (const auto& p : train) {
    if (test.count(p)) throw std::invalid_argument("image appears in both splits: " + p.string());
  }
}

Manifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  check_keys(j, {"root", "entries"}, "manifest");
  Manifest m;
  m.root = base_dir / fs::path(j.value("root", std::string(".")));
  for (const auto& ej : j.at("entries")) {
    check_keys(ej, {"image", "truths", "split"}, "manifest.entries[]");
    ManifestEntry e;
    e.image = m.root / fs::path(ej.at("image").get<std::string>());
    if (ej.contains("truths")) {
      for (const auto& t : ej.at("truths")) e.truths.push_back(m.root / fs::path(t.get<std::string>()));
    }
    e.split = ej.value("split", std::string("train"));
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

Manifest load_manifest(const fs::path& path) { return manifest_from_json(read_json(path), path.parent_path()); }

void RunConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  network.validate();
  training.ksvd.validate();
  if (training.samples_per_dictionary < 1) throw std::invalid_argument("samples_per_dictionary must be >= 1");
  if (transfer.side < 1 || transfer.side % 2 == 0) throw std::invalid_argument("transfer side must be odd");
  if (transfer.samples < 1) throw std::invalid_argument("transfer samples must be >= 1");
  if (transfer.drop_fraction < 0.0 || transfer.drop_fraction >= 1.0) {
    throw std::invalid_argument("drop fraction must lie in [0, 1)");
  }
  if (transfer.positive_fraction < 0.0 || transfer.positive_fraction > 1.0) {
    throw std::invalid_argument("positive fraction must lie in [0, 1]");
  }
  if (transfer.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (labels.format == LabelFormat::indexed && labels.classes < 1) throw std::invalid_argument("classes must be >= 1");
  match.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  check_keys(j, {"seed", "workers", "network", "dictionary_training", "transfer", "labels", "match"}, "config");
  RunConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.workers = j.value("workers", 1);
  if (!j.contains("network")) throw std::invalid_argument("config needs a network");
  const auto& nj = j.at("network");
  cfg.network = nj.is_string() ? load_network_spec(base_dir / nj.get<std::string>()) : network_spec_from_json(nj);
  if (j.contains("dictionary_training")) {
    const auto& d = j.at("dictionary_training");
    check_keys(d, {"samples_per_dictionary", "lambda", "iterations", "replace_unused_atoms", "min_relative_improvement"},
               "dictionary_training");
    cfg.training.samples_per_dictionary = d.value("samples_per_dictionary", cfg.training.samples_per_dictionary);
    cfg.training.ksvd.lambda = d.value("lambda", cfg.training.ksvd.lambda);
    cfg.training.ksvd.iterations = d.value("iterations", cfg.training.ksvd.iterations);
    cfg.training.ksvd.replace_unused_atoms = d.value("replace_unused_atoms", cfg.training.ksvd.replace_unused_atoms);
    cfg.training.ksvd.min_relative_improvement =
        d.value("min_relative_improvement", cfg.training.ksvd.min_relative_improvement);
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    check_keys(t,
               {"side", "sigma", "schedule", "reg_strength", "drop_fraction", "samples", "positive_fraction",
                "max_iterations"},
               "transfer");
    auto& tr = cfg.transfer;
    tr.side = t.value("side", tr.side);
    tr.sigma = t.value("sigma", tr.sigma);
    if (t.contains("schedule")) {
      for (const auto& s : t.at("schedule")) {
        tr.schedule.push_back({s.at("radius").get<double>(), s.at("keep_fraction").get<double>()});
      }
    }
    tr.reg_strength = t.value("reg_strength", tr.reg_strength);
    tr.drop_fraction = t.value("drop_fraction", tr.drop_fraction);
    tr.samples = t.value("samples", tr.samples);
    tr.positive_fraction = t.value("positive_fraction", tr.positive_fraction);
    tr.max_iterations = t.value("max_iterations", tr.max_iterations);
  }
  if (j.contains("labels")) {
    const auto& l = j.at("labels");
    check_keys(l, {"format", "classes"}, "labels");
    cfg.labels.format = parse_format(l.value("format", std::string("boundary")));
    cfg.labels.classes = l.value("classes", cfg.labels.classes);
  }
  if (j.contains("match")) {
    const auto& m = j.at("match");
    check_keys(m, {"max_dist", "threshold_count"}, "match");
    cfg.match.max_dist = m.value("max_dist", cfg.match.max_dist);
    cfg.match.threshold_count = m.value("threshold_count", cfg.match.threshold_count);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json(path), path.parent_path()); }

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["network"] = network_spec_to_json(cfg.network);
  j["dictionary_training"] = {{"samples_per_dictionary", cfg.training.samples_per_dictionary},
                              {"lambda", cfg.training.ksvd.lambda},
                              {"iterations", cfg.training.ksvd.iterations},
                              {"replace_unused_atoms", cfg.training.ksvd.replace_unused_atoms},
                              {"min_relative_improvement", cfg.training.ksvd.min_relative_improvement}};
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& s : cfg.transfer.schedule) schedule.push_back({{"radius", s.radius}, {"keep_fraction", s.keep_fraction}});
  j["transfer"] = {{"side", cfg.transfer.side},
                   {"sigma", cfg.transfer.sigma},
                   {"schedule", schedule},
                   {"reg_strength", cfg.transfer.reg_strength},
                   {"drop_fraction", cfg.transfer.drop_fraction},
                   {"samples", cfg.transfer.samples},
                   {"positive_fraction", cfg.transfer.positive_fraction},
                   {"max_iterations", cfg.transfer.max_iterations}};
  j["labels"] = {{"format", format_name(cfg.labels.format)}, {"classes", cfg.labels.classes}};
  j["match"] = {{"max_dist", cfg.match.max_dist}, {"threshold_count", cfg.match.threshold_count}};
  return j;
}

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(run_config_to_json(cfg).dump())); }

ImageGrid load_training_target(const ManifestEntry& entry, const LabelConfig& labels) {
  if (entry.truths.empty()) throw std::invalid_argument("missing truth paths for " + entry.image.string());
  switch (labels.format) {
    case LabelFormat::boundary: {
      const auto humans = load_boundary_truths(entry);
      ImageGrid mean(humans[0].width(), humans[0].height(), 1);
      for (const auto& h : humans) {
        if (h.width() != mean.width() || h.height() != mean.height()) {
          throw std::runtime_error("human maps differ in size for " + entry.image.string());
        }
        for (std::size_t i = 0; i < mean.data().size(); ++i) mean.data()[i] += h.data()[i] / humans.size();
      }
      return mean;
    }
    case LabelFormat::indexed:
      return read_label_indexed(entry.truths[0], labels.classes);
    case LabelFormat::channels:
      return read_label_channels(entry.truths);
  }
  throw std::logic_error("unhandled label format");
}

std::vector<ImageGrid> load_boundary_truths(const ManifestEntry& entry) {
  if (entry.truths.empty()) throw std::invalid_argument("missing truth paths for " + entry.image.string());
  std::vector<ImageGrid> out;
  for (const auto& t : entry.truths) {
    ImageGrid m = max_channel(read_image(t));
    for (double& v : m.data()) v = v > 0.5 ? 1.0 : 0.0;
    out.push_back(std::move(m));
  }
  return out;
}

DictionarySet train_dictionaries(const std::vector<ImageGrid>& images, const RunConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("empty training split");
  NetworkTrainingConfig t = cfg.training;
  t.ksvd.seed = derive_seed(cfg.seed, "dictionaries");
  t.ksvd.workers = cfg.workers;
  return train_network_dictionaries(images, cfg.network, t);
}

TransferModel train_transfer_stage(const std::vector<ImageGrid>& images, const std::vector<ImageGrid>& targets,
                                   const NetworkSpec& spec, const DictionarySet& dicts, const RunConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("empty training split");
  if (images.size() != targets.size()) throw std::invalid_argument("every training image needs a target");
  const bool balance = cfg.labels.format == LabelFormat::boundary && cfg.transfer.positive_fraction > 0.0;
  if (balance && std::none_of(targets.begin(), targets.end(), has_positive)) {
    throw std::invalid_argument("no positive samples");
  }
  const std::size_t per_image = (cfg.transfer.samples + images.size() - 1) / images.size();
  LabelPatchSet data;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const FeatureStack stack = forward(images[i], spec, dicts, cfg.workers);
    SamplingConfig s;
    s.count = per_image;
    s.positive_fraction = balance && has_positive(targets[i]) ? cfg.transfer.positive_fraction : 0.0;
    s.seed = derive_seed(cfg.seed, "transfer/pairs", i);
    append_pairs(data, sample_training_pairs({&stack}, {&targets[i]}, cfg.transfer.side, s));
  }
  TransferConfig tc;
  tc.side = cfg.transfer.side;
  tc.sigma = cfg.transfer.sigma;
  tc.schedule = cfg.transfer.schedule;
  tc.reg_strength = cfg.transfer.reg_strength;
  tc.drop_fraction = cfg.transfer.drop_fraction;
  tc.solver.max_iterations = cfg.transfer.max_iterations;
  tc.seed = derive_seed(cfg.seed, "transfer/masks");
  tc.workers = cfg.workers;
  return train_transfer(data, tc);
}

ImageGrid infer_labels(const ImageGrid& image, const NetworkSpec& spec, const DictionarySet& dicts,
                       const TransferModel& model, int workers) {
  return predict_labeling(forward(image, spec, dicts, workers), model, workers);
}

void save_bundle(const fs::path& dir, const ModelBundle& bundle) {
  fs::create_directories(dir / "dictionaries");
  nlohmann::json j;
  j["format"] = "sparselabel-bundle";
  j["network"] = network_spec_to_json(bundle.network);
  j["dictionaries"] = nlohmann::json::object();
  for (const auto& [name, dict] : bundle.dictionaries) {
    const std::string rel = "dictionaries/" + name + ".sldc";
    save_dictionary(dir / rel, dict);
    j["dictionaries"][name] = {{"file", rel}, {"fingerprint", hex64(dict.fingerprint())}};
  }
  if (bundle.transfer) {
    save_transfer_model(dir / "transfer.sltm", *bundle.transfer);
    j["transfer"] = "transfer.sltm";
  } else {
    j["transfer"] = nullptr;
    fs::remove(dir / "transfer.sltm");
  }
  j["config"] = bundle.config;
  j["provenance"] = bundle.provenance;
  write_json(dir / "bundle.json", j);
}

ModelBundle load_bundle(const fs::path& dir) {
  const nlohmann::json j = read_json(dir / "bundle.json");
  if (j.value("format", std::string()) != "sparselabel-bundle") {
    throw std::runtime_error("not a model bundle: " + dir.string());
  }
  ModelBundle b;
  b.network = network_spec_from_json(j.at("network"));
  b.config = j.at("config");
  b.provenance = j.at("provenance");
  const RunConfig cfg = run_config_from_json(b.config, dir);
  if (config_hash(cfg) != b.provenance.at("config_hash").get<std::string>()) {
    throw std::runtime_error("bundle config hash does not match its config");
  }
  for (const auto* layer : {&b.network.layer1, &b.network.layer2}) {
    for (const auto& p : *layer) {
      if (!j.at("dictionaries").contains(p.name)) throw std::runtime_error("bundle lacks dictionary '" + p.name + "'");
      const auto& dj = j.at("dictionaries").at(p.name);
      Dictionary d = load_dictionary(dir / dj.at("file").get<std::string>());
      if (hex64(d.fingerprint()) != dj.at("fingerprint").get<std::string>()) {
        throw std::runtime_error("dictionary '" + p.name + "' does not match its recorded fingerprint");
      }
      b.dictionaries[p.name] = std::move(d);
    }
  }
  if (j.contains("transfer") && !j.at("transfer").is_null()) {
    b.transfer = load_transfer_model(dir / j.at("transfer").get<std::string>());
    if (b.transfer->feature_dim != b.network.feature_dim() + 1) {
      throw std::runtime_error("transfer model does not match the bundle network");
    }
  }
  return b;
}

std::string bundle_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& f : files) {
    const std::string name = f.generic_string();
    h = fnv1a64(name.data(), name.size(), h);
    std::ifstream in(dir / f, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return hex64(h);
}

ImageGrid atom_mosaic(const Dictionary& dict) {
  const int m = dict.geometry.side;
  const int c = dict.geometry.channels;
  const int L = dict.atom_count();
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(L))));
  const int rows = (L + cols - 1) / cols;
  const int out_c = c == 3 ? 3 : 1;
  ImageGrid img(cols * (m + 1) + 1, rows * (m + 1) + 1, out_c, 0.5);
  for (int k = 0; k < L; ++k) {
    const auto atom = dict.atoms.col(k);
    const int ox = 1 + (k % cols) * (m + 1);
    const int oy = 1 + (k / cols) * (m + 1);
    double peak = 1e-12;
    for (int i = 0; i < dict.dim(); ++i) peak = std::max(peak, std::abs(atom[i]));
    for (int dy = 0; dy < m; ++dy) {
      for (int dx = 0; dx < m; ++dx) {
        const int base = (dy * m + dx) * c;
        if (out_c == 3) {
          for (int ch = 0; ch < 3; ++ch) img.at(ox + dx, oy + dy, ch) = 0.5 + 0.5 * atom[base + ch] / peak;
        } else if (c == 1) {
          img.at(ox + dx, oy + dy, 0) = 0.5 + 0.5 * atom[base] / peak;
        } else {
          double e = 0.0;
          for (int ch = 0; ch < c; ++ch) e += atom[base + ch] * atom[base + ch];
          img.at(ox + dx, oy + dy, 0) = std::sqrt(e) / (peak * std::sqrt(static_cast<double>(c)));
        }
      }
    }
  }
  return img;
}

void cmd_train_dicts(const fs::path& manifest, const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Manifest m = load_manifest(manifest);
  const auto train = m.split("train");
  if (train.empty()) throw std::invalid_argument("empty training split");
  ModelBundle b;
  b.network = cfg.network;
  b.dictionaries = train_dictionaries(load_images(train), cfg);
  b.config = run_config_to_json(cfg);
  b.provenance = {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"tool_version", kToolVersion}};
  save_bundle(out, b);
}

void cmd_train_transfer(const fs::path& manifest, const RunConfig& cfg, const fs::path& bundle_dir, const fs::path& out) {
  cfg.validate();
  const Manifest m = load_manifest(manifest);
  const auto train = m.split("train");
  if (train.empty()) throw std::invalid_argument("empty training split");
  std::vector<ImageGrid> targets;
  for (const auto& e : train) targets.push_back(load_training_target(e, cfg.labels));
  ModelBundle b = load_bundle_dictionaries(bundle_dir, cfg);
  b.transfer = train_transfer_stage(load_images(train), targets, b.network, b.dictionaries, cfg);
  b.config = run_config_to_json(cfg);
  b.provenance = {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"tool_version", kToolVersion}};
  save_bundle(out, b);
}

void cmd_infer(const std::vector<fs::path>& images, const fs::path& bundle_dir, const fs::path& out, int workers) {
  const ModelBundle b = load_bundle(bundle_dir);
  if (!b.transfer) throw std::invalid_argument("bundle has no transfer model; run train-transfer first");
  fs::create_directories(out);
  for (const auto& path : images) {
    const ImageGrid pred = infer_labels(read_image(path), b.network, b.dictionaries, *b.transfer, workers);
    const std::string stem = path.stem().string();
    write_raw_f32(out / (stem + ".f32"), pred);
    if (pred.channels() == 1 || pred.channels() == 3) write_png(out / (stem + ".png"), pred);
    if (pred.channels() == 1) write_png(out / (stem + "_thin.png"), nms_thin(pred));
    if (pred.channels() > 1) {
      ImageGrid labels(pred.width(), pred.height(), 1);
      for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
          const auto p = pred.pixel(x, y);
          labels.at(x, y, 0) = static_cast<double>(std::max_element(p.begin(), p.end()) - p.begin()) /
                               std::max(1, pred.channels() - 1);
        }
      }
      write_png(out / (stem + "_labels.png"), labels);
    }
  }
}

BenchmarkOutcome cmd_benchmark(const fs::path& manifest, const std::optional<fs::path>& bundle_dir,
                               const std::optional<fs::path>& detections, const RunConfig& cfg, const fs::path& out) {
  const Manifest m = load_manifest(manifest);
  const auto test = m.split("test");
  if (test.empty()) throw std::invalid_argument("empty test split");
  if (!bundle_dir && !detections) throw std::invalid_argument("benchmark needs a bundle or a detection directory");
  std::optional<ModelBundle> b;
  if (!detections) {
    b = load_bundle(*bundle_dir);
    if (!b->transfer) throw std::invalid_argument("bundle has no transfer model; run train-transfer first");
  }
  auto predict = [&](const ManifestEntry& e) {
    if (b) return infer_labels(read_image(e.image), b->network, b->dictionaries, *b->transfer, cfg.workers);
    const fs::path f32 = *detections / (e.image.stem().string() + ".f32");
    return fs::exists(f32) ? read_raw_f32(f32) : read_image(*detections / (e.image.stem().string() + ".png"));
  };
  fs::create_directories(out);
  BenchmarkOutcome outcome;
  if (cfg.labels.format == LabelFormat::boundary) {
    std::vector<BoundaryImage> items;
    for (const auto& e : test) {
      ImageGrid det = max_channel(predict(e));
      // Maps from a detection directory are taken as already thinned.
      if (b) det = nms_thin(det);
      items.push_back({std::move(det), load_boundary_truths(e)});
    }
    const PRCurve curve = evaluate_boundaries(items, cfg.match, cfg.workers);
    write_pr_csv(out / "pr.csv", curve);
    write_json(out / "summary.json", pr_summary_json(curve));
    write_png(out / "pr.png", render_pr_plot(curve));
    outcome.boundaries = curve;
  } else {
    SegmentationReport report;
    for (const auto& e : test) report.add(predict(e), load_training_target(e, cfg.labels));
    report.finalize();
    write_json(out / "segmentation.json", {{"overall_accuracy", report.overall_accuracy},
                                           {"per_class_accuracy", report.per_class_accuracy},
                                           {"confusion", report.confusion},
                                           {"pixels", report.pixels}});
    outcome.segmentation = report;
  }
  return outcome;
}

void cmd_inspect(const fs::path& source, const fs::path& out) {
  fs::create_directories(out);
  if (fs::is_directory(source)) {
    const ModelBundle b = load_bundle(source);
    for (const auto& [name, dict] : b.dictionaries) write_png(out / (name + "_atoms.png"), atom_mosaic(dict));
    nlohmann::json info;
    info["feature_dim"] = b.network.feature_dim();
    info["dictionaries"] = nlohmann::json::object();
    for (const auto& [name, dict] : b.dictionaries) {
      info["dictionaries"][name] = {{"atoms", dict.atom_count()},
                                    {"sparsity", dict.sparsity},
                                    {"side", dict.geometry.side},
                                    {"channels", dict.geometry.channels},
                                    {"coherence_penalty", coherence_penalty(dict)}};
    }
    if (b.transfer) {
      info["transfer"] = {{"side", b.transfer->side},
                          {"channels", b.transfer->channels},
                          {"kernel_samples", b.transfer->kernel.size()},
                          {"classifiers", b.transfer->classifiers.size()}};
    }
    write_json(out / "inspect.json", info);
  } else {
    const Dictionary d = load_dictionary(source);
    write_png(out / (source.stem().string() + "_atoms.png"), atom_mosaic(d));
  }
}

}  // namespace sparselabel
