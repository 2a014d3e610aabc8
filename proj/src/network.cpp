#include "sparselabel/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "sparselabel/parallel.hpp"
#include "sparselabel/rng.hpp"

namespace sparselabel {

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct ScaledImage {
  std::size_t image = 0;
  ImageGrid grid;
};

std::vector<ScaledImage> usable_scaled_images(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec) {
  std::vector<ScaledImage> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (double s : spec.scales) {
      if (scale_skipped(spec, corpus[i].width(), corpus[i].height(), s)) continue;
      out.push_back({i, rescale(corpus[i], s)});
    }
  }
  return out;
}

// Uniform draw of `count` (grid, pixel) locations; without replacement when
// enough pixels exist.
std::vector<std::pair<std::size_t, std::size_t>> sample_locations(const std::vector<std::size_t>& pixel_counts,
                                                                  std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> prefix(pixel_counts.size() + 1, 0);
  for (std::size_t i = 0; i < pixel_counts.size(); ++i) prefix[i + 1] = prefix[i] + pixel_counts[i];
  const std::size_t total = prefix.back();
  if (total == 0) throw std::invalid_argument("no pixels available for patch sampling");
  Rng rng(seed);
  std::vector<std::size_t> flat;
  if (count <= total) {
    flat = sample_without_replacement(rng, total, count);
  } else {
    flat.resize(count);
    for (auto& f : flat) f = static_cast<std::size_t>(uniform_index(rng, total));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(flat.size());
  for (std::size_t f : flat) {
    const auto it = std::upper_bound(prefix.begin(), prefix.end(), f);
    const auto g = static_cast<std::size_t>(it - prefix.begin()) - 1;
    out.emplace_back(g, f - prefix[g]);
  }
  return out;
}

PatchMatrix gather_patches(const std::vector<const ImageGrid*>& grids, const std::vector<std::size_t>& image_ids,
                           const PatchGeometry& geom, bool zero_mean, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> counts;
  for (const auto* g : grids) counts.push_back(g->pixel_count());
  const auto locations = sample_locations(counts, count, seed);
  PatchMatrix pm;
  pm.geometry = geom;
  pm.columns.resize(geom.dim(), static_cast<Eigen::Index>(locations.size()));
  pm.origins.reserve(locations.size());
  for (std::size_t j = 0; j < locations.size(); ++j) {
    const auto [g, p] = locations[j];
    const ImageGrid& grid = *grids[g];
    const int x = static_cast<int>(p % grid.width());
    const int y = static_cast<int>(p / grid.width());
    std::span<double> col(pm.columns.col(static_cast<Eigen::Index>(j)).data(), static_cast<std::size_t>(geom.dim()));
    extract_patch_into(grid, x, y, geom, col);
    if (zero_mean) zero_mean_patch_inplace(col, geom.channels);
    pm.origins.push_back({static_cast<std::uint32_t>(image_ids[g]), x, y});
  }
  return pm;
}

// Rectified layer-1 activations of `path` pooled for layer 2, as a dense grid.
ImageGrid pooled_input(const ImageGrid& scaled, const PathSpec& path, const Dictionary& dict, const GramCache& cache,
                       int workers) {
  const SparseCodeMap pooled = pool_hybrid_avg_max(rectify(encode_image(scaled, dict, cache, workers)), *path.pool);
  return to_dense(pooled);
}

void check_dictionary(const PathSpec& path, const Dictionary& dict) {
  if (dict.geometry != path.geometry || dict.atom_count() != path.atoms || dict.sparsity != path.sparsity ||
      dict.zero_mean_input != path.zero_mean) {
    throw std::invalid_argument("dictionary for path '" + path.name + "' does not match the network spec geometry");
  }
}

void path_from_json(const nlohmann::json& j, PathSpec& p, bool layer2) {
  p.name = j.at("name").get<std::string>();
  p.geometry.side = j.at("side").get<int>();
  p.geometry.channels = j.value("channels", 0);
  p.atoms = j.at("atoms").get<int>();
  p.sparsity = j.at("sparsity").get<int>();
  p.zero_mean = j.value("zero_mean", false);
  p.dictionary_file = j.value("dictionary", std::string());
  if (layer2) {
    p.source = j.at("source").get<std::string>();
  } else if (j.contains("pool") && !j.at("pool").is_null()) {
    p.pool = PoolSpec{j.at("pool").at("window").get<int>(), j.at("pool").at("stride").get<int>()};
  }
}

nlohmann::json path_to_json(const PathSpec& p, bool layer2) {
  nlohmann::json j;
  j["name"] = p.name;
  j["side"] = p.geometry.side;
  j["channels"] = p.geometry.channels;
  j["atoms"] = p.atoms;
  j["sparsity"] = p.sparsity;
  j["zero_mean"] = p.zero_mean;
  if (layer2) j["source"] = p.source;
  if (p.pool) j["pool"] = {{"window", p.pool->window}, {"stride", p.pool->stride}};
  if (!p.dictionary_file.empty()) j["dictionary"] = p.dictionary_file;
  return j;
}

}  // namespace

void PoolSpec::validate() const {
  if (stride < 1 || window < stride) throw std::invalid_argument("pool spec requires window >= stride >= 1");
}

int PoolSpec::window_start(int i) const { return i * stride + floor_div(stride - window, 2); }

void NetworkSpec::validate() const {
  if (scales.empty()) throw std::invalid_argument("network spec needs at least one scale");
  for (double s : scales) {
    if (!(s > 0.0) || s > 1.0) throw std::invalid_argument("network scales must lie in (0, 1]");
  }
  if (layer1.empty()) throw std::invalid_argument("network spec needs at least one layer-1 path");
  std::set<std::string> names;
  for (const auto& p : layer1) {
    if (!names.insert(p.name).second) throw std::invalid_argument("duplicate path name '" + p.name + "'");
    p.geometry.validate();
    if (p.atoms < 1 || p.sparsity < 1 || p.sparsity > p.atoms) {
      throw std::invalid_argument("path '" + p.name + "' needs 1 <= K <= L");
    }
    if (p.pool) p.pool->validate();
  }
  for (const auto& p : layer2) {
    if (!names.insert(p.name).second) throw std::invalid_argument("duplicate path name '" + p.name + "'");
    p.geometry.validate();
    if (p.atoms < 1 || p.sparsity < 1 || p.sparsity > p.atoms) {
      throw std::invalid_argument("path '" + p.name + "' needs 1 <= K <= L");
    }
    const auto src = std::find_if(layer1.begin(), layer1.end(), [&](const PathSpec& q) { return q.name == p.source; });
    if (src == layer1.end()) {
      throw std::invalid_argument("layer-2 path '" + p.name + "' references unknown layer-1 path '" + p.source + "'");
    }
    if (!src->pool) {
      throw std::invalid_argument("layer-2 source '" + p.source + "' has no pool spec");
    }
    if (p.geometry.channels != 2 * src->atoms) {
      throw std::invalid_argument("layer-2 path '" + p.name + "' must read 2 * " + std::to_string(src->atoms) +
                                  " rectified channels");
    }
  }
  if (concat.empty()) throw std::invalid_argument("network spec has no concat sources");
  std::set<std::string> seen;
  for (const auto& c : concat) {
    if (!names.count(c)) throw std::invalid_argument("concat source '" + c + "' is not a path");
    if (!seen.insert(c).second) throw std::invalid_argument("concat source '" + c + "' listed twice");
  }
}

const PathSpec& NetworkSpec::path(const std::string& name) const {
  for (const auto& p : layer1) {
    if (p.name == name) return p;
  }
  for (const auto& p : layer2) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown path '" + name + "'");
}

bool NetworkSpec::is_layer1(const std::string& name) const {
  return std::any_of(layer1.begin(), layer1.end(), [&](const PathSpec& p) { return p.name == name; });
}

bool NetworkSpec::feeds_layer2(const std::string& layer1_name) const {
  return std::any_of(layer2.begin(), layer2.end(), [&](const PathSpec& p) { return p.source == layer1_name; });
}

int NetworkSpec::largest_layer1_side() const {
  int m = 1;
  for (const auto& p : layer1) m = std::max(m, p.geometry.side);
  return m;
}

std::vector<FeatureBlock> NetworkSpec::layout() const {
  std::vector<FeatureBlock> blocks;
  std::uint32_t offset = 0;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    for (const auto& c : concat) {
      const auto width = static_cast<std::uint32_t>(2 * path(c).atoms);
      blocks.push_back({s, c, offset, width});
      offset += width;
    }
  }
  return blocks;
}

std::uint32_t NetworkSpec::feature_dim() const {
  std::uint32_t per_scale = 0;
  for (const auto& c : concat) per_scale += static_cast<std::uint32_t>(2 * path(c).atoms);
  return per_scale * static_cast<std::uint32_t>(scales.size());
}

nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["scales"] = spec.scales;
  j["layer1"] = nlohmann::json::array();
  for (const auto& p : spec.layer1) j["layer1"].push_back(path_to_json(p, false));
  j["layer2"] = nlohmann::json::array();
  for (const auto& p : spec.layer2) j["layer2"].push_back(path_to_json(p, true));
  j["concat"] = spec.concat;
  return j;
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.scales = j.at("scales").get<std::vector<double>>();
  for (const auto& pj : j.at("layer1")) {
    PathSpec p;
    path_from_json(pj, p, false);
    if (p.geometry.channels == 0) p.geometry.channels = 3;
    spec.layer1.push_back(std::move(p));
  }
  if (j.contains("layer2")) {
    for (const auto& pj : j.at("layer2")) {
      PathSpec p;
      path_from_json(pj, p, true);
      spec.layer2.push_back(std::move(p));
    }
  }
  // Layer-2 channel count follows from its source when omitted.
  for (auto& p : spec.layer2) {
    if (p.geometry.channels == 0) {
      for (const auto& q : spec.layer1) {
        if (q.name == p.source) p.geometry.channels = 2 * q.atoms;
      }
    }
  }
  spec.concat = j.at("concat").get<std::vector<std::string>>();
  spec.validate();
  return spec;
}

NetworkSpec load_network_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return network_spec_from_json(nlohmann::json::parse(in));
}

void FeatureStack::validate() const {
  SparseCodeMap::validate();
  for (const auto& c : cells) {
    for (double v : c.values) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::logic_error("feature stack holds a non-positive value");
    }
  }
}

SparseVector rectify(const SparseVector& code) {
  SparseVector out;
  out.dim = 2 * code.dim;
  for (std::size_t i = 0; i < code.nnz(); ++i) {
    if (code.values[i] > 0.0) {
      out.indices.push_back(code.indices[i]);
      out.values.push_back(code.values[i]);
    }
  }
  for (std::size_t i = 0; i < code.nnz(); ++i) {
    if (code.values[i] < 0.0) {
      out.indices.push_back(code.dim + code.indices[i]);
      out.values.push_back(-code.values[i]);
    }
  }
  return out;
}

SparseCodeMap rectify(const SparseCodeMap& codes) {
  SparseCodeMap out(codes.width, codes.height, 2 * codes.dim);
  for (std::size_t p = 0; p < codes.cells.size(); ++p) out.cells[p] = rectify(codes.cells[p]);
  return out;
}

SparseCodeMap pool_hybrid_avg_max(const SparseCodeMap& rectified, const PoolSpec& pool) {
  pool.validate();
  for (const auto& c : rectified.cells) {
    for (double v : c.values) {
      if (v < 0.0) throw std::invalid_argument("hybrid pooling expects rectified (nonnegative) input");
    }
  }
  const int ow = ceil_div(rectified.width, pool.stride);
  const int oh = ceil_div(rectified.height, pool.stride);
  SparseCodeMap out(ow, oh, rectified.dim);
  std::vector<double> sum(rectified.dim, 0.0);
  std::vector<int> count(rectified.dim, 0);
  std::vector<std::uint32_t> touched;
  for (int oy = 0; oy < oh; ++oy) {
    const int y0 = std::max(0, pool.window_start(oy));
    const int y1 = std::min(rectified.height, pool.window_start(oy) + pool.window);
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = std::max(0, pool.window_start(ox));
      const int x1 = std::min(rectified.width, pool.window_start(ox) + pool.window);
      touched.clear();
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const auto& c = rectified.at(x, y);
          for (std::size_t i = 0; i < c.nnz(); ++i) {
            const auto k = c.indices[i];
            if (count[k] == 0) touched.push_back(k);
            sum[k] += c.values[i];
            ++count[k];
          }
        }
      }
      std::sort(touched.begin(), touched.end());
      auto& cell = out.at(ox, oy);
      for (auto k : touched) {
        cell.indices.push_back(k);
        cell.values.push_back(sum[k] / count[k]);
        sum[k] = 0.0;
        count[k] = 0;
      }
    }
  }
  return out;
}

bool scale_skipped(const NetworkSpec& spec, int width, int height, double scale) {
  const long w = std::lround(width * scale);
  const long h = std::lround(height * scale);
  return std::min(w, h) < spec.largest_layer1_side();
}

FeatureStack forward(const ImageGrid& img, const NetworkSpec& spec, const DictionarySet& dicts, int workers) {
  spec.validate();
  const auto dict_for = [&](const PathSpec& p) -> const Dictionary& {
    const auto it = dicts.find(p.name);
    if (it == dicts.end()) throw std::invalid_argument("missing dictionary for path '" + p.name + "'");
    check_dictionary(p, it->second);
    return it->second;
  };
  for (const auto& p : spec.layer1) {
    if (p.geometry.channels != img.channels()) {
      throw std::invalid_argument("path '" + p.name + "' expects " + std::to_string(p.geometry.channels) +
                                  " channels, image has " + std::to_string(img.channels()));
    }
  }

  std::map<std::string, GramCache> caches;
  const auto env_dir = gram_cache_dir_from_env();
  auto cache_for = [&](const PathSpec& p) -> const GramCache& {
    auto it = caches.find(p.name);
    if (it == caches.end()) {
      const Dictionary& d = dict_for(p);
      it = caches.emplace(p.name, env_dir ? GramCache::load_or_build(d, *env_dir) : GramCache(d)).first;
    }
    return it->second;
  };

  const std::set<std::string> wanted(spec.concat.begin(), spec.concat.end());
  // Activation maps at native resolution, keyed by (scale, path).
  std::map<std::pair<std::size_t, std::string>, SparseCodeMap> maps;
  for (std::size_t s = 0; s < spec.scales.size(); ++s) {
    if (scale_skipped(spec, img.width(), img.height(), spec.scales[s])) continue;
    const ImageGrid scaled = rescale(img, spec.scales[s]);
    for (const auto& p : spec.layer1) {
      const bool concat = wanted.count(p.name) > 0;
      std::vector<const PathSpec*> consumers;
      for (const auto& q : spec.layer2) {
        if (q.source == p.name && wanted.count(q.name)) consumers.push_back(&q);
      }
      if (!concat && consumers.empty()) continue;
      SparseCodeMap rect = rectify(encode_image(scaled, dict_for(p), cache_for(p), workers));
      if (!consumers.empty()) {
        const ImageGrid pooled = to_dense(pool_hybrid_avg_max(rect, *p.pool));
        for (const PathSpec* q : consumers) {
          maps[{s, q->name}] = rectify(encode_image(pooled, dict_for(*q), cache_for(*q), workers));
        }
      }
      if (concat) maps[{s, p.name}] = std::move(rect);
    }
  }

  FeatureStack stack(img.width(), img.height(), spec.feature_dim());
  const auto blocks = spec.layout();
  parallel_for(static_cast<std::size_t>(img.height()), workers, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < img.width(); ++x) {
      auto& cell = stack.at(x, y);
      for (const auto& b : blocks) {
        const auto it = maps.find({b.scale_index, b.path});
        if (it == maps.end()) continue;
        const SparseCodeMap& m = it->second;
        const int sx = nearest_source_index(x, m.width, img.width());
        const int sy = nearest_source_index(y, m.height, img.height());
        const auto& src = m.at(sx, sy);
        for (std::size_t i = 0; i < src.nnz(); ++i) {
          cell.indices.push_back(b.offset + src.indices[i]);
          cell.values.push_back(src.values[i]);
        }
      }
    }
  });
  return stack;
}

PatchMatrix sample_layer1_patches(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                  const std::string& path_name, std::size_t count, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  const PathSpec& p = spec.path(path_name);
  if (!spec.is_layer1(path_name)) throw std::invalid_argument("'" + path_name + "' is not a layer-1 path");
  const auto scaled = usable_scaled_images(corpus, spec);
  if (scaled.empty()) throw std::invalid_argument("no corpus image is large enough for the network");
  std::vector<const ImageGrid*> grids;
  std::vector<std::size_t> ids;
  for (const auto& s : scaled) {
    grids.push_back(&s.grid);
    ids.push_back(s.image);
  }
  return gather_patches(grids, ids, p.geometry, p.zero_mean, count, seed);
}

PatchMatrix sample_layer2_patches(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                  const std::string& path_name, const Dictionary& source_dict, std::size_t count,
                                  std::uint64_t seed, int workers) {
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  const PathSpec& q = spec.path(path_name);
  if (spec.is_layer1(path_name)) throw std::invalid_argument("'" + path_name + "' is not a layer-2 path");
  const PathSpec& src = spec.path(q.source);
  check_dictionary(src, source_dict);
  const GramCache cache(source_dict);
  const auto scaled = usable_scaled_images(corpus, spec);
  std::vector<ImageGrid> pooled(scaled.size());
  parallel_for(scaled.size(), 1, [&](std::size_t i) {
    pooled[i] = pooled_input(scaled[i].grid, src, source_dict, cache, workers);
  });
  std::vector<const ImageGrid*> grids;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    grids.push_back(&pooled[i]);
    ids.push_back(scaled[i].image);
  }
  return gather_patches(grids, ids, q.geometry, q.zero_mean, count, seed);
}

DictionarySet train_network_dictionaries(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                         const NetworkTrainingConfig& cfg) {
  spec.validate();
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  DictionarySet dicts;
  const std::uint64_t root = cfg.ksvd.seed;
  for (const auto& p : spec.layer1) {
    const PatchMatrix patches =
        sample_layer1_patches(corpus, spec, p.name, cfg.samples_per_dictionary, derive_seed(root, "patches/" + p.name));
    MiKsvdConfig k = cfg.ksvd;
    k.seed = derive_seed(root, "ksvd/" + p.name);
    dicts[p.name] = mi_ksvd_train(patches, k, p.atoms, p.sparsity, p.zero_mean).dictionary;
  }
  for (const auto& q : spec.layer2) {
    const PatchMatrix patches = sample_layer2_patches(corpus, spec, q.name, dicts.at(q.source),
                                                      cfg.samples_per_dictionary,
                                                      derive_seed(root, "patches/" + q.name), cfg.ksvd.workers);
    MiKsvdConfig k = cfg.ksvd;
    k.seed = derive_seed(root, "ksvd/" + q.name);
    dicts[q.name] = mi_ksvd_train(patches, k, q.atoms, q.sparsity, q.zero_mean).dictionary;
  }
  return dicts;
}

NetworkSpec layer1_only(const NetworkSpec& spec) {
  NetworkSpec out = spec;
  out.layer2.clear();
  out.concat.clear();
  for (const auto& c : spec.concat) {
    if (spec.is_layer1(c)) out.concat.push_back(c);
  }
  out.validate();
  return out;
}

}  // namespace sparselabel
