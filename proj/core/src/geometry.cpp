#include "phonolens/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "phonolens/artifacts.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/svg.hpp"

namespace phonolens {

using nlohmann::json;

namespace {

std::string words_hash(const std::vector<std::string>& words) {
  std::string joined;
  for (const auto& w : words) joined += w + "\n";
  return sha256_hex(joined);
}

}  // namespace

ResultMatrix collect_result_vectors(const ModelHandle& model, const std::vector<std::string>& words,
                                    HeadId head, const std::optional<std::filesystem::path>& cache_dir) {
  require(!words.empty(), ErrorKind::collection, "no words to collect");
  const json params{{"kind", "result_vectors"},
                    {"head", {head.first, head.second}},
                    {"words", words_hash(words)}};
  std::filesystem::path meta_path, blob_path;
  if (cache_dir) {
    const auto key = cache_key(model.id(), kRhymeTemplate, params);
    meta_path = *cache_dir / "result_vectors" / (key + ".json");
    blob_path = *cache_dir / "result_vectors" / (key + ".bin");
    if (std::filesystem::exists(meta_path) && std::filesystem::exists(blob_path)) {
      const json meta = read_json(meta_path);
      ResultMatrix out;
      out.words = meta.at("words").get<std::vector<std::string>>();
      for (const auto& e : meta.at("errors")) {
        out.errors.emplace_back(e.at("word").get<std::string>(), e.at("reason").get<std::string>());
      }
      const auto d = meta.at("d_model").get<Eigen::Index>();
      const auto values = read_f32_blob(blob_path);
      const auto n = static_cast<Eigen::Index>(out.words.size());
      require(static_cast<Eigen::Index>(values.size()) == n * d, ErrorKind::parse,
              "cached result vectors disagree with their metadata");
      out.rows = Eigen::Map<const Matrix>(values.data(), n, d);
      out.from_cache = true;
      return out;
    }
  }

  ResultMatrix out;
  std::vector<Vector> rows;
  for (const auto& w : words) {
    try {
      const Vector z = capture_final_z(model, w, head);
      rows.push_back(head_result_vector(model, z, head.first, head.second).value);
      out.words.push_back(w);
    } catch (const Error& e) {
      out.errors.emplace_back(w, e.what());
    }
  }
  if (2 * rows.size() < words.size()) {
    fail(ErrorKind::collection, "only " + std::to_string(rows.size()) + " of " +
                                    std::to_string(words.size()) + " words produced result vectors");
  }
  const int d = model.config().d_model;
  out.rows = Matrix(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) out.rows.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();

  if (cache_dir) {
    json errs = json::array();
    for (const auto& [w, why] : out.errors) errs.push_back({{"word", w}, {"reason", why}});
    write_f32_blob_atomic(blob_path, std::span<const float>(out.rows.data(), static_cast<std::size_t>(out.rows.size())));
    const json meta{{"kind", "result_vectors"}, {"model", model.id()},     {"head", head_label(head)},
                    {"params", params},         {"d_model", d},            {"words", out.words},
                    {"errors", errs},           {"blob", blob_path.filename().string()}};
    write_text_atomic(meta_path, meta.dump(2) + "\n");
  }
  return out;
}

VectorD PCAModel::transform(const VectorD& v) const {
  require(v.size() == mean.size(), ErrorKind::shape,
          "vector has " + std::to_string(v.size()) + " entries, PCA expects " + std::to_string(mean.size()));
  return components * (v - mean);
}

VectorD PCAModel::reconstruct(const VectorD& coords) const {
  require(coords.size() == components.rows(), ErrorKind::shape, "coordinate count differs from k");
  return mean + components.transpose() * coords;
}

void PCAModel::save(const std::filesystem::path& json_path) const {
  auto blob_path = json_path;
  blob_path.replace_extension(".bin");
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(mean.size() + components.size()));
  for (Eigen::Index i = 0; i < mean.size(); ++i) values.push_back(static_cast<float>(mean[i]));
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    for (Eigen::Index c = 0; c < components.cols(); ++c) values.push_back(static_cast<float>(components(r, c)));
  }
  write_f32_blob_atomic(blob_path, values);
  const json j{{"kind", "pca"},
               {"k", k()},
               {"d_model", dim()},
               {"explained_variance", std::vector<double>(explained_variance.data(),
                                                          explained_variance.data() + explained_variance.size())},
               {"metadata", metadata.is_null() ? json::object() : metadata},
               {"blob", blob_path.filename().string()},
               {"layout", "mean (d_model) then components row-major (k x d_model), float32 LE"}};
  write_text_atomic(json_path, j.dump(2) + "\n");
}

PCAModel PCAModel::load(const std::filesystem::path& json_path) {
  const json j = read_json(json_path);
  const auto k = j.at("k").get<Eigen::Index>();
  const auto d = j.at("d_model").get<Eigen::Index>();
  const auto values = read_f32_blob(json_path.parent_path() / j.at("blob").get<std::string>());
  require(static_cast<Eigen::Index>(values.size()) == d + k * d, ErrorKind::parse,
          "PCA blob size disagrees with header");
  PCAModel p;
  p.mean = Eigen::Map<const Vector>(values.data(), d).cast<double>();
  p.components = Eigen::Map<const Matrix>(values.data() + d, k, d).cast<double>();
  const auto ev = j.at("explained_variance").get<std::vector<double>>();
  p.explained_variance = Eigen::Map<const VectorD>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  p.metadata = j.value("metadata", json::object());
  return p;
}

PCAModel fit_pca(const Matrix& data, int k) {
  const Eigen::Index n = data.rows(), d = data.cols();
  require(k >= 1 && k <= d, ErrorKind::argument, "k must be between 1 and the data width");
  require(n >= 2, ErrorKind::rank, "PCA needs at least two rows");
  const MatrixD x = data.cast<double>();
  PCAModel p;
  p.mean = x.colwise().mean().transpose();
  const MatrixD centred = x.rowwise() - p.mean.transpose();
  const MatrixD cov = centred.transpose() * centred / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<MatrixD> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::rank, "covariance eigendecomposition failed");
  // eigenvalues ascending -> take from the end
  const VectorD values = eig.eigenvalues().reverse().cwiseMax(0.0);
  const double total = values.sum();
  const double tol = std::max(total, 1e-300) * 1e-10;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) rank += values[i] > tol ? 1 : 0;
  if (total <= 0.0 || rank < k) {
    fail(ErrorKind::rank, "centred data has rank " + std::to_string(rank) + " < k = " + std::to_string(k));
  }
  p.components = MatrixD(k, d);
  p.explained_variance = VectorD(k);
  for (int i = 0; i < k; ++i) {
    VectorD v = eig.eigenvectors().col(d - 1 - i);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[arg]) + 1e-12) arg = j;
    }
    if (v[arg] < 0) v = -v;
    p.components.row(i) = v.normalized().transpose();
    p.explained_variance[i] = values[i] / total;
  }
  p.metadata = json{{"rows", n}, {"rank", rank}};
  return p;
}

std::string_view to_string(PointSource s) {
  return s == PointSource::phoneme_vector ? "phoneme_vector" : "result_vector";
}

std::vector<ProjectedPoint> project(const PCAModel& pca, const Matrix& vectors,
                                    const std::vector<std::string>& labels, PointSource source) {
  require(vectors.cols() == pca.dim(), ErrorKind::shape,
          "vectors have " + std::to_string(vectors.cols()) + " columns, PCA expects " +
              std::to_string(pca.dim()));
  require(static_cast<Eigen::Index>(labels.size()) == vectors.rows(), ErrorKind::shape,
          "one label per vector required");
  std::vector<ProjectedPoint> out;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const VectorD c = pca.transform(vectors.row(i).transpose().cast<double>());
    out.push_back({labels[static_cast<std::size_t>(i)], std::vector<double>(c.data(), c.data() + c.size()), source});
  }
  return out;
}

std::vector<ProjectedPoint> project_phoneme_vectors(const PCAModel& pca, const ProbeMatrix& probe,
                                                    const PhonemeInventory& inventory) {
  require(probe.weights.rows() == static_cast<Eigen::Index>(inventory.size()), ErrorKind::shape,
          "probe rows differ from the inventory size");
  Matrix rows = probe.weights;
  std::vector<std::string> labels;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const float norm = rows.row(i).norm();
    if (norm > 0) rows.row(i) /= norm;
    labels.push_back(inventory.at(static_cast<std::size_t>(i)).symbol);
  }
  return project(pca, rows, labels, PointSource::phoneme_vector);
}

namespace {

std::map<std::string, const ProjectedPoint*> index_points(const std::vector<ProjectedPoint>& points) {
  std::map<std::string, const ProjectedPoint*> out;
  for (const auto& p : points) out[p.label] = &p;
  return out;
}

double coord(const ProjectedPoint& p, int axis) {
  require(axis >= 0 && axis < static_cast<int>(p.coords.size()), ErrorKind::shape,
          "point '" + p.label + "' has no component " + std::to_string(axis));
  return p.coords[static_cast<std::size_t>(axis)];
}

int sign(double v) { return (v > 0) - (v < 0); }

const std::array<Backness, 3> kBackness = {Backness::front, Backness::central, Backness::back};

}  // namespace

bool VowelReport::is_exception(std::string_view symbol) const {
  return std::any_of(exceptions.begin(), exceptions.end(), [&](const auto& e) { return e.symbol == symbol; });
}

json VowelReport::to_json() const {
  json means = json::object(), taus = json::object(), exc = json::array();
  for (const auto& [b, m] : mean_pc_x) means[std::string(to_string(b))] = m;
  for (const auto& [b, t] : openness_tau) taus[std::string(to_string(b))] = t ? json(*t) : json(nullptr);
  for (const auto& e : exceptions) exc.push_back({{"symbol", e.symbol}, {"reasons", e.reasons}});
  return json{{"kind", "vowel_geometry"},
              {"pc_x", pc_x},
              {"pc_y", pc_y},
              {"mean_pc_x", means},
              {"backness_ordered", backness_ordered},
              {"openness_tau", taus},
              {"exceptions", exc}};
}

std::string VowelReport::text_table() const {
  std::ostringstream out;
  char buf[128];
  out << "class     mean PC" << pc_x + 1 << "   tau(openness, PC" << pc_y + 1 << ")\n";
  for (auto b : kBackness) {
    const auto t = openness_tau.count(b) ? openness_tau.at(b) : std::nullopt;
    std::snprintf(buf, sizeof buf, "%-8s %9.4f   %s\n", std::string(to_string(b)).c_str(),
                  mean_pc_x.count(b) ? mean_pc_x.at(b) : 0.0,
                  t ? std::to_string(*t).c_str() : "n/a");
    out << buf;
  }
  out << "front > central > back: " << (backness_ordered ? "yes" : "no") << "\n";
  out << "exceptions:";
  if (exceptions.empty()) out << " none";
  out << "\n";
  for (const auto& e : exceptions) {
    out << "  /" << e.symbol << "/";
    for (const auto& r : e.reasons) out << "  " << r;
    out << "\n";
  }
  return out.str();
}

VowelReport vowel_geometry_report(const std::vector<ProjectedPoint>& points,
                                  const PhonemeInventory& inventory, int pc_x, int pc_y) {
  const auto by_label = index_points(points);
  VowelReport r;
  r.pc_x = pc_x;
  r.pc_y = pc_y;
  std::map<Backness, std::vector<std::pair<const Phoneme*, const ProjectedPoint*>>> classes;
  for (const auto& ph : inventory.phonemes()) {
    if (!ph.is_vowel()) continue;
    const auto it = by_label.find(ph.symbol);
    if (it == by_label.end()) fail(ErrorKind::argument, "no projected point for vowel /" + ph.symbol + "/");
    classes[ph.vowel->backness].emplace_back(&ph, it->second);
  }
  for (auto b : kBackness) {
    const auto& members = classes[b];
    if (members.empty()) continue;
    double sum = 0;
    for (const auto& [ph, pt] : members) sum += coord(*pt, pc_x);
    r.mean_pc_x[b] = sum / static_cast<double>(members.size());
  }
  auto mean_of = [&](Backness b) { return r.mean_pc_x.count(b) ? std::optional(r.mean_pc_x.at(b)) : std::nullopt; };
  const auto front = mean_of(Backness::front), central = mean_of(Backness::central), back = mean_of(Backness::back);
  r.backness_ordered = front && central && back && *front > *central && *central > *back;

  std::map<std::string, std::vector<std::string>> reasons;
  for (auto b : kBackness) {
    const auto& members = classes[b];
    // openness association
    long concordant = 0, discordant = 0;
    std::map<std::string, std::pair<int, int>> per_vowel;  // concordant, discordant
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        const int dopen = members[i].first->vowel->openness - members[j].first->vowel->openness;
        if (dopen == 0) continue;
        const int s = sign(dopen) * sign(coord(*members[i].second, pc_y) - coord(*members[j].second, pc_y));
        auto& vi = per_vowel[members[i].first->symbol];
        auto& vj = per_vowel[members[j].first->symbol];
        if (s > 0) {
          ++concordant, ++vi.first, ++vj.first;
        } else {
          ++discordant, ++vi.second, ++vj.second;  // ties on PC-y count against the ordering
        }
      }
    }
    r.openness_tau[b] = concordant + discordant > 0
                            ? std::optional(static_cast<double>(concordant - discordant) /
                                            static_cast<double>(concordant + discordant))
                            : std::nullopt;
    for (const auto& [sym, cd] : per_vowel) {
      if (cd.second > cd.first) reasons[sym].push_back("openness order (PC" + std::to_string(pc_y + 1) + ")");
    }
    // backness placement
    for (const auto& [ph, pt] : members) {
      const double x = coord(*pt, pc_x);
      bool misplaced = false;
      if (b == Backness::front && central) misplaced = x <= *central;
      if (b == Backness::back && central) misplaced = x >= *central;
      if (b == Backness::central && front && back) misplaced = x >= *front || x <= *back;
      if (misplaced) reasons[ph->symbol].push_back("backness side (PC" + std::to_string(pc_x + 1) + ")");
    }
    // leave-one-out outlier on PC-x
    if (members.size() >= 4) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        double s = 0, s2 = 0;
        const double m = static_cast<double>(members.size() - 1);
        for (std::size_t j = 0; j < members.size(); ++j) {
          if (j == i) continue;
          const double v = coord(*members[j].second, pc_x);
          s += v;
          s2 += v * v;
        }
        const double mu = s / m;
        const double sd = std::sqrt(std::max(0.0, (s2 - m * mu * mu) / (m - 1)));
        const double x = coord(*members[i].second, pc_x);
        if (sd > 0 && std::abs(x - mu) > 2.5 * sd) {
          reasons[members[i].first->symbol].push_back(
              std::string(x > mu ? "large" : "small") + " PC" + std::to_string(pc_x + 1) + " for its class");
        }
      }
    }
  }
  for (const auto& ph : inventory.phonemes()) {
    const auto it = reasons.find(ph.symbol);
    if (it != reasons.end()) r.exceptions.push_back({ph.symbol, it->second});
  }
  return r;
}

json VoicingReport::to_json() const {
  json ps = json::array();
  for (const auto& p : pairs) {
    ps.push_back({{"voiced", p.voiced},
                  {"voiceless", p.voiceless},
                  {"displacement", p.displacement},
                  {"companion_displacement", p.plane_displacement_x}});
  }
  return json{{"kind", "voicing_geometry"},
              {"axis", axis},
              {"companion_axis", companion_axis},
              {"pairs", ps},
              {"sign_consistency", sign_consistency},
              {"mean_displacement", mean_displacement},
              {"threshold", threshold},
              {"consistent", consistent()}};
}

std::string VoicingReport::text_table() const {
  std::ostringstream out;
  char buf[128];
  out << "pair        dPC" << axis + 1 << "        dPC" << companion_axis + 1 << "\n";
  for (const auto& p : pairs) {
    const std::string name = p.voiceless + "/" + p.voiced;
    std::snprintf(buf, sizeof buf, "%-10s %+9.4f  %+9.4f\n", name.c_str(), p.displacement, p.plane_displacement_x);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "sign consistency %.3f (threshold %.2f), mean displacement %+.4f\n",
                sign_consistency, threshold, mean_displacement);
  out << buf;
  return out.str();
}

VoicingReport voicing_geometry_report(const std::vector<ProjectedPoint>& points,
                                      const PhonemeInventory& inventory, int axis, int companion_axis,
                                      double threshold) {
  const auto by_label = index_points(points);
  VoicingReport r;
  r.axis = axis;
  r.companion_axis = companion_axis;
  r.threshold = threshold;
  for (const auto& ph : inventory.phonemes()) {
    if (ph.is_vowel() || !ph.consonant || !ph.consonant->voiced || !ph.consonant->counterpart) continue;
    const auto& voiceless = *ph.consonant->counterpart;
    const auto v = by_label.find(ph.symbol), u = by_label.find(voiceless);
    if (v == by_label.end() || u == by_label.end()) {
      fail(ErrorKind::argument, "no projected point for /" + ph.symbol + "/ or /" + voiceless + "/");
    }
    r.pairs.push_back({ph.symbol, voiceless, coord(*v->second, axis) - coord(*u->second, axis),
                       coord(*v->second, companion_axis) - coord(*u->second, companion_axis)});
  }
  if (r.pairs.empty()) return r;
  int pos = 0, neg = 0;
  double sum = 0;
  for (const auto& p : r.pairs) {
    pos += p.displacement > 0;
    neg += p.displacement < 0;
    sum += p.displacement;
  }
  r.sign_consistency = static_cast<double>(std::max(pos, neg)) / static_cast<double>(r.pairs.size());
  r.mean_displacement = sum / static_cast<double>(r.pairs.size());
  return r;
}

json Overlay::to_json() const {
  json cs = json::array();
  for (const auto& c : clusters) {
    cs.push_back({{"vowel", c.vowel},
                  {"size", c.size},
                  {"centroid", {c.centroid_x, c.centroid_y}},
                  {"distance_to_own", c.distance_to_own},
                  {"nearest_vowel", c.nearest_vowel},
                  {"matched", c.nearest_vowel == c.vowel}});
  }
  json pts = json::array();
  for (const auto& p : transformed) pts.push_back({{"label", p.label}, {"coords", p.coords}});
  return json{{"kind", "overlay"},
              {"scale", scale},
              {"shift", shift},
              {"pc_x", pc_x},
              {"pc_y", pc_y},
              {"match_accuracy", match_accuracy},
              {"clusters", cs},
              {"points", pts}};
}

std::string Overlay::svg(const std::vector<ProjectedPoint>& phoneme_points,
                         const std::map<std::string, std::string>& word_vowel) const {
  std::map<std::string, std::size_t> group;
  for (const auto& c : clusters) group.emplace(c.vowel, group.size() + 1);
  std::vector<ScatterPoint> pts;
  for (const auto& p : transformed) {
    const auto v = word_vowel.find(p.label);
    const std::size_t g = v != word_vowel.end() && group.count(v->second) ? group.at(v->second) : 0;
    pts.push_back({coord(p, pc_x), coord(p, pc_y), p.label, g, 2.0, false});
  }
  for (const auto& p : phoneme_points) {
    if (!group.count(p.label)) continue;
    pts.push_back({coord(p, pc_x), coord(p, pc_y), p.label, group.at(p.label), 6.0, true});
  }
  char title[96];
  std::snprintf(title, sizeof title, "result vectors (x%.3g, %+.3g) over phoneme vectors", scale, shift);
  return scatter_svg(pts, title, "PC" + std::to_string(pc_x + 1), "PC" + std::to_string(pc_y + 1));
}

Overlay overlay_result_vectors(const std::vector<ProjectedPoint>& result_points,
                               const std::map<std::string, std::string>& word_vowel,
                               const std::vector<ProjectedPoint>& phoneme_points,
                               const PhonemeInventory& inventory, double scale, double shift, int pc_x,
                               int pc_y) {
  require(scale > 0, ErrorKind::argument, "overlay scale must be positive");
  Overlay o;
  o.scale = scale;
  o.shift = shift;
  o.pc_x = pc_x;
  o.pc_y = pc_y;
  std::map<std::string, std::vector<std::pair<double, double>>> groups;
  for (const auto& p : result_points) {
    ProjectedPoint t = p;
    for (auto& c : t.coords) c = c * scale + shift;
    const auto v = word_vowel.find(p.label);
    if (v != word_vowel.end()) groups[v->second].emplace_back(coord(t, pc_x), coord(t, pc_y));
    o.transformed.push_back(std::move(t));
  }
  std::vector<const ProjectedPoint*> vowel_points;
  for (const auto& p : phoneme_points) {
    if (inventory.contains(p.label) && inventory.is_vowel(p.label)) vowel_points.push_back(&p);
  }
  const auto by_label = index_points(phoneme_points);
  std::size_t matched = 0;
  for (const auto& [vowel, members] : groups) {
    const auto own = by_label.find(vowel);
    if (own == by_label.end()) continue;
    VowelCluster c;
    c.vowel = vowel;
    c.size = members.size();
    for (const auto& [x, y] : members) c.centroid_x += x, c.centroid_y += y;
    c.centroid_x /= static_cast<double>(members.size());
    c.centroid_y /= static_cast<double>(members.size());
    auto dist = [&](const ProjectedPoint& p) {
      return std::hypot(coord(p, pc_x) - c.centroid_x, coord(p, pc_y) - c.centroid_y);
    };
    c.distance_to_own = dist(*own->second);
    double best = std::numeric_limits<double>::infinity();
    for (const auto* p : vowel_points) {
      const double d = dist(*p);
      if (d < best) best = d, c.nearest_vowel = p->label;
    }
    matched += c.nearest_vowel == c.vowel;
    o.clusters.push_back(std::move(c));
  }
  o.match_accuracy = o.clusters.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(o.clusters.size());
  return o;
}

std::map<std::string, std::string> single_vowel_words(const std::vector<std::string>& words,
                                                      const PronunciationLexicon& lexicon) {
  std::map<std::string, std::string> out;
  for (const auto& w : words) {
    if (!lexicon.contains(w)) continue;
    const auto vowels = distinct_vowels(lexicon.first(w), lexicon.inventory());
    if (vowels.size() == 1) out[w] = vowels.front();
  }
  return out;
}

std::string phoneme_scatter_svg(const std::vector<ProjectedPoint>& points,
                                const PhonemeInventory& inventory, bool vowels, int pc_x, int pc_y,
                                const std::string& title) {
  std::vector<ScatterPoint> pts;
  for (const auto& p : points) {
    if (!inventory.contains(p.label) || inventory.is_vowel(p.label) != vowels) continue;
    const auto& ph = inventory.at(p.label);
    std::size_t group = 0;
    if (vowels) {
      group = static_cast<std::size_t>(ph.vowel->backness);
    } else {
      group = ph.consonant && ph.consonant->voiced ? 1 : 0;
    }
    pts.push_back({coord(p, pc_x), coord(p, pc_y), p.label, group, 5.0, true});
  }
  return scatter_svg(pts, title, "PC" + std::to_string(pc_x + 1), "PC" + std::to_string(pc_y + 1));
}

}  // namespace phonolens
