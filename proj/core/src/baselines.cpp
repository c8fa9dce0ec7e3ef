#include "clvq/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clvq/archive.hpp"
#include "clvq/error.hpp"
#include "clvq/kmeans.hpp"
#include "clvq/optim.hpp"
#include "clvq/trainer.hpp"

namespace clvq {

ClusterModel fit_clustering(const Mat& tokens, int k, std::uint64_t seed, int max_iters,
                            double tol) {
  if (k < 1) throw UsageError("cluster count must be at least 1");
  if (k > tokens.rows()) {
    throw UsageError("cluster count " + std::to_string(k) + " exceeds the " +
                     std::to_string(tokens.rows()) + " tokens");
  }
  Rng rng(seed);
  KMeansResult km = kmeans(tokens, k, rng, {max_iters, tol, false});
  return {std::move(km.centroids), std::move(km.assignment)};
}

ConceptHit ClusterConceptModel::concept_for_token(const RowVec& token) const {
  if (model_.centroids.rows() == 0) throw UsageError("clustering model is not fitted");
  if (token.size() != dim()) throw ShapeError("token has the wrong dimension");
  const int j = nearest_row(model_.centroids, token);
  return {j, model_.centroids.row(j)};
}

Mat SaeParams::activations(const Mat& x) const {
  return nn::relu(encoder.forward(x.rowwise() - input_mean));
}

Mat SaeParams::reconstruct(const Mat& x) const { return decoder.forward(activations(x)); }

RowVec SaeParams::concept_vector(int neuron) const {
  return decoder.weight.value.col(neuron).transpose();
}

SaeLoss sae_loss(const SaeParams& sae, const Mat& x, const Mat& y) {
  const Mat h = sae.activations(x);
  const Mat y_hat = sae.decoder.forward(h);
  const double n = static_cast<double>(x.rows());
  SaeLoss out;
  out.reconstruction = (y - y_hat).squaredNorm() / n;
  out.sparsity = h.sum() / n;
  out.mean_active = static_cast<double>((h.array() > 0.0).count()) / n;
  return out;
}

SaeParams fit_sae(const Mat& x, const Mat& y, const SaeConfig& cfg) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("SAE inputs must be paired");
  if (x.rows() == 0) throw UsageError("SAE needs training tokens");
  if (cfg.hidden < 1) throw UsageError("SAE needs at least one hidden neuron");
  if (cfg.l1_weight < 0.0) throw UsageError("l1_weight must be non-negative");
  Rng rng(cfg.seed);
  SaeParams sae;
  sae.encoder = nn::Linear("sae.encoder", x.cols(), cfg.hidden, rng);
  sae.decoder = nn::Linear("sae.decoder", cfg.hidden, x.cols(), rng);
  sae.decoder.bias.value.row(0) = y.colwise().mean();
  sae.input_mean = x.colwise().mean();
  sae.l1_weight = cfg.l1_weight;
  nn::ParamRefs params;
  sae.encoder.collect(params);
  sae.decoder.collect(params);
  Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  const Mat centered = x.rowwise() - sae.input_mean;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const auto b = static_cast<Eigen::Index>(stop - start);
      Mat xb(b, x.cols()), yb(b, y.cols());
      for (std::size_t i = start; i < stop; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = centered.row(order[i]);
        yb.row(static_cast<Eigen::Index>(i - start)) = y.row(order[i]);
      }
      opt.zero_grad();
      const Mat pre = sae.encoder.forward(xb);
      const Mat h = nn::relu(pre);
      const Mat y_hat = sae.decoder.forward(h);
      const double loss = ((yb - y_hat).squaredNorm() + cfg.l1_weight * h.sum()) / b;
      if (!std::isfinite(loss)) throw NumericError("non-finite SAE loss");
      const Mat dy = (2.0 / static_cast<double>(b)) * (y_hat - yb);
      Mat dh = sae.decoder.backward(h, dy);
      const Mat active = (pre.array() > 0.0).cast<double>().matrix();
      dh = (dh.array() + cfg.l1_weight / static_cast<double>(b)).matrix().cwiseProduct(active);
      sae.encoder.backward(xb, dh);
      opt.step();
    }
  }
  return sae;
}

ConceptHit SaeConceptModel::concept_for_token(const RowVec& token) const {
  if (token.size() != dim()) throw ShapeError("token has the wrong dimension");
  const Mat h = sae_.activations(Mat(token));
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < h.cols(); ++j) {
    if (h(0, j) > h(0, best)) best = j;
  }
  return {static_cast<int>(best), sae_.concept_vector(static_cast<int>(best))};
}

void save_clustering(const ClusterModel& m, const std::string& path) {
  Archive a;
  a.meta.set("kind", "baseline");
  a.meta.set("method", "clustering");
  a.add("centroids", m.centroids);
  Mat assignment(static_cast<Eigen::Index>(m.assignment.size()), 1);
  for (std::size_t i = 0; i < m.assignment.size(); ++i) {
    assignment(static_cast<Eigen::Index>(i), 0) = m.assignment[i];
  }
  a.add("assignment", assignment);
  a.save(path);
}

ClusterModel load_clustering(const std::string& path) {
  const Archive a = Archive::load(path);
  if (a.meta.find("method") != std::string("clustering")) {
    throw DataError(path + ": not a clustering archive");
  }
  ClusterModel m;
  m.centroids = a.tensor("centroids");
  const Mat& assignment = a.tensor("assignment");
  for (Eigen::Index i = 0; i < assignment.rows(); ++i) {
    m.assignment.push_back(static_cast<int>(assignment(i, 0)));
  }
  return m;
}

void save_sae(const SaeParams& sae, const std::string& path) {
  Archive a;
  a.meta.set("kind", "baseline");
  a.meta.set("method", "sae");
  a.meta.set("l1_weight", format_double(sae.l1_weight));
  a.add("encoder.weight", sae.encoder.weight.value);
  a.add("encoder.bias", sae.encoder.bias.value);
  a.add("decoder.weight", sae.decoder.weight.value);
  a.add("decoder.bias", sae.decoder.bias.value);
  a.add("input_mean", sae.input_mean);
  a.save(path);
}

SaeParams load_sae(const std::string& path) {
  const Archive a = Archive::load(path);
  if (a.meta.find("method") != std::string("sae")) throw DataError(path + ": not an SAE archive");
  SaeParams sae;
  sae.l1_weight = a.meta.get_double("l1_weight");
  sae.encoder.weight = nn::Param("sae.encoder.weight", a.tensor("encoder.weight"));
  sae.encoder.bias = nn::Param("sae.encoder.bias", a.tensor("encoder.bias"));
  sae.decoder.weight = nn::Param("sae.decoder.weight", a.tensor("decoder.weight"));
  sae.decoder.bias = nn::Param("sae.decoder.bias", a.tensor("decoder.bias"));
  sae.input_mean = a.tensor("input_mean");
  const auto d = sae.encoder.in_dim();
  if (sae.decoder.out_dim() != d || sae.decoder.in_dim() != sae.encoder.out_dim() ||
      sae.input_mean.size() != d) {
    throw ShapeError(path + ": SAE tensors are inconsistent");
  }
  return sae;
}

std::unique_ptr<ConceptModel> load_concept_model(const std::string& path) {
  const Archive a = Archive::load(path);
  const auto kind = a.meta.find("kind").value_or("");
  const auto method = a.meta.find("method").value_or("");
  if (kind == "transcoder") {
    Checkpoint ck = load_checkpoint(path);
    return std::make_unique<VqConceptModel>(std::move(ck.model), ck.method);
  }
  if (method == "clustering") return std::make_unique<ClusterConceptModel>(load_clustering(path));
  if (method == "sae") return std::make_unique<SaeConceptModel>(load_sae(path));
  throw DataError(path + ": unrecognized model archive (method '" + method + "')");
}

}  // namespace clvq
