#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "clvq/concepts.hpp"
#include "clvq/nn.hpp"

namespace clvq {

/// Raw-space k-means over layer-l token activations.
struct ClusterModel {
  Mat centroids;  // K x d
  std::vector<int> assignment;
};

ClusterModel fit_clustering(const Mat& tokens, int k, std::uint64_t seed, int max_iters = 100,
                            double tol = 1e-4);

class ClusterConceptModel : public ConceptModel {
 public:
  explicit ClusterConceptModel(ClusterModel model) : model_(std::move(model)) {}
  std::string method() const override { return "clustering"; }
  Eigen::Index dim() const override { return model_.centroids.cols(); }
  int num_concepts() const override { return static_cast<int>(model_.centroids.rows()); }
  ConceptHit concept_for_token(const RowVec& token) const override;
  const ClusterModel& model() const { return model_; }

 private:
  ClusterModel model_;
};

struct SaeConfig {
  int hidden = 2048;
  double l1_weight = 1e-3;
  int epochs = 50;
  int batch_size = 128;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 42;
};

/// Cross-layer sparse autoencoder: y ~ dec(relu(enc(x - mean))).
/// The columns of decoder.weight (rows of the m x d decoder matrix) are the concept vectors.
struct SaeParams {
  nn::Linear encoder;  // d -> m
  nn::Linear decoder;  // m -> d
  RowVec input_mean;
  double l1_weight = 0.0;

  int hidden() const { return static_cast<int>(encoder.out_dim()); }
  Mat activations(const Mat& x) const;
  Mat reconstruct(const Mat& x) const;
  RowVec concept_vector(int neuron) const;
};

struct SaeLoss {
  double reconstruction = 0.0;  // mean over tokens of |y - y_hat|^2
  double sparsity = 0.0;        // mean over tokens of |h|_1
  double mean_active = 0.0;     // mean count of strictly positive activations
};

SaeParams fit_sae(const Mat& x, const Mat& y, const SaeConfig& config);
SaeLoss sae_loss(const SaeParams& sae, const Mat& x, const Mat& y);

class SaeConceptModel : public ConceptModel {
 public:
  explicit SaeConceptModel(SaeParams sae) : sae_(std::move(sae)) {}
  std::string method() const override { return "sae"; }
  Eigen::Index dim() const override { return sae_.encoder.in_dim(); }
  int num_concepts() const override { return sae_.hidden(); }
  /// Decoder row of the most activated neuron (lowest index on ties).
  ConceptHit concept_for_token(const RowVec& token) const override;
  const SaeParams& params() const { return sae_; }

 private:
  SaeParams sae_;
};

void save_clustering(const ClusterModel& model, const std::string& path);
ClusterModel load_clustering(const std::string& path);
void save_sae(const SaeParams& sae, const std::string& path);
SaeParams load_sae(const std::string& path);

/// Loads any saved concept model: transcoder checkpoints (clvqvae or
/// single_layer), clustering, or sae archives.
std::unique_ptr<ConceptModel> load_concept_model(const std::string& path);

}  // namespace clvq
