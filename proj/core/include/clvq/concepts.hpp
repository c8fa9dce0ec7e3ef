#pragma once

#include <string>

#include "clvq/trainer.hpp"
#include "clvq/types.hpp"

namespace clvq {

struct ConceptHit {
  int id = 0;
  RowVec vector;
};

/// Common surface of every concept-discovery method: map one layer-l token
/// activation to the concept vector it is explained by.
class ConceptModel {
 public:
  virtual ~ConceptModel() = default;
  virtual std::string method() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual int num_concepts() const = 0;
  virtual ConceptHit concept_for_token(const RowVec& token) const = 0;
};

/// Nearest eval-mode codebook vector of the encoded token. Serves both the
/// cross-layer model and its single-layer variant.
class VqConceptModel : public ConceptModel {
 public:
  VqConceptModel(ClvqModel model, std::string method);

  std::string method() const override { return method_; }
  Eigen::Index dim() const override { return model_.encoder.dim(); }
  int num_concepts() const override { return model_.codebook.size(); }
  ConceptHit concept_for_token(const RowVec& token) const override;

  const ClvqModel& model() const { return model_; }

 private:
  ClvqModel model_;
  std::string method_;
};

}  // namespace clvq
