#include "clvq/concepts.hpp"

#include "clvq/error.hpp"

namespace clvq {

VqConceptModel::VqConceptModel(ClvqModel model, std::string method)
    : model_(std::move(model)), method_(std::move(method)) {}

ConceptHit VqConceptModel::concept_for_token(const RowVec& token) const {
  if (token.size() != dim()) throw ShapeError("token has the wrong dimension");
  const Mat z = encoder_forward(model_.encoder, Mat(token));
  const CodeChoice c = nearest_code(z.row(0), model_.codebook);
  return {c.index, model_.codebook.vectors.row(c.index)};
}

}  // namespace clvq
