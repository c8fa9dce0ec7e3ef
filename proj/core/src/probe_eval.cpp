#include "clvq/probe_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "clvq/error.hpp"
#include "clvq/optim.hpp"

namespace clvq {
namespace {

Mat softmax_rows(const Mat& logits) {
  Mat out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).array() -= out.row(i).maxCoeff();
    out.row(i) = out.row(i).array().exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

int argmax_row(const Eigen::Ref<const RowVec>& r) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < r.size(); ++j) {
    if (r(j) > r(best)) best = j;
  }
  return static_cast<int>(best);
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace

ProbeParams train_probe(const Mat& x, const std::vector<int>& labels, int num_classes,
                        const ProbeConfig& cfg) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) throw ShapeError("one label per embedding is required");
  if (num_classes < 2) throw UsageError("a probe needs at least two classes");
  if (n < static_cast<std::size_t>(num_classes)) {
    throw UsageError("need at least as many embeddings as classes");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw UsageError("label out of range");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw UsageError("probe training set contains a single class");
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = 0;
  if (n >= 10) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.val_fraction * n)));
  }
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  if (val_idx.empty()) val_idx = fit_idx;
  Mat val_x(static_cast<Eigen::Index>(val_idx.size()), x.cols());
  std::vector<int> val_y;
  for (std::size_t i = 0; i < val_idx.size(); ++i) {
    val_x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(val_idx[i]));
    val_y.push_back(labels[val_idx[i]]);
  }

  ProbeParams probe;
  probe.hidden = nn::Linear("probe.hidden", x.cols(), cfg.hidden, rng);
  probe.output = nn::Linear("probe.output", cfg.hidden, num_classes, rng);
  probe.dropout = cfg.dropout;
  nn::ParamRefs params;
  probe.hidden.collect(params);
  probe.output.collect(params);
  Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  ProbeParams best = probe;
  double best_acc = -1.0;
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(fit_idx.begin(), fit_idx.end(), rng);
    for (std::size_t start = 0; start < fit_idx.size(); start += batch) {
      const std::size_t stop = std::min(fit_idx.size(), start + batch);
      const auto b = static_cast<Eigen::Index>(stop - start);
      Mat xb(b, x.cols());
      Mat onehot = Mat::Zero(b, num_classes);
      for (std::size_t i = start; i < stop; ++i) {
        const auto r = static_cast<Eigen::Index>(i - start);
        xb.row(r) = x.row(static_cast<Eigen::Index>(fit_idx[i]));
        onehot(r, labels[fit_idx[i]]) = 1.0;
      }
      opt.zero_grad();
      const Mat pre = probe.hidden.forward(xb);
      const Mat mask = nn::dropout_mask(b, pre.cols(), probe.dropout, rng);
      const Mat h = nn::apply_mask(nn::relu(pre), mask);
      const Mat p = softmax_rows(probe.output.forward(h));
      const Mat dlogits = (p - onehot) / static_cast<double>(b);
      Mat dh = probe.output.backward(h, dlogits);
      dh = nn::apply_mask(dh, mask).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      probe.hidden.backward(xb, dh);
      opt.step();
    }
    const double acc = probe_accuracy(probe, val_x, val_y);
    if (acc > best_acc) {
      best_acc = acc;
      best = probe;
    }
  }
  return best;
}

Mat probe_logits(const ProbeParams& probe, const Mat& x) {
  return probe.output.forward(nn::relu(probe.hidden.forward(x)));
}

int probe_predict(const ProbeParams& probe, const RowVec& x) {
  return argmax_row(probe_logits(probe, Mat(x)).row(0));
}

double probe_accuracy(const ProbeParams& probe, const Mat& x, const std::vector<int>& labels) {
  if (x.rows() == 0) throw UsageError("accuracy of an empty set is undefined");
  const Mat logits = probe_logits(probe, x);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    correct += argmax_row(logits.row(i)) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

RowVec logit_gradient(const ProbeParams& probe, const RowVec& x, int cls) {
  const Mat pre = probe.hidden.forward(Mat(x));
  RowVec dh = probe.output.weight.value.row(cls);
  dh = dh.cwiseProduct((pre.row(0).array() > 0.0).cast<double>().matrix());
  return dh * probe.hidden.weight.value;
}

RowVec project_out(const RowVec& x, const RowVec& v) {
  const double vv = v.squaredNorm();
  if (!(vv > 0.0)) throw UsageError("cannot project out a zero vector");
  return x - (x.dot(v) / vv) * v;
}

std::string to_string(Saliency s) { return s == Saliency::kGradient ? "gradient" : "projection"; }

Saliency parse_saliency(const std::string& s) {
  if (s == "gradient") return Saliency::kGradient;
  if (s == "projection") return Saliency::kProjection;
  throw UsageError("unknown saliency criterion '" + s + "' (expected gradient|projection)");
}

SalientChoice select_salient(const SentenceRecord& record, const ConceptModel& model,
                             const ProbeParams& probe, Saliency criterion) {
  if (record.tokens.empty()) throw UsageError("sentence has no tokens");
  const RowVec sent = record.sent_embed.cast<double>().transpose();
  RowVec g;
  if (criterion == Saliency::kGradient) {
    g = logit_gradient(probe, sent, probe_predict(probe, sent));
  }
  SalientChoice best;
  double best_score = -1.0;
  bool any_nonzero = false;
  for (Eigen::Index t = 0; t < record.acts_l.rows(); ++t) {
    ConceptHit hit = model.concept_for_token(record.acts_l.row(t).cast<double>());
    const double vn = hit.vector.norm();
    double score = 0.0;
    if (vn > 0.0) {
      any_nonzero = true;
      if (criterion == Saliency::kGradient) {
        const double gn = g.norm();
        score = gn > 0.0 ? std::abs(g.dot(hit.vector)) / (gn * vn) : 0.0;
      } else {
        score = std::abs(sent.dot(hit.vector)) / vn;
      }
    }
    if (score > best_score) {
      best_score = score;
      best.token = static_cast<std::size_t>(t);
      best.concept_id = hit.id;
      best.concept_vector = std::move(hit.vector);
    }
  }
  if (!any_nonzero) throw NumericError("every concept vector of the sentence is zero");
  if (best.concept_vector.norm() == 0.0) {
    // A zero vector only wins when all scores are zero; fall back to the first usable token.
    for (Eigen::Index t = 0; t < record.acts_l.rows(); ++t) {
      ConceptHit hit = model.concept_for_token(record.acts_l.row(t).cast<double>());
      if (hit.vector.norm() > 0.0) {
        best = {static_cast<std::size_t>(t), hit.id, std::move(hit.vector)};
        break;
      }
    }
  }
  return best;
}

Mat sentence_embeddings(const ActivationDataset& ds, const std::vector<std::size_t>& records) {
  Mat out(static_cast<Eigen::Index>(records.size()), ds.manifest.embedding_dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = ds.records[records[i]].sent_embed.cast<double>();
  }
  return out;
}

std::vector<int> sentence_labels(const ActivationDataset& ds,
                                 const std::vector<std::size_t>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (auto i : records) out.push_back(static_cast<int>(ds.records[i].label));
  return out;
}

FaithfulnessReport evaluate_faithfulness(const ActivationDataset& ds,
                                         const std::vector<std::size_t>& test,
                                         const ConceptModel& model, const ProbeParams& probe,
                                         const FaithfulnessConfig& cfg) {
  if (test.empty()) throw UsageError("test split is empty");
  if (cfg.bootstrap < 1) throw UsageError("need at least one bootstrap resample");
  FaithfulnessReport report;
  report.method = model.method();
  report.criterion = to_string(cfg.saliency);

  const auto n = test.size();
  std::vector<char> original_ok(n), perturbed_ok(n);
  std::vector<RowVec> embeds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SentenceRecord& r = ds.records[test[i]];
    embeds[i] = r.sent_embed.cast<double>().transpose();
    const SalientChoice s = select_salient(r, model, probe, cfg.saliency);
    report.salience.push_back({test[i], s.token, s.concept_id});
    const int label = static_cast<int>(r.label);
    original_ok[i] = probe_predict(probe, embeds[i]) == label;
    perturbed_ok[i] = probe_predict(probe, project_out(embeds[i], s.concept_vector)) == label;
  }

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = ds.manifest.embedding_dim;
  std::vector<double> acc_orig, acc_pert, acc_rand;
  for (int b = 0; b < cfg.bootstrap; ++b) {
    std::size_t o = 0, p = 0, q = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = pick(rng);
      o += static_cast<std::size_t>(original_ok[i]);
      p += static_cast<std::size_t>(perturbed_ok[i]);
      RowVec dir(d);
      do {
        for (Eigen::Index j = 0; j < d; ++j) dir(j) = normal(rng);
      } while (dir.norm() == 0.0);
      dir.normalize();
      const int label = static_cast<int>(ds.records[test[i]].label);
      q += probe_predict(probe, project_out(embeds[i], dir)) == label ? 1 : 0;
    }
    const auto dn = static_cast<double>(n);
    acc_orig.push_back(static_cast<double>(o) / dn);
    acc_pert.push_back(static_cast<double>(p) / dn);
    acc_rand.push_back(static_cast<double>(q) / dn);
  }
  report.original = mean_std(acc_orig);
  report.perturbed = mean_std(acc_pert);
  report.random = mean_std(acc_rand);
  return report;
}

std::string format_report_table(const std::vector<FaithfulnessReport>& reports) {
  auto cell = [](const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", m.mean, m.std);
    return std::string(buf);
  };
  std::string out = "| Method | Original CLS | Perturbed CLS | Random Perturbed CLS |\n";
  out += "|---|---|---|---|\n";
  for (const auto& r : reports) {
    out += "| " + r.method + " | " + cell(r.original) + " | " + cell(r.perturbed) + " | " +
           cell(r.random) + " |\n";
  }
  return out;
}

std::string reports_to_json(const std::vector<FaithfulnessReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["saliency"] = r.criterion;
    j["original_acc"] = {{"mean", r.original.mean}, {"std", r.original.std}};
    j["perturbed_acc"] = {{"mean", r.perturbed.mean}, {"std", r.perturbed.std}};
    j["random_acc"] = {{"mean", r.random.mean}, {"std", r.random.std}};
    nlohmann::ordered_json sal = nlohmann::ordered_json::array();
    for (const auto& s : r.salience) {
      sal.push_back({{"sentence_id", s.record}, {"token", s.token}, {"concept_id", s.concept_id}});
    }
    j["salience"] = std::move(sal);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace clvq
