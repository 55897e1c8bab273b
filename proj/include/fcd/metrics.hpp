#pragma once

// Confusion-matrix metrics. Rows are ground truth, columns predictions;
// class 0 is "no change". Semantic metrics follow the SECOND convention:
//   Fscd         harmonic mean of semantic precision / recall over change classes
//   SCD_IoU_mean mean IoU over change classes present in gt or prediction
//   SeK          exp(IoU_change - 1) * kappa(cm with [0,0] zeroed)
// Degenerate denominators yield 0 and set a flag; no NaNs escape.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcd/data_model.hpp"

namespace fcd {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes) : k_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
    if (classes < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
  }

  int classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }
  std::uint64_t& at(int gt, int pred) { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t row_sum(int k) const {
    std::uint64_t t = 0;
    for (int j = 0; j < k_; ++j) t += at(k, j);
    return t;
  }
  std::uint64_t col_sum(int k) const {
    std::uint64_t t = 0;
    for (int i = 0; i < k_; ++i) t += at(i, k);
    return t;
  }

  /// Adds one (pred, gt) map pair; gt pixels equal to `ignore` are skipped.
  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int ignore = kIgnoreLabel) {
    if (pred.size() != gt.size()) {
      throw std::invalid_argument("accumulate: prediction size " + std::to_string(pred.size()) +
                                  " != ground-truth size " + std::to_string(gt.size()));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      if (pred[i] >= k_) {
        throw std::out_of_range("accumulate: prediction " + std::to_string(pred[i]) + " at pixel " +
                                std::to_string(i) + " is out of range");
      }
      if (gt[i] >= k_) {
        throw std::out_of_range("accumulate: ground truth " + std::to_string(gt[i]) + " at pixel " +
                                std::to_string(i) + " is out of range");
      }
      ++at(gt[i], pred[i]);
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw std::invalid_argument("merge: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  /// Change (>= 1) vs no-change (0).
  ConfusionMatrix binarized() const {
    ConfusionMatrix b(2);
    for (int i = 0; i < k_; ++i)
      for (int j = 0; j < k_; ++j) b.at(i > 0 ? 1 : 0, j > 0 ? 1 : 0) += at(i, j);
    return b;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

/// Free-function form: returns the updated matrix.
inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("accumulate: prediction and ground truth shapes differ");
  }
  cm.accumulate(pred.values, gt.values);
  return cm;
}

struct BinaryMetrics {
  double precision = 0, recall = 0, f1 = 0, iou = 0, oa = 0;
  std::vector<std::string> degenerate;
};

struct ScdMetrics {
  double fscd = 0, sek = 0, scd_iou_mean = 0;
  std::vector<double> class_iou;   // per change class (index k-1), 0 when skipped
  std::vector<std::string> degenerate;
};

namespace detail {
inline double safe_div(double num, double den, const char* name, std::vector<std::string>& flags) {
  if (den == 0.0) {
    flags.emplace_back(name);
    return 0.0;
  }
  return num / den;
}
}  // namespace detail

/// Precision / recall / F1 / IoU / OA of the change class; K > 2 matrices are binarized first.
inline BinaryMetrics binary_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("binary_metrics: empty confusion matrix");
  const ConfusionMatrix b = cm.classes() == 2 ? cm : cm.binarized();
  const double tp = static_cast<double>(b.at(1, 1));
  const double fp = static_cast<double>(b.at(0, 1));
  const double fn = static_cast<double>(b.at(1, 0));
  const double tn = static_cast<double>(b.at(0, 0));
  BinaryMetrics m;
  m.precision = detail::safe_div(tp, tp + fp, "precision", m.degenerate);
  m.recall = detail::safe_div(tp, tp + fn, "recall", m.degenerate);
  m.f1 = detail::safe_div(2 * m.precision * m.recall, m.precision + m.recall, "f1", m.degenerate);
  m.iou = detail::safe_div(tp, tp + fp + fn, "iou", m.degenerate);
  m.oa = (tp + tn) / (tp + tn + fp + fn);
  return m;
}

struct ScdOptions {
  bool include_no_change_in_iou_mean = false;
};

inline ScdMetrics scd_metrics(const ConfusionMatrix& cm, ScdOptions opt = {}) {
  const int K = cm.classes();
  if (K < 2) throw std::invalid_argument("scd_metrics: need K >= 2");
  ScdMetrics m;

  double sem_tp = 0, pred_change = 0, gt_change = 0;
  for (int k = 1; k < K; ++k) {
    sem_tp += static_cast<double>(cm.at(k, k));
    pred_change += static_cast<double>(cm.col_sum(k));
    gt_change += static_cast<double>(cm.row_sum(k));
  }
  const double sp = detail::safe_div(sem_tp, pred_change, "semantic_precision", m.degenerate);
  const double sr = detail::safe_div(sem_tp, gt_change, "semantic_recall", m.degenerate);
  m.fscd = detail::safe_div(2 * sp * sr, sp + sr, "fscd", m.degenerate);

  double iou_sum = 0;
  int iou_n = 0;
  for (int k = opt.include_no_change_in_iou_mean ? 0 : 1; k < K; ++k) {
    const double inter = static_cast<double>(cm.at(k, k));
    const double uni = static_cast<double>(cm.row_sum(k) + cm.col_sum(k)) - inter;
    double iou = 0;
    if (uni == 0) {
      m.degenerate.push_back("class_iou_skipped_" + std::to_string(k));
    } else {
      iou = inter / uni;
      iou_sum += iou;
      ++iou_n;
    }
    if (k >= 1) m.class_iou.push_back(iou);
  }
  m.scd_iou_mean = detail::safe_div(iou_sum, iou_n, "scd_iou_mean", m.degenerate);

  // kappa on the matrix with the no-change/no-change cell removed
  double total = 0, diag = 0;
  std::vector<double> rows(K, 0), cols(K, 0);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double c = (i == 0 && j == 0) ? 0.0 : static_cast<double>(cm.at(i, j));
      total += c;
      rows[i] += c;
      cols[j] += c;
      if (i == j) diag += c;
    }
  double kappa = 0;
  if (total == 0) {
    m.degenerate.emplace_back("sek");
  } else {
    const double po = diag / total;
    double pe = 0;
    for (int k = 0; k < K; ++k) pe += rows[k] * cols[k];
    pe /= total * total;
    kappa = detail::safe_div(po - pe, 1.0 - pe, "sek", m.degenerate);
  }
  std::vector<std::string> scratch;
  const ConfusionMatrix b = cm.binarized();
  const double tp = static_cast<double>(b.at(1, 1));
  const double iou_change = detail::safe_div(tp, tp + b.at(0, 1) + b.at(1, 0), "iou", scratch);
  m.sek = kappa * std::exp(iou_change - 1.0);
  return m;
}

struct MetricsReport {
  BinaryMetrics binary;
  std::optional<ScdMetrics> scd;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["precision"] = binary.precision;
    j["recall"] = binary.recall;
    j["f1"] = binary.f1;
    j["iou"] = binary.iou;
    j["oa"] = binary.oa;
    std::vector<std::string> flags = binary.degenerate;
    if (scd) {
      j["fscd"] = scd->fscd;
      j["sek"] = scd->sek;
      j["scd_iou_mean"] = scd->scd_iou_mean;
      flags.insert(flags.end(), scd->degenerate.begin(), scd->degenerate.end());
    } else {
      j["fscd"] = nullptr;
      j["sek"] = nullptr;
      j["scd_iou_mean"] = nullptr;
    }
    j["degenerate_flags"] = flags;
    return j;
  }
};

inline MetricsReport make_report(const ConfusionMatrix& cm, TaskMode mode) {
  MetricsReport r;
  r.binary = binary_metrics(cm);
  if (mode == TaskMode::SCD) r.scd = scd_metrics(cm);
  return r;
}

}  // namespace fcd
