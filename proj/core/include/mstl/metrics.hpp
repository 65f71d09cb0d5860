#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace mstl {

struct EvalResult {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t count() const { return tp + fp + tn + fn; }
};

struct MetricGains {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

// Improvement of a pretrained-then-finetuned model (pretrained) over the same
// network trained from scratch (scratch): pretrained - scratch per metric.
struct TransferReport {
  EvalResult scratch;
  EvalResult pretrained;
  MetricGains improvement;
};

// Fraction of exact matches. ContractError on empty or mismatched input.
double accuracy(std::span<const int> preds, std::span<const int> labels);

// 2PR / (P + R) for the given positive class; 0 when P + R = 0. Labels and
// predictions must be binary ({0, 1}); ContractError otherwise.
double f1(std::span<const int> preds, std::span<const int> labels, int positive_class = 1);

// Mann-Whitney AUC with midranks for ties. UndefinedMetricError unless both
// classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Confusion counts, accuracy, F1 (positive class 1) and AUC over `scores`
// (positive-class scores).
EvalResult evaluate_predictions(std::span<const int> preds, std::span<const double> scores,
                                std::span<const int> labels);

TransferReport transfer_gain(const EvalResult& scratch, const EvalResult& pretrained);

// {"accuracy":..,"f1":..,"auc":..,"tp":..,"fp":..,"tn":..,"fn":..}, reals with
// six decimal places.
std::string to_json(const EvalResult& result);
EvalResult eval_result_from_json(const std::string& text);
std::string to_json(const TransferReport& report);

}  // namespace mstl
