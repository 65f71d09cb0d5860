#include "mstl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mstl/errors.hpp"

namespace mstl {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ContractError("metric inputs differ in length (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  if (a == 0) throw ContractError("metric inputs are empty");
}

void check_binary(std::span<const int> v, const char* what) {
  for (int x : v) {
    if (x != 0 && x != 1) throw ContractError(std::string(what) + " must be binary, found " + std::to_string(x));
  }
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1(std::span<const int> preds, std::span<const int> labels, int positive_class) {
  check_lengths(preds.size(), labels.size());
  check_binary(preds, "predictions");
  check_binary(labels, "labels");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == positive_class, l = labels[i] == positive_class;
    tp += (p && l) ? 1 : 0;
    fp += (p && !l) ? 1 : 0;
    fn += (!p && l) ? 1 : 0;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  check_binary(labels, "labels");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive ranks with tied groups sharing their average rank.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetricError("AUC needs both positive and negative labels");
  const double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

EvalResult evaluate_predictions(std::span<const int> preds, std::span<const double> scores,
                                std::span<const int> labels) {
  check_lengths(preds.size(), labels.size());
  check_lengths(scores.size(), labels.size());
  EvalResult r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == 1, l = labels[i] == 1;
    if (p && l) ++r.tp;
    else if (p) ++r.fp;
    else if (l) ++r.fn;
    else ++r.tn;
  }
  r.accuracy = accuracy(preds, labels);
  r.f1 = f1(preds, labels, 1);
  r.auc = auc(scores, labels);
  return r;
}

TransferReport transfer_gain(const EvalResult& scratch, const EvalResult& pretrained) {
  return {scratch, pretrained,
          {pretrained.accuracy - scratch.accuracy, pretrained.f1 - scratch.f1, pretrained.auc - scratch.auc}};
}

std::string to_json(const EvalResult& r) {
  return fmt::format(R"({{"accuracy":{:.6f},"f1":{:.6f},"auc":{:.6f},"tp":{},"fp":{},"tn":{},"fn":{}}})",
                     r.accuracy, r.f1, r.auc, r.tp, r.fp, r.tn, r.fn);
}

EvalResult eval_result_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalResult r;
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.auc = j.at("auc").get<double>();
    r.tp = j.at("tp").get<std::size_t>();
    r.fp = j.at("fp").get<std::size_t>();
    r.tn = j.at("tn").get<std::size_t>();
    r.fn = j.at("fn").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed metric report: ") + e.what());
  }
}

std::string to_json(const TransferReport& t) {
  return fmt::format(
      R"({{"scratch":{},"pretrained":{},"improvement":{{"accuracy":{:.6f},"f1":{:.6f},"auc":{:.6f}}}}})",
      to_json(t.scratch), to_json(t.pretrained), t.improvement.accuracy, t.improvement.f1, t.improvement.auc);
}

}  // namespace mstl
