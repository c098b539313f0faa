#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cprn/tensor.hpp"

namespace cprn {

/// One evaluated sample: binarized prediction against ground truth.
struct SegmentationRecord {
    long intersection = 0;
    long union_area = 0;
    double iou = 1.0;  // both-empty convention

    static SegmentationRecord from_masks(const std::vector<std::uint8_t>& prediction,
                                         const std::vector<std::uint8_t>& truth);
    /// Threshold a score map at 0.5 and compare with truth (0/1 per pixel).
    static SegmentationRecord from_scores(const Tensor& score,
                                          const std::vector<std::uint8_t>& truth);
};

std::vector<std::uint8_t> binarize(const Tensor& score, real threshold = real(0.5));

struct MetricReport {
    double overall_iou = 0.0;
    double mean_iou = 0.0;
    std::map<double, double> pre_at;  // threshold -> fraction with IoU > threshold
    size_t count = 0;
};

/// Overall IoU accumulates areas across records; Pre@X uses strict inequality.
MetricReport metrics(const std::vector<SegmentationRecord>& records,
                     const std::vector<double>& thresholds = {0.5, 0.6, 0.7, 0.8, 0.9});

/// Line-oriented key=value rendering of a report.
std::string to_kv_text(const MetricReport& r);
/// JSON rendering (same fields as the key=value form).
std::string to_json_text(const MetricReport& r);

}  // namespace cprn
