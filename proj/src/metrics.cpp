#include "cprn/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

namespace cprn {

SegmentationRecord SegmentationRecord::from_masks(const std::vector<std::uint8_t>& prediction,
                                                  const std::vector<std::uint8_t>& truth) {
    if (prediction.size() != truth.size()) {
        throw DimError("SegmentationRecord: mask sizes differ");
    }
    SegmentationRecord r;
    for (size_t i = 0; i < truth.size(); ++i) {
        const bool p = prediction[i] != 0;
        const bool t = truth[i] != 0;
        r.intersection += (p && t) ? 1 : 0;
        r.union_area += (p || t) ? 1 : 0;
    }
    r.iou = r.union_area == 0 ? 1.0
                              : static_cast<double>(r.intersection) / static_cast<double>(r.union_area);
    return r;
}

SegmentationRecord SegmentationRecord::from_scores(const Tensor& score,
                                                   const std::vector<std::uint8_t>& truth) {
    return from_masks(binarize(score), truth);
}

std::vector<std::uint8_t> binarize(const Tensor& score, real threshold) {
    std::vector<std::uint8_t> out(score.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = score.data()[i] > threshold ? 1 : 0;
    }
    return out;
}

MetricReport metrics(const std::vector<SegmentationRecord>& records,
                     const std::vector<double>& thresholds) {
    if (records.empty()) {
        throw ValueError("metrics: empty evaluation");
    }
    MetricReport rep;
    rep.count = records.size();
    long total_inter = 0, total_union = 0;
    for (const auto& r : records) {
        total_inter += r.intersection;
        total_union += r.union_area;
    }
    // summing sorted values keeps the reduction insensitive to record order
    std::vector<double> ious;
    ious.reserve(records.size());
    for (const auto& r : records) ious.push_back(r.iou);
    std::sort(ious.begin(), ious.end());
    double iou_sum = 0.0;
    for (double v : ious) iou_sum += v;
    rep.overall_iou = total_union == 0
                          ? 1.0
                          : static_cast<double>(total_inter) / static_cast<double>(total_union);
    rep.mean_iou = iou_sum / static_cast<double>(records.size());
    for (double x : thresholds) {
        size_t hits = 0;
        for (const auto& r : records) {
            if (r.iou > x) ++hits;
        }
        rep.pre_at[x] = static_cast<double>(hits) / static_cast<double>(records.size());
    }
    return rep;
}

std::string to_kv_text(const MetricReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "count=" << r.count << "\n";
    os << "overall_iou=" << r.overall_iou << "\n";
    os << "mean_iou=" << r.mean_iou << "\n";
    for (const auto& [x, v] : r.pre_at) {
        std::ostringstream key;
        key << x;  // default formatting: pre@0.5, not pre@0.500000
        os << "pre@" << key.str() << "=" << v << "\n";
    }
    return os.str();
}

std::string to_json_text(const MetricReport& r) {
    nlohmann::json j;
    j["count"] = r.count;
    j["overall_iou"] = r.overall_iou;
    j["mean_iou"] = r.mean_iou;
    nlohmann::json pre = nlohmann::json::object();
    for (const auto& [x, v] : r.pre_at) {
        std::ostringstream key;
        key << x;
        pre[key.str()] = v;
    }
    j["pre_at"] = pre;
    return j.dump(2);
}

}  // namespace cprn
