#pragma once

// Axis-aligned box matching and mAP@50.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace dbf {

struct BBox {
    double xmin = 0.0;
    double ymin = 0.0;
    double xmax = 0.0;
    double ymax = 0.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return width() * height(); }
    bool valid() const { return xmin <= xmax && ymin <= ymax; }
};

struct Detection {
    std::size_t image_id = 0;
    std::size_t class_id = 0;
    double score = 0.0;
    BBox box;
};

struct GroundTruth {
    std::size_t image_id = 0;
    std::size_t class_id = 0;
    BBox box;
};

enum class MatchLabel : unsigned char { false_positive = 0, true_positive = 1 };

enum class ApInterpolation : unsigned char { all_points, eleven_point };

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct ClassReport {
    std::size_t class_id = 0;
    std::size_t num_ground_truths = 0;
    std::size_t num_detections = 0;
    double ap = 0.0;
    std::vector<PrPoint> curve;  // one point per detection in score order
};

struct EvalReport {
    std::vector<ClassReport> classes;  // only classes with at least one ground truth
    double map50 = 0.0;

    std::optional<double> ap_of(std::size_t class_id) const;
};

// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

// Indices of `dets` sorted by descending score, ties by input index.
std::vector<std::size_t> score_order(std::span<const Detection> dets);

// Greedy matching in score order. A detection is a true positive when some
// still-unmatched ground truth of the same image and class overlaps it with
// IoU >= threshold; it claims the unmatched one with the largest IoU (first in
// input order on ties). Labels are returned in input order.
std::vector<MatchLabel> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                         double iou_threshold = 0.5);

// Area under the precision envelope for labels given in score order.
double average_precision(std::span<const MatchLabel> labels_in_score_order, std::size_t num_ground_truths,
                         ApInterpolation interpolation = ApInterpolation::all_points,
                         std::vector<PrPoint>* curve = nullptr);

EvalReport map50(std::span<const Detection> dets, std::span<const GroundTruth> gts, std::size_t num_classes,
                 ApInterpolation interpolation = ApInterpolation::all_points);

// CSV with header image_id,class_id,score,xmin,ymin,xmax,ymax. For ground
// truth files the score column is read and ignored.
std::vector<Detection> read_detections_csv(const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truths_csv(const std::filesystem::path& path);
void write_detections_csv(const std::filesystem::path& path, std::span<const Detection> dets);
void write_ground_truths_csv(const std::filesystem::path& path, std::span<const GroundTruth> gts);

}  // namespace dbf
