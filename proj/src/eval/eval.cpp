#include "dbf/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "dbf/csv.hpp"
#include "dbf/errors.hpp"

namespace dbf {

std::optional<double> EvalReport::ap_of(std::size_t class_id) const {
    for (const ClassReport& c : classes) {
        if (c.class_id == class_id) return c.ap;
    }
    return std::nullopt;
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    const double inter = iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

std::vector<MatchLabel> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                         double iou_threshold) {
    std::vector<MatchLabel> labels(dets.size(), MatchLabel::false_positive);
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t d : score_order(dets)) {
        const Detection& det = dets[d];
        std::optional<std::size_t> best;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].image_id != det.image_id || gts[g].class_id != det.class_id) continue;
            const double overlap = iou(det.box, gts[g].box);
            if (overlap > best_iou) {
                best_iou = overlap;
                best = g;
            }
        }
        if (best && best_iou >= iou_threshold) {
            taken[*best] = true;
            labels[d] = MatchLabel::true_positive;
        }
    }
    return labels;
}

double average_precision(std::span<const MatchLabel> labels, std::size_t num_ground_truths,
                         ApInterpolation interpolation, std::vector<PrPoint>* curve) {
    std::vector<PrPoint> points;
    points.reserve(labels.size());
    std::size_t tp = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        tp += labels[k] == MatchLabel::true_positive;
        const double recall = num_ground_truths ? static_cast<double>(tp) / static_cast<double>(num_ground_truths) : 0.0;
        points.push_back({recall, static_cast<double>(tp) / static_cast<double>(k + 1)});
    }
    if (curve) *curve = points;
    if (num_ground_truths == 0) return 0.0;

    // Precision envelope: max precision at any recall >= r_k.
    std::vector<double> envelope(points.size());
    double running = 0.0;
    for (std::size_t k = points.size(); k-- > 0;) {
        running = std::max(running, points[k].precision);
        envelope[k] = running;
    }

    if (interpolation == ApInterpolation::eleven_point) {
        double ap = 0.0;
        for (int t = 0; t <= 10; ++t) {
            const double r = t / 10.0;
            double p = 0.0;
            for (std::size_t k = 0; k < points.size(); ++k) {
                if (points[k].recall >= r) {
                    p = envelope[k];
                    break;
                }
            }
            ap += p / 11.0;
        }
        return ap;
    }

    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
        ap += (points[k].recall - prev_recall) * envelope[k];
        prev_recall = points[k].recall;
    }
    return ap;
}

EvalReport map50(std::span<const Detection> dets, std::span<const GroundTruth> gts, std::size_t num_classes,
                 ApInterpolation interpolation) {
    const std::vector<MatchLabel> labels = match_detections(dets, gts, 0.5);
    const std::vector<std::size_t> order = score_order(dets);

    EvalReport report;
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto n_gt = static_cast<std::size_t>(
            std::count_if(gts.begin(), gts.end(), [&](const GroundTruth& g) { return g.class_id == c; }));
        if (n_gt == 0) continue;
        std::vector<MatchLabel> class_labels;
        for (std::size_t d : order) {
            if (dets[d].class_id == c) class_labels.push_back(labels[d]);
        }
        ClassReport cr;
        cr.class_id = c;
        cr.num_ground_truths = n_gt;
        cr.num_detections = class_labels.size();
        cr.ap = average_precision(class_labels, n_gt, interpolation, &cr.curve);
        total += cr.ap;
        report.classes.push_back(std::move(cr));
    }
    if (!report.classes.empty()) report.map50 = total / static_cast<double>(report.classes.size());
    return report;
}

namespace {

constexpr const char* kBoxHeader = "image_id,class_id,score,xmin,ymin,xmax,ymax";

struct BoxRow {
    std::size_t image_id;
    std::size_t class_id;
    double score;
    BBox box;
};

std::vector<BoxRow> read_box_rows(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const std::vector<std::string> expected = split_csv_line(kBoxHeader);
    if (table.header != expected) throw IoError(path.string() + ": expected header '" + kBoxHeader + "'");
    std::vector<BoxRow> rows;
    rows.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& f = table.rows[r];
        const std::string where = path.string() + ":" + std::to_string(r + 2);
        BoxRow row{parse_size(f[0], where), parse_size(f[1], where), parse_double(f[2], where),
                   BBox{parse_double(f[3], where), parse_double(f[4], where), parse_double(f[5], where),
                        parse_double(f[6], where)}};
        if (!row.box.valid()) throw IoError(where + ": box has xmin > xmax or ymin > ymax");
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

std::vector<Detection> read_detections_csv(const std::filesystem::path& path) {
    std::vector<Detection> out;
    for (const BoxRow& r : read_box_rows(path)) out.push_back({r.image_id, r.class_id, r.score, r.box});
    return out;
}

std::vector<GroundTruth> read_ground_truths_csv(const std::filesystem::path& path) {
    std::vector<GroundTruth> out;
    for (const BoxRow& r : read_box_rows(path)) out.push_back({r.image_id, r.class_id, r.box});
    return out;
}

void write_detections_csv(const std::filesystem::path& path, std::span<const Detection> dets) {
    CsvWriter w(path, kBoxHeader);
    for (const Detection& d : dets) {
        w.row(d.image_id, d.class_id, d.score, d.box.xmin, d.box.ymin, d.box.xmax, d.box.ymax);
    }
}

void write_ground_truths_csv(const std::filesystem::path& path, std::span<const GroundTruth> gts) {
    CsvWriter w(path, kBoxHeader);
    for (const GroundTruth& g : gts) w.row(g.image_id, g.class_id, 1.0, g.box.xmin, g.box.ymin, g.box.xmax, g.box.ymax);
}

}  // namespace dbf
