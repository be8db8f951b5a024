#include "owdet/losses.hpp"

#include <cmath>

#include "owdet/hungarian.hpp"

namespace owdet {

Tensor reciprocal(const Tensor& a) {
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        if (x == 0.0) throw NumericError("reciprocal: division by zero");
        out[i] = 1.0 / x;
    }
    Tensor in = a;
    return custom_op(a.shape(), std::move(out), {a}, [in](const std::vector<double>& g) {
        if (!in.requires_grad()) return;
        auto& ig = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = in.values()[i];
            ig[i] += -g[i] / (x * x);
        }
    });
}

Tensor absolute(const Tensor& a) { return add(relu(a), relu(scale(a, -1.0))); }

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const std::vector<double>& targets, double gamma,
                  double alpha) {
    if (targets.size() != logits.values().size())
        throw ShapeError("focal_loss: target count " + std::to_string(targets.size()) +
                         " does not match logits " + shape_str(logits.shape()));
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double z = logits.values()[i];
        const double s = stable_sigmoid(z);
        if (targets[i] > 0.5) {
            // -alpha * (1 - p)^gamma * log(p)
            total += alpha * std::pow(1.0 - s, gamma) * softplus(-z);
        } else {
            // -(1 - alpha) * p^gamma * log(1 - p)
            total += (1.0 - alpha) * std::pow(s, gamma) * softplus(z);
        }
    }
    Tensor in = logits;
    auto tg = std::make_shared<std::vector<double>>(targets);
    return custom_op({}, {total}, {logits}, [in, tg, gamma, alpha](const std::vector<double>& g) {
        if (!in.requires_grad()) return;
        auto& ig = in.grad_buffer();
        const double go = g[0];
        for (std::size_t i = 0; i < tg->size(); ++i) {
            const double z = in.values()[i];
            const double s = stable_sigmoid(z);
            double dz;
            if ((*tg)[i] > 0.5) {
                const double log_s = -softplus(-z);
                dz = alpha * gamma * std::pow(1.0 - s, gamma) * s * log_s -
                     alpha * std::pow(1.0 - s, gamma + 1.0);
            } else {
                const double log_1ms = -softplus(z);
                dz = -(1.0 - alpha) * gamma * std::pow(s, gamma) * (1.0 - s) * log_1ms +
                     (1.0 - alpha) * std::pow(s, gamma + 1.0);
            }
            ig[i] += go * dz;
        }
    });
}

namespace {

struct BoxParts {
    Tensor x0, y0, x1, y1, area;
};

Tensor coord(const Tensor& row, std::int64_t i) { return slice(row, 1, i, i + 1); }

BoxParts corners_of_row(const Tensor& row) {
    Tensor cx = coord(row, 0), cy = coord(row, 1), w = coord(row, 2), h = coord(row, 3);
    BoxParts p;
    p.x0 = add(cx, scale(w, -0.5));
    p.x1 = add(cx, scale(w, 0.5));
    p.y0 = add(cy, scale(h, -0.5));
    p.y1 = add(cy, scale(h, 0.5));
    p.area = mul(w, h);
    return p;
}

Tensor const_like(const Tensor& t, double v) { return Tensor::full(t.shape(), v); }

Tensor max_t(const Tensor& a, const Tensor& b) { return add(a, relu(sub(b, a))); }
Tensor min_t(const Tensor& a, const Tensor& b) { return sub(a, relu(sub(a, b))); }

}  // namespace

Tensor box_l1(const Tensor& pred_boxes, int pred_index, const Box& gt) {
    Tensor row = slice(pred_boxes, 0, pred_index, pred_index + 1);
    Tensor target = Tensor::from_values({1, 4}, {gt.cx, gt.cy, gt.w, gt.h});
    return sum(absolute(sub(row, target)));
}

Tensor box_giou(const Tensor& pred_boxes, int pred_index, const Box& gt) {
    Tensor row = slice(pred_boxes, 0, pred_index, pred_index + 1);
    BoxParts p = corners_of_row(row);
    const CornerBox g = to_corners(gt);
    Tensor gx0 = const_like(p.x0, g.x0), gy0 = const_like(p.y0, g.y0);
    Tensor gx1 = const_like(p.x1, g.x1), gy1 = const_like(p.y1, g.y1);

    Tensor iw = relu(sub(min_t(p.x1, gx1), max_t(p.x0, gx0)));
    Tensor ih = relu(sub(min_t(p.y1, gy1), max_t(p.y0, gy0)));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(p.area, const_like(p.area, box_area(gt))), inter);
    Tensor iou_t = mul(inter, reciprocal(uni));

    Tensor ew = sub(max_t(p.x1, gx1), min_t(p.x0, gx0));
    Tensor eh = sub(max_t(p.y1, gy1), min_t(p.y0, gy0));
    Tensor enclose = mul(ew, eh);
    Tensor penalty = mul(sub(enclose, uni), reciprocal(enclose));
    return sum(sub(iou_t, penalty));
}

std::vector<int> match_predictions(const Tensor& pred_boxes, const Tensor& class_logits,
                                   const std::vector<GroundTruth>& gts,
                                   const DetectionLossWeights& w) {
    if (gts.empty()) return {};
    const std::int64_t n_queries = pred_boxes.extent(0);
    std::vector<std::vector<double>> cost(gts.size(),
                                          std::vector<double>(static_cast<std::size_t>(n_queries)));
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const Box& gt_box = gts[g].box;
        for (std::int64_t q = 0; q < n_queries; ++q) {
            const Box pb{pred_boxes.at(q, 0), pred_boxes.at(q, 1), pred_boxes.at(q, 2),
                         pred_boxes.at(q, 3)};
            const double p = stable_sigmoid(class_logits.at(q, gts[g].class_index));
            const double l1 = std::abs(pb.cx - gt_box.cx) + std::abs(pb.cy - gt_box.cy) +
                              std::abs(pb.w - gt_box.w) + std::abs(pb.h - gt_box.h);
            cost[g][static_cast<std::size_t>(q)] =
                w.cls * (1.0 - p) + w.l1 * l1 + w.giou * (1.0 - giou(pb, gt_box));
        }
    }
    return hungarian_assign(cost).pred_for_gt;
}

Tensor detection_loss(const Tensor& pred_boxes, const Tensor& class_logits,
                      const std::vector<GroundTruth>& gts, const std::vector<int>& assignment,
                      const DetectionLossWeights& w) {
    if (assignment.size() != gts.size())
        throw ContractError("detection_loss: assignment does not cover all ground truths");
    const std::int64_t n_classes = class_logits.extent(1);

    std::vector<double> targets(class_logits.values().size(), 0.0);
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const int q = assignment[g];
        targets[static_cast<std::size_t>(q * n_classes + gts[g].class_index)] = 1.0;
    }
    Tensor total = scale(focal_loss(class_logits, targets, w.focal_gamma, w.focal_alpha), w.cls);

    for (std::size_t g = 0; g < gts.size(); ++g) {
        const int q = assignment[g];
        Tensor l1 = box_l1(pred_boxes, q, gts[g].box);
        Tensor giou_loss = sub(Tensor::scalar(1.0), box_giou(pred_boxes, q, gts[g].box));
        total = add(total, add(scale(l1, w.l1), scale(giou_loss, w.giou)));
    }
    const double denom = static_cast<double>(std::max<std::size_t>(1, gts.size()));
    return scale(total, 1.0 / denom);
}

}  // namespace owdet
