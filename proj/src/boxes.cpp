#include "owdet/boxes.hpp"

namespace owdet {

namespace {

struct Overlap {
    double inter = 0, uni = 0, enclose = 0;
};

Overlap overlap(const Box& a, const Box& b) {
    const CornerBox p = to_corners(a), q = to_corners(b);
    const double iw = std::max(0.0, std::min(p.x1, q.x1) - std::max(p.x0, q.x0));
    const double ih = std::max(0.0, std::min(p.y1, q.y1) - std::max(p.y0, q.y0));
    Overlap o;
    o.inter = iw * ih;
    o.uni = box_area(a) + box_area(b) - o.inter;
    const double ew = std::max(p.x1, q.x1) - std::min(p.x0, q.x0);
    const double eh = std::max(p.y1, q.y1) - std::min(p.y0, q.y0);
    o.enclose = ew * eh;
    return o;
}

}  // namespace

double iou(const Box& a, const Box& b) {
    const Overlap o = overlap(a, b);
    return o.uni > 0 ? o.inter / o.uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    const Overlap o = overlap(a, b);
    const double iou_val = o.uni > 0 ? o.inter / o.uni : 0.0;
    if (o.enclose <= 0) return iou_val;
    return iou_val - (o.enclose - o.uni) / o.enclose;
}

}  // namespace owdet
