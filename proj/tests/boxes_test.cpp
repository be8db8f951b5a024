#include "owdet/boxes.hpp"

#include "doctest.h"
#include "owdet/rng.hpp"

using namespace owdet;

namespace {
Box xyxy(double x0, double y0, double x1, double y1) { return from_corners(x0, y0, x1, y1); }
}  // namespace

TEST_CASE("giou of identical boxes is 1") {
    const Box b = xyxy(0.1, 0.2, 0.5, 0.8);
    CHECK(giou(b, b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(iou(b, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("giou of touching aligned boxes is 0 and equals iou") {
    const Box a = xyxy(0, 0, 1, 1);
    const Box b = xyxy(1, 0, 2, 1);
    CHECK(iou(a, b) == doctest::Approx(0.0));
    CHECK(giou(a, b) == doctest::Approx(0.0));  // enclosing box equals the union region
}

TEST_CASE("giou of separated boxes goes negative") {
    const Box a = xyxy(0, 0, 1, 1);
    const Box b = xyxy(2, 0, 3, 1);
    CHECK(giou(a, b) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("giou stays within [-1, 1] on random boxes") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        const Box a{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
        const Box b{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
        const double g = giou(a, b);
        CHECK(g >= -1.0);
        CHECK(g <= 1.0);
        CHECK(g <= iou(a, b) + 1e-12);
    }
}

TEST_CASE("corner round trip") {
    const Box b{0.4, 0.6, 0.2, 0.3};
    const CornerBox c = to_corners(b);
    const Box back = from_corners(c.x0, c.y0, c.x1, c.y1);
    CHECK(back.cx == doctest::Approx(b.cx));
    CHECK(back.cy == doctest::Approx(b.cy));
    CHECK(back.w == doctest::Approx(b.w));
    CHECK(back.h == doctest::Approx(b.h));
}
