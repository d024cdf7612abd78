#pragma once

// Training losses: soft dice + stable BCE on mask logits, squared error on
// the IoU prediction against the actual (thresholded) IoU, and mean-L1
// embedding distillation.

#include <vector>

#include "swinseg/ops.hpp"

namespace swinseg {

struct LossBreakdown {
    double dice = 0.0, bce = 0.0, iou_mse = 0.0, total = 0.0;
};

// dice = 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), p = sigmoid(logits).
template <typename T>
Tensor<T> dice_loss(Graph<T>& g, const Tensor<T>& logits, const std::vector<T>& gt) {
    if (static_cast<int64_t>(gt.size()) != logits->numel())
        throw DimError("dice_loss: gt size does not match logits");
    constexpr T eps = static_cast<T>(1e-6);
    auto gt_leaf = make_tensor<T>(logits->shape, gt);
    auto p = sigmoid(g, logits);
    auto inter = sum_all(g, mul(g, p, gt_leaf));
    T gsum = 0;
    for (T v : gt) gsum += v;
    auto num = add_scalar(g, mul_scalar(g, inter, T(2)), eps);
    auto den = add_scalar(g, sum_all(g, p), gsum + eps);
    return add_scalar(g, mul_scalar(g, div(g, num, den), T(-1)), T(1));
}

template <typename T>
Tensor<T> bce_loss(Graph<T>& g, const Tensor<T>& logits, const std::vector<T>& gt) {
    return bce_with_logits_mean(g, logits, gt);
}

// Actual IoU of the thresholded prediction (logit > 0) against gt; both empty
// counts as 1.
template <typename T>
double actual_iou(const Tensor<T>& logits, const std::vector<uint8_t>& gt) {
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < logits->numel(); ++i) {
        const bool p = logits->data[i] > 0;
        const bool t = gt[i] != 0;
        inter += p && t;
        uni += p || t;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// (iou_pred - iou_actual)^2; iou_actual enters as a constant.
template <typename T>
Tensor<T> iou_loss(Graph<T>& g, const Tensor<T>& iou_pred, double iou_act) {
    auto diff = add_scalar(g, iou_pred, static_cast<T>(-iou_act));
    return sum_all(g, mul(g, diff, diff));
}

// Unit-weight sum of the three components. The breakdown reports the
// individual realized values.
template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Tensor<T>& logits, const Tensor<T>& iou_pred,
                     const std::vector<uint8_t>& gt, LossBreakdown* breakdown = nullptr) {
    std::vector<T> gt_t(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) gt_t[i] = static_cast<T>(gt[i]);
    auto d = dice_loss(g, logits, gt_t);
    auto b = bce_loss(g, logits, gt_t);
    auto m = iou_loss(g, iou_pred, actual_iou(logits, gt));
    auto tot = add(g, add(g, d, b), m);
    if (breakdown) {
        breakdown->dice = static_cast<double>(d->data[0]);
        breakdown->bce = static_cast<double>(b->data[0]);
        breakdown->iou_mse = static_cast<double>(m->data[0]);
        breakdown->total = static_cast<double>(tot->data[0]);
    }
    return tot;
}

// Mean absolute difference; a teacher on a different spatial grid is
// bilinearly resized to the student grid first.
template <typename T>
Tensor<T> distill_loss(Graph<T>& g, const Tensor<T>& student, Tensor<T> teacher) {
    if (student->shape.size() != 3 || teacher->shape.size() != 3)
        throw DimError("distill_loss: expected (C,H,W) embeddings");
    if (student->shape[0] != teacher->shape[0])
        throw ContractError("distill_loss: channel mismatch " + shape_str(student->shape) +
                            " vs " + shape_str(teacher->shape));
    if (teacher->shape != student->shape)
        teacher = bilinear_resize(g, teacher, student->shape[1], student->shape[2]);
    return mean_all(g, abs_op(g, sub(g, student, teacher)));
}

}  // namespace swinseg
