#pragma once

#include "tgh/image.hpp"

namespace tgh {

struct LossWeights {
  double mse = 0.8;
  double ssim = 0.2;
};

struct LossValue {
  double total = 0.0;
  double mse = 0.0;
  double ssim = 1.0;
  Image gradient;  // dL/d(rendered)
};

/// L = w.mse * mean((I - I_gt)^2) + w.ssim * (1 - SSIM(I, I_gt)).
/// Throws InvalidParameter on dimension mismatch.
LossValue image_loss(const Image& rendered, const Image& target, const LossWeights& weights);

/// 11x11 Gaussian window (sigma 1.5), zero-padded, C1 = 0.01^2, C2 = 0.03^2,
/// averaged over pixels and channels.
double ssim(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

}  // namespace tgh
