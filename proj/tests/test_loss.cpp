#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "tgh/error.hpp"
#include "tgh/loss.hpp"

using namespace tgh;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h);
  for (double& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("identical images have zero loss and zero gradient") {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 16, 12);
  const LossValue l = image_loss(a, a, {});
  CHECK(std::abs(l.total) < 1e-14);
  for (double g : l.gradient.data) CHECK(std::abs(g) < 1e-14);
}

TEST_CASE("constant offset with the MSE term only") {
  const Image a(8, 8, Eigen::Vector3d::Constant(0.4));
  const Image b(8, 8, Eigen::Vector3d::Constant(0.5));
  const LossValue l = image_loss(a, b, {0.8, 0.0});
  CHECK(l.total == doctest::Approx(0.008).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(2);
  const Image a = random_image(rng, 13, 9);
  const Image b = random_image(rng, 13, 9);
  const LossWeights w{0.8, 0.2};
  const LossValue l = image_loss(a, b, w);
  for (std::size_t i = 0; i < a.data.size(); i += 7) {
    auto f = [&](double v) {
      Image x = a;
      x.data[i] = v;
      return image_loss(x, b, w).total;
    };
    CHECK(test::close_rel(l.gradient.data[i], test::central_difference(f, a.data[i], 1e-5), 1e-5, 1e-10));
  }
}

TEST_CASE("ssim and psnr basics") {
  std::mt19937_64 rng(3);
  const Image a = random_image(rng, 20, 20);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  CHECK(std::isinf(psnr(a, a)));
  const Image z(20, 20), o(20, 20, Eigen::Vector3d::Constant(0.1));
  CHECK(psnr(z, o) == doctest::Approx(20.0));
}

TEST_CASE("dimension mismatch is rejected") {
  CHECK_THROWS_AS(image_loss(Image(4, 4), Image(4, 5), {}), Error);
}
