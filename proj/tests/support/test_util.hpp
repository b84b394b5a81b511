#pragma once

#include <cmath>
#include <random>

#include "depthopt/image.hpp"

namespace depthopt::testutil {

inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_draw(rng);
}

inline Grid<double> random_grid(int w, int h, std::mt19937_64& rng, double lo, double hi) {
  Grid<double> g(w, h);
  for (auto& v : g.values()) v = uniform(rng, lo, hi);
  return g;
}

inline ImageRGB random_image(int w, int h, std::mt19937_64& rng) {
  ImageRGB img(w, h);
  for (int c = 0; c < 3; ++c) img.channel(c) = random_grid(w, h, rng, 0.0, 1.0);
  return img;
}

inline DepthField random_depth(int w, int h, std::mt19937_64& rng, double lo = 0.5,
                               double hi = 8.0) {
  DepthField d(w, h);
  d.valid.fill(1);
  for (auto& v : d.values.values()) v = uniform(rng, lo, hi);
  return d;
}

}  // namespace depthopt::testutil
