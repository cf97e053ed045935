#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "htrlab/codes/codes.hpp"
#include "htrlab/error.hpp"

namespace htrlab::codes {

namespace {

// Clockwise in image coordinates, starting west.
constexpr std::array<Pixel, 8> kDirs{{{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}}};

int dir_index(const Pixel& from, const Pixel& to) {
  for (int k = 0; k < 8; ++k)
    if (from.r + kDirs[k].r == to.r && from.c + kDirs[k].c == to.c) return k;
  fail(ErrorCode::InvalidArgument, "pixels are not neighbours");
}

std::int64_t angle_bin(std::int64_t dr, std::int64_t dc) {
  // y grows upwards for the angle, rows grow downwards.
  double deg = std::atan2(static_cast<double>(-dr), static_cast<double>(dc)) * 180.0 / std::numbers::pi;
  if (deg < 0) deg += 360.0;
  const double width = 360.0 / static_cast<double>(kHingeBins);
  const auto b = static_cast<std::int64_t>(std::floor(deg / width + 1e-9));
  return std::clamp<std::int64_t>(b, 0, kHingeBins - 1);
}

}  // namespace

int otsu_threshold(const data::Image& img) {
  std::array<double, 256> hist{};
  for (double v : img.pixels) hist[static_cast<std::size_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))] += 1.0;
  const double n = static_cast<double>(img.pixels.size());
  double total = 0.0;
  for (int i = 0; i < 256; ++i) total += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int t_best = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (total - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      t_best = t;
    }
  }
  return t_best;
}

std::vector<std::uint8_t> binarize(const data::Image& img) {
  const int t = otsu_threshold(img);
  std::vector<std::uint8_t> mask(img.pixels.size(), 0);
  bool uniform = true;
  for (double v : img.pixels) uniform = uniform && v == img.pixels.front();
  if (uniform) return mask;  // nothing to separate
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0) <= t ? 1 : 0;
  return mask;
}

std::vector<std::vector<Pixel>> trace_contours(const std::vector<std::uint8_t>& mask, std::int64_t height,
                                               std::int64_t width) {
  require(static_cast<std::int64_t>(mask.size()) == height * width, ErrorCode::ShapeMismatch,
          "mask size does not match the image");
  auto ink = [&](const Pixel& p) {
    return p.r >= 0 && p.c >= 0 && p.r < height && p.c < width && mask[static_cast<std::size_t>(p.r * width + p.c)];
  };
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::vector<Pixel>> contours;
  std::vector<Pixel> stack;
  for (std::int64_t r = 0; r < height; ++r)
    for (std::int64_t c = 0; c < width; ++c) {
      const auto at = static_cast<std::size_t>(r * width + c);
      if (!mask[at] || seen[at]) continue;
      // Mark the whole component so it is traced once.
      stack.assign(1, Pixel{r, c});
      seen[at] = 1;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        for (const auto& d : kDirs) {
          const Pixel q{p.r + d.r, p.c + d.c};
          if (!ink(q)) continue;
          auto& s = seen[static_cast<std::size_t>(q.r * width + q.c)];
          if (!s) {
            s = 1;
            stack.push_back(q);
          }
        }
      }

      const Pixel start{r, c};
      std::vector<Pixel> contour{start};
      Pixel p = start, back{r, c - 1};  // west of a top-left pixel is background
      const std::int64_t limit = 4 * height * width + 8;
      for (std::int64_t it = 0; it < limit; ++it) {
        const int k0 = dir_index(p, back);
        bool found = false;
        Pixel next, next_back;
        for (int i = 1; i <= 8; ++i) {
          const int k = (k0 + i) % 8;
          const Pixel q{p.r + kDirs[k].r, p.c + kDirs[k].c};
          if (ink(q)) {
            next = q;
            const int kb = (k0 + i - 1) % 8;
            next_back = Pixel{p.r + kDirs[kb].r, p.c + kDirs[kb].c};
            found = true;
            break;
          }
        }
        if (!found) break;  // isolated pixel
        if (contour.size() >= 2 && p == start && next == contour[1]) {
          contour.pop_back();  // the closing visit of the start pixel
          break;
        }
        contour.push_back(next);
        back = next_back;
        p = next;
      }
      contours.push_back(std::move(contour));
    }
  return contours;
}

std::int64_t hinge_pair_index(std::int64_t a, std::int64_t b) {
  if (a > b) std::swap(a, b);
  require(a >= 0 && b < kHingeBins, ErrorCode::InvalidArgument, "hinge bin out of range");
  return a * kHingeBins - a * (a - 1) / 2 + (b - a);
}

std::vector<double> hinge_histogram(const data::Image& img) {
  const auto contours = trace_contours(binarize(img), img.height, img.width);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(kHingeSize), 0);
  std::int64_t used = 0;
  for (const auto& c : contours) {
    const auto n = static_cast<std::int64_t>(c.size());
    if (n < 2 * kHingeLeg + 1) continue;
    for (std::int64_t i = 0; i < n; ++i) {
      const Pixel& h = c[static_cast<std::size_t>(i)];
      const Pixel& fwd = c[static_cast<std::size_t>((i + kHingeLeg) % n)];
      const Pixel& bwd = c[static_cast<std::size_t>((i - kHingeLeg + n) % n)];
      const auto a = angle_bin(fwd.r - h.r, fwd.c - h.c);
      const auto b = angle_bin(bwd.r - h.r, bwd.c - h.c);
      ++counts[static_cast<std::size_t>(hinge_pair_index(a, b))];
      ++used;
    }
  }
  require(used >= kMinContourPixels, ErrorCode::InsufficientInk,
          "only " + std::to_string(used) + " usable contour pixels, need " + std::to_string(kMinContourPixels));
  std::vector<double> h(counts.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<double>(counts[i]) / static_cast<double>(used);
  return h;
}

std::vector<double> mean_vector(const std::vector<std::vector<double>>& vs) {
  require(!vs.empty(), ErrorCode::InsufficientSamples, "mean of no vectors");
  const std::size_t d = vs.front().size();
  std::vector<double> out(d), col(vs.size());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      require(vs[i].size() == d, ErrorCode::ShapeMismatch, "vectors differ in length");
      col[i] = vs[i][j];
    }
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double v : col) s += v;
    out[j] = s / static_cast<double>(vs.size());
  }
  return out;
}

std::vector<double> writer_hinge(const std::vector<const data::Image*>& images) {
  std::vector<std::vector<double>> hs;
  hs.reserve(images.size());
  for (const auto* img : images) {
    try {
      hs.push_back(hinge_histogram(*img));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientInk) throw;
    }
  }
  require(!hs.empty() || images.empty(), ErrorCode::InsufficientInk,
          "none of the writer's " + std::to_string(images.size()) + " images has enough ink for a hinge histogram");
  return mean_vector(hs);
}

}  // namespace htrlab::codes
