#pragma once

#include <string_view>
#include <vector>

#include "htrlab/data/image.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::data {

struct Point {
  double x = 0.0, y = 0.0;
};

using Polyline = std::vector<Point>;

/// Single-stroke glyph in font units: baseline at y=0, x-height at y=1,
/// ascenders reach 1.6 and descenders -0.6.
struct Glyph {
  double advance = 1.0;
  std::vector<Polyline> strokes;
};

/// Built-in polyline font for 'a'..'z'. Throws IndexOutOfVocab otherwise.
const Glyph& glyph(char c);

/// Per-writer handwriting parameters.
struct WriterStyle {
  double slant = 0.0;          // radians, positive leans right
  double stroke_width = 1.6;   // px on the native canvas
  double baseline_wobble = 0;  // px amplitude
  double glyph_jitter = 0.0;   // font units
  double ink_noise = 0.0;      // Gaussian sigma on pixel values
  double letter_spacing = 0.25;
  double x_scale = 1.0;

  friend bool operator==(const WriterStyle&, const WriterStyle&) = default;
};

struct StyleRanges {
  double slant_max = 0.45;
  double width_min = 1.1, width_max = 2.6;
  double wobble_max = 1.2;
  double jitter_max = 0.06;
  double noise_max = 0.04;
  double spacing_min = 0.1, spacing_max = 0.45;
  double x_scale_min = 0.8, x_scale_max = 1.2;
};

WriterStyle sample_style(Rng& rng, const StyleRanges& ranges = {});

/// Renders `text` on a height x width canvas. `rng` drives glyph jitter,
/// wobble phase and ink noise. Pixel values are quantized to k/255.
Image render_word(std::string_view text, const WriterStyle& style, Rng& rng, std::int64_t height = 32,
                  std::int64_t width = 128);

/// Anti-aliased thick polyline drawn onto img (ink darkens pixels).
void draw_polyline(Image& img, const Polyline& line, double width);

}  // namespace htrlab::data
