#include "htrlab/data/font.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "htrlab/error.hpp"

namespace htrlab::data {

namespace {

constexpr double kPi = std::numbers::pi;

/// Elliptic arc from angle a0 to a1 (degrees, counter-clockwise positive).
Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 16) {
  Polyline p;
  for (int i = 0; i <= n; ++i) {
    const double a = (a0 + (a1 - a0) * i / n) * kPi / 180.0;
    p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return p;
}

Polyline join(Polyline a, const Polyline& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Polyline line(std::initializer_list<Point> pts) { return Polyline(pts); }

Polyline bowl() { return arc(0.35, 0.5, 0.35, 0.5, 0, 360, 24); }

std::array<Glyph, 26> make_font() {
  std::array<Glyph, 26> f;
  auto set = [&](char c, double adv, std::vector<Polyline> s) { f[static_cast<std::size_t>(c - 'a')] = {adv, std::move(s)}; };
  set('a', 0.75, {bowl(), line({{0.7, 1.0}, {0.7, 0.0}})});
  set('b', 0.7, {line({{0.0, 1.6}, {0.0, 0.0}}), bowl()});
  set('c', 0.65, {arc(0.35, 0.5, 0.35, 0.5, 40, 320)});
  set('d', 0.75, {bowl(), line({{0.7, 1.6}, {0.7, 0.0}})});
  set('e', 0.7, {join(line({{0.0, 0.5}, {0.7, 0.5}}), arc(0.35, 0.5, 0.35, 0.5, 0, 320))});
  set('f', 0.6, {join(arc(0.55, 1.35, 0.25, 0.25, 20, 180, 8), line({{0.3, 0.0}})), line({{0.05, 1.0}, {0.55, 1.0}})});
  set('g', 0.75, {bowl(), join(line({{0.7, 1.0}, {0.7, -0.3}}), arc(0.35, -0.3, 0.35, 0.3, 0, -180, 10))});
  set('h', 0.75, {line({{0.0, 1.6}, {0.0, 0.0}}), join(join(line({{0.0, 0.5}}), arc(0.35, 0.5, 0.35, 0.4, 180, 0, 10)), line({{0.7, 0.0}}))});
  set('i', 0.2, {line({{0.1, 1.0}, {0.1, 0.0}}), line({{0.1, 1.3}, {0.1, 1.42}})});
  set('j', 0.45, {join(line({{0.35, 1.0}, {0.35, -0.3}}), arc(0.1, -0.3, 0.25, 0.3, 0, -180, 8)), line({{0.35, 1.3}, {0.35, 1.42}})});
  set('k', 0.65, {line({{0.0, 1.6}, {0.0, 0.0}}), line({{0.6, 1.0}, {0.0, 0.4}}), line({{0.2, 0.6}, {0.65, 0.0}})});
  set('l', 0.25, {line({{0.05, 1.6}, {0.05, 0.15}, {0.2, 0.0}})});
  set('m', 1.1, {line({{0.0, 1.0}, {0.0, 0.0}}), join(join(line({{0.0, 0.6}}), arc(0.275, 0.6, 0.275, 0.4, 180, 0, 8)), line({{0.55, 0.0}})),
                 join(join(line({{0.55, 0.6}}), arc(0.825, 0.6, 0.275, 0.4, 180, 0, 8)), line({{1.1, 0.0}}))});
  set('n', 0.7, {line({{0.0, 1.0}, {0.0, 0.0}}), join(join(line({{0.0, 0.5}}), arc(0.35, 0.5, 0.35, 0.45, 180, 0, 10)), line({{0.7, 0.0}}))});
  set('o', 0.7, {bowl()});
  set('p', 0.7, {line({{0.0, 1.0}, {0.0, -0.6}}), bowl()});
  set('q', 0.85, {bowl(), line({{0.7, 1.0}, {0.7, -0.6}, {0.85, -0.45}})});
  set('r', 0.55, {line({{0.0, 1.0}, {0.0, 0.0}}), join(line({{0.0, 0.6}}), arc(0.3, 0.6, 0.3, 0.35, 180, 60, 8))});
  set('s', 0.6, {join(arc(0.3, 0.75, 0.3, 0.25, 30, 270, 10), arc(0.3, 0.25, 0.3, 0.25, 90, -150, 10))});
  set('t', 0.6, {join(join(line({{0.25, 1.4}, {0.25, 0.15}}), arc(0.45, 0.15, 0.2, 0.15, 180, 270, 6)), line({{0.6, 0.05}})),
                 line({{0.0, 1.0}, {0.55, 1.0}})});
  set('u', 0.7, {join(join(line({{0.0, 1.0}, {0.0, 0.4}}), arc(0.35, 0.4, 0.35, 0.4, 180, 360, 10)), line({{0.7, 1.0}})),
                 line({{0.7, 1.0}, {0.7, 0.0}})});
  set('v', 0.7, {line({{0.0, 1.0}, {0.35, 0.0}, {0.7, 1.0}})});
  set('w', 1.0, {line({{0.0, 1.0}, {0.25, 0.0}, {0.5, 0.7}, {0.75, 0.0}, {1.0, 1.0}})});
  set('x', 0.7, {line({{0.0, 1.0}, {0.7, 0.0}}), line({{0.0, 0.0}, {0.7, 1.0}})});
  set('y', 0.7, {line({{0.0, 1.0}, {0.35, 0.05}}), line({{0.7, 1.0}, {0.05, -0.6}})});
  set('z', 0.7, {line({{0.0, 1.0}, {0.7, 1.0}, {0.0, 0.0}, {0.7, 0.0}})});
  return f;
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

const Glyph& glyph(char c) {
  static const std::array<Glyph, 26> font = make_font();
  require(c >= 'a' && c <= 'z', ErrorCode::IndexOutOfVocab, std::string("no glyph for '") + c + "'");
  return font[static_cast<std::size_t>(c - 'a')];
}

WriterStyle sample_style(Rng& rng, const StyleRanges& r) {
  WriterStyle s;
  s.slant = rng.uniform(-r.slant_max, r.slant_max);
  s.stroke_width = rng.uniform(r.width_min, r.width_max);
  s.baseline_wobble = rng.uniform(0.0, r.wobble_max);
  s.glyph_jitter = rng.uniform(0.0, r.jitter_max);
  s.ink_noise = rng.uniform(0.0, r.noise_max);
  s.letter_spacing = rng.uniform(r.spacing_min, r.spacing_max);
  s.x_scale = rng.uniform(r.x_scale_min, r.x_scale_max);
  return s;
}

void draw_polyline(Image& img, const Polyline& line, double width) {
  const double half = 0.5 * width;
  for (std::size_t k = 0; k + 1 < line.size() || (line.size() == 1 && k == 0); ++k) {
    const Point a = line[k];
    const Point b = line.size() == 1 ? line[0] : line[k + 1];
    const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a.y, b.y) - half - 1)));
    const auto r1 = std::min<std::int64_t>(img.height - 1, static_cast<std::int64_t>(std::ceil(std::max(a.y, b.y) + half + 1)));
    const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a.x, b.x) - half - 1)));
    const auto c1 = std::min<std::int64_t>(img.width - 1, static_cast<std::int64_t>(std::ceil(std::max(a.x, b.x) + half + 1)));
    for (std::int64_t r = r0; r <= r1; ++r)
      for (std::int64_t c = c0; c <= c1; ++c) {
        const double d = segment_distance(static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5, a, b);
        const double ink = std::clamp(half + 0.5 - d, 0.0, 1.0);
        if (ink > 0.0) img.at(r, c) = std::min(img.at(r, c), 1.0 - ink);
      }
  }
}

Image render_word(std::string_view text, const WriterStyle& style, Rng& rng, std::int64_t height, std::int64_t width) {
  require(!text.empty(), ErrorCode::InvalidArgument, "cannot render an empty word");
  require(height >= 8 && width >= 8, ErrorCode::InvalidRange, "canvas too small");
  const double unit = static_cast<double>(height) / 2.8;
  const double baseline = static_cast<double>(height) - 0.9 * unit;
  const double shear = std::tan(style.slant);

  // Lay out glyph origins in font units.
  std::vector<double> origin;
  double pen = 0.0;
  for (char c : text) {
    origin.push_back(pen);
    pen += glyph(c).advance * style.x_scale + style.letter_spacing;
  }
  const double word_units = pen - style.letter_spacing;
  const double lean = std::abs(shear) * 1.6;
  const double avail = static_cast<double>(width) - 4.0 - style.stroke_width;
  const double squeeze = std::min(1.0, avail / ((word_units + lean) * unit));
  const double span = (word_units + lean) * unit * squeeze;
  const double x0 = 0.5 * (static_cast<double>(width) - span) + (shear < 0 ? lean * unit * squeeze : 0.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);

  Image img(height, width, 1.0);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Glyph& g = glyph(text[i]);
    const double jx = rng.normal(0.0, style.glyph_jitter), jy = rng.normal(0.0, style.glyph_jitter);
    for (const auto& stroke : g.strokes) {
      Polyline px;
      for (const auto& p : stroke) {
        const double gx = origin[i] + (p.x + jx) * style.x_scale;
        const double gy = p.y + jy;
        const double X = x0 + (gx + gy * shear) * unit * squeeze;
        const double Y = baseline - gy * unit + style.baseline_wobble * std::sin(2.0 * kPi * X / 40.0 + phase);
        px.push_back({X, Y});
      }
      draw_polyline(img, px, style.stroke_width);
    }
  }
  if (style.ink_noise > 0.0)
    for (double& v : img.pixels) v += rng.normal(0.0, style.ink_noise);
  quantize8(img);
  return img;
}

}  // namespace htrlab::data
