#include "phonolens/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace phonolens {

std::string Rgb::hex() const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", std::clamp(r, 0, 255), std::clamp(g, 0, 255),
                std::clamp(b, 0, 255));
  return buf;
}

Rgb diverging_colour(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, -1.0, 1.0);
  const auto mix = [](int from, int to, double a) {
    return static_cast<int>(std::lround(from + (to - from) * a));
  };
  if (t >= 0) return {mix(255, 178, t), mix(255, 24, t), mix(255, 43, t)};
  return {mix(255, 33, -t), mix(255, 102, -t), mix(255, 172, -t)};
}

Rgb categorical_colour(std::size_t i) {
  static const Rgb palette[] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},  {255, 127, 14},
                                {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                {188, 189, 34},  {23, 190, 207}};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

SvgCanvas::SvgCanvas(double width, double height) : width_(width), height_(height) {}

void SvgCanvas::rect(double x, double y, double w, double h, const Rgb& fill, std::string_view title) {
  body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"" << fill.hex() << "\"";
  if (title.empty()) {
    body_ << "/>\n";
  } else {
    body_ << "><title>" << xml_escape(title) << "</title></rect>\n";
  }
}

void SvgCanvas::circle(double cx, double cy, double r, const Rgb& fill, double opacity,
                       std::string_view title) {
  body_ << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\"" << fill.hex()
        << "\" fill-opacity=\"" << opacity << "\"";
  if (title.empty()) {
    body_ << "/>\n";
  } else {
    body_ << "><title>" << xml_escape(title) << "</title></circle>\n";
  }
}

void SvgCanvas::line(double x1, double y1, double x2, double y2, const Rgb& stroke, double width) {
  body_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
        << "\" stroke=\"" << stroke.hex() << "\" stroke-width=\"" << width << "\"/>\n";
}

void SvgCanvas::text(double x, double y, std::string_view s, double size, std::string_view anchor,
                     const Rgb& fill) {
  body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
        << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << fill.hex()
        << "\">" << xml_escape(s) << "</text>\n";
}

std::string SvgCanvas::str() const {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_
      << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
      << body_.str() << "</svg>\n";
  return out.str();
}

std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label) {
  constexpr double W = 720, H = 640, margin = 60;
  double xmin = std::numeric_limits<double>::max(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (points.empty()) xmin = ymin = -1, xmax = ymax = 1;
  const double xpad = std::max(1e-9, (xmax - xmin) * 0.08), ypad = std::max(1e-9, (ymax - ymin) * 0.08);
  xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
  const auto sx = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (W - 2 * margin); };
  const auto sy = [&](double y) { return H - margin - (y - ymin) / (ymax - ymin) * (H - 2 * margin); };

  SvgCanvas svg(W, H);
  const Rgb grey{160, 160, 160};
  svg.line(margin, H - margin, W - margin, H - margin, grey);
  svg.line(margin, margin, margin, H - margin, grey);
  if (xmin < 0 && xmax > 0) svg.line(sx(0), margin, sx(0), H - margin, {220, 220, 220});
  if (ymin < 0 && ymax > 0) svg.line(margin, sy(0), W - margin, sy(0), {220, 220, 220});
  svg.text(W / 2, 30, title, 16, "middle");
  svg.text(W / 2, H - 20, x_label, 13, "middle");
  svg.text(18, H / 2, y_label, 13, "middle");
  char buf[32];
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    svg.text(sx(xv), H - margin + 16, buf, 10, "middle", grey);
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    svg.text(margin - 6, sy(yv) + 3, buf, 10, "end", grey);
  }
  for (const auto& p : points) {
    svg.circle(sx(p.x), sy(p.y), p.radius, categorical_colour(p.group), p.show_label ? 0.9 : 0.35,
               p.label);
    if (p.show_label && !p.label.empty()) svg.text(sx(p.x) + p.radius + 2, sy(p.y) - 2, p.label, 12);
  }
  return svg.str();
}

}  // namespace phonolens
