#pragma once

#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace phonolens {

struct Rgb {
  int r = 0, g = 0, b = 0;
  std::string hex() const;
};

// Blue (-1) through white (0) to red (+1); inputs are clamped.
Rgb diverging_colour(double t);
// Distinct categorical colour for index i.
Rgb categorical_colour(std::size_t i);

// Minimal SVG document builder; coordinates in user units.
class SvgCanvas {
 public:
  SvgCanvas(double width, double height);

  void rect(double x, double y, double w, double h, const Rgb& fill, std::string_view title = {});
  void circle(double cx, double cy, double r, const Rgb& fill, double opacity = 1.0,
              std::string_view title = {});
  void line(double x1, double y1, double x2, double y2, const Rgb& stroke, double width = 1.0);
  void text(double x, double y, std::string_view s, double size = 12.0,
            std::string_view anchor = "start", const Rgb& fill = {0, 0, 0});

  std::string str() const;

 private:
  double width_, height_;
  std::ostringstream body_;
};

std::string xml_escape(std::string_view s);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  std::size_t group = 0;  // colour index
  double radius = 4.0;
  bool show_label = true;
};

// Axis-scaled scatter plot with labelled points.
std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label);

}  // namespace phonolens
