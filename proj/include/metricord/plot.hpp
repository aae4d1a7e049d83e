#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "metricord/error.hpp"
#include "metricord/io.hpp"
#include "metricord/linalg.hpp"
#include "metricord/matrix.hpp"

namespace metricord::plot {

// Spread ellipse for one location: the species cloud reweighted by that
// location's profile, summarized by its two weighted principal axes.
struct EllipseSpec {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Matrix2d axis_directions = Eigen::Matrix2d::Identity();  // orthonormal columns
  Eigen::Vector2d axis_lengths = Eigen::Vector2d::Zero();         // descending, nonnegative
  bool degenerate = false;  // profile is a point mass, the "ellipse" is at most a segment
};

inline EllipseSpec ellipse_for_location(const Matrix& species_coords, const Vector& x,
                                        const Eigen::Vector2d& center) {
  if (species_coords.cols() != 2)
    fail_invalid("ellipse_for_location needs 2-D species coordinates, got " +
                 std::to_string(species_coords.cols()) + " columns");
  if (x.size() != species_coords.rows())
    fail_invalid("profile has " + std::to_string(x.size()) + " entries for " +
                 std::to_string(species_coords.rows()) + " species");
  ensure_finite(species_coords, "species coordinates");
  if (x.minCoeff() < -1e-12 || std::abs(x.sum() - 1.0) > 1e-8)
    fail_invalid("ellipse_for_location expects a profile (nonnegative, summing to 1)");

  Matrix centered = species_coords;
  centered.col(0).array() -= center(0);
  centered.col(1).array() -= center(1);
  const Eigen::Matrix2d m =
      symmetrized(centered.transpose() * x.asDiagonal() * centered);

  const auto eig = linalg::eigen_sym(m);
  EllipseSpec spec;
  spec.center = center;
  spec.axis_directions = eig.eigenvectors;
  spec.axis_lengths(0) = std::sqrt(std::max(eig.eigenvalues(0), 0.0));
  spec.axis_lengths(1) = std::sqrt(std::max(eig.eigenvalues(1), 0.0));
  spec.degenerate = x.maxCoeff() > 1.0 - 1e-9;
  return spec;
}

// One panel of an ordination: locations (optionally grouped), an optional
// species layer, and optional per-location spread ellipses.
struct ScatterPlot {
  Matrix location_coords;                    // n x 2
  std::vector<std::string> location_labels;  // size n, or empty to hide text
  std::vector<std::string> location_groups;  // size n, or empty for a single group
  Matrix species_coords;                     // s x 2, or empty to skip the layer
  std::vector<std::string> species_labels;   // size s, or empty to hide text
  std::vector<EllipseSpec> ellipses;         // size n, or empty
  std::string title;
  std::string x_label = "axis 1";
  std::string y_label = "axis 2";
  int width = 720;
  int height = 540;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Frame {
  double x_mid, y_mid, scale;
  double cx, cy;  // pixel center of the drawing area

  double to_px(double x) const { return cx + (x - x_mid) * scale; }
  double to_py(double y) const { return cy - (y - y_mid) * scale; }
};

// Colors and marker shapes cycle per group, in first-appearance order.
inline const char* group_color(std::size_t g) {
  static const char* palette[] = {"#2b6cb0", "#c53030", "#2f855a",
                                  "#b7791f", "#6b46c1", "#4a5568"};
  return palette[g % 6];
}

inline void append_marker(std::string& svg, std::size_t g, double cx, double cy,
                          const std::string& fill) {
  const double r = 4.5;
  switch (g % 4) {
    case 0:
      svg += "<circle cx=\"" + px(cx) + "\" cy=\"" + px(cy) + "\" r=\"" + px(r) +
             "\" fill=\"" + fill + "\"/>\n";
      break;
    case 1:
      svg += "<rect x=\"" + px(cx - r) + "\" y=\"" + px(cy - r) + "\" width=\"" + px(2 * r) +
             "\" height=\"" + px(2 * r) + "\" fill=\"" + fill + "\"/>\n";
      break;
    case 2:
      svg += "<polygon points=\"" + px(cx) + "," + px(cy - r) + " " + px(cx - 0.87 * r) + "," +
             px(cy + 0.5 * r) + " " + px(cx + 0.87 * r) + "," + px(cy + 0.5 * r) +
             "\" fill=\"" + fill + "\"/>\n";
      break;
    default:
      svg += "<polygon points=\"" + px(cx) + "," + px(cy - r) + " " + px(cx + r) + "," + px(cy) +
             " " + px(cx) + "," + px(cy + r) + " " + px(cx - r) + "," + px(cy) + "\" fill=\"" +
             fill + "\"/>\n";
  }
}

inline std::string ellipse_path(const EllipseSpec& e, const Frame& f) {
  std::string d;
  const int segments = 72;
  for (int k = 0; k < segments; ++k) {
    const double t = 2.0 * std::numbers::pi * k / segments;
    const Eigen::Vector2d p = e.center + std::cos(t) * e.axis_lengths(0) * e.axis_directions.col(0) +
                              std::sin(t) * e.axis_lengths(1) * e.axis_directions.col(1);
    d += (k == 0 ? "M" : " L");
    d += px(f.to_px(p(0))) + " " + px(f.to_py(p(1)));
  }
  d += " Z";
  return d;
}

}  // namespace detail

inline std::string render_svg(const ScatterPlot& plot) {
  const Eigen::Index n = plot.location_coords.rows();
  const Eigen::Index s = plot.species_coords.rows();
  if (n == 0) fail_invalid("nothing to plot: no location coordinates");
  if (plot.location_coords.cols() != 2) fail_invalid("plot needs 2-D location coordinates");
  if (s > 0 && plot.species_coords.cols() != 2) fail_invalid("plot needs 2-D species coordinates");
  if (!plot.location_labels.empty() && static_cast<Eigen::Index>(plot.location_labels.size()) != n)
    fail_invalid("location label count does not match coordinate rows");
  if (!plot.location_groups.empty() && static_cast<Eigen::Index>(plot.location_groups.size()) != n)
    fail_invalid("location group count does not match coordinate rows");
  if (!plot.species_labels.empty() && static_cast<Eigen::Index>(plot.species_labels.size()) != s)
    fail_invalid("species label count does not match coordinate rows");
  if (!plot.ellipses.empty() && static_cast<Eigen::Index>(plot.ellipses.size()) != n)
    fail_invalid("ellipse count does not match location count");
  ensure_finite(plot.location_coords, "location coordinates");

  // data bounds over every layer, ellipse extents included
  double xmin = plot.location_coords.col(0).minCoeff();
  double xmax = plot.location_coords.col(0).maxCoeff();
  double ymin = plot.location_coords.col(1).minCoeff();
  double ymax = plot.location_coords.col(1).maxCoeff();
  if (s > 0) {
    xmin = std::min(xmin, plot.species_coords.col(0).minCoeff());
    xmax = std::max(xmax, plot.species_coords.col(0).maxCoeff());
    ymin = std::min(ymin, plot.species_coords.col(1).minCoeff());
    ymax = std::max(ymax, plot.species_coords.col(1).maxCoeff());
  }
  for (const auto& e : plot.ellipses) {
    const double hw = std::hypot(e.axis_lengths(0) * e.axis_directions(0, 0),
                                 e.axis_lengths(1) * e.axis_directions(0, 1));
    const double hh = std::hypot(e.axis_lengths(0) * e.axis_directions(1, 0),
                                 e.axis_lengths(1) * e.axis_directions(1, 1));
    xmin = std::min(xmin, e.center(0) - hw);
    xmax = std::max(xmax, e.center(0) + hw);
    ymin = std::min(ymin, e.center(1) - hh);
    ymax = std::max(ymax, e.center(1) + hh);
  }
  double span_x = xmax - xmin, span_y = ymax - ymin;
  if (span_x < 1e-12) span_x = 1.0;
  if (span_y < 1e-12) span_y = 1.0;

  const double margin = 48.0;
  // one scale for both axes so plotted distances are faithful
  detail::Frame frame;
  frame.x_mid = 0.5 * (xmin + xmax);
  frame.y_mid = 0.5 * (ymin + ymax);
  frame.scale = std::min((plot.width - 2 * margin) / (1.1 * span_x),
                         (plot.height - 2 * margin) / (1.1 * span_y));
  frame.cx = plot.width / 2.0;
  frame.cy = plot.height / 2.0;

  // groups in first-appearance order
  std::vector<std::string> group_names;
  std::vector<std::size_t> group_of(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string name =
        plot.location_groups.empty() ? "" : plot.location_groups[static_cast<std::size_t>(i)];
    auto it = std::find(group_names.begin(), group_names.end(), name);
    if (it == group_names.end()) {
      group_of[static_cast<std::size_t>(i)] = group_names.size();
      group_names.push_back(name);
    } else {
      group_of[static_cast<std::size_t>(i)] =
          static_cast<std::size_t>(it - group_names.begin());
    }
  }

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         std::to_string(plot.width) + "\" height=\"" + std::to_string(plot.height) +
         "\" viewBox=\"0 0 " + std::to_string(plot.width) + " " + std::to_string(plot.height) +
         "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"" + std::to_string(plot.width) + "\" height=\"" +
         std::to_string(plot.height) + "\" fill=\"#ffffff\"/>\n";

  if (!plot.title.empty())
    svg += "<text x=\"" + detail::px(plot.width / 2.0) +
           "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
           detail::xml_escape(plot.title) + "</text>\n";
  svg += "<text x=\"" + detail::px(plot.width / 2.0) + "\" y=\"" +
         detail::px(plot.height - 12.0) + "\" text-anchor=\"middle\" font-size=\"11\">" +
         detail::xml_escape(plot.x_label) + "</text>\n";
  svg += "<text x=\"14\" y=\"" + detail::px(plot.height / 2.0) +
         "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 14 " +
         detail::px(plot.height / 2.0) + ")\">" + detail::xml_escape(plot.y_label) + "</text>\n";

  // zero lines, when the origin is in frame
  const double pad_x = 0.55 * span_x, pad_y = 0.55 * span_y;
  if (0.0 >= frame.x_mid - pad_x && 0.0 <= frame.x_mid + pad_x)
    svg += "<line x1=\"" + detail::px(frame.to_px(0.0)) + "\" y1=\"" + detail::px(margin) +
           "\" x2=\"" + detail::px(frame.to_px(0.0)) + "\" y2=\"" +
           detail::px(plot.height - margin) + "\" stroke=\"#dddddd\"/>\n";
  if (0.0 >= frame.y_mid - pad_y && 0.0 <= frame.y_mid + pad_y)
    svg += "<line x1=\"" + detail::px(margin) + "\" y1=\"" + detail::px(frame.to_py(0.0)) +
           "\" x2=\"" + detail::px(plot.width - margin) + "\" y2=\"" +
           detail::px(frame.to_py(0.0)) + "\" stroke=\"#dddddd\"/>\n";

  for (std::size_t i = 0; i < plot.ellipses.size(); ++i) {
    const auto& e = plot.ellipses[i];
    if (e.axis_lengths(0) <= 0.0) continue;  // nothing to draw for a collapsed spread
    const char* color = detail::group_color(group_of[i]);
    svg += "<path class=\"ellipse\" d=\"" + detail::ellipse_path(e, frame) + "\" fill=\"" +
           color + "\" fill-opacity=\"0.10\" stroke=\"" + color +
           "\" stroke-opacity=\"0.55\"/>\n";
  }

  if (s > 0) {
    for (Eigen::Index j = 0; j < s; ++j) {
      const double cx = frame.to_px(plot.species_coords(j, 0));
      const double cy = frame.to_py(plot.species_coords(j, 1));
      svg += "<circle class=\"species\" cx=\"" + detail::px(cx) + "\" cy=\"" + detail::px(cy) +
             "\" r=\"2\" fill=\"#888888\"/>\n";
      if (!plot.species_labels.empty())
        svg += "<text x=\"" + detail::px(cx + 4) + "\" y=\"" + detail::px(cy - 3) +
               "\" font-size=\"8\" fill=\"#777777\" font-style=\"italic\">" +
               detail::xml_escape(plot.species_labels[static_cast<std::size_t>(j)]) +
               "</text>\n";
    }
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t g = group_of[static_cast<std::size_t>(i)];
    const double cx = frame.to_px(plot.location_coords(i, 0));
    const double cy = frame.to_py(plot.location_coords(i, 1));
    detail::append_marker(svg, g, cx, cy, detail::group_color(g));
    if (!plot.location_labels.empty())
      svg += "<text x=\"" + detail::px(cx + 6) + "\" y=\"" + detail::px(cy - 5) +
             "\" font-size=\"9\">" +
             detail::xml_escape(plot.location_labels[static_cast<std::size_t>(i)]) + "</text>\n";
  }

  if (group_names.size() > 1 || (group_names.size() == 1 && !group_names[0].empty())) {
    double ly = margin;
    for (std::size_t g = 0; g < group_names.size(); ++g) {
      detail::append_marker(svg, g, plot.width - margin - 70.0, ly, detail::group_color(g));
      svg += "<text x=\"" + detail::px(plot.width - margin - 60.0) + "\" y=\"" +
             detail::px(ly + 3.0) + "\" font-size=\"10\">" + detail::xml_escape(group_names[g]) +
             "</text>\n";
      ly += 16.0;
    }
  }

  svg += "</svg>\n";
  return svg;
}

inline void write_svg(const ScatterPlot& plot, const std::string& path) {
  write_text_file(path, render_svg(plot));
}

}  // namespace metricord::plot
