#pragma once

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dgquant {

struct PlotSeries {
  std::string label;
  std::vector<double> values;
};

namespace detail {

inline cv::Scalar plot_color(size_t i) {
  static const cv::Scalar palette[] = {
      {180, 60, 40},  {40, 120, 200}, {60, 160, 60},  {30, 60, 200},
      {160, 40, 160}, {120, 120, 30}, {90, 90, 90},   {20, 160, 200}};
  return palette[i % 8];
}

}  // namespace detail

/// Simple line chart of one or more numeric series (e.g. loss per epoch).
inline void draw_line_chart(const std::string& path, const std::string& title,
                            const std::vector<PlotSeries>& series) {
  const int w = 900, h = 540, ml = 70, mr = 220, mt = 50, mb = 50;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double lo = 0, hi = 1;
  size_t max_len = 2;
  bool first = true;
  for (const PlotSeries& s : series)
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (const PlotSeries& s : series) max_len = std::max(max_len, s.values.size());
  if (hi <= lo) hi = lo + 1;

  cv::rectangle(img, {ml, mt}, {w - mr, h - mb}, cv::Scalar(120, 120, 120));
  cv::putText(img, title, {ml, mt - 18}, cv::FONT_HERSHEY_SIMPLEX, 0.7,
              cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = lo + (hi - lo) * tick / 4.0;
    const int y = h - mb - int((v - lo) / (hi - lo) * (h - mt - mb));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    cv::putText(img, buf, {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(80, 80, 80), 1,
                cv::LINE_AA);
    cv::line(img, {ml - 4, y}, {ml, y}, cv::Scalar(120, 120, 120));
  }
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& vals = series[si].values;
    const cv::Scalar col = detail::plot_color(si);
    cv::Point prev;
    bool have_prev = false;
    for (size_t i = 0; i < vals.size(); ++i) {
      if (!std::isfinite(vals[i])) continue;
      const int x = ml + int(double(i) / double(std::max<size_t>(1, max_len - 1)) *
                             (w - ml - mr));
      const int y = h - mb - int((vals[i] - lo) / (hi - lo) * (h - mt - mb));
      if (have_prev) cv::line(img, prev, {x, y}, col, 2, cv::LINE_AA);
      prev = {x, y};
      have_prev = true;
    }
    const int ly = mt + 22 * int(si);
    cv::line(img, {w - mr + 12, ly}, {w - mr + 42, ly}, col, 2);
    cv::putText(img, series[si].label, {w - mr + 50, ly + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
  }
  cv::imwrite(path, img);
}

struct BarEntry {
  std::string label;
  double value = 0;
  double err = 0;
};

/// Bar chart with optional error whiskers (e.g. mIoU per method).
inline void draw_bar_chart(const std::string& path, const std::string& title,
                           const std::vector<BarEntry>& bars) {
  const int w = std::max(500, 120 + int(bars.size()) * 110), h = 540, ml = 70, mt = 50, mb = 110;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double hi = 0;
  for (const BarEntry& b : bars) hi = std::max(hi, b.value + b.err);
  if (hi <= 0) hi = 1;
  hi *= 1.1;
  cv::putText(img, title, {ml, mt - 18}, cv::FONT_HERSHEY_SIMPLEX, 0.7, cv::Scalar(30, 30, 30),
              1, cv::LINE_AA);
  cv::line(img, {ml, h - mb}, {w - 30, h - mb}, cv::Scalar(120, 120, 120));
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = hi * tick / 4.0;
    const int y = h - mb - int(v / hi * (h - mt - mb));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    cv::putText(img, buf, {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(80, 80, 80), 1,
                cv::LINE_AA);
    cv::line(img, {ml - 4, y}, {ml, y}, cv::Scalar(120, 120, 120));
  }
  const int bw = 70;
  for (size_t i = 0; i < bars.size(); ++i) {
    const int x0 = ml + 30 + int(i) * 110;
    const int bh = int(bars[i].value / hi * (h - mt - mb));
    cv::rectangle(img, {x0, h - mb - bh}, {x0 + bw, h - mb}, detail::plot_color(i), cv::FILLED);
    if (bars[i].err > 0) {
      const int eh = int(bars[i].err / hi * (h - mt - mb));
      const int cx = x0 + bw / 2;
      cv::line(img, {cx, h - mb - bh - eh}, {cx, h - mb - bh + eh}, cv::Scalar(30, 30, 30), 2);
      cv::line(img, {cx - 8, h - mb - bh - eh}, {cx + 8, h - mb - bh - eh},
               cv::Scalar(30, 30, 30), 2);
      cv::line(img, {cx - 8, h - mb - bh + eh}, {cx + 8, h - mb - bh + eh},
               cv::Scalar(30, 30, 30), 2);
    }
    cv::putText(img, bars[i].label, {x0 - 12, h - mb + 24 + int(i % 2) * 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.42, cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
  }
  cv::imwrite(path, img);
}

}  // namespace dgquant
