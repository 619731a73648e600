#pragma once

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <stdexcept>
#include <string>

#include "dgquant/tensor.hpp"

namespace dgquant {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// PNG/JPG -> [3,H,W] RGB tensor with values in [0,1].
template <typename T>
Tensor<T> read_image01(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot read image: " + path);
  Tensor<T> t({3, img.rows, img.cols});
  const int64_t hw = int64_t(img.rows) * img.cols;
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      const cv::Vec3b px = img.at<cv::Vec3b>(y, x);  // BGR order
      const int64_t p = int64_t(y) * img.cols + x;
      t.at(0 * hw + p) = static_cast<T>(px[2]) / T(255);
      t.at(1 * hw + p) = static_cast<T>(px[1]) / T(255);
      t.at(2 * hw + p) = static_cast<T>(px[0]) / T(255);
    }
  return t;
}

/// Single-channel 8-bit label mask -> [H,W] int tensor.
inline Tensor<int32_t> read_mask(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw IoError("cannot read mask: " + path);
  Tensor<int32_t> t({img.rows, img.cols});
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      t.at(int64_t(y) * img.cols + x) = img.at<uint8_t>(y, x);
  return t;
}

template <typename T>
void write_image01(const std::string& path, const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw IoError("write_image01: expected [3,H,W] tensor");
  const int H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
  const int64_t hw = int64_t(H) * W;
  cv::Mat img(H, W, CV_8UC3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int64_t p = int64_t(y) * W + x;
      auto to8 = [](T v) {
        return static_cast<uint8_t>(std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0));
      };
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(to8(t.at(2 * hw + p)), to8(t.at(1 * hw + p)),
                                          to8(t.at(0 * hw + p)));
    }
  if (!cv::imwrite(path, img)) throw IoError("cannot write image: " + path);
}

inline void write_mask(const std::string& path, const Tensor<int32_t>& t) {
  if (t.rank() != 2) throw IoError("write_mask: expected [H,W] tensor");
  const int H = static_cast<int>(t.dim(0)), W = static_cast<int>(t.dim(1));
  cv::Mat img(H, W, CV_8UC1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.at<uint8_t>(y, x) = static_cast<uint8_t>(t.at(int64_t(y) * W + x));
  if (!cv::imwrite(path, img)) throw IoError("cannot write mask: " + path);
}

/// Bilinear resize of a [3,H,W] image tensor.
template <typename T>
Tensor<T> resize_image(const Tensor<T>& t, int64_t out_h, int64_t out_w) {
  if (t.dim(1) == out_h && t.dim(2) == out_w) return t;
  const int H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
  Tensor<T> out({3, out_h, out_w});
  for (int c = 0; c < 3; ++c) {
    cv::Mat src(H, W, CV_32FC1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        src.at<float>(y, x) = static_cast<float>(t.at((int64_t(c) * H + y) * W + x));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(out_w), static_cast<int>(out_h)), 0, 0,
               cv::INTER_LINEAR);
    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        out.at((c * out_h + y) * out_w + x) = static_cast<T>(dst.at<float>(int(y), int(x)));
  }
  return out;
}

/// Nearest-neighbor resize of a [H,W] label mask; never invents labels.
inline Tensor<int32_t> resize_mask(const Tensor<int32_t>& t, int64_t out_h, int64_t out_w) {
  if (t.dim(0) == out_h && t.dim(1) == out_w) return t;
  const int64_t H = t.dim(0), W = t.dim(1);
  Tensor<int32_t> out({out_h, out_w});
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      const int64_t sy = std::min(H - 1, static_cast<int64_t>((y + 0.5) * H / out_h));
      const int64_t sx = std::min(W - 1, static_cast<int64_t>((x + 0.5) * W / out_w));
      out.at(y * out_w + x) = t.at(sy * W + sx);
    }
  return out;
}

/// Prediction overlay: label-k pixels tinted with a per-class color.
template <typename T>
void write_overlay(const std::string& path, const Tensor<T>& image,
                   const Tensor<int32_t>& pred) {
  const int64_t H = image.dim(1), W = image.dim(2);
  if (pred.dim(0) != H || pred.dim(1) != W)
    throw IoError("write_overlay: prediction/image size mismatch");
  static const double palette[][3] = {
      {0, 0, 0}, {1.0, 0.1, 0.1}, {0.1, 0.9, 0.2}, {0.2, 0.3, 1.0},
      {1.0, 0.9, 0.1}, {0.9, 0.2, 0.9}, {0.1, 0.9, 0.9}, {1.0, 0.6, 0.1}};
  Tensor<T> out = image.clone();
  const int64_t hw = H * W;
  for (int64_t p = 0; p < hw; ++p) {
    const int32_t k = pred.at(p);
    if (k <= 0) continue;
    const double* col = palette[k % 8];
    for (int c = 0; c < 3; ++c)
      out.at(c * hw + p) = static_cast<T>(0.45 * double(out.at(c * hw + p)) + 0.55 * col[c]);
  }
  write_image01(path, out);
}

}  // namespace dgquant
