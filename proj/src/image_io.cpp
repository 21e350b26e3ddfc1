#include "imc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "imc/error.hpp"

namespace imc {

namespace {

cv::Mat to_mat(const TensorF& t) {
  require_nchw(t, "image");
  const int h = static_cast<int>(t.h()), w = static_cast<int>(t.w()), c = static_cast<int>(t.c());
  cv::Mat m(h, w, CV_32FC(c));
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<float>(y);
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) row[x * c + k] = t.at(0, k, y, x);
    }
  }
  return m;
}

TensorF from_mat(const cv::Mat& m) {
  const int c = m.channels();
  TensorF t({1, c, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<float>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int k = 0; k < c; ++k) t.at(0, k, y, x) = row[x * c + k];
    }
  }
  return t;
}

}  // namespace

TensorF read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  TensorF t({1, 3, bgr.rows, bgr.cols});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int k = 0; k < 3; ++k) t.at(0, k, y, x) = static_cast<float>(row[x][2 - k]) / 255.0f;
    }
  }
  return t;
}

TensorF read_mask(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read mask " + path.string());
  TensorF t({1, 1, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) t.at(0, 0, y, x) = row[x] ? 1.0f : 0.0f;
  }
  return t;
}

void write_rgb(const std::filesystem::path& path, const TensorF& image) {
  require_nchw(image, "write_rgb");
  if (image.c() != 3) throw ShapeError("write_rgb expects 3 channels, got " + shape_str(image.shape()));
  cv::Mat out(static_cast<int>(image.h()), static_cast<int>(image.w()), CV_8UC3);
  for (int y = 0; y < out.rows; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < out.cols; ++x) {
      for (int k = 0; k < 3; ++k) {
        const float v = std::clamp(image.at(0, k, y, x), 0.0f, 1.0f);
        row[x][2 - k] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write " + path.string());
}

void write_mask(const std::filesystem::path& path, const TensorF& mask, bool probabilities) {
  require_nchw(mask, "write_mask");
  if (mask.c() != 1) throw ShapeError("write_mask expects one channel, got " + shape_str(mask.shape()));
  cv::Mat out(static_cast<int>(mask.h()), static_cast<int>(mask.w()), CV_8UC1);
  for (int y = 0; y < out.rows; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < out.cols; ++x) {
      const float v = mask.at(0, 0, y, x);
      row[x] = probabilities ? static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))
                             : (v >= 0.5f ? 255 : 0);
    }
  }
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write " + path.string());
}

TensorF resize_bilinear(const TensorF& image, std::int64_t h, std::int64_t w) {
  if (image.h() == h && image.w() == w) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_LINEAR);
  return from_mat(out.reshape(static_cast<int>(image.c())));
}

TensorF resize_nearest(const TensorF& mask, std::int64_t h, std::int64_t w) {
  if (mask.h() == h && mask.w() == w) return mask;
  cv::Mat out;
  cv::resize(to_mat(mask), out, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_NEAREST);
  return from_mat(out.reshape(static_cast<int>(mask.c())));
}

TensorF warp_affine(const TensorF& image, const std::array<double, 6>& m) {
  cv::Mat out;
  const cv::Mat affine(2, 3, CV_64F, const_cast<double*>(m.data()));
  cv::warpAffine(to_mat(image), out, affine, cv::Size(static_cast<int>(image.w()), static_cast<int>(image.h())),
                 cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return from_mat(out.reshape(static_cast<int>(image.c())));
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return out;
}

}  // namespace imc
