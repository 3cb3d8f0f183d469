#include "bg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>

#include "bg/common.hpp"

namespace bg {

void write_png(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3)
    throw ShapeError("write_png: expected (3,h,w), got " + chw.shape_str());
  const int h = chw.dim(1), w = chw.dim(2);
  cv::Mat img(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      // OpenCV stores BGR.
      for (int c = 0; c < 3; ++c) {
        double v = chw[(static_cast<std::size_t>(c) * h + y) * w + x];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[x][2 - c] = static_cast<unsigned char>(std::nearbyint(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), img, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw ArtifactError("write_png: failed to write " + path.string());
}

Tensor read_png(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty())
    throw ArtifactError("read_png: failed to read " + path.string());
  const int h = img.rows, w = img.cols;
  Tensor t({3, h, w});
  for (int y = 0; y < h; ++y) {
    const auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t[(static_cast<std::size_t>(c) * h + y) * w + x] =
            row[x][2 - c] / 255.0;
  }
  return t;
}

}  // namespace bg
