#include "pad/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace pad::io {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is, const std::string& path) {
  int c = is.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) c = is.get();
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
      continue;
    }
    break;
  }
  if (c == EOF) throw IoError("truncated netpbm header: " + path);
  std::string tok;
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::string& path) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw IoError("bad netpbm header field '" + tok + "' in " + path);
  }
  const unsigned long v = std::stoul(tok);
  if (v == 0) throw IoError("zero dimension in netpbm header: " + path);
  return v;
}

}  // namespace

ImageFile read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing file: " + path);

  const std::string magic = next_token(is, path);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError("unsupported netpbm magic '" + magic + "' in " + path);
  }
  const std::size_t w = parse_dim(next_token(is, path), path);
  const std::size_t h = parse_dim(next_token(is, path), path);
  const std::size_t maxval = parse_dim(next_token(is, path), path);
  if (maxval != 255 && maxval != 65535) {
    throw IoError("unsupported sample depth " + std::to_string(maxval) + " in " + path);
  }
  // exactly one whitespace byte separates the header from the raster
  const std::size_t bytes_per_sample = maxval == 255 ? 1 : 2;
  const std::size_t n_samples = channels * h * w;
  std::vector<unsigned char> raw(n_samples * bytes_per_sample);
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw IoError("truncated raster data: " + path);
  }

  // interleaved raster -> planar [C, H, W] in [0, 1]; true division keeps
  // k -> k/maxval -> k round trips exact
  std::vector<double> v(n_samples);
  const double denom = static_cast<double>(maxval);
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t sample;
      if (bytes_per_sample == 1) {
        sample = raw[p * channels + c];
      } else {
        const std::size_t off = (p * channels + c) * 2;
        sample = (static_cast<std::size_t>(raw[off]) << 8) | raw[off + 1];
      }
      v[c * h * w + p] = static_cast<double>(sample) / denom;
    }
  }
  return ImageFile{Tensor({channels, h, w}, std::move(v)),
                   static_cast<std::uint32_t>(maxval)};
}

void write_image(const std::string& path, const Tensor& pixels, std::uint32_t maxval) {
  if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3)) {
    throw ShapeError("write_image expects [1, H, W] or [3, H, W], got " +
                     shape_str(pixels.shape()));
  }
  if (maxval != 255 && maxval != 65535) {
    throw ValueError("write_image: sample depth must be 255 or 65535");
  }
  const std::size_t channels = pixels.dim(0);
  const std::size_t h = pixels.dim(1);
  const std::size_t w = pixels.dim(2);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << (channels == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n" << maxval << "\n";

  const auto& v = pixels.data();
  const double m = static_cast<double>(maxval);
  std::vector<unsigned char> raw;
  raw.reserve(channels * h * w * (maxval == 255 ? 1 : 2));
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      double x = v[c * h * w + p];
      x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
      const auto q = static_cast<std::uint32_t>(std::lround(x * m));
      if (maxval == 255) {
        raw.push_back(static_cast<unsigned char>(q));
      } else {
        raw.push_back(static_cast<unsigned char>((q >> 8) & 0xff));
        raw.push_back(static_cast<unsigned char>(q & 0xff));
      }
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace pad::io
