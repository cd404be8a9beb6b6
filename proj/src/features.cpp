#include "avcap/features.hpp"

#include <cmath>

#include "avcap/io_util.hpp"

namespace avcap {

namespace {
constexpr char kMagic[4] = {'A', 'V', 'C', 'F'};
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw ContractError("feature write: value count does not match dims");
  std::ofstream os = open_out_binary(path);
  os.write(kMagic, 4);
  put_u32(os, 2);
  put_u32(os, static_cast<std::uint32_t>(m.rows));
  put_u32(os, static_cast<std::uint32_t>(m.cols));
  for (float v : m.values) put_f32(os, v);
  if (!os) throw IoError("feature write failed: " + path.string());
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream is = open_in_binary(path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("feature read: bad magic in " + path.string());
  const std::uint32_t rank = get_u32(is);
  if (rank != 2) throw IoError("feature read: unsupported rank " + std::to_string(rank) + " in " + path.string());
  FeatureMatrix m;
  m.rows = get_u32(is);
  m.cols = get_u32(is);
  m.values.resize(m.rows * m.cols);
  for (float& v : m.values) v = get_f32(is);
  return m;
}

std::pair<std::size_t, std::size_t> frames_in_window(double t0, double t1, double period, std::size_t total) {
  if (period <= 0) throw ContractError("frames_in_window: period must be positive");
  const double eps = 1e-9;
  auto first_at_or_after = [&](double t) {
    const double q = t / period;
    double c = std::ceil(q - eps);
    if (c < 0) c = 0;
    return static_cast<std::size_t>(c);
  };
  std::size_t first = first_at_or_after(t0);
  std::size_t last = first_at_or_after(t1);
  first = std::min(first, total);
  last = std::min(last, total);
  if (last < first) last = first;
  return {first, last};
}

Tensor rows_to_tensor(const FeatureMatrix& m, std::size_t first, std::size_t last) {
  if (last > m.rows || first > last) throw ContractError("rows_to_tensor: range out of bounds");
  const std::size_t n = last - first;
  Tensor t = Tensor::zeros({n, m.cols});
  std::copy(m.values.begin() + static_cast<std::ptrdiff_t>(first * m.cols),
            m.values.begin() + static_cast<std::ptrdiff_t>(last * m.cols), t.data->begin());
  return t;
}

}  // namespace avcap
