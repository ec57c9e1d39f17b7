#include "flowloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flowloc/error.hpp"

namespace flowloc {

std::size_t ConsensusMap::area() const { return static_cast<std::size_t>(std::count(gt.begin(), gt.end(), 1)); }

Plane upsample_bilinear(const Tensor& map, std::size_t width, std::size_t height) {
  if (map.rank() != 2) throw ShapeError("upsample_bilinear: expected [m,n] map, got " + to_string(map.shape()));
  Plane src(map.dim(1), map.dim(0));
  std::copy(map.data().begin(), map.data().end(), src.values.begin());
  if (width < src.width || height < src.height) throw ShapeError("upsample_bilinear: target smaller than map");
  return resize_bilinear(src, width, height);
}

ConsensusMap consensus_map(std::span<const Box> boxes, std::size_t agreement, std::size_t width, std::size_t height) {
  if (boxes.empty()) throw DataError("consensus_map: no annotations");
  if (agreement < 1 || agreement > boxes.size()) throw DataError("consensus_map: agreement out of range");
  ConsensusMap m;
  m.width = width;
  m.height = height;
  m.agreement = agreement;
  m.gt.assign(width * height, 0);
  std::vector<std::size_t> votes(width * height, 0);
  for (const auto& b : boxes) {
    for (std::size_t y = 0; y < height; ++y) {
      double cy = static_cast<double>(y) + 0.5;
      if (cy < b.y || cy >= b.y + b.h) continue;
      for (std::size_t x = 0; x < width; ++x) {
        double cx = static_cast<double>(x) + 0.5;
        if (cx >= b.x && cx < b.x + b.w) ++votes[y * width + x];
      }
    }
  }
  bool any = false;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i] >= agreement) {
      m.gt[i] = 1;
      any = true;
    }
  }
  if (!any) throw DataError("empty consensus");
  return m;
}

double ciou(const Plane& pred, const ConsensusMap& gt, double map_threshold) {
  if (pred.width != gt.width || pred.height != gt.height) throw ShapeError("ciou: prediction/ground-truth size mismatch");
  if (pred.values.empty()) return 0.0;
  for (double v : pred.values) {
    if (!std::isfinite(v)) throw NumericError("ciou: non-finite prediction");
  }
  auto [lo, hi] = std::minmax_element(pred.values.begin(), pred.values.end());
  const double mn = *lo, range = *hi - *lo;
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    double p = range > 0.0 ? (pred.values[i] - mn) / range : 1.0;
    bool on = p >= map_threshold;
    bool g = gt.gt[i] != 0;
    inter += (on && g);
    uni += (on || g);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double auc(std::span<const double> cious, std::size_t steps) {
  if (cious.empty()) throw UsageError("auc: empty list");
  if (steps == 0) throw UsageError("auc: zero steps");
  double total = 0.0;
  for (std::size_t i = 1; i <= steps; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(steps);
    auto hits = std::count_if(cious.begin(), cious.end(), [t](double c) { return c >= t; });
    total += static_cast<double>(hits) / static_cast<double>(cious.size());
  }
  return total / static_cast<double>(steps);
}

EvalResult summarize(std::vector<std::string> ids, std::vector<double> cious, std::size_t auc_steps) {
  EvalResult r;
  r.ids = std::move(ids);
  r.ciou = std::move(cious);
  if (r.ciou.empty()) return r;
  auto hits = std::count_if(r.ciou.begin(), r.ciou.end(), [](double c) { return c >= 0.5; });
  r.ciou_at_05 = static_cast<double>(hits) / static_cast<double>(r.ciou.size());
  r.auc = auc(r.ciou, auc_steps);
  return r;
}

std::map<std::string, Annotation> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::map<std::string, Annotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream is(line);
    Annotation a;
    if (!(is >> a.id >> a.width >> a.height)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id width height");
    }
    std::vector<double> nums;
    double v;
    while (is >> v) nums.push_back(v);
    if (!is.eof() || nums.empty() || nums.size() % 4 != 0) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": boxes must be groups of x y w h");
    }
    for (std::size_t i = 0; i < nums.size(); i += 4) a.boxes.push_back({nums[i], nums[i + 1], nums[i + 2], nums[i + 3]});
    out[a.id] = std::move(a);
  }
  return out;
}

std::string format_annotation(const Annotation& a) {
  std::ostringstream os;
  os << a.id << ' ' << a.width << ' ' << a.height;
  for (const auto& b : a.boxes) os << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h;
  return os.str();
}

std::string format_report(const EvalResult& r) {
  std::ostringstream os;
  os << "# id\tciou\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < r.ciou.size(); ++i) os << r.ids[i] << '\t' << r.ciou[i] << '\n';
  os << "samples\t" << r.ciou.size() << '\n';
  os << "ciou@0.5\t" << r.ciou_at_05 << '\n';
  os << "auc\t" << r.auc << '\n';
  return os.str();
}

}  // namespace flowloc
