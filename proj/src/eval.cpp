#include "imc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "imc/image_io.hpp"
#include "json.hpp"

namespace imc {

namespace fs = std::filesystem;

namespace {

void require_same_geometry(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError(std::string(what) + ": mask sizes differ (" + std::to_string(a.h) + "x" + std::to_string(a.w) +
                     " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
  }
}

BinaryMask dilate(const BinaryMask& m, int r) {
  BinaryMask out(m.h, m.w);
  std::vector<std::pair<int, int>> disk;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= r * r) disk.emplace_back(dy, dx);
    }
  }
  for (std::int64_t y = 0; y < m.h; ++y) {
    for (std::int64_t x = 0; x < m.w; ++x) {
      if (!m(y, x)) continue;
      for (auto [dy, dx] : disk) {
        const std::int64_t yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w) out(yy, xx) = 1;
      }
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  if (end <= begin) return 0;
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end),
                         0.0) /
         static_cast<double>(end - begin);
}

std::vector<std::string> frame_names(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& p : list_images(dir)) names.push_back(p.filename().string());
  return names;
}

std::vector<std::string> subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

SequenceScore score_sequence(const std::string& name, const fs::path& pred, const fs::path& gt) {
  const auto pn = frame_names(pred), gn = frame_names(gt);
  if (pn != gn) {
    throw DataError("frame sets differ for sequence " + name + ": " + std::to_string(pn.size()) + " predicted vs " +
                    std::to_string(gn.size()) + " ground-truth frames under " + pred.string() + " and " + gt.string());
  }
  if (pn.empty()) throw DataError("no frames in " + pred.string());
  std::vector<double> j, f;
  for (const auto& n : pn) {
    const BinaryMask p = BinaryMask::from_tensor(read_mask(pred / n));
    const BinaryMask g = BinaryMask::from_tensor(read_mask(gt / n));
    j.push_back(region_j(p, g));
    f.push_back(boundary_f(p, g));
  }
  return aggregate_sequence(name, std::move(j), std::move(f));
}

nlohmann::json stats_json(const MetricStats& s) {
  return {{"mean", s.mean}, {"recall", s.recall}, {"decay", s.decay}};
}

}  // namespace

BinaryMask BinaryMask::from_tensor(const TensorF& t) {
  require_nchw(t, "BinaryMask");
  if (t.n() != 1 || t.c() != 1) throw ShapeError("BinaryMask expects (1,1,H,W), got " + shape_str(t.shape()));
  BinaryMask m(t.h(), t.w());
  for (std::int64_t i = 0; i < t.numel(); ++i) m.bits[static_cast<std::size_t>(i)] = t[i] >= 0.5f ? 1 : 0;
  return m;
}

std::int64_t BinaryMask::count() const { return std::count(bits.begin(), bits.end(), std::uint8_t{1}); }

double region_j(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_geometry(pred, gt, "region_j");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    inter += pred.bits[i] & gt.bits[i];
    uni += pred.bits[i] | gt.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask mask_boundary(const BinaryMask& m) {
  BinaryMask b(m.h, m.w);
  for (std::int64_t y = 0; y < m.h; ++y) {
    for (std::int64_t x = 0; x < m.w; ++x) {
      if (!m(y, x)) continue;
      const bool edge = (y > 0 && !m(y - 1, x)) || (y + 1 < m.h && !m(y + 1, x)) || (x > 0 && !m(y, x - 1)) ||
                        (x + 1 < m.w && !m(y, x + 1));
      b(y, x) = edge ? 1 : 0;
    }
  }
  return b;
}

int default_boundary_tolerance(std::int64_t h, std::int64_t w) {
  const double diag = std::sqrt(static_cast<double>(h * h + w * w));
  return static_cast<int>(std::ceil(0.008 * diag));
}

double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance) {
  require_same_geometry(pred, gt, "boundary_f");
  const int r = tolerance < 0 ? default_boundary_tolerance(pred.h, pred.w) : tolerance;
  const BinaryMask pb = mask_boundary(pred), gb = mask_boundary(gt);
  const std::int64_t np = pb.count(), ng = gb.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const BinaryMask pd = dilate(pb, r), gd = dilate(gb, r);
  std::int64_t p_hit = 0, g_hit = 0;
  for (std::size_t i = 0; i < pb.bits.size(); ++i) {
    p_hit += pb.bits[i] & gd.bits[i];
    g_hit += gb.bits[i] & pd.bits[i];
  }
  const double precision = static_cast<double>(p_hit) / static_cast<double>(np);
  const double recall = static_cast<double>(g_hit) / static_cast<double>(ng);
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

MetricStats summarize(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("cannot summarize an empty score list");
  MetricStats s;
  s.mean = mean_of(scores, 0, scores.size());
  s.recall = static_cast<double>(std::count_if(scores.begin(), scores.end(), [](double v) { return v > 0.5; })) /
             static_cast<double>(scores.size());
  const std::size_t n = scores.size();
  if (n >= 4) {
    const std::size_t base = n / 4, extra = n % 4;
    const std::size_t first_end = base + (extra > 0 ? 1 : 0);
    const std::size_t last_begin = n - base;
    s.decay = mean_of(scores, 0, first_end) - mean_of(scores, last_begin, n);
  }
  return s;
}

SequenceScore aggregate_sequence(std::string name, std::vector<double> j, std::vector<double> f) {
  if (j.size() != f.size()) throw DataError("J and F lists differ in length for " + name);
  SequenceScore s;
  s.name = std::move(name);
  s.j = std::move(j);
  s.f = std::move(f);
  s.j_stats = summarize(s.j);
  s.f_stats = summarize(s.f);
  s.jf_mean = (s.j_stats.mean + s.f_stats.mean) / 2;
  return s;
}

DatasetScore aggregate(std::vector<SequenceScore> sequences) {
  if (sequences.empty()) throw DataError("no sequences to aggregate");
  DatasetScore d;
  const auto n = static_cast<double>(sequences.size());
  for (const auto& s : sequences) {
    d.j.mean += s.j_stats.mean / n;
    d.j.recall += s.j_stats.recall / n;
    d.j.decay += s.j_stats.decay / n;
    d.f.mean += s.f_stats.mean / n;
    d.f.recall += s.f_stats.recall / n;
    d.f.decay += s.f_stats.decay / n;
  }
  d.jf_mean = (d.j.mean + d.f.mean) / 2;
  d.sequences = std::move(sequences);
  return d;
}

DatasetScore evaluate_dirs(const fs::path& pred, const fs::path& gt) {
  if (!fs::is_directory(pred)) throw IoError("not a directory: " + pred.string());
  if (!fs::is_directory(gt)) throw IoError("not a directory: " + gt.string());
  const auto ps = subdirs(pred), gs = subdirs(gt);
  std::vector<SequenceScore> out;
  if (ps.empty() && gs.empty()) {
    out.push_back(score_sequence(gt.filename().string(), pred, gt));
  } else {
    if (ps != gs) throw DataError("sequence sets differ between " + pred.string() + " and " + gt.string());
    for (const auto& s : ps) out.push_back(score_sequence(s, pred / s, gt / s));
  }
  return aggregate(std::move(out));
}

std::string to_jsonl(const DatasetScore& score) {
  std::ostringstream os;
  for (const auto& s : score.sequences) {
    nlohmann::json j{{"sequence", s.name},     {"frames", s.j.size()},     {"J", stats_json(s.j_stats)},
                     {"F", stats_json(s.f_stats)}, {"JF_mean", s.jf_mean}, {"J_per_frame", s.j},
                     {"F_per_frame", s.f}};
    os << j.dump() << "\n";
  }
  nlohmann::json d{{"sequence", "__dataset__"},
                   {"sequences", score.sequences.size()},
                   {"J", stats_json(score.j)},
                   {"F", stats_json(score.f)},
                   {"JF_mean", score.jf_mean}};
  os << d.dump() << "\n";
  return os.str();
}

std::string to_csv(const DatasetScore& score) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "sequence,frames,J_mean,J_recall,J_decay,F_mean,F_recall,F_decay,JF_mean\n";
  auto row = [&os](const std::string& name, std::size_t frames, const MetricStats& j, const MetricStats& f, double jf) {
    os << name << "," << frames << "," << j.mean << "," << j.recall << "," << j.decay << "," << f.mean << ","
       << f.recall << "," << f.decay << "," << jf << "\n";
  };
  std::size_t total = 0;
  for (const auto& s : score.sequences) {
    row(s.name, s.j.size(), s.j_stats, s.f_stats, s.jf_mean);
    total += s.j.size();
  }
  row("__dataset__", total, score.j, score.f, score.jf_mean);
  return os.str();
}

}  // namespace imc
