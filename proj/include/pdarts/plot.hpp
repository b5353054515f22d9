// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pdarts/data.hpp"
#include "pdarts/error.hpp"
#include "pdarts/image_io.hpp"

namespace pdarts {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Figure {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool scatter = false;
  std::vector<Series> series;
};

/// Header plus string cells; '#' lines are skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_csv_line(line);
    if (t.header.empty())
      t.header = std::move(f);
    else if (f.size() == t.header.size())
      t.rows.push_back(std::move(f));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Rasterizer

namespace detail {

// 5x7 glyphs, one byte per row, low 5 bits used (bit 4 is the left column).
inline const std::array<std::uint8_t, 7>* glyph(char c) {
  static const std::map<char, std::array<std::uint8_t, 7>> font = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},
      {'2', {14, 17, 1, 2, 4, 8, 31}},     {'3', {31, 2, 4, 2, 1, 17, 14}},
      {'4', {2, 6, 10, 18, 31, 2, 2}},     {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},
      {'8', {14, 17, 17, 14, 17, 17, 14}}, {'9', {14, 17, 17, 15, 1, 2, 12}},
      {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}},
      {'E', {31, 16, 16, 30, 16, 16, 31}}, {'F', {31, 16, 16, 30, 16, 16, 16}},
      {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},
      {'K', {17, 18, 20, 24, 20, 18, 17}}, {'L', {16, 16, 16, 16, 16, 16, 31}},
      {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}},
      {'Q', {14, 17, 17, 17, 21, 18, 13}}, {'R', {30, 17, 17, 30, 20, 18, 17}},
      {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},
      {'W', {17, 17, 17, 21, 21, 21, 10}}, {'X', {17, 17, 10, 4, 10, 17, 17}},
      {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 31}},       {':', {0, 12, 12, 0, 12, 12, 0}},
      {'/', {1, 1, 2, 4, 8, 16, 16}},      {'(', {2, 4, 8, 8, 8, 4, 2}},
      {')', {8, 4, 2, 2, 2, 4, 8}},        {'=', {0, 0, 31, 0, 31, 0, 0}},
      {'%', {24, 25, 2, 4, 8, 19, 3}},     {'+', {0, 4, 4, 31, 4, 4, 0}},
  };
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  auto it = font.find(c);
  return it == font.end() ? nullptr : &it->second;
}

using Rgb = std::array<std::uint8_t, 3>;

struct Canvas {
  RgbImage img;

  Canvas(int w, int h) {
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(w) * h * 3, 255);
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(double x0, double y0, double x1, double y1, Rgb c) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }

  void box(int x, int y, int r, Rgb c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
  }

  void text(int x, int y, const std::string& s, Rgb c = {0, 0, 0}) {
    for (char ch : s) {
      if (const auto* g = glyph(ch))
        for (int r = 0; r < 7; ++r)
          for (int b = 0; b < 5; ++b)
            if ((*g)[r] >> (4 - b) & 1) set(x + b, y + r, c);
      x += 6;
    }
  }

  void text_vertical(int x, int y, const std::string& s, Rgb c = {0, 0, 0}) {
    for (char ch : s) {
      if (const auto* g = glyph(ch))
        for (int r = 0; r < 7; ++r)
          for (int b = 0; b < 5; ++b)
            if ((*g)[r] >> (4 - b) & 1) set(x + r, y - b, c);
      y -= 6;
    }
  }
};

inline Rgb palette(std::size_t i) {
  static const std::array<Rgb, 10> p = {{{31, 119, 180},
                                         {255, 127, 14},
                                         {44, 160, 44},
                                         {214, 39, 40},
                                         {148, 103, 189},
                                         {140, 86, 75},
                                         {227, 119, 194},
                                         {127, 127, 127},
                                         {188, 189, 34},
                                         {23, 190, 207}}};
  return p[i % p.size()];
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

/// Draws axes, ticks, curves (or markers) and a legend of up to 12 entries.
inline RgbImage render(const Figure& f, int width = 640, int height = 420) {
  detail::Canvas cv(width, height);
  const int left = 60, right = width - 150, top = 28, bottom = height - 40;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : f.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double padx = f.scatter ? 0.05 * (x1 - x0) : 0.0, pady = 0.05 * (y1 - y0);
  x0 -= padx, x1 += padx, y0 -= pady, y1 += pady;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };

  const detail::Rgb axis{0, 0, 0}, grid{225, 225, 225};
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    cv.line(px(xv), top, px(xv), bottom, grid);
    cv.line(left, py(yv), right, py(yv), grid);
    const auto xl = detail::tick_label(xv), yl = detail::tick_label(yv);
    cv.text(static_cast<int>(px(xv)) - 3 * static_cast<int>(xl.size()), bottom + 5, xl);
    cv.text(left - 4 - 6 * static_cast<int>(yl.size()), static_cast<int>(py(yv)) - 3, yl);
  }
  cv.line(left, top, left, bottom, axis);
  cv.line(left, bottom, right, bottom, axis);
  cv.text(left, 8, f.title);
  cv.text((left + right) / 2 - 3 * static_cast<int>(f.xlabel.size()), height - 14, f.xlabel);
  cv.text_vertical(6, (top + bottom) / 2 + 3 * static_cast<int>(f.ylabel.size()), f.ylabel);

  for (std::size_t k = 0; k < f.series.size(); ++k) {
    const auto& s = f.series[k];
    const auto c = detail::palette(k);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (f.scatter)
        cv.box(static_cast<int>(std::lround(px(s.x[i]))), static_cast<int>(std::lround(py(s.y[i]))), 2, c);
      else if (i > 0 && std::isfinite(s.x[i - 1]) && std::isfinite(s.y[i - 1]))
        cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), c);
      else if (s.x.size() == 1)
        cv.box(static_cast<int>(px(s.x[i])), static_cast<int>(py(s.y[i])), 1, c);
    }
    if (k < 12) {
      const int ly = top + 12 * static_cast<int>(k);
      cv.box(right + 12, ly + 3, 3, c);
      cv.text(right + 20, ly, s.name.substr(0, 20));
    }
  }
  if (f.series.size() > 12) cv.text(right + 20, top + 12 * 12, "+" + std::to_string(f.series.size() - 12));
  return cv.img;
}

/// Long-format CSV of a figure's points: series,x,y.
inline std::string figure_csv(const Figure& f) {
  std::ostringstream os;
  os.precision(9);
  os << "series," << (f.xlabel.empty() ? "x" : f.xlabel) << "," << (f.ylabel.empty() ? "y" : f.ylabel) << "\n";
  for (const auto& s : f.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) os << s.name << "," << s.x[i] << "," << s.y[i] << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Figures from run artifacts

inline Figure stable_rank_figure(const CsvTable& probes) {
  Figure f{"stable rank", "epoch", "S", false, {}};
  const int ec = probes.column("epoch");
  if (ec < 0) throw ContractError("probe table lacks an epoch column");
  for (std::size_t c = 0; c < probes.header.size(); ++c) {
    if (static_cast<int>(c) == ec) continue;
    Series s{probes.header[c], {}, {}};
    for (const auto& r : probes.rows) {
      s.x.push_back(std::stod(r[ec]));
      s.y.push_back(std::stod(r[c]));
    }
    f.series.push_back(std::move(s));
  }
  return f;
}

/// One figure per (cell, edge), one curve per candidate op.
inline std::vector<std::pair<std::string, Figure>> alpha_figures(const CsvTable& alphas) {
  const int ce = alphas.column("epoch"), cc = alphas.column("cell"), cg = alphas.column("edge"),
            co = alphas.column("op"), cw = alphas.column("weight");
  if (std::min({ce, cc, cg, co, cw}) < 0) throw ContractError("alpha table lacks epoch/cell/edge/op/weight");
  std::map<std::pair<std::string, int>, Figure> figs;
  std::map<std::pair<std::string, int>, std::vector<std::string>> op_order;
  for (const auto& r : alphas.rows) {
    const auto key = std::make_pair(r[cc], std::stoi(r[cg]));
    auto& f = figs[key];
    if (f.title.empty()) f = Figure{r[cc] + " edge " + r[cg], "epoch", "weight", false, {}};
    auto it = std::find_if(f.series.begin(), f.series.end(), [&](const Series& s) { return s.name == r[co]; });
    if (it == f.series.end()) {
      f.series.push_back(Series{r[co], {}, {}});
      it = f.series.end() - 1;
    }
    it->x.push_back(std::stod(r[ce]));
    it->y.push_back(std::stod(r[cw]));
  }
  std::vector<std::pair<std::string, Figure>> out;
  for (auto& [k, f] : figs) out.emplace_back("alpha_" + k.first + "_edge" + std::to_string(k.second), std::move(f));
  return out;
}

/// Error = 100 - accuracy, per epoch, for the train and val columns.
inline Figure error_figure(const CsvTable& metrics) {
  const int ce = metrics.column("epoch"), tr = metrics.column("train_acc"), va = metrics.column("val_acc");
  if (ce < 0 || tr < 0 || va < 0) throw ContractError("metrics table lacks epoch/train_acc/val_acc");
  Figure f{"train and val error", "epoch", "error %", false, {{"train", {}, {}}, {"val", {}, {}}}};
  for (const auto& r : metrics.rows) {
    const double e = std::stod(r[ce]);
    f.series[0].x.push_back(e);
    f.series[0].y.push_back(100.0 - std::stod(r[tr]));
    f.series[1].x.push_back(e);
    f.series[1].y.push_back(100.0 - std::stod(r[va]));
  }
  return f;
}

/// Accuracy against parameter count; one series per optimizer.
inline Figure scatter_figure(const CsvTable& results) {
  const int cp = results.column("params"), ca = results.column("acc_mean"), co = results.column("optimizer"),
            cs = results.column("status");
  if (cp < 0 || ca < 0) throw ContractError("results table lacks params/acc_mean");
  Figure f{"accuracy vs params", "params", "acc_mean", true, {}};
  for (const auto& r : results.rows) {
    if (cs >= 0 && r[cs] != "ok") continue;
    const std::string name = co >= 0 ? r[co] : "runs";
    auto it = std::find_if(f.series.begin(), f.series.end(), [&](const Series& s) { return s.name == name; });
    if (it == f.series.end()) {
      f.series.push_back(Series{name, {}, {}});
      it = f.series.end() - 1;
    }
    it->x.push_back(std::stod(r[cp]));
    it->y.push_back(std::stod(r[ca]));
  }
  return f;
}

struct PlotReport {
  /// Written figure stems mapped to their curve counts.
  std::map<std::string, std::size_t> figures;
  /// Inputs that were missing or unreadable.
  std::vector<std::string> skipped;
  std::vector<std::string> warnings;
};

/// Walks `input` for probes.csv, alphas.csv, metrics.csv, eval_metrics.csv
/// and results.csv, writing `<stem>.png` and `<stem>.csv` into `out_dir`.
/// Files in subdirectories get the relative path folded into the stem.
inline PlotReport emit_plots(const std::filesystem::path& input, const std::filesystem::path& out_dir,
                             std::ostream& log = std::cerr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(input)) throw IoError("plot input is not a directory: " + input.string());
  fs::create_directories(out_dir);
  PlotReport rep;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(input))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  auto emit = [&](const std::string& stem, const Figure& f) {
    write_png(out_dir / (stem + ".png"), render(f));
    std::ofstream(out_dir / (stem + ".csv"), std::ios::binary) << figure_csv(f);
    rep.figures[stem] = f.series.size();
  };
  auto prefix = [&](const fs::path& p) {
    std::string rel = fs::relative(p.parent_path(), input).generic_string();
    if (rel == ".") return std::string();
    std::replace(rel.begin(), rel.end(), '/', '_');
    return rel + "_";
  };
  auto attempt = [&](const fs::path& p, auto&& fn) {
    try {
      fn(read_csv(p));
    } catch (const std::exception& e) {
      rep.skipped.push_back(p.string() + ": " + e.what());
      log << "plot: skipped " << p.string() << ": " << e.what() << "\n";
    }
  };
  bool have_results = false, have_probes = false, have_metrics = false;
  for (const auto& p : files) {
    const std::string name = p.filename().string(), pre = prefix(p);
    if (name == "probes.csv") {
      have_probes = true;
      attempt(p, [&](const CsvTable& t) { emit(pre + "stable_rank", stable_rank_figure(t)); });
    } else if (name == "alphas.csv") {
      attempt(p, [&](const CsvTable& t) {
        for (auto& [stem, f] : alpha_figures(t)) emit(pre + stem, f);
      });
    } else if (name == "metrics.csv") {
      have_metrics = true;
      attempt(p, [&](const CsvTable& t) { emit(pre + "error", error_figure(t)); });
    } else if (name == "eval_metrics.csv") {
      attempt(p, [&](const CsvTable& t) {
        if (t.column("train_acc") >= 0 && t.column("val_acc") >= 0) emit(pre + "eval_error", error_figure(t));
      });
    } else if (name == "results.csv") {
      have_results = true;
      attempt(p, [&](const CsvTable& t) {
        const auto f = scatter_figure(t);
        std::size_t points = 0;
        for (const auto& s : f.series) points += s.x.size();
        if (points == 0) {
          rep.warnings.push_back("results table " + p.string() + " has no completed rows; scatter not drawn");
          log << "plot: warning: " << rep.warnings.back() << "\n";
          return;
        }
        emit(pre + "scatter", f);
      });
    }
  }
  if (!have_probes) rep.skipped.push_back("probes.csv: not found");
  if (!have_metrics) rep.skipped.push_back("metrics.csv: not found");
  if (!have_results) {
    rep.warnings.push_back("no results table; scatter not drawn");
    log << "plot: warning: " << rep.warnings.back() << "\n";
  }
  for (const auto& s : rep.skipped)
    if (s.find("not found") != std::string::npos) log << "plot: missing " << s << "\n";
  return rep;
}

}  // namespace pdarts
