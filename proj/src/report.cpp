#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ojfa/error.hpp"
#include "ojfa/eval.hpp"

namespace ojfa {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 170, kTop = 40, kBottom = 50;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string SvgHeader(const std::string& title) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
    << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">"
    << Escape(title) << "</text>\n";
  return s.str();
}

void Axes(std::ostringstream& s, double y_min, double y_max, const std::string& x_label,
          const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_min + (y_max - y_min) * t / 4.0;
    const double y = y0 - (y0 - y1) * t / 4.0;
    char label[32];
    std::snprintf(label, sizeof label, "%.3g", v);
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << Px(y + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label
      << "</text>\n";
  }
  s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << Escape(x_label)
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" transform=\"rotate(-90 16 " << (y0 + y1) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << Escape(y_label) << "</text>\n";
}

}  // namespace

std::string ReportCsv(const EvalReport& report) {
  std::string out = "strategy,level,precision,surprisal,n_records\n";
  for (const auto& s : report.strategies) {
    for (std::size_t k = 0; k < s.levels.size(); ++k) {
      const auto& l = s.levels[k];
      out += s.name + "," + std::to_string(k) + "," + Num(l.precision) + "," + Num(l.surprisal) +
             "," + std::to_string(l.n_records) + "\n";
    }
  }
  return out;
}

std::string LineChartSvg(const EvalReport& report, bool precision) {
  double y_min = 0.0, y_max = 1.0;
  std::size_t levels = 1;
  if (!precision) {
    y_max = 0.0;
    for (const auto& s : report.strategies)
      for (const auto& l : s.levels) y_max = std::max(y_max, l.surprisal);
    y_max = y_max > 0.0 ? y_max * 1.05 : 1.0;
  }
  for (const auto& s : report.strategies) levels = std::max(levels, s.levels.size());

  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto px = [&](std::size_t k) {
    return levels <= 1 ? (x0 + x1) / 2 : x0 + (x1 - x0) * static_cast<double>(k) / (levels - 1);
  };
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - y_min) / (y_max - y_min); };

  std::ostringstream s;
  s << SvgHeader(precision ? "Precision by exit level" : "Surprisal (nats) by exit level");
  Axes(s, y_min, y_max, "exit level", precision ? "precision" : "surprisal");
  for (std::size_t k = 0; k < levels; ++k) {
    s << "<text x=\"" << Px(px(k)) << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << k
      << "</text>\n";
  }
  for (std::size_t i = 0; i < report.strategies.size(); ++i) {
    const auto& st = report.strategies[i];
    const char* color = kPalette[i % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < st.levels.size(); ++k) {
      const double v = precision ? st.levels[k].precision : st.levels[k].surprisal;
      s << (k ? " " : "") << Px(px(k)) << "," << Px(py(v));
    }
    s << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 6;
    s << "<line x1=\"" << x1 + 12 << "\" y1=\"" << Px(ly) << "\" x2=\"" << x1 + 32 << "\" y2=\""
      << Px(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << x1 + 36 << "\" y=\"" << Px(ly + 4)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << Escape(st.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string ScoreChartSvg(const EvalReport& report) {
  const auto& probs = report.score_distribution;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::ostringstream s;
  s << SvgHeader("Softmax of reuse scores per jump");
  Axes(s, 0.0, 1.0, "jump (trained exit level)", "softmax probability");
  const double slot = probs.empty() ? 0.0 : (x1 - x0) / static_cast<double>(probs.size());
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const double h = (y0 - y1) * std::clamp(probs[m], 0.0, 1.0);
    const double x = x0 + slot * static_cast<double>(m) + slot * 0.15;
    s << "<rect x=\"" << Px(x) << "\" y=\"" << Px(y0 - h) << "\" width=\"" << Px(slot * 0.7)
      << "\" height=\"" << Px(h) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    const std::uint32_t level = m < report.score_levels.size() ? report.score_levels[m]
                                                               : static_cast<std::uint32_t>(m);
    s << "<text x=\"" << Px(x + slot * 0.35) << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << level
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::filesystem::path> EmitReport(const EvalReport& report,
                                              const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const char* name, const std::string& text) {
    const auto path = out_dir / name;
    WriteText(path, text);
    written.push_back(path);
  };
  emit("report.csv", ReportCsv(report));
  emit("report.json", report.ToJson().dump(2) + "\n");
  emit("precision.svg", LineChartSvg(report, true));
  emit("surprisal.svg", LineChartSvg(report, false));
  emit("sscs_softmax.svg", ScoreChartSvg(report));
  if (!report.early_exit.empty()) {
    std::string csv = "lambda,mean_exit_level,agreement,n_inputs\n";
    for (const auto& e : report.early_exit) {
      csv += Num(e.lambda) + "," + Num(e.mean_exit_level) + "," + Num(e.agreement) + "," +
             std::to_string(e.n_inputs) + "\n";
    }
    emit("early_exit.csv", csv);
  }
  return written;
}

}  // namespace ojfa
