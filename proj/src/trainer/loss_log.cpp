#include <fstream>
#include <iomanip>
#include <sstream>

#include "agln/trainer.hpp"

namespace agln {

double field_value(const LossRecord& r, LossField f) {
  switch (f) {
    case LossField::loss_g: return r.loss_g;
    case LossField::loss_cyc: return r.loss_cyc;
    case LossField::loss_d_h: return r.loss_d_h;
    case LossField::loss_d_d: return r.loss_d_d;
  }
  return 0.0;
}

std::string field_name(LossField f) {
  switch (f) {
    case LossField::loss_g: return "loss_g";
    case LossField::loss_cyc: return "loss_cyc";
    case LossField::loss_d_h: return "loss_d_h";
    case LossField::loss_d_d: return "loss_d_d";
  }
  return "";
}

void LossLog::append(const LossRecord& r) {
  if (!records_.empty() && r.iter <= records_.back().iter) {
    throw std::invalid_argument("LossLog: iteration " + std::to_string(r.iter) + " does not follow " +
                                std::to_string(records_.back().iter));
  }
  records_.push_back(r);
}

void LossLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,loss_g,loss_cyc,loss_d_h,loss_d_d\n" << std::setprecision(17);
  for (const auto& r : records_) {
    out << r.iter << ',' << r.loss_g << ',' << r.loss_cyc << ',' << r.loss_d_h << ',' << r.loss_d_d << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

LossLog LossLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "iter,loss_g,loss_cyc,loss_d_h,loss_d_d") throw std::runtime_error("unexpected loss log header");
  LossLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    LossRecord r;
    char comma = 0;
    row >> r.iter >> comma >> r.loss_g >> comma >> r.loss_cyc >> comma >> r.loss_d_h >> comma >> r.loss_d_d;
    if (!row) throw std::runtime_error("malformed loss log row: " + line);
    log.append(r);
  }
  return log;
}

std::vector<SmoothedPoint> smooth_log(const LossLog& log, LossField field, std::size_t window, std::size_t stride) {
  if (window < 1 || stride < 1) throw std::invalid_argument("smooth_log: window and stride must be >= 1");
  const auto& recs = log.records();
  std::vector<SmoothedPoint> out;
  if (recs.empty()) return out;
  out.reserve(recs.size() / stride);
  for (std::size_t k = stride; k <= recs.size(); k += stride) {
    const std::size_t n = std::min(window, k);
    double acc = 0.0;
    for (std::size_t i = k - n; i < k; ++i) acc += field_value(recs[i], field);
    out.push_back({recs[k - 1].iter, acc / static_cast<double>(n)});
  }
  return out;
}

void write_smoothed_csv(const std::filesystem::path& path, const std::vector<SmoothedPoint>& series) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,value\n" << std::setprecision(17);
  for (const auto& p : series) out << p.iter << ',' << p.value << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace agln
