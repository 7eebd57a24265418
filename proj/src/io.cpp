#include "photonloop/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace photonloop::io {

using nlohmann::json;

namespace {

template <class T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(key, std::string(key) + ": missing from config");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(key, std::string(key) + ": has the wrong type");
  }
}

template <class T>
void get_optional(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = get_field<T>(j, key);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("path", "cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("path", "cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class Int>
Int parse_int(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError("csv", where + ": expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

LoopConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config", "config: expected a JSON object");
  LoopConfig c;
  const auto mode = get_field<std::string>(j, "mode");
  if (mode == "active") {
    c.mode = LoopMode::Active;
  } else if (mode == "passive") {
    c.mode = LoopMode::Passive;
  } else {
    throw ValidationError("mode", "mode: expected 'active' or 'passive', got '" + mode + "'");
  }
  c.R = get_field<double>(j, "R");
  c.eta = get_field<double>(j, "eta");
  c.nu = get_field<double>(j, "nu");
  get_optional(j, "n_bins", c.n_bins);
  get_optional(j, "loop_delay_ps", c.loop_delay_ps);
  get_optional(j, "gate_width_ps", c.gate_width_ps);
  get_optional(j, "sigma_R", c.sigma_R);
  get_optional(j, "sigma_eta", c.sigma_eta);
  get_optional(j, "sigma_nu", c.sigma_nu);
  if (j.contains("n_max_guard") && !j.at("n_max_guard").is_null()) {
    c.n_max_guard = get_field<std::uint64_t>(j, "n_max_guard");
  }
  c.validate();
  return c;
}

json to_json(const LoopConfig& c) {
  json j = {{"mode", to_string(c.mode)},
            {"R", c.R},
            {"eta", c.eta},
            {"nu", c.nu},
            {"n_bins", c.n_bins},
            {"loop_delay_ps", c.loop_delay_ps},
            {"gate_width_ps", c.gate_width_ps},
            {"sigma_R", c.sigma_R},
            {"sigma_eta", c.sigma_eta},
            {"sigma_nu", c.sigma_nu}};
  j["n_max_guard"] = c.n_max_guard ? json(*c.n_max_guard) : json(nullptr);
  return j;
}

LoopConfig load_config(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("config", "config: '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void write_histogram_csv(std::ostream& os, const ClickHistogram& h) {
  os << "bin,clicks,trials,p_hat,ci_lo,ci_hi\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < h.n_bins(); ++i) {
    os << (i + 1) << ',' << h.clicks[i] << ',' << h.trials << ',' << h.p_hat[i] << ',' << h.ci_lo[i]
       << ',' << h.ci_hi[i] << '\n';
  }
}

void write_histogram_csv(const std::string& path, const ClickHistogram& hist) {
  auto out = open_out(path);
  write_histogram_csv(out, hist);
}

ClickHistogram read_histogram_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || strip_cr(line) != "bin,clicks,trials,p_hat,ci_lo,ci_hi") {
    throw ValidationError("histogram", "histogram: expected header 'bin,clicks,trials,p_hat,ci_lo,ci_hi'");
  }
  std::vector<std::uint64_t> clicks;
  std::uint64_t trials = 0;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    const std::string where = "histogram row " + std::to_string(row);
    const auto cols = split_csv(line);
    if (cols.size() != 6) throw ValidationError("histogram", where + ": expected 6 columns");
    const auto bin = parse_int<std::uint64_t>(cols[0], where);
    if (bin != clicks.size() + 1) throw ValidationError("histogram", where + ": bins must be 1, 2, 3, ...");
    const auto t = parse_int<std::uint64_t>(cols[2], where);
    if (row == 1) trials = t;
    if (t != trials) throw ValidationError("histogram", where + ": trials differ between rows");
    clicks.push_back(parse_int<std::uint64_t>(cols[1], where));
  }
  if (clicks.empty()) throw ValidationError("histogram", "histogram: no rows");
  return ClickHistogram::from_counts(trials, std::move(clicks));
}

ClickHistogram read_histogram_csv(const std::string& path) {
  auto in = open_in(path);
  return read_histogram_csv(in);
}

void write_time_tags_csv(std::ostream& os, const TimeTagStream& s) {
  os << "channel,time_ps\n";
  std::string buf;
  for (const auto& r : s.records) {
    buf.clear();
    buf += std::to_string(r.channel);
    buf += ',';
    buf += std::to_string(r.time_ps);
    buf += '\n';
    os << buf;
  }
}

void write_time_tags_csv(const std::string& path, const TimeTagStream& stream) {
  auto out = open_out(path);
  write_time_tags_csv(out, stream);
}

TimeTagStream read_time_tags_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || strip_cr(line) != "channel,time_ps") {
    throw ValidationError("tags", "tags: expected header 'channel,time_ps'");
  }
  TimeTagStream s;
  std::size_t index = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const std::string where = "tags record " + std::to_string(index);
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError("tags", where + ": expected 'channel,time_ps'");
    const std::string_view view(line);
    TimeTag tag;
    tag.channel = parse_int<int>(view.substr(0, comma), where);
    tag.time_ps = parse_int<std::int64_t>(view.substr(comma + 1), where);
    s.records.push_back(tag);
    ++index;
  }
  // The repetition period is not stored; estimate it from the first syncs.
  std::int64_t prev = -1;
  for (const auto& r : s.records) {
    if (r.channel != s.sync_channel) continue;
    if (prev >= 0) {
      s.sync_period_ps = r.time_ps - prev;
      break;
    }
    prev = r.time_ps;
  }
  return s;
}

TimeTagStream read_time_tags_csv(const std::string& path) {
  auto in = open_in(path);
  return read_time_tags_csv(in);
}

json to_json(const ClickHistogram& h) {
  return {{"trials", h.trials}, {"clicks", h.clicks}, {"p_hat", h.p_hat}, {"ci_lo", h.ci_lo}, {"ci_hi", h.ci_hi}};
}

json to_json(const ClickPatternStats& s) {
  return {{"c", s.c}, {"mean_c", s.mean_c}, {"var_c", s.var_c}, {"m", s.m}, {"sigma2", s.sigma2}};
}

json to_json(const FitResult& f) {
  return {{"R_hat", f.R_hat},
          {"eta_hat", f.eta_hat},
          {"nbar_hat", f.nbar_hat},
          {"sigma_R", finite_or_null(f.sigma_R)},
          {"sigma_eta", finite_or_null(f.sigma_eta)},
          {"sigma_nbar", finite_or_null(f.sigma_nbar)},
          {"product", f.product},
          {"sigma_product", f.sigma_product},
          {"individually_identifiable", f.individually_identifiable},
          {"residual_norm", f.residual_norm},
          {"dof", f.dof}};
}

json to_json(const CalibrationResult& r) {
  json bins = json::array();
  for (const auto& b : r.n_out_per_bin) {
    json row = {{"j", b.j}, {"p_hat", b.p_hat}, {"sigma_p", b.sigma_p}};
    if (b.valid()) {
      row["n_out"] = b.estimate;
      row["sigma"] = b.sigma.total;
      row["sigma_terms"] = {{"p", b.sigma.p}, {"R", b.sigma.R}, {"eta", b.sigma.eta}, {"nu", b.sigma.nu}};
      row["included"] = b.j >= r.j_min;
    } else {
      row["status"] = to_string(*b.status);
      row["included"] = false;
    }
    bins.push_back(std::move(row));
  }
  json j = {{"n_measured", r.n_measured},
            {"sigma_n_measured", r.sigma_n_measured},
            {"relative_error", r.sigma_n_measured / r.n_measured},
            {"j_min", r.j_min},
            {"bins", std::move(bins)}};
  j["n_pm"] = r.n_pm ? json(*r.n_pm) : json(nullptr);
  j["sde"] = r.sde ? json(*r.sde) : json(nullptr);
  j["sigma_sde"] = r.sigma_sde ? json(*r.sigma_sde) : json(nullptr);
  j["dynamic_range_db"] = r.dynamic_range_db ? json(*r.dynamic_range_db) : json(nullptr);
  return j;
}

json to_json(const clickstats::IngestDiagnostics& d) {
  return {{"pulses", d.pulses},
          {"detector_records", d.detector_records},
          {"gated_records", d.gated_records},
          {"discarded_records", d.discarded_records},
          {"foreign_records", d.foreign_records}};
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace photonloop::io
