#include "ambox/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "ambox/crypto.hpp"
#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"

namespace ambox {

namespace {

constexpr const char* kTraceHeader = "offset_s,temp_c,hum_pct,press_hpa";

double parse_number(const std::string& field, std::size_t line_no) {
  if (field.empty()) throw Error(ErrorCode::ParseError, "empty field on line " + std::to_string(line_no));
  char* end = nullptr;
  double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || !std::isfinite(v))
    throw Error(ErrorCode::ParseError, "bad number '" + field + "' on line " + std::to_string(line_no));
  return v;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

// Uniform in [0, 1) from a hash of the key.
double unit_hash(const std::string& key) {
  auto digest = sha256_raw(key);
  std::uint64_t x = 0;
  std::memcpy(&x, digest.data(), sizeof x);
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace

EnvironmentTrace::EnvironmentTrace(std::vector<TraceSample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw Error(ErrorCode::ParseError, "trace has no samples");
  for (std::size_t i = 1; i < samples_.size(); ++i)
    if (samples_[i].offset <= samples_[i - 1].offset)
      throw Error(ErrorCode::NonMonotonicOffsets,
                  "offset " + std::to_string(samples_[i].offset.count()) + " ms does not increase");
}

EnvironmentTrace EnvironmentTrace::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTraceHeader)
    throw Error(ErrorCode::ParseError, std::string("trace must start with header ") + kTraceHeader);
  std::vector<TraceSample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream row(line);
    while (std::getline(row, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 4)
      throw Error(ErrorCode::ParseError, "expected 4 fields on line " + std::to_string(line_no));
    TraceSample s;
    s.offset = Duration{static_cast<std::int64_t>(std::llround(parse_number(fields[0], line_no) * 1000.0))};
    s.temperature = parse_number(fields[1], line_no);
    s.humidity = parse_number(fields[2], line_no);
    s.pressure = parse_number(fields[3], line_no);
    samples.push_back(s);
  }
  return EnvironmentTrace(std::move(samples));
}

EnvironmentTrace EnvironmentTrace::load(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string EnvironmentTrace::to_csv() const {
  std::ostringstream out;
  out << kTraceHeader << "\n";
  out.precision(17);
  for (const auto& s : samples_)
    out << static_cast<double>(s.offset.count()) / 1000.0 << "," << s.temperature << "," << s.humidity << ","
        << s.pressure << "\n";
  return out.str();
}

EnvironmentTrace EnvironmentTrace::synthetic(Duration span, Duration step, std::uint64_t seed,
                                             double base_temperature) {
  if (step <= Duration::zero() || span < Duration::zero())
    throw Error(ErrorCode::InvalidArgument, "synthetic trace needs positive step");
  constexpr double kDay = 86'400'000.0;
  double phase = unit_hash("trace-phase|" + std::to_string(seed)) * 2.0 * std::numbers::pi;
  std::vector<TraceSample> samples;
  for (Duration t{0};; t += step) {
    if (t > span) t = span;
    double x = static_cast<double>(t.count()) / kDay * 2.0 * std::numbers::pi + phase;
    double jitter = unit_hash("trace|" + std::to_string(seed) + "|" + std::to_string(t.count())) - 0.5;
    TraceSample s;
    s.offset = t;
    s.temperature = base_temperature + 3.0 * std::sin(x) + 0.4 * jitter;
    s.humidity = 70.0 - 8.0 * std::sin(x) + 1.0 * jitter;
    s.pressure = 1013.0 + 2.0 * std::sin(x / 4.0) + 0.2 * jitter;
    samples.push_back(s);
    if (t == span) break;
  }
  return EnvironmentTrace(std::move(samples));
}

double EnvironmentTrace::value(const Quantity& q, Duration offset) const {
  if (samples_.empty() || offset < samples_.front().offset || offset > samples_.back().offset)
    throw Error(ErrorCode::TraceExhausted, "offset " + std::to_string(offset.count()) + " ms outside trace");
  auto pick = [&](const TraceSample& s) {
    switch (q.kind) {
      case QuantityKind::Temperature: return s.temperature;
      case QuantityKind::Humidity: return s.humidity;
      case QuantityKind::Pressure: return s.pressure;
      case QuantityKind::Custom: break;
    }
    throw Error(ErrorCode::InvalidArgument, "trace carries no " + q.name());
  };
  auto hi = std::lower_bound(samples_.begin(), samples_.end(), offset,
                             [](const TraceSample& s, Duration o) { return s.offset < o; });
  if (hi->offset == offset) return pick(*hi);
  auto lo = hi - 1;
  double f = static_cast<double>((offset - lo->offset).count()) / static_cast<double>((hi->offset - lo->offset).count());
  double a = pick(*lo);
  double b = pick(*hi);
  return a + (b - a) * f;
}

// --- specs ---------------------------------------------------------------------------

SensorSpec SensorSpec::node_temperature() {
  return {"sense-hat", Quantity::temperature(), 0.0, 65.0, 2.0, {}, 2.0};
}
SensorSpec SensorSpec::node_humidity() { return {"sense-hat", Quantity::humidity(), 0.0, 100.0, 4.5, {}, 4.5}; }
SensorSpec SensorSpec::node_pressure() { return {"sense-hat", Quantity::pressure(), 260.0, 1260.0, 1.0, {}, 1.0}; }
SensorSpec SensorSpec::mote_temperature() {
  return {"ds18b20", Quantity::temperature(), -55.0, 125.0, 0.5, {}, 0.5};
}
SensorSpec SensorSpec::mote_humidity() { return {"dht11", Quantity::humidity(), 20.0, 90.0, 5.0, {}, 5.0}; }

double sensor_noise(std::uint64_t seed, const Quantity& q, Timestamp t, double amplitude) {
  if (amplitude <= 0.0) return 0.0;
  double u = unit_hash("noise|" + std::to_string(seed) + "|" + q.name() + "|" + std::to_string(to_millis(t)));
  return (2.0 * u - 1.0) * amplitude;
}

double simulated_read(const SensorSpec& spec, const EnvironmentTrace& trace, Duration offset, Timestamp t,
                      std::uint64_t seed, double cpu_activity) {
  double v = trace.value(spec.quantity, offset) + spec.bias.at(cpu_activity) +
             sensor_noise(seed, spec.quantity, t, spec.noise);
  return std::clamp(v, spec.min, spec.max);
}

SimulatedSensor::SimulatedSensor(SensorSpec spec, std::shared_ptr<const EnvironmentTrace> trace, Timestamp trace_start,
                                 std::uint64_t seed, ActivityFn cpu_activity)
    : spec_(std::move(spec)),
      trace_(std::move(trace)),
      trace_start_(trace_start),
      seed_(seed),
      cpu_activity_(std::move(cpu_activity)) {}

std::optional<double> SimulatedSensor::read(Timestamp t) {
  auto offset = t - trace_start_;
  for (const auto& f : faults_) {
    if (offset < f.start || offset >= f.end) continue;
    if (f.kind == SensorFault::Kind::Raw) return f.raw_value;
    ++failures_;
    return std::nullopt;
  }
  try {
    return simulated_read(spec_, *trace_, offset, t, seed_, cpu_activity_ ? cpu_activity_() : 0.0);
  } catch (const Error&) {
    ++failures_;
    return std::nullopt;
  }
}

}  // namespace ambox
