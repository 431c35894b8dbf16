#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ambox/domain.hpp"

namespace ambox {

struct TraceSample {
  Duration offset{0};
  double temperature = 0.0;  // °C
  double humidity = 0.0;     // %RH
  double pressure = 0.0;     // hPa

  bool operator==(const TraceSample&) const = default;
};

/// Ground-truth environment: samples with strictly increasing offsets,
/// linearly interpolated in between.
class EnvironmentTrace {
 public:
  EnvironmentTrace() = default;
  /// Throws Error(NonMonotonicOffsets) or Error(ParseError) (no samples).
  explicit EnvironmentTrace(std::vector<TraceSample> samples);

  /// CSV with header `offset_s,temp_c,hum_pct,press_hpa`.
  static EnvironmentTrace parse_csv(const std::string& text);
  static EnvironmentTrace load(const std::filesystem::path& path);
  std::string to_csv() const;

  /// Smooth diurnal-ish curves with a little seeded wander, one sample per
  /// `step`, covering [0, span].
  static EnvironmentTrace synthetic(Duration span, Duration step, std::uint64_t seed, double base_temperature = 6.0);

  /// Throws Error(TraceExhausted) outside [first offset, last offset] and
  /// Error(InvalidArgument) for quantities the trace does not carry.
  double value(const Quantity& q, Duration offset) const;

  Duration span() const { return samples_.empty() ? Duration{0} : samples_.back().offset; }
  const std::vector<TraceSample>& samples() const { return samples_; }

 private:
  std::vector<TraceSample> samples_;
};

/// Additive offset: constant + load_coefficient * cpu_activity, where
/// cpu_activity in [0, 1] is supplied by the device at read time.
struct BiasModel {
  double constant = 0.0;
  double load_coefficient = 0.0;

  double at(double cpu_activity) const { return constant + load_coefficient * cpu_activity; }
  bool operator==(const BiasModel&) const = default;
};

struct SensorSpec {
  std::string hardware;
  Quantity quantity;
  double min = 0.0;
  double max = 0.0;
  double accuracy = 0.0;
  BiasModel bias;
  double noise = 0.0;  // amplitude of uniform noise in [-noise, +noise]

  bool in_range(double v) const { return v >= min && v <= max; }
  bool operator==(const SensorSpec&) const = default;

  // Node (Sense HAT) and Mote (KY-001, KY-015) hardware; noise defaults to
  // the accuracy figure.
  static SensorSpec node_temperature();
  static SensorSpec node_humidity();
  static SensorSpec node_pressure();
  static SensorSpec mote_temperature();
  static SensorSpec mote_humidity();
};

/// Deterministic uniform noise in [-amplitude, amplitude] keyed by
/// (seed, quantity, t).
double sensor_noise(std::uint64_t seed, const Quantity& q, Timestamp t, double amplitude);

/// clamp(truth + bias + noise, [min, max]).
double simulated_read(const SensorSpec& spec, const EnvironmentTrace& trace, Duration offset, Timestamp t,
                      std::uint64_t seed, double cpu_activity = 0.0);

/// What a sampling loop talks to. A read either yields a raw value (which
/// may still be out of range) or fails.
class SensorDriver {
 public:
  virtual ~SensorDriver() = default;
  virtual const SensorSpec& spec() const = 0;
  /// nullopt on driver failure or stall.
  virtual std::optional<double> read(Timestamp t) = 0;
};

/// Fault windows on the scenario clock.
struct SensorFault {
  enum class Kind { Stall, Fail, Raw };
  Kind kind = Kind::Stall;
  Duration start{0};
  Duration end{0};
  double raw_value = 0.0;  // Raw only: returned verbatim

  bool operator==(const SensorFault&) const = default;
};

class SimulatedSensor final : public SensorDriver {
 public:
  using ActivityFn = std::function<double()>;

  SimulatedSensor(SensorSpec spec, std::shared_ptr<const EnvironmentTrace> trace, Timestamp trace_start,
                  std::uint64_t seed, ActivityFn cpu_activity = {});

  const SensorSpec& spec() const override { return spec_; }
  std::optional<double> read(Timestamp t) override;

  void add_fault(SensorFault f) { faults_.push_back(f); }
  std::uint64_t failures() const { return failures_; }

 private:
  SensorSpec spec_;
  std::shared_ptr<const EnvironmentTrace> trace_;
  Timestamp trace_start_;
  std::uint64_t seed_;
  ActivityFn cpu_activity_;
  std::vector<SensorFault> faults_;
  std::uint64_t failures_ = 0;
};

}  // namespace ambox
