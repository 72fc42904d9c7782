#pragma once

#include "egc/model.hpp"
#include "egc/synth.hpp"
#include "egc/train.hpp"

#include <map>
#include <string>
#include <vector>

namespace egc {

/// Strict sectioned key=value configuration. Every key the tool understands
/// is declared in the schema with a default; files and overrides may only
/// touch declared keys, and unknown ones are rejected with the offending key
/// and line. `resolved_text()` renders the merged configuration in canonical
/// order for the copy written next to every run's outputs.
class Config {
 public:
  /// All schema defaults.
  static Config defaults();

  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin);

  /// Apply a dotted override, "section.key=value".
  void apply_override(const std::string& assignment);

  /// Set a value programmatically (same validation as an override).
  void set(const std::string& dotted_key, const std::string& value);

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;       // "18,24"
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::pair<int, double>> get_schedule(const std::string& key) const;  // "12:0.1,..."

  std::string resolved_text() const;

  // Typed bundles assembled from the sections.
  SynthConfig synth_config() const;
  CorruptionConfig corruption_config() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  SkeletonGraph graph() const;  // [graph] file, or the builtin hand skeleton

 private:
  std::map<std::string, std::string> values_;  // "section.key" -> literal
  const std::string& raw(const std::string& key) const;
};

}  // namespace egc
