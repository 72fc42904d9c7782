#include "egc/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace egc {

namespace {

struct SchemaEntry {
  const char* key;
  const char* default_value;
};

// Section order here is the canonical order of resolved.cfg.
constexpr std::array kSchema = {
    SchemaEntry{"run.seed", "7"},
    SchemaEntry{"run.threads", "0"},  // 0 = hardware concurrency
    SchemaEntry{"graph.file", ""},
    SchemaEntry{"synth.count", "2000"},
    SchemaEntry{"synth.test_count", "500"},
    SchemaEntry{"synth.map_rows", "32"},
    SchemaEntry{"synth.map_cols", "32"},
    SchemaEntry{"synth.sigma", "1.5"},
    SchemaEntry{"synth.bone_scale", "1.0"},
    SchemaEntry{"corrupt.jitter_sigma", "2.0"},
    SchemaEntry{"corrupt.per_edge_bias", "4.0"},
    SchemaEntry{"corrupt.bias_bones", "fingertips"},
    SchemaEntry{"corrupt.distractor_rate", "0.2"},
    SchemaEntry{"corrupt.blur_sigma", "0.0"},
    SchemaEntry{"corrupt.noise_floor", "0.0"},
    SchemaEntry{"model.heads", "3"},
    SchemaEntry{"model.layers", "3"},
    SchemaEntry{"model.kernel", "7"},
    SchemaEntry{"model.tied", "false"},
    SchemaEntry{"model.hidden_activation", "relu"},
    SchemaEntry{"model.final_activation", "identity"},
    SchemaEntry{"model.pointer_softmax", "true"},
    SchemaEntry{"model.init_noise", "0.01"},
    SchemaEntry{"train.epochs", "30"},
    SchemaEntry{"train.batch", "16"},
    SchemaEntry{"train.optimizer", "adam"},
    SchemaEntry{"train.lr", "0.001"},
    SchemaEntry{"train.lr_milestones", "18,24"},
    SchemaEntry{"train.lr_factor", "0.5"},
    SchemaEntry{"train.alpha", "1.0"},
    SchemaEntry{"train.alpha_schedule", "12:0.1"},
    SchemaEntry{"train.eval_every", "1"},
    SchemaEntry{"eval.deltas", "0.01,0.02,0.03,0.04,0.05,0.06"},
    SchemaEntry{"gradcheck.epsilon", "1e-6"},
    SchemaEntry{"gradcheck.tolerance", "1e-6"},
    SchemaEntry{"gradcheck.subsample", "512"},
    SchemaEntry{"gradcheck.max_params", "200000"},
};

bool known_key(const std::string& key) {
  for (const auto& e : kSchema)
    if (key == e.key) return true;
  return false;
}

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r");
  auto b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_number(const std::string& key, const std::string& value, const char* kind) {
  throw ConfigError("config: key '" + key + "' expects " + kind + ", got '" + value + "'");
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& e : kSchema) c.values_[e.key] = e.default_value;
  return c;
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key '" + key +
                        "' appears before any [section]");
    const std::string dotted = section + "." + key;
    if (!known_key(dotted))
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + dotted + "'");
    values_[dotted] = value;
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path);
}

void Config::set(const std::string& dotted_key, const std::string& value) {
  if (!known_key(dotted_key)) throw ConfigError("unknown config key '" + dotted_key + "'");
  values_[dotted_key] = value;
}

void Config::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) bad_number(key, v, "an integer");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_number(key, v, "an integer");
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) bad_number(key, v, "an unsigned integer");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_number(key, v, "an unsigned integer");
  }
}

double Config::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) bad_number(key, v, "a number");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_number(key, v, "a number");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

const std::string& Config::get_string(const std::string& key) const { return raw(key); }

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) bad_number(key, v, "a comma-separated integer list");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      bad_number(key, v, "a comma-separated integer list");
    }
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) bad_number(key, v, "a comma-separated number list");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      bad_number(key, v, "a comma-separated number list");
    }
  }
  return out;
}

std::vector<std::pair<int, double>> Config::get_schedule(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<std::pair<int, double>> out;
  if (trim(v).empty()) return out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config: key '" + key + "' expects epoch:value steps, got '" + v + "'");
    try {
      std::size_t p1 = 0, p2 = 0;
      const std::string es = trim(item.substr(0, colon));
      const std::string vs = trim(item.substr(colon + 1));
      int epoch = std::stoi(es, &p1);
      double value = std::stod(vs, &p2);
      if (p1 != es.size() || p2 != vs.size())
        throw ConfigError("config: key '" + key + "' expects epoch:value steps, got '" + v + "'");
      out.emplace_back(epoch, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' expects epoch:value steps, got '" + v + "'");
    }
  }
  return out;
}

std::string Config::resolved_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& e : kSchema) {
    const std::string key = e.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << values_.at(key) << "\n";
  }
  return os.str();
}

SynthConfig Config::synth_config() const {
  SynthConfig c;
  c.map_rows = get_int("synth.map_rows");
  c.map_cols = get_int("synth.map_cols");
  c.sigma = get_double("synth.sigma");
  c.bone_scale = get_double("synth.bone_scale");
  c.validate();
  return c;
}

CorruptionConfig Config::corruption_config() const {
  CorruptionConfig c;
  c.jitter_sigma = get_double("corrupt.jitter_sigma");
  c.per_edge_bias = get_double("corrupt.per_edge_bias");
  c.bias_bones = get_string("corrupt.bias_bones");
  c.distractor_rate = get_double("corrupt.distractor_rate");
  c.blur_sigma = get_double("corrupt.blur_sigma");
  c.noise_floor = get_double("corrupt.noise_floor");
  c.validate();
  return c;
}

ModelConfig Config::model_config() const {
  ModelConfig c;
  c.map_rows = get_int("synth.map_rows");
  c.map_cols = get_int("synth.map_cols");
  c.kernel_rows = get_int("model.kernel");
  c.kernel_cols = c.kernel_rows;
  c.heads = get_int("model.heads");
  c.layers = get_int("model.layers");
  c.tied = get_bool("model.tied");
  c.hidden_act = activation_from_string(get_string("model.hidden_activation"));
  c.final_act = activation_from_string(get_string("model.final_activation"));
  c.pointer_softmax = get_bool("model.pointer_softmax");
  c.init_noise = get_double("model.init_noise");
  c.validate();
  return c;
}

TrainConfig Config::train_config() const {
  TrainConfig c;
  c.epochs = get_int("train.epochs");
  c.batch_size = get_int("train.batch");
  c.optimizer = opt_kind_from_string(get_string("train.optimizer"));
  c.lr = get_double("train.lr");
  c.lr_milestones = get_int_list("train.lr_milestones");
  c.lr_factor = get_double("train.lr_factor");
  c.loss.alpha = get_double("train.alpha");
  c.loss.alpha_schedule = get_schedule("train.alpha_schedule");
  c.loss.stages = 1;
  c.seed = get_u64("run.seed");
  c.eval_every = get_int("train.eval_every");
  c.eval_deltas = get_double_list("eval.deltas");
  c.validate();
  return c;
}

SkeletonGraph Config::graph() const {
  const std::string& file = get_string("graph.file");
  if (file.empty()) return build_hand_skeleton();
  return load_graph(file);
}

}  // namespace egc
