#include "cotrate/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <variant>

#include "cotrate/common.hpp"

namespace cotrate {

namespace {

using FieldRef = std::variant<int*, double*, bool*, std::uint64_t*, std::string*, std::vector<int>*,
                              std::vector<std::string>*>;

std::vector<std::pair<std::string, FieldRef>> fields(RunConfig& c) {
  return {
      {"profile", &c.profile},
      {"seed", &c.seed},
      {"world.rows", &c.world_rows},
      {"world.cols", &c.world_cols},
      {"world.terrains", &c.n_terrains},
      {"world.sensor_noise", &c.sensor_noise},
      {"world.feature_noise", &c.feature_noise},
      {"world.elevation_amplitude", &c.elevation_amplitude},
      {"terrain_order", &c.terrain_order},
      {"base_terrains", &c.base_terrains},
      {"sensor.sequence_seconds", &c.sequence_seconds},
      {"sensor.window", &c.window},
      {"sensor.stride", &c.stride},
      {"sensor.latent", &c.latent},
      {"sensor.epochs", &c.sensor_epochs},
      {"sensor.online_epochs", &c.online_epochs},
      {"sensor.lr", &c.sensor_lr},
      {"sensor.online_lr", &c.online_lr},
      {"sensor.batch", &c.sensor_batch},
      {"sensor.use_kl", &c.use_kl},
      {"sensor.use_rec", &c.use_rec},
      {"sensor.use_vic", &c.use_vic},
      {"sensor.use_inc", &c.use_inc},
      {"sensor.groups", &c.sensor_groups},
      {"sensor.robust_window", &c.robust_window},
      {"visual.images_per_increment", &c.images_per_increment},
      {"visual.epochs", &c.visual_epochs},
      {"visual.batch", &c.visual_batch},
      {"visual.lr", &c.visual_lr},
      {"visual.hidden", &c.decoder_hidden},
      {"visual.direct_regression", &c.direct_regression},
      {"visual.segment_threshold", &c.segment_threshold},
      {"visual.reference_samples", &c.reference_samples},
      {"replay.enabled", &c.replay},
      {"replay.fcm", &c.fcm},
      {"replay.fcm_p", &c.fcm_p},
      {"replay.buffer_size", &c.buffer_size},
      {"replay.t_b", &c.t_b},
      {"replay.t_r", &c.t_r},
      {"replay.weight", &c.replay_weight},
      {"replay.features_per_image", &c.features_per_image},
      {"map.lambda", &c.map_lambda},
      {"map.h_max", &c.h_max},
      {"map.lidar_points", &c.lidar_points},
      {"map.survey_spacing", &c.survey_spacing},
      {"plan.w_trav", &c.w_trav},
      {"plan.corridor_rows", &c.corridor_rows},
      {"plan.corridor_cols", &c.corridor_cols},
      {"eval.test_images", &c.test_images},
      {"eval.histogram_bins", &c.histogram_bins},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), ErrorKind::InvalidConfig,
          "bad value '" + v + "' for " + key);
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  for (auto& [name, ref] : fields(*this)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            require(value == "true" || value == "false" || value == "1" || value == "0", ErrorKind::InvalidConfig,
                    "bad boolean '" + value + "' for " + key);
            *p = value == "true" || value == "1";
          } else if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            p->clear();
            for (const auto& s : split_list(value)) p->push_back(parse_number<int>(key, s));
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            *p = split_list(value);
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        ref);
    return;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  RunConfig copy = *this;
  std::map<std::string, std::string> out;
  for (auto& [name, ref] : fields(copy)) {
    out[name] = std::visit(
        [](auto* p) -> std::string {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            return *p ? "true" : "false";
          } else if constexpr (std::is_same_v<T, std::string>) {
            return *p;
          } else if constexpr (std::is_same_v<T, double>) {
            return format_double(*p);
          } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>>) {
            return join(*p);
          } else {
            return std::to_string(*p);
          }
        },
        ref);
  }
  return out;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : to_map()) os << k << " = " << v << "\n";
  return os.str();
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::InvalidConfig, what); };
  check(world_rows >= 8 && world_cols >= 8, "world must be at least 8x8");
  check(n_terrains >= 2 && n_terrains <= 6, "world.terrains must lie in [2, 6]");
  check(!terrain_order.empty(), "terrain_order is empty");
  std::set<int> seen;
  for (int id : terrain_order) {
    check(id >= 0 && id < n_terrains, "terrain_order references unknown terrain " + std::to_string(id));
    check(seen.insert(id).second, "terrain_order repeats terrain " + std::to_string(id));
  }
  check(base_terrains >= 1 && base_terrains <= static_cast<int>(terrain_order.size()),
        "base_terrains must lie in [1, |terrain_order|]");
  check(sequence_seconds > 0.0 && window >= 1 && stride >= 1 && latent >= 1, "invalid sensor windowing");
  check(sensor_epochs >= 0 && online_epochs >= 0 && sensor_lr > 0.0 && online_lr > 0.0 && sensor_batch >= 1, "invalid sensor training");
  check(!sensor_groups.empty(), "sensor.groups is empty");
  check(images_per_increment >= 1 && visual_epochs >= 0 && visual_batch >= 1 && visual_lr > 0.0,
        "invalid visual training");
  check(decoder_hidden >= 1 && reference_samples >= 1, "invalid decoder settings");
  check(segment_threshold >= -1.0 && segment_threshold <= 1.0, "segment threshold outside [-1, 1]");
  check(t_b >= 1 && t_r >= 1, "replay intervals must be >= 1");
  check(buffer_size >= 1 && features_per_image >= 1 && replay_weight >= 0.0, "invalid replay buffer settings");
  check(fcm_p >= 0.0 && fcm_p <= 1.0, "replay.fcm_p outside [0, 1]");
  check(map_lambda > 0.0 && map_lambda <= 1.0 && h_max > 0.0 && lidar_points >= 1 && survey_spacing > 0.0,
        "invalid mapping settings");
  check(w_trav >= 0.0, "plan.w_trav must be non-negative");
  check(corridor_rows >= 8 && corridor_cols >= 8, "corridor world must be at least 8x8");
  check(test_images >= 1 && histogram_bins >= 1, "invalid evaluation settings");
}

RunConfig profile_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") return c;
  require(name == "fast", ErrorKind::InvalidConfig, "unknown profile '" + name + "'");
  c.profile = "fast";
  c.n_terrains = 4;
  c.world_rows = 32;
  c.world_cols = 32;
  c.terrain_order = {0, 1, 2, 3};
  c.base_terrains = 2;
  c.sequence_seconds = 30.0;
  c.sensor_epochs = 4;
  c.online_epochs = 1;
  c.images_per_increment = 16;
  c.visual_epochs = 2;
  c.test_images = 12;
  c.lidar_points = 1500;
  return c;
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  std::string profile = "desk";
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidConfig,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "profile") {
      profile = value;
    } else {
      kv.emplace_back(key, value);
    }
  }
  RunConfig c = profile_config(profile);
  for (const auto& [k, v] : kv) c.set(k, v);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::InvalidConfig, "cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace cotrate
