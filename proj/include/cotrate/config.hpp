#pragma once

// Flat key=value run configuration with named profiles.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cotrate {

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;

  // world
  int world_rows = 48;
  int world_cols = 48;
  int n_terrains = 6;
  double sensor_noise = 0.05;
  double feature_noise = 0.05;
  double elevation_amplitude = 0.0;
  std::vector<int> terrain_order{0, 1, 2, 3, 4, 5};
  int base_terrains = 3;

  // sensor VAE
  double sequence_seconds = 60.0;
  int window = 100;
  int stride = 20;
  int latent = 16;
  int sensor_epochs = 13;
  int online_epochs = 1;
  double sensor_lr = 3e-4;
  double online_lr = 3e-4;
  int sensor_batch = 128;
  bool use_kl = true;
  bool use_rec = true;
  bool use_vic = true;
  bool use_inc = true;
  std::vector<std::string> sensor_groups{"imu", "joint", "contact", "torque", "cmd_vel", "velocity"};
  double robust_window = 1.0;

  // visual
  int images_per_increment = 60;
  int visual_epochs = 8;
  int visual_batch = 4;
  double visual_lr = 0.005;
  int decoder_hidden = 64;
  bool direct_regression = false;
  double segment_threshold = 0.95;
  int reference_samples = 100;

  // replay
  bool replay = true;
  bool fcm = true;
  double fcm_p = 0.5;
  int buffer_size = 200;
  int t_b = 100;
  int t_r = 1;
  double replay_weight = 20.0;
  int features_per_image = 16;

  // mapping / planning / eval
  double map_lambda = 0.2;
  double h_max = 1.0;
  int lidar_points = 4000;
  double survey_spacing = 1.5;  // meters between mapping poses
  double w_trav = 5.0;
  int corridor_rows = 8;
  int corridor_cols = 64;
  int test_images = 40;
  int histogram_bins = 32;

  /// Applies key=value overrides; unknown keys or bad values throw invalid-config.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  std::string serialize() const;
  /// Checks cross-field invariants (terrain ids exist, intervals >= 1, ...).
  void validate() const;
};

/// "desk" (defaults) or "fast" (4 terrains, 32x32 world, reduced epochs).
RunConfig profile_config(const std::string& name);

/// Parses `key = value` lines ('#' comments); a `profile` key is applied first.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace cotrate
