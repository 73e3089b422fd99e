#include <doctest.h>

#include <functional>

#include "cotrate/common.hpp"
#include "cotrate/config.hpp"

using namespace cotrate;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InternalConsistency;
}

}  // namespace

TEST_CASE("desk defaults validate") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.terrain_order.size() == 6);
  CHECK(c.buffer_size == 200);
  CHECK(c.t_b == 100);
  CHECK(c.t_r == 1);
  CHECK(c.replay_weight == 20.0);
  CHECK(c.map_lambda == 0.2);
  CHECK(c.h_max == 1.0);
}

TEST_CASE("fast profile shrinks the run") {
  const RunConfig c = profile_config("fast");
  CHECK(c.n_terrains == 4);
  CHECK(c.world_rows == 32);
  CHECK(c.world_cols == 32);
  CHECK(c.terrain_order == std::vector<int>{0, 1, 2, 3});
  CHECK_NOTHROW(c.validate());
  CHECK(kind_of([] { profile_config("huge"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("parsing applies profile then keys, ignoring comments") {
  const RunConfig c = parse_config(
      "# comment\n"
      "replay.t_r = 100   # sparse replay\n"
      "profile = fast\n"
      "\n"
      "sensor.use_vic = false\n"
      "terrain_order = 3, 2, 1, 0\n"
      "sensor.groups = imu,torque\n");
  CHECK(c.profile == "fast");
  CHECK(c.t_r == 100);
  CHECK_FALSE(c.use_vic);
  CHECK(c.terrain_order == std::vector<int>{3, 2, 1, 0});
  CHECK(c.sensor_groups == std::vector<std::string>{"imu", "torque"});
  CHECK(c.world_rows == 32);
}

TEST_CASE("serialize round trips") {
  RunConfig c = profile_config("fast");
  c.set("visual.lr", "0.0123");
  c.set("replay.enabled", "false");
  c.set("seed", "42");
  const RunConfig back = parse_config(c.serialize());
  CHECK(back.to_map() == c.to_map());
  CHECK(back.serialize() == c.serialize());
}

TEST_CASE("bad keys and values are invalid config") {
  RunConfig c;
  CHECK(kind_of([&] { c.set("nope", "1"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([&] { c.set("replay.t_r", "x"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([&] { c.set("replay.t_r", "2.5"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([&] { c.set("replay.enabled", "maybe"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("no equals sign\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { load_config("/nonexistent/config.txt"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("cross-field invariants") {
  CHECK(kind_of([] { parse_config("replay.t_r = 0\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("replay.t_b = 0\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("terrain_order = 0,1,1\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("world.terrains = 3\n"); }) == ErrorKind::InvalidConfig);  // order lists 0..5
  CHECK(kind_of([] { parse_config("base_terrains = 7\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("world.rows = 4\n"); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { parse_config("replay.fcm_p = 1.5\n"); }) == ErrorKind::InvalidConfig);
  CHECK_NOTHROW(parse_config("world.terrains = 3\nterrain_order = 2,0,1\nbase_terrains = 1\n"));
}
