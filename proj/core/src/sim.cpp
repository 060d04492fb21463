#include "twinflow/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace twinflow {

namespace {

float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

float dist2d(float ax, float ay, float bx, float by) {
  return std::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by));
}

float planar_angle(const std::array<float, 6>& r6) {
  Mat3 r = r6_to_rotmat(r6);
  return static_cast<float>(std::atan2(r.m[1][0], r.m[0][0]));
}

// handle sign for wide objects: +1 right handle, -1 left handle
float handle_x(const SimObject& o, int sign) { return o.pos[0] + 0.5f * o.width * sign; }

}  // namespace

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::reach: return "reach";
    case TaskKind::pick_place: return "pick_place";
    case TaskKind::parallel_pickplace: return "parallel_pickplace";
    case TaskKind::coordinated_lift: return "coordinated_lift";
    case TaskKind::sequential_handover: return "sequential_handover";
    case TaskKind::put_x_into_y: return "put_x_into_y";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  for (TaskKind k : {TaskKind::reach, TaskKind::pick_place, TaskKind::parallel_pickplace,
                     TaskKind::coordinated_lift, TaskKind::sequential_handover, TaskKind::put_x_into_y})
    if (s == to_string(k)) return k;
  fail("unknown task kind: " + s);
}

TaskSpec TaskSpec::standard(TaskKind k) {
  TaskSpec t;
  t.kind = k;
  switch (k) {
    case TaskKind::reach: t.horizon = 60; break;
    case TaskKind::pick_place: t.horizon = 130; break;
    case TaskKind::parallel_pickplace: t.horizon = 130; break;
    case TaskKind::coordinated_lift:
      t.horizon = 120;
      t.sync_tol = 0.028f;
      t.lift_height = 0.32f;
      t.grasp_radius = 0.05f;
      break;
    case TaskKind::sequential_handover: t.horizon = 170; break;
    case TaskKind::put_x_into_y: t.horizon = 140; break;
  }
  return t;
}

void TaskSpec::validate() const {
  require(env_hz > 0 && horizon > 0, "bad task timing");
  require(grasp_radius > 0 && place_radius > 0 && sync_tol > 0, "bad task tolerances");
}

Pose10 ArmState::pose() const {
  Pose10 p;
  p.position = {x, y, 0.f};
  p.rot6 = rotmat_to_6d(Mat3::rot_z(theta));
  p.gripper = closed ? 1.f : 0.f;
  return p;
}

const std::vector<std::string>& instruction_vocab() {
  static const std::vector<std::string> words = {
      "reach", "the",  "goal", "put",  "red",  "green", "blue",  "box",  "into",
      "left",  "right", "pot",  "place", "both", "boxes", "lift", "wide", "hand", "over"};
  return words;
}

std::vector<int> tokenize_instruction(const std::string& text) {
  static std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& v = instruction_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) m[v[i]] = static_cast<int>(i);
    return m;
  }();
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) {
    auto it = index.find(w);
    require(it != index.end(), "word not in vocabulary: " + w);
    ids.push_back(it->second);
  }
  return ids;
}

// ---- scene construction -----------------------------------------------

namespace {

const char* color_word(int c) { return c == 0 ? "red" : (c == 1 ? "green" : "blue"); }

void place_pots(SceneState& s, float radius) {
  s.targets.push_back({0, {-0.40f, 0.f}, radius});  // left pot
  s.targets.push_back({1, {0.40f, 0.f}, radius});   // right pot
}

// three colored boxes at separated x positions
void place_boxes(SceneState& s, Rng& rng, float lo, float hi) {
  std::vector<float> xs;
  while (xs.size() < 3) {
    float x = static_cast<float>(rng.uniform(lo, hi));
    bool ok = true;
    for (float prev : xs) ok = ok && std::abs(prev - x) > 0.09f;
    if (ok) xs.push_back(x);
  }
  for (int c = 0; c < 3; ++c) s.objects.push_back({c, c, {xs[c], 0.f}, 0.f, -1, -1});
}

}  // namespace

SimEnv::SimEnv(const TaskSpec& task, std::uint64_t seed) : task_(task) {
  task_.validate();
  reset(seed);
}

void SimEnv::reset(std::uint64_t seed) {
  Rng rng = Rng(seed).split("scene");
  state_ = SceneState{};
  state_.arm[world::kRight] = {static_cast<float>(rng.uniform(0.15, 0.45)),
                               static_cast<float>(rng.uniform(0.12, 0.32)), 0.f, false, -1};
  state_.arm[world::kLeft] = {static_cast<float>(rng.uniform(-0.45, -0.15)),
                              static_cast<float>(rng.uniform(0.12, 0.32)), 0.f, false, -1};

  switch (task_.kind) {
    case TaskKind::reach: {
      const ArmState& a = state_.arm[world::kRight];
      float gx = 0, gy = 0;
      do {
        gx = static_cast<float>(rng.uniform(-0.30, 0.45));
        gy = static_cast<float>(rng.uniform(0.06, 0.40));
      } while (std::sqrt((gx - a.x) * (gx - a.x) + (gy - a.y) * (gy - a.y)) < 3 * task_.reach_tol);
      state_.targets.push_back({0, {gx, gy}, task_.reach_tol});
      instruction_ = "reach the goal";
      break;
    }
    case TaskKind::pick_place:
    case TaskKind::put_x_into_y: {
      place_boxes(state_, rng, -0.26, 0.26);
      place_pots(state_, task_.place_radius);
      state_.instructed_color = rng.uniform_int(0, 2);
      state_.instructed_side = rng.uniform_int(0, 1);
      instruction_ = std::string("put ") + color_word(state_.instructed_color) + " box into " +
                     (state_.instructed_side == 0 ? "left" : "right") + " pot";
      break;
    }
    case TaskKind::parallel_pickplace: {
      state_.objects.push_back({0, 0, {static_cast<float>(rng.uniform(0.05, 0.28)), 0.f}, 0.f, -1, -1});
      state_.objects.push_back({1, 1, {static_cast<float>(rng.uniform(-0.28, -0.05)), 0.f}, 0.f, -1, -1});
      state_.targets.push_back({0, {static_cast<float>(rng.uniform(-0.50, -0.36)), 0.f}, task_.place_radius});
      state_.targets.push_back({1, {static_cast<float>(rng.uniform(0.36, 0.50)), 0.f}, task_.place_radius});
      instruction_ = "place both boxes";
      break;
    }
    case TaskKind::coordinated_lift: {
      SimObject box{0, 0, {static_cast<float>(rng.uniform(-0.08, 0.08)), 0.f}, 0.30f, -1, -1};
      state_.objects.push_back(box);
      // wide independent start ranges: the arms arrive at very different
      // times and must wait for each other
      state_.arm[world::kRight].x = static_cast<float>(rng.uniform(0.16, 0.52));
      state_.arm[world::kRight].y = static_cast<float>(rng.uniform(0.06, 0.44));
      state_.arm[world::kLeft].x = static_cast<float>(rng.uniform(-0.52, -0.16));
      state_.arm[world::kLeft].y = static_cast<float>(rng.uniform(0.06, 0.44));
      instruction_ = "lift the wide box";
      break;
    }
    case TaskKind::sequential_handover: {
      state_.objects.push_back({0, 0, {static_cast<float>(rng.uniform(0.15, 0.40)), 0.f}, 0.f, -1, -1});
      state_.targets.push_back({0, {static_cast<float>(rng.uniform(-0.46, -0.34)), 0.f}, task_.place_radius});
      instruction_ = "hand over the box";
      break;
    }
  }
  instr_ids_ = tokenize_instruction(instruction_);
}

// ---- dynamics ---------------------------------------------------------

void SimEnv::step(const float* action, int dim) {
  require(dim == arms() * kPoseDim, "action dim mismatch");
  for (int i = 0; i < dim; ++i)
    if (!std::isfinite(action[i])) fail("non-finite action");

  // arm motion, right first (fixed order keeps episodes bit-reproducible)
  for (int a = 0; a < arms(); ++a) {
    ArmState& arm = state_.arm[a];
    const float* cmd = action + a * kPoseDim;
    float tx = clampf(cmd[0], world::kXMin, world::kXMax);
    float ty = clampf(cmd[1], world::kYMin, world::kYMax);
    float dx = tx - arm.x, dy = ty - arm.y;
    float d = std::sqrt(dx * dx + dy * dy);
    if (d > task_.max_step) {
      dx *= task_.max_step / d;
      dy *= task_.max_step / d;
    }
    arm.x += dx;
    arm.y += dy;

    std::array<float, 6> r6;
    for (int i = 0; i < 6; ++i) r6[i] = cmd[3 + i];
    float target_theta = arm.theta;
    try {
      target_theta = planar_angle(r6);
    } catch (const TwinflowError&) {
      // degenerate rotation command: keep the current angle
    }
    float dth = target_theta - arm.theta;
    while (dth > 3.14159265f) dth -= 2 * 3.14159265f;
    while (dth < -3.14159265f) dth += 2 * 3.14159265f;
    arm.theta += clampf(dth, -task_.max_turn, task_.max_turn);

    bool want_closed = cmd[9] > 0.5f;
    if (want_closed && !arm.closed) arm.closed = true;
    if (!want_closed && arm.closed) {
      arm.closed = false;
      if (arm.holding >= 0) {
        SimObject& o = state_.objects[arm.holding];
        if (o.held_by == a) {
          o.held_by = o.co_held_by;
          o.co_held_by = -1;
        } else if (o.co_held_by == a) {
          o.co_held_by = -1;
        }
        arm.holding = -1;
      }
    }
  }

  // grasping: a closed empty gripper takes the nearest object in radius
  for (int a = 0; a < arms(); ++a) {
    ArmState& arm = state_.arm[a];
    if (!arm.closed || arm.holding >= 0) continue;
    int best = -1;
    float best_d = task_.grasp_radius;
    for (const SimObject& o : state_.objects) {
      float gx = o.width > 0 ? handle_x(o, a == world::kRight ? +1 : -1) : o.pos[0];
      float d = dist2d(arm.x, arm.y, gx, o.pos[1]);
      if (d <= best_d) {
        best_d = d;
        best = o.id;
      }
    }
    if (best >= 0) {
      SimObject& o = state_.objects[best];
      if (o.held_by < 0) {
        o.held_by = a;
        arm.holding = best;
      } else if (o.co_held_by < 0 && o.held_by != a) {
        o.co_held_by = a;
        arm.holding = best;
      }
    }
  }

  // object tracking
  for (SimObject& o : state_.objects) {
    if (o.width > 0) {
      // wide object: moves only under a synchronous two-gripper lift
      bool both = o.held_by >= 0 && o.co_held_by >= 0;
      if (both) {
        const ArmState& r = state_.arm[o.held_by];
        const ArmState& l = state_.arm[o.co_held_by];
        if (std::abs(r.y - l.y) < task_.sync_tol) {
          o.pos[1] = std::max(0.f, std::min(r.y, l.y));
          o.pos[0] = 0.5f * (r.x + l.x);
        } else {
          // desynchronized lift: the object drops and both grips are lost
          o.pos[1] = 0.f;
          state_.arm[o.held_by].holding = -1;
          state_.arm[o.co_held_by].holding = -1;
          o.held_by = o.co_held_by = -1;
        }
      } else if (o.held_by >= 0) {
        // single grip cannot move it; slipping off the handle breaks the grip
        if (o.pos[1] > 0.f) {
          o.pos[1] = 0.f;
        }
        ArmState& holder = state_.arm[o.held_by];
        float hx = handle_x(o, o.held_by == world::kRight ? +1 : -1);
        if (dist2d(holder.x, holder.y, hx, o.pos[1]) > 1.5f * task_.grasp_radius) {
          holder.holding = -1;
          o.held_by = -1;
        }
      }
    } else if (o.held_by >= 0) {
      const ArmState& holder = state_.arm[o.held_by];
      o.pos[0] = clampf(holder.x, world::kXMin, world::kXMax);
      o.pos[1] = holder.y;
    } else if (o.pos[1] > 0.f) {
      o.pos[1] = 0.f;  // unsupported objects fall to the table
    }
  }
}

// ---- success ------------------------------------------------------------

namespace {

bool box_in(const SimObject& o, const TargetRegion& t) {
  return o.held_by < 0 && o.pos[1] <= 0.05f &&
         dist2d(o.pos[0], o.pos[1], t.center[0], t.center[1]) <= t.radius;
}

}  // namespace

const std::vector<int>& slot_word_ids() {
  static const std::vector<int> ids = tokenize_instruction("red green blue left right");
  return ids;
}

bool success(const TaskSpec& task, const SceneState& s) {
  switch (task.kind) {
    case TaskKind::reach: {
      const ArmState& a = s.arm[world::kRight];
      return dist2d(a.x, a.y, s.targets[0].center[0], s.targets[0].center[1]) <= task.reach_tol;
    }
    case TaskKind::pick_place:
    case TaskKind::put_x_into_y: {
      const SimObject& want = s.objects[s.instructed_color];
      const TargetRegion& pot = s.targets[s.instructed_side];
      if (!box_in(want, pot)) return false;
      for (const SimObject& o : s.objects) {
        if (o.id == want.id) continue;
        for (const TargetRegion& t : s.targets)
          if (box_in(o, t)) return false;  // a wrong box was placed
      }
      return true;
    }
    case TaskKind::parallel_pickplace:
      return box_in(s.objects[0], s.targets[1]) && box_in(s.objects[1], s.targets[0]);
    case TaskKind::coordinated_lift: {
      const SimObject& box = s.objects[0];
      return box.held_by >= 0 && box.co_held_by >= 0 && box.pos[1] >= task.lift_height;
    }
    case TaskKind::sequential_handover:
      return box_in(s.objects[0], s.targets[0]);
  }
  return false;
}

// ---- observations ---------------------------------------------------------

std::vector<float> SimEnv::ego_features() const {
  std::vector<float> f(world::kFeatDim, 0.f);
  for (std::size_t i = 0; i < state_.objects.size() && i < 3; ++i) {
    const SimObject& o = state_.objects[i];
    f[3 * i + 0] = 1.f;
    f[3 * i + 1] = o.pos[0] / world::kScale;
    f[3 * i + 2] = o.pos[1] / world::kScale;
  }
  for (std::size_t i = 0; i < state_.targets.size() && i < 2; ++i) {
    const TargetRegion& t = state_.targets[i];
    f[9 + 3 * i + 0] = 1.f;
    f[9 + 3 * i + 1] = t.center[0] / world::kScale;
    f[9 + 3 * i + 2] = t.center[1] / world::kScale;
  }
  return f;
}

std::vector<float> SimEnv::wrist_features(int arm) const {
  const ArmState& a = state_.arm[arm];
  std::vector<float> f(world::kFeatDim, 0.f);
  for (std::size_t i = 0; i < state_.objects.size() && i < 3; ++i) {
    const SimObject& o = state_.objects[i];
    f[3 * i + 0] = 1.f;
    f[3 * i + 1] = (o.pos[0] - a.x) / world::kScale;
    f[3 * i + 2] = (o.pos[1] - a.y) / world::kScale;
  }
  for (std::size_t i = 0; i < state_.targets.size() && i < 2; ++i) {
    const TargetRegion& t = state_.targets[i];
    f[9 + 2 * i + 0] = (t.center[0] - a.x) / world::kScale;
    f[9 + 2 * i + 1] = (t.center[1] - a.y) / world::kScale;
  }
  f[13] = a.holding >= 0 ? 1.f : 0.f;
  f[14] = a.closed ? 1.f : 0.f;
  return f;
}

ObservationSingle SimEnv::observe_single() const {
  ObservationSingle o;
  o.instruction = instr_ids_;
  o.slot_words = slot_word_ids();
  o.ego_feat = ego_features();
  o.wrist_feat = wrist_features(world::kRight);
  auto p = state_.arm[world::kRight].pose().flat();
  o.proprio.assign(p.begin(), p.end());
  return o;
}

ObservationTwin SimEnv::observe_twin() const {
  ObservationTwin o;
  o.instruction = instr_ids_;
  o.slot_words = slot_word_ids();
  o.ego_feat = ego_features();
  o.wrist_r = wrist_features(world::kRight);
  o.wrist_l = wrist_features(world::kLeft);
  auto pr = state_.arm[world::kRight].pose().flat();
  auto pl = state_.arm[world::kLeft].pose().flat();
  o.proprio_r.assign(pr.begin(), pr.end());
  o.proprio_l.assign(pl.begin(), pl.end());
  return o;
}

std::vector<float> SimEnv::observe_flat() const {
  std::vector<float> out;
  out.reserve(flat_obs_dim(arms()));
  auto append = [&](const std::vector<float>& v) { out.insert(out.end(), v.begin(), v.end()); };
  append(ego_features());
  append(wrist_features(world::kRight));
  auto pr = state_.arm[world::kRight].pose().flat();
  out.insert(out.end(), pr.begin(), pr.end());
  if (arms() == 2) {
    append(wrist_features(world::kLeft));
    auto pl = state_.arm[world::kLeft].pose().flat();
    out.insert(out.end(), pl.begin(), pl.end());
  }
  return out;
}

ObservationSingle SimEnv::unflatten_single(const std::vector<float>& flat, const std::vector<int>& ids) {
  require(static_cast<int>(flat.size()) == flat_obs_dim(1), "flat single obs dim mismatch");
  ObservationSingle o;
  o.instruction = ids;
  o.slot_words = slot_word_ids();
  o.ego_feat.assign(flat.begin(), flat.begin() + world::kFeatDim);
  o.wrist_feat.assign(flat.begin() + world::kFeatDim, flat.begin() + 2 * world::kFeatDim);
  o.proprio.assign(flat.begin() + 2 * world::kFeatDim, flat.end());
  return o;
}

ObservationTwin SimEnv::unflatten_twin(const std::vector<float>& flat, const std::vector<int>& ids) {
  require(static_cast<int>(flat.size()) == flat_obs_dim(2), "flat twin obs dim mismatch");
  ObservationTwin o;
  o.instruction = ids;
  o.slot_words = slot_word_ids();
  int F = world::kFeatDim;
  o.ego_feat.assign(flat.begin(), flat.begin() + F);
  o.wrist_r.assign(flat.begin() + F, flat.begin() + 2 * F);
  o.proprio_r.assign(flat.begin() + 2 * F, flat.begin() + 2 * F + kPoseDim);
  o.wrist_l.assign(flat.begin() + 2 * F + kPoseDim, flat.begin() + 3 * F + kPoseDim);
  o.proprio_l.assign(flat.begin() + 3 * F + kPoseDim, flat.end());
  return o;
}

ActionChunk Episode::action_chunk() const {
  require(!actions.empty(), "empty episode");
  ActionChunk c(static_cast<int>(actions.size()), arms * kPoseDim, env_hz);
  for (std::size_t t = 0; t < actions.size(); ++t)
    for (int d = 0; d < c.D; ++d) c.at(static_cast<int>(t), d) = actions[t][d];
  return c;
}
// ---- scripted expert -------------------------------------------------------

namespace {

struct ArmCommand {
  float x, y, theta, grip;
};

// one clamped step toward the waypoint, with bounded positional noise
void emit(const ArmState& a, const ArmCommand& c, const TaskSpec& task, Rng& noise, float amp,
          float* out10) {
  float dx = c.x - a.x, dy = c.y - a.y;
  float d = std::sqrt(dx * dx + dy * dy);
  float step = task.max_step * 0.9f;
  if (d > step) {
    dx *= step / d;
    dy *= step / d;
  }
  float nx = a.x + dx + static_cast<float>(noise.uniform(-amp, amp));
  float ny = a.y + dy + static_cast<float>(noise.uniform(-amp, amp));
  float dth = clampf(c.theta - a.theta, -task.max_turn * 0.9f, task.max_turn * 0.9f);
  Pose10 p = pack_pose({clampf(nx, world::kXMin, world::kXMax),
                        clampf(ny, world::kYMin, world::kYMax), 0.f},
                       Mat3::rot_z(a.theta + dth), c.grip);
  auto flat = p.flat();
  std::copy(flat.begin(), flat.end(), out10);
}

constexpr float kGraspH = 0.02f;

// per-episode profile heights; jitter widens the demo state tube
struct Heights {
  float hover = 0.14f, carry = 0.16f, release = 0.06f;
};

// pick one object and drop it at pot_x; phases keyed off the live state
struct PickPlace {
  int obj_id = 0;
  float pot_x = 0.f;
  float grasp_theta = 0.f;
  Heights h;
  int detour_obj = -1;  // optional wrong-box feint before committing
  int detour_steps = 0;
  int phase = 0;  // 0 above, 1 descend, 2 close, 3 lift, 4 traverse, 5 lower, 6 open, 7 done

  ArmCommand tick(const SceneState& s, int arm_idx, const TaskSpec& task) {
    const ArmState& a = s.arm[arm_idx];
    const SimObject& o = s.objects[obj_id];
    if (detour_obj >= 0 && detour_steps > 0) {
      --detour_steps;
      const SimObject& d = s.objects[detour_obj];
      return {d.pos[0], h.hover, grasp_theta, 0.f};
    }
    switch (phase) {
      case 0:
        if (std::abs(a.x - o.pos[0]) < 0.02f && std::abs(a.y - h.hover) < 0.03f) phase = 1;
        return {o.pos[0], h.hover, grasp_theta, 0.f};
      case 1:
        if (dist2d(a.x, a.y, o.pos[0], o.pos[1]) < task.grasp_radius * 0.5f) phase = 2;
        return {o.pos[0], kGraspH, grasp_theta, 0.f};
      case 2:
        if (a.holding == obj_id) phase = 3;
        return {o.pos[0], kGraspH, grasp_theta, 1.f};
      case 3:
        if (a.y > h.carry - 0.02f) phase = 4;
        return {a.x, h.carry, grasp_theta, 1.f};
      case 4:
        if (std::abs(a.x - pot_x) < 0.02f) phase = 5;
        return {pot_x, h.carry, 0.f, 1.f};
      case 5:
        if (a.y < h.release + 0.02f) phase = 6;
        return {pot_x, h.release, 0.f, 1.f};
      case 6:
        if (a.holding < 0) phase = 7;
        return {pot_x, h.release, 0.f, 0.f};
      default:
        return {pot_x, h.hover, 0.f, 0.f};
    }
  }
  bool done() const { return phase == 7; }
};

ArmCommand hold_pose(const ArmState& a) { return {a.x, a.y, a.theta, a.closed ? 1.f : 0.f}; }

}  // namespace

namespace detail {

struct ExpertPlan {
  PickPlace pp_r{0, 0.f}, pp_l{1, 0.f};
  Heights h;
  int lift_phase = 0;
  int handover_phase = 0;
  int worker_arm = world::kRight;
  float grasp_theta = 0.f;
  std::array<float, 2> start_r{0, 0}, start_l{0, 0};
};

}  // namespace detail

ExpertController::ExpertController(const TaskSpec& task, const SceneState& initial,
                                   std::uint64_t seed)
    : task_(task), noise_(Rng(seed).split("expert-noise")), plan_(new detail::ExpertPlan) {
  Rng shape = Rng(seed).split("expert-shape");
  detail::ExpertPlan& p = *plan_;
  p.grasp_theta = static_cast<float>(shape.uniform(-0.3, 0.3));
  Heights h;
  h.hover = static_cast<float>(shape.uniform(0.11, 0.17));
  h.carry = static_cast<float>(shape.uniform(0.14, 0.19));
  h.release = static_cast<float>(shape.uniform(0.05, 0.08));
  p.h = h;
  p.pp_r.h = h;
  p.pp_l.h = h;
  // half of the pick demos feint toward a random box first, then correct;
  // the corrective segment is what teaches instruction-conditioned targeting
  if ((task.kind == TaskKind::pick_place || task.kind == TaskKind::put_x_into_y) &&
      initial.objects.size() >= 3 && shape.uniform() < 0.5) {
    p.pp_r.detour_obj = static_cast<int>(shape.uniform() * 3.0) % 3;
    p.pp_r.detour_steps = 2 + static_cast<int>(shape.uniform() * 4.0);
  }
  p.start_r = {initial.arm[world::kRight].x, initial.arm[world::kRight].y};
  p.start_l = {initial.arm[world::kLeft].x, initial.arm[world::kLeft].y};
  switch (task.kind) {
    case TaskKind::pick_place:
    case TaskKind::put_x_into_y:
      p.pp_r.obj_id = initial.instructed_color;
      p.pp_r.pot_x = initial.targets[initial.instructed_side].center[0];
      p.pp_r.grasp_theta = p.grasp_theta;
      p.worker_arm = initial.objects[p.pp_r.obj_id].pos[0] >= 0.f ? world::kRight : world::kLeft;
      break;
    case TaskKind::parallel_pickplace:
      p.pp_r = {0, initial.targets[1].center[0], p.grasp_theta, 0};
      p.pp_l = {1, initial.targets[0].center[0], -p.grasp_theta, 0};
      break;
    case TaskKind::sequential_handover:
      p.pp_r = {0, 0.0f, p.grasp_theta, 0};  // right carries to the handover point
      break;
    default:
      break;
  }
}

ExpertController::ExpertController(const ExpertController& o)
    : task_(o.task_), noise_(o.noise_), plan_(new detail::ExpertPlan(*o.plan_)) {}
ExpertController& ExpertController::operator=(const ExpertController& o) {
  task_ = o.task_;
  noise_ = o.noise_;
  plan_.reset(new detail::ExpertPlan(*o.plan_));
  return *this;
}
ExpertController::~ExpertController() = default;

std::vector<float> ExpertController::tick(const SceneState& s) {
  detail::ExpertPlan& p = *plan_;
  const TaskSpec& task = task_;
  std::vector<float> act(task.arms() * kPoseDim, 0.f);

  switch (task.kind) {
    case TaskKind::reach: {
      ArmCommand c{s.targets[0].center[0], s.targets[0].center[1], p.grasp_theta, 0.f};
      emit(s.arm[world::kRight], c, task, noise_, 0.010f, act.data());
      break;
    }
    case TaskKind::pick_place: {
      emit(s.arm[world::kRight], p.pp_r.tick(s, world::kRight, task), task, noise_, 0.010f,
           act.data());
      break;
    }
    case TaskKind::put_x_into_y: {
      // the arm on the instructed box's side does the work (fixed at reset)
      int w = p.worker_arm;
      ArmCommand wc = p.pp_r.tick(s, w, task);
      ArmCommand idle_r = {p.start_r[0], p.start_r[1], 0.f, 0.f};
      ArmCommand idle_l = {p.start_l[0], p.start_l[1], 0.f, 0.f};
      emit(s.arm[world::kRight], w == world::kRight ? wc : idle_r, task, noise_, 0.010f, act.data());
      emit(s.arm[world::kLeft], w == world::kLeft ? wc : idle_l, task, noise_, 0.010f,
           act.data() + kPoseDim);
      break;
    }
    case TaskKind::parallel_pickplace: {
      emit(s.arm[world::kRight], p.pp_r.tick(s, world::kRight, task), task, noise_, 0.010f,
           act.data());
      emit(s.arm[world::kLeft], p.pp_l.tick(s, world::kLeft, task), task, noise_, 0.010f,
           act.data() + kPoseDim);
      break;
    }
    case TaskKind::coordinated_lift: {
      const SimObject& box = s.objects[0];
      float hr = handle_x(box, +1), hl = handle_x(box, -1);
      ArmCommand cr, cl;
      const ArmState& ar = s.arm[world::kRight];
      const ArmState& al = s.arm[world::kLeft];
      bool r_at = dist2d(ar.x, ar.y, hr, box.pos[1]) < task.grasp_radius * 0.5f;
      bool l_at = dist2d(al.x, al.y, hl, box.pos[1]) < task.grasp_radius * 0.5f;
      switch (p.lift_phase) {
        case 0: {  // approach handles from above, then wait for the other arm
          cr = {hr, std::abs(ar.x - hr) < 0.03f ? kGraspH : p.h.hover, p.grasp_theta, 0.f};
          cl = {hl, std::abs(al.x - hl) < 0.03f ? kGraspH : p.h.hover, -p.grasp_theta, 0.f};
          if (r_at && l_at) p.lift_phase = 1;
          break;
        }
        case 1: {  // close both
          cr = {hr, kGraspH, p.grasp_theta, 1.f};
          cl = {hl, kGraspH, -p.grasp_theta, 1.f};
          if (box.held_by >= 0 && box.co_held_by >= 0) p.lift_phase = 2;
          break;
        }
        default: {  // synchronous lift: both track the lower gripper
          float base = std::min(ar.y, al.y);
          float target = std::min(task.lift_height + 0.04f, base + 0.02f);
          cr = {hr, target, p.grasp_theta, 1.f};
          cl = {hl, target, -p.grasp_theta, 1.f};
          break;
        }
      }
      emit(ar, cr, task, noise_, p.lift_phase == 2 ? 0.002f : 0.010f, act.data());
      emit(al, cl, task, noise_, p.lift_phase == 2 ? 0.002f : 0.010f, act.data() + kPoseDim);
      break;
    }
    case TaskKind::sequential_handover: {
      const SimObject& box = s.objects[0];
      const ArmState& ar = s.arm[world::kRight];
      const ArmState& al = s.arm[world::kLeft];
      ArmCommand cr = hold_pose(ar), cl = {-0.18f, p.h.carry + 0.02f, 0.f, 0.f};
      float hx = 0.0f, hy = p.h.carry;
      switch (p.handover_phase) {
        case 0: {  // right picks and carries to the handover point
          cr = p.pp_r.tick(s, world::kRight, task);
          if (p.pp_r.phase >= 4) cr = {hx, hy, 0.f, 1.f};  // never lower; wait for the left arm
          if (p.pp_r.phase >= 4 && std::abs(ar.x - hx) < 0.02f && box.held_by == world::kRight)
            p.handover_phase = 1;
          break;
        }
        case 1: {  // left moves in and closes on the box
          cr = {hx, hy, 0.f, 1.f};
          cl = {box.pos[0], box.pos[1], 0.f,
                dist2d(al.x, al.y, box.pos[0], box.pos[1]) < task.grasp_radius * 0.5f ? 1.f : 0.f};
          if (box.co_held_by == world::kLeft || box.held_by == world::kLeft) p.handover_phase = 2;
          break;
        }
        case 2: {  // right releases
          cr = {hx, hy, 0.f, 0.f};
          cl = {box.pos[0], box.pos[1], 0.f, 1.f};
          if (box.held_by == world::kLeft && ar.holding < 0) p.handover_phase = 3;
          break;
        }
        default: {  // right retreats; left carries to the target and lowers
          cr = {p.start_r[0], p.start_r[1], 0.f, 0.f};
          float tx = s.targets[0].center[0];
          if (std::abs(al.x - tx) < 0.02f && al.y < p.h.release + 0.02f) {
            cl = {tx, p.h.release, 0.f, 0.f};  // open
          } else if (std::abs(al.x - tx) < 0.02f) {
            cl = {tx, p.h.release, 0.f, 1.f};
          } else {
            cl = {tx, p.h.carry, 0.f, 1.f};
          }
          break;
        }
      }
      emit(ar, cr, task, noise_, 0.010f, act.data());
      emit(al, cl, task, noise_, 0.010f, act.data() + kPoseDim);
      break;
    }
  }
  return act;
}

Episode scripted_expert(const TaskSpec& task, std::uint64_t seed) {
  SimEnv env(task, seed);
  ExpertController ctrl(task, env.state(), seed);

  Episode ep;
  ep.arms = env.arms();
  ep.env_hz = task.env_hz;
  ep.instruction = env.instruction();
  ep.instr_ids = env.instruction_ids();
  ep.seed = seed;

  int settle = 0;
  for (int t = 0; t < task.horizon; ++t) {
    ep.obs.push_back(env.observe_flat());
    std::vector<float> act = ctrl.tick(env.state());
    ep.actions.push_back(act);
    env.step(act.data(), static_cast<int>(act.size()));
    if (env.succeeded()) {
      if (++settle >= 4) break;
    } else {
      settle = 0;
    }
  }

  ep.success = env.succeeded();
  if (!ep.success) fail("expert failed to solve scene (seed " + std::to_string(seed) + ")");
  return ep;
}

std::vector<int> holder_sequence(const Episode& ep, const TaskSpec& task, std::uint64_t seed) {
  SimEnv env(task, seed);
  std::vector<int> holders;
  for (const auto& act : ep.actions) {
    env.step(act.data(), static_cast<int>(act.size()));
    const SimObject& o = env.state().objects[0];
    holders.push_back(o.held_by);
  }
  return holders;
}

}  // namespace twinflow
