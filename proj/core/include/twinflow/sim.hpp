#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "twinflow/geometry.hpp"
#include "twinflow/policy.hpp"
#include "twinflow/rng.hpp"

namespace twinflow {

// Planar kinematic world: motion in the vertical x-y plane (y is height,
// z fixed at 0), point grippers, no arm-arm collision. The wrist angle is a
// rotation about z carried through the 6D channels.
namespace world {
inline constexpr float kXMin = -0.55f, kXMax = 0.55f;
inline constexpr float kYMin = 0.0f, kYMax = 0.5f;
inline constexpr float kScale = 0.5f;  // feature normalization divisor
inline constexpr int kFeatDim = 16;
inline constexpr int kRight = 0, kLeft = 1;
}  // namespace world

enum class TaskKind {
  reach,
  pick_place,
  parallel_pickplace,
  coordinated_lift,
  sequential_handover,
  put_x_into_y,
};

const char* to_string(TaskKind k);
TaskKind task_from_string(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::pick_place;
  float env_hz = 10.f;
  float grasp_radius = 0.08f;
  float sync_tol = 0.05f;
  float place_radius = 0.07f;
  float reach_tol = 0.05f;
  float lift_height = 0.22f;
  float max_step = 0.08f;        // per-step EEF displacement clamp (m)
  float max_turn = 0.3f;         // per-step wrist angle clamp (rad)
  int horizon = 140;             // expert episode cap (env steps)

  static TaskSpec standard(TaskKind k);
  bool bimanual() const { return kind != TaskKind::reach && kind != TaskKind::pick_place; }
  int arms() const { return bimanual() ? 2 : 1; }
  void validate() const;
};

struct SimObject {
  int id = 0;
  int color = -1;                 // 0 red, 1 green, 2 blue, -1 none
  std::array<float, 2> pos{0, 0};
  float width = 0.f;              // > 0: wide two-handle object
  int held_by = -1;               // arm index, or -1
  int co_held_by = -1;            // second gripper (handover overlap / wide lifts)
};

struct TargetRegion {
  int id = 0;
  std::array<float, 2> center{0, 0};
  float radius = 0.07f;
};

struct ArmState {
  float x = 0, y = 0, theta = 0;
  bool closed = false;
  int holding = -1;  // object id

  Pose10 pose() const;
};

struct SceneState {
  std::array<ArmState, 2> arm;  // [right, left]
  std::vector<SimObject> objects;
  std::vector<TargetRegion> targets;
  int instructed_color = -1;
  int instructed_side = -1;  // 0 left pot, 1 right pot
};

// fixed word list shared by tasks; ids index into it
const std::vector<std::string>& instruction_vocab();
std::vector<int> tokenize_instruction(const std::string& text);
// vocabulary ids naming the five scene slots (red, green, blue, left, right)
const std::vector<int>& slot_word_ids();

bool success(const TaskSpec& task, const SceneState& state);

class SimEnv {
public:
  SimEnv(const TaskSpec& task, std::uint64_t seed);

  void reset(std::uint64_t seed);
  // action: arms()*10 floats, absolute EEF pose command per arm
  void step(const float* action, int dim);

  const TaskSpec& task() const { return task_; }
  const SceneState& state() const { return state_; }
  SceneState& mutable_state() { return state_; }
  int arms() const { return task_.arms(); }
  bool succeeded() const { return success(task_, state_); }
  const std::string& instruction() const { return instruction_; }
  const std::vector<int>& instruction_ids() const { return instr_ids_; }

  ObservationSingle observe_single() const;
  ObservationTwin observe_twin() const;
  std::vector<float> observe_flat() const;  // [ego | wristR propR | wristL propL]
  static int flat_obs_dim(int arms) { return world::kFeatDim + arms * (world::kFeatDim + kPoseDim); }
  static ObservationSingle unflatten_single(const std::vector<float>& flat, const std::vector<int>& ids);
  static ObservationTwin unflatten_twin(const std::vector<float>& flat, const std::vector<int>& ids);

private:
  std::vector<float> ego_features() const;
  std::vector<float> wrist_features(int arm) const;

  TaskSpec task_;
  SceneState state_;
  std::string instruction_;
  std::vector<int> instr_ids_;
};

// One recorded trajectory at env frequency.
struct Episode {
  int arms = 1;
  float env_hz = 10.f;
  std::string instruction;
  std::vector<int> instr_ids;
  std::vector<std::vector<float>> obs;      // [steps][flat_obs_dim]
  std::vector<std::vector<float>> actions;  // [steps][arms*10]
  bool success = false;
  std::uint64_t seed = 0;

  ActionChunk action_chunk() const;  // all steps as one chunk at env_hz
};

namespace detail {
struct ExpertPlan;
}

// Waypoint-following phase controller with bounded per-step noise. One
// instance drives one episode; tick() reads the live scene and emits the
// next absolute pose command for every arm.
class ExpertController {
public:
  ExpertController(const TaskSpec& task, const SceneState& initial, std::uint64_t seed);
  ExpertController(const ExpertController&);
  ExpertController& operator=(const ExpertController&);
  ~ExpertController();

  std::vector<float> tick(const SceneState& s);

private:
  TaskSpec task_;
  Rng noise_;
  std::unique_ptr<detail::ExpertPlan> plan_;
};

// Runs the controller to success (plus a short settle tail); throws if the
// scene is not solved within the horizon.
Episode scripted_expert(const TaskSpec& task, std::uint64_t seed);

// Per-step phase labels of the most recent scripted_expert call are exposed
// for audits (which gripper held the handover object, in order).
std::vector<int> holder_sequence(const Episode& ep, const TaskSpec& task, std::uint64_t seed);

}  // namespace twinflow
