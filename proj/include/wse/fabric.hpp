/*
 * Copyright 2026 The wse-stencil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/**
 * @file fabric.hpp
 * @brief Cycle-stepped model of a W x H grid of tiles.
 *
 * Each tile has a router with four link ports plus a core port, a 48 KB
 * local memory addressed in 16-bit words, hardware FIFOs that activate
 * tasks, and up to nine background threads that each run one tensor
 * instruction. A cycle is executed in three phases:
 *
 *   1. pop     - every link port moves one buffered word into its link register
 *   2. deliver - every tile pulls the link registers facing it and routes the
 *                words into its own output buffers or core receive queues
 *   3. core    - at most one task body runs, then the datapath services the
 *                synchronous instruction and the background threads
 *
 * Each phase only writes state owned by the tile being processed, so tiles
 * are processed in parallel with a barrier between phases
 * (ExecPolicy::Parallel) or in raster order (ExecPolicy::Serial). The two
 * produce identical states.
 */
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wse/rates.hpp"
#include "wse/scalar.hpp"

namespace wse {

enum class Dir : std::uint8_t { North = 0, South = 1, East = 2, West = 3, Core = 4 };

inline constexpr int kLinkPorts = 4;
inline constexpr int kPorts = 5;
inline constexpr int kChannels = 16;
inline constexpr int kMaxRxReaders = 2;
inline constexpr int kMaxRxDepth = 8;
/// Upper bound on FabricConfig::max_threads_per_tile.
inline constexpr int kMaxThreadSlots = 64;

using Channel = std::uint8_t;
using PortMask = std::uint8_t;

constexpr PortMask port_bit(Dir d) { return static_cast<PortMask>(1u << static_cast<int>(d)); }
inline constexpr PortMask kAllLinks = 0x0f;

constexpr Dir opposite(Dir d) {
  switch (d) {
    case Dir::North: return Dir::South;
    case Dir::South: return Dir::North;
    case Dir::East: return Dir::West;
    case Dir::West: return Dir::East;
    case Dir::Core: return Dir::Core;
  }
  return Dir::Core;
}

std::string_view to_string(Dir d);

struct Coord {
  int x = 0;
  int y = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

/// North is y-1, South is y+1, East is x+1, West is x-1.
constexpr Coord neighbor_of(Coord c, Dir d) {
  switch (d) {
    case Dir::North: return {c.x, c.y - 1};
    case Dir::South: return {c.x, c.y + 1};
    case Dir::East: return {c.x + 1, c.y};
    case Dir::West: return {c.x - 1, c.y};
    case Dir::Core: return c;
  }
  return c;
}

struct FabricConfig {
  int width = 1;
  int height = 1;
  std::size_t memory_per_tile = 49152;  // bytes
  int max_threads_per_tile = 9;
  int words_per_cycle_read = RateTable::read_words_per_cycle;
  int words_per_cycle_write = RateTable::write_words_per_cycle;
  int link_latency = 1;  // cycles per hop; the engine models exactly one
  int rx_queue_depth = 2;

  void validate() const;
};

struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ThreadLimitExceeded : SimulationError {
  using SimulationError::SimulationError;
};
struct MemoryRaceDetected : SimulationError {
  using SimulationError::SimulationError;
};
struct MemoryBudgetExceeded : SimulationError {
  using SimulationError::SimulationError;
};
struct DeadlockError : SimulationError {
  using SimulationError::SimulationError;
};
struct RoutingError : SimulationError {
  using SimulationError::SimulationError;
};
struct InvariantViolation : SimulationError {
  using SimulationError::SimulationError;
};

struct RouterConfig {
  Channel broadcast_channel = 0;
  /// Channel on which each neighbor's broadcast arrives, indexed by Dir.
  std::array<std::optional<Channel>, kLinkPorts> incoming_channels{};
  /// Output ports for a word arriving on (input port, channel).
  std::array<std::array<PortMask, kChannels>, kPorts> forward{};

  PortMask forward_set(Dir in, Channel c) const { return forward[static_cast<int>(in)][c]; }
  void add_route(Dir in, Channel c, PortMask out) { forward[static_cast<int>(in)][c] |= out; }
  void clear_channel(Channel c) {
    for (auto& port : forward) port[c] = 0;
  }
};

struct MemoryTensor {
  std::uint32_t base = 0;  // word address
  std::uint32_t length = 0;
  std::uint32_t stride = 1;  // in elements
  Format format = Format::Binary16;

  std::uint32_t address(std::uint32_t i) const {
    return base + i * stride * static_cast<std::uint32_t>(format_words(format));
  }
  std::uint32_t end_address() const { return length == 0 ? base : address(length - 1) + format_words(format); }
};

struct FabricTensor {
  Channel channel = 0;
  std::uint32_t length = 0;
  Format format = Format::Binary16;
  std::uint32_t skip = 0;  // leading words discarded (receive side)
  int reader = 0;          // receive queue slot
};

struct FifoTensor {
  int fifo = -1;
  std::uint32_t length = 0;
};

using TensorDescriptor = std::variant<std::monostate, MemoryTensor, FabricTensor, FifoTensor>;

enum class TensorOp : std::uint8_t {
  Move,     // dst = a
  Mul,      // dst = a * b
  AddInto,  // dst = dst + a
  Fmac,     // dst = dst + a * b
};

/// One tensor instruction. With a thread slot it runs in the background;
/// without one the issuing task blocks until it completes.
struct Instruction {
  TensorOp op = TensorOp::Move;
  TensorDescriptor dst;
  TensorDescriptor a;
  TensorDescriptor b;
  Precision mode = Precision::Half;
  std::optional<int> thread;
  bool drain = false;  // finish as soon as the source FIFO is empty
  int term = -1;       // tag recorded in the summation-order log
  std::function<void(std::uint32_t)> on_complete;
};

struct FifoState {
  std::uint32_t base = 0;
  std::uint32_t capacity = 0;
  Format format = Format::Binary16;
  std::uint32_t head = 0;
  std::uint32_t count = 0;
  int activates = -1;
};

struct Reservation {
  enum class Kind : std::uint8_t { Read, Write, Accumulate };
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  Kind kind = Kind::Read;
};

struct ThreadState {
  Instruction ins;
  std::uint32_t length = 0;
  std::uint32_t done = 0;
  std::uint32_t skipped = 0;
  std::vector<Reservation> reservations;
};

class Tile;

/// Code triggered by activation, by a non-empty FIFO, or by arriving words.
class Task {
 public:
  virtual ~Task() = default;
  virtual void run(Tile& tile) = 0;
};

struct Schedule {
  enum class Kind : std::uint8_t { Deterministic, Seeded };
  Kind kind = Kind::Deterministic;
  std::uint64_t seed = 0;

  static Schedule deterministic() { return {}; }
  static Schedule seeded(std::uint64_t s) { return {Kind::Seeded, s}; }
};

enum class ExecPolicy : std::uint8_t { Serial, Parallel };

class Fabric;

class Tile {
 public:
  Tile(const FabricConfig& cfg, Coord c, PortMask neighbors);

  Coord coord() const { return coord_; }
  PortMask neighbors() const { return neighbors_; }
  int neighbor_count() const;
  std::uint64_t cycle() const { return cycle_; }

  RouterConfig router;

  // -- memory -------------------------------------------------------------
  std::uint32_t allocate(std::uint32_t words, std::string_view what);
  MemoryTensor allocate_tensor(std::uint32_t length, Format f, std::string_view what);
  std::uint32_t memory_mark() const { return top_; }
  void release_to(std::uint32_t mark);
  std::size_t memory_used() const { return std::size_t{top_} * 2; }
  std::size_t memory_budget() const { return std::size_t{budget_words_} * 2; }

  double load(Format f, std::uint32_t addr) const;
  void store(Format f, std::uint32_t addr, double v);
  std::uint64_t load_bits(Format f, std::uint32_t addr) const;
  std::vector<double> read(const MemoryTensor& t) const;
  void write(const MemoryTensor& t, const std::vector<double>& values);

  // -- program ------------------------------------------------------------
  int add_task(std::unique_ptr<Task> task);
  void activate(int task);
  /// Make `task` ready whenever reader 0 of channel `c` holds a word.
  void bind_channel(int task, Channel c);
  int add_fifo(std::uint32_t capacity, Format f, int activates_task);
  const FifoState& fifo(int id) const { return fifos_[static_cast<std::size_t>(id)]; }
  /// Declare `readers` core-side consumers for channel `c`. Arriving words
  /// are copied to every reader.
  void subscribe(Channel c, int readers = 1);

  /// Launch a background thread. Throws ThreadLimitExceeded or
  /// MemoryRaceDetected.
  int spawn_thread(Instruction ins);
  /// Queue a synchronous instruction on the main thread.
  void issue(Instruction ins);
  int live_threads() const { return live_threads_; }
  int peak_threads() const { return peak_threads_; }
  bool main_busy() const { return !main_queue_.empty(); }

  /// Drop all tasks, FIFOs, subscriptions and routes state of the current
  /// program; memory above `mark` is released.
  void clear_program(std::uint32_t mark);

  /// Signal completion after `delay` cycles.
  void finish_after(int delay);
  bool finished() const { return finished_; }

  // -- core-side fabric access ----------------------------------------------
  bool rx_available(Channel c, int reader = 0) const;
  std::uint64_t rx_peek(Channel c, int reader = 0) const;
  std::uint64_t rx_pop(Channel c, int reader = 0);
  /// Send a word through route (Core, c). All-or-nothing; false if any
  /// target is full.
  bool try_inject(Channel c, std::uint64_t bits);

  // -- instrumentation ------------------------------------------------------
  void enable_order_log(bool on);
  const std::vector<std::int8_t>& order_at(std::uint32_t addr) const;
  std::uint64_t elements_processed() const { return elements_; }
  std::string describe() const;
  bool idle() const;

 private:
  friend class Fabric;

  struct LinkReg {
    bool full = false;
    Channel ch = 0;
    std::uint64_t bits = 0;
  };
  struct RxQueue {
    std::array<std::uint64_t, kMaxRxDepth> buf{};
    std::uint8_t head = 0;
    std::uint8_t count = 0;
  };
  struct TaskSlot {
    std::unique_ptr<Task> task;
    bool activated = false;
    std::vector<Channel> channels;
    std::vector<int> fifos;
  };
  /// Remaining datapath units and memory words this cycle. An element may
  /// start while any remains; the overdraft is charged to the next cycle.
  struct Budget {
    int units = RateTable::kUnitsPerCycle;
    int read = RateTable::read_words_per_cycle;
    int write = RateTable::write_words_per_cycle;
  };

  // phases
  int pop_links();
  bool accept(Dir in, Channel c, std::uint64_t bits);
  int tick_core();

  bool targets_have_space(PortMask targets, Channel c) const;
  void place(PortMask targets, Channel c, std::uint64_t bits, const char* event);
  bool ready(const TaskSlot& t) const;
  int schedule_task();
  int service(ThreadState& t, Budget& budget);
  bool source_ready(const TensorDescriptor& d, std::uint32_t i, bool rx_used) const;
  double fetch(const TensorDescriptor& d, std::uint32_t i);
  std::vector<Reservation> reservations_for(const Instruction& ins, std::string& why) const;
  void check_races(const std::vector<Reservation>& r, int self) const;
  void trace(const char* event, Channel c, std::uint64_t bits);

  FabricConfig cfg_;
  Coord coord_;
  PortMask neighbors_;
  std::uint64_t cycle_ = 0;
  std::mt19937_64 rng_;
  bool seeded_ = false;
  std::ostream* trace_ = nullptr;

  Budget debt_{0, 0, 0};  // overdraft carried into the next cycle (<= 0)

  std::uint32_t budget_words_ = 0;
  std::vector<std::uint16_t> mem_;
  std::uint32_t top_ = 0;

  std::array<std::array<std::uint64_t, kChannels>, kLinkPorts> out_val_{};
  std::array<std::uint16_t, kLinkPorts> out_occ_{};
  std::array<std::uint8_t, kLinkPorts> rr_{};
  std::array<LinkReg, kLinkPorts> reg_{};
  std::array<std::array<RxQueue, kMaxRxReaders>, kChannels> rx_{};
  std::array<std::uint8_t, kChannels> rx_readers_{};

  std::vector<TaskSlot> tasks_;
  std::vector<FifoState> fifos_;
  std::vector<std::optional<ThreadState>> threads_;
  std::vector<ThreadState> main_queue_;  // front is executing
  int live_threads_ = 0;
  int peak_threads_ = 0;

  int finish_countdown_ = -1;
  bool finished_ = false;

  bool order_log_on_ = false;
  std::vector<std::vector<std::int8_t>> order_log_;

  // counters
  std::uint64_t elements_ = 0;
  std::array<std::uint64_t, kChannels> created_{};
  std::array<std::uint64_t, kChannels> destroyed_{};
  std::array<std::uint32_t, kLinkPorts> link_words_this_cycle_{};
  std::uint64_t link_transfers_ = 0;
};

struct ConservationReport {
  std::array<std::uint64_t, kChannels> created{};
  std::array<std::uint64_t, kChannels> destroyed{};
  std::array<std::uint64_t, kChannels> in_flight{};
  bool balanced() const;
};

inline constexpr std::string_view kTraceColumns = "cycle,tile_x,tile_y,event,channel,value_bits";

class Fabric {
 public:
  explicit Fabric(const FabricConfig& cfg);

  const FabricConfig& config() const { return cfg_; }
  int width() const { return cfg_.width; }
  int height() const { return cfg_.height; }
  std::size_t tile_count() const { return tiles_.size(); }
  bool contains(Coord c) const { return c.x >= 0 && c.y >= 0 && c.x < cfg_.width && c.y < cfg_.height; }
  Tile& tile(Coord c) { return tiles_[index(c)]; }
  const Tile& tile(Coord c) const { return tiles_[index(c)]; }
  Tile& tile(int x, int y) { return tile(Coord{x, y}); }
  std::vector<Tile>& tiles() { return tiles_; }
  const std::vector<Tile>& tiles() const { return tiles_; }

  std::uint64_t cycle() const { return cycle_; }

  void set_schedule(Schedule s);
  const Schedule& schedule() const { return schedule_; }
  void set_policy(ExecPolicy p) { policy_ = p; }
  ExecPolicy policy() const { return policy_; }
  /// Assert resource invariants after every cycle.
  void set_checked(bool on) { checked_ = on; }
  bool checked() const { return checked_; }
  /// Line-per-event trace with columns kTraceColumns. Tracing forces serial
  /// execution.
  void set_trace(std::ostream* out);

  /// Advance one cycle.
  void step();
  /// Step until `done()` holds. Returns cycles elapsed. Throws DeadlockError
  /// when no tile makes progress while work remains.
  std::uint64_t run_until(const std::function<bool()>& done, std::uint64_t max_cycles = 100'000'000);
  /// Run until every tile has signalled finish_after().
  std::uint64_t run_program(std::uint64_t max_cycles = 100'000'000);

  /// Inject a word at `c` through its (Core, channel) route.
  bool inject(Coord c, Channel ch, std::uint64_t bits) { return tile(c).try_inject(ch, bits); }

  void clear_programs();
  std::vector<std::uint32_t> memory_marks() const;
  void clear_programs(const std::vector<std::uint32_t>& marks);

  std::uint64_t link_transfers() const;
  int peak_threads() const;
  std::size_t peak_memory() const { return peak_memory_; }
  ConservationReport conservation() const;
  bool quiescent() const;
  void check_invariants() const;

 private:
  std::size_t index(Coord c) const { return static_cast<std::size_t>(c.y) * cfg_.width + c.x; }
  template <class F>
  int for_each_tile(F&& f);

  FabricConfig cfg_;
  std::vector<Tile> tiles_;
  std::uint64_t cycle_ = 0;
  Schedule schedule_;
  ExecPolicy policy_ = ExecPolicy::Serial;
  bool checked_ = false;
  std::ostream* trace_ = nullptr;
  int last_progress_ = 0;
  std::size_t peak_memory_ = 0;
};

/// Build a fabric; rejects zero dimensions.
Fabric build_fabric(const FabricConfig& cfg);

}  // namespace wse
