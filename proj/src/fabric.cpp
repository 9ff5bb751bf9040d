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

#include "wse/fabric.hpp"

#include <algorithm>
#include <bit>
#include <exception>
#include <span>
#include <sstream>

namespace wse {

std::string_view to_string(Dir d) {
  switch (d) {
    case Dir::North: return "N";
    case Dir::South: return "S";
    case Dir::East: return "E";
    case Dir::West: return "W";
    case Dir::Core: return "C";
  }
  return "?";
}

void FabricConfig::validate() const {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("fabric dimensions must be at least 1x1, got " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  if (memory_per_tile < 2 || memory_per_tile % 2 != 0) throw std::invalid_argument("memory_per_tile must be even");
  if (max_threads_per_tile < 1 || max_threads_per_tile > kMaxThreadSlots) {
    throw std::invalid_argument("max_threads_per_tile out of range");
  }
  if (rx_queue_depth < 1 || rx_queue_depth > kMaxRxDepth) throw std::invalid_argument("rx_queue_depth out of range");
  if (link_latency != 1) throw std::invalid_argument("only one-cycle links are modeled");
}

namespace {

/// Strided tensors up to this length reserve element by element, so that
/// interleaved columns do not conflict.
constexpr std::uint32_t kMaxStridedReservations = 256;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

OpClass op_class(TensorOp op) {
  switch (op) {
    case TensorOp::Move: return OpClass::Move;
    case TensorOp::Mul: return OpClass::Mul;
    case TensorOp::AddInto: return OpClass::Add;
    case TensorOp::Fmac: return OpClass::Fmac;
  }
  return OpClass::Move;
}

std::uint32_t descriptor_length(const TensorDescriptor& d) {
  if (auto* m = std::get_if<MemoryTensor>(&d)) return m->length;
  if (auto* f = std::get_if<FabricTensor>(&d)) return f->length;
  if (auto* q = std::get_if<FifoTensor>(&d)) return q->length;
  return 0;
}

bool overlaps(const Reservation& a, const Reservation& b) { return a.begin < b.end && b.begin < a.end; }

bool compatible(const Reservation& a, const Reservation& b) {
  using K = Reservation::Kind;
  if (a.kind == K::Read && b.kind == K::Read) return true;
  // element-interleaved accumulation into the same tensor is race-free
  return a.kind == K::Accumulate && b.kind == K::Accumulate;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tile
// ---------------------------------------------------------------------------

Tile::Tile(const FabricConfig& cfg, Coord c, PortMask neighbors)
    : cfg_(cfg),
      coord_(c),
      neighbors_(neighbors),
      budget_words_(static_cast<std::uint32_t>(cfg.memory_per_tile / 2)),
      threads_(static_cast<std::size_t>(cfg.max_threads_per_tile)) {}

int Tile::neighbor_count() const { return std::popcount(static_cast<unsigned>(neighbors_)); }

std::uint32_t Tile::allocate(std::uint32_t words, std::string_view what) {
  if (std::size_t{top_} + words > budget_words_) {
    std::ostringstream os;
    os << "tile (" << coord_.x << "," << coord_.y << "): allocating " << words << " words for " << what
       << " exceeds the " << memory_budget() << "-byte budget (" << memory_used() << " bytes in use)";
    throw MemoryBudgetExceeded(os.str());
  }
  const std::uint32_t base = top_;
  top_ += words;
  // backing store grows on demand so large idle grids stay cheap
  if (mem_.size() < top_) mem_.resize(top_, 0);
  return base;
}

MemoryTensor Tile::allocate_tensor(std::uint32_t length, Format f, std::string_view what) {
  const auto words = length * static_cast<std::uint32_t>(format_words(f));
  return MemoryTensor{allocate(words, what), length, 1, f};
}

void Tile::release_to(std::uint32_t mark) {
  if (mark > top_) throw std::invalid_argument("release_to above the allocation top");
  top_ = mark;
}

std::uint64_t Tile::load_bits(Format f, std::uint32_t addr) const {
  std::uint64_t bits = 0;
  const int n = format_words(f);
  for (int k = 0; k < n; ++k) {
    const std::uint32_t a = addr + static_cast<std::uint32_t>(k);
    if (a < mem_.size()) bits |= std::uint64_t{mem_[a]} << (16 * k);
  }
  return bits;
}

double Tile::load(Format f, std::uint32_t addr) const {
  if (f == Format::Binary16 && addr < mem_.size()) return fp16::to_double(mem_[addr]);
  return ScalarValue{f, load_bits(f, addr)}.value();
}

void Tile::store(Format f, std::uint32_t addr, double v) {
  if (f == Format::Binary16 && addr < mem_.size()) {
    mem_[addr] = fp16::from_double(v);
    return;
  }
  const std::uint64_t bits = ScalarValue::from_double(f, v).bits;
  const int n = format_words(f);
  if (mem_.size() < addr + static_cast<std::uint32_t>(n)) mem_.resize(addr + static_cast<std::uint32_t>(n), 0);
  for (int k = 0; k < n; ++k) {
    mem_[addr + static_cast<std::uint32_t>(k)] = static_cast<std::uint16_t>(bits >> (16 * k));
  }
}

std::vector<double> Tile::read(const MemoryTensor& t) const {
  std::vector<double> out(t.length);
  for (std::uint32_t i = 0; i < t.length; ++i) out[i] = load(t.format, t.address(i));
  return out;
}

void Tile::write(const MemoryTensor& t, const std::vector<double>& values) {
  if (values.size() != t.length) throw std::invalid_argument("Tile::write: length mismatch");
  for (std::uint32_t i = 0; i < t.length; ++i) store(t.format, t.address(i), values[i]);
}

int Tile::add_task(std::unique_ptr<Task> task) {
  tasks_.push_back(TaskSlot{std::move(task), false, {}, {}});
  return static_cast<int>(tasks_.size()) - 1;
}

void Tile::activate(int task) {
  tasks_.at(static_cast<std::size_t>(task)).activated = true;
}

void Tile::bind_channel(int task, Channel c) { tasks_.at(static_cast<std::size_t>(task)).channels.push_back(c); }

int Tile::add_fifo(std::uint32_t capacity, Format f, int activates_task) {
  FifoState q;
  q.capacity = capacity;
  q.format = f;
  q.base = allocate(capacity * static_cast<std::uint32_t>(format_words(f)), "fifo");
  q.activates = activates_task;
  fifos_.push_back(q);
  const int id = static_cast<int>(fifos_.size()) - 1;
  if (activates_task >= 0) tasks_.at(static_cast<std::size_t>(activates_task)).fifos.push_back(id);
  return id;
}

void Tile::subscribe(Channel c, int readers) {
  if (readers < 0 || readers > kMaxRxReaders) throw std::invalid_argument("subscribe: reader count out of range");
  rx_readers_[c] = static_cast<std::uint8_t>(readers);
}

std::vector<Reservation> Tile::reservations_for(const Instruction& ins, std::string& why) const {
  std::vector<Reservation> out;
  out.reserve(3);
  auto add = [&](const TensorDescriptor& d, Reservation::Kind k) {
    if (auto* m = std::get_if<MemoryTensor>(&d)) {
      if (m->length == 0) return;
      if (m->stride > 1 && m->length <= kMaxStridedReservations) {
        const auto w = static_cast<std::uint32_t>(format_words(m->format));
        for (std::uint32_t i = 0; i < m->length; ++i) out.push_back({m->address(i), m->address(i) + w, k});
      } else {
        out.push_back({m->base, m->end_address(), k});
      }
    }
  };
  const bool accumulates = ins.op == TensorOp::AddInto || ins.op == TensorOp::Fmac;
  add(ins.dst, accumulates ? Reservation::Kind::Accumulate : Reservation::Kind::Write);
  add(ins.a, Reservation::Kind::Read);
  add(ins.b, Reservation::Kind::Read);
  for (const auto& r : out) {
    if (r.end > budget_words_) why = "operand outside tile memory";
  }
  return out;
}

void Tile::check_races(const std::vector<Reservation>& mine, int self) const {
  for (std::size_t s = 0; s < threads_.size(); ++s) {
    if (!threads_[s] || static_cast<int>(s) == self) continue;
    for (const auto& theirs : threads_[s]->reservations) {
      for (const auto& r : mine) {
        if (overlaps(r, theirs) && !compatible(r, theirs)) {
          std::ostringstream os;
          os << "tile (" << coord_.x << "," << coord_.y << "): words [" << r.begin << "," << r.end
             << ") overlap a region held by live thread " << s << " [" << theirs.begin << "," << theirs.end << ")";
          throw MemoryRaceDetected(os.str());
        }
      }
    }
  }
}

int Tile::spawn_thread(Instruction ins) {
  if (live_threads_ >= cfg_.max_threads_per_tile) {
    std::ostringstream os;
    os << "tile (" << coord_.x << "," << coord_.y << "): cannot start thread " << live_threads_ + 1 << "; limit is "
       << cfg_.max_threads_per_tile;
    throw ThreadLimitExceeded(os.str());
  }
  std::string why;
  auto res = reservations_for(ins, why);
  if (!why.empty()) throw SimulationError(why);
  check_races(res, -1);

  std::size_t slot = threads_.size();
  if (ins.thread && *ins.thread >= 0 && static_cast<std::size_t>(*ins.thread) < threads_.size() &&
      !threads_[static_cast<std::size_t>(*ins.thread)]) {
    slot = static_cast<std::size_t>(*ins.thread);
  } else {
    for (std::size_t s = 0; s < threads_.size(); ++s) {
      if (!threads_[s]) {
        slot = s;
        break;
      }
    }
  }
  ThreadState t;
  t.length = descriptor_length(ins.dst);
  t.ins = std::move(ins);
  t.reservations = std::move(res);
  threads_[slot] = std::move(t);
  ++live_threads_;
  peak_threads_ = std::max(peak_threads_, live_threads_);
  ++elements_;  // launching counts as progress
  return static_cast<int>(slot);
}

void Tile::issue(Instruction ins) {
  std::string why;
  auto res = reservations_for(ins, why);
  if (!why.empty()) throw SimulationError(why);
  check_races(res, -1);
  ThreadState t;
  t.length = descriptor_length(ins.dst);
  t.ins = std::move(ins);
  main_queue_.push_back(std::move(t));
  ++elements_;
}

void Tile::clear_program(std::uint32_t mark) {
  tasks_.clear();
  fifos_.clear();
  for (auto& t : threads_) t.reset();
  live_threads_ = 0;
  main_queue_.clear();
  for (int c = 0; c < kChannels; ++c) {
    for (auto& q : rx_[static_cast<std::size_t>(c)]) {
      destroyed_[static_cast<std::size_t>(c)] += q.count;
      q = RxQueue{};
    }
    rx_readers_[static_cast<std::size_t>(c)] = 0;
  }
  finish_countdown_ = -1;
  finished_ = false;
  debt_ = Budget{0, 0, 0};
  release_to(mark);
}

void Tile::finish_after(int delay) {
  if (delay <= 0) {
    finished_ = true;
  } else {
    finish_countdown_ = delay;
  }
  ++elements_;
}

bool Tile::rx_available(Channel c, int reader) const {
  return rx_[c][static_cast<std::size_t>(reader)].count > 0;
}

std::uint64_t Tile::rx_peek(Channel c, int reader) const {
  const auto& q = rx_[c][static_cast<std::size_t>(reader)];
  if (q.count == 0) throw SimulationError("rx_peek on empty queue");
  return q.buf[q.head];
}

std::uint64_t Tile::rx_pop(Channel c, int reader) {
  auto& q = rx_[c][static_cast<std::size_t>(reader)];
  if (q.count == 0) throw SimulationError("rx_pop on empty queue");
  const std::uint64_t v = q.buf[q.head];
  q.head = static_cast<std::uint8_t>((q.head + 1) % kMaxRxDepth);
  --q.count;
  ++destroyed_[c];
  ++elements_;
  trace("consume", c, v);
  return v;
}

bool Tile::targets_have_space(PortMask targets, Channel c) const {
  for (int p = 0; p < kLinkPorts; ++p) {
    if (!(targets & (1u << p))) continue;
    if (!(neighbors_ & (1u << p))) {
      std::ostringstream os;
      os << "tile (" << coord_.x << "," << coord_.y << "): channel " << int(c) << " routed off the fabric edge toward "
         << to_string(static_cast<Dir>(p));
      throw RoutingError(os.str());
    }
    if (out_occ_[static_cast<std::size_t>(p)] & (1u << c)) return false;
  }
  if (targets & port_bit(Dir::Core)) {
    const int readers = rx_readers_[c];
    if (readers == 0) {
      std::ostringstream os;
      os << "tile (" << coord_.x << "," << coord_.y << "): word on channel " << int(c) << " has no core consumer";
      throw RoutingError(os.str());
    }
    for (int r = 0; r < readers; ++r) {
      if (rx_[c][static_cast<std::size_t>(r)].count >= cfg_.rx_queue_depth) return false;
    }
  }
  return true;
}

void Tile::place(PortMask targets, Channel c, std::uint64_t bits, const char* event) {
  for (int p = 0; p < kLinkPorts; ++p) {
    if (!(targets & (1u << p))) continue;
    out_val_[static_cast<std::size_t>(p)][c] = bits;
    out_occ_[static_cast<std::size_t>(p)] |= static_cast<std::uint16_t>(1u << c);
    ++created_[c];
  }
  if (targets & port_bit(Dir::Core)) {
    for (int r = 0; r < rx_readers_[c]; ++r) {
      auto& q = rx_[c][static_cast<std::size_t>(r)];
      q.buf[(q.head + q.count) % kMaxRxDepth] = bits;
      ++q.count;
      ++created_[c];
    }
  }
  trace(event, c, bits);
}

bool Tile::try_inject(Channel c, std::uint64_t bits) {
  const PortMask targets = router.forward_set(Dir::Core, c);
  if (targets == 0) {
    std::ostringstream os;
    os << "tile (" << coord_.x << "," << coord_.y << "): no route for core injection on channel " << int(c);
    throw RoutingError(os.str());
  }
  if (!targets_have_space(targets, c)) return false;
  place(targets, c, bits, "inject");
  ++elements_;
  return true;
}

bool Tile::accept(Dir in, Channel c, std::uint64_t bits) {
  const PortMask targets = router.forward_set(in, c);
  if (targets == 0) {
    std::ostringstream os;
    os << "tile (" << coord_.x << "," << coord_.y << "): no route for channel " << int(c) << " arriving from "
       << to_string(in);
    throw RoutingError(os.str());
  }
  if (!targets_have_space(targets, c)) return false;
  place(targets, c, bits, (targets & port_bit(Dir::Core)) ? "deliver" : "hop");
  ++destroyed_[c];
  return true;
}

int Tile::pop_links() {
  int moved = 0;
  link_words_this_cycle_.fill(0);
  for (int p = 0; p < kLinkPorts; ++p) {
    auto& reg = reg_[static_cast<std::size_t>(p)];
    auto& occ = out_occ_[static_cast<std::size_t>(p)];
    if (reg.full || occ == 0) continue;
    // round-robin over channels starting at the pointer
    const unsigned start = rr_[static_cast<std::size_t>(p)];
    const unsigned rotated = ((unsigned{occ} >> start) | (unsigned{occ} << (kChannels - start))) & 0xffffu;
    const unsigned ch = (start + static_cast<unsigned>(std::countr_zero(rotated))) % kChannels;
    reg.full = true;
    reg.ch = static_cast<Channel>(ch);
    reg.bits = out_val_[static_cast<std::size_t>(p)][ch];
    occ = static_cast<std::uint16_t>(occ & ~(1u << ch));
    rr_[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>((ch + 1) % kChannels);
    ++moved;
  }
  return moved;
}

bool Tile::ready(const TaskSlot& t) const {
  if (t.activated) return true;
  for (int f : t.fifos) {
    if (fifos_[static_cast<std::size_t>(f)].count > 0) return true;
  }
  for (Channel c : t.channels) {
    if (rx_[c][0].count > 0) return true;
  }
  return false;
}

int Tile::schedule_task() {
  if (!main_queue_.empty() || tasks_.empty()) return 0;
  // FIFO-activated tasks first, then activated or data-triggered ones
  std::vector<int> fifo_ready;
  std::vector<int> other_ready;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto& t = tasks_[i];
    if (!ready(t)) continue;
    bool by_fifo = false;
    for (int f : t.fifos) by_fifo |= fifos_[static_cast<std::size_t>(f)].count > 0;
    (by_fifo ? fifo_ready : other_ready).push_back(static_cast<int>(i));
  }
  const auto& pool = fifo_ready.empty() ? other_ready : fifo_ready;
  if (pool.empty()) return 0;
  std::size_t pick = 0;
  if (seeded_ && pool.size() > 1) pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng_);
  auto& slot = tasks_[static_cast<std::size_t>(pool[pick])];
  slot.activated = false;
  const auto before = elements_;
  slot.task->run(*this);
  return elements_ != before ? 1 : 0;
}

bool Tile::source_ready(const TensorDescriptor& d, std::uint32_t, bool rx_used) const {
  if (std::holds_alternative<std::monostate>(d) || std::holds_alternative<MemoryTensor>(d)) return true;
  if (auto* f = std::get_if<FabricTensor>(&d)) return !rx_used && rx_available(f->channel, f->reader);
  if (auto* q = std::get_if<FifoTensor>(&d)) return fifos_[static_cast<std::size_t>(q->fifo)].count > 0;
  return false;
}

double Tile::fetch(const TensorDescriptor& d, std::uint32_t i) {
  if (auto* m = std::get_if<MemoryTensor>(&d)) return load(m->format, m->address(i));
  if (auto* f = std::get_if<FabricTensor>(&d)) return ScalarValue{f->format, rx_pop(f->channel, f->reader)}.value();
  if (auto* q = std::get_if<FifoTensor>(&d)) {
    auto& fifo = fifos_[static_cast<std::size_t>(q->fifo)];
    const double v = load(fifo.format, fifo.base + fifo.head * static_cast<std::uint32_t>(format_words(fifo.format)));
    fifo.head = (fifo.head + 1) % fifo.capacity;
    --fifo.count;
    return v;
  }
  return 0.0;
}

namespace {

int read_words(const TensorDescriptor& d, const std::vector<FifoState>& fifos) {
  if (auto* m = std::get_if<MemoryTensor>(&d)) return format_words(m->format);
  if (auto* q = std::get_if<FifoTensor>(&d)) return format_words(fifos[static_cast<std::size_t>(q->fifo)].format);
  return 0;
}

}  // namespace

int Tile::service(ThreadState& t, Budget& budget) {
  auto& ins = t.ins;
  int processed = 0;
  bool rx_a = false;
  bool rx_b = false;
  bool tx = false;

  // discard leading words of a fabric source
  auto skip_leading = [&](const TensorDescriptor& d, bool& used) {
    if (auto* f = std::get_if<FabricTensor>(&d)) {
      if (t.skipped < f->skip && !used && rx_available(f->channel, f->reader)) {
        rx_pop(f->channel, f->reader);
        ++t.skipped;
        used = true;
      }
      return t.skipped >= f->skip;
    }
    return true;
  };
  if (!skip_leading(ins.a, rx_a)) return processed;

  const OpClass cls = op_class(ins.op);
  const int cost = RateTable::cost_units(cls, ins.mode);
  const bool reads_dst = ins.op == TensorOp::AddInto || ins.op == TensorOp::Fmac;

  while (t.done < t.length) {
    if (cost > 0 && budget.units <= 0) break;
    int reads = read_words(ins.a, fifos_) + read_words(ins.b, fifos_) + (reads_dst ? read_words(ins.dst, fifos_) : 0);
    int writes = 0;
    if (auto* m = std::get_if<MemoryTensor>(&ins.dst)) writes = format_words(m->format);
    if (auto* q = std::get_if<FifoTensor>(&ins.dst)) writes = format_words(fifos_[static_cast<std::size_t>(q->fifo)].format);
    if ((reads > 0 && budget.read <= 0) || (writes > 0 && budget.write <= 0)) break;

    const bool a_ok = source_ready(ins.a, t.done, rx_a);
    const bool b_ok = source_ready(ins.b, t.done, rx_b);
    if (!a_ok || !b_ok) {
      if (ins.drain) {
        if (auto* q = std::get_if<FifoTensor>(&ins.a); q && fifos_[static_cast<std::size_t>(q->fifo)].count == 0) {
          t.length = t.done;  // ran dry; the next activation resumes
        }
      }
      break;
    }

    // destination space
    double dst_old = 0.0;
    std::uint32_t dst_addr = 0;
    if (auto* m = std::get_if<MemoryTensor>(&ins.dst)) {
      dst_addr = m->address(t.done);
      if (reads_dst) dst_old = load(m->format, dst_addr);
    } else if (auto* f = std::get_if<FabricTensor>(&ins.dst)) {
      if (tx || !targets_have_space(router.forward_set(Dir::Core, f->channel), f->channel)) break;
    } else if (auto* q = std::get_if<FifoTensor>(&ins.dst)) {
      const auto& fifo = fifos_[static_cast<std::size_t>(q->fifo)];
      if (fifo.count >= fifo.capacity) break;
    }

    const double va = fetch(ins.a, t.done);
    if (std::holds_alternative<FabricTensor>(ins.a)) rx_a = true;
    const double vb = std::holds_alternative<std::monostate>(ins.b) ? 0.0 : fetch(ins.b, t.done);
    if (std::holds_alternative<FabricTensor>(ins.b)) rx_b = true;

    double v = va;
    switch (ins.op) {
      case TensorOp::Move: v = va; break;
      case TensorOp::Mul: v = arith::mul(va, vb, ins.mode); break;
      case TensorOp::AddInto: v = arith::add(dst_old, va, ins.mode); break;
      case TensorOp::Fmac: v = arith::fmac(dst_old, va, vb, ins.mode); break;
    }

    if (auto* m = std::get_if<MemoryTensor>(&ins.dst)) {
      store(m->format, dst_addr, v);
      if (order_log_on_ && ins.term >= 0) order_log_[dst_addr].push_back(static_cast<std::int8_t>(ins.term));
    } else if (auto* f = std::get_if<FabricTensor>(&ins.dst)) {
      try_inject(f->channel, ScalarValue::from_double(f->format, v).bits);
      tx = true;
    } else if (auto* q = std::get_if<FifoTensor>(&ins.dst)) {
      auto& fifo = fifos_[static_cast<std::size_t>(q->fifo)];
      const std::uint32_t slot = (fifo.head + fifo.count) % fifo.capacity;
      store(fifo.format, fifo.base + slot * static_cast<std::uint32_t>(format_words(fifo.format)), v);
      ++fifo.count;
    }

    budget.units -= cost;
    budget.read -= reads;
    budget.write -= writes;
    ++t.done;
    ++processed;
    ++elements_;
  }
  return processed;
}

int Tile::tick_core() {
  const auto before = elements_;
  if (finish_countdown_ > 0) {
    if (--finish_countdown_ == 0) {
      finished_ = true;
      finish_countdown_ = -1;
    }
    ++elements_;
  }

  schedule_task();

  Budget budget{RateTable::kUnitsPerCycle + debt_.units, cfg_.words_per_cycle_read + debt_.read,
                cfg_.words_per_cycle_write + debt_.write};

  // consumers: -1 is the main thread, otherwise a background slot
  std::array<int, kMaxThreadSlots + 1> slots;
  std::size_t count = 0;
  if (!main_queue_.empty()) slots[count++] = -1;
  for (std::size_t s = 0; s < threads_.size(); ++s) {
    if (threads_[s]) slots[count++] = static_cast<int>(s);
  }
  const std::span<int> order(slots.data(), count);
  if (seeded_ && count > 1) {
    std::shuffle(order.begin(), order.end(), rng_);
  } else {
    // least progress first keeps the incoming streams balanced; insertion
    // sort is stable and the main thread, when present, stays in front
    const auto done = [this](int s) { return threads_[static_cast<std::size_t>(s)]->done; };
    for (std::size_t i = order.empty() || order[0] >= 0 ? 1 : 2; i < count; ++i) {
      const int v = order[i];
      std::size_t j = i;
      while (j > 0 && order[j - 1] >= 0 && done(v) < done(order[j - 1])) {
        order[j] = order[j - 1];
        --j;
      }
      order[j] = v;
    }
  }

  for (int who : order) {
    if (who < 0) {
      while (!main_queue_.empty()) {
        service(main_queue_.front(), budget);
        auto& front = main_queue_.front();
        if (front.done < front.length) break;
        auto done_cb = std::move(front.ins.on_complete);
        const auto n = front.done;
        main_queue_.erase(main_queue_.begin());
        ++elements_;
        if (done_cb) done_cb(n);
      }
    } else {
      auto& slot = threads_[static_cast<std::size_t>(who)];
      if (!slot) continue;
      service(*slot, budget);
      if (slot->done >= slot->length) {
        auto done_cb = std::move(slot->ins.on_complete);
        const auto n = slot->done;
        slot.reset();
        --live_threads_;
        ++elements_;
        if (done_cb) done_cb(n);
      }
    }
  }
  debt_ = Budget{std::min(0, budget.units), std::min(0, budget.read), std::min(0, budget.write)};
  return static_cast<int>(elements_ - before);
}

void Tile::enable_order_log(bool on) {
  order_log_on_ = on;
  order_log_.assign(on ? budget_words_ : 0, {});
}

const std::vector<std::int8_t>& Tile::order_at(std::uint32_t addr) const {
  static const std::vector<std::int8_t> empty;
  return addr < order_log_.size() ? order_log_[addr] : empty;
}

bool Tile::idle() const {
  if (live_threads_ > 0 || !main_queue_.empty() || finish_countdown_ > 0) return false;
  for (auto occ : out_occ_) {
    if (occ) return false;
  }
  for (const auto& r : reg_) {
    if (r.full) return false;
  }
  for (const auto& t : tasks_) {
    if (ready(t)) return false;
  }
  return true;
}

std::string Tile::describe() const {
  std::ostringstream os;
  os << "tile (" << coord_.x << "," << coord_.y << "): threads=" << live_threads_ << " main_queue=" << main_queue_.size()
     << " finished=" << finished_;
  for (std::size_t s = 0; s < threads_.size(); ++s) {
    if (threads_[s]) os << " [thr" << s << " " << threads_[s]->done << "/" << threads_[s]->length << "]";
  }
  for (std::size_t f = 0; f < fifos_.size(); ++f) os << " fifo" << f << "=" << fifos_[f].count;
  for (int c = 0; c < kChannels; ++c) {
    for (int r = 0; r < rx_readers_[static_cast<std::size_t>(c)]; ++r) {
      if (rx_[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)].count) {
        os << " rx" << c << "." << r << "=" << int(rx_[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)].count);
      }
    }
  }
  for (int p = 0; p < kLinkPorts; ++p) {
    if (out_occ_[static_cast<std::size_t>(p)]) os << " out" << to_string(static_cast<Dir>(p)) << "=0x" << std::hex
                                                << out_occ_[static_cast<std::size_t>(p)] << std::dec;
    if (reg_[static_cast<std::size_t>(p)].full) os << " reg" << to_string(static_cast<Dir>(p));
  }
  return os.str();
}

void Tile::trace(const char* event, Channel c, std::uint64_t bits) {
  if (!trace_) return;
  *trace_ << cycle_ << ',' << coord_.x << ',' << coord_.y << ',' << event << ',' << int(c) << ",0x" << std::hex << bits
          << std::dec << '\n';
}

// ---------------------------------------------------------------------------
// Fabric
// ---------------------------------------------------------------------------

bool ConservationReport::balanced() const {
  for (int c = 0; c < kChannels; ++c) {
    const auto i = static_cast<std::size_t>(c);
    if (created[i] < destroyed[i] || created[i] - destroyed[i] != in_flight[i]) return false;
  }
  return true;
}

Fabric::Fabric(const FabricConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  tiles_.reserve(static_cast<std::size_t>(cfg_.width) * static_cast<std::size_t>(cfg_.height));
  for (int y = 0; y < cfg_.height; ++y) {
    for (int x = 0; x < cfg_.width; ++x) {
      PortMask nb = 0;
      if (y > 0) nb |= port_bit(Dir::North);
      if (y + 1 < cfg_.height) nb |= port_bit(Dir::South);
      if (x + 1 < cfg_.width) nb |= port_bit(Dir::East);
      if (x > 0) nb |= port_bit(Dir::West);
      tiles_.emplace_back(cfg_, Coord{x, y}, nb);
    }
  }
  set_schedule(Schedule::deterministic());
}

Fabric build_fabric(const FabricConfig& cfg) { return Fabric(cfg); }

void Fabric::set_schedule(Schedule s) {
  schedule_ = s;
  for (std::size_t i = 0; i < tiles_.size(); ++i) {
    tiles_[i].seeded_ = s.kind == Schedule::Kind::Seeded;
    tiles_[i].rng_.seed(splitmix64(s.seed ^ splitmix64(i + 1)));
  }
}

void Fabric::set_trace(std::ostream* out) {
  trace_ = out;
  for (auto& t : tiles_) t.trace_ = out;
}

template <class F>
int Fabric::for_each_tile(F&& f) {
  const auto n = static_cast<std::int64_t>(tiles_.size());
  int progress = 0;
  if (policy_ == ExecPolicy::Parallel && trace_ == nullptr && n > 1) {
    std::exception_ptr error;
#pragma omp parallel for schedule(static) reduction(+ : progress)
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        progress += f(tiles_[static_cast<std::size_t>(i)]);
      } catch (...) {
#pragma omp critical(wse_fabric_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (auto& t : tiles_) progress += f(t);
  }
  return progress;
}

void Fabric::step() {
  ++cycle_;
  for (auto& t : tiles_) t.cycle_ = cycle_;

  int progress = for_each_tile([](Tile& t) { return t.pop_links(); });

  progress += for_each_tile([this](Tile& t) {
    int moved = 0;
    for (int d = 0; d < kLinkPorts; ++d) {
      const Dir in = static_cast<Dir>(d);
      if (!(t.neighbors_ & port_bit(in))) continue;
      Tile& nb = tile(neighbor_of(t.coord_, in));
      auto& reg = nb.reg_[static_cast<std::size_t>(opposite(in))];
      if (!reg.full) continue;
      if (t.accept(in, reg.ch, reg.bits)) {
        reg.full = false;
        ++t.link_words_this_cycle_[static_cast<std::size_t>(d)];
        ++t.link_transfers_;
        ++moved;
      }
    }
    return moved;
  });

  progress += for_each_tile([](Tile& t) { return t.tick_core(); });
  last_progress_ = progress;

  for (const auto& t : tiles_) peak_memory_ = std::max(peak_memory_, t.memory_used());
  if (checked_) check_invariants();
}

std::uint64_t Fabric::run_until(const std::function<bool()>& done, std::uint64_t max_cycles) {
  const std::uint64_t start = cycle_;
  int stalled = 0;
  while (!done()) {
    if (cycle_ - start >= max_cycles) {
      throw DeadlockError("cycle limit of " + std::to_string(max_cycles) + " reached");
    }
    step();
    if (last_progress_ == 0) {
      if (++stalled >= 2 && !done()) {
        std::ostringstream os;
        os << "no tile made progress at cycle " << cycle_ << "; pending state:";
        int shown = 0;
        for (const auto& t : tiles_) {
          if (t.idle() && t.finished()) continue;
          os << "\n  " << t.describe();
          if (++shown == 8) break;
        }
        throw DeadlockError(os.str());
      }
    } else {
      stalled = 0;
    }
  }
  return cycle_ - start;
}

std::uint64_t Fabric::run_program(std::uint64_t max_cycles) {
  return run_until(
      [this] {
        for (const auto& t : tiles_) {
          if (!t.finished()) return false;
        }
        return true;
      },
      max_cycles);
}

std::vector<std::uint32_t> Fabric::memory_marks() const {
  std::vector<std::uint32_t> m;
  m.reserve(tiles_.size());
  for (const auto& t : tiles_) m.push_back(t.memory_mark());
  return m;
}

void Fabric::clear_programs(const std::vector<std::uint32_t>& marks) {
  for (std::size_t i = 0; i < tiles_.size(); ++i) tiles_[i].clear_program(marks[i]);
}

void Fabric::clear_programs() { clear_programs(memory_marks()); }

std::uint64_t Fabric::link_transfers() const {
  std::uint64_t n = 0;
  for (const auto& t : tiles_) n += t.link_transfers_;
  return n;
}

int Fabric::peak_threads() const {
  int p = 0;
  for (const auto& t : tiles_) p = std::max(p, t.peak_threads_);
  return p;
}

ConservationReport Fabric::conservation() const {
  ConservationReport r;
  for (const auto& t : tiles_) {
    for (int c = 0; c < kChannels; ++c) {
      const auto i = static_cast<std::size_t>(c);
      r.created[i] += t.created_[i];
      r.destroyed[i] += t.destroyed_[i];
      for (int p = 0; p < kLinkPorts; ++p) {
        if (t.out_occ_[static_cast<std::size_t>(p)] & (1u << c)) ++r.in_flight[i];
      }
      for (const auto& q : t.rx_[i]) r.in_flight[i] += q.count;
    }
    for (const auto& reg : t.reg_) {
      if (reg.full) ++r.in_flight[reg.ch];
    }
  }
  return r;
}

bool Fabric::quiescent() const {
  for (const auto& t : tiles_) {
    if (t.live_threads_ > 0 || !t.main_queue_.empty()) return false;
    for (auto occ : t.out_occ_) {
      if (occ) return false;
    }
    for (const auto& r : t.reg_) {
      if (r.full) return false;
    }
    for (const auto& ch : t.rx_) {
      for (const auto& q : ch) {
        if (q.count) return false;
      }
    }
  }
  return true;
}

void Fabric::check_invariants() const {
  for (const auto& t : tiles_) {
    if (t.live_threads_ > cfg_.max_threads_per_tile) {
      throw InvariantViolation(t.describe() + ": thread limit exceeded");
    }
    if (t.memory_used() > cfg_.memory_per_tile) throw InvariantViolation(t.describe() + ": memory budget exceeded");
    for (auto n : t.link_words_this_cycle_) {
      if (n > 1) throw InvariantViolation(t.describe() + ": more than one word per link per cycle");
    }
  }
  if (!conservation().balanced()) {
    throw InvariantViolation("word conservation violated at cycle " + std::to_string(cycle_));
  }
}

}  // namespace wse
