#pragma once

// Discrete-event network and client population.
//
// Each (owner, server) pair has a shaped link: a fluid processor-sharing
// server with a bounded packet queue, a propagation delay and a bandwidth
// that wanders around its mean. The owner is a client slot (dedicated
// topology) or a group of slots sharing one scaled link. Servers meter every
// response they send onto their peering link in 5-minute buckets.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "mums/config.hpp"
#include "mums/costsel.hpp"
#include "mums/domain.hpp"
#include "mums/estimator.hpp"
#include "mums/playback.hpp"
#include "mums/scheduler.hpp"
#include "mums/transport.hpp"

namespace mums::simnet {

using estimator::PathEstimate;
using transport::ChunkState;

enum class EventKind : std::uint8_t {
  RequestArrive,
  ResponseDepart,
  ResponseArrive,
  BandwidthChange,
  EpochTimer,
  ChunkDeadline,
  ClientArrive,
  ClientDepart,
  // internal plumbing
  LinkService,
  RequestTimeout,
  SelectionTimer,
  PacedSend,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::RequestArrive: return "RequestArrive";
    case EventKind::ResponseDepart: return "ResponseDepart";
    case EventKind::ResponseArrive: return "ResponseArrive";
    case EventKind::BandwidthChange: return "BandwidthChange";
    case EventKind::EpochTimer: return "EpochTimer";
    case EventKind::ChunkDeadline: return "ChunkDeadline";
    case EventKind::ClientArrive: return "ClientArrive";
    case EventKind::ClientDepart: return "ClientDepart";
    case EventKind::LinkService: return "LinkService";
    case EventKind::RequestTimeout: return "RequestTimeout";
    case EventKind::SelectionTimer: return "SelectionTimer";
    case EventKind::PacedSend: return "PacedSend";
  }
  return "?";
}

struct SimEvent {
  SimTime at;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::EpochTimer;
  std::uint32_t a = 0;  // client uid, link index or slot
  std::uint64_t b = 0;  // copy id or version
};

class EventQueue {
 public:
  void push(SimTime at, EventKind kind, std::uint32_t a = 0, std::uint64_t b = 0) {
    if (at < now_) throw std::logic_error("event scheduled in the past");
    heap_.push(SimEvent{at, next_seq_++, kind, a, b});
  }
  bool empty() const { return heap_.empty(); }
  const SimEvent& top() const { return heap_.top(); }
  SimEvent pop() {
    SimEvent e = heap_.top();
    heap_.pop();
    if (e.at < now_) throw std::logic_error("event queue went backwards");
    now_ = e.at;
    ++processed_;
    return e;
  }
  SimTime now() const { return now_; }
  std::uint64_t processed() const { return processed_; }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const SimEvent& x, const SimEvent& y) const {
      if (x.at != y.at) return x.at > y.at;
      return x.seq > y.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  SimTime now_{};
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
};

// ---------------------------------------------------------------------------
// Links

struct Transfer {
  std::uint64_t copy = 0;
  double remaining = 1.0;  // chunks
};

struct ShapedLink {
  Rate mean_bw{1.0};
  Rate current_bw{1.0};
  std::uint32_t queue_capacity = 50;  // packets
  std::uint32_t packets_per_chunk = 10;
  VariationMode variation_mode = VariationMode::Smooth;
  Duration prop_delay{};
  std::vector<Transfer> queue;
  SimTime last_update{};
  std::uint64_t version = 0;

  std::uint32_t queued_packets() const { return static_cast<std::uint32_t>(queue.size()) * packets_per_chunk; }
  bool admits_chunk() const { return queued_packets() + packets_per_chunk <= queue_capacity; }
};

/// Mean-reversion strength of the smooth random walk, per 1 s step.
inline constexpr double kSmoothReversion = 0.05;
inline constexpr double kSmoothStep = 0.10;
inline constexpr double kAbruptMeanInterval = 30.0;

inline double clamp_bw(double v, double mean) { return std::clamp(v, 0.5 * mean, 1.5 * mean); }

/// Draws the next bandwidth. Service must already be advanced to `now` by
/// the caller; this only changes current_bw.
inline ShapedLink vary_bandwidth(ShapedLink link, RngStream& rng, SimTime /*now*/) {
  const double m = link.mean_bw.value();
  const double cur = link.current_bw.value();
  switch (link.variation_mode) {
    case VariationMode::Smooth: {
      double step = kSmoothReversion * (m - cur) + rng.uniform(-1.0, 1.0) * kSmoothStep * m;
      step = std::clamp(step, -kSmoothStep * m, kSmoothStep * m);
      link.current_bw = Rate(clamp_bw(cur + step, m));
      break;
    }
    case VariationMode::Abrupt:
      link.current_bw = Rate(clamp_bw(rng.uniform(0.5 * m, 1.5 * m), m));
      break;
    case VariationMode::Fixed:
      break;
  }
  return link;
}

inline std::optional<Duration> next_variation_delay(VariationMode mode, RngStream& rng) {
  switch (mode) {
    case VariationMode::Smooth: return Duration::seconds(1.0);
    case VariationMode::Abrupt: return std::max(Duration::micros(1), Duration::seconds(rng.exponential(kAbruptMeanInterval)));
    case VariationMode::Fixed: return std::nullopt;
  }
  return std::nullopt;
}

/// Advances processor-sharing service to `now`.
inline void serve(ShapedLink& link, SimTime now) {
  if (now < link.last_update) throw std::logic_error("serve: time went backwards");
  if (!link.queue.empty()) {
    const double each = (now - link.last_update).secs() * link.current_bw.value() / static_cast<double>(link.queue.size());
    for (auto& t : link.queue) t.remaining -= each;
  }
  link.last_update = now;
}

inline std::optional<Duration> time_to_next_completion(const ShapedLink& link) {
  if (link.queue.empty() || link.current_bw.value() <= 0.0) return std::nullopt;
  double least = std::numeric_limits<double>::infinity();
  for (const auto& t : link.queue) least = std::min(least, t.remaining);
  const double secs = std::max(0.0, least) * static_cast<double>(link.queue.size()) / link.current_bw.value();
  return Duration(std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(secs * 1e6))));
}

struct PeeringLink {
  ServerId server;
  double capacity = std::numeric_limits<double>::infinity();
  costsel::TrafficLedger meter;
};

inline constexpr std::int64_t kBucketUs = 300'000'000;

inline PeeringLink meter_traffic(PeeringLink link, std::uint64_t bytes, SimTime at) {
  const auto idx = static_cast<std::size_t>(at.ticks() / kBucketUs);
  if (link.meter.buckets.size() <= idx) link.meter.buckets.resize(idx + 1, 0);
  link.meter.buckets[idx] += bytes;
  return link;
}

inline std::size_t bucket_count(double horizon_s) {
  return static_cast<std::size_t>(std::max<std::int64_t>(1, (Duration::seconds(horizon_s).us() + kBucketUs - 1) / kBucketUs));
}

// ---------------------------------------------------------------------------
// Trace

struct ClientReport {
  std::uint32_t client_id = 0;
  std::uint32_t slot = 0;
  std::uint32_t group = 0;
  std::vector<ServerId> servers;
  std::uint32_t total_chunks = 0;
  playback::QoeReport qoe;
  std::uint32_t exhausted = 0;  // chunks skipped after the retry limit
  std::uint32_t retries = 0;
  std::uint32_t duplicates = 0;
  double arrival_s = 0.0;
};

struct SimCounters {
  std::uint64_t events = 0;
  std::uint64_t requests_sent = 0;
  std::uint64_t responses_departed = 0;
  std::uint64_t responses_dropped = 0;
  std::uint64_t responses_arrived = 0;
  std::uint64_t wasted_copies = 0;  // arrived after the chunk was already terminal
  std::uint64_t timeouts = 0;
  std::uint64_t bandwidth_changes = 0;
  std::uint64_t bytes_departed = 0;
  std::uint64_t in_flight_at_end = 0;
  std::uint64_t clients_started = 0;
  std::uint64_t selection_solves = 0;
  std::uint64_t selection_failures = 0;
  /// Accepted completion-rate samples (chunks/s) and their sum.
  std::uint64_t rate_samples = 0;
  double rate_sample_sum = 0.0;
  /// Order-sensitive hashes of every bandwidth change and client arrival.
  std::uint64_t bandwidth_fingerprint = 0;
  std::uint64_t arrival_fingerprint = 0;
};

struct SimulationTrace {
  std::vector<ClientReport> clients;
  std::vector<costsel::TrafficLedger> ledgers;  // one per server
  SimCounters counters;
};

// ---------------------------------------------------------------------------
// Simulator

namespace detail {

inline std::uint64_t fold(std::uint64_t h, std::uint64_t v) {
  return mums::detail::mix64(h ^ (v + mums::detail::kGolden + (h << 6) + (h >> 2)));
}

inline std::uint64_t bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof u);
  return u;
}

struct Copy {
  std::uint32_t client = 0;
  std::uint32_t chunk = 0;
  std::uint32_t path = 0;
  std::uint32_t attempt = 0;
  SimTime sent{};
  bool duplicate = false;
  bool holds_slot = true;
  bool arrived = false;
  bool delivery_done = false;
  bool timer_done = false;
};

struct Client {
  std::uint32_t uid = 0;
  std::uint32_t slot = 0;
  std::uint32_t group = 0;
  bool active = false;
  SimTime arrival{};
  VideoSpec video;
  std::vector<ServerId> servers;
  std::vector<std::uint32_t> link_of;
  std::vector<PathEstimate> paths;
  std::vector<transport::SubflowState> subflows;
  /// Chunks handed to a subflow but not yet sent, with their release times.
  std::vector<std::deque<std::pair<std::uint32_t, SimTime>>> send_queue;
  std::vector<SimTime> wake_at;
  std::vector<transport::ChunkRecord> records;
  std::vector<ChunkState> states;
  std::set<std::uint32_t> pending;
  scheduler::SchedulerState sched;
  double demand_carry = 0.0;
  playback::PlaybackState play;
  std::uint64_t deadline_version = 0;
  std::optional<SimTime> armed_deadline;
  std::uint32_t exhausted = 0;
  std::uint32_t retries = 0;
  std::uint32_t duplicates = 0;
};

}  // namespace detail

class Simulation {
 public:
  Simulation(const ExperimentConfig& cfg, RngStream rng, std::ostream* trace = nullptr)
      : cfg_(cfg), rng_(rng), trace_(trace) {
    cfg_.validate();
    est_cfg_.smoothing = cfg_.smoothing;
    est_cfg_.initial_window = cfg_.initial_window;
    est_cfg_.max_window = cfg_.max_window;
    sched_cfg_.target_rate = Rate(cfg_.target_rate());
    sched_cfg_.epoch_length = Duration::seconds(cfg_.epoch_s);
    sched_cfg_.validate(Rate(cfg_.playback_rate));
    tcfg_.retry_limit = cfg_.retry_limit;
    tcfg_.min_rto = Duration::seconds(cfg_.min_rto_ms / 1000.0);
    tcfg_.initial_rto = Duration::seconds(cfg_.initial_rto_ms / 1000.0);
    horizon_ = SimTime::from_seconds(cfg_.horizon_s);
    build_links();
  }

  SimulationTrace run() {
    const std::uint32_t n_slots = cfg_.clients_concurrent;
    if (cfg_.selection == SelectionKind::Optimized && n_slots > 0) {
      region_arrivals_.assign(n_groups(), 0.0);
      expected_arrivals_.assign(n_groups(), initial_expected_arrivals());
      region_choice_.assign(n_groups(), {});
      // No ledger history exists before the first bucket closes; arrivals
      // until then fall back to round-robin.
      queue_.push(SimTime::from_seconds(cfg_.selection_period_s), EventKind::SelectionTimer);
    }
    for (std::uint32_t l = 0; l < links_.size(); ++l) {
      if (auto d = next_variation_delay(links_[l].variation_mode, link_rng_[l])) {
        queue_.push(SimTime{} + *d, EventKind::BandwidthChange, l);
      }
    }
    slot_rng_.reserve(n_slots);
    for (std::uint32_t s = 0; s < n_slots; ++s) {
      slot_rng_.push_back(rng_split(rng_, 0x2000000ULL + s));
      const double offset = slot_rng_.back().uniform(0.0, cfg_.arrival_spread_s);
      queue_.push(SimTime::from_seconds(offset), EventKind::ClientArrive, s);
    }

    while (!queue_.empty() && queue_.top().at <= horizon_) {
      const SimEvent e = queue_.pop();
      if (trace_) *trace_ << e.at.ticks() << ' ' << to_string(e.kind) << ' ' << e.a << ' ' << e.b << '\n';
      dispatch_event(e);
    }

    for (auto& c : clients_) {
      if (!c.active) continue;
      c.play = playback::truncate(c.play, horizon_);
      finish_client(c);
    }
    while (!queue_.empty()) {
      const SimEvent& e = queue_.top();
      if (e.kind == EventKind::ResponseArrive) ++out_.counters.in_flight_at_end;
      queue_.pop();
    }
    for (const auto& l : links_) out_.counters.in_flight_at_end += l.queue.size();

    const std::size_t nb = bucket_count(cfg_.horizon_s);
    for (auto& p : peering_) {
      p.meter.buckets.resize(nb, 0);
      out_.ledgers.push_back(p.meter);
    }
    out_.counters.events = queue_.processed();
    return std::move(out_);
  }

  const std::vector<ShapedLink>& links() const { return links_; }

 private:
  std::uint32_t n_owners() const {
    return cfg_.topology == Topology::GroupShared ? n_groups() : cfg_.clients_concurrent;
  }
  std::uint32_t n_groups() const { return (cfg_.clients_concurrent + cfg_.group_size - 1) / cfg_.group_size; }
  std::uint32_t link_index(std::uint32_t slot, ServerId s) const {
    const std::uint32_t owner = cfg_.topology == Topology::GroupShared ? slot / cfg_.group_size : slot;
    return owner * cfg_.n_servers + s.id;
  }

  double initial_expected_arrivals() const {
    // Clients per group divided by the mean session length in periods.
    double wsum = 0.0, dsum = 0.0;
    for (std::size_t i = 0; i < cfg_.video_durations_min.size(); ++i) {
      const double d = cfg_.video_durations_min[i];
      const double w = cfg_.video_weights.empty() ? 1.0 / d : cfg_.video_weights[i];
      wsum += w;
      dsum += w * d * 60.0;
    }
    const double mean_s = cfg_.video_chunks > 0 ? cfg_.video_chunks / cfg_.playback_rate : dsum / wsum;
    return std::min<double>(cfg_.group_size, cfg_.clients_concurrent) * cfg_.selection_period_s / mean_s;
  }

  void build_links() {
    const bool shared = cfg_.topology == Topology::GroupShared;
    const double scale = shared ? static_cast<double>(cfg_.group_size) : 1.0;
    const double mean = cfg_.target_rate() * cfg_.capacity_factor() * scale;
    const std::uint32_t n = n_owners() * cfg_.n_servers;
    for (std::uint32_t l = 0; l < n; ++l) {
      RngStream r = rng_split(rng_, 0x1000000ULL + l);
      ShapedLink link;
      link.mean_bw = Rate(mean);
      link.variation_mode = cfg_.variation;
      link.packets_per_chunk = cfg_.packets_per_chunk;
      link.queue_capacity = static_cast<std::uint32_t>(cfg_.queue_packets * scale);
      link.prop_delay = Duration::seconds(r.uniform(cfg_.prop_delay_min_ms, cfg_.prop_delay_max_ms) / 1000.0);
      switch (cfg_.variation) {
        case VariationMode::Smooth: link.current_bw = Rate(mean); break;
        case VariationMode::Abrupt: link.current_bw = Rate(clamp_bw(r.uniform(0.5 * mean, 1.5 * mean), mean)); break;
        case VariationMode::Fixed: link.current_bw = Rate(mean * cfg_.fixed_bandwidth_factor); break;
      }
      links_.push_back(link);
      link_rng_.push_back(r);
    }
    for (std::uint32_t s = 0; s < cfg_.n_servers; ++s) peering_.push_back(PeeringLink{ServerId{s}, std::numeric_limits<double>::infinity(), {}});
  }

  void dispatch_event(const SimEvent& e) {
    const SimTime now = e.at;
    switch (e.kind) {
      case EventKind::ClientArrive: on_client_arrive(e.a, now); break;
      case EventKind::ClientDepart: on_client_depart(e.a, now); break;
      case EventKind::EpochTimer: on_epoch(clients_[e.a], now); break;
      case EventKind::ChunkDeadline: on_deadline(clients_[e.a], e.b, now); break;
      case EventKind::RequestArrive: queue_.push(now, EventKind::ResponseDepart, 0, e.b); break;
      case EventKind::ResponseDepart: on_response_depart(e.b, now); break;
      case EventKind::LinkService: on_link_service(e.a, e.b, now); break;
      case EventKind::ResponseArrive: on_response_arrive(e.b, now); break;
      case EventKind::RequestTimeout: on_timeout(e.b, now); break;
      case EventKind::BandwidthChange: on_bandwidth_change(e.a, now); break;
      case EventKind::SelectionTimer: on_selection(now); break;
      case EventKind::PacedSend: on_paced_send(clients_[e.a], e.b, now); break;
    }
  }

  // -- links ----------------------------------------------------------------

  void reschedule(std::uint32_t l, SimTime now) {
    ShapedLink& link = links_[l];
    ++link.version;
    if (auto d = time_to_next_completion(link)) queue_.push(now + *d, EventKind::LinkService, l, link.version);
  }

  void on_bandwidth_change(std::uint32_t l, SimTime now) {
    serve(links_[l], now);
    links_[l] = vary_bandwidth(std::move(links_[l]), link_rng_[l], now);
    reschedule(l, now);
    ++out_.counters.bandwidth_changes;
    auto& fp = out_.counters.bandwidth_fingerprint;
    fp = detail::fold(fp, static_cast<std::uint64_t>(now.ticks()));
    fp = detail::fold(fp, l);
    fp = detail::fold(fp, detail::bits(links_[l].current_bw.value()));
    if (auto d = next_variation_delay(links_[l].variation_mode, link_rng_[l])) {
      queue_.push(now + *d, EventKind::BandwidthChange, l);
    }
  }

  void on_response_depart(std::uint64_t id, SimTime now) {
    auto& cp = copies_.at(id);
    const auto& c = clients_[cp.client];
    const ServerId srv = c.servers[cp.path];
    peering_[srv.id] = meter_traffic(std::move(peering_[srv.id]), cfg_.chunk_size, now);
    ++out_.counters.responses_departed;
    out_.counters.bytes_departed += cfg_.chunk_size;
    const std::uint32_t l = c.link_of[cp.path];
    ShapedLink& link = links_[l];
    serve(link, now);
    if (!link.admits_chunk()) {
      ++out_.counters.responses_dropped;
      cp.delivery_done = true;
      maybe_forget(id);
      return;
    }
    link.queue.push_back(Transfer{id, 1.0});
    reschedule(l, now);
  }

  void on_link_service(std::uint32_t l, std::uint64_t version, SimTime now) {
    ShapedLink& link = links_[l];
    if (version != link.version) return;
    serve(link, now);
    std::vector<Transfer> keep;
    keep.reserve(link.queue.size());
    for (const auto& t : link.queue) {
      if (t.remaining <= 1e-7) {
        queue_.push(now + link.prop_delay, EventKind::ResponseArrive, l, t.copy);
      } else {
        keep.push_back(t);
      }
    }
    link.queue.swap(keep);
    reschedule(l, now);
  }

  void maybe_forget(std::uint64_t id) {
    auto it = copies_.find(id);
    if (it != copies_.end() && it->second.delivery_done && it->second.timer_done) copies_.erase(it);
  }

  // -- clients --------------------------------------------------------------

  std::vector<ServerId> choose_servers(std::uint32_t slot, std::uint32_t group) {
    const std::uint32_t k = cfg_.effective_k();
    switch (cfg_.selection) {
      case SelectionKind::RoundRobin: return costsel::select_round_robin(rr_counter_, k, cfg_.n_servers);
      case SelectionKind::KClosest: {
        std::vector<std::pair<ServerId, Duration>> rtts;
        for (std::uint32_t s = 0; s < cfg_.n_servers; ++s) {
          const auto& link = links_[link_index(slot, ServerId{s})];
          rtts.emplace_back(ServerId{s}, link.prop_delay * 2);
        }
        return costsel::select_k_closest(std::move(rtts), k);
      }
      case SelectionKind::Optimized: {
        region_arrivals_[group] += 1.0;
        if (!region_choice_[group].empty()) return region_choice_[group];
        ++out_.counters.selection_failures;
        return costsel::select_round_robin(rr_counter_, k, cfg_.n_servers);
      }
    }
    return {};
  }

  void on_client_arrive(std::uint32_t slot, SimTime now) {
    const auto uid = static_cast<std::uint32_t>(clients_.size());
    clients_.emplace_back();
    detail::Client& c = clients_.back();
    c.uid = uid;
    c.slot = slot;
    c.group = slot / cfg_.group_size;
    c.active = true;
    c.arrival = now;
    c.video = video_choice(slot_rng_[slot], cfg_, uid);
    c.servers = choose_servers(slot, c.group);
    const Rate prior(cfg_.target_rate());
    for (ServerId s : c.servers) {
      c.link_of.push_back(link_index(slot, s));
      c.paths.push_back(estimator::make_estimate(s, prior, now, est_cfg_));
      transport::SubflowState sf;
      sf.server = s;
      c.subflows.push_back(sf);
    }
    c.send_queue.resize(c.servers.size());
    c.wake_at.assign(c.servers.size(), SimTime::max());
    c.records.resize(c.video.total_chunks);
    for (std::uint32_t i = 0; i < c.video.total_chunks; ++i) {
      c.records[i].chunk = ChunkId{c.video.video_id, i};
      c.pending.insert(c.pending.end(), i);
    }
    c.states.assign(c.video.total_chunks, ChunkState::Unrequested);
    c.sched = scheduler::make_state(sched_cfg_);
    c.play = playback::start_session(now);
    ++out_.counters.clients_started;
    auto& fp = out_.counters.arrival_fingerprint;
    fp = detail::fold(fp, slot);
    fp = detail::fold(fp, c.video.total_chunks);
    queue_.push(now, EventKind::EpochTimer, uid);
  }

  void on_client_depart(std::uint32_t uid, SimTime now) {
    detail::Client& c = clients_[uid];
    if (!c.active) return;
    finish_client(c);
    if (cfg_.churn && now < horizon_) queue_.push(now, EventKind::ClientArrive, c.slot);
  }

  void finish_client(detail::Client& c) {
    ClientReport r;
    r.client_id = c.uid;
    r.slot = c.slot;
    r.group = c.group;
    r.servers = c.servers;
    r.total_chunks = c.video.total_chunks;
    r.qoe = playback::report(c.play);
    r.exhausted = c.exhausted;
    r.retries = c.retries;
    r.duplicates = c.duplicates;
    r.arrival_s = c.arrival.secs();
    out_.clients.push_back(std::move(r));
    c.active = false;
    c.records = {};
    c.states = {};
    c.pending = {};
    c.send_queue = {};
    c.subflows = {};
  }

  std::uint32_t ahead(const detail::Client& c) const {
    const auto requested = c.video.total_chunks - static_cast<std::uint32_t>(c.pending.size());
    return requested > c.play.play_head ? requested - c.play.play_head : 0;
  }

  int window_room(const detail::Client& c, std::size_t i) const {
    const int cap = static_cast<int>(std::ceil(c.paths[i].window - 1e-9));
    return std::max(0, cap - static_cast<int>(c.subflows[i].outstanding.size()));
  }

  void on_epoch(detail::Client& c, SimTime now) {
    if (!c.active) return;
    for (auto& p : c.paths) p = estimator::advance_window(p, now, est_cfg_);

    for (auto& q : c.send_queue) {
      for (const auto& [idx, release] : q)
        if (c.states[idx] == ChunkState::Unrequested) c.pending.insert(idx);
      q.clear();
    }

    const std::size_t n = c.paths.size();
    std::vector<int> room(n);
    for (std::size_t i = 0; i < n; ++i) room[i] = window_room(c, i);
    const bool aggressive = cfg_.scheduler == SchedulerKind::Aggressive;
    const int cap_room = aggressive || cfg_.max_buffer_chunks == 0
                             ? static_cast<int>(c.pending.size())
                             : static_cast<int>(cfg_.max_buffer_chunks) - static_cast<int>(ahead(c));

    std::vector<std::pair<ServerId, int>> requests;
    bool paced = false;
    if (!c.pending.empty()) {
      if (aggressive) {
        requests = scheduler::aggressive_schedule(c.paths, sched_cfg_.epoch_length);
      } else if (cap_room > 0) {
        if (cfg_.scheduler == SchedulerKind::SunStar && c.play.phase != playback::Phase::PreBuffering) {
          paced = true;
          auto d = scheduler::schedule_epoch(std::move(c.sched), sched_cfg_, c.paths);
          c.sched = std::move(d.state);
          requests = std::move(d.requests);
          int left = cap_room;
          for (auto& [srv, k] : requests) {
            k = std::min(k, left);
            left -= k;
          }
        } else {
          // Buffer-driven fill queues one extra window per path so slots
          // freed mid-epoch are refilled without waiting for the next tick.
          for (std::size_t i = 0; i < n; ++i) room[i] += static_cast<int>(std::ceil(c.paths[i].window - 1e-9));
          requests = scheduler::min_rtt_schedule(c.paths, cap_room, room).counts;
        }
      }
    }

    if (!requests.empty()) {
      int total = 0;
      for (const auto& r : requests) total += std::max(0, r.second);
      std::vector<ChunkId> pend;
      for (auto it = c.pending.begin(); it != c.pending.end() && static_cast<int>(pend.size()) < total; ++it) {
        pend.push_back(ChunkId{c.video.video_id, *it});
      }
      const auto assigned = transport::dispatch(requests, pend, c.paths);
      std::vector<int> per_path(n, 0), seen(n, 0);
      for (const auto& [chunk, srv] : assigned) ++per_path[path_of(c, srv)];
      for (const auto& [chunk, srv] : assigned) {
        const std::size_t i = path_of(c, srv);
        SimTime release = now;
        if (paced) {
          // Spread an epoch's requests evenly over the epoch.
          release = now + Duration(sched_cfg_.epoch_length.us() * seen[i] / per_path[i]);
        }
        ++seen[i];
        c.pending.erase(chunk.index);
        c.send_queue[i].emplace_back(chunk.index, release);
      }
    }
    for (std::size_t i = 0; i < n; ++i) pump(c, i, now);
    opportunistic(c, now);
    queue_.push(now + sched_cfg_.epoch_length, EventKind::EpochTimer, c.uid);
  }

  std::size_t path_of(const detail::Client& c, ServerId s) const {
    for (std::size_t i = 0; i < c.servers.size(); ++i)
      if (c.servers[i] == s) return i;
    throw std::logic_error("path_of: server not assigned to client");
  }

  void pump(detail::Client& c, std::size_t i, SimTime now) {
    auto& q = c.send_queue[i];
    while (!q.empty() && q.front().second <= now && window_room(c, i) > 0) {
      const std::uint32_t idx = q.front().first;
      q.pop_front();
      if (c.states[idx] != ChunkState::Unrequested) continue;
      auto& rec = c.records[idx];
      rec.state = ChunkState::Outstanding;
      rec.assigned_server = c.servers[i];
      rec.request_time = now;
      ++rec.attempt;
      c.states[idx] = ChunkState::Outstanding;
      send_copy(c, i, idx, rec.attempt, false, now);
    }
    if (!q.empty() && q.front().second > now && q.front().second < c.wake_at[i]) {
      c.wake_at[i] = q.front().second;
      queue_.push(c.wake_at[i], EventKind::PacedSend, c.uid, i);
    }
  }

  void on_paced_send(detail::Client& c, std::size_t i, SimTime now) {
    if (!c.active) return;
    if (c.wake_at[i] <= now) c.wake_at[i] = SimTime::max();
    pump(c, i, now);
  }

  void send_copy(detail::Client& c, std::size_t i, std::uint32_t idx, std::uint32_t attempt, bool dup, SimTime now) {
    c.subflows[i].outstanding.insert(idx);
    const std::uint64_t id = next_copy_++;
    detail::Copy cp;
    cp.client = c.uid;
    cp.chunk = idx;
    cp.path = static_cast<std::uint32_t>(i);
    cp.attempt = attempt;
    cp.sent = now;
    cp.duplicate = dup;
    copies_.emplace(id, cp);
    ++out_.counters.requests_sent;
    queue_.push(now + links_[c.link_of[i]].prop_delay, EventKind::RequestArrive, c.uid, id);
    // Copies on one path share the bottleneck, so the timer scales with the
    // number of copies this one waits behind.
    const auto queued = static_cast<std::int64_t>(c.subflows[i].outstanding.size());
    queue_.push(now + c.subflows[i].timeout(tcfg_) * std::max<std::int64_t>(1, queued), EventKind::RequestTimeout, c.uid, id);
  }

  void release_slot(detail::Client& c, detail::Copy& cp) {
    if (!cp.holds_slot) return;
    cp.holds_slot = false;
    c.subflows[cp.path].outstanding.erase(cp.chunk);
  }

  void on_response_arrive(std::uint64_t id, SimTime now) {
    ++out_.counters.responses_arrived;
    auto& cp = copies_.at(id);
    cp.delivery_done = true;
    cp.arrived = true;
    detail::Client& c = clients_[cp.client];
    if (c.active) {
      release_slot(c, cp);
      auto& rec = c.records[cp.chunk];
      const auto out = transport::on_receive(rec, now, c.servers[cp.path], cp.sent);
      rec = out.record;
      if (out.accepted) {
        c.states[cp.chunk] = ChunkState::Received;
        c.paths[cp.path] = estimator::observe(c.paths[cp.path], *out.sample, est_cfg_);
        ++out_.counters.rate_samples;
        out_.counters.rate_sample_sum += out.sample->completion_rate.value();
        c.subflows[cp.path].record_completion((now - cp.sent).secs());
        update_playback(c, now);
      } else {
        ++out_.counters.wasted_copies;
      }
      if (c.active) pump(c, cp.path, now);
    }
    maybe_forget(id);
  }

  void on_timeout(std::uint64_t id, SimTime now) {
    auto& cp = copies_.at(id);
    cp.timer_done = true;
    detail::Client& c = clients_[cp.client];
    if (cp.arrived || !c.active) {
      maybe_forget(id);
      return;
    }
    ++out_.counters.timeouts;
    release_slot(c, cp);
    const std::size_t i = cp.path;
    c.subflows[i].record_timeout();
    const double elapsed = std::max((now - cp.sent).secs(), 1e-6);
    c.paths[i] = estimator::observe(c.paths[i], {c.servers[i], Rate(1.0 / elapsed), now}, est_cfg_);

    auto& rec = c.records[cp.chunk];
    const bool live = !cp.duplicate && rec.attempt == cp.attempt && rec.state == ChunkState::Outstanding;
    if (live) {
      const auto act = transport::on_timeout(rec, c.paths, cfg_.retry_limit, c.servers[i]);
      rec = act.record;
      if (act.kind == transport::TimeoutAction::Kind::Retry) {
        ++c.retries;
        rec.state = ChunkState::Unrequested;
        c.states[cp.chunk] = ChunkState::Unrequested;
        const std::size_t j = path_of(c, act.server);
        c.send_queue[j].emplace_front(cp.chunk, now);
        pump(c, j, now);
      } else {
        ++c.exhausted;
        c.states[cp.chunk] = ChunkState::Skipped;
        update_playback(c, now);
      }
    }
    if (c.active) pump(c, i, now);
    maybe_forget(id);
  }

  void on_deadline(detail::Client& c, std::uint64_t version, SimTime now) {
    if (!c.active || version != c.deadline_version) return;
    c.armed_deadline.reset();
    update_playback(c, now);
    if (c.active) opportunistic(c, now);
  }

  void update_playback(detail::Client& c, SimTime now) {
    const auto before = c.play.phase;
    c.play = playback::tick(std::move(c.play), now, c.video.playback_rate, cfg_.prebuffer_chunks, c.states);
    using playback::Phase;
    if (c.play.phase == Phase::Finished) {
      queue_.push(now, EventKind::ClientDepart, c.uid);
      ++c.deadline_version;
      return;
    }
    if (c.play.phase == Phase::Playing && c.armed_deadline != c.play.next_deadline) {
      ++c.deadline_version;
      c.armed_deadline = c.play.next_deadline;
      queue_.push(std::max(now, c.play.next_deadline), EventKind::ChunkDeadline, c.uid, c.deadline_version);
    }
    if (c.play.phase == Phase::Stalled && before != Phase::Stalled) opportunistic(c, now);
  }

  void opportunistic(detail::Client& c, SimTime now) {
    using playback::Phase;
    if (!cfg_.opportunistic_retransmit || !c.active) return;
    if (c.play.phase != Phase::Playing && c.play.phase != Phase::Stalled) return;
    std::uint32_t head = c.play.play_head;
    while (head < c.video.total_chunks && transport::terminal(c.states[head])) ++head;
    if (head >= c.video.total_chunks) return;
    const Duration interval = c.video.chunk_interval();
    SimTime deadline = now + interval;
    if (c.play.phase == Phase::Playing) {
      deadline = std::max(now, c.play.next_deadline) + interval * static_cast<std::int64_t>(head - c.play.play_head);
    }
    std::vector<int> room(c.paths.size());
    for (std::size_t i = 0; i < room.size(); ++i) room[i] = window_room(c, i);
    const auto pick = transport::opportunistic_retransmit(ChunkId{c.video.video_id, head}, c.records, c.paths, room,
                                                          now, deadline);
    if (!pick) return;
    auto& rec = c.records[head];
    rec.duplicated = true;
    ++c.duplicates;
    send_copy(c, path_of(c, pick->second), head, rec.attempt, true, now);
  }

  // -- server selection -----------------------------------------------------

  void on_selection(SimTime now) {
    const std::uint32_t groups = n_groups();
    const double T = cfg_.target_rate();
    const double chunk_bytes = static_cast<double>(cfg_.chunk_size);
    for (std::uint32_t g = 0; g < groups; ++g) {
      if (now > SimTime{}) expected_arrivals_[g] = 0.5 * expected_arrivals_[g] + 0.5 * region_arrivals_[g];
      region_arrivals_[g] = 0.0;
    }

    costsel::SelectionProblem p;
    p.w_max = cfg_.max_window;
    p.gamma = cfg_.gamma_factor * T;
    p.objective = cfg_.selection_max_objective ? costsel::ExcessObjective::Max : costsel::ExcessObjective::Sum;

    // Per-region path statistics from active clients, nominal values otherwise.
    std::vector<std::vector<double>> rsum(groups, std::vector<double>(cfg_.n_servers, 0.0));
    std::vector<std::vector<double>> vsum = rsum, cnt = rsum;
    for (const auto& c : clients_) {
      if (!c.active) continue;
      for (std::size_t i = 0; i < c.paths.size(); ++i) {
        if (c.paths[i].samples < 2) continue;
        const auto s = c.servers[i].id;
        rsum[c.group][s] += c.paths[i].mean_rate.value();
        vsum[c.group][s] += c.paths[i].rate_variance;
        cnt[c.group][s] += 1.0;
      }
    }
    for (std::uint32_t g = 0; g < groups; ++g) {
      costsel::Region r;
      r.expected_arrivals = expected_arrivals_[g];
      r.target = T;
      for (std::uint32_t s = 0; s < cfg_.n_servers; ++s) {
        const auto& link = links_[link_index(g * cfg_.group_size, ServerId{s})];
        const double per_client = cfg_.target_rate() * cfg_.capacity_factor();
        const double nominal = 1.0 / (1.0 / per_client + 2.0 * link.prop_delay.secs());
        if (cnt[g][s] > 0) {
          r.rate.push_back(rsum[g][s] / cnt[g][s]);
          r.variance.push_back(vsum[g][s] / cnt[g][s]);
        } else {
          r.rate.push_back(nominal);
          r.variance.push_back(std::pow(kNominalCv * nominal, 2));
        }
      }
      p.regions.push_back(std::move(r));
    }
    const auto done = static_cast<std::size_t>(now.ticks() / kBucketUs);
    for (std::uint32_t s = 0; s < cfg_.n_servers; ++s) {
      costsel::LinkState ls;
      const auto& b = peering_[s].meter.buckets;
      if (done > 0) {
        costsel::TrafficLedger hist;
        hist.buckets.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(std::min(done, b.size())));
        hist.buckets.resize(done, 0);
        const double to_rate = 1.0 / (chunk_bytes * (kBucketUs * 1e-6));
        ls.current_p95 = costsel::percentile_cost(hist, 0.95) * to_rate;
        ls.current_load = static_cast<double>(hist.buckets.back()) * to_rate;
      }
      p.links.push_back(ls);
    }

    ++out_.counters.selection_solves;
    const auto sel = costsel::select_optimized(p);
    if (sel.feasible) {
      for (std::uint32_t g = 0; g < groups; ++g) region_choice_[g] = sel.servers_for(g);
    }
    queue_.push(now + Duration::seconds(cfg_.selection_period_s), EventKind::SelectionTimer);
  }

  static constexpr double kNominalCv = 0.2;

  ExperimentConfig cfg_;
  RngStream rng_;
  std::ostream* trace_;
  estimator::EstimatorConfig est_cfg_;
  scheduler::SchedulerConfig sched_cfg_;
  transport::TransportConfig tcfg_;
  SimTime horizon_;

  EventQueue queue_;
  std::vector<ShapedLink> links_;
  std::vector<RngStream> link_rng_;
  std::vector<PeeringLink> peering_;
  std::vector<RngStream> slot_rng_;
  std::vector<detail::Client> clients_;
  std::unordered_map<std::uint64_t, detail::Copy> copies_;
  std::uint64_t next_copy_ = 0;
  std::uint32_t rr_counter_ = 0;

  std::vector<double> region_arrivals_;
  std::vector<double> expected_arrivals_;
  std::vector<std::vector<ServerId>> region_choice_;

  SimulationTrace out_;
};

/// Runs one simulation to the configured horizon.
inline SimulationTrace run(const ExperimentConfig& cfg, RngStream rng, std::ostream* trace = nullptr) {
  Simulation sim(cfg, rng, trace);
  return sim.run();
}

}  // namespace mums::simnet
