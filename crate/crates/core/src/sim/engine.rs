use alloc::collections::{BinaryHeap, VecDeque};
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{RunTotals, SimConfig, SimError, SimMetrics, SimOutput, StationMetrics, TraceEvent, TraceKind};

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrival,
    ServiceDone { job: usize, visit: u32 },
    Timeout { job: usize, visit: u32 },
}

struct Scheduled {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that BinaryHeap pops the earliest event; seq keeps equal times FIFO.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Job {
    born: f64,
    station: usize,
    entered: f64,
    visit: u32,
    alive: bool,
    in_service: bool,
}

#[derive(Default)]
struct Station {
    waiting: VecDeque<usize>,
    waiting_live: usize,
    busy: u32,
    area_queue: f64,
    area_occupancy: f64,
    sojourns: Vec<f64>,
    served: u64,
    timeouts: u64,
    rejections: u64,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    calendar: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
    last: f64,
    jobs: Vec<Job>,
    stations: Vec<Station>,
    in_system: usize,
    area_load: f64,
    totals: RunTotals,
    window_completed: u64,
    window_departures: u64,
    e2e_sojourns_sum: f64,
    trace: Vec<TraceEvent>,
}

impl Engine<'_> {
    fn in_window(&self) -> bool {
        self.now >= self.cfg.warmup
    }

    fn schedule(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.calendar.push(Scheduled { time, seq: self.seq, ev });
    }

    /// Exponential variate by inversion; `u` is uniform on (0, 1].
    fn exponential(&mut self, rate: f64) -> f64 {
        let u = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        -libm::log(u) / rate
    }

    fn record(&mut self, job: usize, station: usize, kind: TraceKind) {
        if self.cfg.record_trace {
            self.trace.push(TraceEvent { time: self.now, job: job as u64, station, kind });
        }
    }

    fn advance_to(&mut self, t: f64) {
        let lo = self.last.max(self.cfg.warmup);
        let hi = t.min(self.cfg.horizon);
        if hi > lo {
            let dt = hi - lo;
            self.area_load += self.in_system as f64 * dt;
            for st in &mut self.stations {
                st.area_queue += st.waiting_live as f64 * dt;
                st.area_occupancy += (st.waiting_live + st.busy as usize) as f64 * dt;
            }
        }
        self.last = t;
        self.now = t;
    }

    fn enter_station(&mut self, job: usize, s: usize) {
        let model = &self.cfg.stations[s];
        let (servers, capacity, timeout) = (model.servers, model.capacity, model.timeout);
        {
            let j = &mut self.jobs[job];
            j.station = s;
            j.entered = self.now;
            j.visit += 1;
        }
        self.record(job, s, TraceKind::Arrive);
        if self.stations[s].busy < servers {
            self.start_service(job, s);
        } else if capacity.is_some_and(|cap| self.stations[s].waiting_live >= cap) {
            self.jobs[job].alive = false;
            self.in_system -= 1;
            self.totals.rejected += 1;
            if self.in_window() {
                self.stations[s].rejections += 1;
                self.window_departures += 1;
            }
            self.record(job, s, TraceKind::Reject);
            return;
        } else {
            let st = &mut self.stations[s];
            st.waiting.push_back(job);
            st.waiting_live += 1;
        }
        if let Some(t) = timeout {
            let visit = self.jobs[job].visit;
            self.schedule(self.now + t, Ev::Timeout { job, visit });
        }
    }

    fn start_service(&mut self, job: usize, s: usize) {
        self.stations[s].busy += 1;
        self.jobs[job].in_service = true;
        let rate = self.cfg.coupling.effective_rate(self.cfg.stations[s].service_rate, self.in_system);
        let dt = self.exponential(rate);
        let visit = self.jobs[job].visit;
        self.schedule(self.now + dt, Ev::ServiceDone { job, visit });
        self.record(job, s, TraceKind::Start);
    }

    fn start_next_waiting(&mut self, s: usize) {
        while let Some(next) = self.stations[s].waiting.pop_front() {
            // Timed-out jobs are removed lazily.
            if self.jobs[next].alive {
                self.stations[s].waiting_live -= 1;
                self.start_service(next, s);
                return;
            }
        }
    }

    fn current(&self, job: usize, visit: u32) -> bool {
        let j = &self.jobs[job];
        j.alive && j.visit == visit
    }

    fn on_arrival(&mut self) {
        let id = self.jobs.len();
        self.jobs.push(Job { born: self.now, station: 0, entered: self.now, visit: 0, alive: true, in_service: false });
        self.totals.injected += 1;
        self.in_system += 1;
        self.enter_station(id, 0);
        let gap = self.exponential(self.cfg.arrival_rate);
        self.schedule(self.now + gap, Ev::Arrival);
    }

    fn on_service_done(&mut self, job: usize, visit: u32) {
        if !self.current(job, visit) {
            return;
        }
        let s = self.jobs[job].station;
        self.stations[s].busy -= 1;
        self.jobs[job].in_service = false;
        if self.in_window() {
            let sojourn = self.now - self.jobs[job].entered;
            let st = &mut self.stations[s];
            st.served += 1;
            st.sojourns.push(sojourn);
        }
        self.record(job, s, TraceKind::Depart);
        if s + 1 < self.cfg.stations.len() {
            self.enter_station(job, s + 1);
        } else {
            self.jobs[job].alive = false;
            self.in_system -= 1;
            self.totals.completed += 1;
            if self.in_window() {
                self.window_completed += 1;
                self.window_departures += 1;
                self.e2e_sojourns_sum += self.now - self.jobs[job].born;
            }
            self.record(job, s, TraceKind::Exit);
        }
        self.start_next_waiting(s);
    }

    fn on_timeout(&mut self, job: usize, visit: u32) {
        if !self.current(job, visit) {
            return;
        }
        let s = self.jobs[job].station;
        self.jobs[job].alive = false;
        self.in_system -= 1;
        self.totals.timed_out += 1;
        if self.in_window() {
            self.stations[s].timeouts += 1;
            self.window_departures += 1;
        }
        self.record(job, s, TraceKind::Timeout);
        if self.jobs[job].in_service {
            self.jobs[job].in_service = false;
            self.stations[s].busy -= 1;
            self.start_next_waiting(s);
        } else {
            self.stations[s].waiting_live -= 1;
        }
    }

    fn run(mut self) -> SimOutput {
        if self.cfg.arrival_rate > 0.0 {
            let first = self.exponential(self.cfg.arrival_rate);
            self.schedule(first, Ev::Arrival);
        }
        while let Some(next) = self.calendar.peek() {
            if next.time > self.cfg.horizon {
                break;
            }
            let Scheduled { time, ev, .. } = self.calendar.pop().expect("peeked");
            self.advance_to(time);
            match ev {
                Ev::Arrival => self.on_arrival(),
                Ev::ServiceDone { job, visit } => self.on_service_done(job, visit),
                Ev::Timeout { job, visit } => self.on_timeout(job, visit),
            }
        }
        self.advance_to(self.cfg.horizon);
        self.finish()
    }

    fn finish(mut self) -> SimOutput {
        let window = self.cfg.horizon - self.cfg.warmup;
        self.totals.in_flight = self.in_system as u64;
        let stations = self
            .stations
            .iter_mut()
            .zip(&self.cfg.stations)
            .map(|(st, model)| {
                let n = st.sojourns.len();
                let mean = if n == 0 { 0.0 } else { st.sojourns.iter().sum::<f64>() / n as f64 };
                let p95 = if n == 0 {
                    0.0
                } else {
                    st.sojourns.sort_by(f64::total_cmp);
                    // nearest-rank percentile
                    let rank = libm::ceil(0.95 * n as f64) as usize;
                    st.sojourns[rank.clamp(1, n) - 1]
                };
                StationMetrics {
                    name: model.name.clone(),
                    served: st.served,
                    timeouts: st.timeouts,
                    rejections: st.rejections,
                    mean_sojourn: mean,
                    p95_sojourn: p95,
                    mean_queue_length: st.area_queue / window,
                    mean_occupancy: st.area_occupancy / window,
                }
            })
            .collect();
        let metrics = SimMetrics {
            window,
            throughput: self.window_departures as f64 / window,
            goodput: self.window_completed as f64 / window,
            mean_load: self.area_load / window,
            mean_sojourn: if self.window_completed == 0 {
                0.0
            } else {
                self.e2e_sojourns_sum / self.window_completed as f64
            },
            stations,
            totals: self.totals,
        };
        SimOutput { metrics, trace: self.trace }
    }
}

/// Runs one simulation. Identical configs (seed included) give bit-identical output.
pub fn run_sim(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let engine = Engine {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        calendar: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        last: 0.0,
        jobs: Vec::new(),
        stations: (0..cfg.stations.len()).map(|_| Station::default()).collect(),
        in_system: 0,
        area_load: 0.0,
        totals: RunTotals::default(),
        window_completed: 0,
        window_departures: 0,
        e2e_sojourns_sum: 0.0,
        trace: Vec::new(),
    };
    Ok(engine.run())
}
