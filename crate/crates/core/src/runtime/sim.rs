use super::{Recorder, Reference, Result, RuntimeError, StopReason, Termination, Trace};
use crate::bfgs::{InitMode, MasterState, WorkerState};
use crate::linalg::Vector;
use crate::objective::Problem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};

/// Heavy-tail compute times are drawn from Pareto(scale 1, shape 1.5) and
/// truncated here.
const HEAVY_TAIL_SHAPE: f64 = 1.5;
const HEAVY_TAIL_CLIP: f64 = 1e3;

/// How long a worker takes between receiving an iterate and its reply
/// reaching the master.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    /// Every reply takes one time unit; workers take turns by id.
    FixedRoundRobin,
    /// Reply times uniform on `[1, 1 + d]`.
    UniformBounded(f64),
    /// Heavy-tailed reply times. Whenever the running time-average of the
    /// mean delay would exceed `(n − 1)/2 + cap`, the most delayed worker's
    /// reply is delivered at once instead.
    HeavyTailBoundedMean(f64),
    /// Replies arrive in exactly this worker order, one per time unit.
    Schedule(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub delay_model: DelayModel,
    pub seed: u64,
    pub termination: Termination,
    pub init: InitMode,
    /// Starting point; zero when `None`.
    pub x0: Option<Vector>,
    pub max_step: Option<f64>,
}

impl SimConfig {
    pub fn new(delay_model: DelayModel, termination: Termination) -> Self {
        Self {
            delay_model,
            seed: 0,
            termination,
            init: InitMode::default(),
            x0: None,
            max_step: None,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn init(mut self, init: InitMode) -> Self {
        self.init = init;
        self
    }

    pub fn x0(mut self, x0: Vector) -> Self {
        self.x0 = Some(x0);
        self
    }
}

/// Single-threaded event loop over in-process master and worker states.
///
/// Every worker always has exactly one reply in flight, computed lazily from
/// the iterate it was last sent when its event fires.
pub struct Simulator<'a> {
    problem: &'a Problem,
    master: MasterState,
    workers: Vec<WorkerState>,
    assigned: Vec<Vector>,
    pending: Vec<f64>,
    clock: f64,
    rng: ChaCha8Rng,
    model: DelayModel,
    cursor: usize,
    /// `Σ_s d̄^s` over processed updates, for the heavy-tail cap.
    mean_delay_sum: f64,
    recorder: Recorder<'a>,
}

impl<'a> Simulator<'a> {
    pub fn new(problem: &'a Problem, reference: Option<&'a Reference>, config: &SimConfig) -> Result<Self> {
        let n = problem.n_workers();
        let p = problem.dim();
        match &config.delay_model {
            DelayModel::UniformBounded(d) | DelayModel::HeavyTailBoundedMean(d) if !(*d >= 0.0 && d.is_finite()) => {
                return Err(RuntimeError::Config(format!("delay parameter must be finite and >= 0, got {d}")));
            }
            DelayModel::Schedule(s) if s.iter().any(|&w| w >= n) => {
                return Err(RuntimeError::Config(format!("schedule names a worker outside 0..{n}")));
            }
            _ => {}
        }
        let x0 = config.x0.clone().unwrap_or_else(|| vec![0.0; p]);
        if x0.len() != p {
            return Err(RuntimeError::Config(format!("x0 has length {} but the problem has dimension {p}", x0.len())));
        }

        let workers = problem
            .locals()
            .iter()
            .enumerate()
            .map(|(i, f)| WorkerState::init(i as u32, f, config.init, &x0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let b0s: Vec<_> = workers.iter().map(|w| w.hessian_approx().clone()).collect();
        let grads: Vec<_> = workers.iter().map(|w| w.grad_z().to_vec()).collect();
        let master = MasterState::init(&b0s, &x0, &grads)?.with_max_step(config.max_step);
        let recorder = Recorder::new(problem, reference, config.termination, &x0)?;

        let mut sim = Self {
            problem,
            master,
            workers,
            assigned: vec![x0; n],
            pending: vec![0.0; n],
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model: config.delay_model.clone(),
            cursor: 0,
            mean_delay_sum: 0.0,
            recorder,
        };
        for i in 0..n {
            sim.pending[i] = sim.draw_duration();
        }
        Ok(sim)
    }

    pub fn master(&self) -> &MasterState {
        &self.master
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn trace(&self) -> &Trace {
        self.recorder.trace()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    fn draw_duration(&mut self) -> f64 {
        match self.model {
            DelayModel::FixedRoundRobin | DelayModel::Schedule(_) => 1.0,
            DelayModel::UniformBounded(0.0) => 1.0,
            DelayModel::UniformBounded(d) => self.rng.random_range(1.0..=1.0 + d),
            DelayModel::HeavyTailBoundedMean(_) => {
                let pareto = Pareto::new(1.0, HEAVY_TAIL_SHAPE).expect("valid Pareto parameters");
                pareto.sample(&mut self.rng).min(HEAVY_TAIL_CLIP)
            }
        }
    }

    /// Earliest pending reply, ties broken by worker id.
    fn earliest(&self) -> usize {
        let mut best = 0;
        for i in 1..self.pending.len() {
            if self.pending[i] < self.pending[best] {
                best = i;
            }
        }
        best
    }

    /// Mean delay at `t + 1` if `worker` is the one to update.
    fn mean_delay_after(&self, worker: usize) -> f64 {
        let ledger = self.recorder.ledger();
        let next = ledger.now() + 1;
        let n = ledger.n_workers();
        (0..n)
            .filter(|&i| i != worker)
            .map(|i| (next - ledger.last_update(i)) as f64)
            .sum::<f64>()
            / n as f64
    }

    fn next_event(&mut self) -> Option<(usize, f64)> {
        match &self.model {
            DelayModel::Schedule(order) => {
                let w = *order.get(self.cursor)?;
                self.cursor += 1;
                Some((w, self.clock + 1.0))
            }
            DelayModel::HeavyTailBoundedMean(cap) => {
                let n = self.pending.len();
                let bound = (n as f64 - 1.0) / 2.0 + cap;
                let next_t = (self.recorder.ledger().now() + 1) as f64;
                let w = self.earliest();
                if (self.mean_delay_sum + self.mean_delay_after(w)) / next_t <= bound {
                    return Some((w, self.pending[w]));
                }
                let ledger = self.recorder.ledger();
                let stalest = (0..n).min_by_key(|&i| (ledger.last_update(i), i)).expect("n >= 1");
                Some((stalest, self.clock))
            }
            _ => {
                let w = self.earliest();
                Some((w, self.pending[w]))
            }
        }
    }

    /// Processes one reply. Returns the stop reason once the run is over.
    pub fn step(&mut self) -> Result<Option<StopReason>> {
        let Some((w, at)) = self.next_event() else {
            return Ok(Some(StopReason::ScheduleExhausted));
        };
        let f = self.problem.local(w);
        let msg = self.workers[w].compute(&self.assigned[w], f)?;
        let outcome = self.master.apply(&msg)?;
        self.clock = at;
        let stop = self.recorder.record(
            self.master.t(),
            w,
            self.clock,
            self.master.x(),
            msg.skip,
            outcome.refactorized,
        )?;
        self.mean_delay_sum += self.recorder.ledger().average_delay();
        self.assigned[w] = self.master.x().to_vec();
        self.pending[w] = self.clock + self.draw_duration();
        Ok(stop)
    }

    pub fn run(mut self) -> Result<Trace> {
        loop {
            match self.step() {
                Ok(None) => {}
                Ok(Some(stop)) => return Ok(self.recorder.finish(stop)),
                Err(e) => return Err(self.recorder.abort(e)),
            }
        }
    }
}

pub fn run_simulated(problem: &Problem, reference: Option<&Reference>, config: &SimConfig) -> Result<Trace> {
    Simulator::new(problem, reference, config)?.run()
}
