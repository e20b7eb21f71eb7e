use super::{Recorder, Reference, Result, RuntimeError, StopReason, Termination, Trace};
use crate::bfgs::{init_hessian_approx, InitMode, MasterState, WorkerState};
use crate::linalg::{self, Vector};
use crate::objective::{LocalObjective, Problem};
use crate::protocol::{read_frame, write_frame, AssignMessage, Frame, ProtocolError, UpdateMessage};
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub init: InitMode,
    pub x0: Option<Vector>,
    pub termination: Termination,
    pub max_step: Option<f64>,
    /// Deadline for all workers to connect and finish the handshake.
    pub startup_timeout: Duration,
}

impl MasterConfig {
    pub fn new(termination: Termination) -> Self {
        Self {
            init: InitMode::default(),
            x0: None,
            termination,
            max_step: None,
            startup_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub id: u32,
    pub init: InitMode,
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
}

impl WorkerConfig {
    pub fn new(id: u32) -> Self {
        Self {
            id,
            init: InitMode::default(),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

fn accept_before(listener: &TcpListener, deadline: Instant) -> Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(RuntimeError::Startup("timed out waiting for workers to connect".into()));
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn handshake(stream: &mut TcpStream, x0: &[f64], deadline: Instant) -> Result<UpdateMessage> {
    stream.set_nodelay(true)?;
    let remaining = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
    stream.set_read_timeout(Some(remaining))?;
    write_frame(stream, &Frame::Assign(AssignMessage { t: 0, x: x0.to_vec() }))?;
    let frame = read_frame(stream).map_err(|e| match e {
        ProtocolError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            RuntimeError::Startup("worker did not answer the handshake in time".into())
        }
        other => other.into(),
    })?;
    stream.set_read_timeout(None)?;
    match frame {
        Frame::Update(m) => Ok(m),
        other => Err(RuntimeError::Startup(format!("expected a handshake update, got {other:?}"))),
    }
}

fn broadcast_stop(streams: &mut [TcpStream]) {
    for s in streams.iter_mut() {
        let _ = write_frame(s, &Frame::Stop);
    }
}

type Inbox = mpsc::Receiver<(usize, std::result::Result<Frame, ProtocolError>)>;

fn spawn_readers(streams: &[TcpStream]) -> Result<Inbox> {
    let (tx, rx) = mpsc::channel();
    for (id, s) in streams.iter().enumerate() {
        let mut reader = s.try_clone()?;
        let tx = tx.clone();
        thread::spawn(move || loop {
            let frame = read_frame(&mut reader);
            let done = frame.is_err();
            if tx.send((id, frame)).is_err() || done {
                break;
            }
        });
    }
    Ok(rx)
}

/// Waits briefly for every worker to hang up after STOP.
fn drain(inbox: &Inbox, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut closed = vec![false; n];
    while closed.iter().any(|c| !c) {
        let left = deadline.saturating_duration_since(Instant::now());
        match inbox.recv_timeout(left) {
            Ok((id, Err(_))) => closed[id] = true,
            Ok(_) => {}
            Err(_) => break,
        }
    }
}

/// Runs the master over `n = problem.n_workers()` TCP connections.
///
/// Workers identify themselves in their handshake reply; the master builds
/// each `B_i⁰` from its own copy of the problem and checks it against the
/// `B_i⁰ x⁰` the worker reports. Messages are then processed one at a time
/// in arrival order.
pub fn run_master_tcp(
    listener: TcpListener,
    problem: &Problem,
    reference: Option<&Reference>,
    config: &MasterConfig,
) -> Result<Trace> {
    let n = problem.n_workers();
    let p = problem.dim();
    let x0 = config.x0.clone().unwrap_or_else(|| vec![0.0; p]);
    if x0.len() != p {
        return Err(RuntimeError::Config(format!("x0 has length {} but the problem has dimension {p}", x0.len())));
    }
    let mut recorder = Recorder::new(problem, reference, config.termination, &x0)?;

    let deadline = Instant::now() + config.startup_timeout;
    let mut slots: Vec<Option<(TcpStream, UpdateMessage)>> = (0..n).map(|_| None).collect();
    for _ in 0..n {
        let mut stream = accept_before(&listener, deadline)?;
        let hello = handshake(&mut stream, &x0, deadline)?;
        let id = hello.worker_id as usize;
        if id >= n {
            return Err(RuntimeError::Startup(format!("worker id {id} but only {n} workers expected")));
        }
        if slots[id].is_some() {
            return Err(RuntimeError::Startup(format!("worker id {id} connected twice")));
        }
        slots[id] = Some((stream, hello));
    }
    let (mut streams, hellos): (Vec<_>, Vec<_>) = slots.into_iter().map(|s| s.expect("all slots filled")).unzip();

    let mut b0s = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for (i, hello) in hellos.into_iter().enumerate() {
        let b0 = init_hessian_approx(config.init, problem.local(i), &x0)?;
        let expect = b0.mat_vec(&x0).map_err(crate::bfgs::BfgsError::from)?;
        let matches = hello.delta_u.len() == p
            && hello.y.len() == p
            && linalg::norm(&linalg::sub(&expect, &hello.delta_u)) <= 1e-12 * (1.0 + linalg::norm(&expect));
        if !matches {
            broadcast_stop(&mut streams);
            return Err(RuntimeError::Startup(format!(
                "worker {i} reports an initial state that does not match the configured problem"
            )));
        }
        b0s.push(b0);
        grads.push(hello.y);
    }
    let mut master = MasterState::init(&b0s, &x0, &grads)?.with_max_step(config.max_step);

    let inbox = spawn_readers(&streams)?;
    let started = Instant::now();
    for s in streams.iter_mut() {
        write_frame(s, &Frame::Assign(AssignMessage { t: 0, x: x0.clone() }))?;
    }

    let result = (|| -> Result<StopReason> {
        loop {
            let (id, frame) = inbox.recv().map_err(|_| RuntimeError::Disconnected { worker: 0 })?;
            let msg = match frame {
                Ok(Frame::Update(m)) => m,
                Ok(other) => {
                    return Err(ProtocolError::MalformedFrame(format!("worker {id} sent {other:?}")).into())
                }
                Err(ProtocolError::Closed) => return Err(RuntimeError::Disconnected { worker: id }),
                Err(e) => return Err(e.into()),
            };
            if msg.worker_id as usize != id {
                return Err(ProtocolError::MalformedFrame(format!(
                    "connection {id} sent an update tagged {}",
                    msg.worker_id
                ))
                .into());
            }
            let outcome = master.apply(&msg)?;
            let wall = started.elapsed().as_secs_f64();
            let stop = recorder.record(master.t(), id, wall, master.x(), msg.skip, outcome.refactorized)?;
            if let Some(stop) = stop {
                return Ok(stop);
            }
            let reply = Frame::Assign(AssignMessage {
                t: master.t(),
                x: master.x().to_vec(),
            });
            write_frame(&mut streams[id], &reply)?;
        }
    })();

    broadcast_stop(&mut streams);
    match result {
        Ok(stop) => {
            drain(&inbox, n);
            Ok(recorder.finish(stop))
        }
        Err(e) => {
            for s in &streams {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
            Err(recorder.abort(e))
        }
    }
}

fn connect_before<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(&addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline && e.kind() == ErrorKind::ConnectionRefused => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Worker loop: wait for an iterate, update, reply; return the number of
/// updates sent once the master says STOP.
pub fn run_worker_tcp<A: ToSocketAddrs>(addr: A, f: &LocalObjective, config: &WorkerConfig) -> Result<u64> {
    let mut stream = connect_before(addr, config.connect_timeout)?;
    stream.set_nodelay(true)?;
    let x0 = match read_frame(&mut stream)? {
        Frame::Assign(a) => a.x,
        Frame::Stop => return Ok(0),
        other => return Err(ProtocolError::MalformedFrame(format!("expected the starting point, got {other:?}")).into()),
    };
    let mut state = WorkerState::init(config.id, f, config.init, &x0)?;
    write_frame(&mut stream, &Frame::Update(state.initial_message()))?;
    loop {
        match read_frame(&mut stream)? {
            Frame::Assign(a) => {
                let msg = state.compute(&a.x, f)?;
                write_frame(&mut stream, &Frame::Update(msg))?;
            }
            Frame::Stop => return Ok(state.updates_done()),
            Frame::Update(_) => {
                return Err(ProtocolError::MalformedFrame("worker received an update frame".into()).into())
            }
        }
    }
}
