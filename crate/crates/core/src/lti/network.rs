use std::collections::HashMap;

use nalgebra::{DVector, RowDVector};

use super::state_space::{to_state_space, StateSpaceModel};
use super::transfer::RationalTransfer;
use super::LtiError;

/// Raised by a static map when its guard fires (division by zero,
/// argument leaving the domain of a tangent, and the like).
#[derive(Debug, Clone)]
pub struct GuardError {
    pub message: String,
}

impl GuardError {
    pub fn singularity(message: impl Into<String>) -> Self {
        GuardError {
            message: message.into(),
        }
    }
}

type MapFn = Box<dyn Fn(f64, &[f64]) -> Result<f64, GuardError> + Send + Sync>;
type InputFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// How a simulation run ended. Runtime blow-ups are reported here rather
/// than as errors so the partial trace stays available to callers that
/// classify divergence.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Ran to `t_final`.
    Completed,
    /// A state left the finite range at time `t`.
    NonFinite { t: f64 },
    /// A map guard fired at time `t`.
    Singular { t: f64, message: String },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

/// Recorded signals of one simulation run, sampled at `k*dt` in the
/// order the producing blocks were added to the network.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub dt: f64,
    times: Vec<f64>,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl SimTrace {
    pub fn new(dt: f64, names: Vec<String>) -> Self {
        let n = names.len();
        SimTrace {
            dt,
            times: Vec::new(),
            names,
            data: vec![Vec::new(); n],
            termination: Termination::Completed,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        let idx = self.names.iter().position(|n| n == name)?;
        Some(&self.data[idx])
    }

    pub fn push_sample(&mut self, t: f64, values: &[f64]) {
        assert_eq!(values.len(), self.names.len());
        self.times.push(t);
        for (col, &v) in self.data.iter_mut().zip(values) {
            col.push(v);
        }
    }

    /// Last recorded value of a signal.
    pub fn terminal(&self, name: &str) -> Option<f64> {
        self.signal(name).and_then(|s| s.last().copied())
    }
}

struct SsPort {
    signal: String,
    c: RowDVector<f64>,
    d: f64,
}

struct SsBlock {
    name: String,
    model: StateSpaceModel,
    input: String,
    ports: Vec<SsPort>,
    x0: DVector<f64>,
}

struct MapBlock {
    name: String,
    inputs: Vec<String>,
    output: String,
    f: MapFn,
}

#[derive(Clone, Copy)]
enum Producer {
    Input(usize),
    Port { block: usize, port: usize },
    Map(usize),
}

/// Handle to a state-space block inside a [`Network`].
#[derive(Debug, Clone, Copy)]
pub struct BlockId(usize);

/// A wiring of named signals between external inputs, SISO state-space
/// blocks, and static maps, integrated with fixed-step classical RK4.
///
/// Signals may be referenced before the producing block is added; names
/// are resolved when [`Network::simulate`] runs. Every signal is recorded.
#[derive(Default)]
pub struct Network {
    inputs: Vec<(String, InputFn)>,
    ss_blocks: Vec<SsBlock>,
    maps: Vec<MapBlock>,
    order: Vec<Producer>,
}

impl Network {
    pub fn new() -> Self {
        Network::default()
    }

    /// External input signal as a function of time.
    pub fn add_input(
        &mut self,
        signal: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) {
        self.order.push(Producer::Input(self.inputs.len()));
        self.inputs.push((signal.to_string(), Box::new(f)));
    }

    pub fn add_constant(&mut self, signal: &str, value: f64) {
        self.add_input(signal, move |_| value);
    }

    pub fn add_state_space(
        &mut self,
        name: &str,
        model: StateSpaceModel,
        input: &str,
        output: &str,
    ) -> BlockId {
        let n = model.n_states();
        let block = SsBlock {
            name: name.to_string(),
            ports: vec![SsPort {
                signal: output.to_string(),
                c: model.c.clone(),
                d: model.d,
            }],
            input: input.to_string(),
            x0: DVector::zeros(n),
            model,
        };
        let id = BlockId(self.ss_blocks.len());
        self.order.push(Producer::Port {
            block: id.0,
            port: 0,
        });
        self.ss_blocks.push(block);
        id
    }

    /// Realizes a proper transfer function and wires it as a block.
    pub fn add_transfer(
        &mut self,
        name: &str,
        g: &RationalTransfer,
        input: &str,
        output: &str,
    ) -> Result<BlockId, LtiError> {
        let model = to_state_space(g)?;
        Ok(self.add_state_space(name, model, input, output))
    }

    pub fn set_initial_state(&mut self, id: BlockId, x0: &[f64]) -> Result<(), LtiError> {
        let block = &mut self.ss_blocks[id.0];
        if x0.len() != block.model.n_states() {
            return Err(LtiError::StateDimension {
                block: block.name.clone(),
                expected: block.model.n_states(),
                got: x0.len(),
            });
        }
        block.x0 = DVector::from_column_slice(x0);
        Ok(())
    }

    /// Chooses the minimum-norm initial state whose output equals `y0`.
    /// Only meaningful for strictly proper blocks, where the initial
    /// output does not depend on the not-yet-known input.
    pub fn set_initial_output(&mut self, id: BlockId, y0: f64) -> Result<(), LtiError> {
        let block = &mut self.ss_blocks[id.0];
        if block.model.d != 0.0 {
            return Err(LtiError::FeedthroughInitialOutput {
                block: block.name.clone(),
            });
        }
        let c = &block.model.c;
        let cc: f64 = c.iter().map(|v| v * v).sum();
        if cc == 0.0 {
            return Err(LtiError::ZeroOutputRow {
                block: block.name.clone(),
            });
        }
        block.x0 = c.transpose() * (y0 / cc);
        Ok(())
    }

    /// Adds a port carrying the exact derivative of the block output,
    /// `y' = C A x + C B u`, read from the realization states. Requires
    /// a feedthrough-free block so the derivative itself is well defined
    /// without differentiating the input.
    pub fn add_output_derivative(
        &mut self,
        id: BlockId,
        signal: &str,
    ) -> Result<(), LtiError> {
        let block = &mut self.ss_blocks[id.0];
        if block.model.d != 0.0 {
            return Err(LtiError::FeedthroughDerivative {
                block: block.name.clone(),
            });
        }
        let c = &block.model.c * &block.model.a;
        let d = (&block.model.c * &block.model.b)[0];
        let port = block.ports.len();
        block.ports.push(SsPort {
            signal: signal.to_string(),
            c,
            d,
        });
        self.order.push(Producer::Port { block: id.0, port });
        Ok(())
    }

    /// Static map `output = f(t, inputs)`.
    pub fn add_map(
        &mut self,
        name: &str,
        inputs: &[&str],
        output: &str,
        f: impl Fn(f64, &[f64]) -> Result<f64, GuardError> + Send + Sync + 'static,
    ) {
        self.order.push(Producer::Map(self.maps.len()));
        self.maps.push(MapBlock {
            name: name.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
            f: Box::new(f),
        });
    }

    /// Weighted sum plus constant offset.
    pub fn add_affine(
        &mut self,
        name: &str,
        terms: &[(&str, f64)],
        offset: f64,
        output: &str,
    ) {
        let weights: Vec<f64> = terms.iter().map(|(_, w)| *w).collect();
        let inputs: Vec<&str> = terms.iter().map(|(s, _)| *s).collect();
        self.add_map(name, &inputs, output, move |_t, v| {
            Ok(v.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() + offset)
        });
    }

    pub fn add_sum(&mut self, name: &str, terms: &[(&str, f64)], output: &str) {
        self.add_affine(name, terms, 0.0, output);
    }

    /// Runs classical RK4 with step `dt` up to `t_final`, recording all
    /// signals at every step boundary. Structural problems (unknown or
    /// duplicated signals, algebraic loops, bad step size) are errors;
    /// runtime blow-ups end the run early and are reported in
    /// [`SimTrace::termination`].
    pub fn simulate(&self, dt: f64, t_final: f64) -> Result<SimTrace, LtiError> {
        if !(dt > 0.0) || !dt.is_finite() || !t_final.is_finite() || t_final < 0.0 {
            return Err(LtiError::InvalidTimeGrid { dt, t_final });
        }
        let plan = self.compile()?;
        let n_steps = (t_final / dt).round() as usize;
        let n_sigs = plan.signal_names.len();
        let mut trace = SimTrace::new(dt, plan.signal_names.clone());

        let mut x: Vec<f64> = Vec::new();
        for b in &self.ss_blocks {
            x.extend(b.x0.iter());
        }
        let nx = x.len();
        let mut values = vec![0.0; n_sigs];
        let mut k = vec![vec![0.0; nx]; 4];
        let mut x_stage = vec![0.0; nx];

        for step in 0..=n_steps {
            let t = step as f64 * dt;
            if let Err(g) = self.eval_signals(&plan, t, &x, &mut values) {
                trace.termination = Termination::Singular {
                    t,
                    message: g.message,
                };
                return Ok(trace);
            }
            trace.push_sample(t, &values);
            if step == n_steps {
                break;
            }
            self.derivatives(&plan, &values, &x, &mut k[0]);
            for stage in 1..4 {
                let (frac, ts) = if stage == 3 {
                    (1.0, t + dt)
                } else {
                    (0.5, t + 0.5 * dt)
                };
                for i in 0..nx {
                    x_stage[i] = x[i] + frac * dt * k[stage - 1][i];
                }
                if let Err(g) = self.eval_signals(&plan, ts, &x_stage, &mut values) {
                    trace.termination = Termination::Singular {
                        t: ts,
                        message: g.message,
                    };
                    return Ok(trace);
                }
                let (done, rest) = k.split_at_mut(stage);
                self.derivatives(&plan, &values, &x_stage, &mut rest[0]);
                let _ = done;
            }
            for i in 0..nx {
                x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            let t_next = (step + 1) as f64 * dt;
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                trace.termination = Termination::NonFinite { t: t_next };
                return Ok(trace);
            }
        }
        Ok(trace)
    }

    fn compile(&self) -> Result<Plan, LtiError> {
        let mut signal_names: Vec<String> = Vec::new();
        let mut producers: Vec<Producer> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for p in &self.order {
            let name = match *p {
                Producer::Input(i) => &self.inputs[i].0,
                Producer::Port { block, port } => &self.ss_blocks[block].ports[port].signal,
                Producer::Map(i) => &self.maps[i].output,
            };
            if index.insert(name.as_str(), signal_names.len()).is_some() {
                return Err(LtiError::DuplicateSignal { name: name.clone() });
            }
            signal_names.push(name.clone());
            producers.push(*p);
        }
        let resolve = |name: &str, consumer: &str| -> Result<usize, LtiError> {
            index.get(name).copied().ok_or_else(|| LtiError::SignalMissing {
                name: name.to_string(),
                consumer: consumer.to_string(),
            })
        };

        let mut block_inputs = Vec::with_capacity(self.ss_blocks.len());
        let mut state_offsets = Vec::with_capacity(self.ss_blocks.len());
        let mut offset = 0;
        for b in &self.ss_blocks {
            block_inputs.push(resolve(&b.input, &b.name)?);
            state_offsets.push(offset);
            offset += b.model.n_states();
        }
        let mut map_inputs = Vec::with_capacity(self.maps.len());
        for m in &self.maps {
            let mut ids = Vec::with_capacity(m.inputs.len());
            for s in &m.inputs {
                ids.push(resolve(s, &m.name)?);
            }
            map_inputs.push(ids);
        }

        // Evaluation order: inputs and state-readable ports are known from
        // (t, x); feedthrough ports and maps wait for their dependencies.
        // A cycle among the latter is an algebraic loop.
        let mut steps: Vec<EvalStep> = Vec::new();
        let mut deferred: Vec<(usize, EvalStep, Vec<usize>)> = Vec::new();
        for (sig, p) in producers.iter().enumerate() {
            match *p {
                Producer::Input(i) => steps.push(EvalStep::Input { input: i, sig }),
                Producer::Port { block, port } => {
                    let strict = self.ss_blocks[block].ports[port].d == 0.0;
                    let step = EvalStep::Port { block, port, sig };
                    if strict {
                        steps.push(step);
                    } else {
                        deferred.push((sig, step, vec![block_inputs[block]]));
                    }
                }
                Producer::Map(i) => {
                    deferred.push((sig, EvalStep::Map { map: i, sig }, map_inputs[i].clone()));
                }
            }
        }
        let mut ready: Vec<bool> = vec![false; signal_names.len()];
        for s in &steps {
            ready[s.sig()] = true;
        }
        let mut remaining: Vec<usize> = (0..deferred.len()).collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            remaining.retain(|&i| {
                let (sig, step, deps) = &deferred[i];
                if deps.iter().all(|&d| ready[d]) {
                    ready[*sig] = true;
                    steps.push(step.clone());
                    false
                } else {
                    true
                }
            });
            if remaining.len() == before {
                let cycle = remaining
                    .iter()
                    .map(|&i| signal_names[deferred[i].0].clone())
                    .collect();
                return Err(LtiError::AlgebraicLoopDetected { cycle });
            }
        }

        Ok(Plan {
            signal_names,
            steps,
            block_inputs,
            state_offsets,
            map_inputs,
        })
    }

    fn eval_signals(
        &self,
        plan: &Plan,
        t: f64,
        x: &[f64],
        values: &mut [f64],
    ) -> Result<(), GuardError> {
        let mut buf: Vec<f64> = Vec::new();
        for step in &plan.steps {
            match *step {
                EvalStep::Input { input, sig } => {
                    values[sig] = (self.inputs[input].1)(t);
                }
                EvalStep::Port { block, port, sig } => {
                    let b = &self.ss_blocks[block];
                    let p = &b.ports[port];
                    let off = plan.state_offsets[block];
                    let mut y = 0.0;
                    for (j, cj) in p.c.iter().enumerate() {
                        y += cj * x[off + j];
                    }
                    if p.d != 0.0 {
                        y += p.d * values[plan.block_inputs[block]];
                    }
                    values[sig] = y;
                }
                EvalStep::Map { map, sig } => {
                    let m = &self.maps[map];
                    buf.clear();
                    buf.extend(plan.map_inputs[map].iter().map(|&i| values[i]));
                    values[sig] = (m.f)(t, &buf)?;
                }
            }
        }
        Ok(())
    }

    fn derivatives(&self, plan: &Plan, values: &[f64], x: &[f64], dx: &mut [f64]) {
        for (bi, b) in self.ss_blocks.iter().enumerate() {
            let off = plan.state_offsets[bi];
            let n = b.model.n_states();
            let u = values[plan.block_inputs[bi]];
            for i in 0..n {
                let mut acc = b.model.b[i] * u;
                for j in 0..n {
                    acc += b.model.a[(i, j)] * x[off + j];
                }
                dx[off + i] = acc;
            }
        }
    }
}

#[derive(Clone)]
enum EvalStep {
    Input { input: usize, sig: usize },
    Port { block: usize, port: usize, sig: usize },
    Map { map: usize, sig: usize },
}

impl EvalStep {
    fn sig(&self) -> usize {
        match *self {
            EvalStep::Input { sig, .. } => sig,
            EvalStep::Port { sig, .. } => sig,
            EvalStep::Map { sig, .. } => sig,
        }
    }
}

struct Plan {
    signal_names: Vec<String>,
    steps: Vec<EvalStep>,
    block_inputs: Vec<usize>,
    state_offsets: Vec<usize>,
    map_inputs: Vec<Vec<usize>>,
}

/// Unit step response of a transfer function, simulated standalone.
pub fn step_response(
    g: &RationalTransfer,
    dt: f64,
    t_final: f64,
) -> Result<SimTrace, LtiError> {
    let mut net = Network::new();
    net.add_constant("u", 1.0);
    net.add_transfer("sys", g, "u", "y")?;
    net.simulate(dt, t_final)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_order(tau: f64) -> RationalTransfer {
        RationalTransfer::from_coeffs(vec![1.0], vec![1.0, tau]).unwrap()
    }

    #[test]
    fn filter_step_matches_exponential() {
        let trace = step_response(&first_order(0.5), 1e-3, 2.0).unwrap();
        let y = trace.signal("y").unwrap();
        let mut max_err: f64 = 0.0;
        for (k, &t) in trace.times().iter().enumerate() {
            let exact = 1.0 - (-t / 0.5).exp();
            max_err = max_err.max((y[k] - exact).abs());
        }
        assert!(max_err < 1e-10, "max error {max_err}");
    }

    #[test]
    fn rk4_order_shows_in_step_halving() {
        let err = |dt: f64| {
            let trace = step_response(&first_order(0.1), dt, 1.0).unwrap();
            let y = trace.signal("y").unwrap();
            trace
                .times()
                .iter()
                .enumerate()
                .map(|(k, &t)| (y[k] - (1.0 - (-t / 0.1).exp())).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(4e-3);
        let e2 = err(2e-3);
        assert!(
            e1 / e2 >= 12.0,
            "halving dt should cut the error ~16x, got {}",
            e1 / e2
        );
    }

    #[test]
    fn closed_loop_with_feedthrough_controller() {
        // P-control of an integrator: y' = k(r - y), so y = 1 - exp(-kt).
        let k = 4.0;
        let mut net = Network::new();
        net.add_constant("r", 1.0);
        net.add_sum("err", &[("r", 1.0), ("y", -1.0)], "e");
        net.add_map("ctl", &["e"], "u", move |_t, v| Ok(k * v[0]));
        net.add_transfer("plant", &RationalTransfer::integrator(1), "u", "y")
            .unwrap();
        let trace = net.simulate(1e-3, 1.5).unwrap();
        let y = trace.signal("y").unwrap();
        for (i, &t) in trace.times().iter().enumerate() {
            let exact = 1.0 - (-k * t).exp();
            assert!((y[i] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn algebraic_loop_is_detected() {
        let mut net = Network::new();
        net.add_sum("a", &[("y", 1.0)], "x");
        net.add_sum("b", &[("x", 1.0)], "y");
        match net.simulate(0.1, 1.0) {
            Err(LtiError::AlgebraicLoopDetected { cycle }) => {
                assert_eq!(cycle.len(), 2);
            }
            other => panic!("expected algebraic loop, got {other:?}"),
        }
    }

    #[test]
    fn missing_signal_is_reported_with_consumer() {
        let mut net = Network::new();
        net.add_sum("s", &[("ghost", 1.0)], "out");
        match net.simulate(0.1, 1.0) {
            Err(LtiError::SignalMissing { name, consumer }) => {
                assert_eq!(name, "ghost");
                assert_eq!(consumer, "s");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn duplicate_signal_is_rejected() {
        let mut net = Network::new();
        net.add_constant("u", 1.0);
        net.add_constant("u", 2.0);
        assert!(matches!(
            net.simulate(0.1, 1.0),
            Err(LtiError::DuplicateSignal { .. })
        ));
    }

    #[test]
    fn unstable_state_terminates_nonfinite() {
        // y' = 10y from y(0)=1 crosses 1e12 near t=2.76.
        let mut net = Network::new();
        net.add_constant("u", 0.0);
        let g = RationalTransfer::from_coeffs(vec![1.0], vec![-10.0, 1.0]).unwrap();
        let id = net.add_transfer("boom", &g, "u", "y").unwrap();
        net.set_initial_state(id, &[1.0]).unwrap();
        let trace = net.simulate(1e-3, 5.0).unwrap();
        match trace.termination {
            Termination::NonFinite { t } => assert!((t - 2.76).abs() < 0.05),
            ref other => panic!("expected NonFinite, got {other:?}"),
        }
        assert!(trace.len() > 100);
    }

    #[test]
    fn map_guard_ends_run_as_singular() {
        let mut net = Network::new();
        net.add_input("theta", |t| t);
        net.add_map("tan", &["theta"], "y", |_t, v| {
            if v[0].abs() >= std::f64::consts::FRAC_PI_2 {
                Err(GuardError::singularity("tangent argument at +/-pi/2"))
            } else {
                Ok(v[0].tan())
            }
        });
        let trace = net.simulate(1e-3, 3.0).unwrap();
        match trace.termination {
            Termination::Singular { t, .. } => {
                assert!((t - std::f64::consts::FRAC_PI_2).abs() < 2e-3)
            }
            ref other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn derivative_port_matches_finite_difference() {
        let g = RationalTransfer::from_coeffs(vec![1.0, 0.03], vec![1.0, 0.03, 3e-4, 1e-6])
            .unwrap();
        let mut net = Network::new();
        net.add_constant("u", 1.0);
        let id = net.add_transfer("sys", &g, "u", "y").unwrap();
        net.add_output_derivative(id, "y_dot").unwrap();
        // Central differences carry an O(dt^2 y''') truncation error and
        // y''' peaks near 1/tau^3 = 1e6 here, so dt must stay small.
        let dt = 1e-5;
        let trace = net.simulate(dt, 0.05).unwrap();
        let y = trace.signal("y").unwrap();
        let yd = trace.signal("y_dot").unwrap();
        for k in 1..trace.len() - 1 {
            let fd = (y[k + 1] - y[k - 1]) / (2.0 * dt);
            assert!(
                (yd[k] - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                "at k={k}: port {} vs fd {}",
                yd[k],
                fd
            );
        }
    }

    #[test]
    fn derivative_port_needs_strictly_proper_block() {
        let g = RationalTransfer::from_coeffs(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let mut net = Network::new();
        net.add_constant("u", 1.0);
        let id = net.add_transfer("bi", &g, "u", "y").unwrap();
        assert!(matches!(
            net.add_output_derivative(id, "y_dot"),
            Err(LtiError::FeedthroughDerivative { .. })
        ));
    }

    #[test]
    fn initial_output_holds_constant_input() {
        let mut net = Network::new();
        net.add_constant("u", 0.7);
        let id = net
            .add_transfer("filter", &first_order(0.03), "u", "w")
            .unwrap();
        net.set_initial_output(id, 0.7).unwrap();
        let trace = net.simulate(1e-4, 0.1).unwrap();
        for &w in trace.signal("w").unwrap() {
            assert!((w - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn traces_are_bit_identical_across_runs() {
        let build = || {
            let mut net = Network::new();
            net.add_input("r", |t| if t >= 0.0 { 1.0 } else { 0.0 });
            net.add_sum("err", &[("r", 1.0), ("y", -1.0)], "e");
            let gc = RationalTransfer::from_coeffs(vec![1.0, 0.03], vec![3e-4, 1e-6])
                .unwrap();
            net.add_transfer("gc", &gc, "e", "v").unwrap();
            net.add_transfer("plant", &RationalTransfer::integrator(2), "v", "y")
                .unwrap();
            net
        };
        let a = build().simulate(2e-4, 0.25).unwrap();
        let b = build().simulate(2e-4, 0.25).unwrap();
        assert_eq!(a.signal("y").unwrap(), b.signal("y").unwrap());
        assert_eq!(a.signal("v").unwrap(), b.signal("v").unwrap());
    }
}
