//! Exact minimum-cost maximum s-t flow. The distributed path goes through a
//! single linear program with auxiliary slack variables and a randomly
//! perturbed cost vector: the perturbation makes the optimum unique with
//! probability at least 1/2, the slack penalty pins conservation, and the
//! `-2|V|M̃F` term pays for maximizing the flow value, so one approximate LP
//! solve followed by rounding recovers the exact integral optimum. A
//! classical successive-shortest-path oracle (with residual negative-cycle
//! cancellation) provides ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::Cell;
use std::collections::VecDeque;
use thiserror::Error;

use crate::lapsolve::{flow_normal_equations_solve, FlowBlocks, LapSolveError};
use crate::lpsolve::{lp_solve, InnerSolver, LPInstance, LpError, Profile};

#[derive(Debug, Error)]
pub enum McmfError {
    #[error("graph is not connected")]
    DisconnectedGraph,
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("rounded flow violates {0}; LP precision was insufficient")]
    RoundingInfeasible(&'static str),
    #[error("no retry produced a verified flow after {0} attempts")]
    RetriesExhausted(usize),
    #[error("lp solver: {0}")]
    Lp(#[from] LpError),
    #[error("laplacian solver: {0}")]
    Laplacian(#[from] LapSolveError),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub cap: i64,
    pub cost: i64,
}

#[derive(Debug, Clone)]
pub struct FlowInstance {
    pub n: usize,
    pub arcs: Vec<Arc>,
    pub s: usize,
    pub t: usize,
}

impl FlowInstance {
    pub fn m_bound(&self) -> i64 {
        self.arcs
            .iter()
            .map(|a| a.cap.max(a.cost.abs()))
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn validate(&self) -> Result<(), McmfError> {
        if self.s == self.t || self.s >= self.n || self.t >= self.n {
            return Err(McmfError::InvalidInstance(
                "source and sink must be distinct vertices".into(),
            ));
        }
        for a in &self.arcs {
            if a.from >= self.n || a.to >= self.n || a.from == a.to {
                return Err(McmfError::InvalidInstance(format!(
                    "bad arc {} -> {}",
                    a.from, a.to
                )));
            }
            if a.cap <= 0 {
                return Err(McmfError::InvalidInstance("capacities must be positive".into()));
            }
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for a in &self.arcs {
            adj[a.from].push(a.to);
            adj[a.to].push(a.from);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([self.s]);
        seen[self.s] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.iter().all(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralFlow {
    pub f: Vec<i64>,
    pub value: i64,
    pub cost: i64,
}

fn flow_stats(inst: &FlowInstance, f: &[i64]) -> (i64, i64) {
    let mut value = 0;
    let mut cost = 0;
    for (e, a) in inst.arcs.iter().enumerate() {
        cost += a.cost * f[e];
        if a.from == inst.s {
            value += f[e];
        }
        if a.to == inst.s {
            value -= f[e];
        }
    }
    (value, cost)
}

// ---------------------------------------------------------------------------
// Combinatorial oracle.
// ---------------------------------------------------------------------------

/// Residual edge list: forward and backward copy per arc, at indices `2e`
/// and `2e + 1`.
struct Residual {
    edges: Vec<(usize, usize, i64, i64)>, // from, to, remaining cap, cost
}

impl Residual {
    fn new(inst: &FlowInstance) -> Self {
        let mut edges = Vec::with_capacity(2 * inst.arcs.len());
        for a in &inst.arcs {
            edges.push((a.from, a.to, a.cap, a.cost));
            edges.push((a.to, a.from, 0, -a.cost));
        }
        Residual { edges }
    }

    fn push(&mut self, e: usize, amount: i64) {
        self.edges[e].2 -= amount;
        self.edges[e ^ 1].2 += amount;
    }
}

/// Exact min-cost max-flow: the maximum value comes from cost-blind
/// augmenting paths (so negative costs cannot trap the search), and the
/// cost is then minimized by canceling negative residual cycles, which also
/// covers instances whose optimum saturates a negative cycle.
pub fn mcmf_oracle(inst: &FlowInstance) -> IntegralFlow {
    let n = inst.n;
    let mut r = Residual::new(inst);
    // Edmonds–Karp for the maximum value
    loop {
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[inst.s] = true;
        let mut queue = VecDeque::from([inst.s]);
        'bfs: while let Some(u) = queue.pop_front() {
            for (e, &(from, v, cap, _)) in r.edges.iter().enumerate() {
                if from == u && cap > 0 && !seen[v] {
                    seen[v] = true;
                    pred[v] = Some(e);
                    if v == inst.t {
                        break 'bfs;
                    }
                    queue.push_back(v);
                }
            }
        }
        if !seen[inst.t] {
            break;
        }
        let mut bottleneck = i64::MAX;
        let mut v = inst.t;
        while v != inst.s {
            let e = pred[v].expect("path edge");
            bottleneck = bottleneck.min(r.edges[e].2);
            v = r.edges[e].0;
        }
        let mut v = inst.t;
        while v != inst.s {
            let e = pred[v].expect("path edge");
            r.push(e, bottleneck);
            v = r.edges[e].0;
        }
    }
    // cancel negative residual cycles
    loop {
        let mut dist = vec![0i64; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut last_relaxed = None;
        for _ in 0..n {
            last_relaxed = None;
            for (e, &(u, v, cap, cost)) in r.edges.iter().enumerate() {
                if cap > 0 && dist[u] + cost < dist[v] {
                    dist[v] = dist[u] + cost;
                    pred[v] = Some(e);
                    last_relaxed = Some(v);
                }
            }
            if last_relaxed.is_none() {
                break;
            }
        }
        let Some(mut v) = last_relaxed else { break };
        // walk back n steps to land on the cycle
        for _ in 0..n {
            v = r.edges[pred[v].expect("relaxed vertex has predecessor")].0;
        }
        let start = v;
        let mut cycle = Vec::new();
        loop {
            let e = pred[v].expect("cycle edge");
            cycle.push(e);
            v = r.edges[e].0;
            if v == start {
                break;
            }
        }
        let bottleneck = cycle.iter().map(|&e| r.edges[e].2).min().unwrap();
        for &e in &cycle {
            r.push(e, bottleneck);
        }
    }
    let f: Vec<i64> = (0..inst.arcs.len())
        .map(|i| r.edges[2 * i + 1].2)
        .collect();
    let (value, cost) = flow_stats(inst, &f);
    IntegralFlow { f, value, cost }
}

/// Exhaustive enumeration over all integral flows; only viable for a handful
/// of arcs with small capacities.
pub fn brute_force_oracle(inst: &FlowInstance) -> IntegralFlow {
    let m = inst.arcs.len();
    assert!(m <= 6, "brute force is exponential in the arc count");
    let mut best: Option<IntegralFlow> = None;
    let mut f = vec![0i64; m];
    fn recurse(
        inst: &FlowInstance,
        f: &mut Vec<i64>,
        e: usize,
        best: &mut Option<IntegralFlow>,
    ) {
        if e == f.len() {
            // conservation everywhere except s, t
            let mut net = vec![0i64; inst.n];
            for (i, a) in inst.arcs.iter().enumerate() {
                net[a.from] -= f[i];
                net[a.to] += f[i];
            }
            for v in 0..inst.n {
                if v != inst.s && v != inst.t && net[v] != 0 {
                    return;
                }
            }
            let (value, cost) = flow_stats(inst, f);
            let better = match best {
                None => true,
                Some(b) => value > b.value || (value == b.value && cost < b.cost),
            };
            if better {
                *best = Some(IntegralFlow {
                    f: f.clone(),
                    value,
                    cost,
                });
            }
            return;
        }
        for amount in 0..=inst.arcs[e].cap {
            f[e] = amount;
            recurse(inst, f, e + 1, best);
        }
        f[e] = 0;
    }
    recurse(inst, &mut f, 0, &mut best);
    best.expect("zero flow is always feasible")
}

// ---------------------------------------------------------------------------
// LP construction.
// ---------------------------------------------------------------------------

/// Perturbed, integer-rescaled costs: each cost gains a uniform element of
/// `{1,…,2|E|M}/(4|E|²M²)` and everything is multiplied by `4|E|²M²`.
/// Returns the scaled integral costs and the scale factor.
pub fn perturb_costs(q: &[i64], m_bound: i64, rng: &mut impl Rng) -> (Vec<i64>, i64) {
    let e = q.len() as i64;
    let scale = 4 * e * e * m_bound * m_bound;
    let scaled = q
        .iter()
        .map(|&qe| qe * scale + rng.gen_range(1..=2 * e * m_bound))
        .collect();
    (scaled, scale)
}

#[derive(Debug, Clone)]
pub struct FlowLP {
    pub lp: LPInstance,
    /// cost bound of the scaled instance, `M̃ = 8|E|²M³`
    pub m_tilde: f64,
    /// slack penalty `λ = 440|E|⁴M̃²M³`
    pub lambda: f64,
    pub scale: i64,
    /// vertices except the source, in increasing original id
    pub reduced: Vec<usize>,
    /// sink position within `reduced`
    pub t_idx: usize,
    /// arcs in reduced coordinates; `None` marks an endpoint equal to `s`
    pub arcs_reduced: Vec<(Option<usize>, Option<usize>)>,
}

/// Assemble the LP `min q̃ᵀx + λ(1ᵀy+1ᵀz) − 2|V|M̃F` over variables
/// `[x; y; z; F]` subject to `Bx + y − z = F e_t` and box bounds, together
/// with the interior starting point `F = |V|M`, `x = c/2`,
/// `y = 2|V|M·1 − (Bc/2)⁻ + Fe_t`, `z = 2|V|M·1 + (Bc/2)⁺`.
pub fn build_flow_lp(inst: &FlowInstance, q_scaled: &[i64], scale: i64) -> Result<FlowLP, McmfError> {
    inst.validate()?;
    if !inst.is_connected() {
        return Err(McmfError::DisconnectedGraph);
    }
    let ne = inst.arcs.len();
    let nv = inst.n - 1;
    let m_big = inst.m_bound() as f64;
    let vm = inst.n as f64 * m_big;
    let m_tilde = 8.0 * (ne as f64).powi(2) * m_big.powi(3);
    // a unit of slack can add one unit of flow value (reward 2|V|M̃) and
    // bypass at most |V|M̃ of routing cost, so 8|V|M̃ dominates; the textbook
    // 440|E|⁴M̃²M³ choice forces slack margins below f64 resolution
    let lambda = 8.0 * inst.n as f64 * m_tilde;

    let reduced: Vec<usize> = (0..inst.n).filter(|&v| v != inst.s).collect();
    let idx_of = |v: usize| -> Option<usize> {
        if v == inst.s {
            None
        } else {
            Some(reduced.iter().position(|&w| w == v).expect("reduced vertex"))
        }
    };
    let t_idx = idx_of(inst.t).expect("t is not the source");
    let arcs_reduced: Vec<(Option<usize>, Option<usize>)> = inst
        .arcs
        .iter()
        .map(|a| (idx_of(a.from), idx_of(a.to)))
        .collect();

    let m_lp = ne + 2 * nv + 1;
    // A is (variables × constraints); row e of the incidence block carries
    // +1 at the arc head and −1 at the tail, with the source row dropped
    let mut a = DMatrix::zeros(m_lp, nv);
    for (e, &(from, to)) in arcs_reduced.iter().enumerate() {
        if let Some(u) = from {
            a[(e, u)] = -1.0;
        }
        if let Some(v) = to {
            a[(e, v)] = 1.0;
        }
    }
    for i in 0..nv {
        a[(ne + i, i)] = 1.0;
        a[(ne + nv + i, i)] = -1.0;
    }
    a[(ne + 2 * nv, t_idx)] = -1.0;

    let mut c = DVector::zeros(m_lp);
    for e in 0..ne {
        c[e] = q_scaled[e] as f64;
    }
    for i in 0..nv {
        c[ne + i] = lambda;
        c[ne + nv + i] = lambda;
    }
    c[ne + 2 * nv] = -2.0 * inst.n as f64 * m_tilde;

    let mut l = DVector::zeros(m_lp);
    let mut u = DVector::zeros(m_lp);
    // the y/z slack bound is 4|V|M widened by |E|M so the prescribed start
    // stays strictly interior on dense graphs
    let slack_hi = 4.0 * vm + ne as f64 * m_big;
    for e in 0..ne {
        u[e] = inst.arcs[e].cap as f64;
    }
    for i in 0..2 * nv {
        u[ne + i] = slack_hi;
    }
    u[ne + 2 * nv] = 2.0 * vm;
    let _ = &mut l; // all lower bounds are zero

    let f0 = vm;
    let mut x0 = DVector::zeros(m_lp);
    for e in 0..ne {
        x0[e] = inst.arcs[e].cap as f64 / 2.0;
    }
    // Bc/2 over the reduced vertices
    let mut bx = vec![0.0f64; nv];
    for (e, &(from, to)) in arcs_reduced.iter().enumerate() {
        let half = inst.arcs[e].cap as f64 / 2.0;
        if let Some(u) = from {
            bx[u] -= half;
        }
        if let Some(v) = to {
            bx[v] += half;
        }
    }
    for i in 0..nv {
        let neg = bx[i].min(0.0);
        let pos = bx[i].max(0.0);
        x0[ne + i] = 2.0 * vm - neg + if i == t_idx { f0 } else { 0.0 };
        x0[ne + nv + i] = 2.0 * vm + pos;
    }
    x0[ne + 2 * nv] = f0;

    let lp = LPInstance {
        a,
        b: DVector::zeros(nv),
        c,
        l,
        u,
        x0,
    };
    lp.validate().map_err(McmfError::Lp)?;
    Ok(FlowLP {
        lp,
        m_tilde,
        lambda,
        scale,
        reduced,
        t_idx,
        arcs_reduced,
    })
}

/// Inner solver for the flow LP: splits the diagonal into the
/// `B D₁ Bᵀ + D₂ + D₃ + e_t D₄ e_tᵀ` blocks and dispatches to the
/// Gremban-reduced Laplacian solver. Arcs incident to the source have a
/// single incidence entry, so their `D₁` mass folds into the diagonal.
pub struct FlowInner {
    pub arcs_reduced: Vec<(Option<usize>, Option<usize>)>,
    pub nv: usize,
    pub t_idx: usize,
    last_rounds: Cell<u64>,
}

impl FlowInner {
    pub fn new(flp: &FlowLP) -> Self {
        FlowInner {
            arcs_reduced: flp.arcs_reduced.clone(),
            nv: flp.reduced.len(),
            t_idx: flp.t_idx,
            last_rounds: Cell::new(0),
        }
    }

    pub fn blocks(&self, d: &DVector<f64>) -> FlowBlocks {
        let ne = self.arcs_reduced.len();
        let mut arcs = Vec::new();
        let mut d1 = Vec::new();
        let mut d2: Vec<f64> = d.iter().skip(ne).take(self.nv).copied().collect();
        let d3: Vec<f64> = d.iter().skip(ne + self.nv).take(self.nv).copied().collect();
        for (e, &(from, to)) in self.arcs_reduced.iter().enumerate() {
            match (from, to) {
                (Some(u), Some(v)) => {
                    arcs.push((u, v));
                    d1.push(d[e]);
                }
                (Some(u), None) => d2[u] += d[e],
                (None, Some(v)) => d2[v] += d[e],
                (None, None) => unreachable!("self-loop at the source"),
            }
        }
        FlowBlocks {
            arcs,
            d1,
            d2,
            d3,
            d4: d[ne + 2 * self.nv],
            t: self.t_idx,
        }
    }
}

impl InnerSolver for FlowInner {
    fn solve(
        &self,
        _a: &DMatrix<f64>,
        d: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>, LpError> {
        let blocks = self.blocks(d);
        // clamped below: past ~10 vertices the nv^-10 target drops beyond
        // what f64 residuals can certify and Chebyshev would report
        // non-convergence
        let eps = (self.nv.max(2) as f64).powi(-10).clamp(1e-12, 1e-10);
        let normal = crate::lapsolve::assemble_flow_normal_matrix(self.nv, &blocks);
        let floor = 1e-14 * rhs.norm().max(1.0);
        let mut rounds = 1u64;
        let mut x = DVector::zeros(self.nv);
        // Chebyshev solve plus iterative refinement: the relative tolerance
        // above leaves an absolute error proportional to ‖rhs‖ (which
        // carries the λ slack scale), and that drift accumulates across
        // centering steps until the iterate leaves the affine constraint
        // subspace
        if let Ok((x0, r0)) = flow_normal_equations_solve(self.nv, &blocks, rhs, eps) {
            x = x0;
            rounds = r0;
            for _ in 0..8 {
                let resid = rhs - &normal * &x;
                if resid.norm() <= floor {
                    break;
                }
                let Ok((dx, r2)) = flow_normal_equations_solve(self.nv, &blocks, &resid, eps)
                else {
                    break;
                };
                x += dx;
                rounds += r2;
            }
        }
        // near the boundary of the box the diagonal spans enough orders of
        // magnitude that the preconditioned iteration can stall; fall back
        // to a direct factorization of the (small) normal matrix so one bad
        // inner solve cannot poison the whole attempt
        if (rhs - &normal * &x).norm() > 1e-9 * rhs.norm().max(1.0) {
            x = match normal.clone().cholesky() {
                Some(chol) => chol.solve(rhs),
                None => normal
                    .clone()
                    .lu()
                    .solve(rhs)
                    .ok_or(LpError::RankDeficient)?,
            };
        }
        self.last_rounds.set(rounds);
        Ok(x)
    }

    fn rounds_per_solve(&self) -> u64 {
        self.last_rounds.get().max(1)
    }
}

// ---------------------------------------------------------------------------
// Rounding and the end-to-end solver.
// ---------------------------------------------------------------------------

/// `x̃ = (1−ε′)x` with `ε′ = 1/(40|E|²M̃M)`, rounded to the nearest integer
/// and validated: conservation, capacities, and maximality (no augmenting
/// path in the residual graph).
pub fn round_to_exact(
    x_lp: &DVector<f64>,
    inst: &FlowInstance,
    flp: &FlowLP,
) -> Result<IntegralFlow, McmfError> {
    let ne = inst.arcs.len();
    let m_big = inst.m_bound() as f64;
    let eps_prime = 1.0 / (40.0 * (ne as f64).powi(2) * flp.m_tilde * m_big);
    let f: Vec<i64> = (0..ne)
        .map(|e| ((1.0 - eps_prime) * x_lp[e]).round() as i64)
        .collect();
    for (e, a) in inst.arcs.iter().enumerate() {
        if f[e] < 0 || f[e] > a.cap {
            return Err(McmfError::RoundingInfeasible("capacity"));
        }
    }
    let mut net = vec![0i64; inst.n];
    for (e, a) in inst.arcs.iter().enumerate() {
        net[a.from] -= f[e];
        net[a.to] += f[e];
    }
    for v in 0..inst.n {
        if v != inst.s && v != inst.t && net[v] != 0 {
            return Err(McmfError::RoundingInfeasible("conservation"));
        }
    }
    // maximality: BFS for an augmenting path in the residual graph
    let mut adj = vec![Vec::new(); inst.n];
    for (e, a) in inst.arcs.iter().enumerate() {
        if f[e] < a.cap {
            adj[a.from].push(a.to);
        }
        if f[e] > 0 {
            adj[a.to].push(a.from);
        }
    }
    let mut seen = vec![false; inst.n];
    seen[inst.s] = true;
    let mut queue = VecDeque::from([inst.s]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    if seen[inst.t] {
        return Err(McmfError::RoundingInfeasible("maximality"));
    }
    let (value, cost) = flow_stats(inst, &f);
    Ok(IntegralFlow { f, value, cost })
}

#[derive(Debug, Clone)]
pub struct McmfOutcome {
    pub flow: IntegralFlow,
    pub rounds: u64,
    pub retries: usize,
    pub centering_steps: usize,
}

/// Perturb, solve the LP to the rounding precision, round, and verify; on a
/// verification failure draw a fresh perturbation, up to `O(log n)` retries.
/// Among verified runs the minimum-cost flow of maximum value wins.
pub fn min_cost_max_flow(inst: &FlowInstance, seed: u64) -> Result<McmfOutcome, McmfError> {
    min_cost_max_flow_with(inst, seed, Profile::Practical)
}

/// As [`min_cost_max_flow`], with an explicit solver profile.
pub fn min_cost_max_flow_with(
    inst: &FlowInstance,
    seed: u64,
    profile: Profile,
) -> Result<McmfOutcome, McmfError> {
    inst.validate()?;
    let m_big = inst.m_bound();
    let q: Vec<i64> = inst.arcs.iter().map(|a| a.cost).collect();
    let attempts = 4 + 2 * (inst.n as f64).log2().ceil() as usize;
    let mut best: Option<McmfOutcome> = None;
    let mut rounds_total = 0u64;
    let mut steps_total = 0usize;
    for attempt in 0..attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64).wrapping_mul(0x9e3779b9));
        let (q_scaled, scale) = perturb_costs(&q, m_big, &mut rng);
        let flp = build_flow_lp(inst, &q_scaled, scale)?;
        let m_lp = flp.lp.m();
        // paper precision 1/(12M) in original cost units, tightened for
        // rounding slack and expressed in the scaled units of q̃
        let eps_orig = (1.0 / (24.0 * m_big as f64)).min((m_lp as f64).powi(-3));
        let eps_scaled = eps_orig * scale as f64;
        let inner = FlowInner::new(&flp);
        let outcome = match lp_solve(&flp.lp, eps_scaled, profile, &inner, seed + attempt as u64) {
            Ok(o) => o,
            Err(_) => continue,
        };
        rounds_total += outcome.rounds;
        steps_total += outcome.centering_steps;
        let Ok(flow) = round_to_exact(&outcome.x, inst, &flp) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => {
                flow.value > b.flow.value
                    || (flow.value == b.flow.value && flow.cost < b.flow.cost)
            }
        };
        if better {
            best = Some(McmfOutcome {
                flow,
                rounds: rounds_total,
                retries: attempt,
                centering_steps: steps_total,
            });
        }
        if best.is_some() {
            break;
        }
    }
    match best {
        Some(mut o) => {
            o.rounds = rounds_total;
            o.centering_steps = steps_total;
            Ok(o)
        }
        None => Err(McmfError::RetriesExhausted(attempts)),
    }
}

// ---------------------------------------------------------------------------
// Ingestion.
// ---------------------------------------------------------------------------

/// DIMACS minimum-cost-flow format: `p min N M`, `n id supply` designating
/// the source (positive supply) and sink (negative), and
/// `a from to low cap cost` arcs (1-based, `low` must be 0). The supply
/// magnitude is ignored; we compute the maximum flow.
pub fn parse_dimacs_min(text: &str) -> Result<FlowInstance, McmfError> {
    let mut n = None;
    let mut s = None;
    let mut t = None;
    let mut arcs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let fail = |msg: String| McmfError::Parse(format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first() {
            None | Some(&"c") => {}
            Some(&"p") => {
                if fields.len() != 4 || fields[1] != "min" {
                    return Err(fail("expected `p min N M`".into()));
                }
                n = Some(
                    fields[2]
                        .parse::<usize>()
                        .map_err(|e| fail(e.to_string()))?,
                );
            }
            Some(&"n") => {
                if fields.len() != 3 {
                    return Err(fail("expected `n id supply`".into()));
                }
                let id: usize = fields[1].parse().map_err(|e: std::num::ParseIntError| fail(e.to_string()))?;
                let supply: i64 = fields[2].parse().map_err(|e: std::num::ParseIntError| fail(e.to_string()))?;
                if supply > 0 {
                    s = Some(id - 1);
                } else if supply < 0 {
                    t = Some(id - 1);
                }
            }
            Some(&"a") => {
                if fields.len() != 6 {
                    return Err(fail("expected `a from to low cap cost`".into()));
                }
                let parse = |f: &str| -> Result<i64, McmfError> {
                    f.parse().map_err(|e: std::num::ParseIntError| {
                        McmfError::Parse(format!("line {}: {e}", lineno + 1))
                    })
                };
                if parse(fields[3])? != 0 {
                    return Err(fail("nonzero lower bounds are unsupported".into()));
                }
                arcs.push(Arc {
                    from: parse(fields[1])? as usize - 1,
                    to: parse(fields[2])? as usize - 1,
                    cap: parse(fields[4])?,
                    cost: parse(fields[5])?,
                });
            }
            Some(other) => {
                return Err(fail(format!("unknown record `{other}`")));
            }
        }
    }
    let inst = FlowInstance {
        n: n.ok_or_else(|| McmfError::Parse("missing `p min` header".into()))?,
        arcs,
        s: s.ok_or_else(|| McmfError::Parse("missing source `n` record".into()))?,
        t: t.ok_or_else(|| McmfError::Parse("missing sink `n` record".into()))?,
    };
    inst.validate()?;
    Ok(inst)
}

/// Plain edge list: a header `n s t` (0-based source and sink) followed by
/// `from to cap cost` lines; `#` starts a comment.
pub fn parse_flow_edge_list(text: &str) -> Result<FlowInstance, McmfError> {
    let mut header = None;
    let mut arcs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Result<Vec<i64>, _> = line.split_whitespace().map(str::parse).collect();
        let nums =
            nums.map_err(|e| McmfError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if header.is_none() {
            if nums.len() != 3 {
                return Err(McmfError::Parse("header must be `n s t`".into()));
            }
            header = Some((nums[0] as usize, nums[1] as usize, nums[2] as usize));
        } else {
            if nums.len() != 4 {
                return Err(McmfError::Parse(format!(
                    "line {}: expected `from to cap cost`",
                    lineno + 1
                )));
            }
            arcs.push(Arc {
                from: nums[0] as usize,
                to: nums[1] as usize,
                cap: nums[2],
                cost: nums[3],
            });
        }
    }
    let (n, s, t) = header.ok_or_else(|| McmfError::Parse("empty input".into()))?;
    let inst = FlowInstance { n, arcs, s, t };
    inst.validate()?;
    Ok(inst)
}
