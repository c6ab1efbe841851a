//! Baswana–Sen style spanners on probabilistic-edge graphs, run inside the
//! Broadcast CONGEST simulator.
//!
//! Each edge carries a survival probability `p_e`. Whether an edge exists is
//! sampled on the fly by exactly one endpoint, the first time some vertex's
//! `connect` scan reaches it, and the outcome is communicated implicitly: a
//! vertex that hears which neighbor was chosen (and at which weight) can
//! deduce that every cheaper candidate it offered was rejected. The decided
//! edges are split into `F⁺` (exist, spanner edges) and `F⁻` (decided
//! non-existent). With `p ≡ 1` the computation reduces to the plain
//! Baswana–Sen algorithm, available here as a centralized oracle.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::graph::ProbWeightedGraph;
use crate::netsim::{vertex_rng, Broadcast, Network};

/// Normalized undirected edge key, `u < v`.
pub type EdgeKey = (usize, usize);

fn key(u: usize, v: usize) -> EdgeKey {
    (u.min(v), u.max(v))
}

/// One probabilistic edge decision, for the test-side uniqueness and
/// implicit-communication checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub edge: EdgeKey,
    pub decider: usize,
    pub phase: usize,
    pub step: &'static str,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SpannerRun {
    pub f_plus: BTreeSet<EdgeKey>,
    pub f_minus: BTreeSet<EdgeKey>,
    /// Edge -> (tail, head); the tail is the endpoint that added the edge
    /// (lower id wins when both endpoints added it).
    pub orientation: BTreeMap<EdgeKey, (usize, usize)>,
    pub rounds: u64,
    /// The underlying network's message log.
    pub log: Vec<crate::netsim::LogEntry>,
    pub ledger: Vec<Decision>,
    /// Receiver-side record of additions to each vertex's `F⁻` view, used to
    /// check implicit-communication soundness against the sender-side ledger.
    pub receiver_minus: Vec<(usize, usize)>, // (receiver u, rejected neighbor v)
}

/// Stream tags for the per-vertex random streams. Cluster-marking bits are a
/// pure function of `(seed, salt, phase, center)` so the centralized oracle
/// can consume the identical stream.
const STREAM_MARK: u64 = 0x10_000;
const STREAM_DECIDE: u64 = 0x20_000;

pub fn cluster_marked(seed: u64, salt: u64, phase: usize, center: usize, prob: f64) -> bool {
    let mut rng = vertex_rng(seed, center as u64, STREAM_MARK + salt * 251 + phase as u64);
    rng.gen::<f64>() < prob
}

#[derive(Debug, Clone)]
enum Msg {
    Mark {
        cluster: usize,
        marked: bool,
    },
    /// Step 2: either `(⊥, W=∞)` or `(cluster of u, u, w(u,v))`.
    JoinMarked {
        joined: Option<(usize, usize, f64)>,
    },
    /// Steps 3.x / 4.x: per-target-cluster connect result.
    ClusterConnect {
        target_cluster: usize,
        accepted: Option<(usize, f64)>,
    },
}

struct VertexLocal {
    /// Current cluster center id; `None` once the vertex left clustering.
    cluster: Option<usize>,
    own_marked: bool,
    /// `W^{(i)}_v`: weight of this phase's connection to a marked cluster
    /// (`+∞` when none).
    w_conn: f64,
    /// Last heard cluster of each neighbor.
    neighbor_cluster: BTreeMap<usize, Option<usize>>,
    /// `W^{(i)}_u` heard from each neighbor this phase.
    neighbor_w: BTreeMap<usize, f64>,
    marked_clusters: BTreeSet<usize>,
    f_plus: BTreeSet<usize>,
    f_minus: BTreeSet<usize>,
    /// Pending cluster join, applied at the end of the phase.
    pending_join: Option<(usize, usize)>, // (new cluster, parent)
    /// Whether this vertex already knows (and has broadcast) its cluster mark.
    knows_mark: bool,
    has_broadcast_mark: bool,
}

struct Driver<'g> {
    g: &'g ProbWeightedGraph,
    k: usize,
    seed: u64,
    salt: u64,
    net: Network,
    locals: Vec<VertexLocal>,
    adj: Vec<Vec<(usize, f64)>>,
    p_of: BTreeMap<EdgeKey, f64>,
    run: SpannerRun,
    id_bits: u64,
    weight_bits: u64,
    decision_rngs: Vec<rand_chacha::ChaCha8Rng>,
}

impl<'g> Driver<'g> {
    fn new(g: &'g ProbWeightedGraph, k: usize, seed: u64, salt: u64) -> Self {
        let n = g.base.n();
        let id_bits = (usize::BITS - n.max(2).leading_zeros()) as u64;
        let max_w = g.base.max_weight().max(1.0);
        let weight_bits = (max_w.log2().ceil() as u64).max(1) + 1;
        let bandwidth = crate::netsim::default_bandwidth(n);
        let net = Network::new_congest(n, &g.base.edge_pairs(), bandwidth, seed);
        let adj = g.base.adjacency();
        let p_of = g
            .base
            .edges()
            .iter()
            .zip(&g.p)
            .map(|(&(u, v, _), &p)| (key(u, v), p))
            .collect();
        let locals = (0..n)
            .map(|v| VertexLocal {
                cluster: Some(v),
                own_marked: false,
                w_conn: f64::INFINITY,
                neighbor_cluster: adj[v].iter().map(|&(u, _)| (u, Some(u))).collect(),
                neighbor_w: BTreeMap::new(),
                marked_clusters: BTreeSet::new(),
                f_plus: BTreeSet::new(),
                f_minus: BTreeSet::new(),
                pending_join: None,
                knows_mark: false,
                has_broadcast_mark: false,
            })
            .collect();
        let decision_rngs = (0..n)
            .map(|v| vertex_rng(seed, v as u64, STREAM_DECIDE + salt))
            .collect();
        Driver {
            g,
            k,
            seed,
            salt,
            net,
            locals,
            adj,
            p_of,
            run: SpannerRun::default(),
            id_bits,
            weight_bits,
            decision_rngs,
        }
    }

    fn weight(&self, u: usize, v: usize) -> f64 {
        self.adj[u]
            .iter()
            .find(|&&(x, _)| x == v)
            .map(|&(_, w)| w)
            .expect("edge exists")
    }

    /// Broadcast one message slot of the given payload width, charging
    /// `ceil(bits / B)` rounds, and return the inboxes.
    fn slot(&mut self, msgs: BTreeMap<usize, Msg>, bits: u64, tag: &'static str) -> Vec<Vec<(usize, Msg)>> {
        if msgs.is_empty() {
            return vec![Vec::new(); self.g.base.n()];
        }
        let bandwidth = self.net.bandwidth_bits();
        let first = bits.min(bandwidth);
        let broadcasts: BTreeMap<usize, Broadcast<Msg>> = msgs
            .into_iter()
            .map(|(v, m)| {
                (
                    v,
                    Broadcast {
                        payload: m,
                        bits: first,
                        tag,
                    },
                )
            })
            .collect();
        let inboxes = self.net.run_round(&broadcasts).expect("payload fits after split");
        if bits > bandwidth {
            self.net.charge_broadcast(bits - bandwidth);
        }
        inboxes
    }

    /// Connect: scan candidates in `(weight, id)` order; each undecided edge
    /// is accepted with its survival probability. Already-accepted (`F⁺`)
    /// edges exist deterministically. Returns the accepted neighbor (if any)
    /// and the candidates rejected before it.
    fn connect(
        &mut self,
        v: usize,
        candidates: Vec<(f64, usize)>,
        phase: usize,
        step: &'static str,
    ) -> (Option<usize>, Vec<usize>) {
        let f_plus = self.locals[v].f_plus.clone();
        let p_of = &self.p_of;
        let (accepted, rejected, samples) = connect_scan(
            candidates,
            |u| f_plus.contains(&u),
            |u| p_of[&key(u, v)],
            &mut self.decision_rngs[v],
        );
        for (u, ok) in samples {
            self.run.ledger.push(Decision {
                edge: key(u, v),
                decider: v,
                phase,
                step,
                accepted: ok,
            });
        }
        (accepted, rejected)
    }

    fn add_plus(&mut self, adder: usize, other: usize) {
        let e = key(adder, other);
        self.locals[adder].f_plus.insert(other);
        self.locals[other].f_plus.insert(adder);
        self.run.f_plus.insert(e);
        match self.run.orientation.get(&e).copied() {
            None => {
                self.run.orientation.insert(e, (adder, other));
            }
            Some((tail, head)) => {
                // both endpoints added it: lower id becomes the tail
                if adder < tail {
                    self.run.orientation.insert(e, (adder, other));
                } else {
                    self.run.orientation.insert(e, (tail, head));
                }
            }
        }
    }

    fn add_minus_sender(&mut self, v: usize, rejected: &[usize]) {
        for &u in rejected {
            self.locals[v].f_minus.insert(u);
            self.run.f_minus.insert(key(u, v));
        }
    }

    fn add_minus_receiver(&mut self, u: usize, v: usize) {
        self.locals[u].f_minus.insert(v);
        self.run.f_minus.insert(key(u, v));
        self.run.receiver_minus.push((u, v));
    }

    fn live_neighbors(&self, v: usize) -> Vec<(usize, f64)> {
        self.adj[v]
            .iter()
            .filter(|&&(u, _)| !self.locals[v].f_minus.contains(&u))
            .copied()
            .collect()
    }

    /// Step 1: centers sample the mark and the result trickles down the
    /// cluster tree; every broadcast is also overheard by neighbors, so each
    /// vertex learns the marks of its neighboring clusters.
    fn step_mark(&mut self, phase: usize, mark_prob: f64) {
        let n = self.g.base.n();
        for v in 0..n {
            let l = &mut self.locals[v];
            l.marked_clusters.clear();
            l.neighbor_w.clear();
            l.w_conn = f64::INFINITY;
            l.pending_join = None;
            l.knows_mark = false;
            l.has_broadcast_mark = false;
            l.own_marked = false;
        }
        for v in 0..n {
            if self.locals[v].cluster == Some(v) {
                let marked = cluster_marked(self.seed, self.salt, phase, v, mark_prob);
                self.locals[v].knows_mark = true;
                self.locals[v].own_marked = marked;
            }
        }
        // Tree depth at phase i is at most i-1; with the center's initial
        // broadcast this takes `phase` rounds.
        for _ in 0..phase {
            let mut msgs = BTreeMap::new();
            for v in 0..n {
                let l = &self.locals[v];
                if l.knows_mark && !l.has_broadcast_mark {
                    if let Some(c) = l.cluster {
                        msgs.insert(
                            v,
                            Msg::Mark {
                                cluster: c,
                                marked: l.own_marked,
                            },
                        );
                    }
                }
            }
            for v in 0..n {
                if self.locals[v].knows_mark {
                    self.locals[v].has_broadcast_mark = true;
                }
            }
            let inboxes = self.slot(msgs, self.id_bits + 1, "spanner-mark");
            for v in 0..n {
                for (sender, msg) in &inboxes[v] {
                    if let Msg::Mark { cluster, marked } = msg {
                        if *marked {
                            self.locals[v].marked_clusters.insert(*cluster);
                        }
                        // learn own cluster's mark from any fellow member
                        if Some(*cluster) == self.locals[v].cluster && !self.locals[v].knows_mark {
                            self.locals[v].knows_mark = true;
                            self.locals[v].own_marked = *marked;
                        }
                        let _ = sender;
                    }
                }
            }
        }
    }

    /// Step 2: vertices of unmarked clusters try to connect to a marked
    /// cluster; the broadcast `(ID(X_u), u, W)` or `(⊥, ∞)` lets marked
    /// neighbors deduce rejections.
    fn step_connect_marked(&mut self, phase: usize) {
        let n = self.g.base.n();
        let mut msgs: BTreeMap<usize, Msg> = BTreeMap::new();
        for v in 0..n {
            let in_unmarked_cluster =
                self.locals[v].cluster.is_some() && !self.locals[v].own_marked;
            if !in_unmarked_cluster {
                continue;
            }
            let candidates: Vec<(f64, usize)> = self
                .live_neighbors(v)
                .into_iter()
                .filter(|&(u, _)| {
                    self.locals[v]
                        .neighbor_cluster
                        .get(&u)
                        .copied()
                        .flatten()
                        .is_some_and(|c| self.locals[v].marked_clusters.contains(&c))
                })
                .map(|(u, w)| (w, u))
                .collect();
            if candidates.is_empty() {
                // nothing to communicate; silence means W = ∞
                continue;
            }
            let (accepted, rejected) = self.connect(v, candidates, phase, "step2");
            self.add_minus_sender(v, &rejected);
            match accepted {
                Some(u) => {
                    let w = self.weight(u, v);
                    self.add_plus(v, u);
                    let cluster_u = self.locals[v].neighbor_cluster[&u].expect("marked neighbor");
                    self.locals[v].pending_join = Some((cluster_u, u));
                    self.locals[v].w_conn = w;
                    msgs.insert(
                        v,
                        Msg::JoinMarked {
                            joined: Some((cluster_u, u, w)),
                        },
                    );
                }
                None => {
                    msgs.insert(v, Msg::JoinMarked { joined: None });
                }
            }
        }
        let bits = 1 + 2 * self.id_bits + self.weight_bits;
        let inboxes = self.slot(msgs, bits, "spanner-step2");
        for u in 0..n {
            for idx in 0..inboxes[u].len() {
                let (v, msg) = inboxes[u][idx].clone();
                let Msg::JoinMarked { joined } = msg else { continue };
                // track this phase's W; the sender's new cluster only takes
                // effect next phase, so neighbor views update at phase end
                match joined {
                    Some((_, _, w)) => {
                        self.locals[u].neighbor_w.insert(v, w);
                    }
                    None => {
                        self.locals[u].neighbor_w.insert(v, f64::INFINITY);
                    }
                }
                // implicit F± updates for candidates u of v
                let was_candidate = self.locals[u].cluster.is_some()
                    && self.locals[u].own_marked
                    && !self.locals[u].f_minus.contains(&v);
                if !was_candidate {
                    continue;
                }
                let w_uv = self.weight(u, v);
                match joined {
                    None => self.add_minus_receiver(u, v),
                    Some((_, chosen, w_chosen)) => {
                        if chosen == u {
                            self.locals[u].f_plus.insert(v);
                        } else if w_chosen > w_uv || (w_chosen == w_uv && chosen > u) {
                            self.add_minus_receiver(u, v);
                        }
                    }
                }
            }
        }
    }

    /// Steps 3.1 / 3.2 and 4.1 / 4.2 / 4.3 share this shape: each vertex in
    /// `actors` runs one Connect per qualifying target cluster, serialized in
    /// cluster-id order, and neighbors in the target cluster deduce their
    /// F± updates from the broadcast.
    #[allow(clippy::too_many_arguments)]
    fn step_cluster_connect(
        &mut self,
        phase: usize,
        step: &'static str,
        actors: &[usize],
        targets: &dyn Fn(&Self, usize) -> Vec<usize>,
        weight_filter: &dyn Fn(&Self, usize) -> f64,
    ) {
        let n = self.g.base.n();
        // per-actor queue of target clusters, in cluster-id order
        let mut queues: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut max_len = 0usize;
        for &v in actors {
            let mut ts = targets(self, v);
            ts.sort_unstable();
            ts.dedup();
            max_len = max_len.max(ts.len());
            queues.insert(v, ts);
        }
        let bits = 1 + 2 * self.id_bits + self.weight_bits;
        for slot_idx in 0..max_len {
            let mut msgs: BTreeMap<usize, Msg> = BTreeMap::new();
            for (&v, ts) in &queues.clone() {
                let Some(&target) = ts.get(slot_idx) else { continue };
                let w_cap = weight_filter(self, v);
                let candidates: Vec<(f64, usize)> = self
                    .live_neighbors(v)
                    .into_iter()
                    .filter(|&(u, w)| {
                        w < w_cap
                            && self.locals[v].neighbor_cluster.get(&u).copied().flatten()
                                == Some(target)
                    })
                    .map(|(u, w)| (w, u))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let (accepted, rejected) = self.connect(v, candidates, phase, step);
                self.add_minus_sender(v, &rejected);
                let accepted = accepted.map(|u| {
                    let w = self.weight(u, v);
                    self.add_plus(v, u);
                    (u, w)
                });
                msgs.insert(
                    v,
                    Msg::ClusterConnect {
                        target_cluster: target,
                        accepted,
                    },
                );
            }
            let inboxes = self.slot(msgs, bits, step);
            for u in 0..n {
                for idx in 0..inboxes[u].len() {
                    let (v, msg) = inboxes[u][idx].clone();
                    let Msg::ClusterConnect {
                        target_cluster,
                        accepted,
                    } = msg
                    else {
                        continue;
                    };
                    let in_target = self.locals[u].cluster == Some(target_cluster);
                    if !in_target || self.locals[u].f_minus.contains(&v) {
                        continue;
                    }
                    let w_uv = self.weight(u, v);
                    // u must have been in v's candidate set
                    let w_cap = self.locals[u]
                        .neighbor_w
                        .get(&v)
                        .copied()
                        .unwrap_or(f64::INFINITY);
                    if step.starts_with("step3") && w_uv >= w_cap {
                        continue;
                    }
                    match accepted {
                        None => self.add_minus_receiver(u, v),
                        Some((chosen, w_chosen)) => {
                            if chosen == u {
                                self.locals[u].f_plus.insert(v);
                            } else if w_chosen > w_uv || (w_chosen == w_uv && chosen > u) {
                                self.add_minus_receiver(u, v);
                            }
                        }
                    }
                }
            }
        }
    }

    fn unmarked_cluster_vertices(&self) -> Vec<usize> {
        (0..self.g.base.n())
            .filter(|&v| self.locals[v].cluster.is_some() && !self.locals[v].own_marked)
            .collect()
    }

    fn neighbor_clusters_where(
        &self,
        v: usize,
        pred: impl Fn(usize) -> bool,
        w_cap: f64,
    ) -> Vec<usize> {
        self.live_neighbors(v)
            .into_iter()
            .filter(|&(_, w)| w < w_cap)
            .filter_map(|(u, _)| self.locals[v].neighbor_cluster.get(&u).copied().flatten())
            .filter(|&c| pred(c))
            .collect()
    }

    fn run(mut self) -> SpannerRun {
        let n = self.g.base.n();
        if self.g.base.m() == 0 {
            return self.run;
        }
        let mark_prob = (n as f64).powf(-1.0 / self.k as f64);

        for phase in 1..self.k {
            self.step_mark(phase, mark_prob);

            self.step_connect_marked(phase);

            // Step 3.1: connect to unmarked neighboring clusters of smaller id
            let actors = self.unmarked_cluster_vertices();
            for pass in 0..2 {
                let actors = actors.clone();
                self.step_cluster_connect(
                    phase,
                    if pass == 0 { "step3.1" } else { "step3.2" },
                    &actors,
                    &move |d: &Self, v: usize| {
                        let own = d.locals[v].cluster.expect("actor is clustered");
                        let w_cap = d.locals[v].w_conn;
                        d.neighbor_clusters_where(
                            v,
                            |c| {
                                !d.locals[v].marked_clusters.contains(&c)
                                    && c != own
                                    && if pass == 0 { c < own } else { c > own }
                            },
                            w_cap,
                        )
                    },
                    &|d: &Self, v: usize| d.locals[v].w_conn,
                );
            }

            // end of phase: apply the step-2 joins
            for v in 0..n {
                match self.locals[v].pending_join.take() {
                    Some((cluster, _parent)) => {
                        self.locals[v].cluster = Some(cluster);
                    }
                    None => {
                        // vertices of unmarked clusters that failed to join
                        // leave clustering
                        if self.locals[v].cluster.is_some() && !self.locals[v].own_marked {
                            self.locals[v].cluster = None;
                            // neighbors heard no join; they see the silence
                        }
                    }
                }
            }
            // neighbors that heard no join message mark the sender unclustered
            for v in 0..n {
                let nbrs: Vec<usize> = self.adj[v].iter().map(|&(u, _)| u).collect();
                for u in nbrs {
                    let u_cluster = self.locals[u].cluster;
                    self.locals[v].neighbor_cluster.insert(u, u_cluster);
                }
            }
        }

        // Step 4: connect every vertex to all neighboring R_k clusters.
        // R_k survivors are exactly the vertices still clustered; their marks
        // are no longer relevant.
        let clustered: Vec<usize> = (0..n).filter(|&v| self.locals[v].cluster.is_some()).collect();
        let unclustered: Vec<usize> = (0..n).filter(|&v| self.locals[v].cluster.is_none()).collect();

        self.step_cluster_connect(
            self.k,
            "step4.1",
            &unclustered,
            &|d: &Self, v: usize| d.neighbor_clusters_where(v, |_| true, f64::INFINITY),
            &|_, _| f64::INFINITY,
        );
        for pass in 0..2 {
            let actors = clustered.clone();
            self.step_cluster_connect(
                self.k,
                if pass == 0 { "step4.2" } else { "step4.3" },
                &actors,
                &move |d: &Self, v: usize| {
                    let own = d.locals[v].cluster.expect("actor is clustered");
                    d.neighbor_clusters_where(
                        v,
                        |c| c != own && if pass == 0 { c < own } else { c > own },
                        f64::INFINITY,
                    )
                },
                &|_, _| f64::INFINITY,
            );
        }

        self.run.rounds = self.net.rounds();
        self.run.log = self.net.log().to_vec();
        self.run
    }
}

/// The Connect primitive: scan `candidates` in `(weight, id)` order,
/// accepting each undecided edge with its survival probability. Edges whose
/// existence was already decided positively are accepted without a fresh
/// sample. Returns the accepted neighbor, the candidates rejected before it,
/// and the raw sample trail `(neighbor, accepted)`.
pub fn connect_scan(
    mut candidates: Vec<(f64, usize)>,
    in_f_plus: impl Fn(usize) -> bool,
    p_of: impl Fn(usize) -> f64,
    rng: &mut impl Rng,
) -> (Option<usize>, Vec<usize>, Vec<(usize, bool)>) {
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let mut rejected = Vec::new();
    let mut samples = Vec::new();
    for (_, u) in candidates {
        if in_f_plus(u) {
            return (Some(u), rejected, samples);
        }
        let accepted = rng.gen::<f64>() <= p_of(u);
        samples.push((u, accepted));
        if accepted {
            return (Some(u), rejected, samples);
        }
        rejected.push(u);
    }
    (None, rejected, samples)
}

/// Distributed probabilistic-edge spanner of stretch `2k-1`, run in the
/// Broadcast CONGEST model over the topology of `g`.
pub fn spanner(g: &ProbWeightedGraph, k: usize, seed: u64) -> SpannerRun {
    spanner_with_salt(g, k, seed, 0)
}

/// As [`spanner`], with a salt separating the random streams of repeated
/// runs inside a bundle or sparsifier iteration.
pub fn spanner_with_salt(g: &ProbWeightedGraph, k: usize, seed: u64, salt: u64) -> SpannerRun {
    assert!(k >= 1, "stretch parameter k must be at least 1");
    Driver::new(g, k, seed, salt).run()
}

#[derive(Debug, Clone, Default)]
pub struct BundleRun {
    pub b: BTreeSet<EdgeKey>,
    pub c: BTreeSet<EdgeKey>,
    pub layers: Vec<SpannerRun>,
    pub rounds: u64,
}

/// `t`-bundle of `(2k-1)`-spanners: each layer is a spanner of the graph
/// minus everything decided in earlier layers.
pub fn bundle_spanner(
    g: &ProbWeightedGraph,
    k: usize,
    t: usize,
    seed: u64,
    salt_base: u64,
) -> BundleRun {
    let mut out = BundleRun::default();
    let mut remaining: Vec<(usize, usize, f64)> = g.base.edges().to_vec();
    let mut p_map: BTreeMap<EdgeKey, f64> = g
        .base
        .edges()
        .iter()
        .zip(&g.p)
        .map(|(&(u, v, _), &p)| (key(u, v), p))
        .collect();
    for layer in 0..t {
        if remaining.is_empty() {
            break;
        }
        let base = crate::graph::WeightedGraph::new(g.base.n(), &remaining)
            .expect("remaining edges stay valid");
        let p: Vec<f64> = base.edges().iter().map(|&(u, v, _)| p_map[&key(u, v)]).collect();
        let layer_graph = ProbWeightedGraph::new(base, p).expect("aligned probabilities");
        let run = spanner_with_salt(&layer_graph, k, seed, salt_base * 1_000 + layer as u64 + 1);
        out.rounds += run.rounds;
        for &e in &run.f_plus {
            out.b.insert(e);
        }
        for &e in &run.f_minus {
            out.c.insert(e);
        }
        remaining.retain(|&(u, v, _)| {
            let e = key(u, v);
            !run.f_plus.contains(&e) && !run.f_minus.contains(&e)
        });
        for e in run.f_plus.iter().chain(run.f_minus.iter()) {
            p_map.remove(e);
        }
        out.layers.push(run);
    }
    out
}

/// Centralized Baswana–Sen reference (the `p ≡ 1` oracle), consuming the same
/// cluster-marking stream as the distributed algorithm.
pub fn spanner_appendix_oracle(
    g: &crate::graph::WeightedGraph,
    k: usize,
    seed: u64,
    salt: u64,
) -> BTreeSet<EdgeKey> {
    assert!(k >= 1);
    let n = g.n();
    let adj = g.adjacency();
    let mut spanner: BTreeSet<EdgeKey> = BTreeSet::new();
    let mut cluster: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mark_prob = (n as f64).powf(-1.0 / k as f64);

    for phase in 1..k {
        let centers: BTreeSet<usize> = cluster.iter().flatten().copied().collect();
        let marked: BTreeSet<usize> = centers
            .iter()
            .copied()
            .filter(|&c| cluster_marked(seed, salt, phase, c, mark_prob))
            .collect();
        let snapshot = cluster.clone();
        for v in 0..n {
            let Some(c) = snapshot[v] else { continue };
            if marked.contains(&c) {
                continue;
            }
            // lightest edge from v to each adjacent cluster, (weight, id) order
            let mut lightest: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for &(u, w) in &adj[v] {
                let Some(cu) = snapshot[u] else { continue };
                let cand = (w, u);
                match lightest.get(&cu) {
                    Some(&cur) if cur <= cand => {}
                    _ => {
                        lightest.insert(cu, cand);
                    }
                }
            }
            let closest_marked = lightest
                .iter()
                .filter(|(c, _)| marked.contains(c))
                .map(|(_, &cand)| cand)
                .min_by(|a, b| a.partial_cmp(b).expect("finite"));
            match closest_marked {
                None => {
                    for (_, &(_, u)) in lightest.iter() {
                        spanner.insert(key(u, v));
                    }
                    cluster[v] = None;
                }
                Some((w_u, u)) => {
                    spanner.insert(key(u, v));
                    for (_, &(w, x)) in lightest.iter() {
                        if w < w_u {
                            spanner.insert(key(x, v));
                        }
                    }
                    cluster[v] = snapshot[u];
                }
            }
        }
        // clusters that were not marked disappear
        for v in 0..n {
            if let Some(c) = cluster[v] {
                if !marked.contains(&c) && snapshot[v] == Some(c) {
                    cluster[v] = None;
                }
            }
        }
    }

    // final step: lightest edge to each adjacent R_k cluster
    for v in 0..n {
        let mut lightest: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for &(u, w) in &adj[v] {
            let Some(cu) = cluster[u] else { continue };
            if cluster[v] == Some(cu) {
                continue;
            }
            let cand = (w, u);
            match lightest.get(&cu) {
                Some(&cur) if cur <= cand => {}
                _ => {
                    lightest.insert(cu, cand);
                }
            }
        }
        for (_, &(_, u)) in lightest.iter() {
            spanner.insert(key(u, v));
        }
    }
    spanner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{connected_erdos_renyi, ProbWeightedGraph, WeightedGraph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn certain(g: WeightedGraph) -> ProbWeightedGraph {
        ProbWeightedGraph::certain(g)
    }

    #[test]
    fn tree_spanner_is_whole_tree() {
        let tree = WeightedGraph::new(
            6,
            &[(0, 1, 1.0), (1, 2, 2.0), (1, 3, 1.5), (3, 4, 1.0), (0, 5, 3.0)],
        )
        .unwrap();
        for k in 1..=4 {
            for seed in 0..5 {
                let run = spanner(&certain(tree.clone()), k, seed);
                let all: BTreeSet<EdgeKey> = tree.edge_pairs().into_iter().collect();
                assert_eq!(run.f_plus, all, "k={k} seed={seed}");
                assert!(run.f_minus.is_empty());
            }
        }
    }

    #[test]
    fn k1_spanner_is_whole_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = connected_erdos_renyi(10, 0.5, (1.0, 4.0), &mut rng);
        let run = spanner(&certain(g.clone()), 1, 7);
        let all: BTreeSet<EdgeKey> = g.edge_pairs().into_iter().collect();
        assert_eq!(run.f_plus, all);
    }

    #[test]
    fn connect_empty_neighborhood() {
        // isolated-ish graph: two components; the lone edge still decides
        let g = WeightedGraph::new(4, &[(0, 1, 1.0)]).unwrap();
        let run = spanner(&certain(g), 2, 3);
        assert_eq!(run.f_plus.len(), 1);
    }

    #[test]
    fn zero_probability_rejects_everything() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let pg = ProbWeightedGraph::new(g, vec![0.0, 0.0, 0.0]).unwrap();
        let run = spanner(&pg, 2, 5);
        assert!(run.f_plus.is_empty());
        assert_eq!(run.f_minus.len() + run.f_plus.len(), run.f_minus.len());
        // every ledger decision was a rejection
        assert!(run.ledger.iter().all(|d| !d.accepted));
    }

    #[test]
    fn stretch_bound_holds_against_distance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..10u64 {
            let g = connected_erdos_renyi(16, 0.3, (1.0, 5.0), &mut rng);
            for k in [2usize, 3] {
                let run = spanner(&certain(g.clone()), k, seed);
                let sub_edges: Vec<(usize, usize, f64)> = g
                    .edges()
                    .iter()
                    .filter(|&&(u, v, _)| run.f_plus.contains(&key(u, v)))
                    .copied()
                    .collect();
                let s = WeightedGraph::new(g.n(), &sub_edges).unwrap();
                let dg = g.all_pairs_distances();
                let ds = s.all_pairs_distances();
                let stretch = (2 * k - 1) as f64;
                for u in 0..g.n() {
                    for v in 0..g.n() {
                        assert!(
                            ds[(u, v)] <= stretch * dg[(u, v)] + 1e-9,
                            "stretch violated: k={k} seed={seed} d_S={} d_G={}",
                            ds[(u, v)],
                            dg[(u, v)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn coupling_with_appendix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..25u64 {
            let g = connected_erdos_renyi(20, 0.3, (1.0, 9.0), &mut rng);
            let k = 3;
            let run = spanner(&certain(g.clone()), k, seed);
            let oracle = spanner_appendix_oracle(&g, k, seed, 0);
            assert_eq!(run.f_plus, oracle, "seed={seed}");
            assert!(run.f_minus.is_empty());
        }
    }

    #[test]
    fn decision_uniqueness() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10u64 {
            let g = connected_erdos_renyi(14, 0.4, (1.0, 3.0), &mut rng);
            let p: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(0.2..1.0)).collect();
            let pg = ProbWeightedGraph::new(g, p).unwrap();
            let run = spanner(&pg, 3, seed);
            let mut seen: BTreeMap<EdgeKey, usize> = BTreeMap::new();
            for d in &run.ledger {
                if let Some(&prev) = seen.get(&d.edge) {
                    // re-decisions may only come from the same endpoint's
                    // later scan after a rejection... which cannot happen:
                    // rejected edges enter F⁻ and leave the neighbor sets.
                    panic!(
                        "edge {:?} decided twice (by {} then {})",
                        d.edge, prev, d.decider
                    );
                }
                seen.insert(d.edge, d.decider);
            }
        }
    }

    #[test]
    fn implicit_communication_soundness() {
        // every sender-side rejection is reconstructed at the receiver
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for seed in 0..10u64 {
            let g = connected_erdos_renyi(14, 0.4, (1.0, 3.0), &mut rng);
            let p: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(0.2..0.9)).collect();
            let pg = ProbWeightedGraph::new(g, p).unwrap();
            let run = spanner(&pg, 3, seed);
            let sender_rejections: BTreeSet<EdgeKey> = run
                .ledger
                .iter()
                .filter(|d| !d.accepted)
                .map(|d| d.edge)
                .collect();
            let receiver_view: BTreeSet<EdgeKey> = run
                .receiver_minus
                .iter()
                .map(|&(u, v)| key(u, v))
                .collect();
            assert_eq!(sender_rejections, receiver_view, "seed={seed}");
            assert_eq!(sender_rejections, run.f_minus);
        }
    }

    #[test]
    fn partition_is_disjoint_and_within_e() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = connected_erdos_renyi(16, 0.4, (1.0, 3.0), &mut rng);
        let all: BTreeSet<EdgeKey> = g.edge_pairs().into_iter().collect();
        let p: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let pg = ProbWeightedGraph::new(g, p).unwrap();
        let run = spanner(&pg, 3, 123);
        assert!(run.f_plus.is_disjoint(&run.f_minus));
        assert!(run.f_plus.is_subset(&all));
        assert!(run.f_minus.is_subset(&all));
        for e in &run.f_plus {
            assert!(run.orientation.contains_key(e));
        }
    }

    #[test]
    fn connect_distribution_is_truncated_geometric() {
        // Distributional check of the accept index over a 5-candidate scan
        // at p = 1/2 against the analytic truncated geometric law, via a
        // chi-square test.
        let m = 5usize;
        let trials = 20_000usize;
        let mut counts = vec![0usize; m + 1]; // index m = no acceptance
        let mut rng = ChaCha8Rng::seed_from_u64(20_000);
        for _ in 0..trials {
            let candidates: Vec<(f64, usize)> = (0..m).map(|i| (i as f64 + 1.0, i)).collect();
            let (accepted, rejected, samples) =
                connect_scan(candidates, |_| false, |_| 0.5, &mut rng);
            assert_eq!(samples.len(), rejected.len() + usize::from(accepted.is_some()));
            counts[accepted.unwrap_or(m)] += 1;
        }
        // analytic law: P(index = i) = (1/2)^{i+1} for i < 5, P(none) = (1/2)^5
        let mut chi2 = 0.0;
        for i in 0..=m {
            let p = if i < m {
                0.5f64.powi(i as i32 + 1)
            } else {
                0.5f64.powi(m as i32)
            };
            let expected = p * trials as f64;
            let diff = counts[i] as f64 - expected;
            chi2 += diff * diff / expected;
        }
        // 5 degrees of freedom; chi2 inverse CDF at 0.99 is 15.09
        assert!(chi2 < 15.09, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn connect_scan_respects_sort_and_f_plus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // deterministic accept of a previously decided edge, no fresh sample
        let cands = vec![(3.0, 7), (1.0, 9), (2.0, 4)];
        let (acc, rej, samples) = connect_scan(cands, |u| u == 4, |_| 0.0, &mut rng);
        assert_eq!(acc, Some(4));
        assert_eq!(rej, vec![9]);
        assert_eq!(samples, vec![(9, false)]);
        // tie-break on id
        let cands = vec![(1.0, 5), (1.0, 2)];
        let (acc, _, _) = connect_scan(cands, |_| false, |_| 1.0, &mut rng);
        assert_eq!(acc, Some(2));
    }

    #[test]
    fn bundle_single_layer_matches_spanner() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = connected_erdos_renyi(12, 0.4, (1.0, 3.0), &mut rng);
        let pg = certain(g);
        let bundle = bundle_spanner(&pg, 2, 1, 77, 5);
        let single = spanner_with_salt(&pg, 2, 77, 5 * 1_000 + 1);
        assert_eq!(bundle.b, single.f_plus);
        assert_eq!(bundle.c, single.f_minus);
    }

    #[test]
    fn bundle_exhausts_small_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = connected_erdos_renyi(8, 0.6, (1.0, 3.0), &mut rng);
        let m = g.m();
        let all: BTreeSet<EdgeKey> = g.edge_pairs().into_iter().collect();
        let bundle = bundle_spanner(&certain(g), 2, m + 5, 3, 0);
        assert_eq!(bundle.b, all);
        assert!(bundle.c.is_empty());
    }

    #[test]
    fn bundle_layers_are_spanners_of_the_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = connected_erdos_renyi(20, 0.35, (1.0, 4.0), &mut rng);
        let k = (g.n() as f64).log2().ceil() as usize;
        let bundle = bundle_spanner(&certain(g.clone()), k, 4, 11, 0);
        let stretch = (2 * k - 1) as f64;
        let mut decided: BTreeSet<EdgeKey> = BTreeSet::new();
        for run in &bundle.layers {
            let remainder: Vec<(usize, usize, f64)> = g
                .edges()
                .iter()
                .filter(|&&(u, v, _)| !decided.contains(&key(u, v)))
                .copied()
                .collect();
            let rem_graph = WeightedGraph::new(g.n(), &remainder).unwrap();
            let layer_edges: Vec<(usize, usize, f64)> = remainder
                .iter()
                .filter(|&&(u, v, _)| run.f_plus.contains(&key(u, v)))
                .copied()
                .collect();
            let layer_graph = WeightedGraph::new(g.n(), &layer_edges).unwrap();
            let d_rem = rem_graph.all_pairs_distances();
            let d_layer = layer_graph.all_pairs_distances();
            for u in 0..g.n() {
                for v in 0..g.n() {
                    if d_rem[(u, v)].is_finite() {
                        assert!(d_layer[(u, v)] <= stretch * d_rem[(u, v)] + 1e-9);
                    }
                }
            }
            for e in run.f_plus.iter().chain(run.f_minus.iter()) {
                decided.insert(*e);
            }
        }
    }

    #[test]
    fn exhaustive_stretch_on_small_instances() {
        // stretch holds for (V, F⁺ ∪ E″) for sampled E″ ⊆ E \ F
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..5u64 {
            let g = connected_erdos_renyi(9, 0.45, (1.0, 3.0), &mut rng);
            let p: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(0.3..0.9)).collect();
            let pg = ProbWeightedGraph::new(g.clone(), p).unwrap();
            let k = 2;
            let run = spanner(&pg, k, seed);
            let undecided: Vec<(usize, usize, f64)> = g
                .edges()
                .iter()
                .filter(|&&(u, v, _)| {
                    let e = key(u, v);
                    !run.f_plus.contains(&e) && !run.f_minus.contains(&e)
                })
                .copied()
                .collect();
            let stretch = (2 * k - 1) as f64;
            for trial in 0..8 {
                let subset: Vec<(usize, usize, f64)> = undecided
                    .iter()
                    .filter(|_| rng.gen_bool(0.5) || trial == 0)
                    .copied()
                    .collect();
                let mut edges: Vec<(usize, usize, f64)> = g
                    .edges()
                    .iter()
                    .filter(|&&(u, v, _)| run.f_plus.contains(&key(u, v)))
                    .copied()
                    .collect();
                let plus_only = WeightedGraph::new(g.n(), &edges).unwrap();
                edges.extend_from_slice(&subset);
                let combined = WeightedGraph::new(g.n(), &edges).unwrap();
                let d_plus = plus_only.all_pairs_distances();
                let d_comb = combined.all_pairs_distances();
                for u in 0..g.n() {
                    for v in 0..g.n() {
                        if d_comb[(u, v)].is_finite() {
                            assert!(d_plus[(u, v)] <= stretch * d_comb[(u, v)] + 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn round_count_tracks_lemma_structure() {
        // (k-1) phases plus a final step, each bounded by
        // (k-1) + 1 + O(n^{1/k} log n)(1 + log W / log n) rounds.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let g = connected_erdos_renyi(24, 0.3, (1.0, 100.0), &mut rng);
        let n = g.n() as f64;
        for k in [2usize, 3, 4] {
            let run = spanner(&certain(g.clone()), k, 5);
            let log_w = g.max_weight().log2().max(1.0);
            let per_phase =
                (k - 1) as f64 + 1.0 + n.powf(1.0 / k as f64) * n.log2() * (1.0 + log_w / n.log2());
            let bound = (k as f64) * per_phase;
            assert!(
                (run.rounds as f64) <= 12.0 * bound,
                "rounds {} exceed 12x structural bound {bound} at k={k}",
                run.rounds
            );
        }
    }
}
