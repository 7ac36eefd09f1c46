//! Immutable bipartite graph core.
//!
//! Construction and generators, neighborhoods, closures, linked components,
//! and the expansion / biregularity diagnostics the container machinery
//! depends on. Graphs are immutable after construction and safe to share
//! across threads; all set-valued operations return fresh values.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{guard, validation, Error, Result};
use crate::rat::{rat_int, rat_usize, to_f64, Rat};
use crate::rng::stream_rng;

/// Which part of the bipartition a vertex or set lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::X => write!(f, "X"),
            Side::Y => write!(f, "Y"),
        }
    }
}

/// A sorted, duplicate-free set of vertex ids on one side.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexSet {
    pub side: Side,
    pub members: Vec<u32>,
}

impl VertexSet {
    pub fn new(side: Side, mut members: Vec<u32>) -> Self {
        members.sort_unstable();
        members.dedup();
        VertexSet { side, members }
    }

    pub fn empty(side: Side) -> Self {
        VertexSet { side, members: Vec::new() }
    }

    pub fn from_mask(side: Side, mask: u64) -> Self {
        let mut members = Vec::with_capacity(mask.count_ones() as usize);
        let mut m = mask;
        while m != 0 {
            let b = m.trailing_zeros();
            members.push(b);
            m &= m - 1;
        }
        VertexSet { side, members }
    }

    pub fn mask(&self) -> u64 {
        let mut m = 0u64;
        for &v in &self.members {
            assert!(v < 64, "mask requested for vertex id >= 64");
            m |= 1u64 << v;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.members.binary_search(&v).is_ok()
    }
}

/// Reference degrees and slack for a δ-approximately (d_X, d_Y)-biregular
/// graph: d(v) ∈ [d_X, δ·d_X] on X and d(v) ∈ [δ⁻¹·d_Y, d_Y] on Y, with
/// d_Y ≤ d_X.
#[derive(Clone, Debug)]
pub struct Biregularity {
    pub d_x: usize,
    pub d_y: usize,
    pub delta: Rat,
}

#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    x_adj: Vec<Vec<u32>>,
    y_adj: Vec<Vec<u32>>,
    /// neighbor masks, present when the opposite side has at most 64 vertices
    x_masks: Option<Vec<u64>>,
    y_masks: Option<Vec<u64>>,
    /// distance-<=2 adjacency within each side (for 2-linked checks),
    /// present when the side has at most 64 vertices
    x_dist2: Option<Vec<u64>>,
    y_dist2: Option<Vec<u64>>,
    bireg: Option<Biregularity>,
    labels: Option<BTreeMap<String, String>>,
}

/// On-disk JSON form; round-trips bit-exactly through serde_json.
#[derive(Serialize, Deserialize)]
struct GraphJson {
    x_count: usize,
    y_count: usize,
    edges: Vec<(u32, u32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, String>>,
}

impl BipartiteGraph {
    pub fn build(x_count: usize, y_count: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut x_adj = vec![Vec::new(); x_count];
        let mut y_adj = vec![Vec::new(); y_count];
        let mut seen = std::collections::HashSet::new();
        for &(x, y) in edges {
            if x as usize >= x_count || y as usize >= y_count {
                return validation(format!(
                    "edge ({x},{y}) out of range for sides {x_count}x{y_count}"
                ));
            }
            if !seen.insert((x, y)) {
                return validation(format!("duplicate edge ({x},{y})"));
            }
            x_adj[x as usize].push(y);
            y_adj[y as usize].push(x);
        }
        for l in x_adj.iter_mut().chain(y_adj.iter_mut()) {
            l.sort_unstable();
        }
        Ok(Self::from_adj(x_adj, y_adj, None))
    }

    fn from_adj(
        x_adj: Vec<Vec<u32>>,
        y_adj: Vec<Vec<u32>>,
        labels: Option<BTreeMap<String, String>>,
    ) -> Self {
        let mut g = BipartiteGraph {
            x_adj,
            y_adj,
            x_masks: None,
            y_masks: None,
            x_dist2: None,
            y_dist2: None,
            bireg: None,
            labels,
        };
        if g.y_adj.len() <= 64 {
            g.x_masks = Some(g.x_adj.iter().map(|l| mask_of(l)).collect());
        }
        if g.x_adj.len() <= 64 {
            g.y_masks = Some(g.y_adj.iter().map(|l| mask_of(l)).collect());
        }
        g.x_dist2 = g.dist2_masks(Side::X);
        g.y_dist2 = g.dist2_masks(Side::Y);
        g.bireg = g.compute_biregularity();
        g
    }

    fn dist2_masks(&self, side: Side) -> Option<Vec<u64>> {
        let n = self.side_count(side);
        if n > 64 {
            return None;
        }
        let mut out = vec![0u64; n];
        for v in 0..n {
            let mut m = 1u64 << v;
            for &w in self.nbrs(side, v as u32) {
                m |= mask_of(self.nbrs(side.opposite(), w));
            }
            out[v] = m;
        }
        Some(out)
    }

    fn compute_biregularity(&self) -> Option<Biregularity> {
        if self.x_adj.is_empty() || self.y_adj.is_empty() {
            return None;
        }
        let dx_min = self.x_adj.iter().map(Vec::len).min()?;
        let dx_max = self.x_adj.iter().map(Vec::len).max()?;
        let dy_min = self.y_adj.iter().map(Vec::len).min()?;
        let dy_max = self.y_adj.iter().map(Vec::len).max()?;
        if dx_min == 0 || dy_min == 0 || dy_max > dx_min {
            return None;
        }
        // smallest δ compatible with both side constraints
        let delta_x = Rat::new(dx_max.into(), dx_min.into());
        let delta_y = Rat::new(dy_max.into(), dy_min.into());
        let delta = if delta_x >= delta_y { delta_x } else { delta_y };
        Some(Biregularity { d_x: dx_min, d_y: dy_max, delta })
    }

    pub fn x_count(&self) -> usize {
        self.x_adj.len()
    }

    pub fn y_count(&self) -> usize {
        self.y_adj.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.x_adj.len() + self.y_adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.x_adj.iter().map(Vec::len).sum()
    }

    pub fn side_count(&self, side: Side) -> usize {
        match side {
            Side::X => self.x_adj.len(),
            Side::Y => self.y_adj.len(),
        }
    }

    pub fn deg(&self, side: Side, v: u32) -> usize {
        self.nbrs(side, v).len()
    }

    pub fn nbrs(&self, side: Side, v: u32) -> &[u32] {
        match side {
            Side::X => &self.x_adj[v as usize],
            Side::Y => &self.y_adj[v as usize],
        }
    }

    /// Neighbor mask of `v` (opposite side must have at most 64 vertices).
    pub fn nbr_mask(&self, side: Side, v: u32) -> u64 {
        let masks = match side {
            Side::X => &self.x_masks,
            Side::Y => &self.y_masks,
        };
        masks
            .as_ref()
            .expect("neighbor masks unavailable: opposite side larger than 64")[v as usize]
    }

    pub fn biregularity(&self) -> Option<&Biregularity> {
        self.bireg.as_ref()
    }

    /// Reference degrees (d_X, d_Y); errors when the graph has no
    /// biregularity certificate (isolated vertex or d_Y > d_X).
    pub fn reference_degrees(&self) -> Result<(usize, usize, Rat)> {
        match &self.bireg {
            Some(b) => Ok((b.d_x, b.d_y, b.delta.clone())),
            None => validation("graph is not approximately biregular (isolated vertex or d_Y > d_X)"),
        }
    }

    pub fn labels(&self) -> Option<&BTreeMap<String, String>> {
        self.labels.as_ref()
    }

    /// View with the two sides exchanged.
    pub fn swap_sides(&self) -> BipartiteGraph {
        Self::from_adj(self.y_adj.clone(), self.x_adj.clone(), self.labels.clone())
    }

    // ---- set operations -------------------------------------------------

    /// N(S) on the opposite side.
    pub fn neighborhood(&self, s: &VertexSet) -> VertexSet {
        let opp = s.side.opposite();
        if self.side_count(opp) <= 64 {
            let mut m = 0u64;
            for &v in &s.members {
                m |= self.nbr_mask(s.side, v);
            }
            return VertexSet::from_mask(opp, m);
        }
        let mut out: Vec<u32> = s
            .members
            .iter()
            .flat_map(|&v| self.nbrs(s.side, v).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        VertexSet { side: opp, members: out }
    }

    /// N(A) as a mask; A given as a mask on `side`.
    pub fn neighborhood_mask(&self, side: Side, a: u64) -> u64 {
        let mut m = 0u64;
        let mut rest = a;
        while rest != 0 {
            let v = rest.trailing_zeros();
            m |= self.nbr_mask(side, v);
            rest &= rest - 1;
        }
        m
    }

    /// Closure [A] = {v on the same side : N(v) ⊆ N(A)}.
    ///
    /// Defined in the container machinery for A ⊆ X; for a Y-side set the
    /// symmetric definition applies.
    pub fn closure(&self, a: &VertexSet) -> VertexSet {
        let side = a.side;
        let n = self.side_count(side);
        if self.side_count(side.opposite()) <= 64 {
            let na = a.members.iter().fold(0u64, |m, &v| m | self.nbr_mask(side, v));
            let mut out = Vec::new();
            for v in 0..n as u32 {
                if self.nbr_mask(side, v) & !na == 0 {
                    out.push(v);
                }
            }
            return VertexSet { side, members: out };
        }
        let na = self.neighborhood(a);
        let mut out = Vec::new();
        for v in 0..n as u32 {
            if self.nbrs(side, v).iter().all(|w| na.contains(*w)) {
                out.push(v);
            }
        }
        VertexSet { side, members: out }
    }

    /// Closure as a mask (`side` must have mask support).
    pub fn closure_mask(&self, side: Side, a: u64) -> u64 {
        let na = self.neighborhood_mask(side, a);
        let mut out = 0u64;
        for v in 0..self.side_count(side) as u32 {
            if self.nbr_mask(side, v) & !na == 0 {
                out |= 1u64 << v;
            }
        }
        out
    }

    /// True when Σ²[A] is connected (A nonempty, given as a mask on `side`).
    pub fn is_2linked_mask(&self, side: Side, a: u64) -> bool {
        let dist2 = match side {
            Side::X => self.x_dist2.as_ref(),
            Side::Y => self.y_dist2.as_ref(),
        }
        .expect("2-linked check needs side <= 64");
        if a == 0 {
            return false;
        }
        let mut comp = a & a.wrapping_neg(); // lowest bit
        loop {
            let mut grown = comp;
            let mut m = comp;
            while m != 0 {
                let v = m.trailing_zeros();
                grown |= dist2[v as usize] & a;
                m &= m - 1;
            }
            if grown == comp {
                break;
            }
            comp = grown;
        }
        comp == a
    }

    /// Partition S into maximal s-linked components (connected components of
    /// Σ^s restricted to S).
    pub fn linked_components(&self, s_set: &VertexSet, s: usize) -> Vec<VertexSet> {
        assert!(s >= 1, "s-linked requires s >= 1");
        let members = &s_set.members;
        let k = members.len();
        if k == 0 {
            return Vec::new();
        }
        // adjacency among members: distance in Σ at most s
        let mut adj = vec![Vec::new(); k];
        for i in 0..k {
            let d = self.bounded_distances(s_set.side, members[i], s);
            for j in (i + 1)..k {
                if let Some(&dist) = d.get(&(s_set.side, members[j])) {
                    if dist <= s {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
        let mut comp = vec![usize::MAX; k];
        let mut out = Vec::new();
        for start in 0..k {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            let mut cur = Vec::new();
            comp[start] = id;
            while let Some(i) = stack.pop() {
                cur.push(members[i]);
                for &j in &adj[i] {
                    if comp[j] == usize::MAX {
                        comp[j] = id;
                        stack.push(j);
                    }
                }
            }
            out.push(VertexSet::new(s_set.side, cur));
        }
        out
    }

    /// BFS distances from `v` out to radius `s` (both sides).
    fn bounded_distances(
        &self,
        side: Side,
        v: u32,
        s: usize,
    ) -> std::collections::HashMap<(Side, u32), usize> {
        let mut dist = std::collections::HashMap::new();
        dist.insert((side, v), 0);
        let mut frontier = vec![(side, v)];
        for d in 1..=s {
            let mut next = Vec::new();
            for &(sd, u) in &frontier {
                for &w in self.nbrs(sd, u) {
                    let key = (sd.opposite(), w);
                    if !dist.contains_key(&key) {
                        dist.insert(key, d);
                        next.push(key);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// |∇(A, B)| — the number of edges with one end in A and the other in B.
    /// A and B may be on either side; only X–Y pairs contribute.
    pub fn nabla(&self, a: &VertexSet, b: &VertexSet) -> usize {
        if a.side == b.side {
            return 0;
        }
        a.members
            .iter()
            .map(|&v| {
                self.nbrs(a.side, v)
                    .iter()
                    .filter(|w| b.contains(**w))
                    .count()
            })
            .sum()
    }

    /// |∇(A)| = |∇(A, V∖A)|; for one-sided A this is the total degree of A.
    pub fn nabla_boundary(&self, a: &VertexSet) -> usize {
        a.members.iter().map(|&v| self.deg(a.side, v)).sum()
    }

    /// m_φ = min{|N(K)| : y ∈ Y, K ⊆ N(y), |K| > φ}. By monotonicity of
    /// |N(K)| in K the minimum is attained at |K| = ⌊φ⌋ + 1, so only those
    /// subsets are enumerated.
    pub fn m_phi(&self, phi: &Rat) -> Result<usize> {
        let (_, d_y, delta) = self.reference_degrees()?;
        let upper = rat_usize(d_y) / &delta - rat_int(1);
        if *phi < rat_int(1) || *phi > upper {
            return validation(format!(
                "phi={} outside [1, d_Y/delta - 1 = {}]",
                phi, upper
            ));
        }
        let k = crate::rat::rat_floor(phi) + 1;
        let mut best: Option<usize> = None;
        for y in 0..self.y_count() as u32 {
            let nbrs = self.nbrs(Side::Y, y);
            if nbrs.len() < k {
                continue;
            }
            for combo in combinations(nbrs, k) {
                let n = self.neighborhood(&VertexSet::new(Side::X, combo)).len();
                best = Some(best.map_or(n, |b| b.min(n)));
            }
        }
        best.ok_or_else(|| {
            Error::Validation(format!("no y-vertex has more than {} neighbours", k - 1))
        })
    }

    // ---- JSON ------------------------------------------------------------

    pub fn to_json(&self) -> String {
        let mut edges = Vec::with_capacity(self.edge_count());
        for (x, l) in self.x_adj.iter().enumerate() {
            for &y in l {
                edges.push((x as u32, y));
            }
        }
        edges.sort_unstable();
        let j = GraphJson {
            x_count: self.x_count(),
            y_count: self.y_count(),
            edges,
            labels: self.labels.clone(),
        };
        serde_json::to_string(&j).expect("graph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: GraphJson = serde_json::from_str(s)?;
        let mut g = Self::build(j.x_count, j.y_count, &j.edges)?;
        g.labels = j.labels;
        Ok(g)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn with_labels(mut self, labels: BTreeMap<String, String>) -> Self {
        self.labels = Some(labels);
        self
    }
}

fn mask_of(ids: &[u32]) -> u64 {
    ids.iter().fold(0u64, |m, &v| m | (1u64 << v))
}

fn combinations(items: &[u32], k: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[u32], k: usize, start: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

// ---- generators -----------------------------------------------------------

/// K_{m,n}: every X vertex adjacent to every Y vertex.
pub fn complete_bipartite(m: usize, n: usize) -> Result<BipartiteGraph> {
    if m < 1 || n < 1 {
        return validation("complete bipartite graph needs at least one vertex per side");
    }
    let edges: Vec<(u32, u32)> =
        (0..m as u32).flat_map(|x| (0..n as u32).map(move |y| (x, y))).collect();
    BipartiteGraph::build(m, n, &edges)
}

/// The hypercube Q_d as a bipartite graph: X = even Hamming weight,
/// Y = odd. Per-side ids are ranks within the sorted mask order; labels
/// record each vertex's bitmask for readability.
pub fn hypercube(d: usize) -> Result<BipartiteGraph> {
    if d < 1 || d > 20 {
        return validation(format!("hypercube dimension {d} outside [1, 20]"));
    }
    let n = 1usize << d;
    let mut x_ids = Vec::new();
    let mut y_ids = Vec::new();
    for m in 0..n as u32 {
        if m.count_ones() % 2 == 0 {
            x_ids.push(m);
        } else {
            y_ids.push(m);
        }
    }
    let rank_y: std::collections::HashMap<u32, u32> =
        y_ids.iter().enumerate().map(|(i, &m)| (m, i as u32)).collect();
    let mut edges = Vec::with_capacity(d * n / 2);
    for (xi, &xm) in x_ids.iter().enumerate() {
        for b in 0..d {
            let ym = xm ^ (1 << b);
            edges.push((xi as u32, rank_y[&ym]));
        }
    }
    let mut labels = BTreeMap::new();
    for (i, &m) in x_ids.iter().enumerate() {
        labels.insert(format!("x{i}"), format!("{m:0width$b}", width = d));
    }
    for (i, &m) in y_ids.iter().enumerate() {
        labels.insert(format!("y{i}"), format!("{m:0width$b}", width = d));
    }
    Ok(BipartiteGraph::build(x_ids.len(), y_ids.len(), &edges)?.with_labels(labels))
}

/// Map a Q_d bitmask to its (side, per-side id).
pub fn cube_vertex(d: usize, mask: u32) -> (Side, u32) {
    assert!((mask as usize) < (1usize << d));
    let side = if mask.count_ones() % 2 == 0 { Side::X } else { Side::Y };
    let parity = mask.count_ones() % 2;
    let rank = (0..mask).filter(|m| m.count_ones() % 2 == parity).count();
    (side, rank as u32)
}

/// Convenience: the VertexSet of the given Q_d bitmasks (all one parity).
pub fn cube_set(d: usize, masks: &[u32]) -> VertexSet {
    assert!(!masks.is_empty());
    let (side, _) = cube_vertex(d, masks[0]);
    let ids = masks
        .iter()
        .map(|&m| {
            let (s, id) = cube_vertex(d, m);
            assert_eq!(s, side, "cube_set members must share parity");
            id
        })
        .collect();
    VertexSet::new(side, ids)
}

/// Simple d-regular bipartite graph on n+n vertices via the configuration
/// model with rejection of multi-edges. Reproducible from the seed.
pub fn random_regular_bipartite(n_per_side: usize, d: usize, seed: u64) -> Result<BipartiteGraph> {
    if d > n_per_side {
        return validation(format!("degree {d} exceeds side size {n_per_side}"));
    }
    if d == 0 || n_per_side == 0 {
        return validation("degree and side size must be positive");
    }
    let mut rng = stream_rng(seed, 0);
    let budget = 10_000;
    for attempt in 1..=budget {
        let mut y_stubs: Vec<u32> = (0..n_per_side as u32)
            .flat_map(|y| std::iter::repeat(y).take(d))
            .collect();
        y_stubs.shuffle(&mut rng);
        let mut edges = Vec::with_capacity(n_per_side * d);
        let mut ok = true;
        'outer: for x in 0..n_per_side as u32 {
            let mut seen = 0u64;
            for j in 0..d {
                let y = y_stubs[x as usize * d + j];
                if n_per_side <= 64 {
                    if seen & (1u64 << y) != 0 {
                        ok = false;
                        break 'outer;
                    }
                    seen |= 1u64 << y;
                } else if edges.iter().any(|&(ex, ey)| ex == x && ey == y) {
                    ok = false;
                    break 'outer;
                }
                edges.push((x, y));
            }
        }
        if ok {
            let g = BipartiteGraph::build(n_per_side, n_per_side, &edges)?;
            let _ = attempt;
            return Ok(g);
        }
    }
    guard(format!(
        "configuration model rejected {budget} multi-edge attempts for n={n_per_side}, d={d}"
    ))
}

// ---- diagnostics ------------------------------------------------------------

/// Result of an α-expansion check. Exhaustive for graphs with at most 24
/// vertices; otherwise a seeded randomized falsification search, labeled
/// `exhaustive: false` ("sampled, unfalsified" when it holds).
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub alpha: f64,
    pub exhaustive: bool,
    pub x_side: SideExpansion,
    pub y_side: SideExpansion,
}

#[derive(Clone, Debug, Serialize)]
pub struct SideExpansion {
    pub holds: bool,
    pub sets_checked: u64,
    /// worst |N(A)|/|A| seen over candidate A, with a witness
    pub worst_ratio: Option<f64>,
    pub worst_witness: Option<Vec<u32>>,
}

impl ExpansionReport {
    pub fn holds_both(&self) -> bool {
        self.x_side.holds && self.y_side.holds
    }
}

pub fn check_alpha_expansion(g: &BipartiteGraph, alpha: &Rat, seed: u64) -> ExpansionReport {
    let exhaustive = g.vertex_count() <= 24;
    let x_side = check_side_expansion(g, Side::X, alpha, exhaustive, seed);
    let y_side = check_side_expansion(g, Side::Y, alpha, exhaustive, seed);
    ExpansionReport { alpha: to_f64(alpha), exhaustive, x_side, y_side }
}

fn check_side_expansion(
    g: &BipartiteGraph,
    side: Side,
    alpha: &Rat,
    exhaustive: bool,
    seed: u64,
) -> SideExpansion {
    let n = g.side_count(side);
    let mut holds = true;
    let mut worst: Option<(Rat, u64)> = None;
    let mut checked = 0u64;
    let mut consider = |g: &BipartiteGraph, a: u64| {
        let size = a.count_ones() as usize;
        if size == 0 || 2 * size >= n {
            return true;
        }
        let nn = g.neighborhood_mask(side, a).count_ones() as usize;
        let ratio = Rat::new(nn.into(), size.into());
        if worst.as_ref().map_or(true, |(w, _)| ratio < *w) {
            worst = Some((ratio.clone(), a));
        }
        ratio >= rat_int(1) + alpha
    };
    if exhaustive {
        for a in 1..(1u64 << n) {
            checked += 1;
            if !consider(g, a) {
                holds = false;
            }
        }
    } else {
        use rand::Rng as _;
        let mut rng = stream_rng(seed, match side {
            Side::X => 1,
            Side::Y => 2,
        });
        for _ in 0..20_000 {
            checked += 1;
            let size = rng.gen_range(1..(n / 2).max(2));
            let mut a = 0u64;
            while (a.count_ones() as usize) < size.min(63) {
                a |= 1u64 << rng.gen_range(0..n.min(64));
            }
            if !consider(g, a) {
                holds = false;
            }
        }
    }
    SideExpansion {
        holds,
        sets_checked: checked,
        worst_ratio: worst.as_ref().map(|(r, _)| to_f64(r)),
        worst_witness: worst.map(|(_, a)| VertexSet::from_mask(side, a).members),
    }
}

/// Exhaustive hypercube isoperimetry audit (the three clauses used by the
/// polymer tail bounds), over all nonempty even-side subsets of Q_d.
#[derive(Clone, Debug, Serialize)]
pub struct IsoperimetryReport {
    pub d: usize,
    pub sets_checked: u64,
    pub clauses: Vec<IsoperimetryClause>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoperimetryClause {
    pub description: String,
    /// sets within the clause's stated size range
    pub in_range_checked: u64,
    pub holds_in_range: bool,
    /// min of |N(A)| - bound(A) over in-range sets
    pub worst_slack: Option<f64>,
    pub worst_witness: Option<Vec<u32>>,
}

pub fn hypercube_isoperimetry_check(d: usize) -> Result<IsoperimetryReport> {
    if d < 1 || d > 4 {
        return guard(format!("exhaustive isoperimetry check limited to d <= 4, got {d}"));
    }
    let g = hypercube(d)?;
    let n = g.side_count(Side::X);
    let df = d as f64;
    // (size range check, lower bound on |N(A)|)
    let clause_defs: Vec<(String, Box<dyn Fn(f64) -> bool>, Box<dyn Fn(f64) -> f64>)> = vec![
        (
            format!("|A| <= d/10: |N(A)| >= d|A| - |A|^2"),
            Box::new(move |a: f64| a <= df / 10.0),
            Box::new(move |a: f64| df * a - a * a),
        ),
        (
            format!("|A| <= d^4: |N(A)| >= d|A|/10"),
            Box::new(move |a: f64| a <= df.powi(4)),
            Box::new(move |a: f64| df * a / 10.0),
        ),
        (
            format!("|A| <= 2^(d-2): |N(A)| >= (1 + 1/(2*sqrt(d)))|A|"),
            Box::new(move |a: f64| a <= (1u64 << (d.max(2) - 2)) as f64),
            Box::new(move |a: f64| (1.0 + 1.0 / (2.0 * df.sqrt())) * a),
        ),
    ];
    let mut clauses: Vec<IsoperimetryClause> = clause_defs
        .iter()
        .map(|(desc, _, _)| IsoperimetryClause {
            description: desc.clone(),
            in_range_checked: 0,
            holds_in_range: true,
            worst_slack: None,
            worst_witness: None,
        })
        .collect();
    let mut checked = 0u64;
    for a in 1..(1u64 << n) {
        checked += 1;
        let size = a.count_ones() as f64;
        let nn = g.neighborhood_mask(Side::X, a).count_ones() as f64;
        for (i, (_, in_range, bound)) in clause_defs.iter().enumerate() {
            if in_range(size) {
                let slack = nn - bound(size);
                let c = &mut clauses[i];
                c.in_range_checked += 1;
                if slack < 0.0 {
                    c.holds_in_range = false;
                }
                if c.worst_slack.map_or(true, |w| slack < w) {
                    c.worst_slack = Some(slack);
                    c.worst_witness = Some(VertexSet::from_mask(Side::X, a).members);
                }
            }
        }
    }
    Ok(IsoperimetryReport { d, sets_checked: checked, clauses })
}

/// Audit helper used by tests: degree histogram plus the biregularity data.
#[derive(Clone, Debug, Serialize)]
pub struct DegreeReport {
    pub x_count: usize,
    pub y_count: usize,
    pub edge_count: usize,
    pub x_degrees: BTreeMap<usize, usize>,
    pub y_degrees: BTreeMap<usize, usize>,
    pub d_x: Option<usize>,
    pub d_y: Option<usize>,
    pub delta: Option<f64>,
    pub regular: bool,
}

pub fn degree_report(g: &BipartiteGraph) -> DegreeReport {
    let mut x_degrees = BTreeMap::new();
    let mut y_degrees = BTreeMap::new();
    for v in 0..g.x_count() as u32 {
        *x_degrees.entry(g.deg(Side::X, v)).or_insert(0) += 1;
    }
    for v in 0..g.y_count() as u32 {
        *y_degrees.entry(g.deg(Side::Y, v)).or_insert(0) += 1;
    }
    let regular = x_degrees.len() == 1
        && y_degrees.len() == 1
        && x_degrees.keys().next() == y_degrees.keys().next();
    DegreeReport {
        x_count: g.x_count(),
        y_count: g.y_count(),
        edge_count: g.edge_count(),
        x_degrees,
        y_degrees,
        d_x: g.biregularity().map(|b| b.d_x),
        d_y: g.biregularity().map(|b| b.d_y),
        delta: g.biregularity().map(|b| b.delta.to_f64().unwrap_or(f64::NAN)),
        regular,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(d: usize) -> BipartiteGraph {
        hypercube(d).unwrap()
    }

    #[test]
    fn build_small_graphs() {
        let c4 = BipartiteGraph::build(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(c4.edge_count(), 4);
        assert!(c4.biregularity().is_some());
        let k2 = BipartiteGraph::build(1, 1, &[(0, 0)]).unwrap();
        assert_eq!(k2.edge_count(), 1);
        let dup = BipartiteGraph::build(2, 2, &[(0, 0), (0, 0)]);
        assert!(matches!(dup, Err(Error::Validation(_))));
        let oob = BipartiteGraph::build(1, 1, &[(0, 1)]);
        assert!(matches!(oob, Err(Error::Validation(_))));
    }

    #[test]
    fn hypercube_shape() {
        let q1 = q(1);
        assert_eq!((q1.x_count(), q1.y_count(), q1.edge_count()), (1, 1, 1));
        let q3 = q(3);
        assert_eq!(q3.vertex_count(), 8);
        assert_eq!(q3.edge_count(), 12);
        for v in 0..4u32 {
            assert_eq!(q3.deg(Side::X, v), 3);
            assert_eq!(q3.deg(Side::Y, v), 3);
        }
        // balanced sides of size 2^{d-1}
        for d in 1..=6 {
            let g = q(d);
            assert_eq!(g.x_count(), 1 << (d - 1));
            assert_eq!(g.y_count(), 1 << (d - 1));
        }
    }

    #[test]
    fn hypercube_q2_sides() {
        // X = {00, 11}, Y = {01, 10}
        assert_eq!(cube_vertex(2, 0b00), (Side::X, 0));
        assert_eq!(cube_vertex(2, 0b11), (Side::X, 1));
        assert_eq!(cube_vertex(2, 0b01), (Side::Y, 0));
        assert_eq!(cube_vertex(2, 0b10), (Side::Y, 1));
    }

    #[test]
    fn neighborhoods() {
        let q2 = q(2);
        let s = cube_set(2, &[0b00]);
        assert_eq!(q2.neighborhood(&s), cube_set(2, &[0b01, 0b10]));
        assert!(q2.neighborhood(&VertexSet::empty(Side::X)).is_empty());
        let q3 = q(3);
        let s = cube_set(3, &[0b000, 0b011]);
        assert_eq!(q3.neighborhood(&s), cube_set(3, &[0b001, 0b010, 0b100, 0b111]));
    }

    #[test]
    fn closures() {
        let q2 = q(2);
        assert_eq!(q2.closure(&cube_set(2, &[0b00])), cube_set(2, &[0b00, 0b11]));
        let q3 = q(3);
        assert_eq!(q3.closure(&cube_set(3, &[0b000])), cube_set(3, &[0b000]));
        // empty set: isolated vertices only (none here)
        assert!(q3.closure(&VertexSet::empty(Side::X)).is_empty());
    }

    #[test]
    fn closure_properties_exhaustive() {
        // extensive, monotone, idempotent, neighborhood-preserving on Q2, Q3
        for d in [2usize, 3] {
            let g = q(d);
            let n = g.side_count(Side::X);
            for a in 0u64..(1 << n) {
                let ca = g.closure_mask(Side::X, a);
                assert_eq!(ca & a, a, "extensive");
                assert_eq!(g.closure_mask(Side::X, ca), ca, "idempotent");
                assert_eq!(
                    g.neighborhood_mask(Side::X, ca),
                    g.neighborhood_mask(Side::X, a),
                    "neighborhood-preserving"
                );
                for b in 0u64..(1 << n) {
                    if a & b == a {
                        assert_eq!(ca & g.closure_mask(Side::X, b), ca, "monotone");
                        break; // one superset suffices per a to keep this quick
                    }
                }
            }
        }
    }

    #[test]
    fn linked_components_cases() {
        let q2 = q(2);
        let comps = q2.linked_components(&cube_set(2, &[0b00, 0b11]), 2);
        assert_eq!(comps.len(), 1);
        let q4 = q(4);
        let comps = q4.linked_components(&cube_set(4, &[0b0000, 0b1111]), 2);
        assert_eq!(comps.len(), 2);
        // s at least the distance: single component
        let comps = q4.linked_components(&cube_set(4, &[0b0000, 0b1111]), 4);
        assert_eq!(comps.len(), 1);
    }

    #[test]
    fn m_phi_values() {
        let q3 = q(3);
        assert_eq!(q3.m_phi(&rat_int(1)).unwrap(), 4);
        let c4 = BipartiteGraph::build(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(c4.m_phi(&rat_int(1)).unwrap(), 2);
        assert!(q3.m_phi(&rat_int(3)).is_err()); // phi > d_Y - 1
    }

    #[test]
    fn nabla_counts() {
        let q2 = q(2);
        assert_eq!(q2.nabla(&cube_set(2, &[0b00]), &cube_set(2, &[0b01, 0b10])), 2);
        let q3 = q(3);
        let a = cube_set(3, &[0b000, 0b011]);
        let na = q3.neighborhood(&a);
        assert_eq!(q3.nabla(&a, &na), 6);
        assert_eq!(q3.nabla(&a, &cube_set(3, &[0b111])), 1);
        assert_eq!(q3.nabla_boundary(&a), 6);
    }

    #[test]
    fn alpha_expansion_k22() {
        let c4 = BipartiteGraph::build(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let rep = check_alpha_expansion(&c4, &rat_int(1), 0);
        assert!(rep.exhaustive);
        assert!(rep.holds_both());
        // alpha = 0 holds for any graph without isolated vertices
        let q3 = q(3);
        let rep = check_alpha_expansion(&q3, &rat_int(0), 0);
        assert!(rep.holds_both());
    }

    #[test]
    fn isoperimetry_small() {
        for d in [3usize, 4] {
            let rep = hypercube_isoperimetry_check(d).unwrap();
            for c in &rep.clauses {
                assert!(c.holds_in_range, "clause failed: {} (d={d})", c.description);
            }
        }
        assert!(hypercube_isoperimetry_check(5).is_err());
    }

    #[test]
    fn random_regular_generation() {
        // n = d forces the complete bipartite graph
        let k44 = random_regular_bipartite(4, 4, 1).unwrap();
        assert_eq!(k44.edge_count(), 16);
        let g = random_regular_bipartite(6, 3, 1).unwrap();
        for v in 0..6u32 {
            assert_eq!(g.deg(Side::X, v), 3);
            assert_eq!(g.deg(Side::Y, v), 3);
        }
        assert!(random_regular_bipartite(2, 3, 1).is_err());
        // determinism
        let g2 = random_regular_bipartite(6, 3, 1).unwrap();
        assert_eq!(g.to_json(), g2.to_json());
    }

    #[test]
    fn json_round_trip() {
        let g = q(3);
        let s = g.to_json();
        let g2 = BipartiteGraph::from_json(&s).unwrap();
        assert_eq!(s, g2.to_json());
    }

    #[test]
    fn linked_subset_counting_bound() {
        // counting bound: #s-linked l-subsets containing a fixed
        // vertex <= exp(s*l*log(delta*d_X*d_Y)), checked exhaustively.
        for g in [q(3), random_regular_bipartite(6, 3, 2).unwrap()] {
            let (dx, dy, delta) = g.reference_degrees().unwrap();
            let bound_base = to_f64(&(delta * rat_usize(dx) * rat_usize(dy)));
            let n = g.side_count(Side::X);
            for s in [2usize, 8] {
                let dist: Vec<u64> = (0..n as u32)
                    .map(|v| {
                        let d = g.bounded_distances(Side::X, v, s);
                        (0..n as u32)
                            .filter(|&w| d.get(&(Side::X, w)).map_or(false, |&x| x <= s))
                            .fold(0u64, |m, w| m | (1 << w))
                    })
                    .collect();
                for l in 1..=4usize {
                    let mut count_at_0 = 0u64;
                    for a in 0u64..(1 << n) {
                        if a.count_ones() as usize == l && a & 1 != 0 {
                            // s-linked: connectivity under dist masks
                            let mut comp = 1u64;
                            loop {
                                let mut grown = comp;
                                let mut m = comp;
                                while m != 0 {
                                    let v = m.trailing_zeros();
                                    grown |= dist[v as usize] & a;
                                    m &= m - 1;
                                }
                                if grown == comp {
                                    break;
                                }
                                comp = grown;
                            }
                            if comp == a {
                                count_at_0 += 1;
                            }
                        }
                    }
                    let bound = ((s * l) as f64 * bound_base.ln()).exp();
                    assert!(
                        (count_at_0 as f64) <= bound,
                        "s={s} l={l}: {count_at_0} > {bound}"
                    );
                }
            }
        }
    }
}
