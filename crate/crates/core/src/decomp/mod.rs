//! Overlapping decomposition of the unknowns.
//!
//! A decomposition starts from a disjoint cover of the unknowns into base
//! sets (one per subdomain), produced by either the structured rectangular
//! partitioner or the greedy graph-growing partitioner. The base sets are
//! then extended by `depth` layers of matrix-graph neighbors to form the
//! overlapping sets. Ownership follows the base sets: every unknown is owned
//! by exactly one subdomain, which gives the Boolean partition of unity used
//! by restricted updates and by the residual norm decomposition.
//!
//! With `depth >= 1` every owned unknown is interior to its subdomain: all
//! of its matrix neighbors belong to the overlapping set. Several exactness
//! properties of the solvers rest on that containment, which is why zero
//! overlap is rejected outright.

mod coarse;

pub use coarse::{build_coarse, choose_coarse_size, CoarseLink, CoarseSpace};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::linalg::CsrMatrix;

/// Indices a subdomain shares with one neighbor, in matching order on both
/// sides.
#[derive(Debug, Clone)]
pub struct SharedRegion {
    /// The neighbor subdomain.
    pub neighbor: usize,
    /// Global indices of the shared unknowns, sorted.
    pub globals: Vec<usize>,
    /// The same unknowns as local indices of this subdomain.
    pub local: Vec<usize>,
    /// The same unknowns as local indices of the neighbor.
    pub remote_local: Vec<usize>,
}

/// Index maps of one subdomain.
#[derive(Debug, Clone)]
pub struct SubdomainMap {
    /// Subdomain id.
    pub p: usize,
    /// Base (non-overlapping) set, sorted global indices.
    pub base: Vec<usize>,
    /// Overlapping set, sorted global indices. Local index `l` refers to
    /// global index `overlap[l]`.
    pub overlap: Vec<usize>,
    /// Owner subdomain of each local unknown.
    pub owner: Vec<usize>,
    /// Neighbor ids with nonempty shared support, sorted.
    pub neighbors: Vec<usize>,
    /// Shared index lists, aligned with `neighbors`.
    pub shared: Vec<SharedRegion>,
}

impl SubdomainMap {
    /// Number of local unknowns.
    pub fn len(&self) -> usize {
        self.overlap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.overlap.is_empty()
    }

    /// Local index of a global unknown, if present.
    pub fn local_of(&self, g: usize) -> Option<usize> {
        self.overlap.binary_search(&g).ok()
    }

    /// Boolean partition-of-unity diagonal: true where this subdomain owns
    /// the unknown.
    pub fn owned_mask(&self) -> Vec<bool> {
        self.owner.iter().map(|&o| o == self.p).collect()
    }
}

/// A full overlapping decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Per-subdomain maps.
    pub maps: Vec<SubdomainMap>,
    /// Owner subdomain of every global unknown.
    pub owner_of: Vec<usize>,
    /// Number of global unknowns.
    pub n_global: usize,
    /// Overlap depth the maps were built with.
    pub depth: usize,
}

impl Decomposition {
    pub fn n_subdomains(&self) -> usize {
        self.maps.len()
    }
}

/// Splits the interior grid of `mesh` into `px * py` rectangular blocks of
/// near-even size (block widths and heights differ by at most one grid line).
///
/// With `imbalance > 1`, block 0 is grown by stealing whole columns and rows
/// from its east and north neighbors until it holds at least
/// `imbalance * N / P` unknowns; if that cannot be done while keeping every
/// block nonempty, an error is returned.
pub fn partition_rectangular(
    mesh: &Mesh,
    px: usize,
    py: usize,
    imbalance: f64,
) -> Result<Vec<Vec<usize>>> {
    let m = mesh.n - 1; // interior grid side
    let n_global = m * m;
    if px == 0 || py == 0 {
        return Err(Error::InvalidPartition("px and py must be positive".into()));
    }
    if px > m || py > m {
        return Err(Error::InvalidPartition(format!(
            "{px}x{py} blocks cannot tile a {m}x{m} interior grid"
        )));
    }
    if !(imbalance >= 1.0) {
        return Err(Error::InvalidPartition(format!(
            "imbalance factor must be >= 1, got {imbalance}"
        )));
    }
    let cuts = |parts: usize| -> Vec<usize> { (0..=parts).map(|b| b * m / parts).collect() };
    let cuts_x = cuts(px);
    let cuts_y = cuts(py);
    let block_of = |cuts: &[usize], v: usize| -> usize {
        // cuts is strictly increasing with cuts[0] = 0, cuts[last] = m.
        cuts.partition_point(|&c| c <= v) - 1
    };
    let mut owner = vec![0usize; n_global];
    for gy in 0..m {
        let by = block_of(&cuts_y, gy);
        for gx in 0..m {
            let bx = block_of(&cuts_x, gx);
            owner[gy * m + gx] = by * px + bx;
        }
    }

    if imbalance > 1.0 {
        let parts = px * py;
        let target = imbalance * n_global as f64 / parts as f64;
        // Exclusive bounds of block 0's (grown) rectangle.
        let mut wx = cuts_x[1];
        let mut wy = cuts_y[1];
        while ((wx * wy) as f64) < target {
            // Growing east (north) steals a column (row) from the adjacent
            // blocks; they must keep at least one column (row) of their own.
            let can_east = px >= 2 && wx + 1 < cuts_x[2];
            let can_north = py >= 2 && wy + 1 < cuts_y[2];
            let grown_x = wx - cuts_x[1];
            let grown_y = wy - cuts_y[1];
            if can_east && (!can_north || grown_x <= grown_y) {
                for gy in 0..wy {
                    owner[gy * m + wx] = 0;
                }
                wx += 1;
            } else if can_north {
                for gx in 0..wx {
                    owner[wy * m + gx] = 0;
                }
                wy += 1;
            } else {
                return Err(Error::InvalidPartition(format!(
                    "cannot reach imbalance {imbalance} while keeping all blocks nonempty"
                )));
            }
        }
    }

    let mut sets = vec![Vec::new(); px * py];
    for (g, &p) in owner.iter().enumerate() {
        sets[p].push(g);
    }
    if sets.iter().any(Vec::is_empty) {
        return Err(Error::InvalidPartition(
            "rectangular partition produced an empty block".into(),
        ));
    }
    Ok(sets)
}

/// Partitions the adjacency graph of `a` into `parts` connected-ish pieces by
/// greedy region growing from farthest-point seeds, followed by one boundary
/// smoothing pass. Deterministic for a fixed `seed`.
pub fn partition_graph(a: &CsrMatrix, parts: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidPartition(
            "graph partitioning requires a square matrix".into(),
        ));
    }
    if parts == 0 || parts > n {
        return Err(Error::InvalidPartition(format!(
            "cannot split {n} unknowns into {parts} parts"
        )));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = a.row(i);
        for &c in cols {
            if c != i {
                adj[i].push(c);
                adj[c].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    // Farthest-point seeding: the first seed is drawn from the RNG, each
    // further seed maximizes the BFS distance to all previous seeds
    // (unreached vertices of other components count as farthest).
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = vec![rng.gen_range(0..n)];
    while seeds.len() < parts {
        let dist = multi_source_bfs(&seeds, &adj);
        let next = (0..n)
            .filter(|v| !seeds.contains(v))
            .max_by_key(|&v| (dist[v].map_or(usize::MAX, |d| d), std::cmp::Reverse(v)))
            .expect("parts <= n leaves an unseeded vertex");
        seeds.push(next);
    }

    let mut part = vec![usize::MAX; n];
    let mut size = vec![0usize; parts];
    let mut frontier: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); parts];
    for (p, &s) in seeds.iter().enumerate() {
        part[s] = p;
        size[p] = 1;
        frontier[p].extend(adj[s].iter().copied());
    }
    let mut assigned = parts;
    while assigned < n {
        // Smallest part with a usable frontier grows next.
        let candidate = (0..parts)
            .filter(|&p| !frontier[p].is_empty())
            .min_by_key(|&p| (size[p], p));
        let p = match candidate {
            Some(p) => p,
            None => {
                // Disconnected remainder: reseed the smallest part.
                let p = (0..parts).min_by_key(|&p| (size[p], p)).unwrap();
                let v = (0..n).find(|&v| part[v] == usize::MAX).unwrap();
                frontier[p].push_back(v);
                p
            }
        };
        let mut grabbed = None;
        while let Some(v) = frontier[p].pop_front() {
            if part[v] == usize::MAX {
                grabbed = Some(v);
                break;
            }
        }
        if let Some(v) = grabbed {
            part[v] = p;
            size[p] += 1;
            assigned += 1;
            frontier[p].extend(adj[v].iter().copied().filter(|&u| part[u] == usize::MAX));
        }
    }

    // One smoothing pass: move a vertex to the neighboring part it touches
    // most, when that strictly reduces both cut and imbalance.
    for v in 0..n {
        let p = part[v];
        if size[p] <= 1 {
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in &adj[v] {
            *counts.entry(part[u]).or_default() += 1;
        }
        let own = counts.get(&p).copied().unwrap_or(0);
        if let Some((&q, &cnt)) = counts
            .iter()
            .filter(|&(&q, _)| q != p)
            .max_by_key(|&(&q, &c)| (c, std::cmp::Reverse(q)))
        {
            if cnt > own && size[p] > size[q] {
                part[v] = q;
                size[p] -= 1;
                size[q] += 1;
            }
        }
    }

    let mut sets = vec![Vec::new(); parts];
    for (v, &p) in part.iter().enumerate() {
        sets[p].push(v);
    }
    Ok(sets)
}

fn multi_source_bfs(sources: &[usize], adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    for &s in sources {
        dist[s] = Some(0);
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &u in &adj[v] {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Extends disjoint base sets by `depth` layers of matrix-graph neighbors and
/// builds the full decomposition (ownership, neighbor lists, shared regions).
///
/// The base sets must form a disjoint cover of `0..a.nrows()`; `depth` must
/// be at least 1 so owned unknowns end up interior to their subdomain.
pub fn extend_overlap(a: &CsrMatrix, base: &[Vec<usize>], depth: usize) -> Result<Decomposition> {
    if depth == 0 {
        return Err(Error::ZeroOverlap);
    }
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidPartition(
            "overlap extension requires a square matrix".into(),
        ));
    }
    let parts = base.len();
    if parts == 0 {
        return Err(Error::InvalidPartition("no base sets given".into()));
    }
    let mut owner_of = vec![usize::MAX; n];
    for (p, set) in base.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidPartition(format!("base set {p} is empty")));
        }
        for &g in set {
            if g >= n {
                return Err(Error::InvalidPartition(format!(
                    "base set {p} contains {g}, out of range for {n} unknowns"
                )));
            }
            if owner_of[g] != usize::MAX {
                return Err(Error::InvalidPartition(format!(
                    "unknown {g} appears in base sets {} and {p}",
                    owner_of[g]
                )));
            }
            owner_of[g] = p;
        }
    }
    if let Some(g) = owner_of.iter().position(|&o| o == usize::MAX) {
        return Err(Error::InvalidPartition(format!(
            "unknown {g} is not covered by any base set"
        )));
    }

    // Layered closure in the (symmetrized) matrix graph.
    let mut overlaps: Vec<Vec<usize>> = Vec::with_capacity(parts);
    let mut in_set = vec![false; n];
    for set in base {
        let mut members: Vec<usize> = set.clone();
        members.sort_unstable();
        for &g in &members {
            in_set[g] = true;
        }
        let mut frontier = members.clone();
        for _ in 0..depth {
            let mut next = Vec::new();
            for &g in &frontier {
                let (cols, _) = a.row(g);
                for &c in cols {
                    if !in_set[c] {
                        in_set[c] = true;
                        next.push(c);
                    }
                }
            }
            members.extend_from_slice(&next);
            frontier = next;
        }
        members.sort_unstable();
        for &g in &members {
            in_set[g] = false;
        }
        overlaps.push(members);
    }

    // Subscribers per global unknown, in increasing subdomain order.
    let mut subscribers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, overlap) in overlaps.iter().enumerate() {
        for &g in overlap {
            subscribers[g].push(p);
        }
    }
    let mut shared_globals: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (g, subs) in subscribers.iter().enumerate() {
        for &p in subs {
            for &q in subs {
                if p != q {
                    shared_globals.entry((p, q)).or_default().push(g);
                }
            }
        }
    }

    let mut maps: Vec<SubdomainMap> = overlaps
        .into_iter()
        .enumerate()
        .map(|(p, overlap)| {
            let owner = overlap.iter().map(|&g| owner_of[g]).collect();
            let mut base_sorted = base[p].clone();
            base_sorted.sort_unstable();
            SubdomainMap {
                p,
                base: base_sorted,
                overlap,
                owner,
                neighbors: Vec::new(),
                shared: Vec::new(),
            }
        })
        .collect();
    for ((p, q), globals) in shared_globals {
        let local = globals
            .iter()
            .map(|&g| {
                maps[p]
                    .local_of(g)
                    .expect("shared global is in own overlap")
            })
            .collect();
        let remote_local = globals
            .iter()
            .map(|&g| {
                maps[q]
                    .local_of(g)
                    .expect("shared global is in neighbor overlap")
            })
            .collect();
        maps[p].neighbors.push(q);
        maps[p].shared.push(SharedRegion {
            neighbor: q,
            globals,
            local,
            remote_local,
        });
    }

    Ok(Decomposition {
        maps,
        owner_of,
        n_global: n,
        depth,
    })
}

/// Local operator of one subdomain: the principal submatrix of `a` on the
/// overlapping set. Values are copied bitwise from the global matrix.
pub fn local_matrix(a: &CsrMatrix, map: &SubdomainMap) -> Result<CsrMatrix> {
    a.principal_submatrix(&map.overlap)
}

/// Per-receiver partition masks used by the Jacobi-Schwarz iteration.
///
/// For receiver `p`, the family `{mask(q)}` over contributing subdomains `q`
/// assigns each unknown to exactly one source: the receiver itself keeps all
/// of its overlapping set (`mask(p)` is all-true over `N_p`), and an external
/// unknown is taken from its owner (`mask(q)` is true at the locals of `q`
/// whose global is owned by `q` and lies outside `N_p`).
#[derive(Debug, Clone)]
pub struct JsPartition {
    /// The receiving subdomain.
    pub p: usize,
    masks: BTreeMap<usize, Vec<bool>>,
}

impl JsPartition {
    /// Mask over the local indices of source `q`, if `q` contributes to `p`.
    pub fn mask_for(&self, q: usize) -> Option<&[bool]> {
        self.masks.get(&q).map(Vec::as_slice)
    }
}

/// Builds the per-receiver mask families for all subdomains.
pub fn build_js_partitions(decomp: &Decomposition) -> Vec<JsPartition> {
    decomp
        .maps
        .iter()
        .map(|map| {
            let mut masks = BTreeMap::new();
            masks.insert(map.p, vec![true; map.len()]);
            for &q in &map.neighbors {
                let qmap = &decomp.maps[q];
                let mask = qmap
                    .overlap
                    .iter()
                    .map(|&g| decomp.owner_of[g] == q && map.local_of(g).is_none())
                    .collect();
                masks.insert(q, mask);
            }
            JsPartition { p: map.p, masks }
        })
        .collect()
}

#[derive(Serialize)]
struct PartitionDump<'a> {
    n_global: usize,
    depth: usize,
    subdomains: Vec<SubdomainDump<'a>>,
}

#[derive(Serialize)]
struct SubdomainDump<'a> {
    p: usize,
    base: &'a [usize],
    overlap: &'a [usize],
    neighbors: &'a [usize],
}

/// Writes the decomposition as JSON (base and overlapping sets plus neighbor
/// lists per subdomain).
pub fn write_partition_json<W: std::io::Write>(w: &mut W, decomp: &Decomposition) -> Result<()> {
    let dump = PartitionDump {
        n_global: decomp.n_global,
        depth: decomp.depth,
        subdomains: decomp
            .maps
            .iter()
            .map(|m| SubdomainDump {
                p: m.p,
                base: &m.base,
                overlap: &m.overlap,
                neighbors: &m.neighbors,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut *w, &dump)
        .map_err(|e| Error::Parse(format!("partition serialization failed: {e}")))?;
    writeln!(w)?;
    Ok(())
}
