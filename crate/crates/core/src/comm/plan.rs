//! Neighborhood exchange plans over the window layer.
//!
//! Worker `p`'s window is laid out as one incoming region per neighbor (in
//! ascending neighbor order), optionally followed by a correction region
//! used by the two-level method. Region slot `k` of the `(q, p)` region
//! corresponds to the `k`-th shared global unknown of the pair, so a sender
//! gathers from its own local indices and the receiver scatters into its
//! own, with no index translation on the wire.

use std::collections::HashSet;
use std::sync::Mutex;

use crate::comm::Window;
use crate::decomp::Decomposition;
use crate::error::Result;

/// One directed exchange relationship of a subdomain with a neighbor.
#[derive(Debug, Clone)]
pub struct NeighborLink {
    /// Peer subdomain id.
    pub neighbor: usize,
    /// My local indices holding the values I send, aligned with the region
    /// slots in the peer's window.
    pub send_local: Vec<usize>,
    /// Offset of my outgoing region inside the peer's window.
    pub send_offset: usize,
    /// Audit id of the region I write (owned by the peer).
    pub send_audit_id: usize,
    /// Offset of the incoming region (written by the peer) in my window.
    pub recv_offset: usize,
    /// My local indices the incoming region slots accumulate into.
    pub recv_local: Vec<usize>,
    /// Audit id of the region I read (owned by me).
    pub recv_audit_id: usize,
}

impl NeighborLink {
    pub fn region_len(&self) -> usize {
        self.recv_local.len()
    }
}

/// Window layout and link list of one subdomain.
#[derive(Debug, Clone)]
pub struct ExchangePlan {
    pub rank: usize,
    /// Total length of the incoming neighbor regions.
    pub data_len: usize,
    /// Length of the trailing correction region (zero for one-level runs).
    pub correction_len: usize,
    pub links: Vec<NeighborLink>,
}

impl ExchangePlan {
    /// Required window length.
    pub fn window_len(&self) -> usize {
        self.data_len + self.correction_len
    }

    /// Offset of the correction region.
    pub fn correction_offset(&self) -> usize {
        self.data_len
    }
}

/// Builds the exchange plans for all subdomains of a decomposition. With
/// `with_correction`, each window gains a trailing region of the subdomain's
/// size for the coarse correction.
pub fn build_plans(decomp: &Decomposition, with_correction: bool) -> Vec<ExchangePlan> {
    // First pass: incoming regions and their offsets per subdomain.
    let mut plans: Vec<ExchangePlan> = decomp
        .maps
        .iter()
        .map(|map| {
            let mut offset = 0;
            let links = map
                .shared
                .iter()
                .map(|region| {
                    let link = NeighborLink {
                        neighbor: region.neighbor,
                        send_local: region.local.clone(),
                        send_offset: usize::MAX, // second pass
                        send_audit_id: usize::MAX,
                        recv_offset: offset,
                        recv_local: region.local.clone(),
                        recv_audit_id: usize::MAX,
                    };
                    offset += region.globals.len();
                    link
                })
                .collect::<Vec<_>>();
            ExchangePlan {
                rank: map.p,
                data_len: offset,
                correction_len: if with_correction { map.len() } else { 0 },
                links,
            }
        })
        .collect();

    // Audit ids enumerate every incoming region across all subdomains.
    let mut next_audit = 0usize;
    for plan in &mut plans {
        for link in &mut plan.links {
            link.recv_audit_id = next_audit;
            next_audit += 1;
        }
    }

    // Second pass: the outgoing side mirrors the peer's incoming region.
    for p in 0..plans.len() {
        for l in 0..plans[p].links.len() {
            let q = plans[p].links[l].neighbor;
            let back = plans[q]
                .links
                .iter()
                .find(|bl| bl.neighbor == p)
                .expect("neighbor relation is symmetric");
            let (send_offset, send_audit_id, remote_local) = (
                back.recv_offset,
                back.recv_audit_id,
                back.recv_local.clone(),
            );
            let link = &mut plans[p].links[l];
            link.send_offset = send_offset;
            link.send_audit_id = send_audit_id;
            // What I send lands in the peer's recv_local slots; my own
            // gather indices for those slots are the shared region's local
            // indices on my side, which `SharedRegion` keeps aligned.
            debug_assert_eq!(link.send_local.len(), remote_local.len());
        }
    }
    plans
}

/// Gathers `values[idx]` into `buf` (cleared first).
pub fn gather(values: &[f64], idx: &[usize], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(idx.iter().map(|&l| values[l]));
}

/// Scatter-accumulates a received region: `r[idx[k]] += region[k]`.
pub fn scatter_add(region: &[f64], idx: &[usize], r: &mut [f64]) {
    assert_eq!(region.len(), idx.len(), "scatter_add: length mismatch");
    for (v, &l) in region.iter().zip(idx) {
        r[l] += v;
    }
}

/// Bitwise audit of region traffic: every value a reader observes in a
/// region slot must be one that some put actually stored there (or the
/// initial zero). Catches torn words and lost writes in the window layer.
#[derive(Debug)]
pub struct ExchangeAudit {
    regions: Vec<Mutex<Vec<HashSet<u64>>>>,
}

impl ExchangeAudit {
    /// One entry per audit id, sized by the region lengths.
    pub fn for_plans(plans: &[ExchangePlan]) -> Self {
        let mut lens: Vec<(usize, usize)> = plans
            .iter()
            .flat_map(|p| p.links.iter().map(|l| (l.recv_audit_id, l.region_len())))
            .collect();
        lens.sort_unstable();
        Self {
            regions: lens
                .into_iter()
                .map(|(_, len)| Mutex::new(vec![HashSet::new(); len]))
                .collect(),
        }
    }

    /// Records the bit patterns of a put.
    pub fn record(&self, audit_id: usize, values: &[f64]) {
        let mut slots = self.regions[audit_id].lock().expect("audit mutex poisoned");
        for (slot, v) in slots.iter_mut().zip(values) {
            slot.insert(v.to_bits());
        }
    }

    /// Counts observed values never written (initial zero excluded).
    pub fn check(&self, audit_id: usize, observed: &[f64]) -> usize {
        let slots = self.regions[audit_id].lock().expect("audit mutex poisoned");
        observed
            .iter()
            .zip(slots.iter())
            .filter(|(v, slot)| {
                let bits = v.to_bits();
                bits != 0 && !slot.contains(&bits)
            })
            .count()
    }
}

/// Sends one link's region: gather from `values`, then put into the peer
/// window, recording the put in the audit when enabled.
pub fn send_region(
    link: &NeighborLink,
    values: &[f64],
    peer_window: &Window,
    buf: &mut Vec<f64>,
    audit: Option<&ExchangeAudit>,
) -> Result<()> {
    gather(values, &link.send_local, buf);
    if let Some(a) = audit {
        a.record(link.send_audit_id, buf);
    }
    peer_window.put(link.send_offset, buf)
}

/// Reads one link's incoming region into `buf` and scatter-adds it into `r`,
/// returning the number of audit violations observed (0 without audit).
pub fn receive_region(
    link: &NeighborLink,
    own_window: &Window,
    r: &mut [f64],
    buf: &mut Vec<f64>,
    audit: Option<&ExchangeAudit>,
) -> Result<usize> {
    buf.resize(link.region_len(), 0.0);
    own_window.get(link.recv_offset, buf)?;
    let violations = audit.map_or(0, |a| a.check(link.recv_audit_id, buf));
    scatter_add(buf, &link.recv_local, r);
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{extend_overlap, partition_rectangular};
    use crate::fem::{assemble, Mesh};

    fn decomposition(n: usize, px: usize, py: usize, depth: usize) -> Decomposition {
        let mesh = Mesh::unit_square(n).unwrap();
        let problem = assemble(&mesh).unwrap();
        let base = partition_rectangular(&mesh, px, py, 1.0).unwrap();
        extend_overlap(&problem.matrix, &base, depth).unwrap()
    }

    #[test]
    fn plans_mirror_between_peers() {
        let decomp = decomposition(8, 2, 2, 2);
        let plans = build_plans(&decomp, false);
        for plan in &plans {
            let mut expected_offset = 0;
            for link in &plan.links {
                assert_eq!(link.recv_offset, expected_offset);
                expected_offset += link.region_len();
                let back = plans[link.neighbor]
                    .links
                    .iter()
                    .find(|l| l.neighbor == plan.rank)
                    .unwrap();
                assert_eq!(link.send_offset, back.recv_offset);
                assert_eq!(link.send_audit_id, back.recv_audit_id);
                assert_eq!(link.send_local.len(), back.recv_local.len());
            }
            assert_eq!(plan.data_len, expected_offset);
            assert_eq!(plan.correction_len, 0);
        }
    }

    #[test]
    fn correction_region_extends_window() {
        let decomp = decomposition(8, 2, 1, 1);
        let plans = build_plans(&decomp, true);
        for (plan, map) in plans.iter().zip(&decomp.maps) {
            assert_eq!(plan.correction_len, map.len());
            assert_eq!(plan.window_len(), plan.data_len + map.len());
            assert_eq!(plan.correction_offset(), plan.data_len);
        }
    }

    #[test]
    fn round_trip_delivers_values_to_matching_unknowns() {
        let decomp = decomposition(8, 2, 2, 1);
        let plans = build_plans(&decomp, false);
        let windows: Vec<Window> = plans.iter().map(|p| Window::new(p.window_len())).collect();
        // Each subdomain publishes t_p[l] = global index of l (recognizable).
        let values: Vec<Vec<f64>> = decomp
            .maps
            .iter()
            .map(|m| m.overlap.iter().map(|&g| g as f64).collect())
            .collect();
        let mut buf = Vec::new();
        for plan in &plans {
            for link in &plan.links {
                send_region(
                    link,
                    &values[plan.rank],
                    &windows[link.neighbor],
                    &mut buf,
                    None,
                )
                .unwrap();
            }
        }
        for plan in &plans {
            let map = &decomp.maps[plan.rank];
            let mut r = vec![0.0; map.len()];
            let mut count = vec![0usize; map.len()];
            for link in &plan.links {
                let mut region = Vec::new();
                receive_region(link, &windows[plan.rank], &mut r, &mut region, None).unwrap();
                for &l in &link.recv_local {
                    count[l] += 1;
                }
            }
            for (l, &g) in map.overlap.iter().enumerate() {
                if count[l] > 0 {
                    // Every contribution carried the global id of the slot.
                    assert_eq!(r[l], (count[l] as f64) * g as f64, "local {l} global {g}");
                }
            }
        }
    }

    #[test]
    fn audit_accepts_written_and_flags_invented_values() {
        let decomp = decomposition(6, 2, 1, 1);
        let plans = build_plans(&decomp, false);
        let audit = ExchangeAudit::for_plans(&plans);
        let windows: Vec<Window> = plans.iter().map(|p| Window::new(p.window_len())).collect();
        let values: Vec<Vec<f64>> = decomp
            .maps
            .iter()
            .map(|m| m.overlap.iter().map(|&g| 1.5 + g as f64).collect())
            .collect();
        let mut buf = Vec::new();
        for plan in &plans {
            for link in &plan.links {
                send_region(
                    link,
                    &values[plan.rank],
                    &windows[link.neighbor],
                    &mut buf,
                    Some(&audit),
                )
                .unwrap();
            }
        }
        let plan = &plans[0];
        let link = &plan.links[0];
        let mut r = vec![0.0; decomp.maps[0].len()];
        let mut region = Vec::new();
        let v = receive_region(link, &windows[0], &mut r, &mut region, Some(&audit)).unwrap();
        assert_eq!(v, 0);
        // Corrupt one cell with a value nobody wrote: the audit flags it.
        windows[0].put(link.recv_offset, &[987.654]).unwrap();
        let v = receive_region(link, &windows[0], &mut r, &mut region, Some(&audit)).unwrap();
        assert_eq!(v, 1);
    }
}
