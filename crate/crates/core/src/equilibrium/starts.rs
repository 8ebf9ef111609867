//! Initial points for the Newton runs.

use alloc::vec;
use alloc::vec::Vec;

use crate::game::{CostParameterization, GameInstance};
use crate::network::Network;

/// Per-player flows splitting one unit uniformly over all minimum-hop paths.
/// Zero when the destination is unreachable.
pub(crate) fn shortest_hop_split(instance: &GameInstance<'_>) -> Vec<f64> {
    let net = instance.network;
    let n = net.arc_count();
    let od = instance.od;
    let from = net.hop_distances_from(od.origin);
    let to = net.hop_distances_to(od.destination);
    let mut single = vec![0.0; n];
    if let Some(total) = from[od.destination] {
        let ahead = path_counts(net, &from, false);
        let behind = path_counts(net, &to, true);
        let paths = ahead[od.destination];
        for (a, arc) in net.arcs().iter().enumerate() {
            if let (Some(dt), Some(dh)) = (from[arc.tail], to[arc.head]) {
                if dt + 1 + dh == total {
                    single[a] = ahead[arc.tail] * behind[arc.head] / paths;
                }
            }
        }
    }
    let mut flows = Vec::with_capacity(n * instance.players);
    for _ in 0..instance.players {
        flows.extend_from_slice(&single);
    }
    flows
}

/// Number of minimum-hop paths from the BFS root to each node (`reverse`
/// counts paths into the root instead).
fn path_counts(net: &Network, dist: &[Option<usize>], reverse: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..net.node_count()).filter(|&v| dist[v].is_some()).collect();
    order.sort_by_key(|&v| dist[v]);
    let mut count = vec![0.0; net.node_count()];
    if let Some(&root) = order.first() {
        count[root] = 1.0;
    }
    for &node in order.iter().skip(1) {
        let d = dist[node].unwrap_or(0);
        for arc in net.arcs() {
            let (prev, next) = if reverse {
                (arc.head, arc.tail)
            } else {
                (arc.tail, arc.head)
            };
            if next == node && dist[prev] == Some(d - 1) {
                count[node] += count[prev];
            }
        }
    }
    count
}

/// Each player alone on its cheapest path under `c_int + c_base`, with
/// potentials `v = −dist` shifted so the highest-index node sits at zero.
/// Returns `(flows, v)` with `v` stacked `N × m`.
pub(crate) fn myopic_shortest_paths(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
) -> (Vec<f64>, Vec<f64>) {
    let net = instance.network;
    let (n, m) = (net.arc_count(), net.node_count());
    let od = instance.od;
    let mut flows = vec![0.0; n * instance.players];
    let mut v = vec![0.0; m * instance.players];
    for i in 0..instance.players {
        let weight: Vec<f64> = params
            .c_int(i)
            .iter()
            .zip(params.c_base(i))
            .map(|(c, cb)| c + cb)
            .collect();
        let (dist, pred) = dijkstra(net, od.origin, &weight);
        let mut node = od.destination;
        if dist[node].is_finite() {
            while let Some(a) = pred[node] {
                flows[i * n + a] = 1.0;
                node = net.arc(a).tail;
            }
        }
        let far = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max) + 1.0;
        let shift = if dist[m - 1].is_finite() { dist[m - 1] } else { far };
        for node in 0..m {
            let d = if dist[node].is_finite() { dist[node] } else { far };
            v[i * m + node] = shift - d;
        }
    }
    (flows, v)
}

/// Dense `O(m²)` Dijkstra; ties go to the lower node index.
fn dijkstra(net: &Network, source: usize, weight: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
    let m = net.node_count();
    let adjacency = net.adjacency(false);
    let mut dist = vec![f64::INFINITY; m];
    let mut pred = vec![None; m];
    let mut done = vec![false; m];
    dist[source] = 0.0;
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for node in 0..m {
            if !done[node] && dist[node].is_finite() && best.map_or(true, |b| dist[node] < dist[b]) {
                best = Some(node);
            }
        }
        let Some(node) = best else { break };
        done[node] = true;
        for &(next, arc) in &adjacency[node] {
            let candidate = dist[node] + weight[arc];
            if candidate < dist[next] {
                dist[next] = candidate;
                pred[next] = Some(arc);
            }
        }
    }
    (dist, pred)
}
