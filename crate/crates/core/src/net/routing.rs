//! Link-disjoint path computation.
//!
//! Unit-capacity, unit-cost min-cost max-flow between two nodes. The flow is
//! decomposed into paths, which are link-disjoint by construction, and the
//! total hop count over the set is minimal among all maximum sets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::chiplet::ChipletId;

use super::Link;

pub type Path = Vec<ChipletId>;

struct Arc {
    to: usize,
    cap: i32,
    cost: i32,
    rev: usize,
}

pub(crate) fn link_disjoint_paths(
    nodes: &BTreeSet<ChipletId>,
    links: &BTreeSet<Link>,
    src: ChipletId,
    dst: ChipletId,
) -> Vec<Path> {
    let ids: Vec<ChipletId> = nodes.iter().copied().collect();
    let index: BTreeMap<ChipletId, usize> =
        ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let (Some(&s), Some(&t)) = (index.get(&src), index.get(&dst)) else {
        return Vec::new();
    };

    let mut graph: Vec<Vec<Arc>> = (0..ids.len()).map(|_| Vec::new()).collect();
    let add_arc = |g: &mut Vec<Vec<Arc>>, u: usize, v: usize| {
        let ru = g[v].len();
        let rv = g[u].len();
        g[u].push(Arc {
            to: v,
            cap: 1,
            cost: 1,
            rev: ru,
        });
        g[v].push(Arc {
            to: u,
            cap: 0,
            cost: -1,
            rev: rv,
        });
    };
    // BTreeSet iteration keeps arc order, and therefore tie-breaking, stable.
    for link in links {
        let (u, v) = (index[&link.a], index[&link.b]);
        add_arc(&mut graph, u, v);
        add_arc(&mut graph, v, u);
    }

    // Successive shortest paths with Bellman-Ford (SPFA) on residual costs.
    loop {
        let n = graph.len();
        let mut dist = vec![i32::MAX; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut in_queue = vec![false; n];
        let mut queue = VecDeque::new();
        dist[s] = 0;
        queue.push_back(s);
        in_queue[s] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for (ai, arc) in graph[u].iter().enumerate() {
                if arc.cap > 0 && dist[u] + arc.cost < dist[arc.to] {
                    dist[arc.to] = dist[u] + arc.cost;
                    prev[arc.to] = Some((u, ai));
                    if !in_queue[arc.to] {
                        queue.push_back(arc.to);
                        in_queue[arc.to] = true;
                    }
                }
            }
        }
        if dist[t] == i32::MAX {
            break;
        }
        let mut v = t;
        while let Some((u, ai)) = prev[v] {
            graph[u][ai].cap -= 1;
            let rev = graph[u][ai].rev;
            graph[v][rev].cap += 1;
            v = u;
        }
    }

    // Forward arcs (cost 1) with no remaining capacity carry one unit of flow.
    let mut used: Vec<BTreeSet<usize>> = graph
        .iter()
        .map(|arcs| {
            arcs.iter()
                .filter(|a| a.cost == 1 && a.cap == 0)
                .map(|a| a.to)
                .collect()
        })
        .collect();
    // Opposite units on one undirected link cancel out.
    for u in 0..used.len() {
        let outs: Vec<usize> = used[u].iter().copied().collect();
        for v in outs {
            if used[v].contains(&u) {
                used[u].remove(&v);
                used[v].remove(&u);
            }
        }
    }

    let mut paths = Vec::new();
    while !used[s].is_empty() {
        let mut path = vec![s];
        let mut cur = s;
        while cur != t {
            let next = *used[cur].iter().next().expect("flow conservation");
            used[cur].remove(&next);
            path.push(next);
            cur = next;
            if path.len() > ids.len() * ids.len() {
                unreachable!("flow decomposition did not terminate");
            }
        }
        paths.push(path.into_iter().map(|i| ids[i]).collect::<Path>());
    }
    paths.sort_by(|a: &Path, b: &Path| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    paths
}

/// Links traversed by `path`, in order.
pub fn path_links(path: &[ChipletId]) -> Vec<Link> {
    path.windows(2).map(|w| Link::new(w[0], w[1])).collect()
}
