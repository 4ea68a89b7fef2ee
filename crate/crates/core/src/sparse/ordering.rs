use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Minimum-degree elimination ordering on an undirected graph.
///
/// `adj[i]` lists the neighbours of node `i` (sorted, no self loops). The
/// elimination graph is updated explicitly with sorted-merge set unions.
/// Ties break on the smallest node index so the ordering is deterministic.
pub fn minimum_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut graph: Vec<Vec<usize>> = adj.to_vec();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((graph[i].len(), i))).collect();
    let mut order = Vec::with_capacity(n);
    let mut scratch = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != graph[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut graph[v]);
        for &u in &clique {
            // N(u) <- N(u) \ {v}  U  clique \ {u}
            scratch.clear();
            let gu = &graph[u];
            let (mut a, mut b) = (0, 0);
            while a < gu.len() || b < clique.len() {
                let x = gu.get(a).copied().unwrap_or(usize::MAX);
                let y = clique.get(b).copied().unwrap_or(usize::MAX);
                let next = if x < y {
                    a += 1;
                    x
                } else if y < x {
                    b += 1;
                    y
                } else {
                    a += 1;
                    b += 1;
                    x
                };
                if next != v && next != u {
                    scratch.push(next);
                }
            }
            std::mem::swap(&mut graph[u], &mut scratch);
            heap.push(Reverse((graph[u].len(), u)));
        }
    }
    debug_assert_eq!(order.len(), n);
    order
}
