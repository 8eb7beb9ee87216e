//! Spending graphs as bipartite forests.
//!
//! Nodes are agents `0..n` followed by items `n..n+m`; the edge `(i, j)`
//! exists while `b[i][j] > 0`.

use std::collections::VecDeque;

use crate::model::SpendingProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct SpendingForest {
    pub b: Vec<Vec<f64>>,
    /// One root agent per tree that contains an agent, ascending.
    pub roots: Vec<usize>,
}

/// A tree of the forest: its agents and items, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub agents: Vec<usize>,
    pub items: Vec<usize>,
}

/// Item parents in a rooted forest.
#[derive(Debug, Clone)]
pub(crate) struct Rooted {
    /// Parent agent of each item, `None` for isolated items.
    pub item_parent: Vec<Option<usize>>,
}

impl SpendingForest {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn m(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.b.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if x > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut adj = vec![Vec::new(); n + self.m()];
        for (i, j) in self.edges() {
            adj[i].push(n + j);
            adj[n + j].push(i);
        }
        adj
    }

    pub fn is_acyclic(&self) -> bool {
        let mut uf = UnionFind::new(self.n() + self.m());
        self.edges().into_iter().all(|(i, j)| uf.union(i, self.n() + j))
    }

    /// Connected components, ordered by their smallest node.
    pub fn trees(&self) -> Vec<Tree> {
        let n = self.n();
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut out = Vec::new();
        for start in 0..adj.len() {
            if seen[start] {
                continue;
            }
            let mut tree = Tree {
                agents: Vec::new(),
                items: Vec::new(),
            };
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                if u < n {
                    tree.agents.push(u);
                } else {
                    tree.items.push(u - n);
                }
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            tree.agents.sort_unstable();
            tree.items.sort_unstable();
            out.push(tree);
        }
        out
    }

    pub(crate) fn rooted(&self, roots: &[usize]) -> Rooted {
        let n = self.n();
        let adj = self.adjacency();
        let mut item_parent = vec![None; self.m()];
        let mut seen = vec![false; adj.len()];
        for &r in roots {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            let mut queue = VecDeque::from([r]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if seen[w] {
                        continue;
                    }
                    seen[w] = true;
                    if w >= n {
                        item_parent[w - n] = Some(u);
                    }
                    queue.push_back(w);
                }
            }
        }
        Rooted { item_parent }
    }

    pub(crate) fn degree_of_item(&self, j: usize) -> usize {
        self.b.iter().filter(|row| row[j] > 0.0).count()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(k: usize) -> Self {
        UnionFind((0..k).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let next = self.0[x];
            self.0[x] = r;
            x = next;
        }
        r
    }

    /// Joins the sets of `a` and `b`; false if they were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn lowest_agent_roots(forest: &SpendingForest) -> Vec<usize> {
    let mut roots: Vec<usize> = forest
        .trees()
        .iter()
        .filter_map(|t| t.agents.first().copied())
        .collect();
    roots.sort_unstable();
    roots
}

/// Path between two nodes of an acyclic edge set, as a node sequence.
fn forest_path(adj: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; adj.len()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &w in &adj[u] {
            if prev[w] == usize::MAX {
                prev[w] = u;
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![to];
    while *path.last().unwrap() != from {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    path
}

/// Reroutes money around cycles until the support is a forest. Row and
/// column sums are unchanged. On each cycle the money moves in the direction
/// that empties its smallest edge (ties: the lexicographically smallest), and
/// that edge is removed.
pub fn build_spending_forest(profile: &SpendingProfile) -> SpendingForest {
    let mut b = profile.b.clone();
    let n = b.len();
    let m = b.first().map_or(0, Vec::len);
    'outer: loop {
        let mut uf = UnionFind::new(n + m);
        let mut adj = vec![Vec::new(); n + m];
        for i in 0..n {
            for j in 0..m {
                if b[i][j] <= 0.0 {
                    continue;
                }
                if uf.union(i, n + j) {
                    adj[i].push(n + j);
                    adj[n + j].push(i);
                    continue;
                }
                // Cycle: (i, j) closes the forest path from item j to agent i.
                let path = forest_path(&adj, n + j, i);
                let mut cycle = vec![(i, j)];
                for w in path.windows(2) {
                    let (a, c) = if w[0] < n { (w[0], w[1] - n) } else { (w[1], w[0] - n) };
                    cycle.push((a, c));
                }
                let (smallest, _) = cycle
                    .iter()
                    .enumerate()
                    .min_by(|(_, x), (_, y)| {
                        b[x.0][x.1].total_cmp(&b[y.0][y.1]).then(x.cmp(y))
                    })
                    .unwrap();
                let parity = smallest % 2;
                let delta = b[cycle[smallest].0][cycle[smallest].1];
                for (k, &(a, c)) in cycle.iter().enumerate() {
                    if k == smallest {
                        b[a][c] = 0.0;
                    } else if k % 2 == parity {
                        b[a][c] = (b[a][c] - delta).max(0.0);
                    } else {
                        b[a][c] += delta;
                    }
                }
                continue 'outer;
            }
        }
        break;
    }
    let mut forest = SpendingForest { b, roots: Vec::new() };
    forest.roots = lowest_agent_roots(&forest);
    forest
}

/// Keeps, for every item, only the child agent spending the most on it
/// (ties: the smaller index). Removed edges are dropped, not rerouted. Cut
/// agents become roots of their new trees.
pub fn prune_forest(forest: &SpendingForest) -> SpendingForest {
    let rooted = forest.rooted(&forest.roots);
    let mut b = forest.b.clone();
    let mut roots = forest.roots.clone();
    for j in 0..forest.m() {
        let Some(parent) = rooted.item_parent[j] else { continue };
        let children: Vec<usize> = (0..forest.n())
            .filter(|&i| i != parent && forest.b[i][j] > 0.0)
            .collect();
        let keep = children
            .iter()
            .copied()
            .max_by(|&x, &y| forest.b[x][j].total_cmp(&forest.b[y][j]).then(y.cmp(&x)));
        for &i in &children {
            if Some(i) != keep {
                b[i][j] = 0.0;
                roots.push(i);
            }
        }
    }
    roots.sort_unstable();
    SpendingForest { b, roots }
}
