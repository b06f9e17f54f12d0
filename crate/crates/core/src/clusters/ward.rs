//! Ward agglomeration by the nearest-neighbor-chain algorithm over a
//! condensed squared-Euclidean distance matrix.

/// One merge in scipy numbering: leaves are `0..n`, the cluster formed by
/// merge `i` is `n + i`, and `left < right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    /// `sqrt` of the Lance–Williams Ward distance, i.e. `sqrt(2 ΔSSE)`.
    pub height: f64,
    pub size: u32,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Full Ward hierarchy over `rows` (row-major, `n * dim`), merges sorted
/// by height.
pub fn ward_linkage(rows: &[f64], n: usize, dim: usize) -> Vec<Merge> {
    if n < 2 {
        return Vec::new();
    }
    let mut dist = Condensed { n, d: vec![0.0; n * (n - 1) / 2] };
    for i in 0..n {
        let a = &rows[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let b = &rows[j * dim..(j + 1) * dim];
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            dist.set(i, j, d);
        }
    }

    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("two active clusters remain"));
        }
        let (a, b) = loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            // prefer the previous chain element on ties so the chain terminates
            let mut best = prev.map(|p| (p, dist.get(a, p)));
            for k in 0..n {
                if k == a || !active[k] {
                    continue;
                }
                let d = dist.get(a, k);
                match best {
                    Some((_, bd)) if d >= bd => {}
                    _ => best = Some((k, d)),
                }
            }
            let (b, _) = best.expect("another active cluster exists");
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                break (a, b);
            }
            chain.push(b);
        };

        let d_ab = dist.get(a, b);
        let (na, nb) = (size[a] as f64, size[b] as f64);
        // the merged cluster lives on in slot `b`
        for k in 0..n {
            if k == a || k == b || !active[k] {
                continue;
            }
            let nk = size[k] as f64;
            let d = ((na + nk) * dist.get(a, k) + (nb + nk) * dist.get(b, k) - nk * d_ab) / (na + nb + nk);
            dist.set(b, k, d);
        }
        active[a] = false;
        size[b] += size[a];
        raw.push((a, b, d_ab.max(0.0).sqrt()));
    }

    raw.sort_by(|x, y| x.2.total_cmp(&y.2));
    relabel(&raw, n)
}

/// Converts slot-based merges (already height-ordered) to scipy numbering.
fn relabel(raw: &[(usize, usize, f64)], n: usize) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut sizes = vec![1u32; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    raw.iter()
        .enumerate()
        .map(|(i, &(x, y, h))| {
            let (a, b) = (find(&mut parent, x), find(&mut parent, y));
            let label = n + i;
            parent[a] = label;
            parent[b] = label;
            sizes[label] = sizes[a] + sizes[b];
            Merge { left: a.min(b) as u32, right: a.max(b) as u32, height: h, size: sizes[label] }
        })
        .collect()
}

/// Flat labels after applying the first `n - n_clusters` merges. Clusters
/// are numbered by their smallest member row.
pub fn cut(merges: &[Merge], n: usize, n_clusters: usize) -> Vec<u32> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, m) in merges.iter().take(n - n_clusters).enumerate() {
        parent[m.left as usize] = n + i;
        parent[m.right as usize] = n + i;
    }
    let mut root_label = std::collections::HashMap::new();
    (0..n)
        .map(|row| {
            let r = find(&mut parent, row);
            let next = root_label.len() as u32;
            *root_label.entry(r).or_insert(next)
        })
        .collect()
}
